"""Geodesic averages of b^2, the constant K(T), the control times T_GCC and
T_UC, and the weighted averages g_T^+/- carrying lower-order terms.

Trajectories are evaluated in batches: every function that takes a phase
point also accepts a PhasePoint whose ``x``/``xi`` carry a leading batch axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid, simpson
from scipy.optimize import minimize

from .errors import InconsistencyError, InvalidInputError
from .geometry import (
    TWO_PI,
    FlatTorus2,
    PerturbedTorus2,
    PhasePoint,
    RoundSphere2,
    cosphere_arrays,
)
from .regions import calL_details, dist_to_omega, evaluate, evaluate_points

SAMPLE_DT = 0.005
NM_MAXFEV = 200
NM_STARTS = 5
EPS_ZERO_REL = 1e-8
_CHUNK = 2_000_000


def n_samples(T):
    """max(64, ceil(T / 0.005)) rounded up to an odd count for Simpson."""
    n = max(64, int(math.ceil(T / SAMPLE_DT)))
    return n + 1 if n % 2 == 0 else n


def _b_along(M, b, X, XI, times):
    """b(pi phi_t(x, xi)) for t in ``times``; shape (len(times), N)."""
    if isinstance(M, RoundSphere2):
        pts = M.trajectory_points(X, XI, times)
        return evaluate_points(b, M, pts)
    xs, _ = M.trajectory(X, XI, times)
    return evaluate(b, M, xs)


def _batched(fn, X, XI, n):
    N = X.shape[0]
    step = max(1, _CHUNK // max(n, 1))
    return np.concatenate([fn(X[i:i + step], XI[i:i + step]) for i in range(0, N, step)])


def _as_batch(rho):
    X = np.atleast_2d(np.asarray(rho.x, float))
    XI = np.atleast_2d(np.asarray(rho.xi, float))
    return X, XI, np.ndim(rho.x) == 1


def _averages(M, b, X, XI, T):
    if T == 0:
        return np.zeros(X.shape[0])
    n = n_samples(T)
    times = np.linspace(0.0, T, n)

    def one(x, xi):
        v = _b_along(M, b, x, xi, times)
        return simpson(v * v, dx=times[1] - times[0], axis=0)

    return _batched(one, X, XI, n)


def geodesic_average(M, b, rho: PhasePoint, T: float):
    """int_0^T b^2(pi phi_t(rho)) dt by composite Simpson."""
    if T < 0:
        raise InvalidInputError("T must be >= 0")
    X, XI, scalar = _as_batch(rho)
    out = _averages(M, b, X, XI, float(T))
    return float(out[0]) if scalar else out


@dataclass
class KResult:
    value: float
    rho: PhasePoint
    grid_value: float
    evaluations: int = 0

    def __float__(self):
        return float(self.value)


def _refine(M, objective, X, XI, vals, nx, na, n_starts=NM_STARTS):
    """Nelder-Mead in (x1, x2, angle) from the best grid points."""
    if not getattr(M, "closed_form", True):
        return _refine_batched(M, objective, X, XI, vals, nx, na, n_starts)
    order = np.argsort(vals, kind="stable")[:n_starts]
    best_v = float(vals[order[0]])
    best = (X[order[0]].copy(), XI[order[0]].copy())
    if isinstance(M, RoundSphere2):
        hx = np.array([np.pi / nx, TWO_PI / nx])
    else:
        hx = np.asarray(M.periods) / nx
    ha = TWO_PI / na
    nfev = 0
    for j in order:
        ang = _angle_of(M, X[j], XI[j])
        p0 = np.array([X[j][0], X[j][1], ang])
        simplex = np.array([p0, p0 + [0.5 * hx[0], 0, 0], p0 + [0, 0.5 * hx[1], 0], p0 + [0, 0, 0.5 * ha]])

        def f(p):
            x, xi = M.param_to_phase(p)
            return float(objective(x[None], xi[None])[0])

        r = minimize(
            f, p0, method="Nelder-Mead",
            options={"maxfev": NM_MAXFEV, "initial_simplex": simplex, "xatol": 1e-7, "fatol": 1e-14},
        )
        nfev += r.nfev
        if r.fun < best_v:
            best_v = float(r.fun)
            best = M.param_to_phase(r.x)
    return best_v, PhasePoint(*best), nfev


def _refine_batched(M, objective, X, XI, vals, nx, na, n_starts=NM_STARTS, min_step=1e-6, max_iter=60):
    """Compass search in (x1, x2, angle), all starts advanced together.

    Used for RK4 manifolds, where one batched flow of many points costs about
    as much as a single trajectory and a sequential simplex is too slow.
    """
    order = np.argsort(vals, kind="stable")[:n_starts]
    P = np.array([[X[j][0], X[j][1], _angle_of(M, X[j], XI[j])] for j in order])
    F = np.asarray(vals, float)[order].copy()
    H = np.tile(np.r_[0.5 * np.asarray(M.periods) / nx, TWO_PI / na / 2], (len(order), 1))
    dirs = np.vstack([np.eye(3), -np.eye(3)])
    nfev = 0
    for _ in range(max_iter):
        live = np.max(H / np.r_[1.0, 1.0, TWO_PI][None], axis=1) > min_step
        if not np.any(live):
            break
        idx = np.flatnonzero(live)
        C = (P[idx, None, :] + dirs[None] * H[idx, None, :]).reshape(-1, 3)
        x = M.wrap(C[:, :2])
        fc = np.asarray(objective(x, M.unit_covector(x, C[:, 2])), float).reshape(len(idx), 6)
        nfev += C.shape[0]
        k = np.argmin(fc, axis=1)
        for i, j in enumerate(idx):
            if fc[i, k[i]] < F[j]:
                F[j] = fc[i, k[i]]
                P[j] = P[j] + dirs[k[i]] * H[j]
            else:
                H[j] *= 0.5
    j = int(np.argmin(F))
    x = M.wrap(P[j, :2])
    return float(F[j]), PhasePoint(x, M.unit_covector(x, P[j, 2])), nfev


def _angle_of(M, x, xi):
    if isinstance(M, RoundSphere2):
        return math.atan2(xi[1] / math.sin(x[0]), xi[0])
    return math.atan2(xi[1], xi[0])


def K_of_T(M, b, T: float, nx: int = 24, na: int = 32, refine: bool = True) -> KResult:
    """K(T) = min over S*M of the geodesic average of b^2, with minimiser."""
    if T < 0:
        raise InvalidInputError("T must be >= 0")
    X, XI = cosphere_arrays(M, nx, na)
    if T == 0:
        return KResult(0.0, PhasePoint(X[0], XI[0]), 0.0)
    vals = _averages(M, b, X, XI, float(T))
    gmin = float(np.min(vals))
    if not refine or gmin == 0.0:
        j = int(np.argmin(vals))
        return KResult(gmin, PhasePoint(X[j], XI[j]), gmin, len(vals))
    v, rho, nfev = _refine(M, lambda x, xi: _averages(M, b, x, xi, float(T)), X, XI, vals, nx, na)
    return KResult(v, rho, gmin, len(vals) + nfev)


def eps_zero(b, T):
    return EPS_ZERO_REL * b.amplitude ** 2 * T


def analytic_trapped_ray(M, b, n_lines=1024, n_along=1024):
    """Axis-aligned closed geodesic of the flat torus avoiding closure(omega).

    Certification: every sample on the line has dist_to_omega >= m with
    m > half the sample spacing, so the whole line stays outside omega-bar
    (dist_to_omega is 1-Lipschitz).  Returns (PhasePoint, clearance) or None.
    """
    if not isinstance(M, FlatTorus2):
        return None
    best = None
    for axis in (0, 1):
        other = 1 - axis
        L_along, L_other = M.periods[axis], M.periods[other]
        cs = np.arange(n_lines) * L_other / n_lines
        ts = np.arange(n_along) * L_along / n_along
        P = np.empty((n_lines, n_along, 2))
        P[..., other] = cs[:, None]
        P[..., axis] = ts[None, :]
        clearance = dist_to_omega(b, M, P).min(axis=1)
        j = int(np.argmax(clearance))
        if clearance[j] > 0.5 * L_along / n_along and (best is None or clearance[j] > best[1]):
            x = np.zeros(2)
            x[other] = cs[j]
            xi = np.zeros(2)
            xi[axis] = 1.0
            best = (PhasePoint(x, xi), float(clearance[j]))
    return best


@dataclass
class TGCCResult:
    value: float
    rho: PhasePoint
    certificate: str
    K_at_value: float = float("nan")
    history: list = field(default_factory=list)

    def __float__(self):
        return float(self.value)


def t_gcc(M, b, t_max: float = 4.0, tol: float = 5e-3, nx: int = 24, na: int = 32) -> TGCCResult:
    """inf{T > 0 : K(T) > eps_zero(T)} by bisection on (0, t_max].

    Returns +inf when the predicate fails at t_max; the certificate is
    'analytic' (axis-aligned trapped ray), 'stable' (grid minimiser stable
    under doubling na) or 'unverified'.
    """
    if t_max <= 0 or tol <= 0:
        raise InvalidInputError("need t_max > 0 and tol > 0")
    trapped = analytic_trapped_ray(M, b)
    if trapped is not None:
        return TGCCResult(math.inf, trapped[0], "analytic", 0.0)
    hist = []
    top = K_of_T(M, b, t_max, nx, na)
    hist.append((t_max, top.value))
    if top.value <= eps_zero(b, t_max):
        fine = K_of_T(M, b, t_max, nx, 2 * na)
        hist.append((t_max, fine.value))
        a0 = _angle_of(M, top.rho.x, top.rho.xi)
        a1 = _angle_of(M, fine.rho.x, fine.rho.xi)
        dang = abs((a1 - a0 + np.pi) % TWO_PI - np.pi)
        stable = fine.value <= eps_zero(b, t_max) and min(dang, np.pi - dang) <= TWO_PI / na
        return TGCCResult(math.inf, top.rho, "stable" if stable else "unverified", top.value, hist)
    lo, hi = 0.0, float(t_max)
    rho = top.rho
    k_lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        r = K_of_T(M, b, mid, nx, na)
        hist.append((mid, r.value))
        if r.value > eps_zero(b, mid):
            hi = mid
        else:
            lo = mid
            rho = r.rho
            k_lo = r.value
    return TGCCResult(0.5 * (lo + hi), rho, "bisection", k_lo, hist)


@dataclass
class EqualityDiagnostic:
    x_star: np.ndarray
    R0: float
    exit_times: np.ndarray
    max_violation: float
    passed: bool


def _ray_positions(M, x_star, angles, t):
    """Chart positions of rays from x_star at time t, one per angle."""
    if isinstance(M, RoundSphere2):
        p = M.embed(x_star)
        e_th, e_ph = M.frame(x_star)
        w = np.cos(angles)[:, None] * e_th + np.sin(angles)[:, None] * e_ph
        pt = p * np.cos(t)[..., None] + w * np.sin(t)[..., None]
        th = np.arccos(np.clip(pt[..., 2], -1, 1))
        ph = np.mod(np.arctan2(pt[..., 1], pt[..., 0]), TWO_PI)
        return np.stack([th, ph], axis=-1)
    xi = M.unit_covector(np.broadcast_to(x_star, (len(angles), 2)), angles)
    xi = xi / M.lam(np.broadcast_to(x_star, (len(angles), 2)), xi)[:, None]
    if isinstance(M, FlatTorus2):
        return M.wrap(x_star + t[..., None] * xi)
    out = np.empty(np.shape(t) + (2,))
    for j in range(len(angles)):
        out[j] = M.flow(x_star, xi[j], float(t[j]))[0]
    return out


def equality_case_diagnostic(M, b, x_star, na: int = 64, R0: float | None = None, tol: float = 0.01):
    """Exit times into closure(omega) along a fan of na rays from x_star,
    compared with R0 = dist(x_star, omega)."""
    x_star = np.asarray(x_star, float)
    if R0 is None:
        R0 = float(dist_to_omega(b, M, x_star))
    angles = TWO_PI * np.arange(na) / na
    lo = np.zeros(na)
    hi = np.full(na, 2.0 * M.diameter() + 1.0)
    # ray hits closure(omega) iff dist_to_omega == 0; bisect first crossing
    scan = np.linspace(0, hi[0], 2049)
    first = np.full(na, hi[0])
    for j, t in enumerate(scan[1:], 1):
        pos = _ray_positions(M, x_star, angles, np.full(na, t))
        hit = (dist_to_omega(b, M, pos) == 0) & (first == hi[0])
        first[hit] = t
        lo[hit] = scan[j - 1]
        if np.all(first < hi[0]):
            break
    hi = first
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        inside = dist_to_omega(b, M, _ray_positions(M, x_star, angles, mid)) == 0
        hi = np.where(inside, mid, hi)
        lo = np.where(inside, lo, mid)
    exits = 0.5 * (lo + hi)
    viol = float(np.max(np.abs(exits - R0)))
    return EqualityDiagnostic(x_star, R0, exits, viol, viol <= tol)


@dataclass
class TimesComparison:
    t_uc: float
    t_gcc: float
    equality: bool
    tolerance: float
    calL: object
    gcc: TGCCResult
    diagnostic: EqualityDiagnostic | None = None


def t_comparison(M, b, resolution: int = 128, t_max: float = 4.0, tol: float = 0.02,
                 nx: int = 24, na: int = 32, gcc_tol: float = 5e-3) -> TimesComparison:
    """Both control times; asserts T_UC <= T_GCC + combined tolerance."""
    L = calL_details(b, M, resolution)
    tuc = 2.0 * L.value
    g = t_gcc(M, b, t_max, gcc_tol, nx, na)
    combined = tol + 2.0 * L.error_bound + gcc_tol
    if tuc > g.value + combined:
        raise InconsistencyError(f"T_UC={tuc:.6g} exceeds T_GCC={g.value:.6g} beyond {combined:.3g}")
    eq = bool(abs(g.value - tuc) <= tol)
    diag = equality_case_diagnostic(M, b, L.argmax, R0=L.value) if eq else None
    return TimesComparison(tuc, g.value, eq, combined, L, g, diag)


# -- lower-order terms ---------------------------------------------------------


@dataclass(frozen=True)
class LowerOrderData:
    """Re(b0) and Re(b1) as sums of ``amp * t**p * cos(2 pi k.x/L + phase)``.

    ``b0`` is a tuple of ``(amp, p, k1, k2, phase)``; ``b1`` is a pair of such
    tuples, one per vector component.
    """

    b0: tuple = ()
    b1: tuple = ((), ())

    def __post_init__(self):
        object.__setattr__(self, "b0", tuple(tuple(map(float, t)) for t in self.b0))
        object.__setattr__(
            self, "b1", tuple(tuple(tuple(map(float, t)) for t in comp) for comp in self.b1)
        )
        if len(self.b1) != 2:
            raise InvalidInputError("b1 needs two components")

    @property
    def is_zero(self):
        return not self.b0 and not any(self.b1)

    @staticmethod
    def _eval(terms, t, x, periods):
        out = np.zeros(np.broadcast_shapes(np.shape(t), x.shape[:-1]))
        L1, L2 = periods
        for amp, p, k1, k2, ph in terms:
            out = out + amp * np.power(t, p) * np.cos(
                TWO_PI * (k1 * x[..., 0] / L1 + k2 * x[..., 1] / L2) + ph
            )
        return out

    def eval_b0(self, t, x, periods=(1.0, 1.0)):
        return self._eval(self.b0, t, np.asarray(x, float), periods)

    def eval_b1(self, t, x, periods=(1.0, 1.0)):
        x = np.asarray(x, float)
        return np.stack([self._eval(c, t, x, periods) for c in self.b1], axis=-1)


def _weighted(M, b, lot, X, XI, T, sign):
    if T == 0:
        return np.zeros(X.shape[0])
    if isinstance(M, RoundSphere2) and not lot.is_zero:
        raise InvalidInputError("lower-order data is supported on torus kinds only")
    n = n_samples(T)
    times = np.linspace(0.0, T, n)
    tt = times[:, None]

    def one(x, xi):
        if isinstance(M, RoundSphere2):
            bv = evaluate_points(b, M, M.trajectory_points(x, xi, sign * times))
            return simpson(bv * bv, dx=times[1] - times[0], axis=0)
        xs, xis = M.trajectory(x, xi, sign * times)
        bv = evaluate(b, M, xs)
        f = lot.eval_b0(tt, xs, M.periods)
        if any(lot.b1):
            pair = np.sum(xis * lot.eval_b1(tt, xs, M.periods), axis=-1) / M.lam(xs, xis)
            f = f + sign * pair
        inner = cumulative_trapezoid(f, times, axis=0, initial=0.0)
        return simpson(bv * bv * np.exp(inner), dx=times[1] - times[0], axis=0)

    return _batched(one, X, XI, n)


def weighted_average(M, b, lot: LowerOrderData, rho: PhasePoint, T: float, sign: int = +1):
    """g_T^+/-(rho); sign=-1 flows with phi_{-t} and flips the b1 pairing."""
    if sign not in (1, -1):
        raise InvalidInputError("sign must be +1 or -1")
    X, XI, scalar = _as_batch(rho)
    out = _weighted(M, b, lot, X, XI, float(T), sign)
    return float(out[0]) if scalar else out


@dataclass
class KGeneralResult:
    value: float
    plus: KResult
    minus: KResult


def K_general(M, b, lot: LowerOrderData, T: float, nx: int = 24, na: int = 32) -> KGeneralResult:
    """min{min g_T^+, min g_T^-} with the K_of_T search scheme for each sign."""
    X, XI = cosphere_arrays(M, nx, na)
    res = []
    for sign in (1, -1):
        vals = _weighted(M, b, lot, X, XI, float(T), sign)
        gmin = float(np.min(vals))
        v, rho, nfev = _refine(
            M, lambda x, xi, s=sign: _weighted(M, b, lot, x, xi, float(T), s), X, XI, vals, nx, na
        )
        res.append(KResult(v, rho, gmin, len(vals) + nfev))
    return KGeneralResult(min(res[0].value, res[1].value), res[0], res[1])


# -- plain line integrals --------------------------------------------------------


def field_integral(M, f, X, XI, T):
    """int_0^T f(pi phi_t(x, xi)) dt for a batch, f a function of chart points."""
    X = np.atleast_2d(np.asarray(X, float))
    XI = np.atleast_2d(np.asarray(XI, float))
    if T == 0:
        return np.zeros(X.shape[0])
    n = n_samples(T)
    times = np.linspace(0.0, T, n)

    def one(x, xi):
        xs, _ = M.trajectory(x, xi, times)
        return simpson(f(xs), dx=times[1] - times[0], axis=0)

    return _batched(one, X, XI, n)


def field_integral_extrema(M, f, T, nx=24, na=32):
    """(inf, rho_inf, sup, rho_sup) of int_0^T f along unit-speed geodesics."""
    X, XI = cosphere_arrays(M, nx, na)
    vals = field_integral(M, f, X, XI, float(T))
    lo, rho_lo, _ = _refine(M, lambda x, xi: field_integral(M, f, x, xi, float(T)), X, XI, vals, nx, na)
    hi, rho_hi, _ = _refine(M, lambda x, xi: -field_integral(M, f, x, xi, float(T)), X, XI, -vals, nx, na)
    return lo, rho_lo, -hi, rho_hi
