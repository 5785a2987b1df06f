"""Model manifolds, the geodesic (Hamiltonian) flow of lambda(x, xi) = |xi|_x,
Riemannian distances and cosphere sampling.

Three model surfaces are provided:

* :class:`FlatTorus2` -- R^2 / (L1 Z x L2 Z) with the Euclidean metric;
* :class:`RoundSphere2` -- the unit sphere, chart coordinates
  ``x = (colatitude, longitude)``, flown in extrinsic R^3 coordinates;
* :class:`PerturbedTorus2` -- the torus with conformal metric
  ``g_x = exp(2 u(x)) Id`` where ``u`` is a truncated cosine series.

All methods are vectorised over leading array axes: points have shape
``(..., 2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import IntegrationError, InvalidInputError

TWO_PI = 2.0 * np.pi

RK4_MAX_STEP = 1e-3
RK4_TOL = 1e-8
RK4_MIN_STEP = 1e-7


@dataclass(frozen=True)
class PhasePoint:
    """A point (x, xi) of the cotangent bundle in chart coordinates."""

    x: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "xi", np.asarray(self.xi, dtype=float))

    def flip(self) -> "PhasePoint":
        """The involution sigma(x, xi) = (x, -xi)."""
        return PhasePoint(self.x, -self.xi)


@dataclass(frozen=True)
class FlowTrajectory:
    times: np.ndarray
    x: np.ndarray
    xi: np.ndarray
    step: float

    def __len__(self):
        return len(self.times)

    def __getitem__(self, i):
        return self.times[i], PhasePoint(self.x[i], self.xi[i])


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise InvalidInputError("non-finite phase-space coordinates")


def _wrap_delta(d, periods):
    p = np.asarray(periods)
    return d - p * np.round(d / p)


class _Torus:
    """Shared periodic-chart machinery for the two torus kinds."""

    periods: tuple

    is_torus = True

    def wrap(self, x):
        return np.mod(x, np.asarray(self.periods))

    def chart_delta(self, x, y):
        return _wrap_delta(np.asarray(y) - np.asarray(x), self.periods)

    def grid(self, n):
        """Uniform n x n grid of chart points, shape (n, n, 2)."""
        L1, L2 = self.periods
        g1 = np.arange(n) * L1 / n
        g2 = np.arange(n) * L2 / n
        X1, X2 = np.meshgrid(g1, g2, indexing="ij")
        return np.stack([X1, X2], axis=-1)

    def area(self):
        return self.periods[0] * self.periods[1]

    def diameter(self):
        return 0.5 * math.hypot(*self.periods)


@dataclass(frozen=True)
class FlatTorus2(_Torus):
    periods: tuple = (1.0, 1.0)

    kind = "flat_torus"
    closed_form = True
    dimension = 2

    def __post_init__(self):
        if min(self.periods) <= 0:
            raise InvalidInputError("torus periods must be positive")
        object.__setattr__(self, "periods", tuple(float(p) for p in self.periods))

    def conformal_factor(self, x):
        return np.zeros(np.shape(x)[:-1])

    def lam(self, x, xi):
        return np.linalg.norm(xi, axis=-1)

    def flow(self, x, xi, t):
        x = np.asarray(x, float)
        xi = np.asarray(xi, float)
        speed = np.linalg.norm(xi, axis=-1, keepdims=True)
        t = np.asarray(t, float)
        t = t[..., None] if t.ndim else t  # one time per batch point
        return self.wrap(x + t * xi / speed), xi.copy()

    def trajectory(self, x, xi, times):
        x = np.asarray(x, float)
        xi = np.asarray(xi, float)
        unit = xi / np.linalg.norm(xi, axis=-1, keepdims=True)
        tt = np.asarray(times).reshape((-1,) + (1,) * x.ndim)
        xs = self.wrap(x[None] + tt * unit[None])
        xis = np.broadcast_to(xi, xs.shape).copy()
        return xs, xis

    def distance(self, x, y):
        """Minimum over the 9 lattice translates of the Euclidean distance.

        On a rectangular lattice this minimum is attained by the minimal
        image of y - x, which is what is evaluated.
        """
        d = self.chart_delta(np.asarray(x, float), np.asarray(y, float))
        return np.sqrt(np.sum(d * d, axis=-1))

    def unit_covector(self, x, angle):
        angle = np.asarray(angle, float)
        return np.stack([np.cos(angle), np.sin(angle)], axis=-1)

    def param_to_phase(self, p):
        """Nelder-Mead parametrisation (x1, x2, angle) -> (x, xi)."""
        x = self.wrap(np.array([p[0], p[1]]))
        return x, self.unit_covector(x, p[2])


@dataclass(frozen=True)
class PerturbedTorus2(_Torus):
    """Torus with metric exp(2u) Id, u(x) = sum a cos(2 pi (k.x / L) + phase).

    ``terms`` is a sequence of ``(k1, k2, amplitude, phase)``.
    """

    periods: tuple = (1.0, 1.0)
    terms: tuple = ()
    grid_resolution: int = 256
    stencil_radius: int = 4

    kind = "perturbed_torus"
    closed_form = False
    dimension = 2

    def __post_init__(self):
        if min(self.periods) <= 0:
            raise InvalidInputError("torus periods must be positive")
        object.__setattr__(self, "periods", tuple(float(p) for p in self.periods))
        object.__setattr__(
            self, "terms", tuple(tuple(float(v) for v in t) for t in self.terms)
        )

    @classmethod
    def constant(cls, value, periods=(1.0, 1.0), **kw):
        return cls(periods=periods, terms=((0, 0, value, 0.0),), **kw)

    @cached_property
    def _coef(self):
        """(wave vectors scaled by 2 pi / L, amplitudes, phases) as arrays."""
        L = np.asarray(self.periods)
        t = np.asarray(self.terms, float).reshape(-1, 4)
        return TWO_PI * t[:, :2] / L, t[:, 2], t[:, 3]

    def _u_grad(self, x):
        W, a, ph = self._coef
        arg = x @ W.T + ph
        return np.cos(arg) @ a, -(np.sin(arg) * a) @ W

    def conformal_factor(self, x):
        W, a, ph = self._coef
        return np.cos(np.asarray(x, float) @ W.T + ph) @ a

    def grad_conformal(self, x):
        return self._u_grad(np.asarray(x, float))[1]

    def lam(self, x, xi):
        return np.exp(-self.conformal_factor(x)) * np.linalg.norm(xi, axis=-1)

    def _rk4(self, Y, h, nsteps):
        """RK4 on the fused state Y = (x1, x2, xi1, xi2) (compiled kernel)."""
        from ._kernels import rk4

        W, a, ph = self._coef
        shape = Y.shape
        Y2 = np.ascontiguousarray(Y.reshape(-1, 4))
        hh = np.ascontiguousarray(np.broadcast_to(np.asarray(h, float).reshape(-1) if np.ndim(h) else h,
                                                  (Y2.shape[0],)), dtype=float)
        return rk4(Y2, hh, int(nsteps), W, a, ph).reshape(shape)

    def _segment(self, x, xi, t, t0=0.0, h_max=RK4_MAX_STEP):
        """Flow by t (a scalar or one time per batch point) with a fixed step
        of at most h_max and a Richardson self-check against steps of 2h;
        the step is halved only when the check fails."""
        t = np.asarray(t, float)
        tmax = float(np.max(np.abs(t))) if t.size else 0.0
        if tmax == 0.0:
            return x, xi
        Y = np.concatenate([x, xi], axis=-1)
        h_t = t[..., None] if t.ndim else t
        n = 2 * max(1, math.ceil(tmax / (2.0 * h_max)))
        while True:
            if tmax / n < RK4_MIN_STEP:
                raise IntegrationError("RK4 step size underflow", last_time=t0)
            h = h_t / n
            Yc = self._rk4(Y, 2.0 * h, n // 2)
            Yf = self._rk4(Y, h, n)
            scale = max(1.0, float(np.max(np.abs(Yf[..., 2:]))))
            err = max(float(np.max(np.abs(Yf[..., :2] - Yc[..., :2]))),
                      float(np.max(np.abs(Yf[..., 2:] - Yc[..., 2:]))) / scale)
            if err / 15.0 <= RK4_TOL:
                return Yf[..., :2], Yf[..., 2:]
            n *= 2

    def flow(self, x, xi, t):
        """phi_t; ``t`` may hold one time per batch point."""
        x = np.asarray(x, float)
        xi = np.asarray(xi, float)
        tmax = float(np.max(np.abs(t)))
        xf, pf = self._segment(x, xi, t, h_max=min(RK4_MAX_STEP, tmax / 1000.0) if tmax else RK4_MAX_STEP)
        return self.wrap(xf), pf

    def trajectory(self, x, xi, times):
        x = np.asarray(x, float)
        xi = np.asarray(xi, float)
        times = np.asarray(times, float)
        span = float(np.max(np.abs(times))) if times.size else 0.0
        h_max = min(RK4_MAX_STEP, span / 1000.0) if span else RK4_MAX_STEP
        xs = np.empty((len(times),) + x.shape)
        ps = np.empty((len(times),) + xi.shape)
        cx, cp, ct = x, xi, 0.0
        for j, t in enumerate(times):
            cx, cp = self._segment(cx, cp, t - ct, t0=ct, h_max=h_max)
            ct = t
            xs[j] = cx
            ps[j] = cp
        return self.wrap(xs), ps

    def unit_covector(self, x, angle):
        angle = np.asarray(angle, float)
        e = np.exp(self.conformal_factor(x))
        return e[..., None] * np.stack([np.cos(angle), np.sin(angle)], axis=-1)

    def param_to_phase(self, p):
        x = self.wrap(np.array([p[0], p[1]]))
        return x, self.unit_covector(x, p[2])

    # -- distances: Dijkstra on a periodic grid graph ------------------------

    def _graph(self):
        return _torus_graph(self.periods, self.terms, self.grid_resolution, self.stencil_radius)

    def _node(self, x):
        n = self.grid_resolution
        L = np.asarray(self.periods)
        idx = np.mod(np.rint(np.asarray(x) / L * n).astype(int), n)
        return idx[..., 0] * n + idx[..., 1]

    def distance_field(self, sources):
        """Graph distance from the nodes nearest ``sources`` to every node,
        shape (n, n)."""
        graph = self._graph()
        nodes = np.unique(np.atleast_1d(self._node(np.atleast_2d(sources))))
        d = dijkstra(graph, directed=False, indices=nodes, min_only=True)
        n = self.grid_resolution
        return d.reshape(n, n)

    def sample_field(self, field_, x):
        """Periodic bilinear interpolation of a node field at chart points."""
        n = self.grid_resolution
        L = np.asarray(self.periods)
        s = np.mod(np.asarray(x, float) / L * n, n)
        i0 = np.floor(s).astype(int)
        f = s - i0
        i0 %= n
        i1 = (i0 + 1) % n
        a = field_[i0[..., 0], i0[..., 1]]
        b = field_[i1[..., 0], i0[..., 1]]
        c = field_[i0[..., 0], i1[..., 1]]
        d = field_[i1[..., 0], i1[..., 1]]
        fx, fy = f[..., 0], f[..., 1]
        return (1 - fx) * (1 - fy) * a + fx * (1 - fy) * b + (1 - fx) * fy * c + fx * fy * d

    def distance(self, x, y):
        x = np.atleast_2d(np.asarray(x, float))
        y = np.asarray(y, float)
        if x.shape[0] != 1:
            return np.array([self.distance(xx, yy) for xx, yy in zip(x, np.broadcast_to(y, x.shape))])
        fld = self.distance_field(x)
        return self.sample_field(fld, y)

    @property
    def grid_step(self):
        return max(self.periods) / self.grid_resolution


@lru_cache(maxsize=8)
def _torus_graph(periods, terms, n, radius):
    m = PerturbedTorus2(periods=periods, terms=terms, grid_resolution=n)
    L1, L2 = periods
    dirs = []
    for i in range(0, radius + 1):
        for j in range(-radius, radius + 1):
            if (i == 0 and j <= 0) or math.gcd(i, abs(j)) != 1:
                continue
            dirs.append((i, j))
    I, J = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    I = I.ravel()
    J = J.ravel()
    rows, cols, w = [], [], []
    for di, dj in dirs:
        a = np.stack([I * L1 / n, J * L2 / n], axis=-1)
        step = np.array([di * L1 / n, dj * L2 / n])
        e = np.exp(m.conformal_factor(a))
        e_mid = np.exp(m.conformal_factor(a + 0.5 * step))
        e_end = np.exp(m.conformal_factor(a + step))
        length = np.linalg.norm(step) * (e + 4 * e_mid + e_end) / 6.0
        rows.append(I * n + J)
        cols.append(((I + di) % n) * n + (J + dj) % n)
        w.append(length)
    return coo_matrix(
        (np.concatenate(w), (np.concatenate(rows), np.concatenate(cols))), shape=(n * n, n * n)
    ).tocsr()


@dataclass(frozen=True)
class RoundSphere2:
    """Unit sphere; chart x = (colatitude, longitude), xi = (xi_theta, xi_phi)."""

    radius: float = 1.0

    kind = "round_sphere"
    closed_form = True
    dimension = 2
    is_torus = False
    periods = None

    def __post_init__(self):
        if self.radius != 1.0:
            raise InvalidInputError("only the unit sphere is supported")

    @staticmethod
    def embed(x):
        x = np.asarray(x, float)
        th, ph = x[..., 0], x[..., 1]
        return np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=-1)

    @staticmethod
    def frame(x):
        x = np.asarray(x, float)
        th, ph = x[..., 0], x[..., 1]
        e_th = np.stack([np.cos(th) * np.cos(ph), np.cos(th) * np.sin(ph), -np.sin(th)], axis=-1)
        e_ph = np.stack([-np.sin(ph), np.cos(ph), np.zeros_like(ph)], axis=-1)
        return e_th, e_ph

    def to_extrinsic(self, x, xi):
        """(chart x, chart covector) -> (unit vector p, tangent vector xi^sharp)."""
        x = np.asarray(x, float)
        xi = np.asarray(xi, float)
        e_th, e_ph = self.frame(x)
        s = np.sin(x[..., 0])[..., None]
        w = xi[..., 0:1] * e_th + (xi[..., 1:2] / s) * e_ph
        return self.embed(x), w

    def from_extrinsic(self, p, w):
        p = np.asarray(p, float)
        th = np.arccos(np.clip(p[..., 2], -1.0, 1.0))
        ph = np.mod(np.arctan2(p[..., 1], p[..., 0]), TWO_PI)
        x = np.stack([th, ph], axis=-1)
        e_th, e_ph = self.frame(x)
        xi = np.stack([np.sum(w * e_th, -1), np.sin(th) * np.sum(w * e_ph, -1)], axis=-1)
        return x, xi

    def lam(self, x, xi):
        x = np.asarray(x, float)
        xi = np.asarray(xi, float)
        return np.sqrt(xi[..., 0] ** 2 + (xi[..., 1] / np.sin(x[..., 0])) ** 2)

    def flow_extrinsic(self, p, w, t):
        """Great-circle rotation; p unit, w tangent with |w| = lambda."""
        t = np.asarray(t, float)
        lam = np.linalg.norm(w, axis=-1, keepdims=True)
        u = w / lam
        c, s = np.cos(t), np.sin(t)
        if t.ndim:
            c = c.reshape(t.shape + (1,) * p.ndim)
            s = s.reshape(t.shape + (1,) * p.ndim)
        return p * c + u * s, lam * (u * c - p * s)

    def flow(self, x, xi, t):
        """phi_t; ``t`` may hold one time per batch point."""
        p, w = self.to_extrinsic(x, xi)
        t = np.asarray(t, float)
        if t.ndim:
            lam = np.linalg.norm(w, axis=-1, keepdims=True)
            u = w / lam
            c, s = np.cos(t)[..., None], np.sin(t)[..., None]
            pt, wt = p * c + u * s, lam * (u * c - p * s)
        else:
            pt, wt = self.flow_extrinsic(p, w, float(t))
        return self.from_extrinsic(pt, wt)

    def trajectory(self, x, xi, times):
        p, w = self.to_extrinsic(x, xi)
        pt, wt = self.flow_extrinsic(p, w, np.asarray(times, float))
        return self.from_extrinsic(pt, wt)

    def trajectory_points(self, x, xi, times):
        """Extrinsic positions along the flow, shape (n_times, ..., 3)."""
        p, w = self.to_extrinsic(x, xi)
        return self.flow_extrinsic(p, w, np.asarray(times, float))[0]

    def distance(self, x, y):
        a = self.embed(x)
        b = self.embed(y)
        return np.arccos(np.clip(np.sum(a * b, -1), -1.0, 1.0))

    def distance_points(self, p, q):
        return np.arccos(np.clip(np.sum(p * q, -1), -1.0, 1.0))

    def conformal_factor(self, x):
        return np.zeros(np.shape(x)[:-1])

    def unit_covector(self, x, angle):
        x = np.asarray(x, float)
        angle = np.asarray(angle, float)
        return np.stack([np.cos(angle), np.sin(angle) * np.sin(x[..., 0])], axis=-1)

    def param_to_phase(self, p):
        th = np.clip(p[0], 1e-6, np.pi - 1e-6)
        x = np.array([th, np.mod(p[1], TWO_PI)])
        return x, self.unit_covector(x, p[2])

    def wrap(self, x):
        x = np.array(x, float)
        x[..., 1] = np.mod(x[..., 1], TWO_PI)
        return x

    def grid(self, n):
        """n x n (colatitude, longitude) grid including both poles."""
        th = np.linspace(0.0, np.pi, n)
        ph = np.arange(n) * TWO_PI / n
        A, B = np.meshgrid(th, ph, indexing="ij")
        return np.stack([A, B], axis=-1)

    def area(self):
        return 4 * np.pi

    def diameter(self):
        return np.pi


ManifoldModel = FlatTorus2 | RoundSphere2 | PerturbedTorus2


# -- flow checks and convenience operations ---------------------------------------


def lam(M, p: PhasePoint):
    """lambda(x, xi) = |xi|_x = sqrt(g*_x(xi, xi))."""
    _check_finite(p.x, p.xi)
    return M.lam(p.x, p.xi)


def geodesic_flow(M, p: PhasePoint, t: float) -> PhasePoint:
    """phi_t(p); negative t gives the backward flow."""
    _check_finite(p.x, p.xi)
    if np.any(M.lam(p.x, p.xi) <= 0):
        raise InvalidInputError("flow needs lambda(p) > 0")
    x, xi = M.flow(p.x, p.xi, t)
    return PhasePoint(x, xi)


def flow_trajectory(M, p: PhasePoint, T: float, n: int) -> FlowTrajectory:
    if T <= 0 or n < 2:
        raise InvalidInputError("need T > 0 and n >= 2")
    _check_finite(p.x, p.xi)
    times = np.linspace(0.0, T, n)
    xs, xis = M.trajectory(p.x, p.xi, times)
    return FlowTrajectory(times, xs, xis, T / (n - 1))


def distance(M, x, y):
    _check_finite(np.asarray(x, float), np.asarray(y, float))
    return M.distance(x, y)


def flow_involution_check(M, p: PhasePoint, t: float) -> float:
    """max(|sigma phi_t(p) - phi_{-t} sigma(p)|, |phi_t phi_{-t}(p) - p|).

    Torus residuals are measured in the periodic chart; on the sphere the
    flows are composed and compared in extrinsic R^3 coordinates (pole-free).
    """
    if isinstance(M, RoundSphere2):
        # compose in R^3: intermediate states may sit on a pole of the chart
        _check_finite(p.x, p.xi)
        p0, w0 = M.to_extrinsic(p.x, p.xi)
        pa, wa = M.flow_extrinsic(p0, w0, t)
        pb, wb = M.flow_extrinsic(p0, -w0, -t)
        pm, wm = M.flow_extrinsic(p0, w0, -t)
        pc, wc = M.flow_extrinsic(pm, wm, t)
        r1 = max(np.max(np.abs(pa - pb)), np.max(np.abs(wa + wb)))
        r2 = max(np.max(np.abs(pc - p0)), np.max(np.abs(wc - w0)))
        return float(max(r1, r2))
    a = geodesic_flow(M, p, t).flip()
    b = geodesic_flow(M, p.flip(), -t)
    c = geodesic_flow(M, geodesic_flow(M, p, -t), t)
    r1 = max(np.max(np.abs(M.chart_delta(a.x, b.x))), np.max(np.abs(a.xi - b.xi)))
    r2 = max(np.max(np.abs(M.chart_delta(c.x, p.x))), np.max(np.abs(c.xi - p.xi)))
    return float(max(r1, r2))


def cosphere_sample(M, nx: int, na: int) -> list[PhasePoint]:
    """Deterministic product grid of nx^2 base points times na directions."""
    X, XI = cosphere_arrays(M, nx, na)
    return [PhasePoint(x, xi) for x, xi in zip(X, XI)]


def cosphere_arrays(M, nx: int, na: int):
    """Array form of :func:`cosphere_sample`: shapes (nx*nx*na, 2) each."""
    if nx < 1 or na < 1:
        raise InvalidInputError("nx, na must be >= 1")
    if isinstance(M, RoundSphere2):
        th = np.pi * (np.arange(nx) + 0.5) / nx
        ph = TWO_PI * np.arange(nx) / nx
        A, B = np.meshgrid(th, ph, indexing="ij")
        base = np.stack([A.ravel(), B.ravel()], axis=-1)
    else:
        base = M.grid(nx).reshape(-1, 2)
    ang = TWO_PI * np.arange(na) / na
    X = np.repeat(base, na, axis=0)
    A = np.tile(ang, len(base))
    XI = M.unit_covector(X, A)
    # exact axis directions: keep cos/sin roundoff out of the trapped-ray tests
    XI[np.abs(XI) < 1e-15] = 0.0
    if not isinstance(M, RoundSphere2):
        XI = XI / M.lam(X, XI)[:, None]
    return X, XI


def random_phase_points(M, n, rng, speed=1.0):
    """n random cosphere-normalised phase points (scaled by ``speed``)."""
    if isinstance(M, RoundSphere2):
        z = rng.uniform(-0.95, 0.95, n)
        x = np.stack([np.arccos(z), rng.uniform(0, TWO_PI, n)], axis=-1)
    else:
        x = rng.uniform(0, 1, (n, 2)) * np.asarray(M.periods)
    xi = M.unit_covector(x, rng.uniform(0, TWO_PI, n))
    return x, speed * xi
