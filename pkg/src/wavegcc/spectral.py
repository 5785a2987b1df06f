"""Truncated Fourier calculus on the flat torus.

Coefficients are stored as (2K+1, 2K+1) arrays indexed by ``k + K`` and refer
to the L^2-orthonormal basis ``e_k(x) = exp(2 pi i k.x / L) / sqrt(L1 L2)``.
Products with functions are formed on a collocation grid of size
``N = next_fast_len(4K + 1)`` and truncated back to |k|_inf <= K.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from .errors import InvalidInputError, ResolutionError, StabilityError
from .geometry import TWO_PI
from .regions import smooth_step

_WORKERS = None


def set_workers(n):
    """Cap the FFT worker count (None lets scipy decide)."""
    global _WORKERS
    _WORKERS = n


@dataclass(frozen=True)
class SpectralBasis:
    K_max: int
    periods: tuple = (1.0, 1.0)
    grid_size: int | None = None

    def __post_init__(self):
        if self.K_max < 0:
            raise InvalidInputError("K_max must be >= 0")
        object.__setattr__(self, "periods", tuple(float(p) for p in self.periods))
        if self.grid_size is None:
            object.__setattr__(self, "grid_size", sfft.next_fast_len(4 * self.K_max + 1))

    @property
    def n(self):
        return 2 * self.K_max + 1

    @property
    def N(self):
        return self.grid_size

    @property
    def shape(self):
        return (self.n, self.n)

    @property
    def dim(self):
        return self.n * self.n

    @property
    def area(self):
        return self.periods[0] * self.periods[1]

    @cached_property
    def k1(self):
        r = np.arange(-self.K_max, self.K_max + 1)
        return np.broadcast_to(r[:, None], self.shape).copy()

    @cached_property
    def k2(self):
        r = np.arange(-self.K_max, self.K_max + 1)
        return np.broadcast_to(r[None, :], self.shape).copy()

    @cached_property
    def kappa(self):
        L1, L2 = self.periods
        return TWO_PI ** 2 * (self.k1 ** 2 / L1 ** 2 + self.k2 ** 2 / L2 ** 2)

    @cached_property
    def lam(self):
        return np.sqrt(self.kappa + 1.0)

    @property
    def lam_max(self):
        return float(self.lam.max())

    @cached_property
    def _idx(self):
        return np.arange(-self.K_max, self.K_max + 1) % self.N

    @cached_property
    def grid_kappa(self):
        """kappa for every mode of the collocation grid (FFT layout)."""
        f1 = sfft.fftfreq(self.N, 1.0 / self.N)
        L1, L2 = self.periods
        return TWO_PI ** 2 * (f1[:, None] ** 2 / L1 ** 2 + f1[None, :] ** 2 / L2 ** 2)

    def grid_points(self):
        L1, L2 = self.periods
        g1 = np.arange(self.N) * L1 / self.N
        g2 = np.arange(self.N) * L2 / self.N
        X1, X2 = np.meshgrid(g1, g2, indexing="ij")
        return np.stack([X1, X2], axis=-1)

    def sample(self, f):
        """Evaluate a callable f(x) with x of shape (N, N, 2) on the grid."""
        return np.asarray(f(self.grid_points()), dtype=float)

    # transforms; leading axes are batch axes
    def pad(self, c):
        c = np.asarray(c)
        Z = np.zeros(c.shape[:-2] + (self.N, self.N), dtype=complex)
        i = self._idx
        Z[..., i[:, None], i[None, :]] = c
        return Z

    def truncate(self, F):
        i = self._idx
        return F[..., i[:, None], i[None, :]]

    def to_grid(self, c):
        scale = self.N * self.N / math.sqrt(self.area)
        return sfft.ifft2(self.pad(c), workers=_WORKERS) * scale

    def grid_fft(self, g):
        """Full-grid coefficients (FFT layout) of grid values."""
        return sfft.fft2(g, workers=_WORKERS) * (math.sqrt(self.area) / (self.N * self.N))

    def grid_ifft(self, F):
        return sfft.ifft2(F, workers=_WORKERS) * (self.N * self.N / math.sqrt(self.area))

    def from_grid(self, g):
        return self.truncate(self.grid_fft(g))

    def grid_inner(self, f, g):
        """L^2 inner product (f, g) of grid functions."""
        return np.sum(f * np.conj(g)) * self.area / (self.N * self.N)

    def mode_index(self, k):
        return (int(k[0]) + self.K_max, int(k[1]) + self.K_max)

    def unit_mode(self, k):
        c = np.zeros(self.shape, dtype=complex)
        c[self.mode_index(k)] = 1.0
        return c


@dataclass(frozen=True)
class StateVector:
    """Coefficients on a SpectralBasis.

    kind: 'scalar' (shape (n, n)), 'cauchy' (v0, v1) or 'split' (v+, v-),
    the last two of shape (2, n, n).
    """

    basis: SpectralBasis
    coeffs: np.ndarray
    kind: str = "scalar"
    s: float = 0.0

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        want = self.basis.shape if self.kind == "scalar" else (2,) + self.basis.shape
        if self.kind not in ("scalar", "cauchy", "split"):
            raise InvalidInputError(f"unknown kind {self.kind!r}")
        if c.shape != want:
            raise InvalidInputError(f"coefficient shape {c.shape} != {want}")
        object.__setattr__(self, "coeffs", c)

    def norm(self, s=None):
        s = self.s if s is None else s
        w = (self.basis.kappa + 1.0)
        c = self.coeffs
        if self.kind == "scalar":
            return math.sqrt(float(np.sum(w ** s * np.abs(c) ** 2)))
        if self.kind == "split":
            return math.sqrt(float(np.sum(w ** s * np.abs(c) ** 2)))
        return math.sqrt(float(np.sum(w ** s * np.abs(c[0]) ** 2) + np.sum(w ** (s - 1) * np.abs(c[1]) ** 2)))

    @property
    def v0(self):
        return self.coeffs[0]

    @property
    def v1(self):
        return self.coeffs[1]


def hs_norm(basis, c, s):
    return math.sqrt(float(np.sum((basis.kappa + 1.0) ** s * np.abs(c) ** 2)))


def hs_inner(basis, a, b, s):
    return complex(np.sum((basis.kappa + 1.0) ** s * a * np.conj(b)))


def apply_lambda_s(v: StateVector, s: float) -> StateVector:
    """Lambda^s = (-Delta + 1)^{s/2}, coefficientwise."""
    if v.kind != "scalar":
        raise InvalidInputError("apply_lambda_s needs a scalar state")
    return StateVector(v.basis, v.coeffs * (v.basis.kappa + 1.0) ** (0.5 * s), "scalar", v.s)


def split_sigma(v0, v1=None, basis=None):
    """(v0, v1) -> (v+, v-) = (1/2)(v0 -/+ i Lambda^{-1} v1)."""
    if isinstance(v0, StateVector) and v0.kind == "cauchy":
        basis = v0.basis
        c0, c1 = v0.coeffs
        s = v0.s
        lam = basis.lam
        return StateVector(basis, np.stack([0.5 * (c0 - 1j * c1 / lam), 0.5 * (c0 + 1j * c1 / lam)]), "split", s)
    if isinstance(v0, StateVector):
        basis = v0.basis
        c0, c1 = v0.coeffs, v1.coeffs
    else:
        c0, c1 = np.asarray(v0), np.asarray(v1)
    lam = basis.lam
    return 0.5 * (c0 - 1j * c1 / lam), 0.5 * (c0 + 1j * c1 / lam)


def unsplit_sigma(vp, vm=None, basis=None):
    """(v+, v-) -> (v0, v1) = (v+ + v-, i Lambda (v+ - v-))."""
    if isinstance(vp, StateVector) and vp.kind == "split":
        basis = vp.basis
        a, b = vp.coeffs
        return StateVector(basis, np.stack([a + b, 1j * basis.lam * (a - b)]), "cauchy", vp.s)
    if isinstance(vp, StateVector):
        basis = vp.basis
        a, b = vp.coeffs, vm.coeffs
    else:
        a, b = np.asarray(vp), np.asarray(vm)
    return a + b, 1j * basis.lam * (a - b)


def propagate_free(v, t: float, sign: int = +1, basis=None):
    """e^{sign i t Lambda} on a split component; on a 'split' StateVector
    both components are propagated (v+ with +, v- with -)."""
    if isinstance(v, StateVector):
        ph = np.exp(1j * t * v.basis.lam)
        if v.kind == "split":
            return StateVector(v.basis, np.stack([ph * v.coeffs[0], np.conj(ph) * v.coeffs[1]]), "split", v.s)
        return StateVector(v.basis, (ph if sign > 0 else np.conj(ph)) * v.coeffs, v.kind, v.s)
    return np.exp(sign * 1j * t * basis.lam) * np.asarray(v)


def free_solution(basis, c0, c1, t):
    """Cauchy pair of the free Klein-Gordon solution at time t (exact)."""
    lam = basis.lam
    cs, sn = np.cos(t * lam), np.sin(t * lam)
    return cs * c0 + sn / lam * c1, -lam * sn * c0 + cs * c1


def _check_grid(basis, f):
    f = np.asarray(f)
    if f.shape[-2:] != (basis.N, basis.N):
        raise InvalidInputError("field must be sampled on the basis collocation grid")
    if basis.N < 4 * basis.K_max + 1:
        raise ResolutionError("collocation grid smaller than (4K+1)^2: products alias")
    return f


def multiply_function(v, f, basis=None):
    """Truncated product P_K(f v) via the collocation grid."""
    if isinstance(v, StateVector):
        basis = v.basis
        _check_grid(basis, f)
        return StateVector(basis, basis.from_grid(f * basis.to_grid(v.coeffs)), v.kind, v.s)
    _check_grid(basis, f)
    return basis.from_grid(f * basis.to_grid(v))


def energy(v0, v1, s=1.0, basis=None):
    """E_s(v0, v1) = (1/2)(|v0|^2_{H^s} + |v1|^2_{H^{s-1}})."""
    if isinstance(v0, StateVector):
        if v0.kind == "cauchy":
            basis, (c0, c1), s = v0.basis, v0.coeffs, (v1 if v1 is not None else v0.s)
        else:
            basis, c0, c1 = v0.basis, v0.coeffs, v1.coeffs
    else:
        c0, c1 = v0, v1
    w = basis.kappa + 1.0
    return 0.5 * float(np.sum(w ** s * np.abs(c0) ** 2) + np.sum(w ** (s - 1) * np.abs(c1) ** 2))


def energy_c(v0, v1, c_grid, basis):
    """E_c = (1/2)(|v1|^2 + |grad v0|^2 + int c |v0|^2)."""
    u = basis.to_grid(v0)
    pot = float(np.real(np.sum(c_grid * np.abs(u) ** 2))) * basis.area / basis.N ** 2
    return 0.5 * (float(np.sum(np.abs(v1) ** 2)) + float(np.sum(basis.kappa * np.abs(v0) ** 2)) + pot)


@dataclass
class Trajectory:
    times: np.ndarray
    v0: np.ndarray
    v1: np.ndarray
    basis: SpectralBasis
    dt: float
    meta: dict = field(default_factory=dict)

    def energy(self, s=1.0):
        return np.array([energy(a, b, s, self.basis) for a, b in zip(self.v0, self.v1)])


def _save_plan(T, dt, n_save):
    nsteps = int(round(T / dt))
    if nsteps < 1 or abs(nsteps * dt - T) > 1e-9 * max(1.0, T):
        raise InvalidInputError("T must be a positive integer multiple of dt")
    n_save = min(max(2, n_save), nsteps + 1)
    save = np.unique(np.round(np.linspace(0, nsteps, n_save)).astype(int))
    return nsteps, save


def solve_potential(basis, v0, v1, c_grid, T, dt, n_save=101, check=True) -> Trajectory:
    """Velocity Verlet for u'' - Delta u + c u = 0 (c on the collocation grid)."""
    c_grid = _check_grid(basis, np.broadcast_to(np.asarray(c_grid, float), (basis.N, basis.N)))
    if dt > 0.5 / basis.lam_max:
        raise StabilityError(f"dt={dt:g} exceeds 0.5/lambda_max={0.5 / basis.lam_max:g}")
    nsteps, save = _save_plan(T, dt, n_save)
    kap = basis.kappa
    const = float(c_grid.flat[0]) if np.all(c_grid == c_grid.flat[0]) else None

    def acc(u):
        if const is not None:
            return -(kap + const) * u
        return -kap * u - basis.from_grid(c_grid * basis.to_grid(u))

    u = np.array(v0, dtype=complex)
    p = np.array(v1, dtype=complex)
    a = acc(u)
    nonneg = bool(np.all(c_grid >= 0))
    e0 = energy_c(u, p, c_grid, basis) if (check and nonneg) else None
    out0, out1, times = [], [], []
    j = 0
    check_every = max(1, nsteps // 50)
    for n in range(nsteps + 1):
        if j < len(save) and n == save[j]:
            out0.append(u.copy())
            out1.append(p.copy())
            times.append(n * dt)
            j += 1
        if n == nsteps:
            break
        u = u + dt * p + 0.5 * dt * dt * a
        a_new = acc(u)
        p = p + 0.5 * dt * (a + a_new)
        a = a_new
        if e0 is not None and n % check_every == 0:
            e = energy_c(u, p, c_grid, basis)
            if e > 10.0 * max(e0, 1e-300) or not np.isfinite(e):
                raise StabilityError(f"energy grew by {e / e0:.3g} at t={n * dt:g}")
    return Trajectory(np.array(times), np.array(out0), np.array(out1), basis, dt)


def solve_damped(basis, v0, v1, b0_grid, T, dt, n_save=101) -> Trajectory:
    """Leapfrog for u'' + (-Delta + 1) u + b0 u' = 0, damping by implicit
    midpoint (pointwise on the grid):

        u^{n+1} = [2u^n - u^{n-1} - dt^2 A u^n + (dt/2) b0 u^{n-1}] / (1 + dt b0 / 2)
    """
    b0_grid = _check_grid(basis, np.broadcast_to(np.asarray(b0_grid, float), (basis.N, basis.N)))
    if np.any(b0_grid < 0):
        raise InvalidInputError("damping must be nonnegative")
    if dt > 0.5 / basis.lam_max:
        raise StabilityError(f"dt={dt:g} exceeds 0.5/lambda_max={0.5 / basis.lam_max:g}")
    nsteps, save = _save_plan(T, dt, n_save)
    A = basis.kappa + 1.0
    const = float(b0_grid.flat[0]) if np.all(b0_grid == b0_grid.flat[0]) else None

    def damp(x):
        return const * x if const is not None else basis.from_grid(b0_grid * basis.to_grid(x))

    def solve_implicit(rhs):
        if const is not None:
            return rhs / (1.0 + 0.5 * dt * const)
        return basis.from_grid(basis.to_grid(rhs) / (1.0 + 0.5 * dt * b0_grid))

    u_prev = np.array(v0, dtype=complex)
    p0 = np.array(v1, dtype=complex)
    u = u_prev + dt * p0 + 0.5 * dt * dt * (-A * u_prev - damp(p0))
    out0, out1, times = [u_prev.copy()], [p0.copy()], [0.0]
    j = 1
    e_start = energy(u_prev, p0, 1.0, basis)
    for n in range(1, nsteps + 1):
        u_next = solve_implicit(2 * u - u_prev - dt * dt * A * u + 0.5 * dt * damp(u_prev))
        if j < len(save) and n == save[j]:
            vel = (u_next - u_prev) / (2 * dt)
            out0.append(u.copy())
            out1.append(vel)
            times.append(n * dt)
            j += 1
            e = energy(u, vel, 1.0, basis)
            if not np.isfinite(e) or e > 10.0 * max(e_start, 1e-300):
                raise StabilityError(f"damped energy grew at t={n * dt:g}")
        u_prev, u = u, u_next
    return Trajectory(np.array(times), np.array(out0), np.array(out1), basis, dt)


def _min_image(basis, y, y0):
    d = y - np.asarray(y0)
    L = np.asarray(basis.periods)
    return d - L * np.round(d / L)


def beam_profile(r, radius=0.2):
    """Cutoff psi: 1 for r <= radius/2, 0 for r >= radius."""
    return 1.0 - smooth_step((r - 0.5 * radius) / (0.5 * radius))


def gaussian_beam(basis, x0, eta0, k, s=0.0, radius=0.2):
    """H^s-normalised Gaussian beam concentrating at (x0, eta0).

    w(y) = exp(2 pi i k [(y - y0).eta + i |y - y0|^2]) psi(|y - y0|), with k in
    Fourier-mode units so that the beam sits at mode k * eta.
    """
    eta = np.asarray(eta0, float)
    eta = eta / np.linalg.norm(eta)
    if k < 4:
        raise InvalidInputError("beam concentration k must be >= 4")
    if k > basis.K_max / 2:
        raise ResolutionError(f"beam k={k} needs K_max >= {2 * k}")
    y = basis.grid_points()
    d = _min_image(basis, y, x0)
    r2 = np.sum(d * d, axis=-1)
    w = np.exp(TWO_PI * 1j * k * (d @ eta) - TWO_PI * k * r2) * beam_profile(np.sqrt(r2), radius)
    c = basis.from_grid(w) * (basis.kappa + 1.0) ** (-0.5 * s)
    return c / hs_norm(basis, c, s)


def beam_concentration(basis, c, eta0, k, s=0.0, angle=np.pi / 8):
    """Fraction of H^s mass within ``angle`` of eta0 and |k_mode| in [k/2, 2k]."""
    eta = np.asarray(eta0, float) / np.linalg.norm(eta0)
    kk = np.stack([basis.k1, basis.k2], axis=-1).astype(float)
    r = np.linalg.norm(kk, axis=-1)
    cosang = np.where(r > 0, (kk @ eta) / np.maximum(r, 1e-300), -1.0)
    sel = (cosang >= math.cos(angle)) & (r >= k / 2) & (r <= 2 * k)
    w = (basis.kappa + 1.0) ** s * np.abs(c) ** 2
    return float(np.sum(w[sel]) / np.sum(w))


def shell_project(basis, pair, kappa):
    """Zero every mode with kappa_k <= kappa (projection onto F_kappa)."""
    mask = basis.kappa > kappa
    return np.asarray(pair) * mask


def low_project(basis, pair, kappa):
    """Pi_kappa: keep only modes with kappa_k <= kappa."""
    return np.asarray(pair) * (basis.kappa <= kappa)


def shell_member(basis, pair, kappa):
    return bool(np.all(np.asarray(pair)[..., basis.kappa <= kappa] == 0))


def growth_rate(r, T=None, dt=None, K_max=1):
    """Exponential growth rate of sqrt(E_1) for c == -r, started from the
    constant mode (a least-squares slope over the second half of [0, T]).

    The mode solves u'' = r u, so the rate tends to sqrt(r); E_1 itself
    grows at twice that rate.
    """
    if r <= 0:
        raise InvalidInputError("r must be positive")
    sr = math.sqrt(r)
    if T is None:
        T = min(10.0, 30.0 / sr)
    if dt is None:
        dt = min(1e-3, 0.01 / sr)
    n = int(round(T / dt))
    T = n * dt
    basis = SpectralBasis(K_max)
    v0 = basis.unit_mode((0, 0))
    traj = solve_potential(basis, v0, np.zeros_like(v0), np.full((basis.N, basis.N), -float(r)), T, dt,
                           n_save=201, check=False)
    e = traj.energy(1.0)
    half = traj.times >= 0.5 * T
    slope = np.polyfit(traj.times[half], 0.5 * np.log(e[half]), 1)[0]
    return float(slope), T, dt
