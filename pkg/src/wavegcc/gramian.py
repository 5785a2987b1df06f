"""Observability Gramian of the Klein-Gordon equation on the flat torus.

Coordinates.  A split state V = (v+, v-) is written in the H^s-orthonormal
basis ``f_{sigma,k} = Lambda^{-s} e_k`` of each slot, so a coordinate vector
``y`` has shape (2, n, n) (slot, mode) and |y|_2^2 = E_s(V).  The solution is
``v(t) = e^{it Lambda} v+ + e^{-it Lambda} v-`` and

    G[(s,k),(s',l)] = (k^2+1)^{-s/2} (l^2+1)^{-s/2} (b e_l, b e_k)_{H^s}
                      * int_0^T exp(i (s' lam_l - s lam_k) t) dt

(``k^2`` standing for kappa_k) so that ``y^* G y = int_0^T |b v(t)|^2_{H^s} dt``.
Products b v are formed on the collocation grid and the H^s norm of b v is
taken over every grid mode.

Time integrals use Gauss-Legendre nodes (``quadrature='gauss'``), the exact
exponential integrals (``'exact'``, dense only) or composite Simpson.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.integrate import simpson
from scipy.sparse.linalg import LinearOperator, cg, lobpcg
from scipy.special import roots_legendre

from .errors import (
    EigensolverError,
    IllConditionedError,
    InconsistencyError,
    InvalidInputError,
    ResolutionError,
)
from .geometry import FlatTorus2, PhasePoint
from .regions import ObservationFunction, evaluate
from .spectral import (
    SpectralBasis,
    free_solution,
    gaussian_beam,
    hs_norm,
    solve_potential,
    split_sigma,
    unsplit_sigma,
)

DENSE_MAX = 5000
NODE_CHUNK = 8


def gauss_nodes(T, n):
    x, w = roots_legendre(n)
    return 0.5 * T * (x + 1.0), 0.5 * T * w


def auto_n_time(T, lam_max):
    """Gauss-Legendre count integrating exp(i w t), |w| <= 2 lam_max, on
    [0, T] to about machine precision."""
    return max(64, int(math.ceil(0.6 * lam_max * T)) + 24)


def time_rule(T, n_time, kind="gauss"):
    if kind == "gauss":
        return gauss_nodes(T, n_time)
    if kind == "simpson":
        n = n_time + 1 if n_time % 2 == 0 else n_time
        t = np.linspace(0.0, T, n)
        w = simpson(np.eye(n), x=t, axis=0) if n < 4000 else _simpson_weights(n, T)
        return t, w
    raise InvalidInputError(f"unknown quadrature {kind!r}")


def _simpson_weights(n, T):
    h = T / (n - 1)
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * h / 3.0


def exp_integral(omega, T):
    """int_0^T exp(i omega t) dt, stable near omega = 0."""
    omega = np.asarray(omega, float)
    x = omega * T
    small = np.abs(x) < 1e-4
    safe = np.where(small, 1.0, omega)
    big = (np.exp(1j * x) - 1.0) / (1j * safe)
    series = T * (1.0 + 0.5j * x - x * x / 6.0 - 1j * x ** 3 / 24.0)
    return np.where(small, series, big)


def sample_observation(b, basis, M=None):
    """b on the collocation grid of ``basis``."""
    if isinstance(b, ObservationFunction):
        M = M or FlatTorus2(basis.periods)
        return evaluate(b, M, basis.grid_points())
    if callable(b):
        return basis.sample(b)
    g = np.broadcast_to(np.asarray(b, float), (basis.N, basis.N)).copy()
    return g


class _Observation:
    """Grid data for the maps v -> b v -> H^s."""

    def __init__(self, basis, b_grid, s):
        self.basis = basis
        self.b = np.asarray(b_grid, float)
        self.s = float(s)
        self.b2 = self.b * self.b
        self.w_full = (basis.grid_kappa + 1.0) ** self.s
        self.D = (basis.kappa + 1.0) ** (-0.5 * self.s)
        # spectral tail of b on the grid (resolution diagnostic)
        bh = np.abs(basis.grid_fft(self.b))
        N = basis.N
        ring = np.zeros((N, N), bool)
        ring[N // 2 - 2:N // 2 + 3, :] = True
        ring[:, N // 2 - 2:N // 2 + 3] = True
        self.tail = float(bh[ring].max() / max(bh.max(), 1e-300))

    def apply_B(self, c):
        """P_K( b Lambda^{2s} (b v) ) on coefficient arrays (batched)."""
        bs = self.basis
        g = bs.to_grid(c)
        if self.s == 0.0:
            return bs.from_grid(self.b2 * g)
        F = bs.grid_fft(self.b * g) * self.w_full
        return bs.from_grid(self.b * bs.grid_ifft(F))

    def obs_norm2(self, c):
        """|b v|^2_{H^s} over all grid modes (batched over leading axes)."""
        F = self.basis.grid_fft(self.b * self.basis.to_grid(c))
        return np.sum(self.w_full * np.abs(F) ** 2, axis=(-2, -1))

    def W_matrix(self):
        """(b e_l, b e_k)_{H^s} as an (n^2, n^2) matrix."""
        bs = self.basis
        n = bs.n
        K = bs.K_max
        if self.s == 0.0:
            beta = bs.grid_fft(self.b2) / math.sqrt(bs.area)
            dk1 = (bs.k1.ravel()[:, None] - bs.k1.ravel()[None, :]) % bs.N
            dk2 = (bs.k2.ravel()[:, None] - bs.k2.ravel()[None, :]) % bs.N
            return beta[dk1, dk2]
        cols = np.zeros((n * n, n, n), complex)
        cols[np.arange(n * n), (bs.k1 + K).ravel(), (bs.k2 + K).ravel()] = 1.0
        F = np.empty((n * n, bs.N * bs.N), complex)
        for i in range(0, n * n, 256):
            F[i:i + 256] = bs.grid_fft(self.b * bs.to_grid(cols[i:i + 256])).reshape(-1, bs.N * bs.N)
        return (np.conj(F) * self.w_full.ravel()) @ F.T

    def W_diag(self):
        bs = self.basis
        if self.s == 0.0:
            return np.full(bs.shape, float(np.mean(self.b2)))
        bh2 = np.abs(bs.grid_fft(self.b)) ** 2
        # sum_m w_m |bh_{m-k}|^2 = cyclic correlation evaluated at k
        corr = np.fft.ifft2(np.fft.fft2(self.w_full) * np.conj(np.fft.fft2(bh2))).real
        i = np.arange(-bs.K_max, bs.K_max + 1) % bs.N
        return corr[i[:, None], i[None, :]]


@dataclass
class GramianMatrix:
    basis: SpectralBasis
    T: float
    s: float
    dense: np.ndarray | None
    operator: LinearOperator
    diagonal: np.ndarray
    meta: dict = field(default_factory=dict)
    obs: object = None
    nodes: tuple = None

    @property
    def dim(self):
        return 2 * self.basis.dim

    def matvec(self, y):
        y = np.asarray(y, complex).reshape(self.dim, -1)
        if self.dense is not None:
            out = self.dense @ y
        else:
            out = self.operator.matmat(y)
        return out

    def quadratic(self, y):
        y = np.asarray(y, complex).ravel()
        return float(np.real(np.vdot(y, self.matvec(y).ravel())))

    def hermitian_residual(self):
        if self.dense is None:
            rng = np.random.default_rng(0)
            x = rng.standard_normal((self.dim, 2)) + 1j * rng.standard_normal((self.dim, 2))
            a = np.vdot(x[:, 0], self.matvec(x[:, 1]).ravel())
            b = np.vdot(self.matvec(x[:, 0]).ravel(), x[:, 1])
            return abs(a - b) / max(abs(a), 1e-300)
        G = self.dense
        return float(np.linalg.norm(G - G.conj().T) / max(np.linalg.norm(G), 1e-300))


def _phases(basis, t):
    return np.exp(1j * np.asarray(t)[:, None, None] * basis.lam[None])


def _free_matvec(obs, nodes, weights, Y):
    """G applied to a batch Y of shape (m, 2, n, n)."""
    bs = obs.basis
    D = obs.D
    out = np.zeros_like(Y)
    Yp = D * Y[:, 0]
    Ym = D * Y[:, 1]
    for i in range(0, len(nodes), NODE_CHUNK):
        t = nodes[i:i + NODE_CHUNK]
        w = weights[i:i + NODE_CHUNK]
        E = _phases(bs, t)  # (c, n, n)
        V = E[:, None] * Yp[None] + np.conj(E)[:, None] * Ym[None]  # (c, m, n, n)
        R = obs.apply_B(V) * w[:, None, None, None]
        out[:, 0] += np.sum(np.conj(E)[:, None] * R, axis=0)
        out[:, 1] += np.sum(E[:, None] * R, axis=0)
    return out * D


def _make_operator(obs, nodes, weights, dim, shape):
    def mm(X):
        X = np.asarray(X, complex)
        one = X.ndim == 1
        Xb = X.reshape(dim, -1).T.reshape((-1,) + shape)
        R = _free_matvec(obs, nodes, weights, Xb).reshape(Xb.shape[0], dim).T
        return R.ravel() if one else R

    return LinearOperator((dim, dim), matvec=mm, rmatvec=mm, matmat=mm, dtype=complex)


def _dense_gramian(obs, T, nodes, weights, quadrature):
    bs = obs.basis
    lam = bs.lam.ravel()
    D = obs.D.ravel()
    W = obs.W_matrix() * np.outer(D, D)
    m = lam.size
    G = np.empty((2 * m, 2 * m), complex)
    for a, sa in enumerate((1, -1)):
        for c, sc in enumerate((1, -1)):
            if quadrature == "exact":
                E = exp_integral(sc * lam[None, :] - sa * lam[:, None], T)
            else:
                Pa = np.exp(-1j * sa * np.outer(nodes, lam))
                Pc = np.exp(1j * sc * np.outer(nodes, lam))
                E = (Pa.T * weights) @ Pc
            G[a * m:(a + 1) * m, c * m:(c + 1) * m] = W * E
    return 0.5 * (G + G.conj().T)


def assemble_gramian(b, T, s=0.0, K_max=8, n_time=None, periods=(1.0, 1.0),
                     quadrature="gauss", dense=None, M=None, max_tail=1e-2) -> GramianMatrix:
    """Observability Gramian on the H^s-orthonormal split basis.

    ``dense=None`` assembles a dense matrix when 2 (2K+1)^2 <= 5000 and a
    matrix-free operator otherwise.
    """
    if T < 0:
        raise InvalidInputError("T must be >= 0")
    basis = SpectralBasis(K_max, periods)
    obs = _Observation(basis, sample_observation(b, basis, M), s)
    if obs.tail > max_tail:
        raise ResolutionError(
            f"b has relative spectral content {obs.tail:.2e} at the grid Nyquist band; raise K_max"
        )
    dim = 2 * basis.dim
    if dense is None:
        dense = dim <= DENSE_MAX
    if n_time is None:
        n_time = auto_n_time(T, basis.lam_max)
    if quadrature == "exact" and not dense:
        raise InvalidInputError("exact time integrals need dense assembly")
    if n_time < 64 and quadrature != "exact":
        raise InvalidInputError("n_time must be >= 64")
    nodes, weights = time_rule(T, n_time, quadrature) if quadrature != "exact" else (None, None)
    diag = np.concatenate([(obs.D ** 2 * obs.W_diag()).ravel() * T] * 2).real
    meta = {"K_max": K_max, "quadrature": quadrature, "n_time": n_time if quadrature != "exact" else 0,
            "grid": basis.N, "b_tail": obs.tail}
    if T == 0:
        Gd = np.zeros((dim, dim), complex) if dense else None
        op = LinearOperator((dim, dim), matvec=lambda x: np.zeros_like(x), dtype=complex)
        return GramianMatrix(basis, 0.0, s, Gd, op, np.zeros(dim), meta, obs, (np.zeros(0), np.zeros(0)))
    shape = (2,) + basis.shape
    if dense:
        Gd = _dense_gramian(obs, T, nodes, weights, quadrature)
        op = LinearOperator((dim, dim), matvec=lambda x: Gd @ x, matmat=lambda X: Gd @ X,
                            rmatvec=lambda x: Gd @ x, dtype=complex)
        nodes_out = (nodes, weights) if nodes is not None else gauss_nodes(T, auto_n_time(T, basis.lam_max))
        return GramianMatrix(basis, T, s, Gd, op, diag, meta, obs, nodes_out)
    op = _make_operator(obs, nodes, weights, dim, shape)
    return GramianMatrix(basis, T, s, None, op, diag, meta, obs, (nodes, weights))


def direct_quadratic_form(b, T, s, basis, y, t, w, M=None):
    """int_0^T |b v(t)|_{H^s}^2 dt with a given time rule, computed directly
    from the free solution (oracle for the Gramian)."""
    obs = _Observation(basis, sample_observation(b, basis, M), s)
    y = np.asarray(y, complex).reshape((2,) + basis.shape)
    vp = obs.D * y[0]
    vm = obs.D * y[1]
    total = 0.0
    for i in range(0, len(t), 32):
        E = _phases(basis, t[i:i + 32])
        V = E * vp + np.conj(E) * vm
        total += float(np.sum(w[i:i + 32] * obs.obs_norm2(V)))
    return total


# -- eigenvalues --------------------------------------------------------------


def shell_mask(basis, kappa):
    if kappa is None:
        return np.ones(2 * basis.dim, bool)
    m = (basis.kappa > kappa).ravel()
    return np.concatenate([m, m])


@dataclass
class EigResult:
    value: float
    vector: np.ndarray
    converged: bool
    method: str
    residual: float = 0.0


def min_eig(G: GramianMatrix, shell=None, x0=None, tol=1e-8, maxiter=200, block=6, seed=0) -> EigResult:
    """Smallest eigenpair, optionally restricted to modes with kappa > shell.

    Dense for dimension <= 5000; otherwise LOBPCG seeded with ``x0`` (the
    returned Ritz value never exceeds the Rayleigh quotient of x0).  On
    non-convergence raises EigensolverError carrying the best Ritz pair.
    """
    mask = shell_mask(G.basis, shell)
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise InvalidInputError("shell removes every mode")
    if G.dense is not None:
        A = G.dense[np.ix_(idx, idx)]
        vals, vecs = sla.eigh(A, subset_by_index=[0, 0])
        v = np.zeros(G.dim, complex)
        v[idx] = vecs[:, 0]
        return EigResult(float(vals[0]), v, True, "dense")
    m = idx.size

    def mm(X):
        X = np.asarray(X, complex).reshape(m, -1)
        full = np.zeros((G.dim, X.shape[1]), complex)
        full[idx] = X
        return G.operator.matmat(full)[idx]

    A = LinearOperator((m, m), matvec=mm, matmat=mm, dtype=complex)
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((m, block)) + 1j * rng.standard_normal((m, block))
    X *= 1e-3
    if x0 is not None:
        X[:, 0] = np.asarray(x0, complex).ravel()[idx]
    X, _ = np.linalg.qr(X)
    # precondition towards the low band: damp modes with large diagonal
    d = G.diagonal[idx]
    Minv = LinearOperator((m, m), matvec=lambda x: x.reshape(m, -1) / d[:, None] * np.mean(d),
                          matmat=lambda x: x / d[:, None] * np.mean(d), dtype=complex)
    vals, vecs, rnorms = lobpcg(A, X, M=Minv, largest=False, tol=tol, maxiter=maxiter,
                                retResidualNormsHistory=True)
    j = int(np.argmin(vals))
    v = np.zeros(G.dim, complex)
    v[idx] = vecs[:, j]
    res = float(np.linalg.norm(mm(vecs[:, j:j + 1]).ravel() - vals[j] * vecs[:, j]))
    if x0 is not None:
        # never report worse than the seed Rayleigh quotient
        xs = np.asarray(x0, complex).ravel()[idx]
        xs = xs / np.linalg.norm(xs)
        rq = float(np.real(np.vdot(xs, mm(xs[:, None]).ravel())))
        if rq < vals[j]:
            v = np.zeros(G.dim, complex)
            v[idx] = xs
            vals[j] = rq
    conv = res <= tol * max(1.0, abs(float(vals[j]))) * 10
    result = EigResult(float(np.real(vals[j])), v, conv, "lobpcg", res)
    if not conv:
        raise EigensolverError(
            f"LOBPCG not converged (residual {res:.2e})", value=result.value, vector=v
        )
    return result


def min_eig_upper(G, shell=None, x0=None, **kw) -> EigResult:
    """min_eig, falling back to the best Ritz pair (an upper bound on the
    smallest eigenvalue) when the iterative solver does not converge."""
    try:
        return min_eig(G, shell, x0, **kw)
    except EigensolverError as e:
        return EigResult(float(e.value), e.vector, False, "lobpcg-ritz")


# -- lower bound / beams ---------------------------------------------------------


def beam_coordinates(basis, rho, k, s, slot=-1):
    """Split coordinates of a Gaussian beam placed in one slot.

    With v(t) = e^{it Lambda} v+ + e^{-it Lambda} v-, a beam at (x0, xi0) in
    the v- slot travels along phi_t(x0, xi0); in the v+ slot it travels
    along phi_{-t}.
    """
    beta = gaussian_beam(basis, rho.x, rho.xi, k, s)
    y = np.zeros((2,) + basis.shape, complex)
    y[0 if slot > 0 else 1] = beta * (basis.kappa + 1.0) ** (0.5 * s)
    return y


@dataclass
class ObservabilityReport:
    T: float
    lambda_min: float
    C_obs_discrete: float
    K_of_T: float
    average_at_rho: float
    beam_rayleigh: float
    beam_relative_error: float
    tol_beam: float
    lower_bound_check: bool
    eig_converged: bool
    eig_method: str
    rho: PhasePoint
    extra: dict = field(default_factory=dict)


def observability_report(b, T, s=0.0, K_max=16, beam_k=None, M=None, K_value=None,
                         nx=24, na=32, n_time=None, G=None, tol_beam=None, **eig_kw):
    """lambda_min(G_T) against K(T) with the Gaussian-beam Rayleigh quotient
    at the minimiser rho* (discrete form of the lower bound c_obs >= 1/K)."""
    from .control_times import K_of_T, geodesic_average

    M = M or FlatTorus2()
    if T <= 0:
        raise InvalidInputError("T must be positive")
    kres = K_value if K_value is not None else K_of_T(M, b, T, nx, na)
    rho = kres.rho
    avg = geodesic_average(M, b, rho, T)
    if G is None:
        G = assemble_gramian(b, T, s, K_max, n_time, M.periods, M=M)
    if beam_k is None:
        beam_k = max(4, K_max // 2)
    y = beam_coordinates(G.basis, rho, beam_k, s)
    R = G.quadratic(y)
    rel = abs(R - avg) / max(avg, 1e-300)
    eig = min_eig_upper(G, x0=y, **eig_kw)
    if tol_beam is None:
        tol_beam = 1.5 * abs(R - avg)
    ok = eig.value <= kres.value + tol_beam
    return ObservabilityReport(
        T, eig.value, 1.0 / eig.value if eig.value > 0 else math.inf, kres.value, avg, R, rel,
        tol_beam, bool(ok), eig.converged, eig.method, rho,
        {"beam_k": beam_k, "K_max": K_max, "hermitian_residual": G.hermitian_residual()},
    )


@dataclass
class ShellReport:
    kappa: float
    lambda_min_shell: float
    ratio_to_K: float
    C0_fit: float


def shell_observability(b, T, s, K_max, kappa, K_value, G=None, n_random=64, seed=0, M=None):
    """lambda_min on F_kappa divided by K(T), and an empirical C0 from
    K(T) E_s - Q(V) = C0 E_{s-1/2} over random shell states."""
    if K_value <= 0:
        raise InvalidInputError("K(T) must be positive")
    if G is None:
        G = assemble_gramian(b, T, s, K_max, M=M)
    eig = min_eig_upper(G, shell=kappa)
    basis = G.basis
    mask = shell_mask(basis, kappa)
    rng = np.random.default_rng(seed)
    Y = (rng.standard_normal((G.dim, n_random)) + 1j * rng.standard_normal((G.dim, n_random))) * mask[:, None]
    decay = np.concatenate([((basis.kappa + 1.0) ** -0.75).ravel()] * 2)
    Y = Y * decay[:, None]
    Q = np.real(np.sum(np.conj(Y) * G.matvec(Y), axis=0))
    Es = np.sum(np.abs(Y) ** 2, axis=0)
    w = np.concatenate([((basis.kappa + 1.0) ** -0.5).ravel()] * 2)
    Eh = np.sum(w[:, None] * np.abs(Y) ** 2, axis=0)
    C0 = float(np.max((K_value * Es - Q) / Eh))
    return ShellReport(kappa, eig.value, eig.value / K_value, C0)


# -- HUM -----------------------------------------------------------------------


@dataclass
class HUMResult:
    control_times: np.ndarray
    control: np.ndarray
    weights: np.ndarray
    y: np.ndarray
    initial_E0: float
    final_E0: float
    cost: float
    iterations: int
    uT: np.ndarray
    utT: np.ndarray


def hum_data(basis, u0, u1, s):
    """Right-hand side d of G y = d for steering (u0, u1) to rest."""
    lam = basis.lam
    D = (basis.kappa + 1.0) ** (-0.5 * s)
    ap = -u1 - 1j * lam * u0
    am = -u1 + 1j * lam * u0
    return np.stack([D * ap, D * am])


def hum_control(u0, u1, b, T, s=0.0, tol=1e-8, K_max=None, G=None, M=None, keep_control=False):
    """HUM control steering (u0, u1) to rest at time T.

    Solves G y = d by preconditioned conjugate gradient; the control is
    f(t) = Lambda^{2s}(b v(t)) with v the adjoint solution of y, and the
    controlled equation u'' + (-Delta + 1) u = b f is integrated exactly
    (Duhamel on the Gramian time nodes).
    """
    if G is None:
        if K_max is None:
            raise InvalidInputError("give G or K_max")
        G = assemble_gramian(b, T, s, K_max, M=M)
    basis = G.basis
    u0 = np.asarray(u0, complex)
    u1 = np.asarray(u1, complex)
    d = hum_data(basis, u0, u1, s).ravel()
    E0_init = 0.5 * float(np.sum(np.abs(u0) ** 2) + np.sum(np.abs(u1) ** 2 / (basis.kappa + 1.0)))
    nodes, weights = G.nodes
    if not np.any(d):
        z = np.zeros_like(u0)
        return HUMResult(nodes, np.zeros((0,) + basis.shape), weights, np.zeros(G.dim, complex),
                         E0_init, 0.0, 0.0, 0, z, z)
    dg = np.maximum(G.diagonal, 1e-300)
    P = LinearOperator((G.dim, G.dim), matvec=lambda x: x / dg, dtype=complex)
    it = [0]

    def cb(_):
        it[0] += 1

    A = LinearOperator((G.dim, G.dim), matvec=lambda x: G.matvec(x).ravel(), dtype=complex)
    y, info = cg(A, d, rtol=tol, atol=0.0, maxiter=10 * G.dim, M=P, callback=cb)
    if info != 0:
        est = min_eig_upper(G, maxiter=50).value
        raise IllConditionedError(f"CG did not converge in {10 * G.dim} iterations", lambda_min=est)
    Y = y.reshape((2,) + basis.shape)
    obs = G.obs
    lam = basis.lam
    uT, utT = free_solution(basis, u0, u1, T)
    ctrl = []
    for i in range(0, len(nodes), NODE_CHUNK):
        t = nodes[i:i + NODE_CHUNK]
        w = weights[i:i + NODE_CHUNK]
        E = _phases(basis, t)
        V = E * (obs.D * Y[0]) + np.conj(E) * (obs.D * Y[1])
        g = obs.apply_B(V)  # P_K(b f), f = Lambda^{2s}(b v)
        if keep_control:
            ctrl.append(g)
        sn = np.sin((T - t)[:, None, None] * lam)
        cs = np.cos((T - t)[:, None, None] * lam)
        uT = uT + np.sum(w[:, None, None] * sn / lam * g, axis=0)
        utT = utT + np.sum(w[:, None, None] * cs * g, axis=0)
    E0_final = 0.5 * float(np.sum(np.abs(uT) ** 2) + np.sum(np.abs(utT) ** 2 / (basis.kappa + 1.0)))
    cost = float(np.real(np.vdot(y, G.matvec(y).ravel())))
    control = np.concatenate(ctrl) if ctrl else np.zeros((0,) + basis.shape)
    return HUMResult(nodes, control, weights, y, E0_init, E0_final, cost, it[0], uT, utT)


def hum_cost_identity(basis, u0, u1, T, s=0.0):
    """Per-mode closed-form HUM cost for b == 1 (each mode a 2x2 system)."""
    lam = basis.lam.ravel()
    d = hum_data(basis, u0, u1, s).reshape(2, -1)
    off = exp_integral(-2.0 * lam, T)  # (+,-) entry
    total = 0.0
    for j in range(lam.size):
        A = np.array([[T, off[j]], [np.conj(off[j]), T]])
        dj = d[:, j]
        if not np.any(dj):
            continue
        yj = np.linalg.solve(A, dj)
        total += float(np.real(np.vdot(yj, A @ yj)))
    return total


def identity_lambda_min(basis, T):
    """Exact lambda_min of the b == 1 Gramian: T - max_k |sin(T lam_k)| / lam_k."""
    lam = basis.lam
    return float(np.min(T - np.abs(np.sin(T * lam)) / lam))


@dataclass
class CostRow:
    T: float
    K_of_T: float
    lambda_min: float
    C_obs_discrete: float
    hum_cost: float
    log_C_obs: float
    inv_K: float
    lower_bound_ok: bool


def cost_scan(b, s, K_max, T_list, M=None, nx=24, na=32, seed=0, tol=None, data_modes=4):
    """(T, K(T), lambda_min, 1/lambda_min, HUM cost) over T_list; checks the
    lower bound at each T and monotonicity of lambda_min."""
    from .control_times import K_of_T

    M = M or FlatTorus2()
    rng = np.random.default_rng(seed)
    basis = SpectralBasis(K_max, M.periods)
    u0, u1 = random_smooth_data(basis, data_modes, rng)
    rows = []
    for T in sorted(T_list):
        kres = K_of_T(M, b, T, nx, na)
        G = assemble_gramian(b, T, s, K_max, M=M, quadrature="exact" if 2 * basis.dim <= DENSE_MAX else "gauss")
        if G.dense is None:
            G.nodes = gauss_nodes(T, auto_n_time(T, basis.lam_max))
        y = beam_coordinates(basis, kres.rho, max(4, K_max // 2), s) if K_max >= 8 else None
        eig = min_eig_upper(G, x0=y)
        if G.dense is not None and G.meta["quadrature"] == "exact":
            G.nodes = gauss_nodes(T, auto_n_time(T, basis.lam_max))
        try:
            cost = hum_control(u0, u1, b, T, s, G=G).cost
        except IllConditionedError:
            cost = math.inf
        lim = eig.value
        ok = lim <= kres.value + (tol if tol is not None else 1e-8 + 0.1 * kres.value)
        rows.append(CostRow(T, kres.value, lim, 1.0 / lim if lim > 0 else math.inf, cost,
                            math.log(1.0 / lim) if lim > 0 else math.inf,
                            1.0 / kres.value if kres.value > 0 else math.inf, bool(ok)))
    mono = all(rows[i].lambda_min <= rows[i + 1].lambda_min * (1 + 1e-10) + 1e-14 for i in range(len(rows) - 1))
    return rows, mono


def random_smooth_data(basis, max_mode, rng):
    """Random (u0, u1) supported on modes |k|_inf <= max_mode."""
    mask = (np.abs(basis.k1) <= max_mode) & (np.abs(basis.k2) <= max_mode)
    u0 = (rng.standard_normal(basis.shape) + 1j * rng.standard_normal(basis.shape)) * mask
    u1 = (rng.standard_normal(basis.shape) + 1j * rng.standard_normal(basis.shape)) * mask
    return u0, u1


# -- potential Gramian -----------------------------------------------------------


def assemble_gramian_potential(b, c, T, s=1.0, K_max=4, dt=1e-3, M=None, n_save=None):
    """Gramian of |b grad v|^2 + |b v|^2 along solve_potential trajectories,
    in the H^s-orthonormal split basis (s = 1 for the energy space)."""
    basis = SpectralBasis(K_max, (M or FlatTorus2()).periods)
    bg = sample_observation(b, basis, M)
    cg_ = sample_observation(c, basis, M) if not np.isscalar(c) else np.full((basis.N, basis.N), float(c))
    nsteps = int(round(T / dt))
    if n_save is None:
        n_save = nsteps + 1 if nsteps % 2 == 0 else nsteps
        n_save = min(n_save, 2001)
        if (n_save - 1) and nsteps % (n_save - 1):
            n_save = nsteps + 1
    n = basis.dim
    D = ((basis.kappa + 1.0) ** (-0.5 * s)).ravel()
    cols = np.zeros((2 * n,) + basis.shape, complex)
    for j in range(2 * n):
        cols[j].flat[j % n] = D[j % n]
    vp = np.where(np.arange(2 * n)[:, None, None] < n, cols, 0)
    vm = np.where(np.arange(2 * n)[:, None, None] >= n, cols, 0)
    v0, v1 = unsplit_sigma(vp, vm, basis)
    traj = solve_potential(basis, v0, v1, cg_, T, dt, n_save=n_save, check=False)
    O = _observe_h1(basis, bg, traj.v0)  # (nt, 2n, 3, N, N)
    t = traj.times
    w = _simpson_weights(len(t), T) if len(t) % 2 == 1 else np.gradient(t)
    cell = basis.area / basis.N ** 2
    A = O.reshape(len(t), 2 * n, -1)
    G = np.zeros((2 * n, 2 * n), complex)
    for j in range(len(t)):
        G += w[j] * cell * (np.conj(A[j]) @ A[j].T)
    G = 0.5 * (G + G.conj().T)
    op = LinearOperator(G.shape, matvec=lambda x: G @ x, matmat=lambda X: G @ X, dtype=complex)
    return GramianMatrix(basis, T, s, G, op, np.real(np.diag(G)),
                         {"dt": dt, "observation": "|b grad v|^2 + |b v|^2"}, None, (t, w))


def _observe_h1(basis, bg, V):
    """Grid samples of (b d1 v, b d2 v, b v) for coefficient stacks V."""
    L1, L2 = basis.periods
    g0 = basis.to_grid(V)
    g1 = basis.to_grid(V * (2j * np.pi * basis.k1 / L1))
    g2 = basis.to_grid(V * (2j * np.pi * basis.k2 / L2))
    return np.stack([bg * g1, bg * g2, bg * g0], axis=-3)


def potential_quadratic_form(b, c, T, basis, y, dt, s=1.0, M=None, n_save=None):
    """Direct int |b grad v|^2 + |b v|^2 for one split coordinate vector."""
    bg = sample_observation(b, basis, M)
    cg_ = sample_observation(c, basis, M) if not np.isscalar(c) else np.full((basis.N, basis.N), float(c))
    D = (basis.kappa + 1.0) ** (-0.5 * s)
    y = np.asarray(y, complex).reshape((2,) + basis.shape)
    v0, v1 = unsplit_sigma(D * y[0], D * y[1], basis)
    nsteps = int(round(T / dt))
    traj = solve_potential(basis, v0, v1, cg_, T, dt, n_save=n_save or nsteps + 1, check=False)
    O = _observe_h1(basis, bg, traj.v0)
    t = traj.times
    w = _simpson_weights(len(t), T) if len(t) % 2 == 1 else np.gradient(t)
    vals = np.sum(np.abs(O) ** 2, axis=(-3, -2, -1)) * basis.area / basis.N ** 2
    return float(np.sum(w * vals))


# -- probes --------------------------------------------------------------------


@dataclass
class EgorovResult:
    numeric: float
    transported: float
    error: float


def egorov_probe(a, t, rho0, k, K_max, periods=(1.0, 1.0)) -> EgorovResult:
    """<e^{it Lambda} M_a e^{-it Lambda} beta_k, beta_k> against a(x0 + t xi/|xi|)."""
    basis = SpectralBasis(K_max, periods)
    beta = gaussian_beam(basis, rho0.x, rho0.xi, k, 0.0)
    ag = a if isinstance(a, np.ndarray) else basis.sample(a) if callable(a) else np.full((basis.N, basis.N), float(a))
    moved = np.exp(-1j * t * basis.lam) * beta
    num = np.vdot(moved, basis.from_grid(ag * basis.to_grid(moved)))
    M = FlatTorus2(periods)
    xt, _ = M.flow(np.asarray(rho0.x, float), np.asarray(rho0.xi, float), t)
    tr = float(a(xt[None, None])[0, 0]) if callable(a) else float(np.mean(ag))
    return EgorovResult(float(np.real(num)), tr, abs(float(np.real(num)) - tr))


@dataclass
class SmoothingResult:
    K_max: int
    off_diagonal_norm: float
    diagonal_norm: float


def inverse_exp_sum(x_min, x_max, eps=1e-8):
    """(c, a) with |1/x - sum c exp(-a x)| <= eps / x on [x_min, x_max]:
    trapezoid rule for 1/x = int exp(-x e^u) e^u du."""
    # the integrand is analytic in |Im u| < pi/2: error ~ exp(-pi^2 / h)
    h = math.pi ** 2 / math.log(1.0 / eps)
    lo = math.log(eps / x_max)
    hi = math.log(math.log(1.0 / eps) / x_min)
    u = lo + h * np.arange(int(math.ceil((hi - lo) / h)) + 1)
    return h * np.exp(u), np.exp(u)


def _smoothing_ops(basis, obs, T, n_diag=None):
    """Lambda R1 and Lambda R0 as operators on H^s-normalised coordinates.

    R1 has kernel W_jk I(lam_j + lam_k) with I(x) = (1 - e^{-iTx}) / (ix);
    1/x is replaced by a positive exponential sum, which keeps every term
    separable.  R0 (frequencies lam_j - lam_k) uses Gauss nodes."""
    lam = basis.lam
    D = obs.D
    dim = basis.dim
    shape = basis.shape
    c, a = inverse_exp_sum(float(lam[lam > 0].min()), 2.0 * basis.lam_max)
    F = np.exp(-1j * T * lam)
    nodes, weights = gauss_nodes(T, n_diag or auto_n_time(T, 0.5 * basis.lam_max))

    def W(V):
        return obs.apply_B(D * V) * D

    def batch(X):
        X = np.asarray(X, complex)
        return X.reshape(dim, -1).T.reshape((-1,) + shape), X.ndim == 1

    def unbatch(Y, one):
        R = Y.reshape(Y.shape[0], dim).T
        return R.ravel() if one else R

    def off(X, adjoint=False):
        Y, one = batch(X)
        if adjoint:
            Y = Y * lam
        G = np.conj(F) if adjoint else F
        out = np.zeros_like(Y)
        for i in range(0, len(c), NODE_CHUNK):
            E = np.exp(-a[i:i + NODE_CHUNK, None, None] * lam)[:, None]
            cc = c[i:i + NODE_CHUNK, None, None, None]
            out += np.sum(cc * E * W(E * Y[None]), axis=0)
            out -= G * np.sum(cc * E * W(E * (G * Y)[None]), axis=0)
        out = out * (1j if adjoint else -1j)
        if not adjoint:
            out = out * lam
        return unbatch(out, one)

    def diag(X, adjoint=False):
        Y, one = batch(X)
        if adjoint:
            Y = Y * lam
        out = np.zeros_like(Y)
        for i in range(0, len(nodes), NODE_CHUNK):
            E = _phases(basis, nodes[i:i + NODE_CHUNK])
            w = weights[i:i + NODE_CHUNK, None, None, None]
            # kernel exp(-it lam_j) W exp(+it lam_k) is its own adjoint pattern
            out += np.sum(w * np.conj(E)[:, None] * W(E[:, None] * Y[None]), axis=0)
        if not adjoint:
            out = out * lam
        return unbatch(out, one)

    def op(f):
        return LinearOperator((dim, dim), matvec=f, rmatvec=lambda v: f(v, True), matmat=f, dtype=complex)

    return op(off), op(diag)


def operator_norm(A, v0, tol=1e-6, max_steps=400):
    """Largest singular value of a LinearOperator by Golub-Kahan
    bidiagonalisation with full reorthogonalisation.  Stops when the Ritz
    residual beta_k |p_k| drops below tol * sigma."""
    V = [v0 / np.linalg.norm(v0)]
    U = []
    alpha, beta = [], []
    for _ in range(max_steps):
        u = A.matvec(V[-1])
        for w in U:
            u = u - np.vdot(w, u) * w
        a = np.linalg.norm(u)
        U.append(u / a)
        alpha.append(a)
        v = A.rmatvec(U[-1])
        for w in V:
            v = v - np.vdot(w, v) * w
        b = np.linalg.norm(v)
        beta.append(b)
        P, S, _ = np.linalg.svd(np.diag(alpha) + np.diag(beta[:-1], 1))
        if b * abs(P[-1, 0]) <= tol * S[0] or b == 0.0:
            return float(S[0])
        V.append(v / b)
    raise ResolutionError(f"operator norm did not converge in {max_steps} steps")


def _dense_smoothing(basis, obs, T):
    lam = basis.lam.ravel()
    D = obs.D.ravel()
    W = obs.W_matrix() * np.outer(D, D)
    off = lam[:, None] * W * exp_integral(-(lam[:, None] + lam[None, :]), T)
    dia = lam[:, None] * W * exp_integral(-(lam[:, None] - lam[None, :]), T)
    return off, dia


def smoothing_probe(b, T, s, K_max_list, periods=(1.0, 1.0), M=None, with_diagonal=True, seed=0):
    """Operator norm on H^s of Lambda int_0^T e^{-it Lambda} B e^{-it Lambda} dt
    (off-diagonal block) and of the diagonal-block contrast."""
    out = []
    prev = None
    for K in K_max_list:
        if prev is not None and K <= prev:
            raise InvalidInputError("K_max_list must be increasing")
        prev = K
        basis = SpectralBasis(K, periods)
        obs = _Observation(basis, sample_observation(b, basis, M), s)
        if basis.dim <= 2500:
            off, dia = _dense_smoothing(basis, obs, T)
            n_off = float(np.linalg.norm(off, 2))
            n_dia = float(np.linalg.norm(dia, 2)) if with_diagonal else float("nan")
        else:
            off, dia = _smoothing_ops(basis, obs, T)
            v0 = np.random.default_rng(seed).standard_normal(basis.dim) + 0j
            n_off = operator_norm(off, v0)
            n_dia = operator_norm(dia, v0) if with_diagonal else float("nan")
        out.append(SmoothingResult(K, n_off, n_dia))
    return out


# -- serialisation ---------------------------------------------------------------


def observation_hash(G):
    """sha256 of the sampled observation grid (identifies b at this resolution)."""
    return hashlib.sha256(np.ascontiguousarray(G.obs.b).tobytes()).hexdigest()


def save_gramian(G: GramianMatrix, path):
    """Dense Gramian as a .npz archive: the matrix plus a JSON header
    (K_max, s, T, periods, b hash, assembly metadata)."""
    if G.dense is None:
        raise InvalidInputError("only dense Gramians can be saved")
    header = {"K_max": G.basis.K_max, "s": G.s, "T": G.T, "periods": list(G.basis.periods),
              "b_sha256": observation_hash(G) if G.obs is not None else None,
              "meta": {k: v for k, v in G.meta.items() if isinstance(v, (int, float, str))}}
    np.savez(path, matrix=G.dense, header=np.array(json.dumps(header, sort_keys=True)))


def load_gramian(path):
    """(header dict, matrix) from save_gramian output."""
    with np.load(path, allow_pickle=False) as z:
        return json.loads(str(z["header"])), np.array(z["matrix"])
