"""Smooth observation functions b, their supports omega, distances to omega
and the finite-cover shrinking construction.

The transition profile is the smooth step

    h(s) = exp(-1/s) / (exp(-1/s) + exp(-1/(1-s))),  0 < s < 1,

with h = 0 for s <= 0 and h = 1 for s >= 1.  It is C-infinity and reaches both
plateaus exactly.  Components:

* ``Ball(center, r0, r1)``: 1 on dist <= r0, 0 on dist >= r1; support is the
  open ball of radius r1.
* ``Strip(axis, a, w0, w1)``: torus only; support is ``a < x_axis < a + w1``
  (mod the period) with a centred plateau of width w0.
* ``Hole(center, r0, r1)``: complement of a ball; 0 on dist <= r0, 1 on
  dist >= r1; support is ``dist > r0``.

Components combine as ``b = amplitude * (1 - prod(1 - chi_i))`` so that the
support of b is exactly the union of the component supports.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.spatial import cKDTree

from .errors import ConstructionError, InvalidInputError, InvalidRegionError
from .geometry import TWO_PI, PerturbedTorus2, RoundSphere2


def smooth_step(s):
    """C-infinity step: 0 for s <= 0, 1 for s >= 1."""
    s = np.asarray(s, dtype=float)
    out = np.where(s >= 1.0, 1.0, 0.0)
    mid = (s > 0.0) & (s < 1.0)
    if np.any(mid):
        sm = s[mid]
        a = np.exp(-1.0 / sm)
        b = np.exp(-1.0 / (1.0 - sm))
        out = out.astype(float)
        out[mid] = a / (a + b)
    return out


@dataclass(frozen=True)
class Ball:
    center: tuple
    r0: float
    r1: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not (0 <= self.r0 < self.r1):
            raise InvalidRegionError("Ball needs 0 <= r0 < r1")


@dataclass(frozen=True)
class Strip:
    axis: int
    a: float
    w0: float
    w1: float

    def __post_init__(self):
        if self.axis not in (1, 2):
            raise InvalidRegionError("Strip axis must be 1 or 2")
        if not (0 <= self.w0 < self.w1):
            raise InvalidRegionError("Strip needs 0 <= w0 < w1")


@dataclass(frozen=True)
class Hole:
    center: tuple
    r0: float
    r1: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not (0 <= self.r0 < self.r1):
            raise InvalidRegionError("Hole needs 0 <= r0 < r1")


@dataclass(frozen=True)
class ObservationFunction:
    components: tuple
    amplitude: float = 1.0
    whole: bool = False  # set by whole_manifold: b == amplitude everywhere

    @property
    def is_whole(self):
        return self.whole

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if self.amplitude <= 0:
            raise InvalidRegionError("amplitude must be positive")

    def __call__(self, M, x):
        return evaluate(self, M, x)

    def describe(self):
        if self.whole:
            return f"{self.amplitude:g} (whole manifold)"
        parts = []
        for c in self.components:
            if isinstance(c, Strip):
                parts.append(f"Strip(axis={c.axis},a={c.a:g},w0={c.w0:g},w1={c.w1:g})")
            else:
                name = type(c).__name__
                parts.append(f"{name}(({c.center[0]:g},{c.center[1]:g}),{c.r0:g},{c.r1:g})")
        return f"{self.amplitude:g}*[" + " + ".join(parts) + "]"


def whole_manifold(M, amplitude=1.0):
    """An observation function with b == amplitude everywhere."""
    return ObservationFunction((Ball((0.5 * np.pi, 0.0) if isinstance(M, RoundSphere2) else (0.0, 0.0),
                                     4.0 * M.diameter(), 8.0 * M.diameter()),),
                               amplitude, True)


# -- per-component distances ---------------------------------------------------


def _wrap1(d, L):
    return np.abs(d - L * np.round(d / L))


def _strip_offsets(comp, M, x):
    """Signed 1-D data: (distance to strip centre, half widths)."""
    if M.periods is None:
        raise InvalidRegionError("Strip components need a torus")
    L = M.periods[comp.axis - 1]
    c = comp.a + 0.5 * comp.w1
    return _wrap1(np.asarray(x)[..., comp.axis - 1] - c, L), L


def _center_distance(comp, M, x):
    if isinstance(M, PerturbedTorus2):
        fld = _field_from(M, ("point", comp.center))
        return M.sample_field(fld, x)
    return M.distance(np.asarray(comp.center), x)


def component_value(comp, M, x):
    """chi_i(x) in [0, 1]."""
    if isinstance(comp, Strip):
        d, _ = _strip_offsets(comp, M, x)
        half0, half1 = 0.5 * comp.w0, 0.5 * comp.w1
        return 1.0 - smooth_step((d - half0) / (half1 - half0))
    d = _center_distance(comp, M, x)
    s = smooth_step((d - comp.r0) / (comp.r1 - comp.r0))
    return 1.0 - s if isinstance(comp, Ball) else s


def component_distance(comp, M, x):
    """Distance from x to the open support of the component."""
    if isinstance(M, PerturbedTorus2):
        return M.sample_field(_field_from(M, ("inside", comp)), x)
    if isinstance(comp, Strip):
        d, L = _strip_offsets(comp, M, x)
        return np.maximum(0.0, d - 0.5 * comp.w1)
    d = _center_distance(comp, M, x)
    if isinstance(comp, Ball):
        return np.maximum(0.0, d - comp.r1)
    return np.maximum(0.0, comp.r0 - d)


def component_depth(comp, M, x):
    """Lower bound on the distance from x to the complement of the component
    support (0 outside the support)."""
    if isinstance(M, PerturbedTorus2):
        return M.sample_field(_field_from(M, ("outside", comp)), x)
    if isinstance(comp, Strip):
        d, L = _strip_offsets(comp, M, x)
        return np.maximum(0.0, 0.5 * comp.w1 - d)
    d = _center_distance(comp, M, x)
    if isinstance(comp, Ball):
        return np.maximum(0.0, comp.r1 - d)
    return np.maximum(0.0, d - comp.r0)


@lru_cache(maxsize=64)
def _field_from(M, key):
    """Dijkstra distance fields on the perturbed torus grid, cached."""
    nodes = M.grid(M.grid_resolution).reshape(-1, 2)
    if key[0] == "point":
        return M.distance_field(np.array(key[1])[None])
    kind, comp = key
    if isinstance(comp, Strip):
        d, _ = _strip_offsets(comp, M, nodes)
        inside = d < 0.5 * comp.w1
    else:
        dc = _field_from(M, ("point", comp.center)).ravel()
        inside = dc < comp.r1 if isinstance(comp, Ball) else dc > comp.r0
    src = nodes[inside] if kind == "inside" else nodes[~inside]
    n = M.grid_resolution
    if len(src) == 0:
        return np.full((n, n), np.inf if kind == "inside" else 0.0)
    if len(src) == n * n:
        return np.zeros((n, n)) if kind == "inside" else np.full((n, n), np.inf)
    return M.distance_field(src)


# -- public operations ---------------------------------------------------------


def _check_region(b):
    if not b.components:
        raise InvalidRegionError("observation function has no components")


def evaluate(b: ObservationFunction, M, x):
    """b(x) = amplitude * (1 - prod_i (1 - chi_i(x)))."""
    x = np.asarray(x, float)
    rest = np.ones(x.shape[:-1])
    for comp in b.components:
        rest = rest * (1.0 - component_value(comp, M, x))
    return b.amplitude * (1.0 - rest)


def evaluate_points(b, M, p):
    """b at extrinsic sphere points p (shape (..., 3)); sphere only."""
    rest = np.ones(p.shape[:-1])
    for comp in b.components:
        if isinstance(comp, Strip):
            raise InvalidRegionError("Strip components need a torus")
        d = M.distance_points(M.embed(np.array(comp.center)), p)
        s = smooth_step((d - comp.r0) / (comp.r1 - comp.r0))
        rest = rest * (s if isinstance(comp, Ball) else 1.0 - s)
    return b.amplitude * (1.0 - rest)


def dist_to_omega(b: ObservationFunction, M, x):
    """min over components of the distance to the open component support."""
    _check_region(b)
    x = np.asarray(x, float)
    if len(b.components) > 8 and not isinstance(M, PerturbedTorus2) and all(
        isinstance(c, Ball) for c in b.components
    ):
        return _many_balls(b, M, x, lambda d, r1: d - r1, np.minimum)
    out = None
    for comp in b.components:
        d = component_distance(comp, M, x)
        out = d if out is None else np.minimum(out, d)
    return out


def _many_balls(b, M, x, term, reduce, chunk=64):
    """Vectorised min/max over many Ball components, clipped at 0."""
    centers = np.array([c.center for c in b.components])
    r1 = np.array([c.r1 for c in b.components])
    flat = x.reshape(-1, 2)
    out = None
    for i in range(0, len(centers), chunk):
        if M.periods is None:
            d = M.distance(centers[i:i + chunk, None, :], flat[None, :, :])
        else:
            # minimal image coordinates: same value as the 9-translate minimum
            delta = M.chart_delta(centers[i:i + chunk, None, :], flat[None, :, :])
            d = np.sqrt(np.sum(delta * delta, axis=-1))
        v = term(d, r1[i:i + chunk, None])
        v = v.min(axis=0) if reduce is np.minimum else v.max(axis=0)
        out = v if out is None else reduce(out, v)
    return np.maximum(0.0, out).reshape(x.shape[:-1])


def depth_in_omega(b, M, x):
    """Lower bound on dist(x, M \\ omega); zero outside omega."""
    _check_region(b)
    x = np.asarray(x, float)
    if len(b.components) > 8 and not isinstance(M, PerturbedTorus2) and all(
        isinstance(c, Ball) for c in b.components
    ):
        return _many_balls(b, M, x, lambda d, r1: r1 - d, np.maximum)
    out = None
    for comp in b.components:
        d = component_depth(comp, M, x)
        out = d if out is None else np.maximum(out, d)
    return out


@dataclass(frozen=True)
class CalLResult:
    value: float
    error_bound: float
    argmax: np.ndarray


def calL_details(b, M, resolution=128) -> CalLResult:
    """sup_x dist(x, omega): grid maximum then golden-section refinement on
    each axis around the best grid point."""
    _check_region(b)
    if resolution < 2:
        raise InvalidInputError("resolution must be >= 2")
    G = M.grid(resolution)
    D = dist_to_omega(b, M, G)
    idx = np.unravel_index(int(np.argmax(D)), D.shape)
    best = G[idx].copy()
    val = float(D[idx])
    if isinstance(M, RoundSphere2):
        steps = (np.pi / (resolution - 1), TWO_PI / resolution)
        h = np.pi / (resolution - 1)
    else:
        steps = tuple(p / resolution for p in M.periods)
        h = max(steps)
    if val > 0:
        for _ in range(2):
            for ax in range(2):
                def f(v, ax=ax):
                    y = best.copy()
                    y[ax] = v
                    if isinstance(M, RoundSphere2) and ax == 0:
                        y[0] = np.clip(v, 0.0, np.pi)
                    return -float(dist_to_omega(b, M, y))

                r = minimize_scalar(
                    f, bounds=(best[ax] - steps[ax], best[ax] + steps[ax]),
                    method="bounded", options={"xatol": 1e-9},
                )
                if -r.fun > val:
                    val = -r.fun
                    best[ax] = r.x
    return CalLResult(val, h * math.sqrt(2.0), M.wrap(best))


def calL(b, M, resolution=128) -> float:
    return calL_details(b, M, resolution).value


def t_uc(b, M, resolution=128) -> float:
    """Minimal unique-continuation time 2 * calL."""
    return 2.0 * calL(b, M, resolution)


def _cover_points(M, spacing):
    """Points whose spacing-grid covers M (covering radius <= spacing / sqrt 2)."""
    if isinstance(M, RoundSphere2):
        # Fibonacci lattice; mean spacing ~ sqrt(4 pi / N)
        n = max(8, int(math.ceil(4 * np.pi / (0.75 * spacing) ** 2)))
        i = np.arange(n) + 0.5
        th = np.arccos(1 - 2 * i / n)
        ph = np.mod(np.pi * (1 + 5 ** 0.5) * i, TWO_PI)
        return np.stack([th, ph], axis=-1)
    n = [max(2, int(math.ceil(p / spacing))) for p in M.periods]
    g1 = np.arange(n[0]) * M.periods[0] / n[0]
    g2 = np.arange(n[1]) * M.periods[1] / n[1]
    A, B = np.meshgrid(g1, g2, indexing="ij")
    return np.stack([A.ravel(), B.ravel()], axis=-1)


def _kd(M, pts):
    if isinstance(M, RoundSphere2):
        return cKDTree(M.embed(pts)), (lambda q: M.embed(q))
    box = np.asarray(M.periods)
    return cKDTree(np.mod(pts, box), boxsize=box), (lambda q: np.mod(q, box))


def shrink_region(b: ObservationFunction, M, eps: float, resolution=None) -> ObservationFunction:
    """Finite union of balls with closure inside omega and
    calL(omega_0) <= calL(omega) + eps (up to grid error).

    Cover centres x_i (spacing eps / (2 sqrt 2)); y_i is the nearest candidate
    point of depth >= delta; radius r_i = depth(y_i) / 2 so that the closed
    ball sits inside omega.
    """
    _check_region(b)
    if eps <= 0:
        raise InvalidInputError("eps must be positive")
    cover = _cover_points(M, eps / (2.0 * math.sqrt(2.0)))
    cand = _cover_points(M, eps / 8.0 if resolution is None else min(eps / 8.0, 1.0 / resolution))
    depth = depth_in_omega(b, M, cand)
    dmax = float(np.max(depth))
    if dmax <= 0:
        raise ConstructionError("omega has empty interior at the requested resolution")
    delta = min(eps / 8.0, 0.5 * dmax)
    deep = cand[depth >= delta]
    tree, emb = _kd(M, deep)
    _, j = tree.query(emb(cover))
    j = np.unique(j)
    ys = deep[j]
    radii = 0.5 * depth_in_omega(b, M, ys)
    comps = tuple(Ball(tuple(y), 0.5 * r, r) for y, r in zip(ys, radii) if r > 0)
    if not comps:
        raise ConstructionError("no admissible balls found")
    return ObservationFunction(comps, b.amplitude)
