"""Experiment configuration: TOML schema, parsing and validation.

Schema (every table except ``manifold`` and ``region`` is optional)::

    experiment = "tgcc"          # one of EXPERIMENTS
    seed = 0
    output = "out/tgcc"          # default output directory

    [manifold]
    kind = "flat_torus"          # flat_torus | round_sphere | perturbed_torus
    periods = [1.0, 1.0]
    terms = [[1, 0, 0.1, 0.0]]   # perturbed_torus: (k1, k2, amplitude, phase)
    grid_resolution = 256        # perturbed_torus distance grid
    stencil_radius = 4

    [region]
    amplitude = 1.0
    whole = false                # true: b == amplitude everywhere
    [[region.components]]
    type = "hole"                # ball | hole | strip
    center = [0.5, 0.5]
    r0 = 0.25
    r1 = 0.27
    # strip: axis = 1, a = 0.3, w0 = 0.1, w1 = 0.2

    [lower_order]
    b0 = [[amp, p, k1, k2, phase], ...]
    b1 = [[[amp, p, k1, k2, phase], ...], [...]]

    [solver]
    K_max = 16, s = 0.0, dt = 1e-3, n_time = 0 (auto), nx = 24, na = 32,
    resolution = 128, t_max = 4.0, tol = 5e-3, eig_maxiter = 200

    [params]                     # experiment specific, see experiments.py
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .geometry import FlatTorus2, PerturbedTorus2, RoundSphere2
from .regions import Ball, Hole, ObservationFunction, Strip, whole_manifold
from .control_times import LowerOrderData

EXPERIMENTS = {
    "kofT-scan": "K(T) on a grid of horizons, with minimising rays",
    "tgcc": "T_GCC by bisection on K(T) > 0, +inf with a certifying trapped ray",
    "times-compare": "T_UC = 2 L(M, omega) against T_GCC, equality-case diagnostic",
    "lower-bound": "lambda_min of the Gramian against K(T) and the Gaussian-beam Rayleigh quotient",
    "shell": "lambda_min on high-frequency shells F_kappa relative to K(T)",
    "blowup-scan": "lambda_min, 1/lambda_min and HUM cost against K(T) over horizons",
    "hum": "HUM control to rest, final energy and cost",
    "potential-scan": "energy growth for constant negative potentials and C_obs(r)",
    "damped-beam": "energy decay of a damped Gaussian beam against the geodesic sandwich",
    "egorov": "Egorov transport of a multiplication symbol along a beam",
    "smoothing": "norm of Lambda R1 over cutoffs (off-diagonal smoothing) with diagonal contrast",
}

_TOP = {"experiment", "seed", "output", "manifold", "region", "lower_order", "solver", "params"}
_MANIFOLD = {"kind", "periods", "terms", "grid_resolution", "stencil_radius"}
_REGION = {"amplitude", "whole", "components"}
_COMP = {
    "ball": {"type", "center", "r0", "r1"},
    "hole": {"type", "center", "r0", "r1"},
    "strip": {"type", "axis", "a", "w0", "w1"},
}
_LOT = {"b0", "b1"}
_SOLVER = {
    "K_max": (int, 0, 4096),
    "s": (float, -4.0, 4.0),
    "dt": (float, 1e-7, 1.0),
    "n_time": (int, 0, 1_000_000),
    "nx": (int, 1, 512),
    "na": (int, 1, 4096),
    "resolution": (int, 2, 4096),
    "t_max": (float, 1e-6, 1e4),
    "tol": (float, 1e-9, 1.0),
    "eig_maxiter": (int, 1, 100_000),
}
SOLVER_DEFAULTS = {
    "K_max": 16, "s": 0.0, "dt": 1e-3, "n_time": 0, "nx": 24, "na": 32,
    "resolution": 128, "t_max": 4.0, "tol": 5e-3, "eig_maxiter": 200,
}


@dataclass
class ExperimentConfig:
    experiment: str
    manifold: object
    region: ObservationFunction
    lower_order: LowerOrderData
    solver: dict
    params: dict
    seed: int = 0
    output: str | None = None
    raw: dict = field(default_factory=dict)
    source: str | None = None


def _err(path, msg):
    raise ConfigError(f"{path}: {msg}")


def _check_keys(d, allowed, path):
    if not isinstance(d, dict):
        _err(path, "expected a table")
    for k in d:
        if k not in allowed:
            _err(f"{path}.{k}" if path else k, "unknown key")


def _num(v, path, lo=None, hi=None, kind=float):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _err(path, f"expected a number, got {v!r}")
    if kind is int and not isinstance(v, int):
        _err(path, f"expected an integer, got {v!r}")
    if not math.isfinite(v):
        _err(path, "must be finite")
    if lo is not None and v < lo or hi is not None and v > hi:
        _err(path, f"{v!r} outside [{lo}, {hi}]")
    return kind(v)


def _pair(v, path):
    if not isinstance(v, list) or len(v) != 2:
        _err(path, "expected a list of two numbers")
    return tuple(_num(x, f"{path}[{i}]") for i, x in enumerate(v))


def _terms(v, path, width):
    if not isinstance(v, list):
        _err(path, "expected a list")
    out = []
    for i, t in enumerate(v):
        if not isinstance(t, list) or len(t) != width:
            _err(f"{path}[{i}]", f"expected {width} numbers")
        out.append(tuple(_num(x, f"{path}[{i}][{j}]") for j, x in enumerate(t)))
    return tuple(out)


def build_manifold(d):
    _check_keys(d, _MANIFOLD, "manifold")
    kind = d.get("kind", "flat_torus")
    periods = _pair(d.get("periods", [1.0, 1.0]), "manifold.periods")
    if min(periods) <= 0:
        _err("manifold.periods", "must be positive")
    if kind == "flat_torus":
        extra = set(d) - {"kind", "periods"}
        if extra:
            _err(f"manifold.{sorted(extra)[0]}", "not valid for flat_torus")
        return FlatTorus2(periods)
    if kind == "round_sphere":
        extra = set(d) - {"kind"}
        if extra:
            _err(f"manifold.{sorted(extra)[0]}", "not valid for round_sphere")
        return RoundSphere2()
    if kind == "perturbed_torus":
        terms = _terms(d.get("terms", []), "manifold.terms", 4)
        res = _num(d.get("grid_resolution", 256), "manifold.grid_resolution", 8, 4096, int)
        rad = _num(d.get("stencil_radius", 4), "manifold.stencil_radius", 1, 8, int)
        return PerturbedTorus2(periods, terms, res, rad)
    _err("manifold.kind", f"unknown kind {kind!r}")


def build_region(d, M):
    _check_keys(d, _REGION, "region")
    amp = _num(d.get("amplitude", 1.0), "region.amplitude", 1e-12, None)
    if d.get("whole", False):
        if d.get("components"):
            _err("region.components", "not allowed with whole = true")
        return whole_manifold(M, amp)
    comps = []
    raw = d.get("components", [])
    if not isinstance(raw, list) or not raw:
        _err("region.components", "need at least one component")
    for i, c in enumerate(raw):
        path = f"region.components[{i}]"
        if not isinstance(c, dict):
            _err(path, "expected a table")
        t = c.get("type")
        if t not in _COMP:
            _err(f"{path}.type", f"unknown component type {t!r}")
        _check_keys(c, _COMP[t], path)
        try:
            if t == "strip":
                if isinstance(M, RoundSphere2):
                    _err(path, "strip components need a torus")
                comps.append(Strip(_num(c["axis"], f"{path}.axis", 1, 2, int), _num(c["a"], f"{path}.a"),
                                   _num(c["w0"], f"{path}.w0", 0), _num(c["w1"], f"{path}.w1", 0)))
            else:
                cls = Ball if t == "ball" else Hole
                comps.append(cls(_pair(c["center"], f"{path}.center"), _num(c["r0"], f"{path}.r0", 0),
                                 _num(c["r1"], f"{path}.r1", 0)))
        except KeyError as e:
            _err(path, f"missing key {e.args[0]!r}")
        except ValueError as e:
            if isinstance(e, ConfigError):
                raise
            _err(path, str(e))
    return ObservationFunction(tuple(comps), amp)


def build_lot(d):
    _check_keys(d, _LOT, "lower_order")
    b0 = _terms(d.get("b0", []), "lower_order.b0", 5)
    b1raw = d.get("b1", [[], []])
    if not isinstance(b1raw, list) or len(b1raw) != 2:
        _err("lower_order.b1", "expected two component lists")
    b1 = tuple(_terms(c, f"lower_order.b1[{i}]", 5) for i, c in enumerate(b1raw))
    return LowerOrderData(b0, b1)


def build_solver(d):
    _check_keys(d, set(_SOLVER), "solver")
    out = dict(SOLVER_DEFAULTS)
    for k, v in d.items():
        kind, lo, hi = _SOLVER[k]
        out[k] = _num(v, f"solver.{k}", lo, hi, kind)
    return out


def from_dict(raw, source=None) -> ExperimentConfig:
    _check_keys(raw, _TOP, "")
    exp = raw.get("experiment")
    if exp not in EXPERIMENTS:
        _err("experiment", f"unknown experiment {exp!r}; choose from {', '.join(EXPERIMENTS)}")
    if "manifold" not in raw:
        _err("manifold", "missing table")
    M = build_manifold(raw["manifold"])
    if "region" not in raw:
        _err("region", "missing table")
    b = build_region(raw["region"], M)
    lot = build_lot(raw.get("lower_order", {}))
    solver = build_solver(raw.get("solver", {}))
    params = raw.get("params", {})
    if not isinstance(params, dict):
        _err("params", "expected a table")
    from .experiments import check_params

    check_params(exp, params)
    seed = _num(raw.get("seed", 0), "seed", 0, 2 ** 63 - 1, int)
    out = raw.get("output")
    if out is not None and not isinstance(out, str):
        _err("output", "expected a string")
    return ExperimentConfig(exp, M, b, lot, solver, params, seed, out, raw, source)


def load(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"{path}: cannot read ({e.strerror})") from e
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    try:
        return from_dict(raw, str(path))
    except ConfigError as e:
        raise ConfigError(f"{path}: {e}") from e
