"""Named experiments: each turns an ExperimentConfig into tables, pass/fail
assertions and plot specifications; ``run`` writes them to disk."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .control_times import (
    K_of_T,
    eps_zero,
    field_integral,
    field_integral_extrema,
    geodesic_average,
    t_comparison,
    t_gcc,
)
from .errors import ConfigError, InconsistencyError, WaveGCCError
from .geometry import FlatTorus2, PhasePoint
from .gramian import (
    assemble_gramian,
    assemble_gramian_potential,
    cost_scan,
    egorov_probe,
    hum_control,
    hum_cost_identity,
    min_eig_upper,
    observability_report,
    random_smooth_data,
    shell_observability,
    smoothing_probe,
)
from .spectral import SpectralBasis, energy, gaussian_beam, growth_rate, solve_damped

# -- parameter schema ------------------------------------------------------------

PARAMS = {
    "kofT-scan": {"T": "floats", "monotone_tol": "float"},
    "tgcc": {"expected": "float_or_inf", "expected_tol": "float", "trap_T": "float"},
    "times-compare": {"expected_t_uc": "float_or_inf", "expected_t_gcc": "float_or_inf",
                      "expected_tol": "float", "equality_tol": "float"},
    "lower-bound": {"T": "floats", "beam_k": "int", "beam_tol": "float", "tol_beam": "float",
                    "eig_block": "int"},
    "shell": {"T": "float", "kappa_modes": "floats", "n_random": "int", "stabilize_tol": "float",
              "min_ratio": "float"},
    "blowup-scan": {"T": "floats", "data_modes": "int", "tol": "float"},
    "hum": {"T": "float", "data_modes": "int", "cg_tol": "float", "energy_tol": "float",
            "identity_tol": "float"},
    "potential-scan": {"r": "floats", "rate_tol": "float", "r_obs": "floats", "T_obs": "float",
                       "K_obs": "int", "dt_obs": "float"},
    "damped-beam": {"x0": "pair", "xi0": "pair", "k": "int", "T": "float"},
    "egorov": {"x0": "pair", "xi0": "pair", "t": "float", "k": "ints", "symbol": "terms4",
               "ratio": "float"},
    "smoothing": {"T": "float", "K": "ints", "growth_factor": "float"},
}

# experiments that need the truncated Fourier calculus (flat torus only)
SPECTRAL = {"lower-bound", "shell", "blowup-scan", "hum", "potential-scan", "damped-beam", "egorov", "smoothing"}


def _bad(path, msg):
    raise ConfigError(f"params.{path}: {msg}")


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def check_params(exp, params):
    spec = PARAMS[exp]
    for key, val in params.items():
        if key not in spec:
            _bad(key, f"unknown key for experiment {exp!r} (allowed: {', '.join(sorted(spec))})")
        kind = spec[key]
        if kind == "float" and not _is_num(val):
            _bad(key, f"expected a number, got {val!r}")
        if kind == "int" and (not isinstance(val, int) or isinstance(val, bool) or val < 0):
            _bad(key, f"expected a nonnegative integer, got {val!r}")
        if kind == "float_or_inf" and not (_is_num(val) or val == "inf"):
            _bad(key, f"expected a number or \"inf\", got {val!r}")
        if kind in ("floats", "ints"):
            if not isinstance(val, list) or not val:
                _bad(key, "expected a nonempty list")
            for i, v in enumerate(val):
                if not _is_num(v) or (kind == "ints" and not isinstance(v, int)):
                    _bad(f"{key}[{i}]", f"expected {'an integer' if kind == 'ints' else 'a number'}, got {v!r}")
        if kind == "pair" and (not isinstance(val, list) or len(val) != 2 or not all(map(_is_num, val))):
            _bad(key, "expected two numbers")
        if kind == "terms4":
            if not isinstance(val, list):
                _bad(key, "expected a list of [amp, k1, k2, phase]")
            for i, t in enumerate(val):
                if not isinstance(t, list) or len(t) != 4 or not all(map(_is_num, t)):
                    _bad(f"{key}[{i}]", "expected [amp, k1, k2, phase]")


def check_manifold(exp, M):
    if exp in SPECTRAL and type(M) is not FlatTorus2:
        raise ConfigError(f"manifold.kind: experiment {exp!r} needs a flat_torus (spectral calculus)")


# -- results -----------------------------------------------------------------------


@dataclass
class Table:
    columns: list
    rows: list = field(default_factory=list)

    def add(self, *row):
        if len(row) != len(self.columns):
            raise ValueError("row width mismatch")
        self.rows.append(list(row))


@dataclass
class Assertion:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ExperimentResult:
    tables: dict = field(default_factory=dict)
    assertions: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    plots: list = field(default_factory=list)

    def check(self, name, passed, detail=""):
        self.assertions.append(Assertion(name, bool(passed), detail))

    @property
    def passed(self):
        return all(a.passed for a in self.assertions)


def fmt(v):
    """CSV cell: floats with 17 significant digits, bools lowercase."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    return str(v)


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "+inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    return obj


def _rho_cols(rho):
    x = np.asarray(rho.x, float)
    xi = np.asarray(rho.xi, float)
    return [float(x[0]), float(x[1]), float(xi[0]), float(xi[1])]


RHO = ["rho_x1", "rho_x2", "rho_xi1", "rho_xi2"]


# -- experiments ---------------------------------------------------------------------


def _kofT_scan(cfg, res):
    M, b, sv, p = cfg.manifold, cfg.region, cfg.solver, cfg.params
    Ts = sorted(p.get("T", [0.25 * j for j in range(1, 9)]))
    tol = p.get("monotone_tol", 1e-6 * b.amplitude ** 2)
    tab = Table(["T", "K_of_T", "grid_min", "evaluations"] + RHO)
    for T in Ts:
        k = K_of_T(M, b, T, sv["nx"], sv["na"])
        tab.add(T, k.value, k.grid_value, k.evaluations, *_rho_cols(k.rho))
    res.tables["kofT"] = tab
    K = [r[1] for r in tab.rows]
    res.check("K(T) nondecreasing", all(K[i + 1] >= K[i] - tol for i in range(len(K) - 1)),
              f"tolerance {tol:g}")
    res.check("K(T) <= amplitude^2 T", all(r[1] <= b.amplitude ** 2 * r[0] * (1 + 1e-9) for r in tab.rows))
    res.plots.append({"csv": "kofT.csv", "x": "T", "y": ["K_of_T"], "title": "K(T)"})


def _tgcc(cfg, res):
    M, b, sv, p = cfg.manifold, cfg.region, cfg.solver, cfg.params
    g = t_gcc(M, b, sv["t_max"], sv["tol"], sv["nx"], sv["na"])
    tab = Table(["T_GCC", "certificate", "K_at_value"] + RHO)
    tab.add(g.value, g.certificate, g.K_at_value, *_rho_cols(g.rho))
    res.tables["tgcc"] = tab
    hist = Table(["T", "K_of_T"])
    for T, k in g.history:
        hist.add(T, k)
    res.tables["bisection"] = hist
    res.summary.update({"T_GCC": g.value, "certificate": g.certificate,
                        "certifying_ray": {"x": list(map(float, g.rho.x)), "xi": list(map(float, g.rho.xi))}})
    res.check("certificate verified", g.certificate != "unverified", g.certificate)
    if math.isinf(g.value):
        T = p.get("trap_T", 10.0)
        avg = geodesic_average(M, b, g.rho, T)
        res.check("certifying ray avoids omega", avg <= eps_zero(b, T),
                  f"average over [0, {T:g}] = {avg:.3g}")
        res.summary["certifying_ray_average"] = avg
    if "expected" in p:
        exp = math.inf if p["expected"] == "inf" else float(p["expected"])
        tol = p.get("expected_tol", 0.02)
        ok = g.value == exp if math.isinf(exp) else abs(g.value - exp) <= tol
        res.check("T_GCC matches expected", ok, f"{g.value:.6g} vs {exp:g} +- {tol:g}")
    if hist.rows:
        res.plots.append({"csv": "bisection.csv", "x": "T", "y": ["K_of_T"], "title": "bisection on K(T)",
                          "style": "scatter"})


def _times_compare(cfg, res):
    M, b, sv, p = cfg.manifold, cfg.region, cfg.solver, cfg.params
    eq_tol = p.get("equality_tol", 0.02)
    try:
        r = t_comparison(M, b, sv["resolution"], sv["t_max"], eq_tol, sv["nx"], sv["na"], sv["tol"])
    except InconsistencyError as e:
        res.check("T_UC <= T_GCC + tolerance", False, str(e))
        return
    tab = Table(["T_UC", "T_GCC", "equality", "tolerance", "calL", "calL_error", "argmax_x1", "argmax_x2",
                 "gcc_certificate", "diagnostic_max_violation", "diagnostic_passed"])
    d = r.diagnostic
    tab.add(r.t_uc, r.t_gcc, r.equality, r.tolerance, r.calL.value, r.calL.error_bound,
            float(r.calL.argmax[0]), float(r.calL.argmax[1]), r.gcc.certificate,
            d.max_violation if d else math.nan, d.passed if d else False)
    res.tables["times"] = tab
    res.check("T_UC <= T_GCC + tolerance", True, f"{r.t_uc:.6g} <= {r.t_gcc:.6g} + {r.tolerance:.3g}")
    if d is not None:
        ex = Table(["angle", "exit_time", "R0"])
        for j, t in enumerate(d.exit_times):
            ex.add(2 * math.pi * j / len(d.exit_times), float(t), d.R0)
        res.tables["exit_times"] = ex
        res.check("equality-case diagnostic", d.passed, f"max violation {d.max_violation:.3g}")
        res.plots.append({"csv": "exit_times.csv", "x": "angle", "y": ["exit_time", "R0"],
                          "title": "exit times from the farthest point"})
    tol = p.get("expected_tol", 0.02)
    for key, val in (("expected_t_uc", r.t_uc), ("expected_t_gcc", r.t_gcc)):
        if key in p:
            exp = math.inf if p[key] == "inf" else float(p[key])
            ok = val == exp if math.isinf(exp) else abs(val - exp) <= tol
            res.check(f"{key[9:].upper()} matches expected", ok, f"{val:.6g} vs {exp:g} +- {tol:g}")


def _lower_bound(cfg, res):
    M, b, sv, p = cfg.manifold, cfg.region, cfg.solver, cfg.params
    K = sv["K_max"]
    Ts = sorted(p.get("T", [1.0]))
    beam_k = p.get("beam_k", max(4, K // 2))
    beam_tol = p.get("beam_tol", 0.1)
    tab = Table(["T", "K_of_T", "average_at_rho", "beam_rayleigh", "beam_relative_error", "lambda_min",
                 "C_obs_discrete", "tol_beam", "lower_bound_check", "eig_converged", "eig_method"] + RHO)
    for T in Ts:
        kres = K_of_T(M, b, T, sv["nx"], sv["na"])
        G = assemble_gramian(b, T, sv["s"], K, sv["n_time"] or None, M.periods, M=M)
        r = observability_report(b, T, sv["s"], K, beam_k, M, kres, sv["nx"], sv["na"], G=G,
                                 tol_beam=p.get("tol_beam"), maxiter=sv["eig_maxiter"],
                                 block=p.get("eig_block", 6), seed=cfg.seed)
        tab.add(T, r.K_of_T, r.average_at_rho, r.beam_rayleigh, r.beam_relative_error, r.lambda_min,
                r.C_obs_discrete, r.tol_beam, r.lower_bound_check, r.eig_converged, r.eig_method,
                *_rho_cols(r.rho))
        res.check(f"lambda_min <= K(T) + tol_beam at T={T:g}", r.lower_bound_check,
                  f"{r.lambda_min:.6g} <= {r.K_of_T:.6g} + {r.tol_beam:.3g}")
        res.check(f"beam Rayleigh within {beam_tol:g} of average at T={T:g}",
                  r.beam_relative_error <= beam_tol, f"relative error {r.beam_relative_error:.4f}")
    res.tables["lower_bound"] = tab
    res.plots.append({"csv": "lower_bound.csv", "x": "T", "y": ["K_of_T", "beam_rayleigh", "lambda_min"],
                      "title": "lambda_min against K(T)"})


def _shell(cfg, res):
    M, b, sv, p = cfg.manifold, cfg.region, cfg.solver, cfg.params
    T = p.get("T", 1.0)
    L = min(M.periods)
    modes = sorted(p.get("kappa_modes", [1, 2, 4, 8]))
    kappas = [(2 * math.pi * m / L) ** 2 for m in modes]
    kres = K_of_T(M, b, T, sv["nx"], sv["na"])
    G = assemble_gramian(b, T, sv["s"], sv["K_max"], sv["n_time"] or None, M.periods, M=M)
    full = min_eig_upper(G, maxiter=sv["eig_maxiter"])
    tab = Table(["kappa_mode", "kappa", "lambda_min_shell", "ratio_to_K", "C0_fit"])
    for m, kap in zip(modes, kappas):
        r = shell_observability(b, T, sv["s"], sv["K_max"], kap, kres.value, G=G,
                                n_random=p.get("n_random", 64), seed=cfg.seed, M=M)
        tab.add(m, kap, r.lambda_min_shell, r.ratio_to_K, r.C0_fit)
    res.tables["shell"] = tab
    res.summary.update({"K_of_T": kres.value, "lambda_min_full": full.value})
    ratios = [r[3] for r in tab.rows]
    res.check("shell ratio nondecreasing in kappa",
              all(ratios[i + 1] >= ratios[i] - 1e-8 for i in range(len(ratios) - 1)),
              " ".join(f"{x:.4f}" for x in ratios))
    st = p.get("stabilize_tol", 0.05)
    idx = next((i for i in range(1, len(ratios)) if abs(ratios[i] - ratios[i - 1]) <= st), len(ratios) - 1)
    need = p.get("min_ratio", 0.5)
    res.summary["stabilized_kappa"] = kappas[idx]
    res.check(f"ratio >= {need:g} at the stabilized kappa", ratios[idx] >= need,
              f"kappa={kappas[idx]:.4g}, ratio={ratios[idx]:.4f}")
    res.plots.append({"csv": "shell.csv", "x": "kappa", "y": ["ratio_to_K"], "title": "shell ratio",
                      "logx": True})


def _blowup_scan(cfg, res):
    M, b, sv, p = cfg.manifold, cfg.region, cfg.solver, cfg.params
    rows, mono = cost_scan(b, sv["s"], sv["K_max"], p.get("T", [0.75, 1.0, 1.5]), M, sv["nx"], sv["na"],
                           cfg.seed, p.get("tol"), p.get("data_modes", 4))
    tab = Table(["T", "K_of_T", "lambda_min", "C_obs_discrete", "hum_cost", "log_C_obs", "inv_K",
                 "lower_bound_ok"])
    for r in rows:
        tab.add(r.T, r.K_of_T, r.lambda_min, r.C_obs_discrete, r.hum_cost, r.log_C_obs, r.inv_K,
                r.lower_bound_ok)
        res.check(f"lambda_min <= K(T) + tol at T={r.T:g}", r.lower_bound_ok,
                  f"{r.lambda_min:.6g} vs {r.K_of_T:.6g}")
    res.tables["blowup"] = tab
    res.check("lambda_min nondecreasing in T", mono)
    res.plots.append({"csv": "blowup.csv", "x": "T", "y": ["lambda_min", "K_of_T"], "title": "lambda_min(T)"})
    res.plots.append({"csv": "blowup.csv", "x": "inv_K", "y": ["log_C_obs"], "title": "log C_obs against 1/K(T)",
                      "style": "scatter"})


def _hum(cfg, res):
    M, b, sv, p = cfg.manifold, cfg.region, cfg.solver, cfg.params
    T = p.get("T", 1.0)
    basis = SpectralBasis(sv["K_max"], M.periods)
    u0, u1 = random_smooth_data(basis, p.get("data_modes", 8), np.random.default_rng(cfg.seed))
    r = hum_control(u0, u1, b, T, sv["s"], p.get("cg_tol", 1e-8), sv["K_max"], M=M, keep_control=True)
    tab = Table(["T", "initial_E0", "final_E0", "energy_ratio", "cost", "cg_iterations"])
    ratio = r.final_E0 / r.initial_E0
    tab.add(T, r.initial_E0, r.final_E0, ratio, r.cost, r.iterations)
    res.tables["hum"] = tab
    ctl = Table(["t", "weight", "control_norm2"])
    norms = np.sum(np.abs(r.control) ** 2, axis=(-2, -1))
    for t, w, n in zip(r.control_times, r.weights, norms):
        ctl.add(float(t), float(w), float(n))
    res.tables["control"] = ctl
    etol = p.get("energy_tol", 1e-6)
    res.check(f"final E0 <= {etol:g} x initial", ratio <= etol, f"ratio {ratio:.3g}")
    if b.is_whole:
        ref = hum_cost_identity(basis, u0, u1, T, sv["s"]) / b.amplitude ** 2
        rel = abs(r.cost - ref) / ref
        itol = p.get("identity_tol", 1e-6)
        res.summary["closed_form_cost"] = ref
        res.check("cost matches per-mode closed form", rel <= itol, f"relative difference {rel:.3g}")
    res.plots.append({"csv": "control.csv", "x": "t", "y": ["control_norm2"], "title": "|f(t)|^2", "logy": True})


def _potential_scan(cfg, res):
    M, b, sv, p = cfg.manifold, cfg.region, cfg.solver, cfg.params
    tol = p.get("rate_tol", 0.02)
    tab = Table(["r", "T", "dt", "rate", "sqrt_r", "relative_error"])
    for r in p.get("r", [1.0, 100.0, 1e4]):
        rate, T, dt = growth_rate(r)
        rel = abs(rate - math.sqrt(r)) / math.sqrt(r)
        tab.add(r, T, dt, rate, math.sqrt(r), rel)
        res.check(f"growth rate sqrt(r) at r={r:g}", rel <= tol, f"relative error {rel:.3g}")
    res.tables["growth"] = tab
    obs = Table(["r", "T", "lambda_min", "C_obs_discrete"])
    T = p.get("T_obs", 1.0)
    for r in p.get("r_obs", [0.0, 1.0, 10.0]):
        G = assemble_gramian_potential(b, -r, T, 1.0, p.get("K_obs", 3), p.get("dt_obs", 1e-3), M)
        lam = float(np.linalg.eigvalsh(G.dense)[0])
        obs.add(r, T, lam, 1.0 / lam if lam > 0 else math.inf)
    res.tables["c_obs"] = obs
    res.plots.append({"csv": "growth.csv", "x": "sqrt_r", "y": ["rate"], "title": "growth rate", "logx": True,
                      "logy": True})
    res.plots.append({"csv": "c_obs.csv", "x": "r", "y": ["C_obs_discrete"], "title": "C_obs(r) (diagnostic)",
                      "logy": True})


def _damped_beam(cfg, res):
    M, b, sv, p = cfg.manifold, cfg.region, cfg.solver, cfg.params
    lot = cfg.lower_order
    if any(t[1] != 0 for t in lot.b0):
        raise ConfigError("lower_order.b0: damped-beam needs a time-independent b0 (p = 0)")
    if not lot.b0:
        raise ConfigError("lower_order.b0: damped-beam needs a damping field")
    T = p.get("T", 2.0)
    k = p.get("k", 16)
    x0 = np.asarray(p.get("x0", [0.1, 0.3]), float)
    xi0 = np.asarray(p.get("xi0", [0.6, 0.8]), float)
    xi0 = xi0 / np.linalg.norm(xi0)
    basis = SpectralBasis(sv["K_max"], M.periods)

    def f(x):
        return lot.eval_b0(0.0, x, M.periods)

    b0g = basis.sample(f)
    ratios, resid = {}, {}
    for kk in (k, k // 2):
        beta = gaussian_beam(basis, x0, xi0, kk, 1.0)
        v0, v1 = beta, -1j * basis.lam * beta  # v- slot: travels along phi_t(x0, xi0)
        traj = solve_damped(basis, v0, v1, b0g, T, sv["dt"], n_save=2)
        e = traj.energy(1.0)
        ratios[kk] = float(e[-1] / e[0])
        resid[kk] = float(energy(v0, v1, 0.0, basis) / energy(v0, v1, 1.0, basis))
    eps = abs(ratios[k] - ratios[k // 2]) + resid[k]
    along = float(field_integral(M, f, x0, xi0, T)[0])
    lo, _, hi, _ = field_integral_extrema(M, f, T, sv["nx"], sv["na"])
    lower = math.exp(-2 * hi) - eps
    upper = math.exp(-2 * lo) + eps
    tab = Table(["k", "T", "energy_ratio", "integral_along_beam", "exp_minus_integral", "inf_integral",
                 "sup_integral", "eps", "lower", "upper"])
    for kk in (k // 2, k):
        tab.add(kk, T, ratios[kk], along, math.exp(-along), lo, hi, eps, lower, upper)
    res.tables["damped"] = tab
    res.summary.update({"eps": eps, "low_frequency_residue": resid[k]})
    r = ratios[k]
    res.check("E1(T)/E1(0) within the geodesic sandwich", lower <= r <= upper,
              f"{lower:.4g} <= {r:.4g} <= {upper:.4g}")


def _symbol(terms, periods):
    L1, L2 = periods

    def a(x):
        out = np.zeros(np.shape(x)[:-1])
        for amp, k1, k2, ph in terms:
            out = out + amp * np.cos(2 * math.pi * (k1 * x[..., 0] / L1 + k2 * x[..., 1] / L2) + ph)
        return out

    return a


def _egorov(cfg, res):
    M, p = cfg.manifold, cfg.params
    terms = p.get("symbol", [[1.0, 1, 0, 0.0], [0.5, 0, 1, -math.pi / 2]])
    a = _symbol(terms, M.periods)
    t = p.get("t", 0.3)
    rho = PhasePoint(np.asarray(p.get("x0", [0.3, 0.4]), float), np.asarray(p.get("xi0", [0.6, 0.8]), float))
    ks = sorted(p.get("k", [16, 32, 64]))
    tab = Table(["k", "K_max", "numeric", "transported", "error"])
    for k in ks:
        r = egorov_probe(a, t, rho, k, 2 * k, M.periods)
        tab.add(k, 2 * k, r.numeric, r.transported, r.error)
    res.tables["egorov"] = tab
    one = egorov_probe(lambda x: np.ones(np.shape(x)[:-1]), t, rho, ks[0], 2 * ks[0], M.periods)
    res.summary["identity_error"] = one.error
    res.check("a == 1 exact", one.error <= 1e-12, f"error {one.error:.3g}")
    q = p.get("ratio", 0.7)
    e0, e1 = tab.rows[0][4], tab.rows[-1][4]
    res.check(f"error(k={ks[-1]}) <= {q:g} error(k={ks[0]})", e1 <= q * e0, f"{e1:.4g} vs {e0:.4g}")
    res.plots.append({"csv": "egorov.csv", "x": "k", "y": ["error"], "title": "Egorov error", "logx": True,
                      "logy": True})


def _smoothing(cfg, res):
    M, b, sv, p = cfg.manifold, cfg.region, cfg.solver, cfg.params
    Ks = sorted(p.get("K", [16, 32, 64]))
    out = smoothing_probe(b, p.get("T", 0.5), sv["s"], Ks, M.periods, M=M, seed=cfg.seed)
    tab = Table(["K_max", "lambda_max", "off_diagonal_norm", "diagonal_norm"])
    for r in out:
        tab.add(r.K_max, float(SpectralBasis(r.K_max, M.periods).lam_max), r.off_diagonal_norm, r.diagonal_norm)
    res.tables["smoothing"] = tab
    g = p.get("growth_factor", 2.0)
    first, last = out[0].off_diagonal_norm, out[-1].off_diagonal_norm
    res.check(f"off-diagonal norm at K={Ks[-1]} <= {g:g} x K={Ks[0]}", last <= g * first,
              f"{last:.4g} vs {first:.4g}")
    dia = [r.diagonal_norm for r in out]
    res.check("diagonal block grows with the cutoff", all(dia[i + 1] > dia[i] for i in range(len(dia) - 1)))
    if b.is_whole:
        bound = b.amplitude ** 2
        res.check("b constant: off-diagonal norm <= amplitude^2",
                  all(r.off_diagonal_norm <= bound * (1 + 1e-10) for r in out))
    res.plots.append({"csv": "smoothing.csv", "x": "lambda_max", "y": ["off_diagonal_norm", "diagonal_norm"],
                      "title": "Lambda R1 against the diagonal block", "logx": True, "logy": True})


RUNNERS = {
    "kofT-scan": _kofT_scan,
    "tgcc": _tgcc,
    "times-compare": _times_compare,
    "lower-bound": _lower_bound,
    "shell": _shell,
    "blowup-scan": _blowup_scan,
    "hum": _hum,
    "potential-scan": _potential_scan,
    "damped-beam": _damped_beam,
    "egorov": _egorov,
    "smoothing": _smoothing,
}


def execute(cfg) -> ExperimentResult:
    """Run one experiment in memory."""
    check_manifold(cfg.experiment, cfg.manifold)
    res = ExperimentResult()
    try:
        RUNNERS[cfg.experiment](cfg, res)
    except WaveGCCError as e:
        raise type(e)(f"experiment {cfg.experiment!r}: {e}") from e
    return res


def write_csv(path, table: Table):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table.columns)
        for row in table.rows:
            w.writerow([fmt(v) for v in row])


def run(cfg, out_dir, figures=True):
    """Execute ``cfg`` and write CSVs, plot.py, figures and manifest.json to
    ``out_dir``.  Returns (ExperimentResult, manifest dict)."""
    from . import plotting

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    res = execute(cfg)
    wall = time.perf_counter() - t0
    files = {}
    for name, tab in res.tables.items():
        fn = f"{name}.csv"
        write_csv(out / fn, tab)
        files[name] = fn
    for j, spec in enumerate(res.plots):
        spec.setdefault("png", f"figure_{j + 1}_{spec['csv'][:-4]}.png")
    script = plotting.write_script(out / "plot.py", cfg.experiment, res.plots)
    rendered, fig_error = [], None
    if figures and res.plots:
        try:
            rendered = plotting.render(script)
        except Exception as e:  # figures are a convenience; never fail the run
            fig_error = f"{type(e).__name__}: {e}"
    manifest = {
        "experiment": cfg.experiment,
        "version": __version__,
        "config": cfg.raw,
        "config_source": cfg.source,
        "seed": cfg.seed,
        "tables": files,
        "plot_script": script.name,
        "figures": rendered,
        "assertions": [{"name": a.name, "passed": a.passed, "detail": a.detail} for a in res.assertions],
        "status": "pass" if res.passed else "fail",
        "summary": res.summary,
    }
    if fig_error:
        manifest["figure_error"] = fig_error
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(_json_safe(manifest), fh, indent=2, sort_keys=True)
        fh.write("\n")
    # wall time lives apart so that manifest.json is reproducible byte for byte
    with open(out / "timing.json", "w", encoding="utf-8") as fh:
        json.dump({"wall_time_s": wall}, fh)
        fh.write("\n")
    manifest["wall_time_s"] = wall
    return res, manifest
