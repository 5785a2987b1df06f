"""Acceptance criteria 1-14.  Each test prints one PASS/FAIL line (also
collected in the terminal summary) before asserting.  Tolerances are the
ones pinned by the acceptance list; runtimes are measured in-process."""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from wavegcc.cli import main
from wavegcc.config import from_dict
from wavegcc.control_times import (
    K_general,
    K_of_T,
    LowerOrderData,
    equality_case_diagnostic,
    t_comparison,
    t_gcc,
    weighted_average,
)
from wavegcc.errors import InconsistencyError
from wavegcc.experiments import execute
from wavegcc.fixtures import (
    CAP_ALPHA,
    DISK_COMPLEMENT,
    EDGE,
    EGOROV_RHO,
    EGOROV_T,
    SPHERE,
    SPHERE_CAP,
    STRIP,
    TORUS,
    egorov_symbol,
)
from wavegcc.geometry import PerturbedTorus2, PhasePoint, random_phase_points
from wavegcc.gramian import (
    assemble_gramian,
    egorov_probe,
    hum_control,
    hum_cost_identity,
    random_smooth_data,
    smoothing_probe,
)
from wavegcc.regions import Ball, Hole, ObservationFunction, Strip, calL_details, t_uc, whole_manifold
from wavegcc.spectral import (
    SpectralBasis,
    energy,
    energy_c,
    free_solution,
    growth_rate,
    hs_norm,
    solve_potential,
    split_sigma,
    unsplit_sigma,
)

ROOT = Path(__file__).resolve().parent.parent
DISK_TGCC = 0.5  # hand-derived: longest chord of the removed disk
BUMPY = PerturbedTorus2((1.0, 1.0), ((1, 0, 0.1, 0.0), (1, 1, 0.05, 0.7)), grid_resolution=128)
DISK = {"components": [{"type": "hole", "center": [0.5, 0.5], "r0": 0.25, "r1": 0.25 + EDGE}]}


def disk_cfg(experiment, solver=None, params=None, **extra):
    d = {"experiment": experiment, "manifold": {"kind": "flat_torus"}, "region": DISK,
         "solver": solver or {}, "params": params or {}}
    d.update(extra)
    return from_dict(d)


def table(res, name):
    t = res.tables[name]
    return [dict(zip(t.columns, r)) for r in t.rows]


# -- 1 ---------------------------------------------------------------------------


def _geometry_suite(M, rng, n=100):
    X, XI = random_phase_points(M, n, rng)
    # lambda conservation, |t| <= 10
    t = rng.uniform(-10, 10, n)
    xt, xit = M.flow(X, XI, t)
    lam_err = float(np.max(np.abs(M.lam(xt, xit) - 1.0)))
    # group law, |s|, |t| <= 5
    s, u = rng.uniform(-5, 5, n), rng.uniform(-5, 5, n)
    a = M.flow(*M.flow(X, XI, s), u)
    b = M.flow(X, XI, s + u)
    if M is SPHERE:
        group = float(np.max(np.linalg.norm(M.embed(a[0]) - M.embed(b[0]), axis=-1)))
    else:
        group = float(np.max(np.abs(M.chart_delta(a[0], b[0]))))
    # unit speed: dist(x(t), x(t + h)) = h + O(h^2)
    h = 1e-4
    x1, _ = M.flow(X, XI, 0.3)
    x2, _ = M.flow(X, XI, 0.3 + h)
    if M is BUMPY:
        # Riemannian length of the short chord: exp(u) |dx| to O(h^2)
        mid = x1 + 0.5 * M.chart_delta(x1, x2)
        d = np.exp(M.conformal_factor(mid)) * np.linalg.norm(M.chart_delta(x1, x2), axis=-1)
    else:
        d = np.asarray(M.distance(x1, x2))
    speed = float(np.max(np.abs(d - h))) / h
    # involution residual (|t| <= 2 on the RK4 manifold)
    ti = rng.uniform(-2, 2, n) if M is BUMPY else rng.uniform(-10, 10, n)
    from wavegcc.geometry import flow_involution_check

    inv = max(flow_involution_check(M, PhasePoint(X[i], XI[i]), ti[i]) for i in range(n)) \
        if M is not BUMPY else flow_involution_check(M, PhasePoint(X, XI), ti)
    return lam_err, group, speed, inv


def test_criterion_01_geometry(record):
    rng = np.random.default_rng(1)
    BUMPY.flow(np.zeros(2), np.array([1.0, 0.0]), 1e-3)  # load the compiled kernel
    t0 = time.perf_counter()
    rows, ok = [], True
    for name, M, lam_tol, group_tol, inv_tol in (("torus", TORUS, 1e-12, 1e-12, 1e-12),
                                                 ("sphere", SPHERE, 1e-12, 1e-10, 1e-12),
                                                 ("perturbed", BUMPY, 1e-7, 1e-6, 1e-6)):
        lam_err, group, speed, inv = _geometry_suite(M, rng)
        good = lam_err <= lam_tol and group <= group_tol and speed <= 1e-3 and inv <= inv_tol
        ok &= good
        rows.append(f"{name}: lam {lam_err:.1e} group {group:.1e} speed {speed:.1e} inv {inv:.1e}")
    wall = time.perf_counter() - t0
    ok &= wall < 10.0
    record(1, ok, "; ".join(rows) + f"; {wall:.1f} s (< 10 s)")
    assert ok


# -- 2 ---------------------------------------------------------------------------


def test_criterion_02_fixture_times(record):
    t0 = time.perf_counter()
    parts, ok = [], True
    r = t_comparison(TORUS, DISK_COMPLEMENT, resolution=128)
    d = equality_case_diagnostic(TORUS, DISK_COMPLEMENT, r.calL.argmax, R0=r.calL.value)
    good = abs(r.t_uc - 0.5) <= 0.02 and abs(r.t_gcc - 0.5) <= 0.02 and d.passed
    ok &= good
    parts.append(f"disk T_UC {r.t_uc:.4f} T_GCC {r.t_gcc:.4f} diagnostic {d.passed}")
    cap = 2 * math.pi / 3
    assert CAP_ALPHA == pytest.approx(cap)
    rc = t_comparison(SPHERE, SPHERE_CAP, resolution=128)
    good = abs(rc.t_uc - cap) <= 0.04 and abs(rc.t_gcc - cap) <= 0.04
    ok &= good
    parts.append(f"cap T_UC {rc.t_uc:.4f} T_GCC {rc.t_gcc:.4f} (2pi/3 = {cap:.4f})")
    g = t_gcc(TORUS, STRIP)
    vertical = np.allclose(np.abs(g.rho.xi), [0.0, 1.0])
    kmax = max(K_of_T(TORUS, STRIP, T, nx=12, na=16).value for T in (1.0, 5.0, 10.0))
    good = math.isinf(g.value) and vertical and kmax <= 1e-8
    ok &= good
    parts.append(f"strip T_GCC {g.value} vertical ray {vertical} max K(T<=10) {kmax:.1e}")
    wall = time.perf_counter() - t0
    ok &= wall < 120.0
    record(2, ok, "; ".join(parts) + f"; {wall:.0f} s (< 120 s)")
    assert ok


# -- 3 ---------------------------------------------------------------------------


def _random_region(rng, i):
    kind = i % 3
    if kind == 0:  # complement of a disc: GCC holds
        r = rng.uniform(0.08, 0.3)
        return ObservationFunction((Hole(tuple(rng.uniform(0, 1, 2)), r, r + EDGE),))
    if kind == 1:  # two crossing strips: complement is a rectangle
        w1, w2 = rng.uniform(0.15, 0.4, 2)
        a1, a2 = rng.uniform(0, 1, 2)
        return ObservationFunction((Strip(1, a1, w1 - 2 * EDGE, w1), Strip(2, a2, w2 - 2 * EDGE, w2)))
    # two balls: usually fails GCC (T_GCC = +inf)
    balls = tuple(Ball(tuple(rng.uniform(0, 1, 2)), r0, r0 + EDGE) for r0 in rng.uniform(0.1, 0.3, 2))
    return ObservationFunction(balls)


def test_criterion_03_random_configurations(record):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    bad, worst = [], -math.inf
    for i in range(20):
        b = _random_region(rng, i)
        try:
            r = t_comparison(TORUS, b, resolution=64, nx=16, na=24)
            if math.isfinite(r.t_gcc):
                worst = max(worst, r.t_uc - r.t_gcc - r.tolerance)
        except InconsistencyError as e:
            bad.append(f"config {i}: {e}")
    wall = time.perf_counter() - t0
    ok = not bad and wall < 600.0
    record(3, ok, f"{20 - len(bad)}/20 satisfy T_UC <= T_GCC + tol (max margin {worst:.3g}); "
                  f"{wall:.0f} s (< 600 s)" + ("; " + "; ".join(bad) if bad else ""))
    assert ok


# -- 4 ---------------------------------------------------------------------------


def test_criterion_04_weighted_averages(record):
    rng = np.random.default_rng(4)
    lot = LowerOrderData(b0=((0.3, 0, 1, 0, 0.2), (0.15, 1, 1, 1, 0.0)),
                         b1=(((0.4, 0, 0, 1, 0.5),), ((0.2, 1, 1, 0, 0.1), (0.1, 0, 2, 1, 0.0))))
    X, XI = random_phase_points(TORUS, 50, rng)
    Ts = rng.uniform(0.2, 2.0, 50)
    sym = 0.0
    for x, xi, T in zip(X, XI, Ts):
        rho = PhasePoint(x, xi)
        gp = weighted_average(TORUS, DISK_COMPLEMENT, lot, rho, T, +1)
        gm = weighted_average(TORUS, DISK_COMPLEMENT, lot, rho.flip(), T, -1)
        sym = max(sym, abs(gp - gm))
    a, T = 0.7, 1.5
    g = weighted_average(TORUS, whole_manifold(TORUS), LowerOrderData(b0=((a, 0, 0, 0, 0.0),)),
                         PhasePoint([0.1, 0.2], [0.6, 0.8]), T, +1)
    closed = abs(g - (math.exp(a * T) - 1) / a)
    kg = K_general(TORUS, DISK_COMPLEMENT, lot, 1.0, nx=8, na=12)
    minima = abs(kg.plus.value - kg.minus.value)
    ok = sym <= 1e-6 and closed <= 1e-8 and minima <= 1e-4
    record(4, ok, f"symmetry {sym:.2e} (<= 1e-6), closed form {closed:.2e} (<= 1e-8), "
                  f"sign minima {minima:.2e} (<= 1e-4)")
    assert ok


# -- 5 ---------------------------------------------------------------------------


def test_criterion_05_spectral(record):
    rng = np.random.default_rng(5)
    B = SpectralBasis(8)
    mask = (np.abs(B.k1) <= 3) & (np.abs(B.k2) <= 3)
    u0 = (rng.standard_normal(B.shape) + 1j * rng.standard_normal(B.shape)) * mask
    u1 = (rng.standard_normal(B.shape) + 1j * rng.standard_normal(B.shape)) * mask
    vp, vm = split_sigma(u0, u1, B)
    iso = abs(hs_norm(B, vp, 1.0) ** 2 + hs_norm(B, vm, 1.0) ** 2 - energy(u0, u1, 1.0, B)) / energy(u0, u1, 1.0, B)
    back = np.max(np.abs(unsplit_sigma(vp, vm, B)[0] - u0))
    E0 = energy(u0, u1, 1.0, B)
    free = max(abs(energy(*free_solution(B, u0, u1, t), 1.0, B) - E0) / E0 for t in (0.5, 4.0, 50.0))
    x = B.grid_points()
    c = 1.0 + 0.5 * np.cos(2 * np.pi * x[..., 0]) * np.sin(2 * np.pi * x[..., 1])
    tr = solve_potential(B, u0, u1, c, 4.0, 1e-3, n_save=81)
    Ec = np.array([energy_c(a, b, c, B) for a, b in zip(tr.v0, tr.v1)])
    drift = float(np.max(np.abs(Ec - Ec[0])) / Ec[0])
    Bs = SpectralBasis(4)
    low = (np.abs(Bs.k1) <= 2) & (np.abs(Bs.k2) <= 2)
    w0 = rng.standard_normal(Bs.shape) * low
    w1 = rng.standard_normal(Bs.shape) * low
    ref = free_solution(Bs, w0, w1, 1.0)
    errs = []
    for dt in (0.01, 0.005, 0.0025):
        t2 = solve_potential(Bs, w0, w1, 1.0, 1.0, dt, n_save=2)
        errs.append(math.sqrt(energy(t2.v0[-1] - ref[0], t2.v1[-1] - ref[1], 1.0, Bs)))
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    ok = iso <= 1e-14 and back <= 1e-13 and free <= 1e-12 and drift <= 1e-4 and all(3.5 <= r <= 4.5 for r in ratios)
    record(5, ok, f"isometry {iso:.1e}, free energy {free:.1e} (<= 1e-12), E_c drift {drift:.1e} (<= 1e-4), "
                  f"convergence ratios {ratios[0]:.3f} {ratios[1]:.3f} (in [3.5, 4.5])")
    assert ok


# -- 6 ---------------------------------------------------------------------------


def test_criterion_06_growth_rate(record):
    rows, ok = [], True
    for r in (1.0, 1e2, 1e4):
        rate, _, _ = growth_rate(r)
        rel = abs(rate - math.sqrt(r)) / math.sqrt(r)
        ok &= rel <= 0.02
        rows.append(f"r={r:g}: {rate:.5g} vs {math.sqrt(r):g} ({rel:.1e})")
    record(6, ok, "; ".join(rows) + " (<= 2%)")
    assert ok


# -- 7 ---------------------------------------------------------------------------


def test_criterion_07_lower_bound(record):
    t0 = time.perf_counter()
    Ts = [f * DISK_TGCC for f in (1.2, 1.5, 2.0)]
    cfg = disk_cfg("lower-bound", {"K_max": 64, "eig_maxiter": 6},
                   {"T": Ts, "beam_k": 32, "beam_tol": 0.1, "eig_block": 3})
    rows = table(execute(cfg), "lower_bound")
    wall = time.perf_counter() - t0
    beam_ok = all(r["beam_relative_error"] <= 0.10 for r in rows)
    lb_ok = all(r["lambda_min"] <= r["K_of_T"] + r["tol_beam"] for r in rows)
    ok = beam_ok and lb_ok and wall < 1800
    record(7, ok, "; ".join(f"T={r['T']:.2f}: beam error {r['beam_relative_error']:.3f} (<= 0.10), "
                            f"lambda_min {r['lambda_min']:.4g} <= K {r['K_of_T']:.4g} + {r['tol_beam']:.3g}"
                            for r in rows) + f"; {wall:.0f} s (< 1800 s)")
    assert ok


# -- 8 ---------------------------------------------------------------------------


def test_criterion_08_shell(record):
    cfg = disk_cfg("shell", {"K_max": 16}, {"T": 1.5 * DISK_TGCC, "kappa_modes": [1, 2, 4, 8]})
    res = execute(cfg)
    rows = table(res, "shell")
    ratios = [r["ratio_to_K"] for r in rows]
    mono = all(b >= a - 1e-8 for a, b in zip(ratios, ratios[1:]))
    kap = res.summary["stabilized_kappa"]
    at = next(r["ratio_to_K"] for r in rows if r["kappa"] == kap)
    ok = mono and at >= 0.5
    record(8, ok, f"ratios {' '.join(f'{x:.4f}' for x in ratios)} nondecreasing {mono}; "
                  f"stabilized kappa {kap:.4g}: ratio {at:.4f} (>= 0.5)")
    assert ok


# -- 9 ---------------------------------------------------------------------------


def test_criterion_09_hum(record):
    T = 2 * DISK_TGCC
    G = assemble_gramian(DISK_COMPLEMENT, T, 0.0, 12)
    u0, u1 = random_smooth_data(G.basis, 8, np.random.default_rng(9))
    r = hum_control(u0, u1, DISK_COMPLEMENT, T, tol=1e-8, G=G)
    ratio = r.final_E0 / r.initial_E0
    W = whole_manifold(TORUS)
    Gw = assemble_gramian(W, T, 0.0, 8)
    w0, w1 = random_smooth_data(Gw.basis, 8, np.random.default_rng(10))
    rw = hum_control(w0, w1, W, T, tol=1e-8, G=Gw)
    ref = hum_cost_identity(Gw.basis, w0, w1, T)
    rel = abs(rw.cost - ref) / ref
    ok = ratio <= 1e-6 and rel <= 1e-6
    record(9, ok, f"final/initial E0 {ratio:.2e} (<= 1e-6); b == 1 cost vs closed form {rel:.2e} (<= 1e-6)")
    assert ok


# -- 10 --------------------------------------------------------------------------


def test_criterion_10_blowup(record):
    cfg = disk_cfg("blowup-scan", {"K_max": 16}, {"T": [0.6, 0.75, 1.0, 1.25]})
    res = execute(cfg)
    rows = table(res, "blowup")
    lam = [r["lambda_min"] for r in rows]
    mono = all(b >= a * (1 - 1e-10) for a, b in zip(lam, lam[1:]))
    bound = all(r["lower_bound_ok"] for r in rows)
    ok = mono and bound
    record(10, ok, f"lambda_min {' '.join(f'{x:.4g}' for x in lam)} nondecreasing {mono}; "
                   f"<= K(T) + tol at every T {bound}; log C_obs vs 1/K(T) emitted")
    assert ok


# -- 11 --------------------------------------------------------------------------


def test_criterion_11_egorov(record):
    e16 = egorov_probe(egorov_symbol, EGOROV_T, EGOROV_RHO, 16, 32).error
    e64 = egorov_probe(egorov_symbol, EGOROV_T, EGOROV_RHO, 64, 128).error
    one = egorov_probe(1.0, EGOROV_T, EGOROV_RHO, 16, 32).error
    ok = e64 <= 0.7 * e16 and one <= 1e-14
    record(11, ok, f"error k=64 {e64:.4g} <= 0.7 x k=16 {e16:.4g}; a == 1 error {one:.1e}")
    assert ok


# -- 12 --------------------------------------------------------------------------


def test_criterion_12_smoothing(record):
    t0 = time.perf_counter()
    r16, r64 = smoothing_probe(DISK_COMPLEMENT, 0.5, 0.0, [16, 64])
    ones = smoothing_probe(whole_manifold(TORUS), 0.5, 0.0, [8, 16])
    const_ok = all(r.off_diagonal_norm <= 1.0 + 1e-12 for r in ones)
    grows = r64.diagonal_norm > r16.diagonal_norm and ones[1].diagonal_norm > ones[0].diagonal_norm
    ok = r64.off_diagonal_norm <= 2 * r16.off_diagonal_norm and const_ok and grows
    record(12, ok, f"off-diagonal K=64 {r64.off_diagonal_norm:.4f} <= 2 x K=16 {r16.off_diagonal_norm:.4f}; "
                   f"b == 1 norms {ones[0].off_diagonal_norm:.4f} {ones[1].off_diagonal_norm:.4f} (<= 1); "
                   f"diagonal {r16.diagonal_norm:.4g} -> {r64.diagonal_norm:.4g}; "
                   f"{time.perf_counter() - t0:.0f} s")
    assert ok


# -- 13 --------------------------------------------------------------------------


def test_criterion_13_damped_beam(record):
    cfg = from_dict({"experiment": "damped-beam", "manifold": {"kind": "flat_torus"}, "region": {"whole": True},
                     "lower_order": {"b0": [[0.25, 0, 0, 0, 0.0], [0.25, 0, 1, 0, 0.0]]},
                     "solver": {"K_max": 32, "dt": 1e-3}, "params": {"k": 16, "T": 2.0}})
    res = execute(cfg)
    row = table(res, "damped")[-1]
    r = row["energy_ratio"]
    ok = row["lower"] <= r <= row["upper"]
    record(13, ok, f"{row['lower']:.4f} <= E1(T)/E1(0) = {r:.4f} <= {row['upper']:.4f} (eps {row['eps']:.3g})")
    assert ok


# -- 14 --------------------------------------------------------------------------


def test_criterion_14_determinism(record, tmp_path):
    bad = []
    for name in ("whole_torus_kofT", "egorov", "disk_hum"):
        outs = [tmp_path / f"{name}_{i}" for i in (1, 2)]
        for o in outs:
            assert main(["run", str(ROOT / "configs" / f"{name}.toml"), "--out", str(o)]) == 0
        files = sorted(p.name for p in outs[0].iterdir() if p.name != "timing.json")
        bad += [f"{name}/{f}" for f in files if (outs[0] / f).read_bytes() != (outs[1] / f).read_bytes()]
        assert json.loads((outs[0] / "manifest.json").read_text())["status"] == "pass"
    ok = not bad
    record(14, ok, "repeated CLI runs byte-identical (CSVs, plot.py, PNGs, manifest.json)"
                   + ("; differing: " + ", ".join(bad) if bad else ""))
    assert ok
