import math

import numpy as np
import pytest
from scipy.integrate import quad

from wavegcc.control_times import (
    K_general,
    K_of_T,
    LowerOrderData,
    equality_case_diagnostic,
    eps_zero,
    geodesic_average,
    n_samples,
    t_comparison,
    t_gcc,
    weighted_average,
)
from wavegcc.errors import InvalidInputError
from wavegcc.fixtures import CROSSING, DISK_COMPLEMENT, STRIP, TORUS, WHOLE_TORUS
from wavegcc.geometry import PhasePoint, random_phase_points
from wavegcc.regions import evaluate


def test_n_samples_odd():
    assert n_samples(0.1) == 65
    assert n_samples(1.0) % 2 == 1


def test_average_identity_and_zero():
    rho = PhasePoint([0.2, 0.3], [0.6, 0.8])
    assert geodesic_average(TORUS, WHOLE_TORUS, rho, 1.7) == pytest.approx(1.7, abs=1e-9)
    assert geodesic_average(TORUS, WHOLE_TORUS, rho, 0.0) == 0.0
    with pytest.raises(InvalidInputError):
        geodesic_average(TORUS, WHOLE_TORUS, rho, -1.0)


def test_strip_average_matches_1d_quadrature():
    # horizontal ray over one period crosses the strip profile once
    rho = PhasePoint([0.0, 0.0], [1.0, 0.0])
    ref, _ = quad(lambda s: float(evaluate(STRIP, TORUS, np.array([s, 0.0]))) ** 2, 0.0, 1.0,
                  points=[0.3, 0.35, 0.45, 0.5], epsabs=1e-12)
    # fixed step 0.005 over 0.05-wide transitions: Simpson error ~ 1e-4
    assert geodesic_average(TORUS, STRIP, rho, 1.0) == pytest.approx(ref, abs=1e-4)


def test_K_identity():
    r = K_of_T(TORUS, WHOLE_TORUS, 1.25, nx=6, na=8)
    assert r.value == pytest.approx(1.25, abs=1e-9)


def test_K_strip_zero():
    for T in (1.0, 5.0):
        assert K_of_T(TORUS, STRIP, T, nx=12, na=8).value <= 1e-12


def test_K_monotone_and_min_property():
    Ts = [0.4, 0.6, 0.8, 1.0]
    vals = [K_of_T(TORUS, DISK_COMPLEMENT, T, nx=12, na=16).value for T in Ts]
    assert all(b >= a - 1e-9 for a, b in zip(vals, vals[1:]))
    rng = np.random.default_rng(3)
    X, XI = random_phase_points(TORUS, 30, rng)
    avg = geodesic_average(TORUS, DISK_COMPLEMENT, PhasePoint(X, XI), 1.0)
    assert np.all(avg >= vals[-1] - 1e-9)


def test_K_disk_minimiser_through_centre():
    r = K_of_T(TORUS, DISK_COMPLEMENT, 1.0, nx=12, na=16)
    assert r.value > 0
    # the minimising line passes (nearly) through (0.5, 0.5)
    x, xi = np.asarray(r.rho.x), np.asarray(r.rho.xi)
    d = TORUS.chart_delta(x, np.array([0.5, 0.5]))
    perp = abs(d[0] * xi[1] - d[1] * xi[0]) / np.linalg.norm(xi)
    assert perp <= 0.02


def test_tgcc_fixtures():
    assert t_gcc(TORUS, WHOLE_TORUS, tol=5e-3, nx=6, na=8).value <= 5e-3
    s = t_gcc(TORUS, STRIP)
    assert math.isinf(s.value) and s.certificate == "analytic"
    np.testing.assert_allclose(np.abs(s.rho.xi), [0.0, 1.0])
    assert geodesic_average(TORUS, STRIP, s.rho, 10.0) <= eps_zero(STRIP, 10.0)


@pytest.mark.slow
def test_tgcc_disk():
    r = t_gcc(TORUS, DISK_COMPLEMENT)
    assert r.value == pytest.approx(0.5, abs=0.02)


def test_comparison_and_negative_control():
    r = t_comparison(TORUS, CROSSING, resolution=64, nx=16, na=24)
    assert r.t_uc < r.t_gcc
    assert not r.equality
    # the equality diagnostic fails away from the equality case
    d = equality_case_diagnostic(TORUS, CROSSING, r.calL.argmax, R0=r.calL.value)
    assert not d.passed


def test_equality_diagnostic_disk():
    d = equality_case_diagnostic(TORUS, DISK_COMPLEMENT, np.array([0.5, 0.5]))
    assert d.passed
    np.testing.assert_allclose(d.exit_times, 0.25, atol=0.01)


def test_weighted_average_reduces_without_lot():
    rho = PhasePoint([0.2, 0.7], [0.6, -0.8])
    lot = LowerOrderData()
    a = geodesic_average(TORUS, DISK_COMPLEMENT, rho, 1.3)
    assert weighted_average(TORUS, DISK_COMPLEMENT, lot, rho, 1.3, +1) == pytest.approx(a, rel=1e-12)


def test_weighted_average_closed_form():
    a, T = 0.7, 1.5
    lot = LowerOrderData(b0=((a, 0, 0, 0, 0.0),))
    rho = PhasePoint([0.1, 0.1], [1.0, 0.0])
    val = weighted_average(TORUS, WHOLE_TORUS, lot, rho, T, +1)
    assert val == pytest.approx((math.exp(a * T) - 1) / a, rel=1e-8)


def test_weighted_symmetry():
    rng = np.random.default_rng(5)
    lot = LowerOrderData(b0=((0.3, 0, 1, 0, 0.2), (0.1, 1, 0, 1, 0.0)),
                         b1=(((0.4, 0, 0, 1, 0.5),), ((0.2, 1, 1, 0, 0.1),)))
    X, XI = random_phase_points(TORUS, 10, rng)
    for x, xi in zip(X, XI):
        rho = PhasePoint(x, xi)
        gp = weighted_average(TORUS, DISK_COMPLEMENT, lot, rho, 1.2, +1)
        gm = weighted_average(TORUS, DISK_COMPLEMENT, lot, rho.flip(), 1.2, -1)
        assert abs(gp - gm) <= 1e-6 * max(1.0, gp)


def test_K_general_lot_zero_matches():
    a = K_of_T(TORUS, DISK_COMPLEMENT, 1.0, nx=8, na=12).value
    g = K_general(TORUS, DISK_COMPLEMENT, LowerOrderData(), 1.0, nx=8, na=12)
    assert g.value == pytest.approx(a, abs=1e-6)
    assert abs(g.plus.value - g.minus.value) <= 1e-4
