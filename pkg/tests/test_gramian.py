import math

import numpy as np
import pytest

from wavegcc.errors import InvalidInputError, ResolutionError
from wavegcc.fixtures import DISK_COMPLEMENT, STRIP, TORUS
from wavegcc.geometry import PhasePoint
from wavegcc.gramian import (
    assemble_gramian,
    assemble_gramian_potential,
    beam_coordinates,
    cost_scan,
    direct_quadratic_form,
    egorov_probe,
    hum_control,
    hum_cost_identity,
    identity_lambda_min,
    load_gramian,
    min_eig,
    random_smooth_data,
    save_gramian,
    operator_norm,
    sample_observation,
    smoothing_probe,
)
from wavegcc.gramian import _dense_smoothing, _Observation, _smoothing_ops
from wavegcc.regions import whole_manifold
from wavegcc.spectral import SpectralBasis

WHOLE = whole_manifold(TORUS, 1.0)


def rand_y(G, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(G.dim) + 1j * rng.standard_normal(G.dim)


@pytest.mark.parametrize("T", [0.3, 0.7, 2.0])
def test_identity_gramian_lambda_min(T):
    G = assemble_gramian(WHOLE, T, 0.0, 4, quadrature="exact")
    assert min_eig(G).value == pytest.approx(identity_lambda_min(G.basis, T), abs=1e-12)
    # Gauss-Legendre nodes resolve the same integrals
    Gq = assemble_gramian(WHOLE, T, 0.0, 4)
    assert min_eig(Gq).value == pytest.approx(identity_lambda_min(G.basis, T), abs=1e-10)


def test_small_gramian_brute_force():
    # K_max = 2: every entry against the direct time integral of |b v|^2
    G = assemble_gramian(DISK_COMPLEMENT, 0.8, 0.0, 2, dense=True, max_tail=1.0)
    t, w = G.nodes
    E = np.eye(G.dim)
    for i in range(0, G.dim, 7):
        assert G.quadratic(E[i]) == pytest.approx(
            direct_quadratic_form(DISK_COMPLEMENT, 0.8, 0.0, G.basis, E[i], t, w), rel=1e-10)


@pytest.mark.parametrize("s", [0.0, 1.0])
def test_quadratic_form_identity(s):
    G = assemble_gramian(DISK_COMPLEMENT, 1.0, s, 8)
    t, w = G.nodes
    for seed in range(5):
        y = rand_y(G, seed)
        q = direct_quadratic_form(DISK_COMPLEMENT, 1.0, s, G.basis, y, t, w)
        assert G.quadratic(y) == pytest.approx(q, rel=1e-10)


def test_hermitian_psd_and_matrix_free_agree():
    G = assemble_gramian(DISK_COMPLEMENT, 0.9, 0.0, 8)
    assert G.hermitian_residual() <= 1e-12
    ev = np.linalg.eigvalsh(G.dense)
    assert ev[0] >= -1e-12 * ev[-1]
    Gm = assemble_gramian(DISK_COMPLEMENT, 0.9, 0.0, 8, dense=False)
    Y = np.stack([rand_y(G, 1), rand_y(G, 2)], axis=1)
    np.testing.assert_allclose(Gm.matvec(Y), G.matvec(Y), atol=1e-11 * np.abs(G.matvec(Y)).max())


def test_iterative_eig_upper_bound():
    G = assemble_gramian(DISK_COMPLEMENT, 0.9, 0.0, 8)
    Gm = assemble_gramian(DISK_COMPLEMENT, 0.9, 0.0, 8, dense=False)
    exact = min_eig(G).value
    approx = min_eig(Gm, tol=1e-6, maxiter=400)
    assert approx.value >= exact - 1e-10
    assert approx.value == pytest.approx(exact, rel=1e-3)


def test_unresolved_region_rejected():
    with pytest.raises(ResolutionError):
        assemble_gramian(STRIP, 1.0, 0.0, 8)
    with pytest.raises(InvalidInputError):
        assemble_gramian(WHOLE, -1.0)


def test_shell_lambda_nondecreasing():
    G = assemble_gramian(DISK_COMPLEMENT, 0.75, 0.0, 8)
    vals = [min_eig(G, shell=k).value for k in (0.0, 40.0, 160.0, 600.0)]
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))


def test_beam_rayleigh_near_average():
    from wavegcc.control_times import geodesic_average

    G = assemble_gramian(DISK_COMPLEMENT, 1.0, 0.0, 24)
    rho = PhasePoint([0.5, 0.1], [1.0, 0.0])  # horizontal line through the hole
    y = beam_coordinates(G.basis, rho, 12, 0.0)
    R = G.quadratic(y)
    avg = geodesic_average(TORUS, DISK_COMPLEMENT, rho, 1.0)
    assert abs(R - avg) <= 0.25 * avg


def test_hum_identity_cost_and_control():
    T = 1.3
    G = assemble_gramian(WHOLE, T, 0.0, 4)
    u0, u1 = random_smooth_data(G.basis, 3, np.random.default_rng(0))
    r = hum_control(u0, u1, WHOLE, T, G=G)
    assert r.cost == pytest.approx(hum_cost_identity(G.basis, u0, u1, T), rel=1e-6)
    assert r.final_E0 <= 1e-6 * r.initial_E0


def test_hum_disk_steers_to_rest():
    G = assemble_gramian(DISK_COMPLEMENT, 1.0, 0.0, 8)
    u0, u1 = random_smooth_data(G.basis, 4, np.random.default_rng(1))
    r = hum_control(u0, u1, DISK_COMPLEMENT, 1.0, G=G)
    assert r.final_E0 <= 1e-6 * r.initial_E0
    # cost is quadratic in the data
    r2 = hum_control(2 * u0, 2 * u1, DISK_COMPLEMENT, 1.0, G=G)
    assert r2.cost == pytest.approx(4 * r.cost, rel=1e-6)
    z = hum_control(0 * u0, 0 * u1, DISK_COMPLEMENT, 1.0, G=G)
    assert z.cost == 0.0 and z.final_E0 == 0.0


def test_save_load_roundtrip(tmp_path):
    G = assemble_gramian(DISK_COMPLEMENT, 0.5, 1.0, 4, max_tail=1.0)
    p = tmp_path / "g.npz"
    save_gramian(G, p)
    header, A = load_gramian(p)
    np.testing.assert_array_equal(A, G.dense)
    assert header["K_max"] == 4 and header["s"] == 1.0 and header["T"] == 0.5
    assert len(header["b_sha256"]) == 64


def test_egorov_constant_exact_and_converges():
    rho = PhasePoint([0.3, 0.3], [1.0, 0.0])
    assert egorov_probe(1.0, 0.4, rho, 8, 16).error <= 1e-14  # unit-norm beam, rounding only

    def a(x):
        return 1.0 + 0.5 * np.cos(2 * np.pi * x[..., 0]) * np.cos(2 * np.pi * x[..., 1])

    e8 = egorov_probe(a, 0.4, rho, 8, 16).error
    e16 = egorov_probe(a, 0.4, rho, 16, 32).error
    assert e16 < e8


def test_smoothing_constant_bounded():
    res = smoothing_probe(WHOLE, 1.0, 0.0, [4, 8])
    assert all(r.off_diagonal_norm <= 1.0 + 1e-12 for r in res)
    assert res[1].diagonal_norm > res[0].diagonal_norm
    with pytest.raises(InvalidInputError):
        smoothing_probe(WHOLE, 1.0, 0.0, [8, 4])


@pytest.mark.parametrize("s", [0.0, 1.0])
def test_matrix_free_smoothing_matches_dense(s):
    basis = SpectralBasis(8)
    obs = _Observation(basis, sample_observation(DISK_COMPLEMENT, basis), s)
    dense = _dense_smoothing(basis, obs, 0.5)
    ops = _smoothing_ops(basis, obs, 0.5)
    rng = np.random.default_rng(5)
    x = rng.standard_normal(basis.dim) + 1j * rng.standard_normal(basis.dim)
    for A, op in zip(dense, ops):
        ref = np.linalg.norm(A, 2)
        assert np.linalg.norm(op.matvec(x) - A @ x) <= 1e-6 * np.linalg.norm(A @ x)
        assert np.linalg.norm(op.rmatvec(x) - A.conj().T @ x) <= 1e-6 * np.linalg.norm(A.conj().T @ x)
        assert operator_norm(op, x) == pytest.approx(ref, rel=1e-6)


def test_potential_gramian_reduces_to_free():
    # c == 1 is the free Klein-Gordon flow; b == 1 observes the full H^1 norm
    T = 0.5
    Gp = assemble_gramian_potential(WHOLE, 1.0, T, s=1.0, K_max=2, dt=1e-3)
    Gf = assemble_gramian(WHOLE, T, 1.0, 2, quadrature="exact")
    assert np.max(np.abs(Gp.dense - Gf.dense)) <= 1e-3 * np.max(np.abs(Gf.dense))


def test_cost_scan_monotone():
    rows, mono = cost_scan(DISK_COMPLEMENT, 0.0, 8, [0.6, 1.0], nx=8, na=12)
    assert mono
    assert all(r.lower_bound_ok for r in rows)
    assert rows[1].hum_cost <= rows[0].hum_cost * (1 + 1e-9)
    assert rows[0].inv_K == pytest.approx(1.0 / rows[0].K_of_T)
    assert all(math.isfinite(r.log_C_obs) for r in rows)


def test_random_smooth_data_support():
    B = SpectralBasis(6)
    u0, u1 = random_smooth_data(B, 2, np.random.default_rng(0))
    far = (np.abs(B.k1) > 2) | (np.abs(B.k2) > 2)
    assert not np.any(u0[far]) and not np.any(u1[far])
