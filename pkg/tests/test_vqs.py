import csv
import math

import numpy as np
import pytest

from vqsprice.decomposition import UnitaryTerm, WeightedUnitarySum, decompose_boundary_generator, decompose_F
from vqsprice.errors import DomainError
from vqsprice.fdm import Grid, assemble_F, euler_solve
from vqsprice.market import DerivativeContract, MarketModel
from vqsprice.quantum import AnsatzCircuit
from vqsprice.vqs import (
    VqsConfig,
    compute_M,
    compute_V,
    derivative_state,
    derivative_states,
    run_vqs,
    solve_step,
    vqs_state,
    vqs_vs_exact_report,
)

BASE_MODEL = MarketModel.single(0.001, 0.3, 1.0)
BASE_CALL = DerivativeContract.double_barrier_call(1.0, 0.5, 2.0, 1.0)


def random_point(ansatz, seed, theta0=1.7):
    rng = np.random.default_rng(seed)
    theta = np.concatenate([[theta0], rng.uniform(-math.pi, math.pi, ansatz.num_circuit_params)])
    base = rng.normal(size=1 << ansatz.n)
    return theta, base / np.linalg.norm(base)


def scalar_generator(n, rate):
    return WeightedUnitarySum(n, 1, (UnitaryTerm(-rate, ()),), rate)


def test_M00_is_one_in_both_modes():
    ansatz = AnsatzCircuit(2, 2)
    theta, base = random_point(ansatz, 0)
    assert compute_M(ansatz, theta, base)[0, 0] == pytest.approx(1.0, abs=1e-14)
    assert compute_M(ansatz, theta, base, "circuit")[0, 0] == 1.0


def test_M_is_a_symmetric_positive_semidefinite_gram_matrix():
    ansatz = AnsatzCircuit(3, 2)
    theta, base = random_point(ansatz, 1)
    M = compute_M(ansatz, theta, base)
    np.testing.assert_allclose(M, M.T, atol=1e-14)
    assert np.linalg.eigvalsh(M).min() > -1e-12
    D = derivative_states(ansatz, theta, base)
    np.testing.assert_allclose(M, D.T @ D, atol=1e-14)


def test_derivative_states_match_finite_differences():
    ansatz = AnsatzCircuit(3, 3)
    theta, base = random_point(ansatz, 2)
    D = derivative_states(ansatz, theta, base)
    eps = 1e-6
    for k in range(ansatz.num_params):
        e = np.zeros(ansatz.num_params)
        e[k] = eps
        fd = (vqs_state(ansatz, theta + e, base) - vqs_state(ansatz, theta - e, base)) / (2 * eps)
        np.testing.assert_allclose(D[:, k], fd, atol=1e-8)


def test_derivative_state_prefactor_scales_with_theta0():
    ansatz = AnsatzCircuit(2, 2)
    theta, base = random_point(ansatz, 3, theta0=1.0)
    doubled = theta.copy()
    doubled[0] = 2.0
    for k in (1, 4):
        a = derivative_state(ansatz, theta, k, base)
        b = derivative_state(ansatz, doubled, k, base)
        assert a.scale == pytest.approx(0.5) and b.scale == pytest.approx(1.0)
        np.testing.assert_allclose(b.vector(), 2 * a.vector(), atol=1e-14)
    assert derivative_state(ansatz, doubled, 0, base).scale == 1.0
    with pytest.raises(DomainError):
        derivative_state(ansatz, theta, ansatz.num_params, base)


def test_circuit_mode_matches_exact_mode():
    ansatz = AnsatzCircuit(2, 2)
    theta, base = random_point(ansatz, 4)
    m = MarketModel.single(0.03, 0.3, 1.0)
    c = DerivativeContract(1.0, (-1.0, 1.0), (0.5,), (2.0,), ("linear",), ("linear",))
    g = Grid.for_contract(c, 4)
    L = decompose_F(m, c, g)
    u = decompose_boundary_generator(m, c, g)
    np.testing.assert_allclose(compute_M(ansatz, theta, base, "circuit"), compute_M(ansatz, theta, base), atol=1e-12)
    for tau in (0.0, 0.6):
        np.testing.assert_allclose(
            compute_V(ansatz, theta, base, L, u, tau, "circuit"), compute_V(ansatz, theta, base, L, u, tau), atol=1e-10
        )


def test_exact_V_is_projection_of_the_generator():
    ansatz = AnsatzCircuit(2, 1)
    theta, base = random_point(ansatz, 5)
    g = Grid.for_contract(BASE_CALL, 4)
    L = decompose_F(BASE_MODEL, BASE_CALL, g)
    D = derivative_states(ansatz, theta, base)
    F = assemble_F(BASE_MODEL, BASE_CALL, g).F.toarray()
    np.testing.assert_allclose(compute_V(ansatz, theta, base, L), D.T @ F @ vqs_state(ansatz, theta, base), atol=1e-12)


def test_shot_estimates_lie_within_five_sigma():
    ansatz = AnsatzCircuit(2, 1)
    theta, base = random_point(ansatz, 6, theta0=1.0)
    exact = compute_M(ansatz, theta, base)
    shots = 20_000
    sampled = compute_M(ansatz, theta, base, "circuit", shots=shots, seed=9)
    # Each entry is (prefactor <= 1) * (2 p0 - 1), whose standard error is at most 1/sqrt(shots).
    assert np.abs(sampled - exact).max() < 5 / math.sqrt(shots)
    again = compute_M(ansatz, theta, base, "circuit", shots=shots, seed=9)
    np.testing.assert_array_equal(sampled, again)


def test_unknown_mode_rejected():
    ansatz = AnsatzCircuit(2, 1)
    theta, base = random_point(ansatz, 0)
    with pytest.raises(DomainError):
        compute_M(ansatz, theta, base, "approximate")


def test_complex_base_rejected():
    ansatz = AnsatzCircuit(1, 0)
    with pytest.raises(DomainError):
        compute_M(ansatz, [1.0, 0.0], np.array([1.0, 1j]))


# ------------------------------------------------------------- solve_step


def test_solve_step_identity():
    sol = solve_step(np.eye(3), np.array([1.0, 2.0, 3.0]), reg=0.0)
    np.testing.assert_allclose(sol.theta_dot, [1, 2, 3])
    assert sol.residual == pytest.approx(0.0) and not sol.fallback


def test_solve_step_regularisation_shrinks():
    sol = solve_step(np.diag([1.0, 1e-6]), np.array([1.0, 1e-6]), reg=1e-6)
    assert sol.theta_dot[1] == pytest.approx(0.5)


def test_solve_step_singular_matrix_falls_back_to_least_squares():
    M = np.array([[1.0, 1.0], [1.0, 1.0]])
    sol = solve_step(M, np.array([2.0, 2.0]), reg=0.0)
    assert sol.fallback
    np.testing.assert_allclose(sol.theta_dot, [1.0, 1.0], atol=1e-12)


@pytest.mark.parametrize(
    "M, V, reg",
    [(np.eye(2), np.ones(3), 0.0), (np.eye(2), np.array([np.nan, 0.0]), 0.0), (np.eye(2), np.ones(2), -1.0)],
)
def test_solve_step_rejects_bad_input(M, V, reg):
    with pytest.raises(DomainError):
        solve_step(M, V, reg)


# ---------------------------------------------------------------- run_vqs


def test_scalar_generator_decays_theta0_only():
    rate, dtau, tau_end = 0.5, 1e-3, 1.0
    ansatz = AnsatzCircuit(2, 2)
    theta, base = random_point(ansatz, 7, theta0=1.0)
    traj = run_vqs(ansatz, theta, base, scalar_generator(2, rate), None, VqsConfig(dtau, tau_end, reg=0.0))
    assert abs(traj.final[0] - math.exp(-rate * tau_end)) <= 2 * rate**2 * tau_end * dtau
    # Redundant angles may drift in the null space of M; the direction may not.
    start, end = vqs_state(ansatz, theta, base), vqs_state(ansatz, traj.final, base)
    np.testing.assert_allclose(end / np.linalg.norm(end), start / np.linalg.norm(start), atol=1e-6)


def test_first_step_theta0_rate_is_minus_r_theta0():
    ansatz = AnsatzCircuit(2, 2)
    theta, base = random_point(ansatz, 8, theta0=1.3)
    L = scalar_generator(2, 0.2)
    sol = solve_step(compute_M(ansatz, theta, base), compute_V(ansatz, theta, base, L), reg=0.0)
    assert sol.theta_dot[0] == pytest.approx(-0.2 * 1.3, rel=1e-8)


def test_run_vqs_tracks_the_classical_solution():
    g = Grid.for_contract(BASE_CALL, 4)
    b = assemble_F(BASE_MODEL, BASE_CALL, g)
    v0 = b.initial_values()
    ansatz = AnsatzCircuit(2, 2)
    theta = np.zeros(ansatz.num_params)
    theta[0] = np.linalg.norm(v0)
    base = v0 / theta[0]
    cfg = VqsConfig(1e-3, 0.1, snapshots=(0.05,))
    traj = run_vqs(ansatz, theta, base, decompose_F(BASE_MODEL, BASE_CALL, g), None, cfg)
    classical = euler_solve(b, v0, 1e-3, 0.1, snapshots=(0.05,))
    rows = vqs_vs_exact_report(traj, ansatz, base, classical)
    assert [r.tau for r in rows] == pytest.approx([0.0, 0.05, 0.1])
    assert rows[0].fidelity == pytest.approx(1.0, abs=1e-14)
    assert rows[0].theta0_ratio == 1.0 and rows[0].norm_ratio == 1.0
    assert min(r.fidelity for r in rows) > 0.999
    assert rows[-1].theta0_ratio == pytest.approx(rows[-1].norm_ratio, rel=1e-2)


def test_trajectory_records_snapshots_and_diagnostics(tmp_path):
    ansatz = AnsatzCircuit(1, 0)
    traj = run_vqs(ansatz, [1.0, 0.3], [1.0, 0.0], scalar_generator(1, 0.1), None, VqsConfig(0.1, 0.5, snapshots=(0.25,)))
    assert 0.25 in list(np.round(traj.times, 12))
    assert traj.times[0] == 0.0 and traj.times[-1] == pytest.approx(0.5)
    assert np.all(np.isfinite(traj.cond)) and len(traj.cond) == len(traj.times)
    with pytest.raises(KeyError):
        traj.at(0.33)
    traj.to_csv(tmp_path / "t.csv")
    with open(tmp_path / "t.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["tau", "theta_0", "theta_1", "cond", "residual"]
    assert len(rows) == len(traj.times) + 1


def test_theta0_bound_warns():
    ansatz = AnsatzCircuit(1, 0)
    growth = WeightedUnitarySum(1, 1, (UnitaryTerm(5.0, ()),))
    with pytest.warns(RuntimeWarning, match="exceeded"):
        traj = run_vqs(ansatz, [1.0, 0.0], [1.0, 0.0], growth, None, VqsConfig(0.01, 1.0, theta0_bound=10.0))
    assert traj.theta0_exceeded_at is not None


@pytest.mark.parametrize("kwargs", [dict(dtau=0.0, tau_end=1.0), dict(dtau=0.1, tau_end=-1.0), dict(dtau=0.1, tau_end=1.0, mode="x")])
def test_vqs_config_validation(kwargs):
    with pytest.raises(DomainError):
        VqsConfig(**kwargs)
