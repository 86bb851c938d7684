import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import loop_operator, shift_matrix
from test_fdm import face_values, random_model
from vqsprice.decomposition import (
    UnitaryTerm,
    WeightedUnitarySum,
    build_dec,
    build_inc,
    build_J,
    decompose_boundary_generator,
    decompose_F,
    format_report,
    gate_cost,
    reconstruct,
    resource_report,
    to_sparse,
)
from vqsprice.errors import DomainError
from vqsprice.fdm import Grid, assemble_F
from vqsprice.market import DerivativeContract, MarketModel
from vqsprice.quantum import MCZ, X

BASE_MODEL = MarketModel.single(0.001, 0.3, 1.0)
BASE_CALL = DerivativeContract.double_barrier_call(1.0, 0.5, 2.0, 1.0)


def basis_zero(nq):
    e = np.zeros(1 << nq)
    e[0] = 1.0
    return e


def test_J_two_qubits():
    np.testing.assert_allclose(reconstruct(build_J(2)), np.diag([0.0, 1.0, 2.0, 3.0]), atol=1e-15)


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_J_is_the_index_operator(n):
    np.testing.assert_allclose(np.diag(reconstruct(build_J(n))), np.arange(1 << n), atol=1e-13)


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_inc_and_dec_are_non_cyclic_shifts(n):
    S = shift_matrix(n, cyclic=False)
    np.testing.assert_allclose(reconstruct(build_inc(n)), S, atol=1e-15)
    np.testing.assert_allclose(reconstruct(build_dec(n)), S.T, atol=1e-15)
    assert len(build_inc(n)) == 2 and len(build_dec(n)) == 2


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("d, n_gr", [(1, 4), (1, 16), (2, 4), (2, 8), (3, 4)])
def test_decompose_F_reconstructs_generator(seed, d, n_gr):
    rng = np.random.default_rng(seed)
    m = random_model(rng, d)
    c = DerivativeContract(1.0, (-1.0,) + (1.0 / d,) * d, tuple(rng.uniform(0.3, 0.7, d)), tuple(rng.uniform(1.5, 2.5, d)))
    g = Grid.for_contract(c, n_gr)
    wus = decompose_F(m, c, g)
    ref = assemble_F(m, c, g).F.toarray()
    assert np.abs(reconstruct(wus) - ref).max() <= 1e-10 * max(1.0, np.abs(ref).max())


def test_decompose_F_16_point_grid_is_exact():
    g = Grid.for_contract(BASE_CALL, 16)
    ref = assemble_F(BASE_MODEL, BASE_CALL, g).F.toarray()
    assert np.abs(reconstruct(decompose_F(BASE_MODEL, BASE_CALL, g)) - ref).max() <= 1e-10


def test_to_sparse_matches_dense_reconstruction():
    g = Grid.for_contract(BASE_CALL, 8)
    wus = decompose_F(BASE_MODEL, BASE_CALL, g)
    np.testing.assert_allclose(to_sparse(wus).toarray(), reconstruct(wus), atol=1e-12)


def test_apply_matches_reconstruction():
    g = Grid.for_contract(BASE_CALL, 8)
    wus = decompose_F(BASE_MODEL, BASE_CALL, g)
    v = np.random.default_rng(0).normal(size=8)
    np.testing.assert_allclose(wus.apply(v), reconstruct(wus) @ v, atol=1e-12)


def test_all_knock_out_boundary_is_the_empty_sum():
    g = Grid.for_contract(BASE_CALL, 16)
    U = decompose_boundary_generator(BASE_MODEL, BASE_CALL, g)
    assert len(U) == 0
    assert resource_report(U)["terms"] == 0


def linear_contract(d, kinds_lower, kinds_upper):
    weights = (-1.0,) + tuple(0.3 + 0.2 * i for i in range(d))
    return DerivativeContract(1.0, weights, (0.5,) * d, (2.0,) * d, kinds_lower, kinds_upper)


@pytest.mark.parametrize(
    "d, lower, upper",
    [
        (1, ("linear",), ("knock-out",)),
        (1, ("knock-out",), ("linear",)),
        (1, ("linear",), ("linear",)),
        (2, ("linear", "knock-out"), ("linear", "linear")),
        (2, ("linear", "linear"), ("linear", "linear")),
    ],
)
def test_boundary_generator_prepares_C(d, lower, upper):
    rng = np.random.default_rng(d)
    m = random_model(rng, d)
    c = linear_contract(d, lower, upper)
    g = Grid.for_contract(c, 4)
    U = decompose_boundary_generator(m, c, g)
    b = assemble_F(m, c, g)
    zero = basis_zero(g.num_qubits)
    for tau in (0.0, 0.5, 1.0):
        np.testing.assert_allclose(U.apply(zero, tau), b.boundary_vector(tau), atol=1e-11)


@pytest.mark.parametrize("d", [1, 2])
def test_boundary_generator_matches_loop_oracle_uncorrelated(d):
    m = MarketModel(0.03, (0.3,) * d, tuple(tuple(float(i == j) for j in range(d)) for i in range(d)), (1.0,) * d)
    c = linear_contract(d, ("linear",) * d, ("linear",) * d)
    g = Grid.for_contract(c, 4)
    U = decompose_boundary_generator(m, c, g)
    zero = basis_zero(g.num_qubits)
    for tau in (0.0, 0.7):
        _, C_ref = loop_operator(m.r, m.sigma, m.rho, c.lower, c.upper, 4, face_values(c), math.exp(-m.r * tau))
        np.testing.assert_allclose(U.apply(zero, tau), C_ref, atol=1e-11)


def test_discounted_terms_scale_with_exp_minus_r_tau():
    m = MarketModel.single(0.05, 0.3, 1.0)
    c = linear_contract(1, ("linear",), ("linear",))
    U = decompose_boundary_generator(m, c, Grid.for_contract(c, 4))
    const, disc = U.time_split()
    assert len(const) and len(disc)
    zero = basis_zero(2)
    for tau in (0.0, 0.4, 1.0):
        np.testing.assert_allclose(disc.apply(zero, tau), math.exp(-0.05 * tau) * disc.apply(zero, 0.0), atol=1e-13)
        np.testing.assert_allclose(const.apply(zero, tau), const.apply(zero, 0.0), atol=1e-13)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 5), st.integers(0, 3)), min_size=1, max_size=12))
def test_merge_is_idempotent_and_preserves_the_operator(items):
    library = [(), (X(0),), (MCZ((0, 1)),), (X(1), MCZ((0, 1)))]
    wus = WeightedUnitarySum(1, 2, tuple(UnitaryTerm(float(c), library[k]) for c, k in items))
    once = wus.merged()
    assert once.merged() == once
    np.testing.assert_allclose(reconstruct(once), reconstruct(wus), atol=1e-12)
    assert len({t.gates for t in once.terms}) == len(once)


def test_coefficients_must_be_real_floats():
    with pytest.raises(DomainError):
        WeightedUnitarySum(1, 1, (UnitaryTerm(1j, ()),))
    with pytest.raises(DomainError):
        WeightedUnitarySum(1, 1, (UnitaryTerm(float("nan"), ()),))


def test_reconstruct_refuses_large_registers():
    big = WeightedUnitarySum(11, 1, (UnitaryTerm(1.0, ()),))
    with pytest.raises(DomainError):
        reconstruct(big)


def test_dimension_mismatch_rejected():
    c2 = linear_contract(2, ("linear",) * 2, ("linear",) * 2)
    with pytest.raises(DomainError):
        decompose_F(BASE_MODEL, c2, Grid.for_contract(c2, 4))


@pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
def test_gates_per_term_grow_at_most_quadratically(n):
    c = DerivativeContract.double_barrier_call(1.0, 0.5, 2.0, 1.0)
    report = resource_report(decompose_F(BASE_MODEL, c, Grid.for_contract(c, 1 << n)))
    assert report["max_gates_per_term"] <= 4 * n * n
    assert gate_cost(MCZ(tuple(range(n)))) <= n * n


def test_term_count_grows_polynomially():
    counts = []
    for n in (2, 3, 4, 5):
        c = DerivativeContract.double_barrier_call(1.0, 0.5, 2.0, 1.0)
        counts.append(len(decompose_F(BASE_MODEL, c, Grid.for_contract(c, 1 << n))))
    assert all(b > a for a, b in zip(counts, counts[1:]))
    assert counts[-1] <= 5**4


def test_resource_report_fields_and_format():
    wus = decompose_F(BASE_MODEL, BASE_CALL, Grid.for_contract(BASE_CALL, 16))
    report = resource_report(wus)
    assert report["terms"] == len(wus)
    assert report["system_qubits"] == 4 and report["lcu_terms_bound_d2n4"] == 256
    assert resource_report(wus, epsilon=0.01)["qubits_per_asset"] == 7
    assert "terms = " in format_report(report)
    with pytest.raises(DomainError):
        resource_report(wus, epsilon=2.0)
