import csv
import json
import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from vqsprice.errors import DomainError
from vqsprice.fdm import assemble_F, classical_price, euler_solve
from vqsprice.market import DerivativeContract, MarketModel, compute_t_ter, discretized_probabilities
from vqsprice.pipeline import (
    RESULT_COLUMNS,
    SWEEP_COLUMNS,
    PricingJobConfig,
    emit_report,
    initial_parameters,
    manifest,
    payoff_vector,
    plan,
    prepare_payoff_state,
    run_algorithm1,
    sweep_prices,
    write_csv,
)
from vqsprice.quantum import AnsatzCircuit
from vqsprice.vqs import vqs_state

BASE_MODEL = MarketModel.single(0.001, 0.3, 1.0)
BASE_CALL = DerivativeContract.double_barrier_call(1.0, 0.5, 2.0, 1.0)
CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


def job(**kwargs):
    base = dict(model=BASE_MODEL, contract=BASE_CALL, qubits_per_asset=3, layers=2, dtau=1e-3)
    base.update(kwargs)
    return PricingJobConfig(**base)


def test_classical_evolution_reproduces_fdm_price():
    config = job(evolution="classical", qubits_per_asset=4, dtau=1e-4)
    result = run_algorithm1(config)
    t_ter = compute_t_ter(BASE_MODEL, BASE_CALL, 0.01, math.sqrt(2)).t_ter
    grid = config.grid()
    bspde = assemble_F(BASE_MODEL, BASE_CALL, grid)
    v = euler_solve(bspde, bspde.initial_values(), 1e-4, 1.0 - t_ter).values[-1]
    assert result.t_ter == t_ter
    assert abs(result.v0 - classical_price(bspde, t_ter, v)) <= 1e-10


def test_terminal_time_at_maturity_prices_the_payoff_directly():
    config = job(evolution="classical", t_ter=1.0)
    result = run_algorithm1(config)
    p = discretized_probabilities(BASE_MODEL, 1.0, config.grid())
    assert result.tau_ter == 0.0
    assert result.v0 == pytest.approx(math.exp(-0.001) * p @ payoff_vector(config), rel=1e-14)


def test_v0_is_discounted_overlap():
    result = run_algorithm1(job())
    assert result.v0 == pytest.approx(math.exp(-0.001 * result.t_ter) * result.overlap, rel=1e-14)
    assert result.swap_probability == pytest.approx(0.5 * (1 + (result.overlap / (result.alpha * result.beta)) ** 2))
    assert result.trajectory is not None and result.final_vector.shape == (8,)


def test_variational_price_is_close_to_classical_on_a_small_grid():
    result = run_algorithm1(job(compare=("classical",)))
    classical = result.comparisons["classical"]["price"]
    assert abs(result.v0 / classical - 1) < 0.05


def test_single_time_sweep_equals_algorithm_price():
    config = job(evolution="classical")
    result = run_algorithm1(config)
    rows = sweep_prices(config, times=(result.t_ter,), methods=("classical",))
    assert len(rows) == 1
    assert rows[0]["price"] == pytest.approx(result.v0, rel=1e-12)
    assert rows[0]["rel_error"] == pytest.approx(rows[0]["price"] / rows[0]["analytic"] - 1)


def test_sweep_rows_cover_every_time_and_method():
    rows = sweep_prices(job(), times=(0.05, 0.5, 1.0))
    assert [(r["method"], r["t"]) for r in rows] == [
        (m, t) for m in ("classical", "vqs") for t in (0.05, 0.5, 1.0)
    ]
    with pytest.raises(DomainError):
        sweep_prices(job(), times=())
    with pytest.raises(DomainError):
        sweep_prices(job(), times=(1.5,))


def test_shot_mode_is_deterministic_per_seed():
    a = run_algorithm1(job(evolution="classical", mode="shots", shots=10_000, seed=3))
    b = run_algorithm1(job(evolution="classical", mode="shots", shots=10_000, seed=3))
    c = run_algorithm1(job(evolution="classical", mode="shots", shots=10_000, seed=4))
    assert a.v0 == b.v0 and a.swap_estimate == b.swap_estimate
    assert a.v0 != c.v0


def test_shot_mode_agrees_with_exact_mode():
    exact = run_algorithm1(job(evolution="classical"))
    shots = run_algorithm1(job(evolution="classical", mode="shots", shots=10_000_000, seed=1))
    assert shots.shots == 10_000_000
    assert abs(shots.v0 - exact.v0) < 3 * shots.v0_stderr


def test_higher_rate_discounts_more_at_fixed_overlap():
    low = run_algorithm1(job(evolution="classical", t_ter=0.5))
    high_model = MarketModel.single(0.05, 0.3, 1.0)
    high = run_algorithm1(job(model=high_model, evolution="classical", t_ter=0.5))
    assert low.v0 / low.overlap > high.v0 / high.overlap
    assert high.v0 / high.overlap == pytest.approx(math.exp(-0.05 * 0.5))


@pytest.mark.parametrize("layers", [1, 2, 3])
def test_initial_parameters_reproduce_prepared_vector(layers):
    config = job(layers=layers)
    prep = prepare_payoff_state(config)
    ansatz = AnsatzCircuit(config.num_qubits, layers)
    theta, base = initial_parameters(ansatz, prep)
    np.testing.assert_allclose(vqs_state(ansatz, theta, base), prep.vector(), atol=1e-13)


def test_fitted_state_preparation_runs():
    result = run_algorithm1(job(qubits_per_asset=2, state_prep="fit", fit_restarts=2, evolution="classical"))
    assert 0.9 < result.prep_fidelity <= 1.0


# --------------------------------------------------------------- config


def test_config_round_trips_through_dict():
    config = job(compare=("classical", "analytic"), sweep_times=(0.1, 0.2), seed=7)
    assert PricingJobConfig.from_dict(json.loads(json.dumps(config.to_dict()))) == config


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(qubits_per_asset=0),
        dict(dtau=0.0),
        dict(epsilon=1.0),
        dict(mode="sampled"),
        dict(evolution="quantum"),
        dict(compare=("binomial",)),
        dict(t_ter=2.0),
        dict(sweep_times=(0.0,)),
        dict(seed=-1),
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(DomainError):
        job(**kwargs)


def test_config_rejects_unknown_keys():
    data = job().to_dict()
    data["colour"] = "blue"
    with pytest.raises(DomainError):
        PricingJobConfig.from_dict(data)


def test_shipped_config_loads():
    config = PricingJobConfig.load(CONFIG_DIR / "double_barrier_4q.json")
    assert config.n_gr == 16 and config.layers == 4


# --------------------------------------------------------------- output


def test_report_files_and_manifest_round_trip(tmp_path):
    config = job(compare=("classical",))
    result = run_algorithm1(config)
    paths = emit_report(config, result, tmp_path, plan(config, result))
    assert set(paths) == {"results", "manifest", "trajectory", "plan"}
    with open(paths["results"], newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == RESULT_COLUMNS
    assert rows[0]["method"] == "algorithm1" and float(rows[0]["price"]) == pytest.approx(result.v0)
    body = json.loads(paths["manifest"].read_text())
    assert body["result"]["v0"] == pytest.approx(result.v0)
    assert set(body["versions"]) >= {"vqsprice", "numpy", "scipy", "python"}
    assert PricingJobConfig.load(paths["manifest"]) == config
    assert "n_swap = " in paths["plan"].read_text()


def test_manifest_records_seed():
    assert manifest(job(seed=11))["seeds"] == {"seed": 11}


def test_sweep_csv_header(tmp_path):
    rows = sweep_prices(job(), times=(0.5,), methods=("classical",))
    write_csv(rows, SWEEP_COLUMNS, tmp_path / "sweep.csv")
    header = (tmp_path / "sweep.csv").read_text().splitlines()[0]
    assert header == ",".join(SWEEP_COLUMNS)


def test_plan_without_result_uses_classical_stand_in():
    config = job()
    p = plan(config)
    assert p.alpha2_beta2 is not None and p.alpha2_beta2 <= p.xi_upper
    assert p.lost_speedup_bound == pytest.approx(8 * p.B**2)


def test_dimension_mismatch_rejected():
    with pytest.raises(DomainError):
        job(contract=replace(BASE_CALL, weights=(-1.0, 0.5, 0.5), lower=(0.5, 0.5), upper=(2.0, 2.0),
                             lower_kind=("knock-out",) * 2, upper_kind=("knock-out",) * 2))
