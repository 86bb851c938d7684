"""End-to-end pricing: probability state, payoff state, evolution, overlap, discount.

A job is described by one JSON document (:class:`PricingJobConfig`). The
evolution to ``tau_ter = T - t_ter`` is variational by default; setting
``evolution = "classical"`` swaps in explicit Euler on the same grid, which
isolates the plumbing from the variational error.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import platform
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
import scipy

from .decomposition import decompose_boundary_generator, decompose_F
from .errors import DomainError, UnsupportedContractError
from .fdm import Grid, assemble_F, euler_solve, price_from_values
from .market import (
    DerivativeContract,
    MarketModel,
    analytic_double_barrier_price,
    compute_t_ter,
    discretized_probabilities,
    monte_carlo_price,
)
from .planner import MeasurementPlan, plan_measurements
from .quantum import AnsatzCircuit, StateVector, apply_to_array, cz_ring, swap_test_probability, swap_test_sample
from .stateprep import PreparedState, exact_encode, variational_fit
from .vqs import VqsConfig, VqsTrajectory, run_vqs, vqs_state

logger = logging.getLogger(__name__)

__version__ = "0.1.0"

RESULT_COLUMNS = ("method", "t", "n_gr", "layers", "price", "stderr")
SWEEP_COLUMNS = ("t", "method", "n_gr", "layers", "price", "analytic", "rel_error")
COMPARE_METHODS = ("classical", "analytic", "mc")


@dataclass(frozen=True)
class PricingJobConfig:
    model: MarketModel
    contract: DerivativeContract
    qubits_per_asset: int
    layers: int = 4
    dtau: float = 2.5e-5
    epsilon: float = 0.01
    A_tilde: float = math.sqrt(2.0)
    zeta: float = 1.0
    B: float | None = None
    mode: Literal["exact", "shots"] = "exact"
    shots: int = 1_000_000
    seed: int = 0
    evolution: Literal["vqs", "classical"] = "vqs"
    vqs_mode: Literal["exact", "circuit"] = "exact"
    vqs_shots: int | None = None
    vqs_reg: float = 1e-8
    state_prep: Literal["exact", "fit"] = "exact"
    fit_restarts: int = 5
    fit_maxiter: int = 2000
    t_ter: float | None = None
    compare: tuple[str, ...] = ()
    mc_paths: int = 100_000
    mc_steps: int = 1_000
    sweep_times: tuple[float, ...] = ()
    out_dir: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "compare", tuple(self.compare))
        object.__setattr__(self, "sweep_times", tuple(float(t) for t in self.sweep_times))
        if self.model.d != self.contract.d:
            raise DomainError(f"model has {self.model.d} assets, contract has {self.contract.d}")
        if self.qubits_per_asset < 1:
            raise DomainError("qubits_per_asset must be at least 1")
        if self.layers < 0:
            raise DomainError("layers must be nonnegative")
        if not self.dtau > 0:
            raise DomainError(f"dtau must be positive, got {self.dtau}")
        if not 0 < self.epsilon < 1:
            raise DomainError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if self.zeta <= 0 or self.A_tilde <= 0:
            raise DomainError("zeta and A_tilde must be positive")
        if self.mode not in ("exact", "shots"):
            raise DomainError(f"unknown mode {self.mode!r}")
        if self.mode == "shots" and self.shots < 1:
            raise DomainError("shots must be positive in shot mode")
        if self.evolution not in ("vqs", "classical"):
            raise DomainError(f"unknown evolution {self.evolution!r}")
        if self.state_prep not in ("exact", "fit"):
            raise DomainError(f"unknown state_prep {self.state_prep!r}")
        if unknown := set(self.compare) - set(COMPARE_METHODS):
            raise DomainError(f"unknown comparison methods {sorted(unknown)}")
        if self.t_ter is not None and not 0 < self.t_ter <= self.contract.maturity:
            raise DomainError("t_ter must lie in (0, T]")
        if any(not 0 < t <= self.contract.maturity for t in self.sweep_times):
            raise DomainError("sweep times must lie in (0, T]")
        if self.seed < 0:
            raise DomainError("seed must be nonnegative")

    @property
    def n_gr(self) -> int:
        return 1 << self.qubits_per_asset

    @property
    def num_qubits(self) -> int:
        return self.qubits_per_asset * self.model.d

    def grid(self) -> Grid:
        return Grid.for_contract(self.contract, self.n_gr)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["model"] = self.model.to_dict()
        out["contract"] = self.contract.to_dict()
        out["compare"] = list(self.compare)
        out["sweep_times"] = list(self.sweep_times)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "PricingJobConfig":
        data = dict(data)
        try:
            model = MarketModel.from_dict(data.pop("model"))
            contract = DerivativeContract.from_dict(data.pop("contract"))
        except KeyError as exc:
            raise DomainError(f"config is missing {exc}") from exc
        known = {f for f in cls.__dataclass_fields__} - {"model", "contract"}
        if unknown := set(data) - known:
            raise DomainError(f"unknown config keys {sorted(unknown)}")
        return cls(model=model, contract=contract, **data)

    @classmethod
    def load(cls, path) -> "PricingJobConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DomainError(f"{path}: invalid JSON ({exc})") from exc
        if "config" in data and "model" not in data:
            data = data["config"]  # a run manifest
        return cls.from_dict(data)


@dataclass(frozen=True, eq=False)
class PricingResult:
    v0: float
    t_ter: float
    tau_ter: float
    alpha: float
    beta: float
    overlap: float
    swap_probability: float
    swap_estimate: float | None
    swap_stderr: float | None
    shots: int | None
    v0_stderr: float | None
    prep_fidelity: float
    comparisons: dict = field(default_factory=dict)
    trajectory: VqsTrajectory | None = field(default=None, repr=False)
    final_vector: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("trajectory", "final_vector")}


def _terminal_time(config: PricingJobConfig) -> float:
    if config.t_ter is not None:
        return config.t_ter
    return compute_t_ter(config.model, config.contract, config.epsilon, config.A_tilde).t_ter


def payoff_vector(config: PricingJobConfig) -> np.ndarray:
    """Payoff at every grid node in flat order."""
    return config.contract.payoff_unchecked(config.grid().points())


def prepare_payoff_state(config: PricingJobConfig) -> PreparedState:
    target = payoff_vector(config)
    if config.state_prep == "exact":
        return exact_encode(target)
    return variational_fit(
        target, config.num_qubits, config.layers, config.fit_restarts, config.fit_maxiter, config.seed
    )


def initial_parameters(ansatz: AnsatzCircuit, prep: PreparedState) -> tuple[np.ndarray, np.ndarray]:
    """``(theta, base)`` with all angles zero and ``theta_0 R(0)|base>`` equal to the prepared vector.

    With an odd number of layers ``R(0)`` is one CZ layer, which is undone by
    applying the same (self-inverse) layer to the base.
    """
    base = np.asarray(prep.amplitudes, dtype=float).copy()
    if ansatz.m % 2:
        base = apply_to_array(base, cz_ring(ansatz.n), ansatz.n).real
    theta = np.zeros(ansatz.num_params)
    theta[0] = prep.scale
    return theta, base


def _evolve(config: PricingJobConfig, prep: PreparedState, tau_end: float, snapshots: Sequence[float] = ()):
    """Evolve the prepared payoff to every snapshot; returns ``({tau: vector}, trajectory)``."""
    grid = config.grid()
    marks = sorted({float(tau_end), *snapshots})
    if config.evolution == "classical":
        bspde = assemble_F(config.model, config.contract, grid)
        traj = euler_solve(bspde, prep.vector(), config.dtau, tau_end, snapshots=marks)
        return {tau: traj.at(tau) for tau in marks}, None
    ansatz = AnsatzCircuit(config.num_qubits, config.layers)
    theta, base = initial_parameters(ansatz, prep)
    L = decompose_F(config.model, config.contract, grid)
    u = decompose_boundary_generator(config.model, config.contract, grid)
    vqs_cfg = VqsConfig(
        config.dtau, tau_end, config.vqs_reg, config.vqs_mode, config.vqs_shots, config.seed, tuple(marks)
    )
    traj = run_vqs(ansatz, theta, base, L, u, vqs_cfg)
    return {tau: vqs_state(ansatz, traj.at(tau), base) for tau in marks}, traj


def _comparisons(config: PricingJobConfig, t_ter: float, tau_ter: float) -> dict:
    out = {}
    if "classical" in config.compare:
        grid = config.grid()
        bspde = assemble_F(config.model, config.contract, grid)
        v = euler_solve(bspde, bspde.initial_values(), config.dtau, tau_ter).values[-1]
        out["classical"] = {"price": price_from_values(config.model, grid, t_ter, v), "stderr": None}
    if "analytic" in config.compare:
        try:
            out["analytic"] = {"price": analytic_double_barrier_price(config.model, config.contract)[0], "stderr": None}
        except UnsupportedContractError as exc:
            logger.info("analytic price skipped: %s", exc)
    if "mc" in config.compare:
        mc = monte_carlo_price(config.model, config.contract, config.mc_paths, config.mc_steps, config.seed)
        out["mc"] = {"price": mc.mean, "stderr": mc.stderr}
    return out


def run_algorithm1(config: PricingJobConfig) -> PricingResult:
    """Price at ``t = 0`` through the overlap ``exp(-r t_ter) <p(t_ter) | V(T - t_ter)>``."""
    model = config.model
    grid = config.grid()
    t_ter = _terminal_time(config)
    tau_ter = max(config.contract.maturity - t_ter, 0.0)
    disc = math.exp(-model.r * t_ter)

    p_state = exact_encode(discretized_probabilities(model, t_ter, grid))
    v_prep = prepare_payoff_state(config)
    logger.info("alpha=%.6g payoff scale=%.6g prep fidelity=%.6g", p_state.scale, v_prep.scale, v_prep.fidelity)

    vectors, traj = _evolve(config, v_prep, tau_ter)
    v = vectors[float(tau_ter)]
    beta = float(np.linalg.norm(v))
    alpha = p_state.scale
    overlap = float(p_state.vector() @ v)
    logger.info("tau_ter=%.6g beta=%.6g overlap=%.6g", tau_ter, beta, overlap)

    a = StateVector.from_vector(p_state.vector())
    b = StateVector.from_vector(v)
    prob = swap_test_probability(a, b)
    if config.mode == "exact":
        v0 = disc * overlap
        est = err = shots = v0_err = None
    else:
        sample = swap_test_sample(a, b, config.shots, config.seed)
        est, err, shots = sample.estimate, sample.stderr, config.shots
        root = math.sqrt(max(est, 0.0))
        v0 = disc * alpha * beta * root
        # Delta method on the square root; undefined at a zero estimate.
        v0_err = disc * alpha * beta * err / (2 * root) if root > 0 else math.inf
    return PricingResult(
        v0, t_ter, tau_ter, alpha, beta, overlap, prob, est, err, shots, v0_err, v_prep.fidelity,
        _comparisons(config, t_ter, tau_ter), traj, v,
    )


def sweep_prices(
    config: PricingJobConfig, times: Sequence[float] | None = None, methods: Sequence[str] = ("classical", "vqs")
) -> list[dict]:
    """``exp(-r t) <p(t) | V(T - t)>`` for each ``t``, one row per (t, method)."""
    times = tuple(config.sweep_times if times is None else times)
    T = config.contract.maturity
    if not times:
        raise DomainError("no sweep times given")
    if any(not 0 < t <= T for t in times):
        raise DomainError("sweep times must lie in (0, T]")
    try:
        analytic = analytic_double_barrier_price(config.model, config.contract)[0]
    except UnsupportedContractError:
        analytic = None
    grid = config.grid()
    prep = prepare_payoff_state(config)
    taus = [T - t for t in times]
    rows = []
    for method in methods:
        if method not in ("classical", "vqs"):
            raise DomainError(f"unknown sweep method {method!r}")
        job = replace(config, evolution=method)
        vectors, _ = _evolve(job, prep, max(taus), taus)
        for t, tau in zip(times, taus):
            price = price_from_values(config.model, grid, t, vectors[tau])
            rel = (price - analytic) / analytic if analytic else None
            rows.append(dict(t=t, method=method, n_gr=config.n_gr, layers=config.layers,
                             price=price, analytic=analytic, rel_error=rel))
    return rows


def write_csv(rows: Sequence[dict], columns: Sequence[str], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns))
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if row.get(k) is None else row[k]) for k in columns})


def plan(config: PricingJobConfig, result: PricingResult | None = None) -> MeasurementPlan:
    """Measurement plan with the actual ``alpha^2 beta^2`` of a run, or a classical stand-in."""
    grid = config.grid()
    t_ter = _terminal_time(config)
    p = discretized_probabilities(config.model, t_ter, grid)
    if result is not None and result.final_vector is not None:
        v = result.final_vector
    else:
        bspde = assemble_F(config.model, config.contract, grid)
        v = euler_solve(bspde, bspde.initial_values(), config.dtau, config.contract.maturity - t_ter).values[-1]
    return plan_measurements(
        config.model, config.contract, config.epsilon, config.A_tilde, config.zeta, config.B,
        p_vector=p, v_vector=v, payoff_vector=payoff_vector(config), n_grid_points=grid.size,
    )


def result_rows(config: PricingJobConfig, result: PricingResult) -> list[dict]:
    rows = [dict(method="algorithm1", t=result.t_ter, n_gr=config.n_gr, layers=config.layers,
                 price=result.v0, stderr=result.v0_stderr)]
    for name, entry in result.comparisons.items():
        rows.append(dict(method=name, t=0.0 if name != "classical" else result.t_ter, n_gr=config.n_gr,
                         layers=config.layers, price=entry["price"], stderr=entry["stderr"]))
    return rows


def manifest(config: PricingJobConfig) -> dict:
    return {
        "config": config.to_dict(),
        "seeds": {"seed": config.seed},
        "versions": {
            "vqsprice": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }


def emit_report(
    config: PricingJobConfig,
    result: PricingResult,
    out_dir,
    measurement_plan: MeasurementPlan | None = None,
) -> dict[str, Path]:
    """Write ``results.csv``, ``trajectory.csv`` (variational runs), ``plan.txt`` and ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"results": out / "results.csv", "manifest": out / "manifest.json"}
    write_csv(result_rows(config, result), RESULT_COLUMNS, paths["results"])
    if result.trajectory is not None:
        paths["trajectory"] = out / "trajectory.csv"
        result.trajectory.to_csv(paths["trajectory"])
    if measurement_plan is not None:
        paths["plan"] = out / "plan.txt"
        paths["plan"].write_text(measurement_plan.format(), encoding="utf-8")
    body = manifest(config)
    body["result"] = result.to_dict()
    paths["manifest"].write_text(json.dumps(body, indent=2) + "\n", encoding="utf-8")
    return paths
