"""Command-line entry point: ``python -m vqsprice <command> --config job.json``.

Exit codes: 0 success, 2 invalid input, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import pipeline
from .decomposition import decompose_boundary_generator, decompose_F, format_report, reconstruct, resource_report
from .errors import DomainError, StabilityError, UnsupportedContractError
from .fdm import assemble_F, euler_solve, price_from_values
from .market import analytic_double_barrier_price, monte_carlo_price
from .stateprep import variational_fit

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED = 0, 2, 3
DENSE_CHECK_LIMIT = 10


def _load(args) -> pipeline.PricingJobConfig:
    config = pipeline.PricingJobConfig.load(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.mode is not None:
        overrides["mode"] = args.mode
    if args.shots is not None:
        overrides["shots"] = args.shots
    if args.out is not None:
        overrides["out_dir"] = args.out
    return replace(config, **overrides) if overrides else config


def _out_dir(config) -> Path | None:
    if config.out_dir is None:
        return None
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _single_row(config, method, t, price, stderr=None) -> None:
    row = dict(method=method, t=t, n_gr=config.n_gr, layers=config.layers, price=price, stderr=stderr)
    print(f"{method}: {price:.10g}" + (f" +- {stderr:.3g}" if stderr is not None else ""))
    if (out := _out_dir(config)) is not None:
        pipeline.write_csv([row], pipeline.RESULT_COLUMNS, out / "results.csv")


def cmd_price(config) -> None:
    result = pipeline.run_algorithm1(config)
    print(f"V0 = {result.v0:.10g}  (t_ter={result.t_ter:.6g}, alpha={result.alpha:.6g}, beta={result.beta:.6g})")
    if result.swap_estimate is not None:
        print(f"swap estimate = {result.swap_estimate:.6g} +- {result.swap_stderr:.3g} over {result.shots} shots")
    for name, entry in result.comparisons.items():
        print(f"{name}: {entry['price']:.10g}")
    if config.out_dir is not None:
        paths = pipeline.emit_report(config, result, config.out_dir, pipeline.plan(config, result))
        print("wrote " + ", ".join(str(p) for p in paths.values()))


def cmd_price_classical(config) -> None:
    grid = config.grid()
    t_ter = pipeline._terminal_time(config)
    bspde = assemble_F(config.model, config.contract, grid)
    v = euler_solve(bspde, bspde.initial_values(), config.dtau, config.contract.maturity - t_ter).values[-1]
    _single_row(config, "classical", t_ter, price_from_values(config.model, grid, t_ter, v))


def cmd_price_analytic(config) -> None:
    price, rings = analytic_double_barrier_price(config.model, config.contract)
    _single_row(config, "analytic", 0.0, price)
    print(f"series rings: {rings}")


def cmd_price_mc(config) -> None:
    mc = monte_carlo_price(config.model, config.contract, config.mc_paths, config.mc_steps, config.seed)
    _single_row(config, "mc", 0.0, mc.mean, mc.stderr)


def cmd_sweep(config) -> None:
    rows = pipeline.sweep_prices(config)
    for row in rows:
        print(f"t={row['t']:.6g} {row['method']}: {row['price']:.10g}")
    if (out := _out_dir(config)) is not None:
        pipeline.write_csv(rows, pipeline.SWEEP_COLUMNS, out / "sweep.csv")


def cmd_plan(config) -> None:
    text = pipeline.plan(config).format()
    print(text, end="")
    if (out := _out_dir(config)) is not None:
        (out / "plan.txt").write_text(text, encoding="utf-8")


def cmd_decompose_check(config) -> None:
    grid = config.grid()
    F = decompose_F(config.model, config.contract, grid)
    U = decompose_boundary_generator(config.model, config.contract, grid)
    print("generator:\n" + format_report(resource_report(F)))
    if len(U):
        print("boundary source:\n" + format_report(resource_report(U)))
    else:
        print("boundary source: none (all faces knock out)")
    if grid.num_qubits > DENSE_CHECK_LIMIT:
        print(f"dense check skipped above {DENSE_CHECK_LIMIT} qubits")
        return
    bspde = assemble_F(config.model, config.contract, grid)
    err_F = float(np.abs(reconstruct(F) - bspde.F.toarray()).max())
    zero = np.zeros(grid.size)
    zero[0] = 1.0
    T = config.contract.maturity
    err_C = max(
        float(np.abs((U.apply(zero, tau) if len(U) else zero * 0) - bspde.boundary_vector(tau)).max())
        for tau in (0.0, T / 2, T)
    )
    print(f"max |reconstruct(F) - F| = {err_F:.3e}")
    print(f"max |U(tau)|0> - C(tau)| = {err_C:.3e}")


def cmd_prep_state(config) -> None:
    prep = variational_fit(
        pipeline.payoff_vector(config), config.num_qubits, config.layers,
        config.fit_restarts, config.fit_maxiter, config.seed,
    )
    print(f"fidelity = {prep.fidelity:.10f}  (deficit {1 - prep.fidelity:.3e}), scale = {prep.scale:.6g}")
    if (out := _out_dir(config)) is not None:
        (out / "prep_state.json").write_text(json.dumps(prep.to_dict(), indent=2) + "\n", encoding="utf-8")


COMMANDS = {
    "price": (cmd_price, "price with the variational algorithm"),
    "price-classical": (cmd_price_classical, "price with explicit Euler finite differences"),
    "price-analytic": (cmd_price_analytic, "closed-form single-asset double-barrier price"),
    "price-mc": (cmd_price_mc, "Monte Carlo price"),
    "sweep": (cmd_sweep, "price over the configured sweep times"),
    "plan": (cmd_plan, "SWAP-test measurement plan"),
    "decompose-check": (cmd_decompose_check, "verify and cost the unitary decompositions"),
    "prep-state": (cmd_prep_state, "variationally fit the payoff state"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vqsprice", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log intermediate scales")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="job JSON file (or a run manifest)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="override the job seed")
        p.add_argument("--mode", choices=("exact", "shots"), help="overlap evaluation mode")
        p.add_argument("--shots", type=int, help="SWAP-test shots in shot mode")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        config = _load(args)
        COMMANDS[args.command][0](config)
    except StabilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DomainError, UnsupportedContractError, FileNotFoundError, KeyError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK
