"""Finite-difference semi-discretisation of the Black-Scholes PDE.

The PDE is written in time-to-maturity ``tau = T - t`` and discretised on an
interior grid of ``n_gr`` points per asset, giving the linear ODE

    dV/dtau = F V + C(tau),    V(0) = payoff on the grid.

Flat indices are 0-based and lexicographic with asset 0 most significant, so
the flat index coincides with the computational-basis index when asset ``i``
occupies qubit block ``i`` (most significant bit first).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DomainError, StabilityError
from .market import DerivativeContract, MarketModel, discretized_probabilities

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Grid:
    """Uniform interior grid ``x_i^(k) = l_i + (k + 1) h_i``, ``h_i = (u_i - l_i) / (n_gr + 1)``."""

    n_gr: int
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        if self.n_gr < 2 or self.n_gr & (self.n_gr - 1):
            raise DomainError(f"n_gr must be a power of two >= 2, got {self.n_gr}")
        if len(self.lower) != len(self.upper) or not self.lower:
            raise DomainError("lower and upper must be non-empty and of equal length")

    @classmethod
    def for_contract(cls, contract: DerivativeContract, n_gr: int) -> "Grid":
        return cls(n_gr, contract.lower, contract.upper)

    @property
    def d(self) -> int:
        return len(self.lower)

    @property
    def qubits_per_asset(self) -> int:
        return self.n_gr.bit_length() - 1

    @property
    def num_qubits(self) -> int:
        return self.d * self.qubits_per_asset

    @property
    def size(self) -> int:
        return self.n_gr**self.d

    @property
    def h(self) -> np.ndarray:
        return (np.asarray(self.upper) - np.asarray(self.lower)) / (self.n_gr + 1)

    def coordinates(self, axis: int) -> np.ndarray:
        return self.lower[axis] + (np.arange(self.n_gr) + 1) * self.h[axis]

    def multi_index(self) -> np.ndarray:
        """``(N_gr, d)`` array of per-axis indices ``k_i`` in flat order."""
        grids = np.meshgrid(*[np.arange(self.n_gr)] * self.d, indexing="ij")
        return np.stack([g.reshape(-1) for g in grids], axis=1)

    def points(self) -> np.ndarray:
        """``(N_gr, d)`` array of grid points in flat order."""
        k = self.multi_index()
        return np.asarray(self.lower) + (k + 1) * self.h

    def flat_index(self, k: Sequence[int]) -> int:
        return int(sum(ki * self.n_gr ** (self.d - 1 - i) for i, ki in enumerate(k)))


def build_d1st(grid: Grid, axis: int) -> np.ndarray:
    """Central difference of ``s d/ds`` times ``2h``: row ``k`` is ``x_k (V_{k+1} - V_{k-1})``."""
    _check_axis(grid, axis)
    x = grid.coordinates(axis)
    return np.diag(x[:-1], 1) - np.diag(x[1:], -1)


def build_d2nd(grid: Grid, axis: int) -> np.ndarray:
    """Second difference of ``s^2 d^2/ds^2`` times ``h^2``: row ``k`` is ``x_k^2 (V_{k+1} - 2 V_k + V_{k-1})``."""
    _check_axis(grid, axis)
    x2 = grid.coordinates(axis) ** 2
    return np.diag(x2[:-1], 1) - 2 * np.diag(x2) + np.diag(x2[1:], -1)


def _check_axis(grid: Grid, axis: int) -> None:
    if not 0 <= axis < grid.d:
        raise DomainError(f"axis {axis} out of range for d={grid.d}")


def _embed(ops: dict[int, np.ndarray], grid: Grid) -> sp.csr_matrix:
    """Kronecker product with ``ops[i]`` on axis ``i`` and identity elsewhere."""
    out = sp.identity(1, format="csr")
    eye = sp.identity(grid.n_gr, format="csr")
    for i in range(grid.d):
        out = sp.kron(out, sp.csr_matrix(ops[i]) if i in ops else eye, format="csr")
    return out


@dataclass(frozen=True, eq=False)
class DiscretizedBspde:
    """``dV/dtau = F V + C(tau)`` on a grid; ``C(tau) = c_static + exp(-r tau) c_discounted``."""

    model: MarketModel
    contract: DerivativeContract
    grid: Grid
    F: sp.csr_matrix
    c_static: np.ndarray = field(repr=False)
    c_discounted: np.ndarray = field(repr=False)

    def boundary_vector(self, tau: float) -> np.ndarray:
        return self.c_static + math.exp(-self.model.r * tau) * self.c_discounted

    @property
    def has_boundary_source(self) -> bool:
        return bool(np.any(self.c_static) or np.any(self.c_discounted))

    def initial_values(self) -> np.ndarray:
        """Payoff on every grid point (the tau = 0 condition)."""
        return self.contract.payoff_unchecked(self.grid.points())


def assemble_F(model: MarketModel, contract: DerivativeContract, grid: Grid) -> DiscretizedBspde:
    """Build the sparse generator and the boundary source for ``grid``."""
    if model.d != grid.d or contract.d != grid.d:
        raise DomainError(f"dimension mismatch: model {model.d}, contract {contract.d}, grid {grid.d}")
    sig, rho, h, r = model.sigma_array, model.rho_array, grid.h, model.r
    d1 = [build_d1st(grid, i) for i in range(grid.d)]
    d2 = [build_d2nd(grid, i) for i in range(grid.d)]
    F = -r * sp.identity(grid.size, format="csr")
    for i in range(grid.d):
        F = F + sig[i] ** 2 / (2 * h[i] ** 2) * _embed({i: d2[i]}, grid)
        F = F + r / (2 * h[i]) * _embed({i: d1[i]}, grid)
        for j in range(i + 1, grid.d):
            coef = sig[i] * sig[j] * rho[i, j] / (4 * h[i] * h[j])
            if coef != 0.0:
                F = F + coef * _embed({i: d1[i], j: d1[j]}, grid)
    F = sp.csr_matrix(F)
    F.sum_duplicates()
    F.eliminate_zeros()
    c0 = _boundary_source(model, contract, grid, discount=0.0)
    c1 = _boundary_source(model, contract, grid, discount=1.0)
    return DiscretizedBspde(model, contract, grid, F, c0, c1 - c0)


def _boundary_source(model: MarketModel, contract: DerivativeContract, grid: Grid, discount: float) -> np.ndarray:
    """Boundary vector with ``exp(-r tau)`` replaced by ``discount``.

    Diagonal terms carry the exterior neighbours of the first- and second-order
    stencils; cross terms follow the published per-face form, which evaluates
    the face value at the node's own transverse coordinates.
    """
    pts = grid.points()
    k = grid.multi_index()
    n, h = grid.n_gr, grid.h
    sig, rho, r = model.sigma_array, model.rho_array, model.r
    lo_x = np.asarray(grid.lower) + h  # first interior coordinate
    hi_x = np.asarray(grid.lower) + n * h  # last interior coordinate
    C = np.zeros(grid.size)
    lb = [np.where(k[:, i] == 0, contract.lower_value(i, discount, pts), 0.0) for i in range(grid.d)]
    ub = [np.where(k[:, i] == n - 1, contract.upper_value(i, discount, pts), 0.0) for i in range(grid.d)]
    for i in range(grid.d):
        C += sig[i] ** 2 / (2 * h[i] ** 2) * (lo_x[i] ** 2 * lb[i] + hi_x[i] ** 2 * ub[i])
        C += r / (2 * h[i]) * (hi_x[i] * ub[i] - lo_x[i] * lb[i])
        for j in range(i + 1, grid.d):
            coef = sig[i] * sig[j] * rho[i, j] / (4 * h[i] * h[j])
            if coef == 0.0:
                continue
            xi, xj = pts[:, i], pts[:, j]
            C += coef * (
                -lo_x[i] * xj * lb[i] - xi * lo_x[j] * lb[j] + hi_x[i] * xj * ub[i] + xi * hi_x[j] * ub[j]
            )
    return C


def boundary_vector(bspde: DiscretizedBspde, tau: float) -> np.ndarray:
    if tau < 0 or tau > bspde.contract.maturity + 1e-12:
        raise DomainError(f"tau must lie in [0, T], got {tau}")
    return bspde.boundary_vector(tau)


@dataclass
class Trajectory:
    """Snapshots of a time-stepped vector, ``values[i]`` at ``times[i]``."""

    times: list[float]
    values: list[np.ndarray]

    def at(self, tau: float, atol: float = 1e-12) -> np.ndarray:
        for t, v in zip(self.times, self.values):
            if abs(t - tau) <= atol:
                return v
        raise KeyError(f"no snapshot at tau={tau}")


def stable_step_estimate(F: sp.spmatrix) -> float:
    """Largest explicit-Euler step suggested by the Gershgorin bound ``2 / max_row |F|``."""
    row = np.asarray(abs(F).sum(axis=1)).ravel()
    bound = float(row.max()) if row.size else 0.0
    return math.inf if bound == 0 else 2.0 / bound


def _step_schedule(dtau: float, tau_end: float, marks: Sequence[float]):
    """Yield ``(tau, step, is_mark)`` so every mark is hit exactly."""
    tau = 0.0
    for mark in sorted(set(float(m) for m in marks) | {float(tau_end)}):
        while mark - tau > 1e-12:
            step = min(dtau, mark - tau)
            if mark - (tau + step) < 1e-12 * max(1.0, mark):
                step = mark - tau
            yield tau, step, False
            tau = mark if step == mark - tau else tau + step
        yield tau, 0.0, True


def euler_solve(
    bspde: DiscretizedBspde,
    v0: np.ndarray,
    dtau: float,
    tau_end: float,
    snapshots: Sequence[float] = (),
    blowup_factor: float = 1e6,
) -> Trajectory:
    """Explicit Euler ``V <- V + dtau (F V + C(tau))`` from 0 to ``tau_end``.

    ``tau = 0`` and ``tau_end`` are always recorded; extra snapshot times are
    hit exactly by shortening the step that would overshoot them.
    """
    if dtau <= 0:
        raise DomainError(f"dtau must be positive, got {dtau}")
    if tau_end < 0:
        raise DomainError(f"tau_end must be non-negative, got {tau_end}")
    if any(s < 0 or s > tau_end + 1e-12 for s in snapshots):
        raise DomainError("snapshot times must lie in [0, tau_end]")
    limit = stable_step_estimate(bspde.F)
    if dtau > 0.5 * limit:
        warnings.warn(
            f"dtau={dtau:.3g} exceeds half the explicit-Euler stability estimate {limit:.3g}; "
            "expect oscillation or blow-up",
            RuntimeWarning,
            stacklevel=2,
        )
    v = np.array(v0, dtype=float)
    ref = max(float(np.linalg.norm(v)), 1e-300)
    has_source = bspde.has_boundary_source
    F = bspde.F
    times, values = [], []
    for tau, step, is_mark in _step_schedule(dtau, tau_end, [0.0, *snapshots]):
        if is_mark:
            if not times or abs(times[-1] - tau) > 1e-12:
                times.append(tau)
                values.append(v.copy())
            continue
        dv = F @ v
        if has_source:
            dv += bspde.boundary_vector(tau)
        v += step * dv
        norm = np.linalg.norm(v)
        if not np.isfinite(norm) or norm > blowup_factor * ref:
            raise StabilityError(
                f"explicit Euler diverged at tau={tau + step:.6g}: dtau={dtau:.3g} vs stability "
                f"estimate {limit:.3g} (CFL-type condition dtau <~ h^2 / (sigma u)^2 violated)",
                last_good_tau=tau,
            )
    return Trajectory(times, values)


def price_from_values(model: MarketModel, grid: Grid, t: float, values: np.ndarray) -> float:
    """``exp(-r t) sum_k p_k(t) V_k`` with the analytic lognormal cell weights."""
    p = discretized_probabilities(model, t, grid)
    return math.exp(-model.r * t) * float(p @ np.asarray(values))


def classical_price(bspde: DiscretizedBspde, t_ter: float, values: np.ndarray) -> float:
    """Present value from the grid solution ``values = V(tau = T - t_ter)``."""
    return price_from_values(bspde.model, bspde.grid, t_ter, values)


def solve_classical(
    model: MarketModel, contract: DerivativeContract, n_gr: int, t_ter: float, dtau: float
) -> tuple[float, DiscretizedBspde, np.ndarray]:
    """Assemble, integrate to ``tau = T - t_ter`` and price; returns ``(price, bspde, V)``."""
    grid = Grid.for_contract(contract, n_gr)
    bspde = assemble_F(model, contract, grid)
    tau_ter = contract.maturity - t_ter
    traj = euler_solve(bspde, bspde.initial_values(), dtau, tau_ter)
    v = traj.values[-1]
    return classical_price(bspde, t_ter, v), bspde, v
