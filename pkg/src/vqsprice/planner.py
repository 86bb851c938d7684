"""Shot budget of the final SWAP test.

With ``alpha = |p(t_ter)|`` and ``beta = |V(tau_ter)|`` the unnormalised
overlap is estimated to precision ``epsilon`` with ``(alpha^2 beta^2 / epsilon)^2``
samples. ``alpha^2 beta^2`` is bounded a priori by

    Xi = zeta B^2 (8 pi t_ter)^{-d/2} prod_i (u_i / l_i - 1) / sigma_i,

which in turn is bracketed independently of the grid:

    Xi <= zeta B^2 (5/(4 sqrt(pi)) (xi_max - 1)/ln(chi_min) sigma_max/sigma_min)^d  Lg^{d/2}
    Xi >= zeta B^2 (25/(4 pi) Lg)^{d/2} prod_i (u_i/l_i - 1)/ln(u_i/l_i)  >=  zeta B^2 (25/(4 pi) Lg)^{d/2}

with ``Lg = ln(2 A d (d + 1) / epsilon)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DomainError
from .market import DerivativeContract, MarketModel, compute_t_ter


@dataclass(frozen=True)
class MeasurementPlan:
    zeta: float
    B: float
    A_tilde: float
    epsilon: float
    t_ter: float
    xi: float
    xi_upper: float
    xi_lower: float
    xi_lower_simple: float
    n_swap: float
    alpha2: float | None = None
    beta2: float | None = None
    alpha2_beta2: float | None = None
    n_swap_actual: float | None = None
    zeta_empirical: float | None = None
    lost_speedup_bound: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def format(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_dict().items())


def payoff_bound(contract: DerivativeContract) -> float:
    """``a_0 + sum_i a_i u_i``, the payoff cap on the box for nonnegative asset weights."""
    a = np.asarray(contract.weights)
    return float(a[0] + a[1:] @ np.asarray(contract.upper))


def _log_term(d: int, A_tilde: float, epsilon: float) -> float:
    return math.log(2 * A_tilde * d * (d + 1) / epsilon)


def plan_measurements(
    model: MarketModel,
    contract: DerivativeContract,
    epsilon: float,
    A_tilde: float,
    zeta: float = 1.0,
    B: float | None = None,
    p_vector: np.ndarray | None = None,
    v_vector: np.ndarray | None = None,
    payoff_vector: np.ndarray | None = None,
    n_grid_points: int | None = None,
) -> MeasurementPlan:
    """Bounds and shot counts; actual vectors, when given, add the measured ``alpha^2 beta^2``.

    ``payoff_vector`` enables the empirical ``beta^2 / |f_pay|^2`` ratio that ``zeta``
    is supposed to bound; ``n_grid_points`` enables the point-mass bound ``zeta N_gr B^2``.
    """
    if not 0 < epsilon < 1:
        raise DomainError(f"epsilon must lie in (0, 1), got {epsilon}")
    if zeta <= 0 or A_tilde <= 0:
        raise DomainError("zeta and A_tilde must be positive")
    if B is None:
        B = payoff_bound(contract)
    if B <= 0:
        raise DomainError(f"payoff bound must be positive, got {B}")
    d = model.d
    sig = model.sigma_array
    lo, hi, s0 = np.asarray(contract.lower), np.asarray(contract.upper), model.s0_array
    Lg = _log_term(d, A_tilde, epsilon)
    t_ter = compute_t_ter(model, contract, epsilon, A_tilde).t_ter

    ratio = hi / lo
    xi = zeta * B**2 * (8 * math.pi * t_ter) ** (-d / 2) * float(np.prod((ratio - 1) / sig))
    chi_min = float(min(np.min(hi / s0), np.min(s0 / lo)))
    xi_max = float(np.max(ratio))
    per_dim = 5 / (4 * math.sqrt(math.pi)) * (xi_max - 1) / math.log(chi_min) * sig.max() / sig.min()
    xi_upper = zeta * B**2 * per_dim**d * Lg ** (d / 2)
    base_lower = zeta * B**2 * (25 / (4 * math.pi) * Lg) ** (d / 2)
    xi_lower = base_lower * float(np.prod((ratio - 1) / np.log(ratio)))
    n_swap = (xi_upper / epsilon) ** 2

    alpha2 = beta2 = ab = n_act = zeta_emp = None
    if p_vector is not None:
        alpha2 = float(np.sum(np.square(p_vector)))
    if v_vector is not None:
        beta2 = float(np.sum(np.square(v_vector)))
    if alpha2 is not None and beta2 is not None:
        ab = alpha2 * beta2
        n_act = (ab / epsilon) ** 2
    if beta2 is not None and payoff_vector is not None:
        zeta_emp = beta2 / float(np.sum(np.square(payoff_vector)))
    lost = zeta * n_grid_points * B**2 if n_grid_points is not None else None
    return MeasurementPlan(
        zeta, B, A_tilde, epsilon, t_ter, xi, xi_upper, xi_lower, base_lower, n_swap,
        alpha2, beta2, ab, n_act, zeta_emp, lost,
    )
