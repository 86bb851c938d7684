"""Market and contract data, lognormal analytics, and classical reference pricers.

Everything here is classical: the multi-asset Black-Scholes model, the basket
payoff ``max(a_0 + sum_i a_i s_i, 0)`` with per-asset corridors, the terminal
horizon ``t_ter`` at which prices are paired with the analytic density, the
Kunitomo-Ikeda double-barrier series and a Monte Carlo oracle.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Literal, NamedTuple, Sequence

import numpy as np
from scipy.special import erfc

from .errors import DomainError, UnsupportedContractError
from .rng import philox

if TYPE_CHECKING:
    from .fdm import Grid

logger = logging.getLogger(__name__)

BoundaryKind = Literal["knock-out", "linear"]
_BOUNDARY_KINDS = ("knock-out", "linear")


@dataclass(frozen=True)
class MarketModel:
    """Risk-neutral multi-asset geometric Brownian motion.

    ``dS_i = r S_i dt + sigma_i S_i dW_i`` with ``dW_i dW_j = rho_ij dt``.
    """

    r: float
    sigma: tuple[float, ...]
    rho: tuple[tuple[float, ...], ...]
    s0: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "sigma", tuple(float(v) for v in self.sigma))
        object.__setattr__(self, "s0", tuple(float(v) for v in self.s0))
        object.__setattr__(self, "rho", tuple(tuple(float(v) for v in row) for row in self.rho))
        d = len(self.sigma)
        if d < 1:
            raise DomainError("at least one asset is required")
        if len(self.s0) != d:
            raise DomainError(f"s0 has length {len(self.s0)}, expected {d}")
        if self.r <= 0:
            raise DomainError(f"risk-free rate must be positive, got {self.r}")
        if any(s <= 0 for s in self.sigma):
            raise DomainError(f"volatilities must be positive, got {self.sigma}")
        if any(s <= 0 for s in self.s0):
            raise DomainError(f"spot prices must be positive, got {self.s0}")
        rho = np.asarray(self.rho, dtype=float)
        if rho.shape != (d, d):
            raise DomainError(f"rho has shape {rho.shape}, expected {(d, d)}")
        if not np.allclose(rho, rho.T, atol=0.0, rtol=0.0):
            raise DomainError("correlation matrix must be symmetric")
        if not np.all(np.diag(rho) == 1.0):
            raise DomainError("correlation matrix must have unit diagonal")
        off = rho[~np.eye(d, dtype=bool)]
        if np.any(np.abs(off) >= 1.0):
            raise DomainError("off-diagonal correlations must lie in (-1, 1)")
        if np.linalg.eigvalsh(rho).min() < -1e-12:
            raise DomainError("correlation matrix must be positive semidefinite")
        if not self.rate_assumption_holds:
            logger.info("r >= sigma_i^2 / 2 for some asset; the 0 < r < sigma^2/2 assumption does not hold")

    @classmethod
    def single(cls, r: float, sigma: float, s0: float) -> "MarketModel":
        return cls(r=r, sigma=(sigma,), rho=((1.0,),), s0=(s0,))

    @property
    def d(self) -> int:
        return len(self.sigma)

    @property
    def rate_assumption_holds(self) -> bool:
        """Whether ``0 < r < sigma_i^2 / 2`` for every asset (reported, never enforced)."""
        return all(self.r < s * s / 2 for s in self.sigma)

    @property
    def sigma_array(self) -> np.ndarray:
        return np.asarray(self.sigma)

    @property
    def rho_array(self) -> np.ndarray:
        return np.asarray(self.rho)

    @property
    def s0_array(self) -> np.ndarray:
        return np.asarray(self.s0)

    def log_covariance(self, t: float) -> np.ndarray:
        s = self.sigma_array
        return np.outer(s, s) * self.rho_array * t

    def to_dict(self) -> dict:
        return {"r": self.r, "sigma": list(self.sigma), "rho": [list(r) for r in self.rho], "s0": list(self.s0)}

    @classmethod
    def from_dict(cls, data: dict) -> "MarketModel":
        sigma = data["sigma"]
        d = len(sigma)
        rho = data.get("rho", np.eye(d).tolist())
        return cls(r=data["r"], sigma=tuple(sigma), rho=tuple(map(tuple, rho)), s0=tuple(data["s0"]))


@dataclass(frozen=True)
class DerivativeContract:
    """Basket payoff on a box ``prod_i (lower_i, upper_i)`` with per-side boundary kinds.

    ``weights`` holds ``(a_0, a_1, ..., a_d)``. A knock-out side pins the price on
    that face to zero; a linear side uses the discounted-forward affine value.
    """

    maturity: float
    weights: tuple[float, ...]
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    lower_kind: tuple[BoundaryKind, ...] = field(default=())
    upper_kind: tuple[BoundaryKind, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(v) for v in self.weights))
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        object.__setattr__(self, "upper", tuple(float(v) for v in self.upper))
        d = len(self.lower)
        if not self.lower_kind:
            object.__setattr__(self, "lower_kind", ("knock-out",) * d)
        if not self.upper_kind:
            object.__setattr__(self, "upper_kind", ("knock-out",) * d)
        object.__setattr__(self, "lower_kind", tuple(self.lower_kind))
        object.__setattr__(self, "upper_kind", tuple(self.upper_kind))
        if self.maturity <= 0:
            raise DomainError(f"maturity must be positive, got {self.maturity}")
        if len(self.upper) != d or len(self.weights) != d + 1:
            raise DomainError("weights must have d+1 entries and bounds d entries")
        if len(self.lower_kind) != d or len(self.upper_kind) != d:
            raise DomainError("one boundary kind per asset and side is required")
        for kind in self.lower_kind + self.upper_kind:
            if kind not in _BOUNDARY_KINDS:
                raise DomainError(f"unknown boundary kind {kind!r}")
        for lo, hi in zip(self.lower, self.upper):
            if not 0 < lo < hi:
                raise DomainError(f"need 0 < lower < upper, got ({lo}, {hi})")

    @classmethod
    def double_barrier_call(cls, strike: float, lower: float, upper: float, maturity: float) -> "DerivativeContract":
        return cls(maturity=maturity, weights=(-strike, 1.0), lower=(lower,), upper=(upper,))

    @property
    def d(self) -> int:
        return len(self.lower)

    @property
    def all_knock_out(self) -> bool:
        return all(k == "knock-out" for k in self.lower_kind + self.upper_kind)

    def check_against(self, model: MarketModel) -> None:
        if model.d != self.d:
            raise DomainError(f"contract has {self.d} assets, model has {model.d}")
        for i, (lo, s, hi) in enumerate(zip(self.lower, model.s0, self.upper)):
            if not lo < s < hi:
                raise DomainError(f"asset {i}: spot {s} outside corridor ({lo}, {hi})")

    def payoff_unchecked(self, s: np.ndarray) -> np.ndarray:
        """Vectorised payoff over the trailing axis, no domain check."""
        s = np.asarray(s, dtype=float)
        a = np.asarray(self.weights)
        return np.maximum(a[0] + s @ a[1:], 0.0)

    def upper_value(self, i: int, discount: float, s: np.ndarray) -> np.ndarray:
        """Price on the face ``s_i = u_i`` given ``discount = exp(-r tau)``; zero for knock-out.

        Only the coordinates ``s_j, j != i`` are read; ``s_i`` is replaced by the bound.
        """
        return self._face_value(i, discount, s, self.upper_kind[i], self.upper[i])

    def lower_value(self, i: int, discount: float, s: np.ndarray) -> np.ndarray:
        """Price on the face ``s_i = l_i``; see :meth:`upper_value`."""
        return self._face_value(i, discount, s, self.lower_kind[i], self.lower[i])

    def _face_value(self, i, discount, s, kind, level):
        s = np.asarray(s, dtype=float)
        if kind == "knock-out":
            return np.zeros(s.shape[:-1])
        a = np.asarray(self.weights)
        others = np.delete(np.arange(self.d), i)
        return discount * a[0] + s[..., others] @ a[1:][others] + a[i + 1] * level

    def to_dict(self) -> dict:
        return {
            "maturity": self.maturity,
            "weights": list(self.weights),
            "lower": list(self.lower),
            "upper": list(self.upper),
            "lower_kind": list(self.lower_kind),
            "upper_kind": list(self.upper_kind),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DerivativeContract":
        return cls(
            maturity=data["maturity"],
            weights=tuple(data["weights"]),
            lower=tuple(data["lower"]),
            upper=tuple(data["upper"]),
            lower_kind=tuple(data.get("lower_kind", ())),
            upper_kind=tuple(data.get("upper_kind", ())),
        )


def payoff_eval(contract: DerivativeContract, s: Sequence[float] | float) -> float:
    """``max(a_0 + sum_i a_i s_i, 0)`` at a point inside the contract box."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if s.shape != (contract.d,):
        raise DomainError(f"expected a {contract.d}-vector, got shape {s.shape}")
    lo, hi = np.asarray(contract.lower), np.asarray(contract.upper)
    if np.any(s < lo) or np.any(s > hi):
        raise DomainError(f"point {s.tolist()} outside the contract bounds")
    return float(contract.payoff_unchecked(s))


def norm_cdf(x):
    """Standard normal CDF via ``erfc``; accurate in both tails."""
    return 0.5 * erfc(-np.asarray(x, dtype=float) / math.sqrt(2.0))


def lognormal_pdf(model: MarketModel, t: float, x) -> np.ndarray | float:
    """Joint density of ``S(t)`` at price points ``x`` (trailing axis of length d)."""
    if t <= 0:
        raise DomainError(f"density needs t > 0, got {t}")
    x = np.asarray(x, dtype=float)
    if model.d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    if x.shape[-1] != model.d:
        raise DomainError(f"points must have trailing dimension {model.d}")
    single = x.ndim == 1
    if np.any(x <= 0):
        raise DomainError("density is defined for strictly positive prices only")
    sig = model.sigma_array
    mean = np.log(model.s0_array) + (model.r - 0.5 * sig**2) * t
    cov = model.log_covariance(t)
    chol = np.linalg.cholesky(cov)
    z = np.linalg.solve(chol, (np.log(x) - mean).reshape(-1, model.d).T)
    quad = np.sum(z * z, axis=0)
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    log_norm = 0.5 * model.d * math.log(2 * math.pi) + 0.5 * log_det
    dens = np.exp(-0.5 * quad - log_norm) / np.prod(x.reshape(-1, model.d), axis=1)
    if single:
        return float(dens[0])
    return dens.reshape(x.shape[:-1])


def discretized_probabilities(model: MarketModel, t: float, grid: "Grid") -> np.ndarray:
    """Cell weights ``p_k(t) = pdf(t, x_k) * prod_i h_i`` in flat grid order."""
    pts = grid.points()
    return np.asarray(lognormal_pdf(model, t, pts)).reshape(-1) * float(np.prod(grid.h))


class TerminalTime(NamedTuple):
    t_ter: float
    asset: int
    side: Literal["upper", "lower"]


def compute_t_ter(
    model: MarketModel, contract: DerivativeContract, epsilon: float, A_tilde: float
) -> TerminalTime:
    """Largest horizon at which the corridor is still effectively never left.

    Minimum over assets and sides of
    ``2 ln(bound ratio)^2 / (25 sigma_i^2 ln(2 A d (d+1) / epsilon))``.
    """
    if not 0 < epsilon < 1:
        raise DomainError(f"epsilon must lie in (0, 1), got {epsilon}")
    if A_tilde <= 0:
        raise DomainError(f"A_tilde must be positive, got {A_tilde}")
    d = model.d
    log_term = math.log(2 * A_tilde * d * (d + 1) / epsilon)
    if log_term <= 0:
        raise DomainError("2 A d (d+1) / epsilon must exceed 1")
    best = None
    for i in range(d):
        s0, lo, hi, sig = model.s0[i], contract.lower[i], contract.upper[i], model.sigma[i]
        if lo >= s0 or hi <= s0:
            raise DomainError(f"asset {i}: spot {s0} must lie strictly inside ({lo}, {hi})")
        for side, ratio in (("upper", hi / s0), ("lower", s0 / lo)):
            val = 2 * math.log(ratio) ** 2 / (25 * sig**2 * log_term)
            if best is None or val < best.t_ter:
                best = TerminalTime(val, i, side)
    return best


def _single_asset_call_terms(model: MarketModel, contract: DerivativeContract):
    if model.d != 1 or contract.d != 1:
        raise UnsupportedContractError("the double-barrier series is single-asset only")
    if not contract.all_knock_out:
        raise UnsupportedContractError("the double-barrier series needs knock-out on both sides")
    a0, a1 = contract.weights
    if a1 <= 0:
        raise UnsupportedContractError("only call-type payoffs a_1 > 0 are supported")
    return a1, -a0 / a1


def analytic_double_barrier_price(
    model: MarketModel, contract: DerivativeContract, series_tolerance: float = 1e-12
) -> tuple[float, int]:
    """Kunitomo-Ikeda price of a flat double knock-out call at t = 0.

    Returns ``(price, N)`` where ``N`` is the last ring ``|n| = N`` included.
    Rings are added until one contributes less than ``series_tolerance`` and
    ``N >= 3``.
    """
    scale, strike = _single_asset_call_terms(model, contract)
    S, r, sig, T = model.s0[0], model.r, model.sigma[0], contract.maturity
    L, U = contract.lower[0], contract.upper[0]
    if not L < S < U:
        return 0.0, 0
    # Integration window of S_T: payoff positive above the strike, alive inside (L, U).
    a = max(strike, L)
    if a >= U:
        return 0.0, 0
    mu = 2 * r / sig**2 + 1
    vol = sig * math.sqrt(T)
    drift = (r + 0.5 * sig**2) * T
    lnU, lnL, lnS, lna = math.log(U), math.log(L), math.log(S), math.log(a)
    disc_k = strike * math.exp(-r * T)

    def ring_term(n: int) -> float:
        d1 = (lnS + 2 * n * (lnU - lnL) - lna + drift) / vol
        d2 = (lnS + 2 * n * (lnU - lnL) - lnU + drift) / vol
        d3 = ((2 * n + 2) * lnL - lna - lnS - 2 * n * lnU + drift) / vol
        d4 = ((2 * n + 2) * lnL - lnU - lnS - 2 * n * lnU + drift) / vol
        log_ratio = n * (lnU - lnL)
        log_refl = (n + 1) * lnL - n * lnU - lnS
        nd = norm_cdf([d1, d2, d3, d4, d1 - vol, d2 - vol, d3 - vol, d4 - vol])
        s_part = math.exp(mu * log_ratio) * (nd[0] - nd[1]) - math.exp(mu * log_refl) * (nd[2] - nd[3])
        k_part = math.exp((mu - 2) * log_ratio) * (nd[4] - nd[5]) - math.exp((mu - 2) * log_refl) * (nd[6] - nd[7])
        return S * s_part - disc_k * k_part

    total = ring_term(0)
    n = 0
    while True:
        n += 1
        ring = ring_term(n) + ring_term(-n)
        total += ring
        if n >= 3 and abs(ring) < series_tolerance:
            break
        if n > 10_000:
            break
    return scale * total, n


class MonteCarloResult(NamedTuple):
    mean: float
    stderr: float


def monte_carlo_price(
    model: MarketModel,
    contract: DerivativeContract,
    paths: int,
    steps: int,
    seed: int,
    chunk_size: int = 1 << 12,
    block_elements: int = 1 << 20,
) -> MonteCarloResult:
    """Discretely monitored Monte Carlo price at t = 0.

    Log-prices are simulated exactly on a uniform grid of ``steps`` intervals;
    a path dies when any knock-out face is touched at a grid time. Paths come
    in antithetic pairs sharing one set of normals with opposite signs, and the
    standard error is taken over pair averages. Paths are processed in chunks,
    each with its own Philox stream keyed by ``(seed, chunk)``.
    """
    if paths < 1 or steps < 1:
        raise DomainError("paths and steps must both be at least 1")
    contract.check_against(model)
    d = model.d
    dt = contract.maturity / steps
    sig = model.sigma_array
    drift = (model.r - 0.5 * sig**2) * dt
    chol = np.linalg.cholesky(model.rho_array) * (sig * math.sqrt(dt))[:, None]
    x0 = np.log(model.s0_array)
    ko_hi = np.array([math.log(u) if k == "knock-out" else np.inf for u, k in zip(contract.upper, contract.upper_kind)])
    ko_lo = np.array([math.log(l) if k == "knock-out" else -np.inf for l, k in zip(contract.lower, contract.lower_kind)])
    has_barrier = bool(np.any(np.isfinite(ko_hi)) or np.any(np.isfinite(ko_lo)))

    pairs = (paths + 1) // 2
    total = 0.0
    total_sq = 0.0
    done = 0
    chunk = 0
    half_chunk = max(1, chunk_size // 2)
    while done < pairs:
        mp = min(half_chunk, pairs - done)
        rng = philox(seed, chunk)
        # Path j < mp uses +z of pair j, path j >= mp uses -z of pair j - mp.
        ids = np.arange(2 * mp)
        x = np.tile(x0, (2 * mp, 1))
        step = 0
        while step < steps and ids.size > 0:
            live_pairs, rows = np.unique(ids % mp, return_inverse=True)
            block = max(1, min(steps - step, block_elements // max(1, ids.size * d)))
            sign = np.where(ids < mp, 1.0, -1.0)
            if d == 1:
                path = rng.standard_normal((live_pairs.size, block))[rows]
                path *= (sign * chol[0, 0])[:, None]
                path += drift[0]
                np.cumsum(path, axis=1, out=path)
                path += x
                if has_barrier:
                    alive = (path.max(axis=1) < ko_hi[0]) & (path.min(axis=1) > ko_lo[0])
                    x = path[alive, -1:]
                    ids = ids[alive]
                else:
                    x = path[:, -1:]
            else:
                z = rng.standard_normal((live_pairs.size, block, d))[rows] * sign[:, None, None]
                path = x[:, None, :] + np.cumsum(z @ chol.T + drift, axis=1)
                if has_barrier:
                    alive = np.all((path.max(axis=1) < ko_hi) & (path.min(axis=1) > ko_lo), axis=1)
                    path = path[alive]
                    ids = ids[alive]
                x = path[:, -1, :]
            step += block
        pay = np.zeros(2 * mp)
        pay[ids] = contract.payoff_unchecked(np.exp(x))
        pair_mean = 0.5 * (pay[:mp] + pay[mp:])
        total += float(pair_mean.sum())
        total_sq += float(np.square(pair_mean).sum())
        done += mp
        chunk += 1
    disc = math.exp(-model.r * contract.maturity)
    mean = total / pairs
    var = max(total_sq / pairs - mean * mean, 0.0) * pairs / max(pairs - 1, 1)
    return MonteCarloResult(disc * mean, disc * math.sqrt(var / pairs))
