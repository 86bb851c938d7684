"""McLachlan variational simulation of ``dV/dtau = F V + C(tau)``.

The ansatz state is ``theta_0 R(theta_1..) |b>`` with ``|b>`` a fixed unit
vector. Each step solves ``M theta_dot = V`` with

    M_ij = Re <d_i v | d_j v>,      V_i = Re <d_i v | (L v + u(tau))>,

and advances ``theta`` by explicit Euler. ``d_0 v = R|b>`` and, for a
rotation angle, ``d_k v = theta_0 / 2 * R_k'|b>`` where ``R_k'`` is the circuit
with angle ``k`` advanced by pi.

Two evaluation modes exist. ``exact`` forms every derivative state at once
and takes dot products. ``circuit`` evaluates each entry as a Hadamard test,
either exactly or by sampling ``shots`` outcomes.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
import scipy.linalg as sla

from .decomposition import WeightedUnitarySum, to_sparse
from .errors import DomainError, StabilityError
from .fdm import Trajectory, _step_schedule
from .quantum import AnsatzCircuit, Prepare, StateVector, apply_circuit, hadamard_test_real

logger = logging.getLogger(__name__)

Mode = Literal["exact", "circuit"]


def _unit_base(base) -> np.ndarray:
    if isinstance(base, StateVector):
        base = base.amplitudes
    b = np.asarray(base)
    if np.iscomplexobj(b):
        if np.abs(b.imag).max() > 1e-12:
            raise DomainError("the variational solver handles real base states only")
        b = b.real
    b = np.asarray(b, dtype=float)
    return b / np.linalg.norm(b)


def _split_theta(ansatz: AnsatzCircuit, theta) -> tuple[float, np.ndarray]:
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.size != ansatz.num_params:
        raise DomainError(f"expected {ansatz.num_params} parameters, got {theta.size}")
    return float(theta[0]), theta[1:]


def derivative_states(ansatz: AnsatzCircuit, theta, base) -> np.ndarray:
    """Matrix whose column ``k`` is ``d|v>/d theta_k`` for every parameter."""
    t0, angles = _split_theta(ansatz, theta)
    b = _unit_base(base)
    P = ansatz.num_circuit_params
    rows = np.repeat(angles[None, :], P + 1, axis=0)
    rows[1:] += math.pi * np.eye(P)
    states = ansatz.apply_batch(rows, np.repeat(b[None, :], P + 1, axis=0))
    states[1:] *= t0 / 2
    return states.T


def derivative_state(ansatz: AnsatzCircuit, theta, k: int, base) -> StateVector:
    """``d|v>/d theta_k`` as a state: scale 1 for ``k = 0``, ``theta_0 / 2`` otherwise."""
    t0, angles = _split_theta(ansatz, theta)
    if not 0 <= k <= ansatz.num_circuit_params:
        raise DomainError(f"parameter index {k} out of range 0..{ansatz.num_circuit_params}")
    b = _unit_base(base)
    gates = ansatz.gates(angles) if k == 0 else ansatz.derivative_gates(angles, k - 1)
    state = StateVector(ansatz.n, b.astype(complex), 1.0 if k == 0 else t0 / 2)
    return apply_circuit(state, gates)


def _entry_gates(ansatz: AnsatzCircuit, angles: np.ndarray, k: int) -> tuple[tuple, float]:
    """Circuit and prefactor (relative to theta_0 scaling) of derivative ``k``."""
    if k == 0:
        return ansatz.gates(angles), 1.0
    return ansatz.derivative_gates(angles, k - 1), 0.5


def compute_M(
    ansatz: AnsatzCircuit, theta, base, mode: Mode = "exact", shots: int | None = None, seed: int = 0,
    stream: Sequence[int] = (),
) -> np.ndarray:
    """Real symmetric ``M_ij = Re <d_i v|d_j v>``."""
    if mode == "exact":
        D = derivative_states(ansatz, theta, base)
        return D.T @ D
    if mode != "circuit":
        raise DomainError(f"unknown mode {mode!r}")
    t0, angles = _split_theta(ansatz, theta)
    b = _unit_base(base)
    P = ansatz.num_params
    M = np.empty((P, P))
    circuits = [_entry_gates(ansatz, angles, k) for k in range(P)]
    for i in range(P):
        for j in range(i, P):
            if i == j == 0:
                M[0, 0] = 1.0  # R|b> is a unit vector
                continue
            gi, pi = circuits[i]
            gj, pj = circuits[j]
            factor = pi * pj * (t0 if i else 1.0) * (t0 if j else 1.0)
            val = hadamard_test_real(gi, gj, b, shots, seed, (*stream, 0, i, j))
            M[i, j] = M[j, i] = factor * val
    return M


def compute_V(
    ansatz: AnsatzCircuit,
    theta,
    base,
    L: WeightedUnitarySum,
    u_terms: WeightedUnitarySum | None = None,
    tau: float = 0.0,
    mode: Mode = "exact",
    shots: int | None = None,
    seed: int = 0,
    stream: Sequence[int] = (),
) -> np.ndarray:
    """``V_i = Re <d_i v| (L(tau) v + u(tau))>``; an empty ``u_terms`` skips the source."""
    t0, angles = _split_theta(ansatz, theta)
    b = _unit_base(base)
    nq = ansatz.n
    has_u = u_terms is not None and len(u_terms) > 0
    if mode == "exact":
        D = derivative_states(ansatz, theta, base)
        v = t0 * D[:, 0]
        w = L.apply(v, tau)
        if has_u:
            w = w + u_terms.apply(_zero(nq), tau)
        return D.T @ w
    if mode != "circuit":
        raise DomainError(f"unknown mode {mode!r}")
    P = ansatz.num_params
    out = np.zeros(P)
    ket_base = ansatz.gates(angles)
    lam = L.coefficients(tau)
    loader = (Prepare(tuple(range(nq)), b),)
    eta = u_terms.coefficients(tau) if has_u else ()
    for i in range(P):
        gi, pi = _entry_gates(ansatz, angles, i)
        pref = pi * (t0 if i else 1.0)
        acc = 0.0
        for k, term in enumerate(L.terms):
            acc += lam[k] * t0 * hadamard_test_real(gi, ket_base + term.gates, b, shots, seed, (*stream, 1, i, k))
        if has_u:
            for l, term in enumerate(u_terms.terms):
                acc += eta[l] * hadamard_test_real(loader + gi, term.gates, _zero(nq), shots, seed, (*stream, 2, i, l))
        out[i] = pref * acc
    return out


def _zero(n: int) -> np.ndarray:
    e = np.zeros(1 << n)
    e[0] = 1.0
    return e


@dataclass(frozen=True)
class StepSolution:
    theta_dot: np.ndarray
    residual: float
    fallback: bool


def solve_step(M: np.ndarray, V: np.ndarray, reg: float = 1e-8) -> StepSolution:
    """Solve ``(M + reg I) x = V`` by Cholesky, else by least squares with cutoff ``1e-8 s_max``."""
    M = np.asarray(M, dtype=float)
    V = np.asarray(V, dtype=float)
    if M.shape != (V.size, V.size):
        raise DomainError(f"shape mismatch: M {M.shape}, V {V.shape}")
    if not (np.all(np.isfinite(M)) and np.all(np.isfinite(V))):
        raise DomainError("M or V contains non-finite entries")
    if reg < 0:
        raise DomainError("regularisation must be nonnegative")
    fallback = False
    try:
        x = sla.cho_solve(sla.cho_factor(M + reg * np.eye(V.size), check_finite=False), V, check_finite=False)
        if not np.all(np.isfinite(x)):
            raise np.linalg.LinAlgError
    except (np.linalg.LinAlgError, sla.LinAlgError):
        x = np.linalg.lstsq(M + reg * np.eye(V.size), V, rcond=1e-8)[0]
        fallback = True
    return StepSolution(x, float(np.linalg.norm(M @ x - V)), fallback)


@dataclass(frozen=True)
class VqsConfig:
    dtau: float
    tau_end: float
    reg: float = 1e-8
    mode: Mode = "exact"
    shots: int | None = None
    seed: int = 0
    snapshots: tuple[float, ...] = ()
    theta0_bound: float = 1e6

    def __post_init__(self):
        if self.dtau <= 0:
            raise DomainError(f"dtau must be positive, got {self.dtau}")
        if self.tau_end < 0:
            raise DomainError(f"tau_end must be non-negative, got {self.tau_end}")
        if self.reg < 0:
            raise DomainError("reg must be nonnegative")
        if self.mode not in ("exact", "circuit"):
            raise DomainError(f"unknown mode {self.mode!r}")
        object.__setattr__(self, "snapshots", tuple(float(s) for s in self.snapshots))


@dataclass
class VqsTrajectory:
    """Parameter history; row ``i`` of ``thetas`` is the full vector at ``times[i]``."""

    times: np.ndarray
    thetas: np.ndarray
    cond: np.ndarray
    residual: np.ndarray
    snapshot_times: tuple[float, ...] = ()
    theta0_exceeded_at: float | None = None
    fallbacks: int = 0

    def at(self, tau: float, atol: float = 1e-12) -> np.ndarray:
        hits = np.flatnonzero(np.abs(self.times - tau) <= atol)
        if not hits.size:
            raise KeyError(f"no parameters recorded at tau={tau}")
        return self.thetas[hits[-1]]

    @property
    def final(self) -> np.ndarray:
        return self.thetas[-1]

    def to_csv(self, path) -> None:
        P = self.thetas.shape[1]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["tau", *[f"theta_{k}" for k in range(P)], "cond", "residual"])
            for t, th, c, r in zip(self.times, self.thetas, self.cond, self.residual):
                w.writerow([repr(float(t)), *[repr(float(x)) for x in th], repr(float(c)), repr(float(r))])


def run_vqs(
    ansatz: AnsatzCircuit,
    theta_init,
    base,
    L: WeightedUnitarySum,
    u_terms: WeightedUnitarySum | None,
    config: VqsConfig,
) -> VqsTrajectory:
    """Euler-step the parameters from ``tau = 0`` to ``config.tau_end``.

    A row is recorded after every step with the condition number and
    residual of the solve that produced it; the initial row borrows those of
    the first solve.
    """
    theta = np.array(theta_init, dtype=float).ravel()
    _split_theta(ansatz, theta)
    b = _unit_base(base)
    exact = config.mode == "exact"
    if exact:
        Lmat = to_sparse(L)
        has_u = u_terms is not None and len(u_terms) > 0
        if has_u:
            const, disc = u_terms.time_split()
            u_const = const.apply(_zero(ansatz.n)) if len(const) else np.zeros(1 << ansatz.n)
            u_disc = disc.apply(_zero(ansatz.n)) if len(disc) else np.zeros(1 << ansatz.n)
        if any(t.profile == "discounted" for t in L.terms):
            raise DomainError("generator terms must be time independent")
    times, rows, conds, resids = [], [], [], []
    exceeded = None
    fallbacks = 0
    step_no = 0
    last_cond = last_res = float("nan")
    for tau, step, is_mark in _step_schedule(config.dtau, config.tau_end, [0.0, *config.snapshots]):
        if is_mark:
            if not times or abs(times[-1] - tau) > 1e-12:
                times.append(tau)
                rows.append(theta.copy())
                conds.append(last_cond)
                resids.append(last_res)
            continue
        if exact:
            D = derivative_states(ansatz, theta, b)
            M = D.T @ D
            w = Lmat @ (theta[0] * D[:, 0])
            if has_u:
                w = w + u_const + math.exp(-L.r * tau) * u_disc
            V = D.T @ w
        else:
            M = compute_M(ansatz, theta, b, "circuit", config.shots, config.seed, (step_no,))
            V = compute_V(ansatz, theta, b, L, u_terms, tau, "circuit", config.shots, config.seed, (step_no,))
        sol = solve_step(M, V, config.reg)
        fallbacks += sol.fallback
        last_cond = float(np.linalg.cond(M))
        last_res = sol.residual
        if len(conds) == 1 and math.isnan(conds[0]):
            conds[0], resids[0] = last_cond, last_res
        new = theta + step * sol.theta_dot
        if not np.all(np.isfinite(new)):
            raise StabilityError(f"variational parameters became non-finite after tau={tau:.6g}", last_good_tau=tau)
        theta = new
        step_no += 1
        if exceeded is None and abs(theta[0]) > config.theta0_bound:
            exceeded = tau + step
            warnings.warn(
                f"|theta_0| = {abs(theta[0]):.3g} exceeded the bound {config.theta0_bound:.3g} at tau={exceeded:.6g}",
                RuntimeWarning,
                stacklevel=2,
            )
        times.append(tau + step)
        rows.append(theta.copy())
        conds.append(last_cond)
        resids.append(last_res)
    return VqsTrajectory(
        np.asarray(times),
        np.asarray(rows),
        np.asarray(conds),
        np.asarray(resids),
        tuple(sorted({0.0, *config.snapshots, float(config.tau_end)})),
        exceeded,
        fallbacks,
    )


def vqs_state(ansatz: AnsatzCircuit, theta, base) -> np.ndarray:
    """The unnormalised ansatz vector ``theta_0 R(theta)|b>``."""
    t0, angles = _split_theta(ansatz, theta)
    return t0 * ansatz.apply_batch(angles[None, :], _unit_base(base)[None, :].copy())[0]


@dataclass(frozen=True)
class FidelityRow:
    tau: float
    fidelity: float
    theta0_ratio: float
    norm_ratio: float


def vqs_vs_exact_report(
    trajectory: VqsTrajectory, ansatz: AnsatzCircuit, base, classical: Trajectory
) -> list[FidelityRow]:
    """Overlap ``|<V|v>| / (|V| |v|)`` and scale ratios at every shared snapshot."""
    ref0 = np.linalg.norm(classical.values[0])
    theta0_init = trajectory.thetas[0, 0]
    rows = []
    for tau in trajectory.snapshot_times:
        try:
            vc = classical.at(tau)
        except KeyError as exc:
            raise DomainError(f"classical trajectory has no snapshot at tau={tau}") from exc
        th = trajectory.at(tau)
        v = vqs_state(ansatz, th, base)
        fid = abs(float(vc @ v)) / (np.linalg.norm(vc) * np.linalg.norm(v))
        rows.append(FidelityRow(tau, fid, th[0] / theta0_init, float(np.linalg.norm(vc) / ref0)))
    return rows
