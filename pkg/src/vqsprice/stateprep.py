"""Loading classical vectors as scaled quantum states.

``exact_encode`` is the amplitude oracle assumed by the pricing algorithm.
``variational_fit`` searches the layered ansatz applied to ``|0>`` for the
state of maximal squared overlap with a target, using parameter-shift
gradients and L-BFGS-B restarts.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .errors import DomainError
from .quantum import AnsatzCircuit, Prepare, StateVector, apply_to_array
from .rng import philox

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PreparedState:
    """``scale * U|0>`` approximating a target; ``ansatz is None`` marks an exact encoding."""

    scale: float
    amplitudes: np.ndarray = field(repr=False)
    fidelity: float
    ansatz: AnsatzCircuit | None = None
    angles: np.ndarray | None = field(default=None, repr=False)
    trace: tuple[float, ...] = field(default=(), repr=False)

    @property
    def n(self) -> int:
        return self.amplitudes.size.bit_length() - 1

    @property
    def is_exact(self) -> bool:
        return self.ansatz is None

    def state(self) -> StateVector:
        return StateVector(self.n, self.amplitudes.astype(complex), self.scale)

    def vector(self) -> np.ndarray:
        return self.scale * self.amplitudes

    def gates(self) -> tuple:
        """Circuit taking ``|0>`` to the normalised amplitudes."""
        if self.ansatz is None:
            return (Prepare(tuple(range(self.n)), self.amplitudes),)
        return self.ansatz.gates(self.angles)

    def to_dict(self) -> dict:
        out = {"scale": self.scale, "fidelity": self.fidelity, "exact": self.is_exact}
        if self.ansatz is not None:
            out.update(n=self.ansatz.n, m=self.ansatz.m, angles=[float(a) for a in self.angles])
        return out


def _real_target(target) -> np.ndarray:
    t = np.asarray(target)
    if np.iscomplexobj(t):
        if np.abs(t.imag).max() > 0:
            raise DomainError("only real targets are supported")
        t = t.real
    t = np.asarray(t, dtype=float).ravel()
    if t.size < 2 or t.size & (t.size - 1):
        raise DomainError(f"target length must be a power of two >= 2, got {t.size}")
    return t


def exact_encode(target) -> PreparedState:
    """Norm as scale, direction as amplitudes, fidelity 1."""
    t = _real_target(target)
    norm = float(np.linalg.norm(t))
    if norm == 0:
        raise DomainError("cannot encode the zero vector")
    return PreparedState(norm, t / norm, 1.0)


def parameter_shift_gradient(objective: Callable[[np.ndarray], float], theta, k: int) -> float:
    """``(f(theta + pi/2 e_k) - f(theta - pi/2 e_k)) / 2`` for ``f`` an expectation-type function of an RY angle."""
    theta = np.asarray(theta, dtype=float)
    e = np.zeros_like(theta)
    e[k] = math.pi / 2
    return 0.5 * (objective(theta + e) - objective(theta - e))


def overlap(ansatz: AnsatzCircuit, angles, unit_target: np.ndarray) -> float:
    """``<target| R(angles) |0>`` for a real unit target."""
    psi = np.zeros((1, 1 << ansatz.n))
    psi[0, 0] = 1.0
    return float(ansatz.apply_batch(np.asarray(angles, dtype=float)[None, :], psi)[0] @ unit_target)


def overlap_and_gradient(ansatz: AnsatzCircuit, angles, unit_target: np.ndarray) -> tuple[float, np.ndarray]:
    """Overlap and its gradient from one batched circuit run.

    An amplitude is linear in ``cos(a/2), sin(a/2)`` of each angle, so its derivative
    is half the amplitude with that angle advanced by ``pi``.
    """
    angles = np.asarray(angles, dtype=float)
    P = angles.size
    shifts = np.vstack([np.zeros(P), math.pi * np.eye(P)])
    psi = np.zeros((P + 1, 1 << ansatz.n))
    psi[:, 0] = 1.0
    vals = ansatz.apply_batch(angles[None, :] + shifts, psi) @ unit_target
    return float(vals[0]), 0.5 * vals[1:]


def squared_overlap_gradient(ansatz: AnsatzCircuit, angles, unit_target: np.ndarray) -> np.ndarray:
    """Gradient of ``<t|R|0>^2`` by the chain rule on the shifted overlaps."""
    f, g = overlap_and_gradient(ansatz, angles, unit_target)
    return 2 * f * g


def variational_fit(
    target,
    n: int,
    m: int,
    restarts: int = 5,
    maxiter: int = 2000,
    seed: int = 0,
    init_scale: float = math.pi,
    tol: float = 1e-14,
) -> PreparedState:
    """Maximise ``|<target|R(theta)|0>|^2`` over ``restarts`` random starts.

    Starts are uniform in ``[-init_scale, init_scale]``; ``theta = 0`` is avoided because a
    target orthogonal to ``|0>`` has a vanishing gradient there.
    The returned scale is ``|target|`` with the sign that makes the overlap nonnegative.
    """
    t = _real_target(target)
    if t.size != 1 << n:
        raise DomainError(f"target length {t.size} does not match {n} qubits")
    norm = float(np.linalg.norm(t))
    if norm == 0:
        raise DomainError("cannot fit the zero vector")
    if restarts < 1:
        raise DomainError("at least one restart is required")
    unit = t / norm
    ansatz = AnsatzCircuit(n, m)
    rng = philox(seed, 0x9F1)

    def loss(x):
        f, g = overlap_and_gradient(ansatz, x, unit)
        return 1.0 - f * f, -2 * f * g

    best_fid, best_x = -1.0, None
    trace = []
    for r in range(restarts):
        x0 = rng.uniform(-init_scale, init_scale, ansatz.num_circuit_params)
        res = minimize(loss, x0, jac=True, method="L-BFGS-B", options={"maxiter": maxiter, "ftol": tol, "gtol": 1e-12})
        fid = min(1.0, 1.0 - float(res.fun))
        logger.debug("restart %d: fidelity %.3e deficit after %d iterations", r, 1 - fid, res.nit)
        if fid > best_fid:
            best_fid, best_x = fid, res.x
        trace.append(best_fid)
    psi = np.zeros(1 << n)
    psi[0] = 1.0
    amps = apply_to_array(psi, ansatz.gates(best_x), n).real
    sign = 1.0 if amps @ unit >= 0 else -1.0
    return PreparedState(sign * norm, amps, best_fid, ansatz, np.asarray(best_x), tuple(trace))
