"""Matrix-free statevector simulation.

Qubit 0 is the most significant bit of the basis index, so a register of
``n`` qubits holding asset ``i`` in block ``i`` reproduces the flat grid index
of :mod:`vqsprice.fdm`. Gate sequences are tuples applied left to right.

Every gate works on arrays of shape ``(batch, 2**n)``; the batch axis is how
derivative states and parameter-shift evaluations are produced in one pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence, Union

import numpy as np

from .errors import DomainError
from .rng import philox

MAX_DENSE_QUBITS = 10


# --------------------------------------------------------------------- gates


@dataclass(frozen=True)
class RY:
    qubit: int
    angle: float

    @property
    def qubits(self) -> tuple[int, ...]:
        return (self.qubit,)


@dataclass(frozen=True)
class X:
    qubit: int

    @property
    def qubits(self) -> tuple[int, ...]:
        return (self.qubit,)


@dataclass(frozen=True)
class Z:
    qubit: int

    @property
    def qubits(self) -> tuple[int, ...]:
        return (self.qubit,)


@dataclass(frozen=True)
class H:
    qubit: int

    @property
    def qubits(self) -> tuple[int, ...]:
        return (self.qubit,)


@dataclass(frozen=True)
class CZ:
    a: int
    b: int

    @property
    def qubits(self) -> tuple[int, ...]:
        return (self.a, self.b)


@dataclass(frozen=True)
class SWAP:
    a: int
    b: int

    @property
    def qubits(self) -> tuple[int, ...]:
        return (self.a, self.b)


@dataclass(frozen=True)
class MCZ:
    """Phase -1 on the all-ones pattern of ``qubits`` (``C^{k-1}Z``; plain Z for one qubit)."""

    targets: tuple[int, ...]

    @property
    def qubits(self) -> tuple[int, ...]:
        return self.targets


@dataclass(frozen=True)
class CycInc:
    """``|k> -> |k + 1 mod 2^len>`` on a contiguous register listed most significant first."""

    register: tuple[int, ...]

    @property
    def qubits(self) -> tuple[int, ...]:
        return self.register


@dataclass(frozen=True)
class CycDec:
    """Inverse of :class:`CycInc`."""

    register: tuple[int, ...]

    @property
    def qubits(self) -> tuple[int, ...]:
        return self.register


@dataclass(frozen=True)
class Controlled:
    """Apply ``body`` on the subspace where ``control`` is 1."""

    control: int
    body: tuple

    @property
    def qubits(self) -> tuple[int, ...]:
        qs = {self.control}
        for g in self.body:
            qs.update(g.qubits)
        return tuple(sorted(qs))


@dataclass(frozen=True, eq=False)
class Prepare:
    """Real Householder reflection taking ``|0>`` of ``register`` to ``vector / |vector|``.

    Stands in for an amplitude-loading oracle. It is its own inverse.
    """

    register: tuple[int, ...]
    vector: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=float).ravel()
        if v.size != 1 << len(self.register):
            raise DomainError(f"vector length {v.size} does not match a {len(self.register)}-qubit register")
        norm = np.linalg.norm(v)
        if norm == 0:
            raise DomainError("cannot prepare the zero vector")
        w = -v / norm
        w[0] += 1.0
        object.__setattr__(self, "vector", v / norm)
        object.__setattr__(self, "_w", w)
        object.__setattr__(self, "_ww", float(w @ w))

    @property
    def qubits(self) -> tuple[int, ...]:
        return self.register


GateOp = Union[RY, X, Z, H, CZ, SWAP, MCZ, CycInc, CycDec, Controlled, Prepare]


def _check_register(reg: Sequence[int]) -> None:
    if list(reg) != list(range(reg[0], reg[0] + len(reg))):
        raise DomainError(f"register {tuple(reg)} must be contiguous and ascending")


def _split(psi: np.ndarray, n: int, q: int) -> np.ndarray:
    return psi.reshape(psi.shape[0], 1 << q, 2, 1 << (n - q - 1))


def _bit_mask(n: int, qubits: Iterable[int]) -> np.ndarray:
    """Boolean mask of basis indices whose listed bits are all 1."""
    idx = np.arange(1 << n)
    mask = np.ones(1 << n, dtype=bool)
    for q in qubits:
        mask &= ((idx >> (n - 1 - q)) & 1).astype(bool)
    return mask


def apply_ry(psi: np.ndarray, n: int, q: int, angle) -> None:
    """In-place RY; ``angle`` may be a scalar or one angle per batch row."""
    v = _split(psi, n, q)
    half = np.asarray(angle, dtype=float) / 2
    c, s = np.cos(half), np.sin(half)
    if np.ndim(half):
        c, s = c[:, None, None], s[:, None, None]
    top = v[:, :, 0, :].copy()
    v[:, :, 0, :] *= c
    v[:, :, 0, :] -= s * v[:, :, 1, :]
    v[:, :, 1, :] *= c
    v[:, :, 1, :] += s * top


def _apply_one(psi: np.ndarray, n: int, g) -> np.ndarray:
    if isinstance(g, RY):
        apply_ry(psi, n, g.qubit, g.angle)
    elif isinstance(g, X):
        v = _split(psi, n, g.qubit)
        v[:] = v[:, :, ::-1, :].copy()
    elif isinstance(g, Z):
        _split(psi, n, g.qubit)[:, :, 1, :] *= -1
    elif isinstance(g, H):
        v = _split(psi, n, g.qubit)
        top = v[:, :, 0, :].copy()
        v[:, :, 0, :] += v[:, :, 1, :]
        v[:, :, 1, :] = top - v[:, :, 1, :]
        v *= 1 / math.sqrt(2)
    elif isinstance(g, CZ):
        psi[:, _bit_mask(n, (g.a, g.b))] *= -1
    elif isinstance(g, MCZ):
        psi[:, _bit_mask(n, g.targets)] *= -1
    elif isinstance(g, SWAP):
        a, b = sorted((g.a, g.b))
        if a == b:
            return psi
        v = psi.reshape(psi.shape[0], 1 << a, 2, 1 << (b - a - 1), 2, 1 << (n - b - 1))
        lo = v[:, :, 0, :, 1, :].copy()
        v[:, :, 0, :, 1, :] = v[:, :, 1, :, 0, :]
        v[:, :, 1, :, 0, :] = lo
    elif isinstance(g, (CycInc, CycDec)):
        reg = g.register
        _check_register(reg)
        v = psi.reshape(psi.shape[0], 1 << reg[0], 1 << len(reg), -1)
        v[:] = np.roll(v, 1 if isinstance(g, CycInc) else -1, axis=2)
    elif isinstance(g, Controlled):
        if g.control in {q for b in g.body for q in b.qubits}:
            raise DomainError("the control qubit may not be a target of the body")
        flipped = apply_to_array(psi.copy(), g.body, n)
        mask = _bit_mask(n, (g.control,))
        psi[:, mask] = flipped[:, mask]
    elif isinstance(g, Prepare):
        _check_register(g.register)
        if g._ww < 1e-300:  # target is |0> already
            return psi
        v = psi.reshape(psi.shape[0], 1 << g.register[0], len(g._w), -1)
        proj = np.einsum("k,bakc->bac", g._w, v)
        v -= (2 / g._ww) * g._w[None, None, :, None] * proj[:, :, None, :]
    else:
        raise TypeError(f"unknown gate {g!r}")
    return psi


def _check_qubits(gates: Iterable, n: int) -> None:
    for g in gates:
        for q in g.qubits:
            if not 0 <= q < n:
                raise DomainError(f"{g!r} addresses qubit {q} outside 0..{n - 1}")


def apply_to_array(psi: np.ndarray, gates: Sequence, n: int) -> np.ndarray:
    """Apply ``gates`` to ``psi`` of shape ``(2**n,)`` or ``(batch, 2**n)``, in place where possible."""
    single = psi.ndim == 1
    work = psi.reshape(1, -1) if single else psi
    if work.shape[1] != 1 << n:
        raise DomainError(f"array of length {work.shape[1]} is not a {n}-qubit state")
    for g in gates:
        work = _apply_one(work, n, g)
    return work[0] if single else work


def circuit_matrix(gates: Sequence, n: int) -> np.ndarray:
    """Dense matrix of a gate sequence, built column by column (small ``n`` only)."""
    if n > MAX_DENSE_QUBITS:
        raise DomainError(f"dense matrices are limited to {MAX_DENSE_QUBITS} qubits")
    _check_qubits(gates, n)
    cols = apply_to_array(np.eye(1 << n), gates, n)
    return cols.T.copy()


# -------------------------------------------------------------------- states


@dataclass
class StateVector:
    """``scale * amplitudes`` with ``|amplitudes| = 1``; the scale carries the vector norm and sign."""

    n: int
    amplitudes: np.ndarray
    scale: complex = 1.0

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != (1 << self.n,):
            raise DomainError(f"expected {1 << self.n} amplitudes, got shape {self.amplitudes.shape}")

    @classmethod
    def zero(cls, n: int) -> "StateVector":
        return cls.basis(n, 0)

    @classmethod
    def basis(cls, n: int, k: int) -> "StateVector":
        amp = np.zeros(1 << n, dtype=complex)
        amp[k] = 1.0
        return cls(n, amp)

    @classmethod
    def from_vector(cls, vector) -> "StateVector":
        """Split an unnormalised vector into norm and direction."""
        v = np.asarray(vector, dtype=complex).ravel()
        n = v.size.bit_length() - 1
        if v.size != 1 << n:
            raise DomainError(f"length {v.size} is not a power of two")
        norm = float(np.linalg.norm(v))
        if norm == 0:
            raise DomainError("cannot encode the zero vector")
        return cls(n, v / norm, norm)

    def copy(self) -> "StateVector":
        return StateVector(self.n, self.amplitudes.copy(), self.scale)

    def vector(self) -> np.ndarray:
        return self.scale * self.amplitudes

    @property
    def norm(self) -> float:
        return abs(self.scale) * float(np.linalg.norm(self.amplitudes))


def apply_gate(state: StateVector, gate) -> StateVector:
    """Apply one gate to ``state`` in place and return it."""
    return apply_circuit(state, (gate,))


def apply_circuit(state: StateVector, gates: Sequence) -> StateVector:
    _check_qubits(gates, state.n)
    apply_to_array(state.amplitudes, gates, state.n)
    return state


def inner_product(a: StateVector, b: StateVector) -> complex:
    """``<a|b>`` including both scales."""
    if a.n != b.n:
        raise DomainError(f"qubit counts differ: {a.n} vs {b.n}")
    return complex(np.conj(a.scale) * b.scale * np.vdot(a.amplitudes, b.amplitudes))


def _unit(s: StateVector) -> np.ndarray:
    return s.amplitudes / np.linalg.norm(s.amplitudes)


def swap_test_probability(a: StateVector, b: StateVector) -> float:
    """Probability of reading 0 on the SWAP-test ancilla, scales ignored."""
    if a.n != b.n:
        raise DomainError(f"qubit counts differ: {a.n} vs {b.n}")
    overlap = abs(np.vdot(_unit(a), _unit(b))) ** 2
    return float(min(1.0, (1.0 + overlap) / 2.0))


class SwapEstimate(NamedTuple):
    estimate: float
    stderr: float


def swap_test_sample(a: StateVector, b: StateVector, shots: int, seed: int) -> SwapEstimate:
    """Sampled ``|<a|b>|^2`` as ``max(2 p0 - 1, 0)`` with its binomial standard error."""
    if shots < 1:
        raise DomainError("shots must be at least 1")
    p = swap_test_probability(a, b)
    zeros = philox(seed, 0x5A9).binomial(shots, p)
    p_hat = zeros / shots
    return SwapEstimate(max(2 * p_hat - 1, 0.0), 2 * math.sqrt(p_hat * (1 - p_hat) / shots))


def _base_array(base, n_hint: int | None = None) -> tuple[np.ndarray, int]:
    if isinstance(base, StateVector):
        return base.amplitudes / np.linalg.norm(base.amplitudes), base.n
    arr = np.asarray(base, dtype=complex)
    n = arr.size.bit_length() - 1
    return arr / np.linalg.norm(arr), n


def hadamard_test_circuit(bra: Sequence, ket: Sequence) -> tuple:
    """Ancilla-on-qubit-0 interference circuit whose ``P(0) = (1 + Re<b|bra^+ ket|b>)/2``.

    The system register is shifted up by one qubit.
    """
    shifted_ket = tuple(shift_gate(g, 1) for g in ket)
    shifted_bra = tuple(shift_gate(g, 1) for g in bra)
    return (H(0), Controlled(0, shifted_ket), X(0), Controlled(0, shifted_bra), X(0), H(0))


def shift_gate(g, offset: int):
    """Relabel every qubit ``q`` of ``g`` as ``q + offset``."""
    if isinstance(g, RY):
        return RY(g.qubit + offset, g.angle)
    if isinstance(g, (X, Z, H)):
        return type(g)(g.qubit + offset)
    if isinstance(g, (CZ, SWAP)):
        return type(g)(g.a + offset, g.b + offset)
    if isinstance(g, MCZ):
        return MCZ(tuple(q + offset for q in g.targets))
    if isinstance(g, (CycInc, CycDec)):
        return type(g)(tuple(q + offset for q in g.register))
    if isinstance(g, Controlled):
        return Controlled(g.control + offset, tuple(shift_gate(b, offset) for b in g.body))
    if isinstance(g, Prepare):
        return Prepare(tuple(q + offset for q in g.register), g.vector)
    raise TypeError(f"unknown gate {g!r}")


def hadamard_test_real(
    bra: Sequence,
    ket: Sequence,
    base,
    shots: int | None = None,
    seed: int = 0,
    stream: Sequence[int] = (),
) -> float:
    """``Re<base| bra^+ ket |base>``.

    Exact when ``shots`` is None (two statevector runs); otherwise the
    ancilla circuit is simulated and its outcome sampled ``shots`` times, the
    estimate being ``2 p0 - 1``.
    """
    psi, n = _base_array(base)
    _check_qubits(tuple(bra) + tuple(ket), n)
    if shots is None:
        k = apply_to_array(psi.copy(), ket, n)
        b = apply_to_array(psi.copy(), bra, n)
        return float(np.real(np.vdot(b, k)))
    return hadamard_test_sample(bra, ket, psi, n, shots, seed, stream)[0]


def hadamard_test_sample(bra, ket, psi, n, shots, seed, stream=()) -> tuple[float, float]:
    """Shot estimate of the real part and its binomial standard error."""
    if shots < 1:
        raise DomainError("shots must be at least 1")
    full = np.zeros(2 << n, dtype=complex)
    full[: 1 << n] = psi
    apply_to_array(full, hadamard_test_circuit(bra, ket), n + 1)
    p0 = float(min(1.0, np.sum(np.abs(full[: 1 << n]) ** 2)))
    zeros = philox(seed, 0x4AD, *stream).binomial(shots, p0)
    p_hat = zeros / shots
    return 2 * p_hat - 1, 2 * math.sqrt(p_hat * (1 - p_hat) / shots)


# -------------------------------------------------------------------- ansatz


def cz_ring(n: int) -> tuple[CZ, ...]:
    """Nearest-neighbour CZ entangler closed into a ring for three or more qubits."""
    if n < 2:
        return ()
    if n == 2:
        return (CZ(0, 1),)
    return tuple(CZ(q, (q + 1) % n) for q in range(n))


@dataclass(frozen=True)
class AnsatzCircuit:
    """Hardware-efficient layered ansatz: an RY layer, then ``m`` blocks of (CZ ring, RY layer).

    Circuit parameter ``j * n + q`` is the angle of qubit ``q`` in RY layer ``j``.
    The full parameter vector prepends the scale ``theta_0``.
    """

    n: int
    m: int

    def __post_init__(self):
        if self.n < 1 or self.m < 0:
            raise DomainError(f"need n >= 1 and m >= 0, got n={self.n}, m={self.m}")

    @property
    def num_circuit_params(self) -> int:
        return self.n * (self.m + 1)

    @property
    def num_params(self) -> int:
        return self.num_circuit_params + 1

    def gates(self, angles: Sequence[float]) -> tuple:
        angles = self._check(angles)
        out = []
        ring = cz_ring(self.n)
        for layer in range(self.m + 1):
            if layer:
                out.extend(ring)
            out.extend(RY(q, float(angles[layer * self.n + q])) for q in range(self.n))
        return tuple(out)

    def derivative_gates(self, angles: Sequence[float], k: int) -> tuple:
        """Circuit whose output, times 1/2, is the derivative in circuit parameter ``k``.

        ``dRY(a)/da = RY(a + pi) / 2`` because ``RY(pi) = -iY`` is real.
        """
        shifted = np.array(self._check(angles), dtype=float)
        shifted[k] += math.pi
        return self.gates(shifted)

    def apply_batch(self, angles: np.ndarray, psi: np.ndarray) -> np.ndarray:
        """Run the circuit once per row of ``angles`` (shape ``(batch, P)``) on rows of ``psi``."""
        angles = np.asarray(angles, dtype=float)
        if angles.ndim != 2 or angles.shape[1] != self.num_circuit_params:
            raise DomainError(f"angles must have shape (batch, {self.num_circuit_params})")
        if psi.ndim == 1:
            psi = np.repeat(psi[None, :], angles.shape[0], axis=0)
        ring_mask = None
        for layer in range(self.m + 1):
            if layer and self.n >= 2:
                if ring_mask is None:
                    ring_mask = _ring_sign(self.n)
                psi *= ring_mask
            for q in range(self.n):
                col = angles[:, layer * self.n + q]
                apply_ry(psi, self.n, q, col if np.ptp(col) else col[0])
        return psi

    def _check(self, angles) -> np.ndarray:
        angles = np.asarray(angles, dtype=float).ravel()
        if angles.size != self.num_circuit_params:
            raise DomainError(f"expected {self.num_circuit_params} circuit angles, got {angles.size}")
        return angles


def _ring_sign(n: int) -> np.ndarray:
    sign = np.ones(1 << n)
    for g in cz_ring(n):
        sign[_bit_mask(n, (g.a, g.b))] *= -1
    return sign


def ansatz_state(ansatz: AnsatzCircuit, theta: Sequence[float], base) -> StateVector:
    """``theta_0 * R(theta_1..) |base>``; a :class:`StateVector` base keeps its own scale as a factor."""
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.size != ansatz.num_params:
        raise DomainError(f"expected {ansatz.num_params} parameters, got {theta.size}")
    psi, n = _base_array(base)
    if n != ansatz.n:
        raise DomainError(f"base state has {n} qubits, ansatz has {ansatz.n}")
    out = apply_to_array(psi.copy(), ansatz.gates(theta[1:]), n)
    scale = theta[0] * (base.scale if isinstance(base, StateVector) else 1.0)
    return StateVector(n, out, complex(scale))
