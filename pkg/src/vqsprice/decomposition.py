"""Linear combinations of unitaries for the FDM generator and the boundary source.

The stencil matrices factor into diagonal coordinate operators and shifts:

    D1st = diag(x) (Dec - Inc),    D2nd = diag(x)^2 (Inc + Dec - 2 I),
    diag(x) = l + h (J + I),       J = (2^n - 1)/2 I - sum_q 2^{n-2-q} Z_q,
    Inc = (CycInc + CycInc C^{n-1}Z) / 2,  Dec = (CycDec + C^{n-1}Z CycDec) / 2.

Every product is distributed into a flat list of real coefficients times gate
sequences, and identical sequences are merged. The boundary vector C(tau) is
produced as ``2^{nd/2} G H^{(x)nd} |0>`` with ``G`` diagonal, so ``G`` is a
polynomial in the coordinate operators times face projectors

    |1..1><1..1| = (I - C^{n-1}Z) / 2,   |0..0><0..0| = (I - X^n C^{n-1}Z X^n) / 2.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Literal, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DomainError
from .fdm import Grid
from .market import DerivativeContract, MarketModel
from .quantum import (
    CZ,
    H,
    MAX_DENSE_QUBITS,
    MCZ,
    RY,
    SWAP,
    Controlled,
    CycDec,
    CycInc,
    Prepare,
    X,
    Z,
    apply_to_array,
)

Profile = Literal["constant", "discounted"]


@dataclass(frozen=True)
class UnitaryTerm:
    """``coefficient * U`` with ``U`` a gate sequence; ``discounted`` terms also carry ``exp(-r tau)``."""

    coefficient: float
    gates: tuple
    profile: Profile = "constant"


@dataclass(frozen=True)
class WeightedUnitarySum:
    """``sum_k lambda_k(tau) U_k`` over ``d`` registers of ``n`` qubits each."""

    n: int
    d: int
    terms: tuple[UnitaryTerm, ...]
    r: float = 0.0

    def __post_init__(self):
        for t in self.terms:
            if not isinstance(t.coefficient, float) or not math.isfinite(t.coefficient):
                raise DomainError(f"coefficients must be finite real floats, got {t.coefficient!r}")
            if t.profile not in ("constant", "discounted"):
                raise DomainError(f"unknown time profile {t.profile!r}")

    @property
    def num_qubits(self) -> int:
        return self.n * self.d

    def __len__(self) -> int:
        return len(self.terms)

    def coefficients(self, tau: float = 0.0) -> np.ndarray:
        disc = math.exp(-self.r * tau)
        return np.array([t.coefficient * (disc if t.profile == "discounted" else 1.0) for t in self.terms])

    def merged(self) -> "WeightedUnitarySum":
        """Combine terms with identical gate sequence and profile."""
        acc: dict = defaultdict(float)
        for t in self.terms:
            acc[(t.gates, t.profile)] += t.coefficient
        terms = tuple(UnitaryTerm(c, g, p) for (g, p), c in acc.items() if c != 0.0)
        return WeightedUnitarySum(self.n, self.d, terms, self.r)

    def apply(self, psi: np.ndarray, tau: float = 0.0) -> np.ndarray:
        """``sum_k lambda_k(tau) U_k psi`` without building matrices."""
        out = np.zeros_like(psi, dtype=np.result_type(psi, float))
        for lam, t in zip(self.coefficients(tau), self.terms):
            out += lam * apply_to_array(np.array(psi, dtype=out.dtype), t.gates, self.num_qubits)
        return out

    def time_split(self) -> tuple["WeightedUnitarySum", "WeightedUnitarySum"]:
        """``(constant part, discounted part)``."""
        const = tuple(t for t in self.terms if t.profile == "constant")
        disc = tuple(t for t in self.terms if t.profile == "discounted")
        return (
            WeightedUnitarySum(self.n, self.d, const, self.r),
            WeightedUnitarySum(self.n, self.d, disc, self.r),
        )


def reconstruct(wus: WeightedUnitarySum, tau: float = 0.0) -> np.ndarray:
    """Dense ``sum_k lambda_k U_k`` assembled by applying every term to all basis states."""
    nq = wus.num_qubits
    if nq > MAX_DENSE_QUBITS:
        raise DomainError(f"reconstruct is limited to {MAX_DENSE_QUBITS} qubits, got {nq}")
    dim = 1 << nq
    out = np.zeros((dim, dim))
    for lam, t in zip(wus.coefficients(tau), wus.terms):
        out += lam * apply_to_array(np.eye(dim), t.gates, nq).T
    return out


def to_sparse(wus: WeightedUnitarySum, tau: float = 0.0) -> sp.csr_matrix:
    """Sparse reconstruction; every term here is a permutation times a diagonal."""
    nq = wus.num_qubits
    dim = 1 << nq
    out = sp.csr_matrix((dim, dim))
    eye = np.eye(dim) if nq <= MAX_DENSE_QUBITS else None
    if eye is None:
        raise DomainError(f"to_sparse is limited to {MAX_DENSE_QUBITS} qubits, got {nq}")
    for lam, t in zip(wus.coefficients(tau), wus.terms):
        out = out + lam * sp.csr_matrix(apply_to_array(eye.copy(), t.gates, nq).T)
    out.sum_duplicates()
    return out


# ------------------------------------------------------- operator algebra
#
# A monomial is (blocks, zset): the operator Z(zset) . prod(blocks), where each
# block is (register, gate tuple, is_diagonal). A polynomial maps monomials to
# real coefficients.


def _mono_key(blocks, zset):
    return (tuple(sorted(blocks, key=lambda b: (b[0], repr(b[1])))), frozenset(zset))


def _poly(items: Iterable) -> dict:
    out: dict = defaultdict(float)
    for (blocks, zset), c in items:
        out[_mono_key(blocks, zset)] += c
    return out


def _scale(p: dict, c: float) -> dict:
    return {k: v * c for k, v in p.items()}


def _add(*ps: dict) -> dict:
    out: dict = defaultdict(float)
    for p in ps:
        for k, v in p.items():
            out[k] += v
    return out


def _offdiagonal_qubits(blocks) -> set:
    return {q for _, gates, diag in blocks if not diag for g in gates for q in g.qubits}


def _mul(a: dict, b: dict) -> dict:
    """Operator product ``a . b`` (``b`` acts first)."""
    out: dict = defaultdict(float)
    for (ba, za), ca in a.items():
        for (bb, zb), cb in b.items():
            if zb & _offdiagonal_qubits(ba):
                raise DomainError("cannot commute a Z word through a non-diagonal block")
            regs: dict = {}
            for reg, gates, diag in bb:
                regs[reg] = (gates, diag)
            for reg, gates, diag in ba:
                if reg in regs:
                    prev, pdiag = regs[reg]
                    regs[reg] = (prev + gates, pdiag and diag)
                else:
                    regs[reg] = (gates, diag)
            blocks = [(reg, g, dg) for reg, (g, dg) in regs.items()]
            out[_mono_key(blocks, za ^ zb)] += ca * cb
    return out


_ONE = ((), frozenset())


def _identity(c: float = 1.0) -> dict:
    return {_ONE: c}


def _register(n: int, i: int) -> tuple[int, ...]:
    return tuple(range(i * n, (i + 1) * n))


def _j_poly(n: int, offset: int = 0) -> dict:
    """``diag(0, 1, ..., 2^n - 1)`` as a Z-word polynomial on qubits ``offset..offset+n-1``."""
    items = [(((), frozenset()), (2**n - 1) / 2)]
    items += [(((), frozenset({offset + q})), -(2.0 ** (n - 2 - q))) for q in range(n)]
    return _poly(items)


def _coordinate(n: int, i: int, lower: float, h: float) -> dict:
    """``diag(x^(0..n_gr-1)) = l + h (J + I)`` on register ``i``."""
    return _add(_identity(lower + h), _scale(_j_poly(n, i * n), h))


def build_cyc_inc(n: int, offset: int = 0) -> tuple:
    return (CycInc(tuple(range(offset, offset + n))),)


def build_cyc_dec(n: int, offset: int = 0) -> tuple:
    return (CycDec(tuple(range(offset, offset + n))),)


def build_cnz(n: int, offset: int = 0) -> tuple:
    """``C^{n-1}Z``: phase -1 on ``|1..1>``."""
    return (MCZ(tuple(range(offset, offset + n))),)


def _shift_poly(n: int, i: int, which: str) -> dict:
    reg = _register(n, i)
    cnz = build_cnz(n, reg[0])
    if which == "inc":
        cyc = build_cyc_inc(n, reg[0])
        seqs = (cyc, cnz + cyc)
    else:
        cyc = build_cyc_dec(n, reg[0])
        seqs = (cyc, cyc + cnz)
    return _poly(((((i, s, False),), frozenset()), 0.5) for s in seqs)


def build_inc(n: int) -> WeightedUnitarySum:
    """``sum_{k < 2^n - 1} |k+1><k|`` as two unitaries."""
    return _to_sum(_shift_poly(n, 0, "inc"), n, 1)


def build_dec(n: int) -> WeightedUnitarySum:
    """``sum_{k < 2^n - 1} |k><k+1|`` as two unitaries."""
    return _to_sum(_shift_poly(n, 0, "dec"), n, 1)


def build_J(n: int) -> WeightedUnitarySum:
    """``diag(0, 1, ..., 2^n - 1)`` as a weighted Pauli-Z sum."""
    return _to_sum(_j_poly(n), n, 1)


def _projector(n: int, i: int, side: str) -> dict:
    """Projector onto ``k_i = n_gr - 1`` (upper) or ``k_i = 0`` (lower)."""
    reg = _register(n, i)
    cnz = build_cnz(n, reg[0])
    if side == "upper":
        return _poly([(_ONE, 0.5), ((((i, cnz, True),), frozenset()), -0.5)])
    flips = tuple(X(q) for q in reg)
    return _poly([(_ONE, 0.5), ((((i, flips + cnz + flips, True),), frozenset()), -0.5)])


def _to_sum(
    poly: dict, n: int, d: int, profile: Profile = "constant", prefix: tuple = (), scale: float = 1.0, r: float = 0.0
) -> WeightedUnitarySum:
    terms = []
    for (blocks, zset), c in poly.items():
        if c == 0.0:
            continue
        gates = list(prefix)
        for _, g, _ in blocks:
            gates.extend(g)
        gates.extend(Z(q) for q in sorted(zset))
        terms.append(UnitaryTerm(float(c * scale), tuple(gates), profile))
    return WeightedUnitarySum(n, d, tuple(terms), r)


def _concat(*sums: WeightedUnitarySum) -> WeightedUnitarySum:
    first = sums[0]
    return WeightedUnitarySum(first.n, first.d, tuple(t for s in sums for t in s.terms), first.r)


def _check_grid(model: MarketModel, contract: DerivativeContract, grid: Grid) -> None:
    if model.d != grid.d or contract.d != grid.d:
        raise DomainError(f"dimension mismatch: model {model.d}, contract {contract.d}, grid {grid.d}")


def decompose_F(model: MarketModel, contract: DerivativeContract, grid: Grid) -> WeightedUnitarySum:
    """The FDM generator as a merged sum of unitaries, matching :func:`vqsprice.fdm.assemble_F`."""
    _check_grid(model, contract, grid)
    n, d = grid.qubits_per_asset, grid.d
    sig, rho, h, r = model.sigma_array, model.rho_array, grid.h, model.r
    d1, d2 = [], []
    for i in range(d):
        x = _coordinate(n, i, grid.lower[i], h[i])
        inc, dec = _shift_poly(n, i, "inc"), _shift_poly(n, i, "dec")
        d1.append(_mul(x, _add(dec, _scale(inc, -1.0))))
        d2.append(_mul(_mul(x, x), _add(inc, dec, _identity(-2.0))))
    total = [_identity(-r)]
    for i in range(d):
        total.append(_scale(d2[i], sig[i] ** 2 / (2 * h[i] ** 2)))
        total.append(_scale(d1[i], r / (2 * h[i])))
        for j in range(i + 1, d):
            coef = sig[i] * sig[j] * rho[i, j] / (4 * h[i] * h[j])
            if coef != 0.0:
                total.append(_scale(_mul(d1[i], d1[j]), coef))
    return _to_sum(_add(*total), n, d, r=r).merged()


def decompose_boundary_generator(
    model: MarketModel, contract: DerivativeContract, grid: Grid
) -> WeightedUnitarySum:
    """Sum of unitaries ``U_l`` with ``sum_l eta_l(tau) U_l |0> = C(tau)``.

    Each ``U_l`` starts with a Hadamard layer, and every coefficient carries
    ``2^{nd/2}``. Knock-out faces contribute nothing, so an all-knock-out
    contract yields the empty sum. Terms holding ``a_0`` are tagged ``discounted``.
    """
    _check_grid(model, contract, grid)
    n, d = grid.qubits_per_asset, grid.d
    sig, rho, h, r = model.sigma_array, model.rho_array, grid.h, model.r
    a = np.asarray(contract.weights)
    coords = [_coordinate(n, j, grid.lower[j], h[j]) for j in range(d)]
    const_parts, disc_parts = [], []
    for i in range(d):
        for side in ("lower", "upper"):
            kind = contract.lower_kind[i] if side == "lower" else contract.upper_kind[i]
            if kind == "knock-out":
                continue
            level = contract.lower[i] if side == "lower" else contract.upper[i]
            x_face = grid.lower[i] + (h[i] if side == "lower" else grid.n_gr * h[i])
            sign = -1.0 if side == "lower" else 1.0
            # Face value: exp(-r tau) a_0 + a_i * level + sum_{j != i} a_j x_j.
            face_const = _add(_identity(a[i + 1] * level), *[_scale(coords[j], a[j + 1]) for j in range(d) if j != i])
            face_disc = _identity(a[0])
            weight = _identity(sig[i] ** 2 / (2 * h[i] ** 2) * x_face**2 + sign * r / (2 * h[i]) * x_face)
            for j in range(d):
                if j == i:
                    continue
                coef = sig[i] * sig[j] * rho[i, j] / (4 * h[i] * h[j])
                if coef != 0.0:
                    weight = _add(weight, _scale(coords[j], sign * coef * x_face))
            proj = _projector(n, i, side)
            const_parts.append(_mul(proj, _mul(weight, face_const)))
            disc_parts.append(_mul(proj, _mul(weight, face_disc)))
    nq = n * d
    prefix = tuple(H(q) for q in range(nq))
    amp = 2 ** (nq / 2)
    const = _to_sum(_add(*const_parts), n, d, "constant", prefix, amp, r) if const_parts else None
    disc = _to_sum(_add(*disc_parts), n, d, "discounted", prefix, amp, r) if disc_parts else None
    parts = [s for s in (const, disc) if s is not None]
    if not parts:
        return WeightedUnitarySum(n, d, (), r)
    return _concat(*parts).merged()


# ---------------------------------------------------------- resource report

# Unit-cost model for elementary gates. Multi-controlled Z is charged at the
# quadratic ancilla-free cost and the cyclic shifters at a linear ladder cost.


def gate_cost(g) -> int:
    if isinstance(g, (RY, X, Z, H, CZ)):
        return 1
    if isinstance(g, SWAP):
        return 3
    if isinstance(g, MCZ):
        k = len(g.targets)
        return 1 if k <= 2 else k * k
    if isinstance(g, (CycInc, CycDec)):
        return 2 * len(g.register) - 1
    if isinstance(g, Controlled):
        return 2 * sum(gate_cost(b) for b in g.body) + 1
    if isinstance(g, Prepare):
        return 1 << len(g.register)
    raise TypeError(f"unknown gate {g!r}")


def sequence_cost(gates: Sequence) -> int:
    return sum(gate_cost(g) for g in gates)


def resource_report(wus: WeightedUnitarySum | None, epsilon: float | None = None) -> dict:
    """Term and gate counts of ``wus`` plus the asymptotic line items of the method.

    The asymptotic entries are evaluated with ``n = ceil(log2(1/epsilon))`` qubits per
    asset when ``epsilon`` is given, otherwise with the register size of ``wus``.
    """
    if wus is None or not wus.terms:
        report = {"terms": 0, "max_gates_per_term": 0, "mean_gates_per_term": 0.0, "sum_abs_coefficients": 0.0}
        d = wus.d if wus is not None else 0
        n = wus.n if wus is not None else 0
    else:
        costs = [sequence_cost(t.gates) for t in wus.terms]
        report = {
            "terms": len(wus.terms),
            "max_gates_per_term": max(costs),
            "mean_gates_per_term": float(np.mean(costs)),
            "sum_abs_coefficients": float(np.abs([t.coefficient for t in wus.terms]).sum()),
        }
        d, n = wus.d, wus.n
    if epsilon is not None:
        if not 0 < epsilon < 1:
            raise DomainError("epsilon must lie in (0, 1)")
        n = max(1, math.ceil(math.log2(1 / epsilon)))
    report.update(
        {
            "assets": d,
            "qubits_per_asset": n,
            "system_qubits": n * d,
            "lcu_terms_bound_d2n4": d * d * n**4,
            "gates_per_lcu_term_n2": n * n,
            "vqs_gates": f"O(poly(d log(1/eps))) with d*n = {d * n}",
            "vqs_measurements": "N_measure_VQS * N_tau",
            "swap_test_gates": f"O(n d) controlled swaps = {n * d}",
            "swap_test_measurements": "N_SWAP (see plan)",
        }
    )
    return report


def format_report(report: dict) -> str:
    """Flat ``key = value`` text block."""
    return "\n".join(f"{k} = {v}" for k, v in report.items()) + "\n"
