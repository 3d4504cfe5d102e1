"""Measurement-circuit construction: Naimark dilation, binary search tree
and the Naimark-terminated hybrid.

All three builders consume a rank-one POVM and emit a :class:`SchemeOutput`
whose circuit reproduces the Born statistics P(i) = Tr(F_i rho) exactly
(up to float rounding) when simulated without noise.

Register layout: the auxiliary qubits sit at indices 0..n_aux-1 (most
significant), system qubits follow. Classical bit l-1 records the level-l
measurement; for Naimark-style terminal measurements qubit q records to the
next free bit in qubit order, so the outcome bitstring read left to right is
the binary expansion of the (padded, possibly relabelled) element index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .circuit import (
    Condition,
    ConditionalUnitary,
    DynamicCircuit,
    Measure,
    Reset,
    UnitaryBox,
)
from .povm import NotRankOne, Povm, pad_to_power_of_two


class ConstructionFailure(RuntimeError):
    """Isometry residual above tolerance at some tree level."""


class RankDeficientBranch(ValueError):
    """A binary-search branch received a non-invertible aggregate K."""


class UnknownOutcome(KeyError):
    pass


ISOMETRY_TOL = 1e-8
# Support detection happens on the eigenvalues of the aggregate B, not on
# sigma = sqrt(lambda): rounding dust of order eps*|B| would otherwise
# inflate to sqrt(eps) under the square root and defeat an absolute cutoff.
SUPPORT_RTOL = 1e-12


@dataclass
class BranchKraus:
    """Aggregated square root K and step Kraus operator A for one branch."""

    label: str
    level: int
    K: np.ndarray
    A: np.ndarray


@dataclass
class SchemeOutput:
    scheme: str  # "naimark" | "binary" | "hybrid"
    circuit: DynamicCircuit
    outcome_map: dict[str, int]
    branch_table: list[BranchKraus] = field(default_factory=list)

    def branch(self, label: str) -> BranchKraus:
        for b in self.branch_table:
            if b.label == label:
                return b
        raise UnknownOutcome(f"no branch {label!r}")


def _bits_condition(label: str) -> Condition:
    """Condition matching clbits 0..len-1 against the branch label string."""
    bits = tuple(range(len(label)))
    value = sum(int(ch) << j for j, ch in enumerate(label))
    return Condition(bits, value)


def _coupling_unitary(a0: np.ndarray, a1: np.ndarray) -> np.ndarray:
    """2d x 2d unitary whose first d columns stack the binary Kraus pair."""
    stack = np.vstack([a0, a1])
    rows = stack.conj().T  # orthonormal rows by the isometry condition
    return linalg.complete_to_unitary(rows).conj().T


def _check_isometry(a0: np.ndarray, a1: np.ndarray, label: str) -> None:
    d = a0.shape[1]
    resid = np.linalg.norm(a0.conj().T @ a0 + a1.conj().T @ a1 - np.eye(d))
    if resid > ISOMETRY_TOL:
        raise ConstructionFailure(
            f"isometry residual {resid:.3e} at branch {label or 'root'!r}"
        )


def _require_rank_one(povm: Povm) -> None:
    if not povm.is_rank_one():
        raise NotRankOne("scheme construction requires a rank-one POVM")


def _naimark_unitary(vectors: list[np.ndarray]) -> np.ndarray:
    """M x M unitary whose first d rows hold the vectors psi_i as columns."""
    psi = np.column_stack(vectors)
    return linalg.complete_to_unitary(psi)


# ---------------------------------------------------------------------------
# Naimark's dilation
# ---------------------------------------------------------------------------

def build_naimark(povm: Povm) -> SchemeOutput:
    """One unitary on log2(M) qubits followed by a parallel end measurement."""
    _require_rank_one(povm)
    vectors = povm.rank_one_vectors()
    padded = pad_to_power_of_two(Povm(povm.d, povm.elements, vectors))
    m = padded.n_outcomes
    n = padded.n_qubits
    n_total = int(round(np.log2(m)))
    n_aux = n_total - n
    if n_aux < 0:
        raise NotRankOne(f"{m} outcomes cannot resolve a dimension-{padded.d} system")
    u = _naimark_unitary(padded.rank_one_vectors())
    circ = DynamicCircuit(n_system=n, n_aux=n_aux, n_classical_bits=n_total)
    circ.ops.append(UnitaryBox(tuple(range(n_total)), u.conj().T))
    for q in range(n_total):
        circ.ops.append(Measure(q, q))
    outcome_map = {format(i, f"0{n_total}b"): i for i in range(m)}
    return SchemeOutput("naimark", circ, outcome_map)


# ---------------------------------------------------------------------------
# Binary search tree
# ---------------------------------------------------------------------------

def _branch_range(label: str, m: int) -> tuple[int, int]:
    width = m >> len(label)
    start = int(label, 2) * width if label else 0
    return start, start + width


def _sqrt_pieces(b: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Eigen pieces of a PSD aggregate: (eigenvalues, V, K = sqrt(B)).

    Eigenvalues below SUPPORT_RTOL * max are zeroed so that K carries no
    sqrt-amplified rounding dust outside its true support.
    """
    w, v = linalg.eigh(b, 1e-8)
    w = np.clip(w, 0.0, None)
    if w.max() > 0:
        w[w < SUPPORT_RTOL * w.max()] = 0.0
    k = linalg.hermitize((v * np.sqrt(w)) @ v.conj().T)
    return w, v, k


def build_binary_tree(povm: Povm,
                      kraus_transform=None) -> SchemeOutput:
    """Single-auxiliary-qubit cascade of two-outcome filterings.

    Level 1 uses the square roots of the half-sums directly; deeper levels
    build A = K_child K_parent^+ + Q_parent / sqrt(2), where Q projects onto
    the orthogonal complement of the parent support. ``kraus_transform``
    optionally maps a branch label to a d x d unitary W exercising the
    K -> W K freedom; statistics are unaffected.
    """
    _require_rank_one(povm)
    padded = pad_to_power_of_two(povm)
    m = padded.n_outcomes
    d = padded.d
    n = padded.n_qubits
    levels = max(1, int(round(np.log2(m))))
    if 2**levels != m or m < 2:
        raise ValueError(f"need at least two outcomes, got {m}")

    def wmat(label: str) -> np.ndarray:
        if kraus_transform is None:
            return np.eye(d)
        w = kraus_transform(label)
        return np.eye(d) if w is None else np.asarray(w, dtype=complex)

    pieces: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
    for size in range(1, levels + 1):
        for v in range(2**size):
            label = format(v, f"0{size}b")
            lo, hi = _branch_range(label, m)
            agg = sum(padded.elements[lo:hi], np.zeros((d, d), dtype=complex))
            pieces[label] = _sqrt_pieces(agg)

    table: list[BranchKraus] = []
    kraus: dict[str, np.ndarray] = {}
    couplings: dict[str, np.ndarray] = {}
    for level in range(1, levels + 1):
        for p in range(2**(level - 1)):
            parent = format(p, f"0{level - 1}b") if level > 1 else ""
            if parent:
                w_p, v_p, _ = pieces[parent]
                wmax = w_p.max()
                mask = w_p > SUPPORT_RTOL * wmax if wmax > 0 else np.zeros_like(w_p, bool)
                sigma_p = np.sqrt(w_p)
                inv_sigma = np.where(mask, 1.0 / np.where(mask, sigma_p, 1.0), 0.0)
                k_pinv = (v_p * inv_sigma) @ v_p.conj().T
                q_p = np.eye(d) - (v_p * mask) @ v_p.conj().T
            children = []
            for bit in "01":
                label = parent + bit
                _, _, k = pieces[label]
                if parent:
                    a = k @ k_pinv + q_p / np.sqrt(2.0)
                else:
                    a = k
                a = wmat(label) @ a @ wmat(parent).conj().T
                k_t = wmat(label) @ k
                kraus[label] = a
                table.append(BranchKraus(label, level, k_t, a))
                children.append(a)
            _check_isometry(children[0], children[1], parent)
            couplings[parent] = _coupling_unitary(children[0], children[1])

    circ = DynamicCircuit(n_system=n, n_aux=1, n_classical_bits=levels)
    all_qubits = tuple(range(n + 1))
    circ.ops.append(UnitaryBox(all_qubits, couplings[""]))
    circ.ops.append(Measure(0, 0))
    for level in range(2, levels + 1):
        circ.ops.append(Reset(0, level - 2))
        for p in range(2**(level - 1)):
            parent = format(p, f"0{level - 1}b")
            circ.ops.append(ConditionalUnitary(all_qubits, couplings[parent],
                                               _bits_condition(parent)))
        circ.ops.append(Measure(0, level - 1))
    outcome_map = {format(i, f"0{levels}b"): i for i in range(m)}
    return SchemeOutput("binary", circ, outcome_map, table)


# ---------------------------------------------------------------------------
# Naimark-terminated hybrid
# ---------------------------------------------------------------------------

def _terminal_partition(padded: Povm, n_buckets: int, d: int) -> list[int]:
    """Slot -> padded-element-index permutation for the terminal buckets.

    Keeps the given (padded) order when each contiguous bucket already holds
    at least d non-zero elements; otherwise applies the minimal stable
    reordering that spreads the zero padding evenly across buckets.
    """
    m = padded.n_outcomes
    cap = m // n_buckets
    norms = [float(np.linalg.norm(e)) for e in padded.elements]
    nonzero = [i for i, s in enumerate(norms) if s > 1e-12]
    if all(
        sum(1 for i in nonzero if k * cap <= i < (k + 1) * cap) >= d
        for k in range(n_buckets)
    ):
        return list(range(m))
    zeros = [i for i in range(m) if norms[i] <= 1e-12]
    base, extra = divmod(len(nonzero), n_buckets)
    perm: list[int] = []
    pos = 0
    for k in range(n_buckets):
        take = base + (1 if k < extra else 0)
        if take < d:
            raise RankDeficientBranch(
                f"bucket {k} would hold {take} non-zero elements, fewer than d={d}"
            )
        bucket = nonzero[pos:pos + take]
        pos += take
        bucket += [zeros.pop(0) for _ in range(cap - take)]
        perm.extend(bucket)
    return perm


def build_hybrid(povm: Povm, kraus_transform=None) -> SchemeOutput:
    """Binary search down to 2d-element branches, then per-branch Naimark.

    With M <= 2d the search depth is zero and the output is structurally a
    Naimark dilation. Each binary-search level uses the true inverse of the
    parent aggregate, so every branch must keep at least d non-zero elements.
    """
    _require_rank_one(povm)
    vectors = povm.rank_one_vectors()
    padded = pad_to_power_of_two(Povm(povm.d, povm.elements, vectors))
    m = padded.n_outcomes
    d = padded.d
    n = padded.n_qubits
    n_total = int(round(np.log2(m)))
    depth = n_total - n - 1  # binary-search levels before the terminal layer
    if depth <= 0:
        nai = build_naimark(padded)
        return SchemeOutput("hybrid", nai.circuit, nai.outcome_map)

    def wmat(label: str) -> np.ndarray:
        if kraus_transform is None:
            return np.eye(d)
        w = kraus_transform(label)
        return np.eye(d) if w is None else np.asarray(w, dtype=complex)

    perm = _terminal_partition(padded, 2**depth, d)
    padded_vectors = padded.rank_one_vectors()
    elements = [padded.elements[i] for i in perm]
    vecs = [padded_vectors[i] for i in perm]

    ks: dict[str, np.ndarray] = {}
    table: list[BranchKraus] = []
    kraus: dict[str, np.ndarray] = {}
    couplings: dict[str, np.ndarray] = {}
    for level in range(1, depth + 1):
        for p in range(2**(level - 1)):
            parent = format(p, f"0{level - 1}b") if level > 1 else ""
            children = []
            for bit in "01":
                label = parent + bit
                lo, hi = _branch_range(label, m)
                agg = sum(elements[lo:hi], np.zeros((d, d), dtype=complex))
                w, _, k = _sqrt_pieces(agg)
                if w.min() <= SUPPORT_RTOL * max(w.max(), 1.0):
                    raise RankDeficientBranch(
                        f"aggregate at branch {label!r} is singular"
                    )
                k_t = wmat(label) @ k
                if parent:
                    a = k_t @ np.linalg.inv(ks[parent])
                else:
                    a = k_t
                ks[label] = k_t
                kraus[label] = a
                table.append(BranchKraus(label, level, k_t, a))
                children.append(a)
            _check_isometry(children[0], children[1], parent)
            couplings[parent] = _coupling_unitary(children[0], children[1])

    terminal: dict[str, np.ndarray] = {}
    cap = 2 * d
    for v in range(2**depth):
        label = format(v, f"0{depth}b")
        k_inv_dag = np.linalg.inv(ks[label]).conj().T
        cols = [k_inv_dag @ vecs[v * cap + j] for j in range(cap)]
        terminal[label] = _naimark_unitary(cols)

    n_bits = depth + 1 + n
    circ = DynamicCircuit(n_system=n, n_aux=1, n_classical_bits=n_bits)
    all_qubits = tuple(range(n + 1))
    circ.ops.append(UnitaryBox(all_qubits, couplings[""]))
    circ.ops.append(Measure(0, 0))
    for level in range(2, depth + 1):
        circ.ops.append(Reset(0, level - 2))
        for p in range(2**(level - 1)):
            parent = format(p, f"0{level - 1}b")
            circ.ops.append(ConditionalUnitary(all_qubits, couplings[parent],
                                               _bits_condition(parent)))
        circ.ops.append(Measure(0, level - 1))
    circ.ops.append(Reset(0, depth - 1))
    for v in range(2**depth):
        label = format(v, f"0{depth}b")
        circ.ops.append(ConditionalUnitary(all_qubits, terminal[label].conj().T,
                                           _bits_condition(label)))
    for q in range(n + 1):
        circ.ops.append(Measure(q, depth + q))
    outcome_map = {
        format(i, f"0{n_bits}b"): perm[i] for i in range(m)
    }
    return SchemeOutput("hybrid", circ, outcome_map, table)


def build_scheme(name: str, povm: Povm) -> SchemeOutput:
    builders = {"naimark": build_naimark, "binary": build_binary_tree,
                "hybrid": build_hybrid}
    if name not in builders:
        raise ValueError(f"unknown scheme {name!r}; expected one of {sorted(builders)}")
    return builders[name](povm)


# ---------------------------------------------------------------------------
# Cumulative Kraus operators
# ---------------------------------------------------------------------------

def _first_box_matrix(circ: DynamicCircuit) -> np.ndarray:
    for op in circ.ops:
        if isinstance(op, UnitaryBox):
            return op.matrix
    raise UnknownOutcome("circuit holds no unitary box")


def cumulative_kraus(output: SchemeOutput, outcome: str) -> np.ndarray:
    """Ordered product of step Kraus operators along an outcome path.

    A full-length outcome yields the terminal 1 x d map with
    A^c† A^c = F_i; a prefix of binary-search bits yields the partial
    product, which equals the branch aggregate K for the hybrid scheme.
    """
    n_bits = output.circuit.n_classical_bits
    if len(outcome) > n_bits or any(ch not in "01" for ch in outcome):
        raise UnknownOutcome(f"bad outcome {outcome!r}")
    d = 2**output.circuit.n_system
    if output.scheme == "binary":
        acc = np.eye(d, dtype=complex)
        for l in range(1, len(outcome) + 1):
            acc = output.branch(outcome[:l]).A @ acc
        return acc
    depth = max((b.level for b in output.branch_table), default=0)
    if len(outcome) <= depth:
        acc = np.eye(d, dtype=complex)
        for l in range(1, len(outcome) + 1):
            acc = output.branch(outcome[:l]).A @ acc
        return acc
    if outcome not in output.outcome_map:
        raise UnknownOutcome(f"outcome {outcome!r} not in outcome map")
    if depth == 0:
        w = _first_box_matrix(output.circuit)
        return w[int(outcome, 2), :d].reshape(1, d)
    branch_label = outcome[:depth]
    acc = np.eye(d, dtype=complex)
    for l in range(1, depth + 1):
        acc = output.branch(outcome[:l]).A @ acc
    cond = _bits_condition(branch_label)
    for op in output.circuit.ops:
        if isinstance(op, ConditionalUnitary) and op.cond == cond \
                and len(op.qubits) == output.circuit.n_system + 1:
            j = int(outcome[depth:], 2)
            return op.matrix[j, :d].reshape(1, d) @ acc
    raise UnknownOutcome(f"no terminal unitary for branch {branch_label!r}")
