"""Conditional readout error mitigation (CREM) and its building blocks.

Standard readout mitigation inverts a tensor product of per-qubit confusion
matrices on end-circuit statistics. In dynamic circuits a mid-circuit
misclassification also triggers the wrong feed-forward branch; CREM fixes
this by measuring an ensemble of conditional calibration circuits (one per
subset of mid-circuit measurements, with inverted conditions and a
post-measurement X on that subset) and deconvolving mixed probability
vectors in which, for every outcome, the entry is drawn from the variant
indexed by the outcome's own mid-circuit bits.
"""

from __future__ import annotations

from copy import deepcopy
from dataclasses import dataclass, field

import numpy as np

from .circuit import (
    CompiledBlock,
    Condition,
    ConditionalUnitary,
    DynamicCircuit,
    Measure,
    Reset,
    UnitaryBox,
    static_counts,
)


class NoMidCircuitMeasurement(ValueError):
    pass


class SingularConfusion(ValueError):
    pass


class InconsistentEnsemble(ValueError):
    pass


class LabelMismatch(ValueError):
    pass


@dataclass
class ConfusionMatrix:
    """Per-qubit 2x2 column-stochastic readout confusion matrices.

    ``rates[q] = (eps0, eps1)``: probability of misreading 0 as 1 and 1 as
    0 on qubit q. Qubits missing from the map read out perfectly.
    """

    rates: dict[int, tuple[float, float]] = field(default_factory=dict)

    def matrix(self, qubit: int) -> np.ndarray:
        e0, e1 = self.rates.get(qubit, (0.0, 0.0))
        return np.array([[1 - e0, e1], [e0, 1 - e1]])

    def inverse(self, qubit: int) -> np.ndarray:
        m = self.matrix(qubit)
        det = np.linalg.det(m)
        if abs(det) < 1e-12:
            raise SingularConfusion(f"confusion matrix on qubit {qubit} is singular")
        return np.linalg.inv(m)


def estimate_confusion(counts_prepared_0: dict[int, dict[str, int]],
                       counts_prepared_1: dict[int, dict[str, int]]) -> ConfusionMatrix:
    """Estimate per-qubit rates from single-qubit calibration counts.

    Inputs map qubit -> {"0": n0, "1": n1} observed when preparing |0>
    (resp. |1>) on that qubit.
    """
    rates = {}
    for q in counts_prepared_0:
        c0 = counts_prepared_0[q]
        c1 = counts_prepared_1[q]
        t0 = c0.get("0", 0) + c0.get("1", 0)
        t1 = c1.get("0", 0) + c1.get("1", 0)
        if t0 <= 0 or t1 <= 0:
            raise ValueError(f"qubit {q}: empty calibration counts")
        rates[q] = (c0.get("1", 0) / t0, c1.get("0", 0) / t1)
    return ConfusionMatrix(rates)


# ---------------------------------------------------------------------------
# Calibration ensemble
# ---------------------------------------------------------------------------

def mid_circuit_measure_indices(circ: DynamicCircuit) -> list[int]:
    last_quantum = -1
    for i, op in enumerate(circ.ops):
        if isinstance(op, (UnitaryBox, ConditionalUnitary, Reset, CompiledBlock)):
            last_quantum = i
    return [i for i, op in enumerate(circ.ops)
            if isinstance(op, Measure) and i < last_quantum]


@dataclass
class CremEnsemble:
    """Original circuit plus its 2^n_mid conditional calibration variants.

    Bit j of a variant index flips mid-circuit measurement j: conditions
    reading its bit are complemented and an X follows the measurement.
    """

    base: DynamicCircuit
    variants: list[DynamicCircuit]
    mid_clbits: list[int]
    clbit_qubits: dict[int, int]

    @property
    def n_mid(self) -> int:
        return len(self.mid_clbits)


def _flip_measurement(circ: DynamicCircuit, measure_index: int) -> DynamicCircuit:
    out = DynamicCircuit(circ.n_system, circ.n_aux, circ.n_classical_bits)
    target = circ.ops[measure_index]
    clbit = target.clbit
    for i, op in enumerate(circ.ops):
        op = deepcopy(op)
        if i == measure_index:
            out.ops.append(op)
            out.ops.append(UnitaryBox((target.qubit,),
                                      np.array([[0, 1], [1, 0]], dtype=complex)))
            continue
        cond = None
        if isinstance(op, (ConditionalUnitary, CompiledBlock)):
            cond = op.cond
        if cond is not None and clbit in cond.bits:
            j = cond.bits.index(clbit)
            op.cond = Condition(cond.bits, cond.value ^ (1 << j))
        if isinstance(op, Reset) and op.clbit == clbit and i > measure_index:
            op.invert = not op.invert
        out.ops.append(op)
    return out


def build_calibration_ensemble(circ: DynamicCircuit) -> CremEnsemble:
    """All 2^n_mid condition-inverted calibration variants, variant 0 first."""
    mid = mid_circuit_measure_indices(circ)
    if not mid:
        raise NoMidCircuitMeasurement("circuit has no mid-circuit measurement")
    mid_clbits = [circ.ops[i].clbit for i in mid]
    clbit_qubits = {op.clbit: op.qubit for op in circ.ops if isinstance(op, Measure)}
    variants = []
    for v in range(2 ** len(mid)):
        flips = [j for j in range(len(mid)) if (v >> j) & 1]
        var = circ
        # flip later measurements first so earlier op indices stay valid
        # across the X insertions
        for j in sorted(flips, reverse=True):
            var = _flip_measurement(var, mid[j])
        variants.append(var)
    return CremEnsemble(circ, variants, mid_clbits, clbit_qubits)


# ---------------------------------------------------------------------------
# Deconvolution
# ---------------------------------------------------------------------------

def _labels(n_bits: int) -> list[str]:
    return [format(i, f"0{n_bits}b") for i in range(2**n_bits)]


def _distribution_vector(dist: dict, n_bits: int) -> np.ndarray:
    vec = np.zeros(2**n_bits)
    for label, value in dist.items():
        if len(label) != n_bits or any(c not in "01" for c in label):
            raise LabelMismatch(f"label {label!r} is not a {n_bits}-bit string")
        vec[int(label, 2)] = value
    total = vec.sum()
    if total <= 0:
        raise ValueError("empty distribution")
    return vec / total


def _kron_inverse(confusion: ConfusionMatrix, clbit_qubits: dict[int, int],
                  n_bits: int) -> np.ndarray:
    inv = np.array([[1.0]])
    for c in range(n_bits):
        q = clbit_qubits.get(c)
        if q is None:
            raise InconsistentEnsemble(f"clbit {c} has no recording measurement")
        inv = np.kron(inv, confusion.inverse(q))
    return inv


def _clip_and_renormalize(vec: np.ndarray) -> tuple[np.ndarray, float]:
    clipped = float(-vec[vec < 0].sum()) if (vec < 0).any() else 0.0
    out = np.clip(vec, 0.0, None)
    total = out.sum()
    if total <= 0:
        raise ValueError("all probability mass clipped away")
    return out / total, clipped


@dataclass
class MitigationResult:
    q: dict[str, float]
    q_variants: list[dict[str, float]]
    clipped_mass: float


def crem_mitigate(ensemble: CremEnsemble, distributions: list[dict],
                  confusion: ConfusionMatrix) -> MitigationResult:
    """Deconvolve readout errors from a calibration-ensemble measurement.

    ``distributions[v]`` is the observed outcome distribution of variant v.
    For each base variant u, the mixed vector W_u(y) = P^(u xor v(y))(y) is
    assembled, where v(y) is the subset of mid-circuit measurements whose
    bit reads 1 in y; W_u = (kron of per-bit confusions) V_u holds exactly
    under QND readout, and the mitigated distribution of variant w is read
    off entrywise as Q^(w)(y) = V_(w xor v(y))(y).
    """
    n_mid = ensemble.n_mid
    if len(distributions) != 2**n_mid:
        raise InconsistentEnsemble(
            f"expected {2**n_mid} distributions, got {len(distributions)}"
        )
    n_bits = ensemble.base.n_classical_bits
    labels = _labels(n_bits)
    vecs = [_distribution_vector(dist, n_bits) for dist in distributions]
    inv = _kron_inverse(confusion, ensemble.clbit_qubits, n_bits)

    def mid_subset(y: int) -> int:
        v = 0
        for j, c in enumerate(ensemble.mid_clbits):
            bit = (y >> (n_bits - 1 - c)) & 1
            v |= bit << j
        return v

    subsets = np.array([mid_subset(y) for y in range(2**n_bits)])
    solved = np.zeros((2**n_mid, 2**n_bits))
    for u in range(2**n_mid):
        w_u = np.array([vecs[u ^ subsets[y]][y] for y in range(2**n_bits)])
        solved[u] = inv @ w_u
    q_vecs = []
    for w in range(2**n_mid):
        q_vecs.append(np.array([solved[w ^ subsets[y], y] for y in range(2**n_bits)]))
    q0, clipped = _clip_and_renormalize(q_vecs[0])
    variants = []
    for vec in q_vecs:
        v, _ = _clip_and_renormalize(vec)
        variants.append({lab: float(x) for lab, x in zip(labels, v)})
    return MitigationResult({lab: float(x) for lab, x in zip(labels, q0)},
                            variants, clipped)


def standard_rem(distribution: dict, confusion: ConfusionMatrix,
                 clbit_qubits: dict[int, int]) -> tuple[dict[str, float], float]:
    """Global confusion-matrix inversion for circuits without feed-forward.

    Returns the mitigated distribution and the clipped negative mass.
    """
    n_bits = max(clbit_qubits) + 1
    vec = _distribution_vector(distribution, n_bits)
    inv = _kron_inverse(confusion, clbit_qubits, n_bits)
    out, clipped = _clip_and_renormalize(inv @ vec)
    return {lab: float(x) for lab, x in zip(_labels(n_bits), out)}, clipped


def hellinger(p: dict, q: dict) -> float:
    """Hellinger distance sqrt(1 - sum_i sqrt(p_i q_i)) over a shared label set."""
    if set(p) != set(q):
        raise LabelMismatch("distributions are defined over different label sets")
    pv = np.array([max(float(p[k]), 0.0) for k in sorted(p)])
    qv = np.array([max(float(q[k]), 0.0) for k in sorted(q)])
    pv = pv / pv.sum()
    qv = qv / qv.sum()
    bc = float(np.sum(np.sqrt(pv * qv)))
    return float(np.sqrt(max(0.0, 1.0 - bc)))
