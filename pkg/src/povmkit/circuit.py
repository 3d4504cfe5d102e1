"""Dynamic-circuit intermediate representation.

A :class:`DynamicCircuit` is an ordered list of operations over a quantum
register and a classical bit register. Conventions used throughout the
package:

* qubit 0 is the most significant bit of computational-basis indices;
* auxiliary qubits occupy indices ``0 .. n_aux-1``, system qubits follow;
* outcome labels are bitstrings with classical bit 0 leftmost.

Circuits are treated as immutable once built; builders construct a fresh op
list and never mutate an existing circuit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .povm import matrix_from_json, matrix_to_json


class ParseError(ValueError):
    """Raised when a circuit document cannot be parsed; carries context."""


class InvalidCircuit(ValueError):
    pass


UNITARY_TOL = 1e-9


@dataclass(frozen=True)
class Condition:
    """Classical condition: for each j, clbit bits[j] must equal (value >> j) & 1."""

    bits: tuple[int, ...]
    value: int

    def expected(self, j: int) -> int:
        return (self.value >> j) & 1

    def matches(self, record) -> bool:
        return all(record[b] == self.expected(j) for j, b in enumerate(self.bits))


@dataclass(frozen=True)
class RotationGate:
    axis: str  # 'x', 'y' or 'z'
    qubit: int
    angle: float


@dataclass(frozen=True)
class CnotGate:
    control: int
    target: int


@dataclass
class UnitaryBox:
    qubits: tuple[int, ...]
    matrix: np.ndarray

    def __post_init__(self):
        self.qubits = tuple(self.qubits)
        self.matrix = np.asarray(self.matrix, dtype=complex)


@dataclass
class Measure:
    qubit: int
    clbit: int


@dataclass
class ConditionalUnitary:
    qubits: tuple[int, ...]
    matrix: np.ndarray
    cond: Condition

    def __post_init__(self):
        self.qubits = tuple(self.qubits)
        self.matrix = np.asarray(self.matrix, dtype=complex)


@dataclass
class Reset:
    """Active reset: X conditioned on the given recorded bit.

    With ``via_conditional_x`` the X fires on branches whose *recorded* bit
    is 1 (or 0 when ``invert`` is set, as used by conditional calibration
    circuits); otherwise the op is an ideal reset channel to |0>.
    """

    qubit: int
    clbit: int
    via_conditional_x: bool = True
    invert: bool = False


@dataclass
class CompiledBlock:
    """CNOT + single-qubit-rotation realization of a unitary, optionally conditional."""

    qubits: tuple[int, ...]
    gates: list
    cond: Condition | None = None

    def __post_init__(self):
        self.qubits = tuple(self.qubits)

    def cnot_count(self) -> int:
        return sum(1 for g in self.gates if isinstance(g, CnotGate))


CircuitOp = UnitaryBox | Measure | ConditionalUnitary | Reset | CompiledBlock


@dataclass
class DynamicCircuit:
    n_system: int
    n_aux: int
    n_classical_bits: int
    ops: list = field(default_factory=list)

    @property
    def n_qubits(self) -> int:
        return self.n_system + self.n_aux

    @property
    def dim(self) -> int:
        return 2**self.n_qubits

    def op_condition(self, op) -> Condition | None:
        if isinstance(op, ConditionalUnitary):
            return op.cond
        if isinstance(op, CompiledBlock):
            return op.cond
        return None


def is_unitary(a: np.ndarray, tol: float = UNITARY_TOL) -> bool:
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        return False
    return bool(np.max(np.abs(a.conj().T @ a - np.eye(a.shape[0]))) <= tol)


@dataclass
class CircuitValidationReport:
    violations: list[str]

    @property
    def valid(self) -> bool:
        return not self.violations


def validate_circuit(circ: DynamicCircuit) -> CircuitValidationReport:
    """Check index ranges, payload unitarity and condition-before-measure order."""
    v: list[str] = []
    nq, nc = circ.n_qubits, circ.n_classical_bits
    written: set[int] = set()

    def check_qubits(i, qubits):
        for q in qubits:
            if not 0 <= q < nq:
                v.append(f"op {i}: qubit {q} out of range 0..{nq - 1}")

    for i, op in enumerate(circ.ops):
        if isinstance(op, (UnitaryBox, ConditionalUnitary)):
            check_qubits(i, op.qubits)
            dim = 2 ** len(op.qubits)
            if op.matrix.shape != (dim, dim):
                v.append(f"op {i}: matrix shape {op.matrix.shape} != ({dim},{dim})")
            elif not is_unitary(op.matrix):
                v.append(f"op {i}: payload not unitary within {UNITARY_TOL:.0e}")
        elif isinstance(op, Measure):
            check_qubits(i, [op.qubit])
            if not 0 <= op.clbit < nc:
                v.append(f"op {i}: clbit {op.clbit} out of range 0..{nc - 1}")
            else:
                written.add(op.clbit)
        elif isinstance(op, Reset):
            check_qubits(i, [op.qubit])
            if op.via_conditional_x and op.clbit not in written:
                v.append(f"op {i}: reset reads clbit {op.clbit} before any measure wrote it")
        elif isinstance(op, CompiledBlock):
            check_qubits(i, op.qubits)
            for g in op.gates:
                gq = [g.qubit] if isinstance(g, RotationGate) else [g.control, g.target]
                for q in gq:
                    if q not in op.qubits:
                        v.append(f"op {i}: gate touches qubit {q} outside block qubits")
        cond = circ.op_condition(op)
        if cond is not None:
            for b in cond.bits:
                if not 0 <= b < nc:
                    v.append(f"op {i}: condition bit {b} out of range 0..{nc - 1}")
                elif b not in written:
                    v.append(f"op {i}: condition reads clbit {b} before any measure wrote it")
    return CircuitValidationReport(v)


# ---------------------------------------------------------------------------
# Static structure reports
# ---------------------------------------------------------------------------

@dataclass
class CountsReport:
    cnots_total: int
    cnot_depth: int
    mid_circuit_measurements: int
    end_circuit_measurements: int
    feed_forward_cases: int
    resets: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _is_quantum_op(op) -> bool:
    return isinstance(op, (UnitaryBox, ConditionalUnitary, Reset, CompiledBlock))


def decision_groups(circ: DynamicCircuit) -> list[list[int]]:
    """Maximal runs of consecutive conditional ops sharing the same condition bits.

    Each group is one feed-forward decision point: its ops are the mutually
    exclusive cases selected by the classical record.
    """
    groups: list[list[int]] = []
    current: list[int] = []
    current_bits: tuple[int, ...] | None = None
    for i, op in enumerate(circ.ops):
        cond = circ.op_condition(op)
        if cond is not None:
            if current and cond.bits == current_bits:
                current.append(i)
            else:
                if current:
                    groups.append(current)
                current = [i]
                current_bits = cond.bits
        else:
            if current:
                groups.append(current)
                current = []
                current_bits = None
    if current:
        groups.append(current)
    return groups


def measure_layers(circ: DynamicCircuit) -> list[list[int]]:
    """Maximal runs of consecutive Measure ops (parallel measurement steps)."""
    layers: list[list[int]] = []
    current: list[int] = []
    for i, op in enumerate(circ.ops):
        if isinstance(op, Measure):
            current.append(i)
        else:
            if current:
                layers.append(current)
                current = []
    if current:
        layers.append(current)
    return layers


def static_counts(circ: DynamicCircuit) -> CountsReport:
    """Count CNOTs, measurements, feed-forward cases and resets.

    A measurement is mid-circuit when any later op acts on a qubit;
    ``cnot_depth`` is the CNOT count along one execution path (unconditional
    blocks plus the largest case of each decision group).
    """
    last_quantum = -1
    for i, op in enumerate(circ.ops):
        if _is_quantum_op(op):
            last_quantum = i
    mid = end = 0
    for i, op in enumerate(circ.ops):
        if isinstance(op, Measure):
            if i < last_quantum:
                mid += 1
            else:
                end += 1
    cnots_total = sum(op.cnot_count() for op in circ.ops if isinstance(op, CompiledBlock))
    ff_cases = sum(1 for op in circ.ops if circ.op_condition(op) is not None)
    groups = decision_groups(circ)
    grouped = {i for g in groups for i in g}
    depth = sum(
        op.cnot_count()
        for i, op in enumerate(circ.ops)
        if isinstance(op, CompiledBlock) and i not in grouped
    )
    for g in groups:
        depth += max(
            (circ.ops[i].cnot_count() for i in g if isinstance(circ.ops[i], CompiledBlock)),
            default=0,
        )
    resets = sum(1 for op in circ.ops if isinstance(op, Reset))
    return CountsReport(cnots_total, depth, mid, end, ff_cases, resets)


def unitary_layers(circ: DynamicCircuit) -> list[list[int]]:
    """Op indices of unitary content grouped into sequential layers.

    Each unconditional UnitaryBox/CompiledBlock is its own layer; a decision
    group forms a single layer (its cases share one time slot).
    """
    groups = decision_groups(circ)
    grouped = {i for g in groups for i in g}
    layers: list[tuple[int, list[int]]] = []
    for g in groups:
        layers.append((g[0], list(g)))
    for i, op in enumerate(circ.ops):
        if isinstance(op, (UnitaryBox, CompiledBlock)) and i not in grouped:
            layers.append((i, [i]))
    layers.sort()
    return [ops for _, ops in layers]


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------

def _gate_to_json(g) -> dict:
    if isinstance(g, RotationGate):
        return {"kind": "rot", "axis": g.axis, "qubit": g.qubit, "angle": g.angle}
    return {"kind": "cnot", "control": g.control, "target": g.target}


def _gate_from_json(data: dict, where: str):
    kind = data.get("kind")
    if kind == "rot":
        if data.get("axis") not in ("x", "y", "z"):
            raise ParseError(f"{where}: bad rotation axis {data.get('axis')!r}")
        return RotationGate(data["axis"], int(data["qubit"]), float(data["angle"]))
    if kind == "cnot":
        return CnotGate(int(data["control"]), int(data["target"]))
    raise ParseError(f"{where}: unknown gate kind {kind!r}")


def _cond_to_json(cond: Condition | None):
    if cond is None:
        return None
    return {"bits": list(cond.bits), "value": cond.value}


def _cond_from_json(data, where: str) -> Condition | None:
    if data is None:
        return None
    try:
        return Condition(tuple(int(b) for b in data["bits"]), int(data["value"]))
    except (KeyError, TypeError) as exc:
        raise ParseError(f"{where}: malformed condition ({exc})") from exc


def circuit_to_json(circ: DynamicCircuit) -> dict:
    ops = []
    for op in circ.ops:
        if isinstance(op, UnitaryBox):
            ops.append({"type": "unitary", "qubits": list(op.qubits),
                        "matrix": matrix_to_json(op.matrix)})
        elif isinstance(op, Measure):
            ops.append({"type": "measure", "qubit": op.qubit, "clbit": op.clbit})
        elif isinstance(op, ConditionalUnitary):
            ops.append({"type": "conditional_unitary", "qubits": list(op.qubits),
                        "matrix": matrix_to_json(op.matrix), "cond": _cond_to_json(op.cond)})
        elif isinstance(op, Reset):
            ops.append({"type": "reset", "qubit": op.qubit, "clbit": op.clbit,
                        "via_conditional_x": op.via_conditional_x, "invert": op.invert})
        elif isinstance(op, CompiledBlock):
            ops.append({"type": "compiled_block", "qubits": list(op.qubits),
                        "gates": [_gate_to_json(g) for g in op.gates],
                        "cond": _cond_to_json(op.cond)})
        else:
            raise TypeError(f"unknown op {type(op).__name__}")
    return {"n_system": circ.n_system, "n_aux": circ.n_aux,
            "n_classical_bits": circ.n_classical_bits, "ops": ops}


def circuit_from_json(data: dict) -> DynamicCircuit:
    try:
        circ = DynamicCircuit(int(data["n_system"]), int(data["n_aux"]),
                              int(data["n_classical_bits"]))
    except (KeyError, TypeError) as exc:
        raise ParseError(f"missing or malformed header field: {exc}") from exc
    for i, entry in enumerate(data.get("ops", [])):
        where = f"op {i}"
        try:
            kind = entry["type"]
            if kind == "unitary":
                op = UnitaryBox(tuple(entry["qubits"]), matrix_from_json(entry["matrix"]))
            elif kind == "measure":
                op = Measure(int(entry["qubit"]), int(entry["clbit"]))
            elif kind == "conditional_unitary":
                cond = _cond_from_json(entry.get("cond"), where)
                if cond is None:
                    raise ParseError(f"{where}: conditional_unitary requires cond")
                op = ConditionalUnitary(tuple(entry["qubits"]),
                                        matrix_from_json(entry["matrix"]), cond)
            elif kind == "reset":
                op = Reset(int(entry["qubit"]), int(entry["clbit"]),
                           bool(entry.get("via_conditional_x", True)),
                           bool(entry.get("invert", False)))
            elif kind == "compiled_block":
                op = CompiledBlock(tuple(entry["qubits"]),
                                   [_gate_from_json(g, where) for g in entry["gates"]],
                                   _cond_from_json(entry.get("cond"), where))
            else:
                raise ParseError(f"{where}: unknown op type {kind!r}")
        except ParseError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{where}: {exc}") from exc
        circ.ops.append(op)
    return circ


def serialize(circ: DynamicCircuit) -> str:
    return json.dumps(circuit_to_json(circ))


def deserialize(text: str) -> DynamicCircuit:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ParseError("top level must be an object")
    return circuit_from_json(data)


def circuits_equal(a: DynamicCircuit, b: DynamicCircuit, tol: float = 1e-12) -> bool:
    """Structural equality with matrix entries compared within ``tol``."""
    if (a.n_system, a.n_aux, a.n_classical_bits) != (b.n_system, b.n_aux, b.n_classical_bits):
        return False
    if len(a.ops) != len(b.ops):
        return False
    for x, y in zip(a.ops, b.ops):
        if type(x) is not type(y):
            return False
        if isinstance(x, (UnitaryBox, ConditionalUnitary)):
            if x.qubits != y.qubits or np.max(np.abs(x.matrix - y.matrix)) > tol:
                return False
            if isinstance(x, ConditionalUnitary) and x.cond != y.cond:
                return False
        elif isinstance(x, Measure):
            if (x.qubit, x.clbit) != (y.qubit, y.clbit):
                return False
        elif isinstance(x, Reset):
            if (x.qubit, x.clbit, x.via_conditional_x, x.invert) != (
                    y.qubit, y.clbit, y.via_conditional_x, y.invert):
                return False
        elif isinstance(x, CompiledBlock):
            if x.qubits != y.qubits or x.cond != y.cond or len(x.gates) != len(y.gates):
                return False
            for gx, gy in zip(x.gates, y.gates):
                if type(gx) is not type(gy):
                    return False
                if isinstance(gx, RotationGate):
                    if (gx.axis, gx.qubit) != (gy.axis, gy.qubit) or abs(gx.angle - gy.angle) > tol:
                        return False
                elif (gx.control, gx.target) != (gy.control, gy.target):
                    return False
    return True
