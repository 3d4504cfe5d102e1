"""Exact branching density-matrix execution of dynamic circuits.

The engine evolves a set of unnormalized density-matrix branches keyed by
the classical record. Measurements split branches; conditional operations
apply only to matching branches; branches sharing a record are merged, so
the branch count never exceeds 2^n_classical_bits.

Noise model (all optional):

* ``eps_cnot``: two-qubit depolarizing after every CNOT inside a compiled
  block;
* ``eps_idle``: all-qubit depolarizing once per *measurement layer* (a
  maximal run of consecutive measure ops, since parallel end measurements
  count as a single step) and once per *feed-forward case* (each
  conditional in a decision group costs one idle period for its condition
  check);
* per-qubit readout: on measurement the collapsed outcome flips together
  with its record with probability eps0/eps1, so the post-measurement state
  stays consistent with the record (the "correctable" error);
* ``eps_qnd``: post-measurement bit flip that leaves the record untouched
  (non-QND readout).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .circuit import (
    CnotGate,
    CompiledBlock,
    ConditionalUnitary,
    DynamicCircuit,
    InvalidCircuit,
    Measure,
    Reset,
    RotationGate,
    UnitaryBox,
    decision_groups,
    measure_layers,
    validate_circuit,
)
from .linalg import validate_density_matrix
from .povm import DimensionMismatch


@dataclass
class NoiseModel:
    """Depolarizing + readout noise parameters.

    ``readout`` maps qubit index to (eps0, eps1): the probability that a
    collapsed 0 (resp. 1) is recorded, and left, as its flip. ``eps_qnd``
    maps qubit index to the post-measurement flip probability.
    """

    eps_cnot: float = 0.0
    eps_idle: float = 0.0
    readout: dict[int, tuple[float, float]] = field(default_factory=dict)
    eps_qnd: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        for name, val in (("eps_cnot", self.eps_cnot), ("eps_idle", self.eps_idle)):
            if not 0.0 <= val <= 1.0:
                raise ValueError(f"{name}={val} outside [0, 1]")
        for q, (e0, e1) in self.readout.items():
            if not (0.0 <= e0 <= 1.0 and 0.0 <= e1 <= 1.0):
                raise ValueError(f"readout rates for qubit {q} outside [0, 1]")
        for q, p in self.eps_qnd.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"eps_qnd for qubit {q} outside [0, 1]")

    def readout_for(self, qubit: int) -> tuple[float, float]:
        return self.readout.get(qubit, (0.0, 0.0))

    def qnd_for(self, qubit: int) -> float:
        return self.eps_qnd.get(qubit, 0.0)


@dataclass
class ExecutionTrace:
    """Exact outcome of a circuit: per-label probability and conditional state."""

    probabilities: dict[str, float]
    states: dict[str, np.ndarray]
    total_probability: float

    def distribution(self) -> dict[str, float]:
        return dict(self.probabilities)


# ---------------------------------------------------------------------------
# Elementary state operations (full-register density matrices)
# ---------------------------------------------------------------------------

def embed_unitary(u: np.ndarray, qubits: tuple[int, ...], n: int) -> np.ndarray:
    """Expand a k-qubit unitary to the full 2^n space.

    ``qubits[0]`` is the most significant index of ``u``; remaining register
    qubits are untouched.
    """
    k = len(qubits)
    rest = [q for q in range(n) if q not in qubits]
    perm = list(qubits) + rest
    big = np.kron(np.asarray(u, dtype=complex), np.eye(2**(n - k)))
    big = big.reshape((2,) * (2 * n))
    inv = np.argsort(perm)
    big = big.transpose(list(inv) + [n + i for i in inv])
    return np.ascontiguousarray(big.reshape(2**n, 2**n))


_X = np.array([[0, 1], [1, 0]], dtype=complex)


def _rotation(axis: str, angle: float) -> np.ndarray:
    c, s = np.cos(angle / 2), np.sin(angle / 2)
    if axis == "x":
        return np.array([[c, -1j * s], [-1j * s, c]])
    if axis == "y":
        return np.array([[c, -s], [s, c]])
    return np.array([[c - 1j * s, 0], [0, c + 1j * s]])


_CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)


def apply_unitary(rho: np.ndarray, big: np.ndarray) -> np.ndarray:
    return big @ rho @ big.conj().T


def depolarize(rho: np.ndarray, p: float, qubits, n_qubits: int | None = None) -> np.ndarray:
    """Depolarizing channel on a qubit subset.

    rho -> (1-p) rho + p * (I/2^k on the subset) (x) Tr_subset(rho); the
    trace is preserved exactly.
    """
    rho = np.asarray(rho, dtype=complex)
    if n_qubits is None:
        n_qubits = int(round(np.log2(rho.shape[0])))
    qubits = tuple(qubits)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p={p} outside [0, 1]")
    if p == 0.0 or not qubits:
        return rho
    k = len(qubits)
    t = rho.reshape((2,) * (2 * n_qubits))
    # trace out the addressed qubits, then re-insert maximally mixed factors
    for idx, q in enumerate(sorted(qubits, reverse=True)):
        t = np.trace(t, axis1=q, axis2=q + n_qubits - idx)
    rest = [q for q in range(n_qubits) if q not in qubits]
    mixed = np.eye(2**k, dtype=complex) / 2**k
    if rest:
        full = np.kron(mixed, t.reshape(2**len(rest), 2**len(rest)))
    else:
        full = mixed * complex(t)
    full = full.reshape((2,) * (2 * n_qubits))
    perm = list(qubits) + rest
    inv = np.argsort(perm)
    full = full.transpose(list(inv) + [n_qubits + i for i in inv])
    return (1 - p) * rho + p * full.reshape(rho.shape)


def _project(rho: np.ndarray, qubit: int, outcome: int, n: int) -> np.ndarray:
    """P rho P for the computational projector on one qubit (unnormalized)."""
    t = rho.reshape((2,) * (2 * n)).copy()
    sl = [slice(None)] * (2 * n)
    sl[qubit] = 1 - outcome
    t[tuple(sl)] = 0.0
    sl = [slice(None)] * (2 * n)
    sl[n + qubit] = 1 - outcome
    t[tuple(sl)] = 0.0
    return t.reshape(rho.shape)


def _flip(rho: np.ndarray, qubit: int, n: int) -> np.ndarray:
    t = rho.reshape((2,) * (2 * n))
    t = np.flip(np.flip(t, axis=qubit), axis=n + qubit)
    return np.ascontiguousarray(t.reshape(rho.shape))


# ---------------------------------------------------------------------------
# Execution plan: precomputed embeddings and noise insertion points
# ---------------------------------------------------------------------------

def _build_plan(circ: DynamicCircuit) -> list:
    n = circ.n_qubits
    first_of_layer = {layer[0] for layer in measure_layers(circ)}
    groups = decision_groups(circ)
    first_of_group = {g[0]: len(g) for g in groups}
    plan = []
    for i, op in enumerate(circ.ops):
        if isinstance(op, UnitaryBox):
            plan.append(("unitary", embed_unitary(op.matrix, op.qubits, n)))
        elif isinstance(op, ConditionalUnitary):
            plan.append(("cond_unitary", embed_unitary(op.matrix, op.qubits, n),
                         op.cond, first_of_group.get(i, 0)))
        elif isinstance(op, CompiledBlock):
            gates = []
            for g in op.gates:
                if isinstance(g, RotationGate):
                    gates.append((embed_unitary(_rotation(g.axis, g.angle), (g.qubit,), n), None))
                else:
                    gates.append((embed_unitary(_CNOT, (g.control, g.target), n),
                                  (g.control, g.target)))
            plan.append(("block", gates, op.cond, first_of_group.get(i, 0)))
        elif isinstance(op, Measure):
            plan.append(("measure", op.qubit, op.clbit, i in first_of_layer))
        elif isinstance(op, Reset):
            plan.append(("reset", embed_unitary(_X, (op.qubit,), n), op))
        else:
            raise InvalidCircuit(f"unknown op {type(op).__name__}")
    return plan


def run_exact(circ: DynamicCircuit, rho: np.ndarray,
              noise: NoiseModel | None = None) -> ExecutionTrace:
    """Deterministic branching evaluation of a dynamic circuit.

    ``rho`` is the system state; auxiliary qubits start in |0>. Returns the
    exact outcome distribution over full classical records together with
    the normalized conditional state of each branch.
    """
    report = validate_circuit(circ)
    if not report.valid:
        raise InvalidCircuit("; ".join(report.violations))
    rho = np.asarray(rho, dtype=complex)
    d_sys = 2**circ.n_system
    if rho.shape != (d_sys, d_sys):
        raise DimensionMismatch(f"state shape {rho.shape} != ({d_sys},{d_sys})")
    validate_density_matrix(rho)
    n = circ.n_qubits
    if circ.n_aux:
        aux = np.zeros((2**circ.n_aux, 2**circ.n_aux), dtype=complex)
        aux[0, 0] = 1.0
        full = np.kron(aux, rho)
    else:
        full = rho.copy()

    eps_idle = noise.eps_idle if noise else 0.0
    eps_cnot = noise.eps_cnot if noise else 0.0
    all_qubits = tuple(range(n))

    branches: dict[tuple, np.ndarray] = {(None,) * circ.n_classical_bits: full}

    def idle_all(times: int = 1):
        if eps_idle <= 0.0 or times == 0:
            return
        for key in list(branches):
            b = branches[key]
            for _ in range(times):
                b = depolarize(b, eps_idle, all_qubits, n)
            branches[key] = b

    for step in _build_plan(circ):
        kind = step[0]
        if kind == "unitary":
            big = step[1]
            for key in list(branches):
                branches[key] = apply_unitary(branches[key], big)
        elif kind == "cond_unitary":
            _, big, cond, group_size = step
            idle_all(group_size)
            for key in list(branches):
                if cond.matches(key):
                    branches[key] = apply_unitary(branches[key], big)
        elif kind == "block":
            _, gates, cond, group_size = step
            idle_all(group_size)
            for key in list(branches):
                if cond is not None and not cond.matches(key):
                    continue
                b = branches[key]
                for big, cnot_qubits in gates:
                    b = apply_unitary(b, big)
                    if cnot_qubits is not None and eps_cnot > 0.0:
                        b = depolarize(b, eps_cnot, cnot_qubits, n)
                branches[key] = b
        elif kind == "measure":
            _, qubit, clbit, first_of_layer = step
            if first_of_layer:
                idle_all(1)
            e0, e1 = noise.readout_for(qubit) if noise else (0.0, 0.0)
            qnd = noise.qnd_for(qubit) if noise else 0.0
            new: dict[tuple, np.ndarray] = {}
            for key, b in branches.items():
                p0 = _project(b, qubit, 0, n)
                p1 = _project(b, qubit, 1, n)
                # correctable error: record and collapsed state flip together
                rec0 = (1 - e0) * p0 + e1 * _flip(p1, qubit, n)
                rec1 = (1 - e1) * p1 + e0 * _flip(p0, qubit, n)
                for bit, state in ((0, rec0), (1, rec1)):
                    if qnd > 0.0:
                        state = (1 - qnd) * state + qnd * _flip(state, qubit, n)
                    new_key = key[:clbit] + (bit,) + key[clbit + 1:]
                    if new_key in new:
                        new[new_key] = new[new_key] + state
                    else:
                        new[new_key] = state
            branches = new
        elif kind == "reset":
            _, x_big, op = step
            for key, b in branches.items():
                if op.via_conditional_x:
                    recorded = key[op.clbit]
                    if recorded is None:
                        raise InvalidCircuit(f"reset reads unwritten clbit {op.clbit}")
                    fire = (recorded == 0) if op.invert else (recorded == 1)
                    if fire:
                        branches[key] = apply_unitary(b, x_big)
                else:
                    p0 = _project(b, op.qubit, 0, n)
                    p1 = _project(b, op.qubit, 1, n)
                    branches[key] = p0 + apply_unitary(p1, x_big)

    probs: dict[str, float] = {}
    states: dict[str, np.ndarray] = {}
    for key, b in branches.items():
        if any(v is None for v in key):
            raise InvalidCircuit("some classical bits were never written")
        label = "".join(str(v) for v in key)
        p = float(np.trace(b).real)
        probs[label] = p
        states[label] = b / p if p > 1e-300 else b
    total = sum(probs.values())
    return ExecutionTrace(probs, states, total)


def sample(circ: DynamicCircuit, rho: np.ndarray, noise: NoiseModel | None,
           shots: int, seed: int) -> dict[str, int]:
    """Multinomial sample of the exact outcome distribution."""
    if shots <= 0:
        raise ValueError(f"shots must be positive, got {shots}")
    trace = run_exact(circ, rho, noise)
    labels = sorted(trace.probabilities)
    p = np.array([trace.probabilities[l] for l in labels])
    p = np.clip(p, 0.0, None)
    p = p / p.sum()
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(shots, p)
    return {l: int(c) for l, c in zip(labels, counts)}


def counts_to_probabilities(counts: dict[str, int]) -> dict[str, float]:
    total = sum(counts.values())
    if total <= 0:
        raise ValueError("empty counts")
    return {k: v / total for k, v in counts.items()}


def partial_trace(rho: np.ndarray, keep: tuple[int, ...], n: int) -> np.ndarray:
    """Reduced density matrix over ``keep`` (in ascending register order)."""
    drop = [q for q in range(n) if q not in keep]
    t = rho.reshape((2,) * (2 * n))
    for idx, q in enumerate(sorted(drop, reverse=True)):
        t = np.trace(t, axis1=q, axis2=q + n - idx)
    k = len(keep)
    return t.reshape(2**k, 2**k)
