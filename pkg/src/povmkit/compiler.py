"""Approximate compilation of unitaries into CNOT-budgeted templates, and
closed-form resource estimation.

The template is an initial layer of generic single-qubit rotations (z-y-z,
three angles per qubit) followed by ``budget`` CNOTs placed round-robin on
the connectivity edges, each trailed by generic rotations on its two
qubits. An optimizer fits the angles to minimize the phase-invariant
distance sqrt(1 - |Tr(V† U)|^2 / 4^n); multi-started Adam does the bulk of
the search and L-BFGS polishes the best candidates to a stationary point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .circuit import CnotGate, CompiledBlock, RotationGate
from .simulator import embed_unitary


class OptimizerStalled(RuntimeError):
    """No seed reached a stationary point of the compilation objective."""


class OutOfRegime(ValueError):
    """Outcome count outside the tabulated resource-bound regimes."""


_PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}

_CNOT4 = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]],
                  dtype=complex)


def line_connectivity(n_qubits: int) -> list[tuple[int, int]]:
    return [(q, q + 1) for q in range(n_qubits - 1)]


@dataclass
class _RotSlot:
    axis: str
    qubit: int
    param: int


@dataclass
class _CnotSlot:
    control: int
    target: int


def build_template(n_qubits: int, cnot_budget: int,
                   connectivity: list[tuple[int, int]] | None = None) -> list:
    """Gate slots of the compilation template, in application order."""
    if connectivity is None:
        connectivity = line_connectivity(n_qubits)
    if cnot_budget > 0 and not connectivity:
        raise ValueError("non-zero budget requires at least one edge")
    slots: list = []
    p = 0
    for q in range(n_qubits):
        for axis in "zyz":
            slots.append(_RotSlot(axis, q, p))
            p += 1
    for j in range(cnot_budget):
        c, t = connectivity[j % len(connectivity)]
        slots.append(_CnotSlot(c, t))
        for q in (c, t):
            for axis in "zyz":
                slots.append(_RotSlot(axis, q, p))
                p += 1
    return slots


def template_parameter_count(slots: list) -> int:
    return sum(1 for s in slots if isinstance(s, _RotSlot))


def _rot_batch(axis: str, theta: np.ndarray) -> np.ndarray:
    """Rotation matrices exp(-i theta sigma/2) for a batch of angles."""
    c = np.cos(theta / 2)
    s = np.sin(theta / 2)
    g = np.zeros(theta.shape + (2, 2), dtype=complex)
    if axis == "z":
        g[..., 0, 0] = c - 1j * s
        g[..., 1, 1] = c + 1j * s
    elif axis == "y":
        g[..., 0, 0] = c
        g[..., 0, 1] = -s
        g[..., 1, 0] = s
        g[..., 1, 1] = c
    else:
        g[..., 0, 0] = c
        g[..., 1, 1] = c
        g[..., 0, 1] = -1j * s
        g[..., 1, 0] = -1j * s
    return g


def _apply_left(gate: np.ndarray, mats: np.ndarray, qubit: int, n: int) -> np.ndarray:
    """Left-multiply batched (S, D, D) matrices by a 1-qubit gate on ``qubit``."""
    s, d, _ = mats.shape
    a = 2**qubit
    b = 2**(n - qubit - 1)
    view = mats.reshape(s, a, 2, b, d)
    if gate.ndim == 2:
        out = np.einsum("xy,saybd->saxbd", gate, view)
    else:
        out = np.einsum("sxy,saybd->saxbd", gate, view)
    return out.reshape(s, d, d)


class _Objective:
    """Batched objective 1 - |Tr(V† U(theta))|^2 / D^2 with analytic gradient."""

    def __init__(self, target: np.ndarray, n_qubits: int, slots: list):
        self.n = n_qubits
        self.d = 2**n_qubits
        self.target = np.asarray(target, dtype=complex)
        self.slots = slots
        self.n_params = template_parameter_count(slots)
        self.cnot_embedded = {}
        for slot in slots:
            if isinstance(slot, _CnotSlot):
                key = (slot.control, slot.target)
                if key not in self.cnot_embedded:
                    self.cnot_embedded[key] = embed_unitary(_CNOT4, key, n_qubits)
        self.pauli_embedded = {}

    def _sigma(self, axis: str, qubit: int) -> np.ndarray:
        key = (axis, qubit)
        if key not in self.pauli_embedded:
            self.pauli_embedded[key] = _PAULI[axis]
        return self.pauli_embedded[key]

    def unitary(self, angles: np.ndarray) -> np.ndarray:
        """Circuit unitaries for a batch of angle vectors, shape (S, D, D)."""
        angles = np.atleast_2d(angles)
        s = angles.shape[0]
        mats = np.broadcast_to(np.eye(self.d, dtype=complex), (s, self.d, self.d)).copy()
        for slot in self.slots:
            if isinstance(slot, _RotSlot):
                g = _rot_batch(slot.axis, angles[:, slot.param])
                mats = _apply_left(g, mats, slot.qubit, self.n)
            else:
                mats = np.matmul(self.cnot_embedded[(slot.control, slot.target)], mats)
        return mats

    def value(self, angles: np.ndarray) -> np.ndarray:
        u = self.unitary(angles)
        t = np.einsum("ji,sji->s", self.target.conj(), u)
        return 1.0 - np.abs(t) ** 2 / self.d**2

    def value_and_grad(self, angles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        angles = np.atleast_2d(angles)
        s = angles.shape[0]
        prefixes = [np.broadcast_to(np.eye(self.d, dtype=complex),
                                    (s, self.d, self.d)).copy()]
        for slot in self.slots:
            mats = prefixes[-1]
            if isinstance(slot, _RotSlot):
                g = _rot_batch(slot.axis, angles[:, slot.param])
                prefixes.append(_apply_left(g, mats, slot.qubit, self.n))
            else:
                prefixes.append(np.matmul(
                    self.cnot_embedded[(slot.control, slot.target)], mats))
        t = np.einsum("ji,sji->s", self.target.conj(), prefixes[-1])
        value = 1.0 - np.abs(t) ** 2 / self.d**2
        grad = np.zeros((s, self.n_params))
        suffix = np.broadcast_to(self.target.conj().transpose(),
                                 (s, self.d, self.d)).copy()
        # suffix holds V† G_L ... G_{k+1}; walk gates in reverse
        for idx in range(len(self.slots) - 1, -1, -1):
            slot = self.slots[idx]
            if isinstance(slot, _RotSlot):
                sig = self._sigma(slot.axis, slot.qubit)
                m = _apply_left(sig, prefixes[idx + 1], slot.qubit, self.n)
                dt = -0.5j * np.einsum("sij,sji->s", suffix, m)
                grad[:, slot.param] = -(2.0 / self.d**2) * np.real(np.conj(t) * dt)
                g = _rot_batch(slot.axis, angles[:, slot.param])
                # right-multiply the suffix by this gate (transpose trick on rows)
                suffix = np.transpose(_apply_left(
                    np.transpose(g, (0, 2, 1)),
                    np.transpose(suffix, (0, 2, 1)), slot.qubit, self.n), (0, 2, 1))
            else:
                big = self.cnot_embedded[(slot.control, slot.target)]
                suffix = np.matmul(suffix, big)
        return value, grad


@dataclass
class CompilationResult:
    block: CompiledBlock
    cnot_count: int
    distance: float
    iterations: int
    angles: np.ndarray
    grad_norm: float


def block_unitary(block: CompiledBlock) -> np.ndarray:
    """Matrix of a compiled block in the order of its qubit tuple."""
    n = len(block.qubits)
    local = {q: i for i, q in enumerate(block.qubits)}
    u = np.eye(2**n, dtype=complex)
    for g in block.gates:
        if isinstance(g, RotationGate):
            gate = _rot_batch(g.axis, np.array([g.angle]))[0]
            big = embed_unitary(gate, (local[g.qubit],), n)
        else:
            big = embed_unitary(_CNOT4, (local[g.control], local[g.target]), n)
        u = big @ u
    return u


def compilation_distance(target: np.ndarray, realized: np.ndarray) -> float:
    d = target.shape[0]
    t = np.trace(target.conj().T @ realized)
    return math.sqrt(max(0.0, 1.0 - abs(t) ** 2 / d**2))


def _slots_to_block(slots: list, angles: np.ndarray,
                    qubits: tuple[int, ...]) -> CompiledBlock:
    gates = []
    for slot in slots:
        if isinstance(slot, _RotSlot):
            gates.append(RotationGate(slot.axis, qubits[slot.qubit],
                                      float(angles[slot.param])))
        else:
            gates.append(CnotGate(qubits[slot.control], qubits[slot.target]))
    return CompiledBlock(qubits, gates)


def approx_compile(target: np.ndarray, n_qubits: int, cnot_budget: int,
                   connectivity: list[tuple[int, int]] | None = None,
                   seeds: int = 20, seed: int = 1234,
                   adam_iterations: int = 2000, adam_lr: float = 0.08,
                   patience: int = 250, polish: int = 3,
                   polish_maxiter: int = 4000) -> CompilationResult:
    """Fit the rotation angles of a CNOT template to a target unitary.

    ``seeds`` random restarts run in a batched Adam pass; the ``polish``
    best candidates are then driven to a stationary point with L-BFGS.
    Deterministic for fixed ``seed``.
    """
    target = np.asarray(target, dtype=complex)
    d = 2**n_qubits
    if target.shape != (d, d):
        raise ValueError(f"target shape {target.shape} != ({d},{d})")
    if cnot_budget < 0:
        raise ValueError("cnot_budget must be non-negative")
    slots = build_template(n_qubits, cnot_budget, connectivity)
    obj = _Objective(target, n_qubits, slots)
    n_params = obj.n_params

    rng = np.random.default_rng([seed, n_qubits, cnot_budget])
    angles = rng.uniform(-np.pi, np.pi, size=(seeds, n_params))

    iterations = 0
    if adam_iterations > 0 and n_params > 0:
        m = np.zeros_like(angles)
        v = np.zeros_like(angles)
        best_angles = angles.copy()
        best_val = np.full(seeds, np.inf)
        global_best = np.inf
        stall = 0
        for it in range(1, adam_iterations + 1):
            val, grad = obj.value_and_grad(angles)
            improved = val < best_val
            best_val = np.where(improved, val, best_val)
            best_angles[improved] = angles[improved]
            iterations += 1
            new_best = best_val.min()
            if new_best < global_best - 1e-12:
                global_best = new_best
                stall = 0
            else:
                stall += 1
                if stall >= patience:
                    break
            m = 0.9 * m + 0.1 * grad
            v = 0.999 * v + 0.001 * grad**2
            mhat = m / (1 - 0.9**it)
            vhat = v / (1 - 0.999**it)
            angles = angles - adam_lr * mhat / (np.sqrt(vhat) + 1e-8)
        angles = best_angles
        order = np.argsort(best_val)
    else:
        order = np.arange(seeds)

    n_polish = max(1, min(polish, seeds))
    best = None
    for s in order[:n_polish]:
        x0 = angles[s]
        if n_params == 0:
            val = float(obj.value(x0[None])[0])
            cand = (val, x0, 0, 0.0)
        else:
            def fun(x):
                v, g = obj.value_and_grad(x[None])
                return float(v[0]), g[0]

            res = minimize(fun, x0, jac=True, method="L-BFGS-B",
                           options={"maxiter": polish_maxiter,
                                    "ftol": 1e-18, "gtol": 1e-12})
            iterations += int(res.nit)
            cand = (float(res.fun), res.x, int(res.nit),
                    float(np.linalg.norm(res.jac)))
        if best is None or cand[0] < best[0]:
            best = cand
    val, x, _, gnorm = best
    if gnorm > 1e-2:
        raise OptimizerStalled(f"gradient norm {gnorm:.3e} after optimization")
    block = _slots_to_block(slots, x, tuple(range(n_qubits)))
    distance = math.sqrt(max(0.0, val))
    return CompilationResult(block, cnot_budget, distance, iterations,
                             np.asarray(x, dtype=float), gnorm)


def pareto_sweep(target: np.ndarray, n_qubits: int, budgets: list[int],
                 connectivity: list[tuple[int, int]] | None = None,
                 seeds: int = 20, seed: int = 1234,
                 **kwargs) -> list[CompilationResult]:
    """One compilation per budget with best-so-far enforcement.

    Budgets must be ascending; if a smaller budget already achieved a lower
    distance its result is carried forward, so reported distances are
    non-increasing.
    """
    if list(budgets) != sorted(budgets):
        raise ValueError("budgets must be ascending")
    results: list[CompilationResult] = []
    best: CompilationResult | None = None
    for b in budgets:
        res = approx_compile(target, n_qubits, b, connectivity,
                             seeds=seeds, seed=seed, **kwargs)
        if best is not None and best.distance < res.distance:
            res = best
        best = res
        results.append(res)
    return results


def retarget_block(block: CompiledBlock, qubits: tuple[int, ...]) -> CompiledBlock:
    """Map a block compiled on local indices 0..k-1 onto circuit qubits."""
    mapping = {i: q for i, q in enumerate(qubits)}
    gates = []
    for g in block.gates:
        if isinstance(g, RotationGate):
            gates.append(RotationGate(g.axis, mapping[g.qubit], g.angle))
        else:
            gates.append(CnotGate(mapping[g.control], mapping[g.target]))
    return CompiledBlock(tuple(qubits), gates, block.cond)


def export_pareto_csv(results: list[CompilationResult], path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["budget", "distance", "iterations"])
        for r in results:
            writer.writerow([r.cnot_count, f"{r.distance:.12g}", r.iterations])


# ---------------------------------------------------------------------------
# Resource estimation
# ---------------------------------------------------------------------------

@dataclass
class ResourceEstimate:
    scheme: str
    n: int
    M: int
    cnot_upper_bound: int
    unitary_layers: int
    mid_circuit_measurements: int
    feed_forward_cases: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def resource_estimate(scheme: str, n: int, M: int) -> ResourceEstimate:
    """Closed-form circuit-cost bounds for an M-outcome POVM on n qubits.

    Regimes: 2^n < M <= 2^[n+1] (one auxiliary qubit; the hybrid coincides
    with Naimark) and 2^[n+1] < M <= 4^n (general case). The CNOT bound
    treats every unitary as generic, at 4^q CNOTs for q qubits; non-power
    outcome counts are padded, i.e. log2(M) enters as its ceiling.
    """
    scheme = scheme.lower()
    if scheme not in ("naimark", "binary", "hybrid"):
        raise ValueError(f"unknown scheme {scheme!r}")
    if n < 1 or M < 2:
        raise OutOfRegime(f"need n >= 1 and M >= 2, got n={n}, M={M}")
    if M <= 2**n:
        raise OutOfRegime(f"M={M} does not exceed the system dimension 2^{n}")
    if M > 4**n:
        raise OutOfRegime(f"M={M} exceeds 4^n={4**n} (rank-one linear independence)")
    levels = math.ceil(math.log2(M))  # log2 of the padded outcome count
    unit = 4 ** (n + 1)
    if M <= 2 ** (n + 1):
        bounds = {"naimark": unit, "binary": (n + 1) * unit, "hybrid": unit}
    else:
        bounds = {
            "naimark": 4**levels,
            "binary": levels * unit,
            "hybrid": (levels - n) * unit,
        }
    if scheme == "naimark":
        layers, mid, ff = 1, 0, 0
    elif scheme == "binary":
        layers = levels
        mid = levels - 1
        ff = 2**levels - 2
    else:
        depth = max(0, levels - n - 1)
        layers = depth + 1
        mid = depth
        ff = 2 ** (depth + 1) - 2
    return ResourceEstimate(scheme, n, M, bounds[scheme], layers, mid, ff)
