"""Detector and state tomography by linear inversion, with bootstrap errors.

Detector tomography expands each unknown POVM element in the multi-qubit
Pauli basis and solves the per-outcome normal equations from probabilities
of an (over)complete preparation set. State tomography inverts the same
linear relation in the other direction using a known informationally
complete POVM. Reconstructions are made physical by eigenvalue rescaling
at the Choi (respectively density-matrix) level only when negative
eigenvalues exceed tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from . import linalg
from .povm import Povm, povm_choi, povm_fidelity
from .linalg import hermitize


class RankDeficientDesign(ValueError):
    """Preparation set is not informationally complete."""


class NotInformationallyComplete(ValueError):
    pass


PSD_TOL = 1e-10

_PAULI_1Q = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

_EIGENSTATES = {
    "0": np.array([1, 0], dtype=complex),
    "1": np.array([0, 1], dtype=complex),
    "+": np.array([1, 1], dtype=complex) / np.sqrt(2),
    "-": np.array([1, -1], dtype=complex) / np.sqrt(2),
    "+i": np.array([1, 1j], dtype=complex) / np.sqrt(2),
    "-i": np.array([1, -1j], dtype=complex) / np.sqrt(2),
}

_PREP_ORDER = ["0", "1", "+", "-", "+i", "-i"]


def pauli_operators(n: int) -> list[np.ndarray]:
    """Tensor products of {I, X, Y, Z} in lexicographic order, 4^n operators."""
    ops = [np.array([[1.0]], dtype=complex)]
    for _ in range(n):
        ops = [np.kron(a, _PAULI_1Q[p]) for a in ops for p in "IXYZ"]
    return ops


def pauli_preparation_set(n: int) -> list[np.ndarray]:
    """The 6^n tensor products of single-qubit Pauli eigenstates, as states."""
    if n < 1:
        raise ValueError("n must be at least 1")
    kets = [np.array([1.0], dtype=complex)]
    for _ in range(n):
        kets = [np.kron(k, _EIGENSTATES[s]) for k in kets for s in _PREP_ORDER]
    return [np.outer(k, k.conj()) for k in kets]


def design_matrix(preparations: list[np.ndarray]) -> np.ndarray:
    """Rows Tr(sigma_k rho_i) over the Pauli basis; real for Hermitian inputs."""
    d = preparations[0].shape[0]
    n = int(round(np.log2(d)))
    sigmas = pauli_operators(n)
    s = np.zeros((len(preparations), len(sigmas)))
    for i, rho in enumerate(preparations):
        for k, sig in enumerate(sigmas):
            s[i, k] = np.trace(sig @ rho).real
    return s


def _distributions_to_matrix(distributions, labels) -> np.ndarray:
    """(n_states, n_outcomes) probability matrix; counts are normalized."""
    mat = np.zeros((len(distributions), len(labels)))
    for i, dist in enumerate(distributions):
        total = sum(dist.values())
        if total <= 0:
            raise ValueError(f"state {i}: empty distribution")
        for j, lab in enumerate(labels):
            mat[i, j] = dist.get(lab, 0.0) / total
    return mat


@dataclass
class ReconstructionResult:
    """Output of a linear-inversion reconstruction.

    ``estimate`` is the physical (projected) object; ``raw_estimate`` keeps
    the direct least-squares result. ``negative_mass`` is the total weight
    of negative eigenvalues before projection.
    """

    estimate: object
    raw_estimate: object
    residual: float
    negative_mass: float
    fidelity: float | None = None
    bootstrap_mean: float | None = None
    bootstrap_std: float | None = None
    bootstrap_b: int = 0


def detector_tomography(distributions: list[dict], preparations: list[np.ndarray],
                        outcome_labels: list[str] | None = None,
                        target: Povm | None = None) -> ReconstructionResult:
    """Least-squares reconstruction of a POVM from per-state statistics.

    ``distributions[i]`` holds outcome -> probability (or count) for
    preparation i. Outcome order follows ``outcome_labels`` when given and
    the sorted label union otherwise. Negative eigenvalues beyond 1e-10 are
    removed by rescaling the Choi-matrix spectrum; completeness of the
    estimate is reported via the residual, never enforced.
    """
    if len(distributions) != len(preparations):
        raise ValueError("distributions and preparations length differ")
    labels = outcome_labels
    if labels is None:
        labels = sorted({lab for dist in distributions for lab in dist})
    d = preparations[0].shape[0]
    s = design_matrix(preparations)
    if np.linalg.matrix_rank(s, tol=1e-9) < d * d:
        raise RankDeficientDesign(
            f"design matrix rank {np.linalg.matrix_rank(s, tol=1e-9)} < {d * d}"
        )
    p = _distributions_to_matrix(distributions, labels)
    s_pinv = np.linalg.pinv(s, rcond=1e-12)
    coeffs = s_pinv @ p  # (d^2, n_outcomes), one column per POVM element
    sigmas = pauli_operators(int(round(np.log2(d))))
    elements = []
    for m in range(len(labels)):
        f = sum(coeffs[k, m] * sigmas[k] for k in range(d * d))
        elements.append(hermitize(f))
    raw = Povm(d, elements)
    residual = float(np.linalg.norm(s @ coeffs - p))

    choi = povm_choi(raw, check_complete=False)
    w = np.linalg.eigvalsh(hermitize(choi))
    negative_mass = float(-w[w < 0].sum()) if (w < 0).any() else 0.0
    estimate = raw
    if w[0] < -PSD_TOL:
        projected = linalg.project_to_psd(choi)
        m_out = raw.n_outcomes
        # Choi = (1/d) sum_m F_m^T (x) |m><m|, so each element comes back
        # from the diagonal outcome block
        new_elements = []
        for k in range(m_out):
            block = projected.reshape(d, m_out, d, m_out)[:, k, :, k]
            new_elements.append(hermitize(d * block.T))
        estimate = Povm(d, new_elements)

    fidelity = None
    if target is not None:
        fidelity = povm_fidelity(target, estimate)
    return ReconstructionResult(estimate, raw, residual, negative_mass, fidelity)


def state_tomography(distribution: dict, ideal_povm: Povm,
                     outcome_labels: list[str] | None = None,
                     true_state: np.ndarray | None = None) -> ReconstructionResult:
    """Linear inversion of P(i) = Tr(F_i rho) for the state rho.

    The estimate is Hermitized, trace-normalized and its spectrum rescaled
    to non-negativity when needed. ``fidelity`` is filled when the true
    state is supplied.
    """
    d = ideal_povm.d
    sigmas = pauli_operators(ideal_povm.n_qubits)
    t = np.zeros((ideal_povm.n_outcomes, d * d))
    for i, e in enumerate(ideal_povm.elements):
        for k, sig in enumerate(sigmas):
            t[i, k] = np.trace(e @ sig).real
    if np.linalg.matrix_rank(t, tol=1e-9) < d * d:
        raise NotInformationallyComplete(
            f"POVM spans only {np.linalg.matrix_rank(t, tol=1e-9)} of {d * d} dimensions"
        )
    labels = outcome_labels
    if labels is None:
        labels = sorted(distribution)
    p = _distributions_to_matrix([distribution], labels)[0]
    r = np.linalg.pinv(t, rcond=1e-12) @ p
    rho = hermitize(sum(r[k] * sigmas[k] for k in range(d * d)))
    raw = rho.copy()
    tr = np.trace(rho).real
    if tr <= 0:
        raise ValueError("reconstructed state has non-positive trace")
    rho = rho / tr
    w = np.linalg.eigvalsh(rho)
    negative_mass = float(-w[w < 0].sum()) if (w < 0).any() else 0.0
    if w[0] < -PSD_TOL:
        rho = linalg.project_to_psd(rho)
    residual = float(np.linalg.norm(t @ r - p))
    fidelity = None
    if true_state is not None:
        fidelity = linalg.state_fidelity(true_state, rho)
    return ReconstructionResult(rho, raw, residual, negative_mass, fidelity)


def bootstrap(distributions: list[dict], b: int, seed: int, metric) -> tuple[float, float]:
    """Multinomial resampling of per-state counts; returns (mean, std) of metric.

    Each distribution is resampled at its own total count (probabilities
    are treated as unit-total and resampled at a nominal large count only
    if integral counts are absent, which keeps the noiseless case exact).
    """
    if b < 2:
        raise ValueError("need at least 2 bootstrap instances")
    rng = np.random.default_rng(seed)
    values = []
    prepared = []
    for dist in distributions:
        labels = sorted(dist)
        vals = np.array([float(dist[l]) for l in labels])
        total = vals.sum()
        prepared.append((labels, vals / total, total))
    for _ in range(b):
        resampled = []
        for labels, p, total in prepared:
            is_counts = abs(total - round(total)) < 1e-9 and total >= 2
            if is_counts:
                counts = rng.multinomial(int(round(total)), p)
                resampled.append({l: int(c) for l, c in zip(labels, counts)})
            else:
                resampled.append({l: float(v) for l, v in zip(labels, p)})
        values.append(metric(resampled))
    arr = np.array(values, dtype=float)
    return float(arr.mean()), float(arr.std(ddof=1))


# ---------------------------------------------------------------------------
# Pauli-basis state tomography (the 3^n-setting reference method)
# ---------------------------------------------------------------------------

def pauli_measurement_settings(n: int) -> list[list[np.ndarray]]:
    """Projector lists for the 3^n Pauli measurement bases (X, Y, Z per qubit)."""
    basis_kets = {
        "X": [_EIGENSTATES["+"], _EIGENSTATES["-"]],
        "Y": [_EIGENSTATES["+i"], _EIGENSTATES["-i"]],
        "Z": [_EIGENSTATES["0"], _EIGENSTATES["1"]],
    }
    settings = []
    for axes in product("XYZ", repeat=n):
        projectors = []
        for bits in product((0, 1), repeat=n):
            ket = np.array([1.0], dtype=complex)
            for ax, bit in zip(axes, bits):
                ket = np.kron(ket, basis_kets[ax][bit])
            projectors.append(np.outer(ket, ket.conj()))
        settings.append(projectors)
    return settings


def pauli_basis_state_tomography(setting_counts: list[dict],
                                 n: int,
                                 true_state: np.ndarray | None = None
                                 ) -> ReconstructionResult:
    """State reconstruction from per-setting outcome counts.

    ``setting_counts[j]`` maps the bitstring outcome of setting j (ordering
    of :func:`pauli_measurement_settings`) to its count. All settings'
    Born equations enter one least-squares system.
    """
    settings = pauli_measurement_settings(n)
    if len(setting_counts) != len(settings):
        raise ValueError(f"expected {len(settings)} settings, got {len(setting_counts)}")
    d = 2**n
    sigmas = pauli_operators(n)
    rows = []
    values = []
    for projectors, counts in zip(settings, setting_counts):
        total = sum(counts.values())
        if total <= 0:
            continue
        for j, proj in enumerate(projectors):
            label = format(j, f"0{n}b")
            rows.append([np.trace(proj @ sig).real for sig in sigmas])
            values.append(counts.get(label, 0) / total)
    t = np.array(rows)
    p = np.array(values)
    r = np.linalg.pinv(t, rcond=1e-12) @ p
    rho = hermitize(sum(r[k] * sigmas[k] for k in range(d * d)))
    raw = rho.copy()
    rho = rho / np.trace(rho).real
    w = np.linalg.eigvalsh(rho)
    negative_mass = float(-w[w < 0].sum()) if (w < 0).any() else 0.0
    if w[0] < -PSD_TOL:
        rho = linalg.project_to_psd(rho)
    fidelity = None
    if true_state is not None:
        fidelity = linalg.state_fidelity(true_state, rho)
    return ReconstructionResult(rho, raw, float(np.linalg.norm(t @ r - p)),
                                negative_mass, fidelity)
