"""POVM representation, SIC-POVM construction, Choi machinery and fidelity.

A POVM is held as an ordered list of d x d Hermitian PSD matrices summing to
the identity. Rank-one POVMs additionally carry the (unnormalized) vectors
``psi_i`` with ``F_i = |psi_i><psi_i|``; these are derived on demand when not
supplied.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from scipy.optimize import minimize

from . import linalg
from .linalg import hermitize


class DimensionMismatch(ValueError):
    pass


class IncompletePovm(ValueError):
    pass


class NotRankOne(ValueError):
    pass


class FiducialSearchFailed(RuntimeError):
    """Numerical SIC fiducial search did not converge below tolerance."""


COMPLETENESS_TOL = 1e-9
PSD_TOL = 1e-10


@dataclass
class Povm:
    """Ordered POVM over a d-dimensional system.

    ``vectors`` is optional; when present, ``vectors[i]`` satisfies
    F_i = |psi_i><psi_i| and is kept in sync with ``elements``.
    """

    d: int
    elements: list[np.ndarray]
    vectors: list[np.ndarray] | None = None

    def __post_init__(self):
        self.elements = [np.asarray(e, dtype=complex) for e in self.elements]
        for e in self.elements:
            if e.shape != (self.d, self.d):
                raise DimensionMismatch(f"element shape {e.shape} != ({self.d},{self.d})")
        if self.vectors is not None:
            self.vectors = [np.asarray(v, dtype=complex).reshape(self.d) for v in self.vectors]
            if len(self.vectors) != len(self.elements):
                raise DimensionMismatch("vectors and elements length differ")

    @property
    def n_outcomes(self) -> int:
        return len(self.elements)

    @property
    def n_qubits(self) -> int:
        n = int(round(np.log2(self.d)))
        if 2**n != self.d:
            raise ValueError(f"dimension {self.d} is not a power of two")
        return n

    def completeness_residual(self) -> float:
        s = sum(self.elements)
        return float(np.linalg.norm(s - np.eye(self.d)))

    def is_rank_one(self, tol: float = 1e-9) -> bool:
        for e in self.elements:
            w = np.linalg.eigvalsh(hermitize(e))
            if np.sum(w > tol) > 1:
                return False
        return True

    def rank_one_vectors(self, tol: float = 1e-9) -> list[np.ndarray]:
        """Vectors psi_i with F_i = |psi_i><psi_i|, derived if not stored.

        The derived vector's largest-magnitude component is made real and
        positive so repeated runs produce identical circuits.
        """
        if self.vectors is not None:
            return [v.copy() for v in self.vectors]
        vecs = []
        for i, e in enumerate(self.elements):
            w, v = linalg.eigh(e, 1e-8)
            if np.sum(w > tol) > 1:
                raise NotRankOne(f"element {i} has rank > 1")
            if w[-1] <= tol:
                vecs.append(np.zeros(self.d, dtype=complex))
                continue
            psi = np.sqrt(w[-1]) * v[:, -1]
            k = int(np.argmax(np.abs(psi)))
            phase = psi[k] / abs(psi[k])
            vecs.append(psi / phase)
        return vecs


@dataclass
class ValidationReport:
    completeness_residual: float
    min_eigenvalues: list[float]
    ranks: list[int]
    linearly_independent: bool

    @property
    def complete(self) -> bool:
        return self.completeness_residual < COMPLETENESS_TOL


def validate(povm: Povm, rank_tol: float = 1e-9) -> ValidationReport:
    """Report completeness, per-element positivity/rank and linear independence."""
    min_eigs = []
    ranks = []
    for e in povm.elements:
        w = np.linalg.eigvalsh(hermitize(e))
        min_eigs.append(float(w[0]))
        ranks.append(int(np.sum(w > rank_tol)))
    flat = np.array([e.reshape(-1) for e in povm.elements])
    independent = np.linalg.matrix_rank(flat, tol=1e-9) == len(povm.elements)
    return ValidationReport(
        completeness_residual=povm.completeness_residual(),
        min_eigenvalues=min_eigs,
        ranks=ranks,
        linearly_independent=bool(independent),
    )


def pad_to_power_of_two(povm: Povm) -> Povm:
    """Append zero elements until the outcome count is a power of two."""
    m = povm.n_outcomes
    m_pad = 1
    while m_pad < m:
        m_pad *= 2
    if m_pad == m:
        return Povm(povm.d, [e.copy() for e in povm.elements],
                    None if povm.vectors is None else [v.copy() for v in povm.vectors])
    zeros = [np.zeros((povm.d, povm.d), dtype=complex) for _ in range(m_pad - m)]
    vectors = None
    if povm.vectors is not None:
        vectors = [v.copy() for v in povm.vectors] + [
            np.zeros(povm.d, dtype=complex) for _ in range(m_pad - m)
        ]
    return Povm(povm.d, [e.copy() for e in povm.elements] + zeros, vectors)


def outcome_probabilities(povm: Povm, rho: np.ndarray) -> dict[int, float]:
    """Born probabilities P(i) = Tr(F_i rho), cleaned of floating-point dust.

    Values in [-1e-9, 0) are clipped to zero and the distribution is
    renormalized when its total deviates from one by less than 1e-9; larger
    violations indicate invalid inputs and raise.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (povm.d, povm.d):
        raise DimensionMismatch(f"state shape {rho.shape} != ({povm.d},{povm.d})")
    linalg.validate_density_matrix(rho)
    probs = np.array([np.trace(e @ rho).real for e in povm.elements])
    if probs.min() < -COMPLETENESS_TOL:
        raise ValueError(f"probability {probs.min():.3e} below -1e-9; POVM not PSD?")
    probs = np.clip(probs, 0.0, 1.0)
    total = probs.sum()
    if abs(total - 1.0) > 1e-6:
        raise IncompletePovm(f"probabilities sum to {total:.9f}")
    probs = probs / total
    return {i: float(p) for i, p in enumerate(probs)}


def povm_channel(povm: Povm, rho: np.ndarray) -> np.ndarray:
    """Measurement channel E_F(rho) = sum_i Tr(F_i rho) |i><i| (M x M diagonal)."""
    m = povm.n_outcomes
    out = np.zeros((m, m), dtype=complex)
    for i, e in enumerate(povm.elements):
        out[i, i] = np.trace(e @ rho)
    return out


def povm_choi(povm: Povm, check_complete: bool = True) -> np.ndarray:
    """Normalized Choi matrix of the measurement channel, (d*M) x (d*M).

    Block (i, j) of size M equals E_F(|i><j|) / d, which is diagonal in the
    outcome index, so the full matrix is (1/d) sum_m F_m^T (x) |m><m|.
    """
    if check_complete and povm.completeness_residual() > 1e-6:
        raise IncompletePovm(f"completeness residual {povm.completeness_residual():.3e}")
    m = povm.n_outcomes
    choi = np.zeros((povm.d * m, povm.d * m), dtype=complex)
    for k, e in enumerate(povm.elements):
        proj = np.zeros((m, m))
        proj[k, k] = 1.0
        choi += np.kron(e.T, proj)
    return choi / povm.d


def povm_fidelity(target: Povm, realized: Povm) -> float:
    """Choi-state fidelity between two POVMs of identical shape.

    The realized Choi matrix is trace-normalized and PSD-projected first if
    it carries negative eigenvalues beyond 1e-10 (as happens for
    least-squares tomographic reconstructions).
    """
    if target.d != realized.d or target.n_outcomes != realized.n_outcomes:
        raise DimensionMismatch(
            f"shape ({target.d},{target.n_outcomes}) vs ({realized.d},{realized.n_outcomes})"
        )
    choi_t = povm_choi(target)
    choi_r = povm_choi(realized, check_complete=False)
    tr = np.trace(choi_r).real
    if tr <= 0:
        raise ValueError("realized POVM has non-positive total trace")
    choi_r = choi_r / tr
    if np.linalg.eigvalsh(hermitize(choi_r))[0] < -PSD_TOL:
        choi_r = linalg.project_to_psd(choi_r)
    return linalg.state_fidelity(choi_t, choi_r)


# ---------------------------------------------------------------------------
# SIC-POVM construction
# ---------------------------------------------------------------------------

def _tetrahedron_states() -> list[np.ndarray]:
    # canonical orientation with the first state equal to |0>
    states = [np.array([1.0, 0.0], dtype=complex)]
    for k in range(3):
        states.append(np.array(
            [1.0 / np.sqrt(3.0), np.sqrt(2.0 / 3.0) * np.exp(2j * np.pi * k / 3.0)]
        ))
    return states


_DISPLACEMENTS: dict[int, np.ndarray] = {}


def _displacement_operators(d: int) -> np.ndarray:
    """Stacked Weyl-Heisenberg operators X^a Z^b, shape (d*d, d, d)."""
    if d not in _DISPLACEMENTS:
        omega = np.exp(2j * np.pi / d)
        x = np.roll(np.eye(d), 1, axis=0)
        z = np.diag(omega ** np.arange(d))
        ops = []
        for a in range(d):
            for b in range(d):
                ops.append(np.linalg.matrix_power(x, a) @ np.linalg.matrix_power(z, b))
        _DISPLACEMENTS[d] = np.array(ops)
    return _DISPLACEMENTS[d]


def weyl_heisenberg_orbit(fiducial: np.ndarray) -> list[np.ndarray]:
    """Orbit X^a Z^b |f> of the shift/clock operators, a,b = 0..d-1."""
    f = np.asarray(fiducial, dtype=complex).reshape(-1)
    return list(_displacement_operators(f.size) @ f)


def sic_overlap_error(states: list[np.ndarray]) -> float:
    """Sum of squared deviations of pairwise overlaps from 1/(d+1)."""
    s = np.array(states)
    d = s.shape[1]
    overlaps = np.abs(s.conj() @ s.T) ** 2
    dev = overlaps - 1.0 / (d + 1)
    i, j = np.triu_indices(len(states), k=1)
    return float(np.sum(dev[i, j] ** 2))


def find_sic_fiducial(d: int, n_starts: int = 40, seed: int = 7,
                      tol: float = 1e-10) -> np.ndarray:
    """Search for a SIC fiducial vector under the Weyl-Heisenberg orbit.

    Minimizes the summed squared deviation of all pairwise overlaps from
    1/(d+1) over normalized complex vectors, multi-started from seeded
    random points. Raises ``FiducialSearchFailed`` if no start converges
    below ``tol``.
    """
    rng = np.random.default_rng(seed)

    def cost(params):
        f = params[:d] + 1j * params[d:]
        norm = np.linalg.norm(f)
        if norm < 1e-12:
            return 1.0
        return sic_overlap_error(weyl_heisenberg_orbit(f / norm))

    best = None
    for _ in range(n_starts):
        x0 = rng.normal(size=2 * d)
        res = minimize(cost, x0, method="L-BFGS-B",
                       options={"maxiter": 2000, "ftol": 1e-16, "gtol": 1e-12})
        if best is None or res.fun < best.fun:
            best = res
        if best.fun < tol:
            break
    if best is None or best.fun >= tol:
        raise FiducialSearchFailed(
            f"objective {best.fun:.3e} above {tol:.1e} after {n_starts} starts"
        )
    f = best.x[:d] + 1j * best.x[d:]
    f = f / np.linalg.norm(f)
    k = int(np.argmax(np.abs(f)))
    return f / (f[k] / abs(f[k]))


def _cached_fiducial(d: int) -> np.ndarray | None:
    try:
        text = resources.files("povmkit").joinpath(f"data/sic_fiducial_d{d}.json").read_text()
    except (FileNotFoundError, ModuleNotFoundError):
        return None
    data = json.loads(text)
    return np.array([complex(re, im) for re, im in data["fiducial"]])


def sic_states(n_qubits: int) -> list[np.ndarray]:
    """Normalized SIC state vectors for 1 or 2 qubits.

    d = 2 uses the analytic tetrahedron; d = 4 uses the Weyl-Heisenberg
    orbit of a numerically found fiducial, cached in a package data file
    for reproducibility.
    """
    if n_qubits == 1:
        return _tetrahedron_states()
    if n_qubits == 2:
        fid = _cached_fiducial(4)
        if fid is None:
            fid = find_sic_fiducial(4)
        states = weyl_heisenberg_orbit(fid)
        err = sic_overlap_error(states)
        if err > 1e-10:
            raise FiducialSearchFailed(f"cached fiducial overlap error {err:.3e}")
        return states
    raise ValueError("SIC construction implemented for 1 or 2 qubits only")


def sic_povm(n_qubits: int) -> Povm:
    """SIC-POVM with d^2 rank-one elements F_i = |phi_i><phi_i| / d."""
    states = sic_states(n_qubits)
    d = 2**n_qubits
    vectors = [s / np.sqrt(d) for s in states]
    elements = [np.outer(v, v.conj()) for v in vectors]
    return Povm(d, elements, vectors)


def uniform_random_outcome_povm(d: int, m: int) -> Povm:
    """POVM whose every outcome is I/m: completely random outcomes."""
    return Povm(d, [np.eye(d, dtype=complex) / m for _ in range(m)])


# ---------------------------------------------------------------------------
# JSON interchange
# ---------------------------------------------------------------------------

def matrix_to_json(a: np.ndarray) -> list:
    return [[[float(x.real), float(x.imag)] for x in row] for row in np.asarray(a, dtype=complex)]


def matrix_from_json(rows: list) -> np.ndarray:
    return np.array([[complex(re, im) for re, im in row] for row in rows])


def povm_to_json(povm: Povm) -> dict:
    return {"d": povm.d, "elements": [matrix_to_json(e) for e in povm.elements]}


def povm_from_json(data: dict) -> Povm:
    """Parse and validate the POVM interchange format.

    Format: ``{"d": int, "elements": [ matrix, ... ]}`` where a matrix is a
    row-major nested list of [re, im] pairs.
    """
    povm = Povm(int(data["d"]), [matrix_from_json(e) for e in data["elements"]])
    report = validate(povm)
    if report.completeness_residual > 1e-6:
        raise IncompletePovm(f"completeness residual {report.completeness_residual:.3e}")
    for i, (e, w) in enumerate(zip(povm.elements, report.min_eigenvalues)):
        if not linalg.is_hermitian(e, 1e-8):
            raise ValueError(f"element {i} not Hermitian")
        if w < -1e-8:
            raise linalg.NotPSD(f"element {i} eigenvalue {w:.3e}")
    return povm


def save_povm(povm: Povm, path) -> None:
    with open(path, "w") as fh:
        json.dump(povm_to_json(povm), fh)


def load_povm(path) -> Povm:
    with open(path) as fh:
        return povm_from_json(json.load(fh))
