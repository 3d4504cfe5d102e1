"""Dense complex linear-algebra primitives shared across the package.

All matrices are plain ``numpy.ndarray`` with complex dtype. Everything here
is pure and operates on matrices small enough (at most a few hundred rows)
that eigendecomposition-based methods are both the simplest and the most
robust choice.
"""

from __future__ import annotations

import numpy as np


class NotHermitian(ValueError):
    """Matrix violates Hermitian symmetry beyond tolerance."""


class NotPSD(ValueError):
    """Matrix has a negative eigenvalue beyond tolerance."""


class RowsNotOrthonormal(ValueError):
    """Input rows do not form an orthonormal set."""


class InvalidState(ValueError):
    """Matrix is not a valid density operator."""


def hermitize(a: np.ndarray) -> np.ndarray:
    """Return the Hermitian part (a + a†) / 2."""
    return (a + a.conj().T) / 2


def is_hermitian(a: np.ndarray, tol: float = 1e-10) -> bool:
    return bool(np.max(np.abs(a - a.conj().T)) <= tol)


def eigh(a: np.ndarray, tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a Hermitian matrix.

    Returns (eigenvalues ascending, eigenvector columns). Raises
    ``NotHermitian`` if the symmetry violation exceeds ``tol``.
    """
    a = np.asarray(a, dtype=complex)
    if not is_hermitian(a, tol):
        raise NotHermitian(
            f"symmetry violation {np.max(np.abs(a - a.conj().T)):.3e} exceeds {tol:.1e}"
        )
    w, v = np.linalg.eigh(hermitize(a))
    return w, v


def hermitian_sqrt(a: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Principal square root of a PSD Hermitian matrix.

    Eigenvalues in [-tol, 0) are clamped to zero; anything more negative
    raises ``NotPSD``. The result S is Hermitian PSD with S @ S == a.
    """
    w, v = eigh(a, tol)
    if w[0] < -tol:
        raise NotPSD(f"eigenvalue {w[0]:.3e} below -{tol:.1e}")
    w = np.clip(w, 0.0, None)
    return hermitize((v * np.sqrt(w)) @ v.conj().T)


def pinv(a: np.ndarray, rel_tol: float = 1e-10) -> np.ndarray:
    """Moore-Penrose pseudo-inverse via SVD.

    Singular values below ``rel_tol * sigma_max`` are treated as zero.
    The zero matrix maps to the zero matrix.
    """
    a = np.asarray(a, dtype=complex)
    return np.linalg.pinv(a, rcond=rel_tol)


def complete_to_unitary(partial: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Extend r orthonormal rows of length M to an M x M unitary.

    The first r rows of the result equal ``partial`` exactly. The remaining
    rows are produced by Gram-Schmidt against the canonical basis vectors
    e_0, e_1, ... in index order, skipping candidates whose residual norm
    falls below 1e-8. The completion is therefore deterministic.
    """
    partial = np.atleast_2d(np.asarray(partial, dtype=complex))
    r, m = partial.shape
    if r > m:
        raise RowsNotOrthonormal(f"more rows ({r}) than columns ({m})")
    gram = partial @ partial.conj().T
    if np.max(np.abs(gram - np.eye(r))) > tol:
        raise RowsNotOrthonormal(
            f"Gram residual {np.max(np.abs(gram - np.eye(r))):.3e} exceeds {tol:.1e}"
        )
    rows = [partial[i].copy() for i in range(r)]
    for k in range(m):
        if len(rows) == m:
            break
        cand = np.zeros(m, dtype=complex)
        cand[k] = 1.0
        # two orthogonalization passes keep the completion stable
        for _ in range(2):
            for row in rows:
                cand = cand - row * (row.conj() @ cand)
        norm = np.linalg.norm(cand)
        if norm > 1e-8:
            rows.append(cand / norm)
    if len(rows) != m:
        raise RowsNotOrthonormal("could not complete basis; input rows ill-conditioned")
    out = np.array(rows)
    out[:r] = partial  # preserve given rows bit-for-bit
    return out


def project_to_psd(a: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Nearest trace-preserving PSD matrix by eigenvalue rescaling.

    Negative eigenvalues are clipped to zero and the deficit is spread
    evenly over the remaining positive eigenvalues, preserving the trace
    (the standard fast maximum-likelihood projection for Gaussian noise).
    """
    w, v = eigh(a, max(tol, 1e-8))
    w = w.copy()
    # walk from the smallest eigenvalue up, accumulating clipped mass
    order = np.argsort(w)
    acc = 0.0
    for pos in range(len(w)):
        i = order[pos]
        remaining = len(w) - pos
        if w[i] + acc / remaining < 0:
            acc += w[i]
            w[i] = 0.0
        else:
            for j in order[pos:]:
                w[j] += acc / remaining
            break
    return hermitize((v * w) @ v.conj().T)


def validate_density_matrix(rho: np.ndarray, tol: float = 1e-8) -> None:
    """Raise ``InvalidState`` unless rho is Hermitian PSD with unit trace."""
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise InvalidState(f"not square: shape {rho.shape}")
    if not is_hermitian(rho, tol):
        raise InvalidState("not Hermitian")
    if abs(np.trace(rho).real - 1.0) > tol:
        raise InvalidState(f"trace {np.trace(rho).real:.6f} != 1")
    w = np.linalg.eigvalsh(hermitize(rho))
    if w[0] < -tol:
        raise InvalidState(f"negative eigenvalue {w[0]:.3e}")


def state_fidelity(rho: np.ndarray, sigma: np.ndarray, tol: float = 1e-8) -> float:
    """Uhlmann fidelity F = (Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2."""
    validate_density_matrix(rho, tol)
    validate_density_matrix(sigma, tol)
    s = hermitian_sqrt(np.asarray(rho, dtype=complex), max(tol, 1e-10))
    inner = hermitize(s @ np.asarray(sigma, dtype=complex) @ s)
    w = np.linalg.eigvalsh(inner)
    f = float(np.sum(np.sqrt(np.clip(w, 0.0, None))) ** 2)
    return min(f, 1.0 + 1e-9)
