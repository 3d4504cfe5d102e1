import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from povmkit import linalg as L


def random_hermitian(rng, d):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return (a + a.conj().T) / 2


def random_psd(rng, d):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return a @ a.conj().T


dims = st.integers(min_value=1, max_value=8)
seeds = st.integers(min_value=0, max_value=10_000)


class TestEigh:
    def test_identity(self):
        w, v = L.eigh(np.eye(2))
        assert np.allclose(w, [1, 1])

    def test_diagonal(self):
        w, v = L.eigh(np.diag([0.0, 2.0]))
        assert np.allclose(w, [0, 2])
        assert np.allclose(np.abs(v), np.eye(2))

    def test_sic_half_sum_matches_characteristic_roots(self, sic1):
        # eigenvalues must solve det(B - x I) = 0; compare against the
        # quadratic-formula roots of the 2x2 characteristic polynomial
        b = sic1.elements[0] + sic1.elements[1]
        tr = np.trace(b).real
        det = np.linalg.det(b).real
        disc = np.sqrt(tr**2 - 4 * det)
        roots = sorted([(tr - disc) / 2, (tr + disc) / 2])
        w, _ = L.eigh(b)
        assert np.allclose(w, roots, atol=1e-12)

    def test_rejects_non_hermitian(self):
        with pytest.raises(L.NotHermitian):
            L.eigh(np.array([[0, 1], [0, 0]], dtype=complex))

    @given(dims, seeds)
    @settings(max_examples=25, deadline=None)
    def test_reconstruction(self, d, seed):
        a = random_hermitian(np.random.default_rng(seed), d)
        w, v = L.eigh(a)
        rec = (v * w) @ v.conj().T
        assert np.linalg.norm(rec - a) <= 1e-10 * max(1.0, np.linalg.norm(a))
        assert np.all(np.diff(w) >= -1e-12)
        assert np.allclose(v.conj().T @ v, np.eye(d), atol=1e-10)


class TestHermitianSqrt:
    def test_identity(self):
        assert np.allclose(L.hermitian_sqrt(np.eye(3)), np.eye(3))

    def test_diagonal(self):
        assert np.allclose(L.hermitian_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))

    def test_sic_half_sum_multiplies_back(self, sic1):
        b = sic1.elements[0] + sic1.elements[1]
        s = L.hermitian_sqrt(b)
        assert np.linalg.norm(s @ s - b) < 1e-9

    def test_rejects_negative(self):
        with pytest.raises(L.NotPSD):
            L.hermitian_sqrt(np.diag([1.0, -1e-6]))

    @given(dims, seeds)
    @settings(max_examples=25, deadline=None)
    def test_square_property(self, d, seed):
        a = random_psd(np.random.default_rng(seed), d)
        s = L.hermitian_sqrt(a)
        assert np.linalg.norm(s @ s - a) < 1e-9 * max(1.0, np.linalg.norm(a))


class TestPinv:
    def test_diagonal(self):
        assert np.allclose(L.pinv(np.diag([2.0, 0.0])), np.diag([0.5, 0.0]))

    def test_unitary(self):
        u = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
        assert np.allclose(L.pinv(u), u.conj().T)

    def test_zero(self):
        assert np.allclose(L.pinv(np.zeros((3, 3))), np.zeros((3, 3)))

    def test_rank_deficient_branch_aggregate(self, sic2):
        # leaf-level aggregate of two SIC elements has rank 2 in d=4
        k = L.hermitian_sqrt(sic2.elements[0] + sic2.elements[1])
        self._check_penrose(k, L.pinv(k))

    @staticmethod
    def _check_penrose(a, ap):
        assert np.linalg.norm(a @ ap @ a - a) < 1e-8
        assert np.linalg.norm(ap @ a @ ap - ap) < 1e-8
        assert np.linalg.norm((a @ ap) - (a @ ap).conj().T) < 1e-8
        assert np.linalg.norm((ap @ a) - (ap @ a).conj().T) < 1e-8

    @given(st.integers(2, 6), st.integers(2, 6), seeds)
    @settings(max_examples=25, deadline=None)
    def test_penrose_conditions(self, r, c, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(r, c)) + 1j * rng.normal(size=(r, c))
        self._check_penrose(a, L.pinv(a))


class TestCompleteToUnitary:
    def test_first_basis_row(self):
        u = L.complete_to_unitary(np.array([[1.0, 0.0]], dtype=complex))
        assert np.allclose(u[0], [1, 0])
        assert np.allclose(u.conj().T @ u, np.eye(2), atol=1e-10)
        again = L.complete_to_unitary(np.array([[1.0, 0.0]], dtype=complex))
        assert np.array_equal(u, again)  # deterministic completion

    def test_full_unitary_passthrough(self):
        u0 = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
        assert np.array_equal(L.complete_to_unitary(u0), u0)

    def test_sic_vectors_extend_to_unitary(self, sic1):
        psi = np.column_stack(sic1.rank_one_vectors())  # 2 x 4, orthonormal rows
        u = L.complete_to_unitary(psi)
        assert np.allclose(u.conj().T @ u, np.eye(4), atol=1e-10)
        assert np.array_equal(u[:2], psi)

    def test_rejects_non_orthonormal(self):
        with pytest.raises(L.RowsNotOrthonormal):
            L.complete_to_unitary(np.array([[1.0, 1.0]], dtype=complex))

    @given(st.integers(1, 6), st.integers(1, 6), seeds)
    @settings(max_examples=25, deadline=None)
    def test_unitarity_and_row_preservation(self, r, m, seed):
        r = min(r, m)
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(m, m)) + 1j * rng.normal(size=(m, m))
        q = np.linalg.qr(a)[0][:r]
        u = L.complete_to_unitary(q)
        assert np.max(np.abs(u @ u.conj().T - np.eye(m))) < 1e-10
        assert np.max(np.abs(u.conj().T @ u - np.eye(m))) < 1e-10
        assert np.array_equal(u[:r], q)


class TestProjectToPsd:
    def test_valid_state_unchanged(self, rng):
        a = random_psd(rng, 3)
        a = a / np.trace(a)
        assert np.allclose(L.project_to_psd(a), a, atol=1e-12)

    def test_clip_and_redistribute_2d(self):
        out = L.project_to_psd(np.diag([1.1, -0.1]))
        assert np.allclose(out, np.diag([1.0, 0.0]), atol=1e-12)

    def test_clip_and_redistribute_3d(self):
        out = L.project_to_psd(np.diag([0.6, 0.6, -0.2]))
        assert abs(np.trace(out).real - 1.0) < 1e-10
        assert np.linalg.eigvalsh(out)[0] >= -1e-12
        assert np.allclose(sorted(np.linalg.eigvalsh(out)), [0.0, 0.5, 0.5], atol=1e-12)

    @given(dims, seeds)
    @settings(max_examples=25, deadline=None)
    def test_trace_preserved_psd(self, d, seed):
        a = random_hermitian(np.random.default_rng(seed), d)
        a = a + np.eye(d) * 0.2  # keep the trace positive
        out = L.project_to_psd(a)
        assert abs(np.trace(out).real - np.trace(a).real) < 1e-10
        assert np.linalg.eigvalsh(out)[0] >= -1e-12


class TestStateFidelity:
    def test_self_fidelity(self, rng):
        rho = random_psd(rng, 4)
        rho = rho / np.trace(rho)
        assert abs(L.state_fidelity(rho, rho) - 1.0) < 1e-9

    def test_orthogonal_pure_states(self):
        z0 = np.diag([1.0, 0.0]).astype(complex)
        z1 = np.diag([0.0, 1.0]).astype(complex)
        assert L.state_fidelity(z0, z1) < 1e-12

    def test_pure_vs_maximally_mixed(self):
        z0 = np.diag([1.0, 0.0]).astype(complex)
        assert abs(L.state_fidelity(z0, np.eye(2) / 2) - 0.5) < 1e-12

    def test_symmetry(self, rng):
        a = random_psd(rng, 4)
        b = random_psd(rng, 4)
        a, b = a / np.trace(a), b / np.trace(b)
        assert abs(L.state_fidelity(a, b) - L.state_fidelity(b, a)) < 1e-9

    def test_rejects_invalid(self):
        with pytest.raises(L.InvalidState):
            L.state_fidelity(np.diag([2.0, 0.0]), np.eye(2) / 2)
