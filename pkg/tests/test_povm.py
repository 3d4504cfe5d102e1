import json

import numpy as np
import pytest

from povmkit import povm as P
from tests.conftest import random_density_matrix


class TestSicPovm:
    def test_one_qubit_overlaps(self, sic1):
        states = P.sic_states(1)
        for i in range(4):
            for j in range(i + 1, 4):
                overlap = abs(states[i].conj() @ states[j]) ** 2
                assert abs(overlap - 1 / 3) < 1e-8

    def test_two_qubit_overlaps(self, sic2):
        states = P.sic_states(2)
        assert len(states) == 16
        for i in range(16):
            for j in range(i + 1, 16):
                overlap = abs(states[i].conj() @ states[j]) ** 2
                assert abs(overlap - 1 / 5) < 1e-8

    def test_completeness(self, sic1, sic2):
        assert sic1.completeness_residual() < 1e-9
        assert sic2.completeness_residual() < 1e-9

    def test_canonical_orientation(self, sic1):
        # first tetrahedron state is |0>
        assert np.allclose(P.sic_states(1)[0], [1, 0])

    def test_fiducial_search_converges(self):
        f = P.find_sic_fiducial(4, n_starts=40, seed=7)
        err = P.sic_overlap_error(P.weyl_heisenberg_orbit(f))
        assert err < 1e-10

    def test_fiducial_search_failure(self):
        with pytest.raises(P.FiducialSearchFailed):
            P.find_sic_fiducial(4, n_starts=1, seed=0, tol=1e-40)

    def test_unsupported_dimension(self):
        with pytest.raises(ValueError):
            P.sic_povm(3)


class TestValidate:
    def test_sic_report(self, sic1):
        report = P.validate(sic1)
        assert report.completeness_residual < 1e-10
        assert report.ranks == [1, 1, 1, 1]
        assert report.linearly_independent

    def test_half_identity_pair(self):
        povm = P.Povm(2, [np.eye(2) / 2, np.eye(2) / 2])
        report = P.validate(povm)
        assert report.complete
        assert report.ranks == [2, 2]
        assert not report.linearly_independent

    def test_single_identity(self):
        report = P.validate(P.Povm(2, [np.eye(2)]))
        assert report.complete
        assert report.ranks == [2]


class TestPadding:
    def test_pad_three_to_four(self):
        elements = [np.eye(2) / 3] * 3
        padded = P.pad_to_power_of_two(P.Povm(2, elements))
        assert padded.n_outcomes == 4
        assert np.allclose(padded.elements[3], 0)
        assert np.allclose(padded.elements[0], elements[0])

    def test_power_of_two_unchanged(self, sic1):
        padded = P.pad_to_power_of_two(sic1)
        assert padded.n_outcomes == 4

    def test_pad_five_of_dim_four(self):
        elements = [np.eye(4) / 5] * 5
        padded = P.pad_to_power_of_two(P.Povm(4, elements))
        assert padded.n_outcomes == 8
        assert all(np.allclose(padded.elements[k], 0) for k in (5, 6, 7))


class TestOutcomeProbabilities:
    def test_maximally_mixed_uniform(self, sic1):
        probs = P.outcome_probabilities(sic1, np.eye(2) / 2)
        assert np.allclose(list(probs.values()), 0.25)

    def test_aligned_state(self, sic1):
        # the tetrahedron is oriented with phi_1 = |0>, so P(0) = 1/2
        z0 = np.diag([1.0, 0.0]).astype(complex)
        probs = P.outcome_probabilities(sic1, z0)
        assert abs(probs[0] - 0.5) < 1e-12
        assert abs(sum(probs.values()) - 1.0) < 1e-12

    def test_sums_to_one(self, sic2, rng):
        for _ in range(10):
            rho = random_density_matrix(rng, 4)
            probs = P.outcome_probabilities(sic2, rho)
            assert abs(sum(probs.values()) - 1.0) < 1e-9

    def test_dimension_mismatch(self, sic1):
        with pytest.raises(P.DimensionMismatch):
            P.outcome_probabilities(sic1, np.eye(4) / 4)


class TestChoi:
    def test_computational_basis_projectors(self):
        povm = P.Povm(2, [np.diag([1.0, 0.0]), np.diag([0.0, 1.0])])
        choi = P.povm_choi(povm)
        expected = np.zeros((4, 4), dtype=complex)
        for i in range(2):
            expected[2 * i + i, 2 * i + i] = 0.5
        assert np.allclose(choi, expected)

    def test_trace_one(self, sic1):
        assert abs(np.trace(P.povm_choi(sic1)).real - 1.0) < 1e-12

    def test_channel_output_diagonal(self, sic1, rng):
        # off-diagonal input blocks only populate diagonal outcome entries
        choi = P.povm_choi(sic1)
        m = sic1.n_outcomes
        blocks = choi.reshape(2, m, 2, m)
        for i in range(2):
            for j in range(2):
                block = blocks[i, :, j, :]
                assert np.allclose(block, np.diag(np.diag(block)))

    def test_incomplete_rejected(self):
        with pytest.raises(P.IncompletePovm):
            P.povm_choi(P.Povm(2, [np.eye(2) / 2]))


class TestPovmFidelity:
    def test_self_fidelity(self, sic2):
        assert abs(P.povm_fidelity(sic2, sic2) - 1.0) < 1e-9

    def test_random_outcome_baselines(self, sic1, sic2):
        u1 = P.uniform_random_outcome_povm(2, 4)
        u2 = P.uniform_random_outcome_povm(4, 16)
        assert abs(P.povm_fidelity(sic1, u1) - 0.5) < 1e-6
        assert abs(P.povm_fidelity(sic2, u2) - 0.25) < 1e-6

    def test_symmetry(self, sic1):
        u1 = P.uniform_random_outcome_povm(2, 4)
        assert abs(P.povm_fidelity(sic1, u1) - P.povm_fidelity(u1, sic1)) < 1e-9

    def test_dimension_mismatch(self, sic1, sic2):
        with pytest.raises(P.DimensionMismatch):
            P.povm_fidelity(sic1, sic2)


class TestJsonFormat:
    def test_round_trip(self, sic2, tmp_path):
        path = tmp_path / "sic2.json"
        P.save_povm(sic2, path)
        loaded = P.load_povm(path)
        assert loaded.d == 4
        for a, b in zip(loaded.elements, sic2.elements):
            assert np.max(np.abs(a - b)) < 1e-15

    def test_reader_validates_completeness(self, tmp_path):
        doc = {"d": 2, "elements": [P.matrix_to_json(np.eye(2) / 3)]}
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(P.IncompletePovm):
            P.load_povm(path)

    def test_reader_validates_psd(self, tmp_path):
        doc = {"d": 2, "elements": [P.matrix_to_json(np.diag([1.5, 0.5])),
                                    P.matrix_to_json(np.diag([-0.5, 0.5]))]}
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(Exception):
            P.load_povm(path)


class TestRankOneVectors:
    def test_recovers_outer_products(self, sic2):
        stripped = P.Povm(sic2.d, sic2.elements)  # drop stored vectors
        vecs = stripped.rank_one_vectors()
        for v, e in zip(vecs, sic2.elements):
            assert np.linalg.norm(np.outer(v, v.conj()) - e) < 1e-10

    def test_rejects_higher_rank(self):
        povm = P.Povm(2, [np.eye(2) / 2, np.eye(2) / 2])
        with pytest.raises(P.NotRankOne):
            povm.rank_one_vectors()

    def test_zero_element(self):
        povm = P.Povm(2, [np.diag([1.0, 0.0]), np.diag([0.0, 1.0]),
                          np.zeros((2, 2))])
        vecs = povm.rank_one_vectors()
        assert np.allclose(vecs[2], 0)
