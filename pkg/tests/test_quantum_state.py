import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netfusion import quantum_state as qs
from netfusion.quantum_state import AnalyzerSetting, BellKind, DensityMatrix, Port

S = 1 / np.sqrt(2)


def brute_force_bell_probabilities(rho16: np.ndarray) -> dict:
    """Bell-pair populations by an explicit 16x16 change of basis.

    Qubit order of ``rho16`` is (CH31_A, idler_A, CH31_B, idler_B); column
    (ka, kb) of the basis matrix has amplitude b_ka[cA cB] * b_kb[iA iB] on the
    computational state |cA iA cB iB>, written out bit by bit.
    """
    bell = {
        BellKind.PHI_PLUS: {(0, 0): S, (1, 1): S},
        BellKind.PHI_MINUS: {(0, 0): S, (1, 1): -S},
        BellKind.PSI_PLUS: {(0, 1): S, (1, 0): S},
        BellKind.PSI_MINUS: {(0, 1): S, (1, 0): -S},
    }
    keys = list(itertools.product(BellKind, BellKind))
    U = np.zeros((16, 16), dtype=complex)
    for col, (ka, kb) in enumerate(keys):
        for ca, ia, cb, ib in itertools.product((0, 1), repeat=4):
            row = ca * 8 + ia * 4 + cb * 2 + ib
            U[row, col] = bell[ka].get((ca, cb), 0) * bell[kb].get((ia, ib), 0)
    assert np.allclose(U.conj().T @ U, np.eye(16))
    diag = np.real(np.diag(U.conj().T @ rho16 @ U))
    return dict(zip(keys, diag))


def random_density(rng, qubits=2, rank=None):
    dim = 2**qubits
    rank = rank or dim
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    m = g @ g.conj().T
    return DensityMatrix(m / np.trace(m).real)


class TestBellStates:
    def test_phi_plus_amplitudes(self):
        assert np.allclose(qs.bell_vector(BellKind.PHI_PLUS), [S, 0, 0, S])

    def test_psi_minus_amplitudes(self):
        assert np.allclose(qs.bell_vector(BellKind.PSI_MINUS), [0, S, -S, 0])

    def test_mutually_orthogonal(self):
        for a, b in itertools.product(BellKind, BellKind):
            f = qs.fidelity(qs.bell_state(a), qs.bell_state(b))
            assert f == pytest.approx(1.0 if a is b else 0.0, abs=1e-12)

    def test_pure(self):
        for k in BellKind:
            assert qs.bell_state(k).purity() == pytest.approx(1, abs=1e-12)


class TestDensityMatrixValidation:
    def test_rejects_non_hermitian(self):
        with pytest.raises(qs.StateError):
            DensityMatrix(np.array([[0.5, 0.1], [0.0, 0.5]]))

    def test_rejects_bad_trace(self):
        with pytest.raises(qs.StateError):
            DensityMatrix(np.eye(2))

    def test_rejects_negative(self):
        with pytest.raises(qs.StateError):
            DensityMatrix(np.diag([1.5, -0.5]))

    def test_rejects_bad_dimension(self):
        with pytest.raises(qs.StateError):
            DensityMatrix(np.eye(3) / 3)
        with pytest.raises(qs.StateError):
            DensityMatrix(np.eye(32) / 32)

    def test_immutable(self):
        rho = qs.bell_state(BellKind.PHI_PLUS)
        with pytest.raises(ValueError):
            rho.matrix[0, 0] = 1


class TestTensor:
    def test_bell_pair_is_rank_one(self):
        t = qs.tensor(qs.bell_state(BellKind.PHI_PLUS), qs.bell_state(BellKind.PHI_PLUS))
        assert np.trace(t.matrix).real == pytest.approx(1, abs=1e-12)
        assert np.linalg.matrix_rank(t.matrix, tol=1e-10) == 1

    def test_mixed_qubits(self):
        t = qs.tensor(qs.maximally_mixed(1), qs.maximally_mixed(1))
        assert t.allclose(np.eye(4) / 4)

    def test_ordering_first_operand_leads(self):
        t = qs.tensor(qs.product("H"), qs.product("V"))
        assert t.allclose(qs.product("HV"))

    def test_overflow(self):
        with pytest.raises(qs.StateError):
            qs.tensor(qs.maximally_mixed(3), qs.maximally_mixed(2))


class TestBellDecompose:
    def test_phi_phi_matches_brute_force(self):
        joint = qs.tensor(qs.bell_state(BellKind.PHI_PLUS), qs.bell_state(BellKind.PHI_PLUS))
        got = qs.bell_decompose(joint)
        oracle = brute_force_bell_probabilities(joint.matrix)
        for key, p in got.items():
            assert p == pytest.approx(oracle[key], abs=1e-12)
            assert p == pytest.approx(0.25 if key[0] is key[1] else 0.0, abs=1e-12)

    def test_psi_minus_pair_matched_quarters(self):
        m = qs.bell_state(BellKind.PSI_MINUS)
        joint = qs.tensor(m, m)
        got = qs.bell_decompose(joint)
        oracle = brute_force_bell_probabilities(joint.matrix)
        for key, p in got.items():
            assert p == pytest.approx(oracle[key], abs=1e-12)
            assert p == pytest.approx(0.25 if key[0] is key[1] else 0.0, abs=1e-12)

    def test_overlapping_pairs_rejected(self):
        joint = qs.tensor(qs.bell_state(BellKind.PHI_PLUS), qs.bell_state(BellKind.PHI_PLUS))
        with pytest.raises(ValueError):
            qs.bell_decompose(joint, (0, 1), (1, 2))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_random_states_sum_to_one_and_match_oracle(self, seed):
        rho = random_density(np.random.default_rng(seed), qubits=4)
        got = qs.bell_decompose(rho)
        assert sum(got.values()) == pytest.approx(1, abs=1e-12)
        oracle = brute_force_bell_probabilities(rho.matrix)
        assert all(got[k] == pytest.approx(oracle[k], abs=1e-12) for k in got)

    @pytest.mark.parametrize("ka,kb", list(itertools.product(BellKind, BellKind)))
    def test_any_two_bell_inputs_give_matched_pattern(self, ka, kb):
        joint = qs.tensor(qs.bell_state(ka), qs.bell_state(kb))
        got = qs.bell_decompose(joint)
        oracle = brute_force_bell_probabilities(joint.matrix)
        assert all(got[k] == pytest.approx(oracle[k], abs=1e-12) for k in got)
        assert sorted(got.values())[-4:] == pytest.approx([0.25] * 4, abs=1e-12)


class TestProjectAndTrace:
    def setup_method(self):
        phi = qs.bell_state(BellKind.PHI_PLUS)
        self.joint = qs.tensor(phi, phi)

    def test_psi_minus_branch(self):
        p, out = qs.project_and_trace(self.joint, BellKind.PSI_MINUS)
        assert p == pytest.approx(0.25, abs=1e-12)
        assert out.allclose(qs.bell_state(BellKind.PSI_MINUS))

    def test_phi_plus_branch(self):
        p, out = qs.project_and_trace(self.joint, BellKind.PHI_PLUS)
        assert p == pytest.approx(0.25, abs=1e-12)
        assert out.allclose(qs.bell_state(BellKind.PHI_PLUS))

    def test_impossible_outcome(self):
        hh = qs.product("HH")
        with pytest.raises(qs.ImpossibleOutcomeError):
            qs.project_and_trace(qs.tensor(hh, hh), BellKind.PSI_MINUS)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_branches_sum_to_one_and_agree_with_marginals(self, seed):
        rho = random_density(np.random.default_rng(seed), qubits=4, rank=2)
        decomposition = qs.bell_decompose(rho)
        total = 0.0
        for k in BellKind:
            p, out = qs.project_and_trace(rho, k)
            total += p
            assert p == pytest.approx(sum(v for (a, _), v in decomposition.items() if a is k), abs=1e-12)
            assert np.trace(out.matrix).real == pytest.approx(1, abs=1e-12)
        assert total == pytest.approx(1, abs=1e-12)


class TestPartialTrace:
    def test_bell_marginal_is_mixed(self):
        r = qs.partial_trace(qs.bell_state(BellKind.PSI_MINUS), [0])
        assert r.allclose(np.eye(2) / 2)

    def test_product_marginals(self):
        rho = qs.product("HDV")
        assert qs.partial_trace(rho, [1]).allclose(qs.product("D"))
        assert qs.partial_trace(rho, [0, 2]).allclose(qs.product("HV"))


class TestAnalyzer:
    def test_identity_setting_is_h(self):
        p = qs.analyzer_projector(AnalyzerSetting(0, 0, Port.TRANSMIT_H))
        assert np.allclose(p, [[1, 0], [0, 0]])

    def test_reflect_port_is_v(self):
        p = qs.analyzer_projector(AnalyzerSetting(0, 0, Port.REFLECT_V))
        assert np.allclose(p, [[0, 0], [0, 1]])

    def test_hwp_22_5_gives_diagonal(self):
        # Jones matrix of a HWP with fast axis at theta, written out directly
        th = np.pi / 8
        jones = np.array([[np.cos(2 * th), np.sin(2 * th)], [np.sin(2 * th), -np.cos(2 * th)]])
        ket = jones.T @ np.array([1, 0])
        oracle = np.outer(ket, ket)
        p = qs.analyzer_projector(AnalyzerSetting(th, 0, Port.TRANSMIT_H))
        assert np.allclose(p, oracle, atol=1e-12)
        assert np.allclose(p, np.full((2, 2), 0.5), atol=1e-12)

    def test_phi_plus_under_dd(self):
        pd = qs.analyzer_projector(AnalyzerSetting(np.pi / 8, 0))
        phi = qs.bell_vector(BellKind.PHI_PLUS).reshape(2, 2)
        # <phi| P_D x P_D |phi> contracted index by index
        value = np.einsum("ab,ac,bd,cd->", phi.conj(), pd, pd, phi).real
        assert value == pytest.approx(0.5, abs=1e-12)
        assert qs.bell_state(BellKind.PHI_PLUS).expectation(np.kron(pd, pd)) == pytest.approx(0.5, abs=1e-12)

    def test_quarter_wave_gives_circular(self):
        # HWP at 0 then QWP at 45 deg analyses circular polarization
        p = qs.analyzer_projector(AnalyzerSetting(0, np.pi / 4))
        r = np.array([1, 1j]) / np.sqrt(2)
        l_ = np.array([1, -1j]) / np.sqrt(2)
        assert abs(np.vdot(r, p @ r)) + abs(np.vdot(l_, p @ l_)) == pytest.approx(1, abs=1e-12)
        assert min(abs(np.vdot(r, p @ r)), abs(np.vdot(l_, p @ l_))) == pytest.approx(0, abs=1e-12)

    def test_angles_stored_mod_pi(self):
        s = AnalyzerSetting(np.pi + 0.1, -0.2)
        assert s.hwp_angle == pytest.approx(0.1)
        assert s.qwp_angle == pytest.approx(np.pi - 0.2)

    @given(
        st.floats(-10, 10, allow_nan=False),
        st.floats(-10, 10, allow_nan=False),
        st.sampled_from(list(Port)),
    )
    def test_projector_properties(self, h, q, port):
        p = qs.analyzer_projector(AnalyzerSetting(h, q, port))
        assert np.allclose(p @ p, p, atol=1e-12)
        assert np.allclose(p, p.conj().T, atol=1e-12)
        assert np.trace(p).real == pytest.approx(1, abs=1e-12)

    @given(st.floats(-4, 4, allow_nan=False))
    def test_hwp_doubles_angle(self, theta):
        p = qs.analyzer_projector(AnalyzerSetting(theta, 0))
        r = qs.rotation(2 * theta)
        h = np.array([[1, 0], [0, 0]])
        assert np.allclose(p, r @ h @ r.conj().T, atol=1e-12)


class TestWerner:
    @given(st.floats(-1 / 3, 1, allow_nan=False))
    def test_valid_state(self, v):
        rho = qs.werner_state(BellKind.PSI_MINUS, v)
        assert np.linalg.eigvalsh(rho.matrix).min() > -1e-10

    def test_fidelity_relation(self):
        for v in (0.0, 0.5, 0.812, 1.0):
            rho = qs.werner_state(BellKind.PHI_PLUS, v)
            assert qs.fidelity(rho, qs.bell_state(BellKind.PHI_PLUS)) == pytest.approx((3 * v + 1) / 4, abs=1e-12)


class TestFidelity:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_mixed_states_match_sqrtm(self, seed):
        from scipy.linalg import sqrtm

        rng = np.random.default_rng(seed)
        a, b = random_density(rng), random_density(rng)
        ra = sqrtm(a.matrix)
        oracle = np.real(np.trace(sqrtm(ra @ b.matrix @ ra))) ** 2
        assert qs.fidelity(a, b) == pytest.approx(oracle, abs=1e-9)
        assert qs.fidelity(a, b) == pytest.approx(qs.fidelity(b, a), abs=1e-9)

    def test_pure_against_rank_deficient(self):
        rho = qs.werner_state(BellKind.PSI_MINUS, 0.5)
        dephased = DensityMatrix(np.diag([0, 0.5, 0.5, 0]))
        assert qs.fidelity(dephased, qs.bell_state(BellKind.PSI_MINUS)) == pytest.approx(0.5, abs=1e-15)
        assert qs.fidelity(rho, rho) == pytest.approx(1.0, abs=1e-9)
