import numpy as np
import pytest
from scipy.stats import unitary_group

from crossres.numerics import SimplexOptions
from crossres.qpt import (
    PAULI_LABELS,
    ChiMatrix,
    ConfusionMatrix,
    ProcessTomography,
    apply_chi,
    beta_tensor,
    chi_from_lambda,
    correct_readout,
    gate_fidelity_from_process,
    ideal_chi,
    input_states,
    lambda_matrix,
    measure_expectations,
    pauli_basis,
    pauli_expectations,
    process_fidelity,
    project_physical,
    run_qpt,
    state_tomography,
    trace_preservation_defect,
)

CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
ZX90 = np.cos(np.pi / 4) * np.eye(4) - 1j * np.sin(np.pi / 4) * np.kron(np.diag([1, -1]), [[0, 1], [1, 0]])


@pytest.fixture(scope="module")
def beta():
    return beta_tensor()


def _chi_of_kraus(K, beta):
    ins = input_states().states
    outs = np.array([sum(k @ r @ k.conj().T for k in K) for r in ins])
    return chi_from_lambda(lambda_matrix(outs), beta)


def _random_kraus(rng, n_ops=3):
    # Stinespring: slices of a random isometry
    V = unitary_group.rvs(4 * n_ops, random_state=rng)[:, :4]
    K = [V[4 * i : 4 * i + 4] for i in range(n_ops)]
    return K


def _random_state(rng):
    A = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    r = A @ A.conj().T
    return r / np.trace(r)


class TestStateTomography:
    def test_ground(self):
        r = np.zeros((4, 4))
        r[0, 0] = 1
        np.testing.assert_allclose(state_tomography(pauli_expectations(r)), r, atol=1e-15)

    def test_maximally_mixed(self):
        np.testing.assert_allclose(state_tomography(np.zeros(15)), np.eye(4) / 4)

    def test_depolarized_bell(self):
        p = 0.1
        psi = np.array([1, 0, 0, 1]) / np.sqrt(2)
        bell = np.outer(psi, psi)
        rho = (1 - p) * bell + p * np.eye(4) / 4
        rng = np.random.default_rng(0)
        e = pauli_expectations(rho) + rng.normal(scale=2e-4, size=15)
        est = state_tomography(np.clip(e, -1, 1))
        assert np.real(psi @ est @ psi) == pytest.approx(1 - 3 * p / 4, abs=1e-3)

    def test_projection_makes_psd(self):
        e = np.zeros(15)
        e[PAULI_LABELS.index("ZZ") - 1] = 1.0
        e[PAULI_LABELS.index("XX") - 1] = 1.0
        e[PAULI_LABELS.index("YY") - 1] = 1.0  # not a valid state
        r = state_tomography(e)
        assert np.linalg.eigvalsh(r)[0] > -1e-12
        assert np.trace(r).real == pytest.approx(1.0)

    def test_range_checked(self):
        with pytest.raises(ValueError):
            state_tomography(np.full(15, 1.5))


class TestBetaLambdaChi:
    def test_inputs_independent(self):
        ins = input_states()
        assert ins.states.shape == (16, 4, 4)
        assert np.isfinite(ins.condition_number) and ins.condition_number < 1e3

    def test_identity_pair_is_kronecker(self, beta):
        np.testing.assert_allclose(beta[:, :, 0, 0], np.eye(16), atol=1e-12)

    def test_identity_process(self, beta):
        ins = input_states().states
        chi = chi_from_lambda(lambda_matrix(ins), beta)
        expected = np.zeros((16, 16))
        expected[0, 0] = 1
        np.testing.assert_allclose(chi, expected, atol=1e-12)

    def test_cnot_rank_one(self, beta):
        chi = _chi_of_kraus([CNOT], beta)
        w = np.linalg.eigvalsh(chi)
        assert w[-1] == pytest.approx(1.0, abs=1e-10)
        assert np.all(np.abs(w[:-1]) < 1e-10)
        assert process_fidelity(chi, ideal_chi(CNOT)) == pytest.approx(1.0, abs=1e-9)

    def test_depolarizing(self, beta):
        p = 0.2
        ins = input_states().states
        outs = (1 - p) * ins + p * np.eye(4) / 4
        chi = chi_from_lambda(lambda_matrix(outs), beta)
        expected = np.diag([1 - 15 * p / 16] + [p / 16] * 15)
        np.testing.assert_allclose(chi, expected, atol=1e-12)
        assert np.trace(chi).real == pytest.approx(1.0)

    def test_random_unitary_round_trip(self, beta):
        U = unitary_group.rvs(4, random_state=1)
        chi = _chi_of_kraus([U], beta)
        ins = input_states().states
        np.testing.assert_allclose(apply_chi(chi, ins), U @ ins @ U.conj().T, atol=1e-10)

    def test_random_kraus_channel(self, beta):
        rng = np.random.default_rng(2)
        K = _random_kraus(rng)
        np.testing.assert_allclose(sum(k.conj().T @ k for k in K), np.eye(4), atol=1e-12)
        chi = _chi_of_kraus(K, beta)
        assert trace_preservation_defect(chi) < 1e-10
        for _ in range(50):
            r = _random_state(rng)
            np.testing.assert_allclose(apply_chi(chi, r), sum(k @ r @ k.conj().T for k in K), atol=1e-8)


class TestProjection:
    def test_physical_fixed_point(self):
        chi = ideal_chi(ZX90)
        res = project_physical(chi)
        assert np.linalg.norm(res.chi - chi) < 1e-6
        assert res.converged

    def test_negative_eigenvalue_removed(self):
        rng = np.random.default_rng(3)
        chi = _chi_of_kraus(_random_kraus(rng), beta_tensor())
        w, V = np.linalg.eigh(chi)
        w[0] = -0.05
        w[-1] += 0.05
        bad = (V * w) @ V.conj().T
        res = project_physical(bad, opts=SimplexOptions(max_iter=3000, xtol=1e-9, ftol=1e-13, initial_step=1e-3))
        assert np.linalg.eigvalsh(res.chi)[0] >= -1e-10
        assert np.trace(res.chi).real == pytest.approx(1.0, abs=1e-12)
        assert res.objective <= res.seed_objective
        assert res.iterations > 0

    def test_chi_container(self):
        c = ChiMatrix(ideal_chi(np.eye(4)))
        assert c.hermitian and c.trace == pytest.approx(1.0)
        assert c.min_eigenvalue == pytest.approx(0.0, abs=1e-12)
        d = c.to_dict()
        assert d["basis"][5] == "XX" and len(d["real"]) == 16


class TestFidelities:
    def test_self(self):
        chi = ideal_chi(ZX90)
        assert process_fidelity(chi, chi) == pytest.approx(1.0)

    def test_fully_depolarizing(self):
        assert process_fidelity(np.eye(16) / 16, ideal_chi(ZX90)) == pytest.approx(1 / 16)

    def test_gate_fidelity(self):
        assert gate_fidelity_from_process(1.0) == 1.0
        assert gate_fidelity_from_process(0.9282) == pytest.approx(0.94256, abs=1e-5)
        assert gate_fidelity_from_process(1 / 16) == pytest.approx(0.25)
        vals = [gate_fidelity_from_process(f) for f in np.linspace(0, 1, 11)]
        assert np.all(np.diff(vals) > 0)
        with pytest.raises(ValueError):
            gate_fidelity_from_process(1.2)

    def test_reordering_invariance(self):
        rng = np.random.default_rng(4)
        a = _chi_of_kraus(_random_kraus(rng), beta_tensor())
        b = ideal_chi(CNOT)
        p = rng.permutation(16)
        assert process_fidelity(a[np.ix_(p, p)], b[np.ix_(p, p)]) == pytest.approx(process_fidelity(a, b), abs=1e-14)


class TestIdealChi:
    def test_identity(self):
        assert ideal_chi(np.eye(4))[0, 0] == pytest.approx(1.0)

    def test_x_on_first_qubit(self):
        X = np.array([[0, 1], [1, 0]])
        chi = ideal_chi(np.kron(X, np.eye(2)))
        assert chi[4, 4] == pytest.approx(1.0)
        assert PAULI_LABELS[4] == "XI"

    def test_zx90(self):
        chi = ideal_chi(ZX90)
        zx = PAULI_LABELS.index("ZX")
        assert chi[0, 0] == pytest.approx(0.5)
        assert chi[zx, zx] == pytest.approx(0.5)
        assert chi[0, zx] == pytest.approx(0.5j)
        assert chi[zx, 0] == pytest.approx(-0.5j)
        mask = np.ones((16, 16), bool)
        mask[np.ix_([0, zx], [0, zx])] = False
        assert np.all(np.abs(chi[mask]) < 1e-15)

    def test_non_unitary_rejected(self):
        with pytest.raises(ValueError):
            ideal_chi(2 * np.eye(4))

    def test_pauli_basis_order(self):
        A = pauli_basis()
        assert A.shape == (16, 4, 4)
        np.testing.assert_allclose(np.einsum("mab,nab->mn", A.conj(), A), 4 * np.eye(16))


class TestReadout:
    def test_identity_confusion(self):
        p = np.array([0.1, 0.2, 0.3, 0.4])
        I = ConfusionMatrix(np.eye(2))
        np.testing.assert_allclose(correct_readout(p, [I, I]), p)

    def test_round_trip(self):
        c = ConfusionMatrix.symmetric(0.07)
        raw = np.kron(c.matrix, c.matrix) @ np.array([1.0, 0, 0, 0])
        np.testing.assert_allclose(correct_readout(raw, [c, c]), [1, 0, 0, 0], atol=1e-10)

    def test_uniform_stays_uniform(self):
        c = ConfusionMatrix.symmetric(0.07)
        np.testing.assert_allclose(correct_readout(np.full(4, 0.25), [c, c]), 0.25)

    def test_singular(self):
        c = ConfusionMatrix.symmetric(0.5)
        with pytest.raises(np.linalg.LinAlgError):
            correct_readout(np.full(4, 0.25), [c, c])

    def test_invalid_confusion(self):
        with pytest.raises(ValueError):
            ConfusionMatrix(np.array([[0.9, 0.2], [0.2, 0.9]]))

    def test_corrected_expectations_unbiased(self):
        rho = _random_state(np.random.default_rng(5))
        confs = [ConfusionMatrix.from_fidelity(0.930), ConfusionMatrix.from_fidelity(0.938)]
        np.testing.assert_allclose(measure_expectations(rho, confs), pauli_expectations(rho), atol=1e-12)


class TestPipeline:
    def test_identity_hook(self):
        res = run_qpt(lambda r: r, target=np.eye(4))
        assert res.F_pro == pytest.approx(1.0, abs=1e-6)
        assert res.F_gate == pytest.approx(1.0, abs=1e-6)

    def test_shot_noise_reproducible(self):
        a = run_qpt(lambda r: ZX90 @ r @ ZX90.conj().T, shots=2000, rng=7, project=False)
        b = run_qpt(lambda r: ZX90 @ r @ ZX90.conj().T, shots=2000, rng=7, project=False)
        np.testing.assert_array_equal(a.chi_exp, b.chi_exp)
        assert 0.9 < a.F_pro <= 1.0

    def test_estimator(self):
        ins = input_states().states
        outs = np.array([CNOT @ r @ CNOT.conj().T for r in ins])
        est = ProcessTomography(target=CNOT).fit(outs)
        assert est.score() == pytest.approx(1.0, abs=1e-8)
        r = _random_state(np.random.default_rng(6))
        np.testing.assert_allclose(est.transform(r), CNOT @ r @ CNOT.conj().T, atol=1e-8)
        exps = np.array([pauli_expectations(o) for o in outs])
        est2 = ProcessTomography(target=CNOT, from_expectations=True, project=False).fit(exps)
        assert est2.score() == pytest.approx(1.0, abs=1e-8)
