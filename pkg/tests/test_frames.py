import numpy as np
import pytest

from crossres.effective import conditional_target_frequencies, static_zz
from crossres.frames import (
    LabelingError,
    apply_rwa,
    diagonalize_bare,
    grade_operator,
    rotate_operator,
)
from crossres.model import (
    MHZ,
    BasisLayout,
    DriveSpec,
    build_bare_hamiltonian,
    build_drive_operators,
    load_preset,
)


def _exp(name="exp2_al", d=3):
    spec = load_preset(name, levels=d).spec
    lay = BasisLayout.for_spec(spec)
    return spec, lay, build_bare_hamiltonian(spec, lay)


class TestDiagonalize:
    def test_diagonal_input(self):
        lay = BasisLayout((2, 2, 2))
        H = np.diag(np.arange(8.0)[::-1])
        b = diagonalize_bare(H, lay)
        np.testing.assert_allclose(b.U, np.eye(8))
        np.testing.assert_allclose(b.energies, np.diag(H))

    def test_two_by_two_split(self):
        lay = BasisLayout((2, 2, 2))
        delta, j = 1.0, 0.05
        H = np.diag(np.arange(8.0) * 10)
        i, k = lay.index((0, 1, 0)), lay.index((1, 0, 0))
        H[i, i] = 30.0
        H[k, k] = 30.0 + delta
        H[i, k] = H[k, i] = j
        b = diagonalize_bare(H, lay)
        gap = b.energy((1, 0, 0)) - b.energy((0, 1, 0))
        assert gap == pytest.approx(np.sqrt(delta**2 + 4 * j**2), rel=1e-12)
        assert abs(b.U[k, k]) ** 2 > 0.5

    def test_unitary_and_spectrum(self):
        _, lay, H = _exp()
        b = diagonalize_bare(H, lay)
        n = lay.dim
        assert np.linalg.norm(b.U.conj().T @ b.U - np.eye(n)) < 1e-12
        D = rotate_operator(b.U, H)
        w = np.linalg.eigvalsh(H)
        np.testing.assert_allclose(np.sort(np.diag(D).real), w, rtol=1e-11)
        assert np.allclose(D, np.diag(np.diag(D)), atol=1e-11 * np.abs(w).max())

    def test_bijective_labels_and_deterministic(self):
        _, lay, H = _exp()
        b1 = diagonalize_bare(H, lay)
        b2 = diagonalize_bare(H.copy(), lay)
        np.testing.assert_array_equal(b1.U, b2.U)
        assert np.all(b1.overlaps > 0.5)

    def test_avoided_crossing_gap(self):
        spec, lay, _ = _exp("exp1_cu", d=3)
        w_a = spec.mode("A").frequency
        gaps = []
        for df in np.linspace(-0.5, 0.5, 41) * MHZ:
            s = spec.with_mode("T", frequency=w_a + df)
            w = np.linalg.eigvalsh(build_bare_hamiltonian(s, lay))
            # single-excitation T/A pair sits around w_a; B is far above
            one = np.sort(w)[1:3]
            gaps.append(one[1] - one[0])
        assert min(gaps) == pytest.approx(2 * spec.j_xx, rel=1e-3)

    def test_resonant_collision_names_label(self):
        lay = BasisLayout((2, 2, 2))
        H = np.diag(np.arange(8.0) * 10)
        i, k = lay.index((0, 1, 0)), lay.index((1, 0, 0))
        H[i, i] = H[k, k] = 30.0
        H[i, k] = H[k, i] = 1.0
        with pytest.raises(LabelingError, match=r"\(0, 1, 0\)|\(1, 0, 0\)|overlap"):
            diagonalize_bare(H, lay)


class TestRotate:
    def test_identity(self):
        O = np.arange(9.0).reshape(3, 3)
        np.testing.assert_array_equal(rotate_operator(np.eye(3), O), O)

    def test_invariants(self):
        rng = np.random.default_rng(0)
        A = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
        O = A + A.conj().T
        U, _ = np.linalg.qr(rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6)))
        R = rotate_operator(U, O)
        assert np.trace(R) == pytest.approx(np.trace(O))
        assert np.linalg.norm(R) == pytest.approx(np.linalg.norm(O))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            rotate_operator(np.eye(2), np.eye(3))


class TestRwa:
    def _two_level(self, detuning=0.0, omega=1.0, phase=0.0):
        lay = BasisLayout((2, 2, 2))
        w = 5.0
        energies = 100.0 * np.arange(8)
        energies[lay.index((1, 0, 0))] = w
        H = np.diag(energies)
        b = diagonalize_bare(H, lay)
        sx = np.array([[0, 1], [1, 0]])
        XT = np.kron(np.kron(sx, np.eye(2)), np.eye(2))
        rwa = apply_rwa(b, XT, 0 * XT, DriveSpec(omega, phase=phase), omega_d=w - detuning)
        i0, i1 = lay.index((0, 0, 0)), lay.index((1, 0, 0))
        return rwa.H[np.ix_([i0, i1], [i0, i1])]

    def test_resonant(self):
        np.testing.assert_allclose(self._two_level(), 0.5 * np.array([[0, 1], [1, 0]]), atol=1e-14)

    def test_detuned(self):
        D = 0.3
        h = self._two_level(detuning=D)
        np.testing.assert_allclose(h, np.array([[0, 0.5], [0.5, D]]), atol=1e-14)

    def test_grading_partition(self):
        _, lay, H = _exp()
        b = diagonalize_bare(H, lay)
        XT, _ = build_drive_operators(load_preset("exp2_al", levels=3).spec, lay)
        D = rotate_operator(b.U, XT)
        p, m, r = grade_operator(D, b.excitations)
        np.testing.assert_array_equal(p + m + r, D)

    def test_zero_drive_limit_and_hermitian(self):
        spec, lay, H = _exp()
        b = diagonalize_bare(H, lay)
        XT, XA = build_drive_operators(spec, lay)
        wd = 4.5e9 * 2 * np.pi
        rwa0 = apply_rwa(b, rotate_operator(b.U, XT), rotate_operator(b.U, XA), DriveSpec(0.0), omega_d=wd)
        np.testing.assert_array_equal(rwa0.H, np.diag(b.energies - wd * b.excitations))
        rwa = apply_rwa(b, rotate_operator(b.U, XT), rotate_operator(b.U, XA),
                        DriveSpec(20 * MHZ, phase=0.4, crosstalk=0.1, crosstalk_phase=1.0), omega_d=wd)
        assert np.max(np.abs(rwa.H - rwa.H.conj().T)) < 1e-12 * np.abs(rwa.H).max()
        assert rwa.dropped_norm > 0

    def test_drive_off_reproduces_static_zz(self):
        spec = load_preset("exp2_al", levels=4).spec
        w0, w1 = conditional_target_frequencies(spec)
        assert w1 - w0 == pytest.approx(static_zz(spec).numeric, rel=1e-12)
