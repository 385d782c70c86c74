import warnings

import numpy as np
import pytest

from crossres.model import (
    GHZ,
    MHZ,
    US,
    BasisLayout,
    CircuitSpec,
    DispersiveWarning,
    DriveSpec,
    ModeSpec,
    build_bare_hamiltonian,
    build_drive_operators,
    build_number_operators,
    load_preset,
)


def _spec(j_zz=0.0, j_xx=0.0, lam=0.0, d=3):
    return CircuitSpec(
        (
            ModeSpec("T", 5.0 * GHZ, -200 * MHZ, d),
            ModeSpec("A", 4.6 * GHZ, -130 * MHZ, d),
            ModeSpec("B", 5.8 * GHZ, -140 * MHZ, d),
        ),
        j_zz=j_zz,
        j_xx=j_xx,
        lam=lam,
    )


class TestSpecs:
    def test_mode_validation(self):
        with pytest.raises(ValueError):
            ModeSpec("T", 5 * GHZ, -200 * MHZ, 1)
        with pytest.raises(ValueError):
            ModeSpec("Q", 5 * GHZ, -200 * MHZ)
        with pytest.raises(ValueError):
            ModeSpec("T", 1 * MHZ, -2 * MHZ)
        with pytest.raises(ValueError):
            ModeSpec("T", np.nan, 0.0)

    def test_duffing_convention(self):
        m = ModeSpec("T", 5 * GHZ, -200 * MHZ)
        assert m.delta == pytest.approx(100 * MHZ)
        assert m.beta == pytest.approx(-100 * MHZ)

    def test_lambda_limits(self):
        with pytest.raises(ValueError):
            _spec(lam=0.6)
        with pytest.warns(DispersiveWarning):
            _spec(lam=0.2)

    def test_dispersive_check_only_warns(self):
        with pytest.warns(DispersiveWarning):
            s = _spec(j_xx=200 * MHZ)
        assert s.j_xx == 200 * MHZ

    def test_drive_normalizes_irrelevant_crosstalk_phase(self):
        d = DriveSpec(1.0, crosstalk=0.0, crosstalk_phase=1.3)
        assert d.crosstalk_phase == 0.0
        with pytest.raises(ValueError):
            DriveSpec(1.0, crosstalk=-0.1)


class TestLayout:
    def test_dimension(self):
        assert BasisLayout((2, 3, 4)).dim == 24

    def test_excitation_ordering_starts_like_supplement_listing(self):
        lay = BasisLayout((2, 2, 2), "excitation")
        assert lay.labels()[:4] == [(0, 0, 0), (0, 0, 1), (0, 1, 0), (1, 0, 0)]

    def test_permutation_round_trip(self):
        lay = BasisLayout((3, 3, 3), "excitation")
        M = np.arange(27 * 27, dtype=float).reshape(27, 27)
        np.testing.assert_array_equal(lay.to_tensor(lay.from_tensor(M)), M)
        v = np.arange(27.0)
        np.testing.assert_array_equal(lay.to_tensor(lay.from_tensor(v)), v)

    def test_index_consistent_with_labels(self):
        lay = BasisLayout((3, 2, 4), "excitation")
        for i, lab in enumerate(lay.labels()):
            assert lay.index(lab) == i


class TestBareHamiltonian:
    def test_single_mode_levels(self):
        s = _spec(d=3)
        H = build_bare_hamiltonian(s)
        # T excitations only: labels (n,0,0)
        lay = BasisLayout.for_spec(s)
        E = [H[lay.index((n, 0, 0)), lay.index((n, 0, 0))] for n in range(3)]
        np.testing.assert_allclose(np.array(E) / GHZ, [0.0, 5.0, 9.8], atol=1e-12)

    def test_longitudinal_splitting(self):
        s = _spec(j_zz=70.5 * MHZ, d=2)
        H = build_bare_hamiltonian(s)
        lay = BasisLayout.for_spec(s)
        E = lambda l: H[lay.index(l), lay.index(l)]
        split = (E((0, 1, 1)) - E((0, 0, 1))) - (E((0, 1, 0)) - E((0, 0, 0)))
        assert split == pytest.approx(141 * MHZ, rel=1e-12)

    def test_exactly_hermitian(self):
        H = build_bare_hamiltonian(load_preset("exp2_al").spec)
        assert np.array_equal(H, H.conj().T)

    def test_ordering_independent_spectrum(self):
        s = load_preset("exp1_cu", levels=3).spec
        w1 = np.linalg.eigvalsh(build_bare_hamiltonian(s, BasisLayout.for_spec(s)))
        w2 = np.linalg.eigvalsh(build_bare_hamiltonian(s, BasisLayout.for_spec(s, "excitation")))
        np.testing.assert_allclose(w1, w2, rtol=1e-12, atol=1e-12 * np.abs(w1).max())

    def test_additivity_without_couplings(self):
        s = _spec(d=3)
        w = np.sort(np.diag(build_bare_hamiltonian(s)))
        single = [[0.0, m.frequency, 2 * m.frequency + m.anharmonicity] for m in s.modes]
        sums = np.sort([a + b + c for a in single[0] for b in single[1] for c in single[2]])
        np.testing.assert_allclose(np.linalg.eigvalsh(build_bare_hamiltonian(s)), sums, rtol=1e-12)
        np.testing.assert_allclose(w, sums, rtol=1e-12)

    def test_excitation_number_conserved(self):
        s = _spec(j_zz=50 * MHZ, j_xx=5 * MHZ, lam=0.05)
        lay = BasisLayout.for_spec(s)
        H = build_bare_hamiltonian(s, lay)
        N = sum(build_number_operators(lay))
        assert np.linalg.norm(H @ N - N @ H) < 1e-12 * np.linalg.norm(H)

    def test_layout_mismatch(self):
        with pytest.raises(ValueError):
            build_bare_hamiltonian(_spec(d=3), BasisLayout((2, 2, 2)))

    def test_full_preset_zz_against_diagonalization(self):
        from crossres.effective import static_zz

        s = load_preset("exp2_al", levels=4).spec
        lay = BasisLayout.for_spec(s)
        H = build_bare_hamiltonian(s, lay)
        w, V = np.linalg.eigh(H)
        E = {}
        for lab in [(0, 0, 0), (0, 1, 0), (1, 0, 0), (1, 1, 0)]:
            E[lab] = w[np.argmax(np.abs(V[lay.index(lab)]) ** 2)]
        zz = (E[(1, 1, 0)] - E[(1, 0, 0)]) - (E[(0, 1, 0)] - E[(0, 0, 0)])
        assert zz == pytest.approx(static_zz(s).numeric, rel=1e-9)


class TestDriveOperators:
    def test_two_level_is_pauli_x(self):
        s = _spec(d=2)
        XT, XA = build_drive_operators(s)
        sx = np.array([[0, 1], [1, 0]])
        np.testing.assert_array_equal(XT, np.kron(np.kron(sx, np.eye(2)), np.eye(2)))
        np.testing.assert_array_equal(XA, np.kron(np.kron(np.eye(2), sx), np.eye(2)))
        np.testing.assert_array_equal(XT @ XT, np.eye(8))

    def test_ladder_elements(self):
        s = _spec(d=4)
        lay = BasisLayout.for_spec(s)
        XT, _ = build_drive_operators(s, lay)
        for n in range(3):
            assert XT[lay.index((n + 1, 0, 0)), lay.index((n, 0, 0))] == pytest.approx(np.sqrt(n + 1))


class TestPresets:
    def test_exp1_couplings(self):
        p = load_preset("exp1_cu")
        assert p.spec.j_zz / MHZ == pytest.approx(70.5)
        assert p.spec.j_xx / MHZ == pytest.approx(1.9)

    def test_exp2_coherence(self):
        p = load_preset("exp2_al")
        assert p.coherence["T"].t1 == pytest.approx(14 * US)
        assert p.coherence["T"].t2_echo == pytest.approx(8 * US)

    def test_exp2_detuning(self):
        assert load_preset("exp2_al").spec.detuning_ta / MHZ == pytest.approx(212.0)

    def test_exp2_table_values(self):
        s = load_preset("exp2_al").spec
        assert s.mode("A").frequency / GHZ == pytest.approx(4.562)
        assert s.mode("B").anharmonicity / MHZ == pytest.approx(-142)
        assert s.j_xx / MHZ == pytest.approx(2.76)

    def test_jzz_override(self):
        assert load_preset("exp2_al", j_zz_mhz=60).spec.j_zz / MHZ == pytest.approx(60)

    def test_unknown(self):
        with pytest.raises(ValueError, match="unknown preset"):
            load_preset("exp3")

    def test_presets_do_not_warn(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            load_preset("exp1_cu")
            load_preset("exp2_al")
