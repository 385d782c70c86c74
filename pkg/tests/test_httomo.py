import numpy as np
import pytest

from crossres.dynamics import BlochTrajectory, simulate_cr_rabi
from crossres.effective import EffectiveHamiltonian
from crossres.httomo import (
    BlochFit,
    BlochTrajectoryFitter,
    GeneralizedField,
    HamiltonianTomography,
    bloch_closed_form,
    bloch_generator,
    fit_bloch_trajectory,
    hamiltonian_tomography,
)
from crossres.model import MHZ, US, DriveSpec
from crossres.numerics import expm

TRUE = (1.3 * MHZ, -0.6 * MHZ, 0.45 * MHZ, 0.08 / US)


def _traj(ox, oy, d, g, n=121, tmax=3 * US, control=0, noise=0.0, rng=None):
    t = np.linspace(0, tmax, n)
    x, y, z = bloch_closed_form(GeneralizedField(ox, oy, d), t)
    damp = np.exp(-g * t)
    xyz = np.stack([x, y, z]) * damp
    if noise:
        xyz = xyz + rng.normal(scale=noise, size=xyz.shape)
        r = np.linalg.norm(xyz, axis=0)
        xyz = xyz / np.maximum(r, 1.0)
    return BlochTrajectory(t, *xyz, control)


class TestGenerator:
    def test_zero_field(self):
        assert not np.any(bloch_generator(GeneralizedField(0, 0, 0)))

    def test_antisymmetric_and_rotation(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            G = bloch_generator(GeneralizedField(*rng.normal(size=3)))
            np.testing.assert_array_equal(G + G.T, 0)
            R = expm(G * rng.uniform(0, 5))
            assert np.linalg.norm(R.T @ R - np.eye(3)) < 1e-12
            assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)

    def test_field_magnitude(self):
        f = GeneralizedField(3.0, 4.0, 12.0)
        assert f.B == 13.0
        np.testing.assert_array_equal(f.vector, [3, 4, -12])

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            GeneralizedField(np.nan, 0, 0)


class TestClosedForm:
    def test_resonant_rabi(self):
        w = 2.0
        t = np.linspace(0, 5, 50)
        x, y, z = bloch_closed_form(GeneralizedField(w, 0, 0), t)
        np.testing.assert_allclose(z, np.cos(w * t), atol=1e-15)
        np.testing.assert_allclose(y, -np.sin(w * t), atol=1e-15)
        np.testing.assert_allclose(x, 0, atol=1e-15)

    def test_z_eigenstate(self):
        x, y, z = bloch_closed_form(GeneralizedField(0, 0, 3.0), np.linspace(0, 4, 9))
        np.testing.assert_allclose(np.stack([x, y, z]), np.array([[0] * 9, [0] * 9, [1] * 9]), atol=1e-15)

    def test_matches_matrix_exponential(self):
        rng = np.random.default_rng(1)
        f = GeneralizedField(*rng.normal(size=3))
        t = rng.uniform(0, 10, 100)
        G = bloch_generator(f)
        ref = np.array([expm(G * tk) @ [0, 0, 1] for tk in t]).T
        assert np.max(np.abs(np.stack(bloch_closed_form(f, t)) - ref)) < 1e-10

    def test_other_initial_state_uses_exponential(self):
        f = GeneralizedField(1.0, 0.0, 0.0)
        x, y, z = bloch_closed_form(f, np.array([np.pi / 2]), r0=(0, 1, 0))
        np.testing.assert_allclose([x[0], y[0], z[0]], [0, 0, 1], atol=1e-12)


class TestFit:
    def test_noiseless_round_trip(self):
        fit = fit_bloch_trajectory(_traj(*TRUE))
        got = (fit.field.omega_x, fit.field.omega_y, fit.field.delta, fit.gamma)
        np.testing.assert_allclose(got, TRUE, rtol=1e-3)
        assert not fit.low_confidence
        assert fit.n_starts_converged >= 1
        assert set(fit.report()) >= {"omega_x_MHz", "gamma_per_us", "residual", "n_starts_converged"}

    def test_idempotent(self):
        fit = fit_bloch_trajectory(_traj(*TRUE, noise=0.01, rng=np.random.default_rng(2)))
        t = fit.times
        again = fit_bloch_trajectory(BlochTrajectory(t, *fit.predict(t), 0))
        a = np.array([fit.field.omega_x, fit.field.omega_y, fit.field.delta, fit.gamma])
        b = np.array([again.field.omega_x, again.field.omega_y, again.field.delta, again.gamma])
        np.testing.assert_allclose(b, a, rtol=1e-6)

    def test_flat_trajectory(self):
        t = np.linspace(0, 1 * US, 30)
        fit = fit_bloch_trajectory(BlochTrajectory(t, 0 * t, 0 * t, 1 + 0 * t, 0))
        assert fit.field.B == 0.0
        assert fit.gamma == pytest.approx(0.0, abs=1e-9)

    def test_low_confidence_flags(self):
        short = _traj(*TRUE, n=8)
        assert fit_bloch_trajectory(short).low_confidence
        brief = _traj(*TRUE, tmax=0.1 * US, n=40)
        assert fit_bloch_trajectory(brief).low_confidence

    @pytest.mark.slow
    def test_noisy_monte_carlo(self):
        rng = np.random.default_rng(3)
        ok = 0
        for _ in range(100):
            fit = fit_bloch_trajectory(_traj(*TRUE[:3], 0.0, noise=0.02, rng=rng))
            got = np.array([fit.field.omega_x, fit.field.omega_y, fit.field.delta])
            ok += bool(np.all(np.abs(got / np.array(TRUE[:3]) - 1) < 0.03))
        assert ok == 100

    def test_estimator(self):
        tr = _traj(*TRUE)
        est = BlochTrajectoryFitter().fit(tr)
        assert est.field_.omega_x == pytest.approx(TRUE[0], rel=1e-3)
        pred = est.predict(tr.times)
        assert pred.shape == (len(tr.times), 3)
        assert est.score(tr) > -1e-6
        est2 = BlochTrajectoryFitter().fit(tr.times, tr.as_array().T)
        assert est2.gamma_ == pytest.approx(est.gamma_, rel=1e-6)


def _fit(ox, oy, d, g=0.0):
    return BlochFit(GeneralizedField(ox, oy, d), g, 0.0, 4, False, None, np.linspace(0, 1e-6, 10))


class TestTomography:
    def test_sum_difference(self):
        a = 2.0
        r = hamiltonian_tomography(_fit(a, 0, 0), _fit(-a, 0, 0))
        assert r.coefficients.ZX == a and r.coefficients.IX == 0

    def test_identical_fits(self):
        f = _fit(1.0, 0.5, -0.3)
        c = hamiltonian_tomography(f, f).coefficients
        assert c.ZX == c.ZY == c.ZZ == 0.0
        assert c.IZ == pytest.approx(0.3)

    def test_gamma_mismatch_flagged(self):
        with pytest.warns(RuntimeWarning):
            r = hamiltonian_tomography(_fit(1, 0, 0, 1e6), _fit(1, 0, 0, 1e5))
        assert r.gamma_mismatch

    def test_effective_model_end_to_end(self):
        c = EffectiveHamiltonian(ZX=0.8 * MHZ, ZY=0.2 * MHZ, ZZ=0.3 * MHZ, IX=0.5 * MHZ, IY=-0.1 * MHZ,
                                 IZ=0.15 * MHZ)
        trajs = [simulate_cr_rabi(c, DriveSpec(1.0), 4 * US, 161, s) for s in (0, 1)]
        r = HamiltonianTomography().fit(trajs)
        for k in ("ZX", "ZY", "ZZ", "IX", "IY", "IZ"):
            assert getattr(r.coefficients_, k) == pytest.approx(getattr(c, k), rel=1e-4)
        assert r.transform().shape == (1, 6)

    def test_reflection_symmetry(self):
        f0 = (1.1 * MHZ, 0.4 * MHZ, 0.3 * MHZ)
        f1 = (-0.7 * MHZ, 0.2 * MHZ, -0.1 * MHZ)
        t0, t1 = _traj(*f0, 0.0), _traj(*f1, 0.0, control=1)
        base = hamiltonian_tomography(t0, t1).coefficients

        def flip(tr):
            return BlochTrajectory(tr.times, -tr.x, tr.y, tr.z, tr.control_state)

        mirrored = hamiltonian_tomography(flip(t0), flip(t1)).coefficients
        for k in ("ZY", "IY", "ZZ", "IZ"):
            assert getattr(mirrored, k) == pytest.approx(-getattr(base, k), rel=1e-6)
        for k in ("ZX", "IX"):
            assert getattr(mirrored, k) == pytest.approx(getattr(base, k), rel=1e-6)
