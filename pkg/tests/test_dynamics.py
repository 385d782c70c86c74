import numpy as np
import pytest
from scipy.integrate import quad

from crossres.dynamics import (
    ZX90,
    BlochTrajectory,
    NoiseSpec,
    Propagator,
    PulseEnvelope,
    PulseSequence,
    Segment,
    calibrate_zx_gate,
    conditional_angle,
    cr_model,
    echoed_cr_channel,
    echoed_cr_sequence,
    envelope_area,
    envelope_value,
    mode_kraus,
    propagate,
    propagate_lab_frame,
    simulate_cr_rabi,
    simulate_echoed_cr_evolution,
)
from crossres.effective import EffectiveHamiltonian
from crossres.model import MHZ, NS, US, DriveSpec, load_preset

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SM = np.array([[0, 0], [1, 0]], dtype=complex)  # raising |0> -> |1>


def _square(amp, length):
    env = PulseEnvelope(amp, length, 0.0)
    return PulseSequence((Segment("cr", 0.0, length, env),))


def _ground(n=2):
    r = np.zeros((n, n), dtype=complex)
    r[0, 0] = 1
    return r


@pytest.fixture(scope="module")
def exp2():
    return load_preset("exp2_al")


class TestEnvelope:
    p = PulseEnvelope(2.0, 65 * NS, 10 * NS)

    def test_flat_top_midpoint(self):
        assert envelope_value(self.p, self.p.duration / 2) == 2.0

    def test_zero_at_ends(self):
        assert envelope_value(self.p, 0.0) == 0.0
        assert envelope_value(self.p, self.p.duration) == 0.0

    def test_continuous_at_breakpoints(self):
        for b in self.p.breakpoints()[1:-1]:
            lo, hi = envelope_value(self.p, b - 1e-18), envelope_value(self.p, b + 1e-18)
            assert abs(lo - hi) < 1e-12
        assert envelope_value(self.p, 10 * NS) == pytest.approx(2.0, abs=1e-12)

    def test_area_regression(self):
        unit = PulseEnvelope(1.0, 65 * NS, 10 * NS)
        val, _ = quad(unit.shape, 0, unit.duration, points=[10 * NS, 75 * NS], epsabs=1e-20)
        assert val / NS == pytest.approx(75.70492907718, abs=1e-9)
        assert envelope_area(unit) == pytest.approx(val, rel=1e-12)

    def test_outside_support(self):
        with pytest.raises(ValueError):
            envelope_value(self.p, -1 * NS)
        with pytest.raises(ValueError):
            envelope_value(self.p, self.p.duration + 1 * NS)


class TestSequences:
    def test_published_timing(self):
        assert echoed_cr_sequence(85 * NS).duration / NS == pytest.approx(220.0)

    def test_zero_half_length(self):
        seq = echoed_cr_sequence(0.0)
        assert [s.channel for s in seq.segments] == ["delay", "control", "delay"]
        assert seq.duration / NS == pytest.approx(50.0)

    def test_overlap_rejected(self):
        env = PulseEnvelope(1.0, 20 * NS, 0.0)
        with pytest.raises(ValueError, match="overlapping"):
            PulseSequence((Segment("cr", 0.0, 20 * NS, env), Segment("cr", 10 * NS, 20 * NS, env)))

    def test_serializable(self):
        d = echoed_cr_sequence(100 * NS, pulsed_pi=True, amplitude=MHZ).to_dict()
        assert d["duration_ns"] == pytest.approx(250.0)
        assert len(d["segments"]) == 5


class TestNoiseSpec:
    def test_t2_limit(self):
        with pytest.raises(ValueError):
            NoiseSpec({"T": (10e-6, 25e-6)})

    def test_rates(self):
        g1, gp = NoiseSpec({"T": (10e-6, 10e-6)}).rates("T")
        assert g1 == pytest.approx(1e5)
        assert gp == pytest.approx(1e5 - 0.5e5)

    def test_kraus_complete(self):
        K = mode_kraus(4, 1e5, 3e4, 200e-9)
        np.testing.assert_allclose(sum(k.conj().T @ k for k in K), np.eye(4), atol=1e-12)


class TestPropagate:
    def test_zero_hamiltonian(self):
        rho0 = np.array([[0.7, 0.2 - 0.1j], [0.2 + 0.1j, 0.3]])
        res = propagate(np.zeros((2, 2)), {"cr": np.zeros((2, 2))}, _square(1.0, 10 * NS), rho0)
        np.testing.assert_allclose(res.final, rho0, atol=1e-15)

    def test_rabi(self):
        omega = 20 * MHZ
        T = 40 * NS
        times = np.linspace(0, T, 17)
        env = PulseEnvelope(omega, T, 0.0)
        seq = PulseSequence((Segment("cr", 0.0, T, env),))
        # piecewise stepping with dt = 0.01 ns through a noisy (zero-rate) path
        res = propagate(np.zeros((2, 2)), {"cr": SM}, seq, _ground(), noise=NoiseSpec({"q": (None, None)}),
                        dt=0.01 * NS, dims=(2,), labels=("q",), sample_times=times)
        z = np.real(res.states[:, 0, 0] - res.states[:, 1, 1])
        np.testing.assert_allclose(z, np.cos(omega * times), atol=1e-6)

    def test_t1_relaxation(self):
        t1 = 2 * US
        T = 3 * US
        seq = PulseSequence((Segment("delay", 0.0, T),))
        excited = np.diag([0.0, 1.0]).astype(complex)
        times = np.linspace(0, T, 7)
        res = propagate(np.zeros((2, 2)), {}, seq, excited, NoiseSpec({"q": (t1, None)}), dt=1 * NS,
                        dims=(2,), labels=("q",), sample_times=times)
        z = np.real(res.states[:, 0, 0] - res.states[:, 1, 1])
        np.testing.assert_allclose(z, 1 - 2 * np.exp(-times / t1), atol=1e-5)
        np.testing.assert_allclose(res.states[:, 1, 1].real, np.exp(-times / t1), atol=1e-5)

    def test_rejects_bad_state(self):
        with pytest.raises(ValueError):
            propagate(np.zeros((2, 2)), {"cr": SM}, _square(1.0, NS), np.diag([0.6, 0.6]))

    def test_invariants_with_noise(self, exp2):
        model = cr_model(exp2.spec, DriveSpec(30 * MHZ))
        noise = NoiseSpec.from_preset(exp2)
        rho0 = np.zeros((model.dim, model.dim), dtype=complex)
        psi = np.zeros(model.dim, dtype=complex)
        psi[[model.index(0, 0), model.index(1, 0), model.index(1, 1)]] = [0.6, 0.64j, 0.48]
        rho0 = np.outer(psi, psi.conj())
        seq = PulseSequence((Segment("cr", 0, 60 * NS, PulseEnvelope(30 * MHZ, 40 * NS, 10 * NS)),))
        times = np.linspace(0, 60 * NS, 7)
        noisy = Propagator(model, 0.5 * NS).run(seq, rho0, noise=noise, sample_times=times)
        clean = Propagator(model, 0.5 * NS).run(seq, rho0, sample_times=times)
        for r in noisy.states:
            assert abs(np.trace(r) - 1) < 1e-9
            assert np.linalg.eigvalsh(r)[0] > -1e-8
        for r in clean.states:
            assert abs(np.trace(r @ r).real - 1) < 1e-8
        assert np.trace(noisy.final @ noisy.final).real < 1 - 1e-4

    def test_step_size_convergence(self, exp2):
        model = cr_model(exp2.spec, DriveSpec(30 * MHZ))
        seq = PulseSequence((Segment("cr", 0, 60 * NS, PulseEnvelope(30 * MHZ, 40 * NS, 10 * NS)),))
        U1 = Propagator(model, 0.05 * NS).run(seq, unitary=True).unitary
        U2 = Propagator(model, 0.025 * NS).run(seq, unitary=True).unitary
        psi0 = np.zeros(model.dim)
        psi0[model.index(0, 0)] = 1
        f = abs(np.vdot(U1 @ psi0, U2 @ psi0)) ** 2
        assert 1 - f < 1e-6

    def test_rwa_against_lab_frame(self):
        w = 2 * np.pi * 5e9
        omega = 20 * MHZ
        T = 12.5 * NS
        H0 = np.diag([0.0, w]).astype(complex)
        env = PulseEnvelope(omega, T, 0.0)
        rho = propagate_lab_frame(H0, [(SX, 1.0, 0.0)], env, w, _ground(), dt=1e-12)
        z = (rho[0, 0] - rho[1, 1]).real
        assert z == pytest.approx(np.cos(omega * T), abs=1e-2)


class TestCrRabi:
    def test_drive_off(self, exp2):
        tr = simulate_cr_rabi(exp2.spec, DriveSpec(0.0), 1 * US, 11, 0)
        np.testing.assert_allclose(tr.z, 1.0, atol=1e-12)

    def test_control_leakage_grows_with_drive(self, exp2):
        dev = []
        for amp in (10, 30, 60):
            tr = simulate_cr_rabi(exp2.spec, DriveSpec(amp * MHZ), 200 * NS, 201, 0)
            dev.append(np.max(1 - tr.control_z))
        assert dev[0] < dev[1] < dev[2]

    def test_conditional_frequencies_differ(self, exp2):
        c = EffectiveHamiltonian(ZX=1 * MHZ, IX=0.3 * MHZ)
        t0 = simulate_cr_rabi(c, DriveSpec(1.0), 2 * US, 101, 0)
        t1 = simulate_cr_rabi(c, DriveSpec(1.0), 2 * US, 101, 1)
        times = t0.times
        np.testing.assert_allclose(t0.z, np.cos(1.3 * MHZ * times), atol=1e-10)
        np.testing.assert_allclose(t1.z, np.cos(0.7 * MHZ * times), atol=1e-10)

    def test_noisy_sampling_matches_separate_runs(self, exp2):
        d = DriveSpec(5 * MHZ)
        noise = NoiseSpec.from_preset(exp2, "echo")
        tr = simulate_cr_rabi(exp2.spec, d, 100 * NS, 5, 1, noise)
        model = cr_model(exp2.spec, d)
        for k in (2, 4):
            one = simulate_cr_rabi(model, d, tr.times[k], 2, 1, noise)
            assert (one.x[-1], one.y[-1], one.z[-1]) == pytest.approx((tr.x[k], tr.y[k], tr.z[k]), abs=1e-12)

    def test_trajectory_validation(self):
        with pytest.raises(ValueError):
            BlochTrajectory([0, 1], [1, 0], [0.5, 0], [0.5, 1], 0)


class TestCalibration:
    def test_synthetic_square_pulse_length(self):
        c = EffectiveHamiltonian(ZX=1.47 * MHZ)
        cal = calibrate_zx_gate(c, DriveSpec(1.0), rise=0.0)
        assert cal.tau_analytic / NS == pytest.approx((np.pi / 2) / (2 * 1.47 * MHZ) / NS, rel=1e-12)
        assert cal.tau_analytic / NS == pytest.approx(85.0, abs=0.1)
        assert abs(np.rad2deg(cal.achieved_angle) - 90) < 0.5

    def test_doubling_zx_halves_length(self):
        a = calibrate_zx_gate(EffectiveHamiltonian(ZX=1.47 * MHZ), DriveSpec(1.0), rise=0.0)
        b = calibrate_zx_gate(EffectiveHamiltonian(ZX=2.94 * MHZ), DriveSpec(1.0), rise=0.0)
        assert b.tau_half == pytest.approx(a.tau_half / 2, rel=1e-9)

    def test_negative_zx_handled(self):
        cal = calibrate_zx_gate(EffectiveHamiltonian(ZX=-2 * MHZ), DriveSpec(1.0), rise=5 * NS)
        assert abs(np.rad2deg(cal.achieved_angle) - 90) < 0.5

    def test_calibrated_synthetic_gate_is_zx90(self):
        cal = calibrate_zx_gate(EffectiveHamiltonian(ZX=2 * MHZ, IX=0.5 * MHZ, ZZ=0.0), DriveSpec(1.0))
        hook = echoed_cr_channel(cal)
        psi = np.array([1, 0, 0, 0], dtype=complex)
        out = hook(np.outer(psi, psi))
        ideal = ZX90 @ psi
        assert np.real(ideal.conj() @ out @ ideal) > 1 - 1e-8

    def test_too_weak_rejected(self):
        with pytest.raises(ValueError):
            calibrate_zx_gate(EffectiveHamiltonian(ZX=1e3), DriveSpec(1.0))

    def test_conditional_angle_of_zx90(self):
        assert conditional_angle(ZX90) == pytest.approx(np.pi / 2)


class TestEchoEvolution:
    grid = np.linspace(20, 300, 15) * NS

    def test_no_zz_keeps_x_at_zero(self):
        tr = simulate_echoed_cr_evolution(EffectiveHamiltonian(ZX=2 * MHZ), DriveSpec(1.0), self.grid)
        np.testing.assert_allclose(tr.x, 0.0, atol=1e-10)

    def test_residual_x_grows_with_zz(self):
        amps = []
        for zz in (0.05, 0.2, 0.5):
            c = EffectiveHamiltonian(ZX=2 * MHZ, ZZ=zz * MHZ)
            tr = simulate_echoed_cr_evolution(c, DriveSpec(1.0), self.grid)
            amps.append(np.max(np.abs(tr.x)))
        assert amps[0] < amps[1] < amps[2]

    def test_rate_matches_calibration(self):
        zx = 2 * MHZ
        c = EffectiveHamiltonian(ZX=zx)
        tr = simulate_echoed_cr_evolution(c, DriveSpec(1.0), self.grid, rise=0.0)
        np.testing.assert_allclose(tr.z, np.cos(2 * zx * self.grid), atol=1e-10)
        cal = calibrate_zx_gate(c, DriveSpec(1.0), rise=0.0)
        one = simulate_echoed_cr_evolution(c, DriveSpec(1.0), [cal.tau_half], rise=0.0)
        assert one.z[0] == pytest.approx(0.0, abs=1e-6)
