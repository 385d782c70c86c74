"""Pulse envelopes, piecewise-constant propagation in the drive frame,
per-mode decoherence channels, CR Rabi and echoed-CR simulation, and ZX gate
calibration.

All times are in seconds and all rates in rad/s. Simulations run in the
dressed, label-ordered basis produced by :mod:`crossres.frames`, in the frame
rotating at the CR drive frequency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np
from scipy.integrate import quad

from .effective import EffectiveHamiltonian, cr_effective_hamiltonian, rwa_hamiltonian
from .model import NS, US, CircuitSpec, DriveSpec, Preset
from .numerics import expm, nelder_mead, SimplexOptions
from .validation import check_density_matrix

__all__ = [
    "PulseEnvelope",
    "envelope_value",
    "edge_area_fraction",
    "Segment",
    "PulseSequence",
    "echoed_cr_sequence",
    "NoiseSpec",
    "mode_superoperator",
    "mode_kraus",
    "SimulationModel",
    "cr_model",
    "effective_model",
    "Propagator",
    "PropagationResult",
    "propagate",
    "propagate_lab_frame",
    "BlochTrajectory",
    "target_bloch",
    "control_z",
    "simulate_cr_rabi",
    "simulate_echoed_cr_evolution",
    "ZXCalibration",
    "calibrate_zx_gate",
    "conditional_angle",
    "echoed_cr_channel",
    "ZX90",
]

DEFAULT_DT = 0.05 * NS
_E2 = math.exp(-2.0)


# --- envelopes -------------------------------------------------------------------


@dataclass(frozen=True)
class PulseEnvelope:
    """Rounded square pulse: truncated-Gaussian rise, flat top, mirrored fall.

    ``amplitude`` is the peak value (rad/s); ``flat`` and ``rise`` are
    durations in seconds. ``rise = 0`` gives a square pulse.
    """

    amplitude: float
    flat: float
    rise: float = 10 * NS
    phase: float = 0.0
    sign: int = 1
    kind: str = "rounded_square"

    def __post_init__(self):
        if self.kind != "rounded_square":
            raise ValueError(f"unsupported envelope kind {self.kind!r}")
        if self.flat < 0 or self.rise < 0:
            raise ValueError("flat and rise durations must be non-negative")
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        if not np.isfinite(self.amplitude):
            raise ValueError("amplitude must be finite")

    @property
    def duration(self) -> float:
        return self.flat + 2 * self.rise

    def shape(self, t):
        """Unit-peak envelope at ``t`` (no amplitude, sign or phase)."""
        t = np.asarray(t, dtype=float)
        tr, T = self.rise, self.duration
        if np.any(t < -1e-18) or np.any(t > T + 1e-18):
            raise ValueError(f"t outside the pulse support [0, {T:.6g}]")
        out = np.ones_like(t)
        if tr > 0:
            sigma = tr / 2
            up = t < tr
            down = t > tr + self.flat
            g = lambda s: (np.exp(-((s - tr) ** 2) / (2 * sigma**2)) - _E2) / (1 - _E2)
            out = np.where(up, g(np.clip(t, 0, tr)), out)
            out = np.where(down, g(np.clip(T - t, 0, tr)), out)
        # exact zeros at the truncation points
        out = np.where((t <= 0) | (t >= T), 0.0, out) if tr > 0 else out
        return out if out.ndim else float(out)

    def breakpoints(self):
        """Relative times where the envelope changes analytic form."""
        if self.rise == 0:
            return (0.0, self.duration)
        return (0.0, self.rise, self.rise + self.flat, self.duration)

    def is_flat(self, t0, t1) -> bool:
        return self.rise == 0 or (t0 >= self.rise - 1e-18 and t1 <= self.rise + self.flat + 1e-18)


def envelope_value(p: PulseEnvelope, t):
    """Signed envelope ``sign * amplitude * shape(t)`` in rad/s."""
    return p.sign * p.amplitude * p.shape(t)


def edge_area_fraction() -> float:
    """Area of one truncated-Gaussian edge divided by its duration."""
    val, _ = quad(lambda u: (math.exp(-((u - 1) ** 2) / 0.5) - _E2) / (1 - _E2), 0.0, 1.0, epsabs=1e-14)
    return val


_KAPPA = edge_area_fraction()


def envelope_area(p: PulseEnvelope) -> float:
    """Integral of the unit-peak shape (seconds)."""
    return p.flat + 2 * _KAPPA * p.rise


# --- sequences -----------------------------------------------------------------------

CHANNELS = ("cr", "control", "delay")


@dataclass(frozen=True)
class Segment:
    """One entry of a pulse sequence.

    ``channel='delay'`` is an idle period. A control segment with
    ``ideal=True`` is an instantaneous pi flip at its midpoint.
    """

    channel: str
    start: float
    duration: float
    envelope: PulseEnvelope | None = None
    ideal: bool = False

    def __post_init__(self):
        if self.channel not in CHANNELS:
            raise ValueError(f"unknown channel {self.channel!r}")
        if self.duration < 0 or self.start < 0:
            raise ValueError("segment start and duration must be non-negative")
        if self.envelope is not None and abs(self.envelope.duration - self.duration) > 1e-15:
            raise ValueError("envelope duration does not match the segment duration")
        if self.envelope is not None and self.channel == "delay":
            raise ValueError("a delay carries no envelope")

    @property
    def end(self) -> float:
        return self.start + self.duration

    def to_dict(self) -> dict:
        d = {"channel": self.channel, "start_ns": self.start / NS, "duration_ns": self.duration / NS, "ideal": self.ideal}
        if self.envelope is not None:
            e = self.envelope
            d["envelope"] = {
                "amplitude_mhz": e.amplitude / (2e6 * np.pi),
                "flat_ns": e.flat / NS,
                "rise_ns": e.rise / NS,
                "phase_rad": e.phase,
                "sign": e.sign,
            }
        return d


@dataclass(frozen=True)
class PulseSequence:
    segments: tuple[Segment, ...]

    def __post_init__(self):
        segs = tuple(sorted(self.segments, key=lambda s: s.start))
        object.__setattr__(self, "segments", segs)
        for ch in ("cr", "control"):
            on = [s for s in segs if s.channel == ch and s.duration > 0]
            for a, b in zip(on, on[1:]):
                if b.start < a.end - 1e-15:
                    raise ValueError(f"overlapping segments on channel {ch!r} at t = {b.start / NS:.3f} ns")

    @classmethod
    def sequential(cls, items) -> "PulseSequence":
        """Place ``(channel, duration, envelope, ideal)`` items back to back."""
        t = 0.0
        segs = []
        for channel, duration, envelope, ideal in items:
            segs.append(Segment(channel, t, duration, envelope, ideal))
            t += duration
        return cls(tuple(segs))

    @property
    def duration(self) -> float:
        return max((s.end for s in self.segments), default=0.0)

    def to_dict(self) -> dict:
        return {"duration_ns": self.duration / NS, "segments": [s.to_dict() for s in self.segments]}


def echoed_cr_sequence(
    tau_half: float,
    gap: float = 5 * NS,
    pi_len: float = 40 * NS,
    *,
    amplitude: float = 1.0,
    rise: float = 10 * NS,
    phase: float = 0.0,
    pulsed_pi: bool = False,
    pi_amplitude: float | None = None,
) -> PulseSequence:
    """``CR(+) gap pi gap CR(-)``.

    ``tau_half`` is the full length of each CR half including both edges; it
    must be 0 (sequence collapses to gap-pi-gap) or at least ``2 * rise``.
    """
    if tau_half < 0 or gap <= 0 or pi_len <= 0:
        raise ValueError("durations must be positive")
    if 0 < tau_half < 2 * rise - 1e-15:
        raise ValueError(f"tau_half {tau_half / NS:.3f} ns is shorter than both edges")
    if pulsed_pi:
        pi_rise = min(rise, pi_len / 2)
        shape = PulseEnvelope(1.0, pi_len - 2 * pi_rise, pi_rise)
        amp = pi_amplitude if pi_amplitude is not None else np.pi / envelope_area(shape)
        pi_env = replace(shape, amplitude=amp)
    else:
        pi_env = None
    items = []
    if tau_half > 0:
        items.append(("cr", tau_half, PulseEnvelope(amplitude, tau_half - 2 * rise, rise, phase, +1), False))
    items += [("delay", gap, None, False), ("control", pi_len, pi_env, not pulsed_pi), ("delay", gap, None, False)]
    if tau_half > 0:
        items.append(("cr", tau_half, PulseEnvelope(amplitude, tau_half - 2 * rise, rise, phase, -1), False))
    return PulseSequence.sequential(items)


# --- noise -----------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSpec:
    """Per-mode relaxation and echo-dephasing times (seconds).

    ``modes`` maps a mode label to ``(T1, T2)``; ``None`` for either disables
    that process. Pure dephasing uses ``1/T_phi = 1/T2 - 1/(2 T1)``.
    """

    modes: Mapping[str, tuple[float | None, float | None]]

    def __post_init__(self):
        for label, (t1, t2) in self.modes.items():
            if t1 is not None and t1 <= 0 or t2 is not None and t2 <= 0:
                raise ValueError(f"mode {label}: coherence times must be positive")
            if t1 is not None and t2 is not None and t2 > 2 * t1 * (1 + 1e-12):
                raise ValueError(f"mode {label}: T2 = {t2:.3g} exceeds 2 T1 = {2 * t1:.3g}")

    def rates(self, label: str) -> tuple[float, float]:
        """``(gamma_1, gamma_phi)`` in 1/s."""
        t1, t2 = self.modes.get(label, (None, None))
        g1 = 0.0 if t1 is None else 1.0 / t1
        if t2 is None:
            return g1, 0.0
        return g1, max(1.0 / t2 - 0.5 * g1, 0.0)

    @classmethod
    def from_preset(cls, preset: Preset, which: str = "echo") -> "NoiseSpec":
        if which not in ("echo", "ramsey"):
            raise ValueError("which must be 'echo' or 'ramsey'")
        return cls(
            {
                k: (c.t1, c.t2_echo if which == "echo" else c.t2_ramsey)
                for k, c in preset.coherence.items()
            }
        )


def _lindblad_superop(ops, d):
    """Row-major superoperator of ``sum_k D[L_k]``."""
    I = np.eye(d)
    S = np.zeros((d * d, d * d), dtype=complex)
    for L in ops:
        LdL = L.conj().T @ L
        S += np.kron(L, L.conj()) - 0.5 * np.kron(LdL, I) - 0.5 * np.kron(I, LdL.T)
    return S


def mode_superoperator(d: int, gamma1: float, gamma_phi: float, t: float) -> np.ndarray:
    """Exact single-mode amplitude-damping plus dephasing map for time ``t``
    acting on row-major ``vec(rho)``."""
    a = np.diag(np.sqrt(np.arange(1, d, dtype=float)), 1)
    n = np.diag(np.arange(d, dtype=float))
    ops = []
    if gamma1 > 0:
        ops.append(np.sqrt(gamma1) * a)
    if gamma_phi > 0:
        ops.append(np.sqrt(2 * gamma_phi) * n)
    if not ops:
        return np.eye(d * d, dtype=complex)
    return expm(_lindblad_superop(ops, d) * t)


def mode_kraus(d: int, gamma1: float, gamma_phi: float, t: float, tol: float = 1e-14) -> list[np.ndarray]:
    """Kraus operators of :func:`mode_superoperator` from its Choi matrix."""
    S = mode_superoperator(d, gamma1, gamma_phi, t)
    # S[(i,j),(k,l)] = sum_K K_ik conj(K_jl);  Choi C[(i,k),(j,l)] = S[(i,j),(k,l)]
    C = S.reshape(d, d, d, d).transpose(0, 2, 1, 3).reshape(d * d, d * d)
    w, V = np.linalg.eigh(0.5 * (C + C.conj().T))
    return [np.sqrt(wk) * V[:, k].reshape(d, d) for k, wk in enumerate(w) if wk > tol]


def _apply_mode_maps(rho, maps, dims):
    """Apply per-mode superoperators to a batch ``(k, n, n)`` of states."""
    m = len(dims)
    k = rho.shape[0]
    r = rho.reshape((k,) + tuple(dims) * 2)
    for j, S in maps:
        d = dims[j]
        S4 = S.reshape(d, d, d, d)
        r = np.tensordot(r, S4, axes=([1 + j, 1 + m + j], [2, 3]))
        r = np.moveaxis(r, [-2, -1], [1 + j, 1 + m + j])
    return r.reshape(rho.shape)


# --- simulation model ------------------------------------------------------------------


@dataclass(frozen=True)
class DriveChannel:
    """Drive term ``(a(t)/2) (exp(-i(phi + nu t)) R + h.c.)``."""

    raising: np.ndarray
    detuning: float = 0.0


@dataclass
class SimulationModel:
    """Everything the propagator needs about one physical system.

    Attributes
    ----------
    h_static : (n, n) ndarray
        Drive-frame Hamiltonian with the drive off.
    channels : dict
        ``'cr'`` and optionally ``'control'`` drive channels.
    dims : tuple of int
        Tensor dimensions of the modes (label-ordered basis).
    labels : tuple of str
        Mode labels, control first then target.
    frame : (n,) ndarray
        Local single-excitation frame rates; ``exp(-i frame t)`` is the free
        evolution of uncoupled qubits in the drive frame.
    """

    h_static: np.ndarray
    channels: dict
    dims: tuple
    labels: tuple
    frame: np.ndarray
    omega_d: float = 0.0
    coefficients: EffectiveHamiltonian | None = None

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    def index(self, *levels) -> int:
        full = tuple(levels) + (0,) * (len(self.dims) - len(levels))
        return int(np.ravel_multi_index(full, self.dims))

    @property
    def computational(self) -> list[int]:
        """Indices of ``|c t>`` in the order 00, 01, 10, 11 (control, target)."""
        return [self.index(c, t) for c in (0, 1) for t in (0, 1)]

    def frame_unitary(self, t: float) -> np.ndarray:
        return np.exp(-1j * self.frame * t)

    def control_flip(self, t: float = 0.0) -> np.ndarray:
        """Ideal pi pulse on the control in the drive frame at time ``t``."""
        n = self.dim
        P = np.zeros((n, n), dtype=complex)
        for idx in np.ndindex(*self.dims):
            i = int(np.ravel_multi_index(idx, self.dims))
            c = idx[0]
            j = int(np.ravel_multi_index((1 - c,) + idx[1:], self.dims)) if c < 2 else i
            P[j, i] = 1.0
        f = self.frame_unitary(t)
        return (f[:, None] * P) * f.conj()[None, :]

    def embed(self, rho4) -> np.ndarray:
        """Two-qubit density matrix placed on the computational states."""
        idx = self.computational
        rho4 = np.asarray(rho4)
        out = np.zeros(rho4.shape[:-2] + (self.dim, self.dim), dtype=complex)
        out[(...,) + np.ix_(idx, idx)] = rho4
        return out

    def restrict(self, rho) -> np.ndarray:
        idx = self.computational
        return np.asarray(rho)[(...,) + np.ix_(idx, idx)]


def _local_frame(energies, dims, omega_d):
    """Drive-frame rates of the uncoupled-qubit reference frame built from
    single-excitation dressed energies of each mode."""
    E = energies.reshape(dims)
    zero = (0,) * len(dims)
    rates = []
    for j in range(len(dims)):
        one = list(zero)
        one[j] = 1
        rates.append(E[tuple(one)] - E[zero] - omega_d)
    grids = np.meshgrid(*[np.arange(d) for d in dims], indexing="ij")
    return sum(r * g for r, g in zip(rates, grids)).ravel()


def cr_model(spec: CircuitSpec, drive: DriveSpec, omega_d: float | None = None) -> SimulationModel:
    """Drive-frame RWA model of the three-mode circuit.

    The CR channel carries the drive phase, cross-talk and amplitude of
    ``drive`` with unit envelope; pulses scale it by their envelope. The
    control channel drives the transmon's 0-1 transition at its dressed
    frequency.
    """
    rwa = rwa_hamiltonian(spec, replace(drive, amplitude=1.0), omega_d)
    dims = rwa.layout.dims
    energies = rwa.basis.energies
    frame = _local_frame(energies, dims, rwa.omega_d)
    channels = {
        "cr": DriveChannel(rwa.cr_raising),
        "control": DriveChannel(rwa.control_raising, detuning=float(frame[np.ravel_multi_index((1, 0, 0), dims)])),
    }
    return SimulationModel(
        h_static=rwa.h_static,
        channels=channels,
        dims=dims,
        labels=("T", "A", "B"),
        frame=frame,
        omega_d=rwa.omega_d,
    )


def effective_model(coefficients: EffectiveHamiltonian) -> SimulationModel:
    """Two-qubit model with the given Pauli coefficients at unit drive.

    ``ZX, ZY, IX, IY`` scale with the CR envelope; ``ZZ, IZ, ZI`` are static.
    The local frame is trivial.
    """
    c = coefficients
    P = lambda t: EffectiveHamiltonian(**{t: 1.0}).to_matrix()
    drive = sum(getattr(c, t) * P(t) for t in ("ZX", "ZY", "IX", "IY"))
    static = sum(getattr(c, t) * P(t) for t in ("ZZ", "IZ", "ZI"))
    sig_plus = np.kron(np.array([[0, 0], [1, 0]], dtype=complex), np.eye(2))
    return SimulationModel(
        h_static=np.asarray(static, dtype=complex),
        channels={"cr": DriveChannel(np.asarray(drive, dtype=complex)), "control": DriveChannel(sig_plus)},
        dims=(2, 2),
        labels=("T", "A"),
        frame=np.zeros(4),
        coefficients=coefficients,
    )


# --- propagation ---------------------------------------------------------------------


@dataclass
class PropagationResult:
    times: np.ndarray
    states: np.ndarray
    final: np.ndarray
    unitary: np.ndarray | None = None


class Propagator:
    """Piecewise-constant propagation of a :class:`SimulationModel`.

    Time is cut at every envelope breakpoint, ideal flip and requested sample.
    Flat stretches with no time-dependent phase are exponentiated in one
    shot when noiseless; elsewhere steps of at most ``dt`` use the
    Hamiltonian at the step midpoint. Step unitaries are cached by their
    drive coefficients, so repeated edges cost nothing after the first.
    """

    def __init__(self, model: SimulationModel, dt: float = DEFAULT_DT):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.model = model
        self.dt = dt
        self._cache: dict = {}
        self._noise_cache: dict = {}

    def _coefficients(self, sequence, t, active):
        out = []
        for seg in active:
            env = seg.envelope
            ch = self.model.channels[seg.channel]
            a = envelope_value(env, min(max(t - seg.start, 0.0), env.duration))
            out.append((seg.channel, complex(a * np.exp(-1j * (env.phase + ch.detuning * t)))))
        return tuple(out)

    def hamiltonian(self, coeffs) -> np.ndarray:
        H = self.model.h_static.copy()
        for name, c in coeffs:
            R = self.model.channels[name].raising
            H = H + 0.5 * (c * R + np.conj(c) * R.conj().T)
        return H

    def _unitary(self, coeffs, h):
        key = (tuple((n, round(c.real, 3), round(c.imag, 3)) for n, c in coeffs), round(h * 1e18))
        U = self._cache.get(key)
        if U is None:
            U = expm(-1j * h * self.hamiltonian(coeffs))
            if len(self._cache) < 20000:
                self._cache[key] = U
        return U

    def _noise_maps(self, noise, h):
        key = (id(noise), round(h * 1e18))
        maps = self._noise_cache.get(key)
        if maps is None:
            maps = []
            for j, (label, d) in enumerate(zip(self.model.labels, self.model.dims)):
                g1, gp = noise.rates(label)
                if g1 > 0 or gp > 0:
                    maps.append((j, mode_superoperator(d, g1, gp, h)))
            self._noise_cache[key] = maps
        return maps

    def run(self, sequence: PulseSequence, rho0=None, *, noise: NoiseSpec | None = None, sample_times=None, unitary=False):
        """Propagate ``rho0`` (``(n, n)`` or a batch ``(k, n, n)``) through
        ``sequence``. With ``unitary=True`` (noiseless only) the total
        propagator is accumulated instead and ``rho0`` may be omitted."""
        n = self.model.dim
        if unitary and noise is not None:
            raise ValueError("a unitary cannot be accumulated with noise")
        if rho0 is None and not unitary:
            raise ValueError("initial state required")
        single = False
        if rho0 is not None:
            rho = np.asarray(rho0, dtype=complex)
            if rho.ndim == 2:
                single = True
                rho = rho[None]
            for r in rho:
                check_density_matrix(r, "rho0")
            rho = rho.copy()
        U_tot = np.eye(n, dtype=complex) if unitary else None

        T = sequence.duration
        samples = sorted(set(float(s) for s in (sample_times if sample_times is not None else [T])))
        if samples and (samples[0] < -1e-18 or samples[-1] > T + 1e-15):
            raise ValueError("sample times outside the sequence")
        cuts = {0.0, T, *samples}
        flips = []
        for s in sequence.segments:
            if s.envelope is not None:
                cuts.update(s.start + b for b in s.envelope.breakpoints())
            if s.ideal:
                flips.append(s.start + 0.5 * s.duration)
                cuts.add(flips[-1])
        cuts = np.array(sorted(cuts))
        cuts = cuts[np.concatenate([[True], np.diff(cuts) > 1e-16])]
        flips = sorted(flips)

        out_t, out_s = [], []
        si = 0

        def record(t):
            nonlocal si
            while si < len(samples) and abs(samples[si] - t) <= 1e-15:
                out_t.append(samples[si])
                out_s.append(U_tot.copy() if unitary else rho.copy())
                si += 1

        def apply(U):
            nonlocal rho, U_tot
            if unitary:
                U_tot = U @ U_tot
                if rho0 is not None:
                    rho = U @ rho @ U.conj().T
            else:
                rho = U @ rho @ U.conj().T

        record(0.0)
        fi = 0
        for t0, t1 in zip(cuts[:-1], cuts[1:]):
            while fi < len(flips) and flips[fi] <= t0 + 1e-15:
                apply(self.model.control_flip(flips[fi]))
                fi += 1
            L = t1 - t0
            active = [
                s for s in sequence.segments
                if s.envelope is not None and s.start <= t0 + 1e-15 and s.end >= t1 - 1e-15
            ]
            constant = all(
                s.envelope.is_flat(t0 - s.start, t1 - s.start) and self.model.channels[s.channel].detuning == 0
                for s in active
            )
            if constant and noise is None:
                apply(self._unitary(self._coefficients(sequence, 0.5 * (t0 + t1), active), L))
            else:
                steps = max(1, int(math.ceil(L / self.dt - 1e-9)))
                h = L / steps
                maps = self._noise_maps(noise, h) if noise is not None else []
                U_flat = self._unitary(self._coefficients(sequence, 0.5 * (t0 + t1), active), h) if constant else None
                for k in range(steps):
                    if U_flat is not None:
                        apply(U_flat)
                    else:
                        tm = t0 + (k + 0.5) * h
                        apply(self._unitary(self._coefficients(sequence, tm, active), h))
                    if maps:
                        rho = _apply_mode_maps(rho, maps, self.model.dims)
            record(t1)
        while fi < len(flips):
            apply(self.model.control_flip(flips[fi]))
            fi += 1
        if si < len(samples):
            record(T)

        states = np.array(out_s)
        if single and not unitary:
            states = states[:, 0]
        final = U_tot if unitary else (rho[0] if single else rho)
        return PropagationResult(np.array(out_t), states, final, U_tot)


def propagate(H_static, drive_ops, sequence: PulseSequence, rho0, noise: NoiseSpec | None = None, dt: float = DEFAULT_DT,
              *, dims=None, labels=None, sample_times=None) -> PropagationResult:
    """Functional entry point around :class:`Propagator`.

    Parameters
    ----------
    H_static : (n, n) array_like
        Drive-frame static Hamiltonian.
    drive_ops : dict
        Channel name to raising operator ``R`` (or a :class:`DriveChannel`).
    sequence : PulseSequence
    rho0 : (n, n) array_like
    noise : NoiseSpec, optional
        Requires ``dims`` and ``labels`` describing the tensor structure.
    dt : float
        Maximum step (seconds).
    """
    H_static = np.asarray(H_static, dtype=complex)
    n = H_static.shape[0]
    channels = {k: v if isinstance(v, DriveChannel) else DriveChannel(np.asarray(v, dtype=complex)) for k, v in drive_ops.items()}
    dims = tuple(dims) if dims is not None else (n,)
    labels = tuple(labels) if labels is not None else tuple(f"m{i}" for i in range(len(dims)))
    model = SimulationModel(H_static, channels, dims, labels, np.zeros(n))
    return Propagator(model, dt).run(sequence, rho0, noise=noise, sample_times=sample_times)


def propagate_lab_frame(H0, drive_ops, envelope: PulseEnvelope, omega_d: float, rho0, dt: float = 1e-12):
    """Lab-frame integration of ``H0 + a(t) cos(omega_d t + phi) X`` with
    midpoint steps; meant for validating the RWA on small systems.

    ``drive_ops`` is a list of ``(X, weight, extra_phase)`` entries.
    """
    if dt > 1e-12 * (1 + 1e-9):
        raise ValueError("lab-frame validation requires dt <= 1 ps")
    H0 = np.asarray(H0, dtype=complex)
    rho = np.asarray(rho0, dtype=complex)
    T = envelope.duration
    steps = int(math.ceil(T / dt))
    h = T / steps
    w0, V0 = np.linalg.eigh(H0)
    ops = [(V0.conj().T @ X @ V0, w, ph) for X, w, ph in drive_ops]
    rho = V0.conj().T @ rho @ V0
    # interaction picture w.r.t. H0 keeps the step error set by the drive only
    for k in range(steps):
        t = (k + 0.5) * h
        a = envelope_value(envelope, t)
        phase = np.exp(1j * w0 * t)
        Hk = np.zeros_like(H0)
        for Xd, w, ph in ops:
            Hk += w * a * math.cos(omega_d * t + envelope.phase + ph) * Xd
        Hk = phase[:, None] * Hk * phase.conj()[None, :]
        U = expm(-1j * h * Hk)
        rho = U @ rho @ U.conj().T
    f = np.exp(-1j * w0 * T)
    rho = (f[:, None] * rho) * f.conj()[None, :]
    return V0 @ rho @ V0.conj().T


# --- observables -------------------------------------------------------------------------


@dataclass
class BlochTrajectory:
    times: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    control_state: int
    control_z: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.x, self.y, self.z = (np.asarray(v, dtype=float) for v in (self.x, self.y, self.z))
        if not (len(self.times) == len(self.x) == len(self.y) == len(self.z)):
            raise ValueError("trajectory components must share the time grid")
        if self.control_state not in (0, 1):
            raise ValueError("control_state must be 0 or 1")
        r2 = self.x**2 + self.y**2 + self.z**2
        if np.any(r2 > 1 + 1e-9):
            raise ValueError(f"Bloch vector longer than 1 (max |r|^2 = {r2.max():.12g})")

    def as_array(self) -> np.ndarray:
        return np.stack([self.x, self.y, self.z])

    def records(self):
        cz = self.control_z if self.control_z is not None else np.full(len(self.times), np.nan)
        for t, x, y, z, c in zip(self.times, self.x, self.y, self.z, cz):
            yield [t / NS, x, y, z, c, self.control_state]


def target_bloch(model: SimulationModel, rho):
    """Target-qubit ``<X>, <Y>, <Z>`` on the computational states, summed
    over the control state."""
    rho = np.asarray(rho)
    x = y = z = 0.0
    for c in (0, 1):
        i0, i1 = model.index(c, 0), model.index(c, 1)
        r01 = rho[..., i0, i1]
        x = x + 2 * r01.real
        y = y - 2 * r01.imag
        z = z + (rho[..., i0, i0] - rho[..., i1, i1]).real
    return x, y, z


def control_z(model: SimulationModel, rho):
    """Control ``<Z>`` from the populations of its 0 and 1 levels."""
    rho = np.asarray(rho)
    p = np.real(np.diagonal(rho, axis1=-2, axis2=-1)).reshape(rho.shape[:-2] + (model.dims[0], -1))
    return p[..., 0, :].sum(-1) - p[..., 1, :].sum(-1)


def _pure(model, c, t=0):
    rho = np.zeros((model.dim, model.dim), dtype=complex)
    i = model.index(c, t)
    rho[i, i] = 1.0
    return rho


def _as_model(spec_or_model, drive, omega_d):
    if isinstance(spec_or_model, SimulationModel):
        return spec_or_model
    if isinstance(spec_or_model, EffectiveHamiltonian):
        return effective_model(spec_or_model)
    return cr_model(spec_or_model, drive, omega_d)


def _peak(model: SimulationModel, drive: DriveSpec) -> float:
    # effective models carry the drive strength in their coefficients
    return 1.0 if model.coefficients is not None else drive.amplitude


def simulate_cr_rabi(
    spec,
    drive: DriveSpec,
    tau_max: float,
    n_points: int,
    control_state: int,
    noise: NoiseSpec | None = None,
    *,
    rise: float = 0.0,
    dt: float = DEFAULT_DT,
    omega_d: float | None = None,
) -> BlochTrajectory:
    """Target Bloch vector versus CR pulse length.

    ``spec`` may be a :class:`CircuitSpec`, an :class:`EffectiveHamiltonian`
    or a prepared :class:`SimulationModel`. The control is prepared by an
    ideal flip, the target and B mode start in their ground states. With
    ``rise = 0`` (square pulse) and no noise the evolution is exact.
    Expectations are taken in the drive frame.
    """
    if control_state not in (0, 1):
        raise ValueError("control_state must be 0 or 1")
    if n_points < 2 or tau_max <= 0:
        raise ValueError("need n_points >= 2 and tau_max > 0")
    model = _as_model(spec, drive, omega_d)
    amp = _peak(model, drive)
    times = np.linspace(0.0, tau_max, n_points)
    rho0 = _pure(model, control_state)
    if rise == 0 and noise is None:
        R = model.channels["cr"].raising
        H = model.h_static + 0.5 * amp * (R + R.conj().T)
        w, V = np.linalg.eigh(0.5 * (H + H.conj().T))
        psi0 = V.conj().T[:, model.index(control_state, 0)]
        psis = V @ (np.exp(-1j * np.outer(w, times)) * psi0[:, None])
        states = np.einsum("it,jt->tij", psis, psis.conj())
    elif rise == 0:
        # flat pulse: truncating a longer square pulse is the same experiment, so sample one run
        env = PulseEnvelope(amp, tau_max, 0.0)
        seq = PulseSequence((Segment("cr", 0.0, tau_max, env),))
        states = Propagator(model, dt).run(seq, rho0, noise=noise, sample_times=times).states
    else:
        states = []
        prop = Propagator(model, dt)
        for tau in times:
            if tau == 0:
                states.append(rho0)
                continue
            env = PulseEnvelope(amp, max(tau - 2 * rise, 0.0), min(rise, tau / 2))
            seq = PulseSequence((Segment("cr", 0.0, env.duration, env),))
            states.append(prop.run(seq, rho0, noise=noise).final)
        states = np.array(states)
    x, y, z = target_bloch(model, states)
    return BlochTrajectory(times, x, y, z, control_state, control_z(model, states))


# --- echoed CR ------------------------------------------------------------------------------

ZX90 = np.cos(np.pi / 4) * np.eye(4) - 1j * np.sin(np.pi / 4) * np.kron(np.diag([1.0, -1.0]), np.array([[0, 1], [1, 0]]))
_XC = np.kron(np.array([[0, 1], [1, 0]]), np.eye(2))


def conditional_angle(V4) -> float:
    """Conditional X-rotation angle ``(theta_0 - theta_1)/2`` of a 4x4 block
    (control (x) target), each ``theta_c`` measured about +X after removing
    the block's global phase."""
    thetas = []
    for c in (0, 1):
        R = np.asarray(V4)[2 * c : 2 * c + 2, 2 * c : 2 * c + 2]
        det = np.linalg.det(R)
        if abs(det) < 1e-12:
            raise ValueError("conditional block is singular (full leakage)")
        R = R / np.sqrt(det)
        cval = np.trace(R) / 2
        if cval.real < 0:
            R, cval = -R, -cval
        s = (1j * np.trace(R @ np.array([[0, 1], [1, 0]])) / 2).real
        thetas.append(2 * math.atan2(s, cval.real))
    return 0.5 * (thetas[0] - thetas[1])


@dataclass
class ZXCalibration:
    """Calibrated echoed-CR gate.

    ``tau_half`` is the full length of one CR half (edges included).
    ``z_correction`` holds the virtual-Z angles ``(control, target)`` applied
    after the gate.
    """

    tau_half: float
    tau_analytic: float
    achieved_angle: float
    zx: float
    drive: DriveSpec
    sequence: PulseSequence
    iterations: int
    model: SimulationModel = field(repr=False)
    rise: float = 10 * NS
    gap: float = 5 * NS
    pi_len: float = 40 * NS
    z_correction: tuple[float, float] = (0.0, 0.0)


def _rz2(phi_c, phi_t):
    zc = np.exp(-0.5j * phi_c * np.array([1, -1]))
    zt = np.exp(-0.5j * phi_t * np.array([1, -1]))
    return np.diag(np.kron(zc, zt))


def _echo_block(prop, seq, model):
    """Noiseless gate on the computational states in the local frame, with
    the control flip of the echo undone."""
    U = prop.run(seq, unitary=True).unitary
    F = model.frame_unitary(seq.duration)
    V = (F.conj()[:, None] * U)
    idx = model.computational
    return _XC @ V[np.ix_(idx, idx)]


def calibrate_zx_gate(
    spec,
    drive: DriveSpec,
    *,
    rise: float = 10 * NS,
    gap: float = 5 * NS,
    pi_len: float = 40 * NS,
    max_half: float = 1 * US,
    tol_deg: float = 0.5,
    max_iter: int = 12,
    dt: float = DEFAULT_DT,
    omega_d: float | None = None,
    pulsed_pi: bool = False,
    refine: bool = True,
) -> ZXCalibration:
    """Echoed-CR half-pulse length giving a conditional rotation of pi/2.

    The analytic length solves ``2 |ZX| tau_eff = pi/2`` with ``tau_eff`` the
    envelope area of one half. The drive phase is shifted by pi if needed so
    ZX is positive. The length is then refined by secant steps on the
    simulated conditional angle until it is within ``tol_deg`` of 90 degrees,
    and virtual-Z corrections maximizing the overlap with ZX(pi/2) are
    recorded.
    """
    if isinstance(spec, SimulationModel):
        raise TypeError("calibrate from a CircuitSpec or an EffectiveHamiltonian")
    if isinstance(spec, EffectiveHamiltonian):
        zx = spec.ZX
        if zx < 0:
            spec = replace(spec, ZX=-spec.ZX, ZY=-spec.ZY, IX=-spec.IX, IY=-spec.IY)
            zx = -zx
        model = effective_model(spec)
    else:
        zx = cr_effective_hamiltonian(spec, drive, omega_d=omega_d).coefficients.ZX
        if zx < 0:
            # a pi shift of the drive line flips every drive-linear term
            drive = replace(
                drive,
                phase=float(np.angle(-np.exp(1j * drive.phase))),
                crosstalk_phase=float(np.angle(-np.exp(1j * drive.crosstalk_phase))) if drive.crosstalk else 0.0,
            )
            zx = -zx
        model = cr_model(spec, drive, omega_d)
    if abs(zx) < 1e-12:
        raise ValueError("ZX vanishes; no gate can be calibrated")
    tau_eff = (np.pi / 2) / (2 * zx)
    tau = tau_eff + 2 * rise * (1 - _KAPPA)
    if tau > max_half:
        raise ValueError(f"required half length {tau / NS:.1f} ns exceeds the cap {max_half / NS:.1f} ns")
    tau = max(tau, 2 * rise)
    tau_analytic = tau
    prop = Propagator(model, dt)
    amp = _peak(model, drive)
    phase = 0.0

    def seq_for(t):
        return echoed_cr_sequence(t, gap, pi_len, amplitude=amp, rise=rise, phase=phase, pulsed_pi=pulsed_pi)

    def angle(t):
        return conditional_angle(_echo_block(prop, seq_for(t), model))

    target = np.pi / 2
    tol = np.deg2rad(tol_deg)
    it = 0
    th = angle(tau)
    if refine:
        t_prev, th_prev = tau, th
        tau = tau * target / th if th > 0 else tau * 1.1
        tau = max(tau, 2 * rise)
        th = angle(tau)
        it = 1
        while abs(th - target) > 0.1 * tol and it < max_iter:
            slope = (th - th_prev) / (tau - t_prev) if tau != t_prev else th / tau
            t_prev, th_prev = tau, th
            tau = max(tau + (target - th) / slope, 2 * rise)
            if tau > max_half:
                raise RuntimeError("calibration diverged beyond the gate-length cap")
            th = angle(tau)
            it += 1
        if abs(th - target) > tol:
            raise RuntimeError(f"calibration did not reach {tol_deg} deg (angle {np.rad2deg(th):.3f} deg)")
    seq = seq_for(tau)
    V = _echo_block(prop, seq, model)

    def miss(p):
        return 1.0 - abs(np.trace(ZX90.conj().T @ _rz2(*p) @ V)) / 4

    zc = nelder_mead(miss, np.zeros(2), SimplexOptions(xtol=1e-9, ftol=1e-14), step=0.1)
    return ZXCalibration(
        tau_half=float(tau),
        tau_analytic=float(tau_analytic),
        achieved_angle=float(th),
        zx=float(zx),
        drive=drive,
        sequence=seq,
        iterations=it,
        model=model,
        rise=rise,
        gap=gap,
        pi_len=pi_len,
        z_correction=(float(zc.x[0]), float(zc.x[1])),
    )


def echoed_cr_channel(cal: ZXCalibration, noise: NoiseSpec | None = None, *, dt: float = DEFAULT_DT,
                      renormalize: bool = True) -> Callable:
    """Gate hook ``rho_in (4x4) -> rho_out (4x4)`` for the calibrated echo.

    The output is read in the local frame, the echo's control flip is
    relabeled away and the calibration's virtual-Z angles are applied.
    Population leaked out of the computational states is dropped and the
    block renormalized when ``renormalize`` is set.
    Accepts a single state or a batch ``(k, 4, 4)``.
    """
    model = cal.model
    prop = Propagator(model, dt)
    F = model.frame_unitary(cal.sequence.duration)
    Zc = _rz2(*cal.z_correction)
    post = Zc @ _XC
    U = None if noise is not None else prop.run(cal.sequence, unitary=True).unitary

    def hook(rho4):
        rho4 = np.asarray(rho4, dtype=complex)
        single = rho4.ndim == 2
        batch = rho4[None] if single else rho4
        full = np.zeros((len(batch), model.dim, model.dim), dtype=complex)
        idx = model.computational
        full[(slice(None),) + np.ix_(idx, idx)] = batch
        if U is not None:
            out = U @ full @ U.conj().T
        else:
            out = prop.run(cal.sequence, full, noise=noise).final
        out = (F.conj()[:, None] * out) * F[None, :]
        blk = out[(slice(None),) + np.ix_(idx, idx)]
        blk = post @ blk @ post.conj().T
        if renormalize:
            blk = blk / np.trace(blk, axis1=-2, axis2=-1).real[:, None, None]
        return blk[0] if single else blk

    return hook


def simulate_echoed_cr_evolution(
    spec,
    drive: DriveSpec,
    tau_grid,
    noise: NoiseSpec | None = None,
    *,
    control_state: int = 0,
    rise: float = 10 * NS,
    gap: float = 5 * NS,
    pi_len: float = 40 * NS,
    dt: float = DEFAULT_DT,
    omega_d: float | None = None,
    pulsed_pi: bool = False,
) -> BlochTrajectory:
    """Target Bloch vector and control ``<Z>`` after echoes of varying
    half-length, read out in the local frame."""
    model = _as_model(spec, drive, omega_d)
    prop = Propagator(model, dt)
    amp = _peak(model, drive)
    rho0 = _pure(model, control_state)
    states = []
    for tau in np.asarray(tau_grid, dtype=float):
        seq = echoed_cr_sequence(tau, gap, pi_len, amplitude=amp, rise=rise, pulsed_pi=pulsed_pi)
        rho = prop.run(seq, rho0, noise=noise).final
        F = model.frame_unitary(seq.duration)
        states.append((F.conj()[:, None] * rho) * F[None, :])
    states = np.array(states)
    x, y, z = target_bloch(model, states)
    return BlochTrajectory(np.asarray(tau_grid, dtype=float), x, y, z, control_state, control_z(model, states))
