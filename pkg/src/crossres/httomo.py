"""Hamiltonian tomography from conditional target-qubit Bloch trajectories.

Convention: the generalized field is ``B = (Omega_x, Omega_y, -Delta)`` and the
Bloch vector obeys ``dr/dt = G r = B x r``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .dynamics import BlochTrajectory
from .effective import EffectiveHamiltonian
from .numerics import SimplexOptions, expm, nelder_mead

__all__ = [
    "GeneralizedField",
    "bloch_generator",
    "bloch_closed_form",
    "BlochFit",
    "fit_bloch_trajectory",
    "BlochTrajectoryFitter",
    "HTResult",
    "hamiltonian_tomography",
    "HamiltonianTomography",
]


@dataclass(frozen=True)
class GeneralizedField:
    omega_x: float
    omega_y: float
    delta: float

    def __post_init__(self):
        if not np.all(np.isfinite([self.omega_x, self.omega_y, self.delta])):
            raise ValueError("field components must be finite")

    @property
    def B(self) -> float:
        return float(np.sqrt(self.omega_x**2 + self.omega_y**2 + self.delta**2))

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.omega_x, self.omega_y, -self.delta])

    def in_mhz(self) -> dict:
        s = 2e6 * np.pi
        return {"omega_x_MHz": self.omega_x / s, "omega_y_MHz": self.omega_y / s, "delta_MHz": self.delta / s}


def bloch_generator(field: GeneralizedField) -> np.ndarray:
    ox, oy, d = field.omega_x, field.omega_y, field.delta
    return np.array([[0.0, d, oy], [-d, 0.0, -ox], [-oy, ox, 0.0]])


def bloch_closed_form(field: GeneralizedField, t, r0=(0.0, 0.0, 1.0)):
    """``(x, y, z)`` at times ``t`` starting from ``r0``.

    The closed form holds for ``r0 = (0, 0, 1)``; any other start goes
    through the matrix exponential of the generator.
    """
    t = np.asarray(t, dtype=float)
    r0 = np.asarray(r0, dtype=float)
    if not np.allclose(r0, (0.0, 0.0, 1.0), atol=0, rtol=0):
        G = bloch_generator(field)
        out = np.array([expm(G * tk) @ r0 for tk in np.atleast_1d(t)]).T
        return tuple(v.reshape(t.shape) for v in out)
    ox, oy, d = field.omega_x, field.omega_y, field.delta
    B2 = ox**2 + oy**2 + d**2
    if B2 == 0:
        return np.zeros_like(t), np.zeros_like(t), np.ones_like(t)
    B = np.sqrt(B2)
    c = np.cos(B * t)
    s = np.sin(B * t)
    x = (-ox * d * (1 - c) + oy * B * s) / B2
    y = (-oy * d * (1 - c) - ox * B * s) / B2
    z = (d**2 + (ox**2 + oy**2) * c) / B2
    return x, y, z


@dataclass
class BlochFit:
    field: GeneralizedField
    gamma: float
    residual: float
    n_starts_converged: int
    low_confidence: bool
    covariance: np.ndarray | None = None
    times: np.ndarray | None = None

    def predict(self, t):
        x, y, z = bloch_closed_form(self.field, t)
        damp = np.exp(-self.gamma * np.asarray(t, dtype=float))
        return np.stack([damp * x, damp * y, damp * z])

    def report(self) -> dict:
        d = self.field.in_mhz()
        d.update(gamma_per_us=self.gamma * 1e-6, residual=self.residual, n_starts_converged=self.n_starts_converged,
                 low_confidence=self.low_confidence)
        return d


def _model(p, t):
    ox, oy, d, g = p
    B2 = ox * ox + oy * oy + d * d
    damp = np.exp(-abs(g) * t)
    if B2 == 0:
        return np.stack([0 * t, 0 * t, damp])
    B = np.sqrt(B2)
    c = np.cos(B * t)
    s = np.sin(B * t)
    out = np.empty((3, t.size))
    out[0] = (-ox * d * (1 - c) + oy * B * s) / B2
    out[1] = (-oy * d * (1 - c) - ox * B * s) / B2
    out[2] = (d * d + (ox * ox + oy * oy) * c) / B2
    return out * damp


def _initial_guesses(t, data, n_starts):
    x, y, z = data
    tmax = t[-1] - t[0]
    n = len(t)
    # dominant frequency of z(t) from a zero-padded FFT on a uniform resample
    tu = np.linspace(t[0], t[-1], n)
    zu = np.interp(tu, t, z)
    pad = 16 * n
    spec = np.abs(np.fft.rfft(zu - zu.mean(), pad))
    freqs = np.fft.rfftfreq(pad, tu[1] - tu[0])
    k = int(np.argmax(spec[1:]) + 1)
    B = 2 * np.pi * freqs[k]
    # initial slopes: dx/dt(0) = Omega_y, dy/dt(0) = -Omega_x
    m = max(3, n // 20)
    sx = np.polyfit(t[:m] - t[0], x[:m], 2)[1]
    sy = np.polyfit(t[:m] - t[0], y[:m], 2)[1]
    phi = np.arctan2(sx, -sy)
    zbar = float(np.clip(np.mean(z), 0.0, 1.0))
    perp = B * np.sqrt(max(1.0 - zbar, 1e-6))
    ox, oy = perp * np.cos(phi), perp * np.sin(phi)
    num = np.mean(x) * ox + np.mean(y) * oy
    delta = -num * B**2 / perp**2 if perp > 0 else 0.0
    delta = float(np.clip(delta, -B, B))
    # crude decay guess from the oscillation envelope
    amp = np.sqrt((x - x.mean()) ** 2 + (y - y.mean()) ** 2 + (z - z.mean()) ** 2)
    half = n // 2
    a0, a1 = amp[:half].max(), amp[half:].max()
    g = float(np.log(a0 / a1) / (0.5 * tmax)) if a1 > 1e-9 and a0 > a1 else 0.0
    starts = [
        (ox, oy, delta, 0.0),
        (ox, oy, delta, g),
        (ox, oy, -delta, g),
        (ox * 1.05, oy * 1.05, delta * 0.95, 0.5 * g),
    ]
    return [np.array(s) for s in starts[:n_starts]], B


def fit_bloch_trajectory(traj: BlochTrajectory, *, n_starts: int = 4, opts: SimplexOptions | None = None) -> BlochFit:
    """Joint least-squares fit of ``exp(-Gamma t) r(t)`` to all three components.

    Nelder-Mead runs from ``n_starts`` initial points built from the FFT
    frequency of ``z``, the initial slopes of ``x, y`` and time averages; the
    lowest residual wins (ties go to the earlier start). Parameters are
    optimized in units of ``1 / t_max``.
    """
    t = np.asarray(traj.times, dtype=float)
    data = np.stack([traj.x, traj.y, traj.z])
    n = len(t)
    if n < 4:
        raise ValueError("need at least 4 samples")
    tmax = float(t[-1] - t[0])
    if tmax <= 0:
        raise ValueError("time grid must be increasing")
    if np.ptp(data, axis=1).max() < 1e-6:
        # flat trajectory: zero field, fit the decay of z only
        zz = np.clip(data[2], 1e-12, None)
        g = max(float(-np.polyfit(t, np.log(zz), 1)[0]), 0.0) if np.all(data[2] > 0) else 0.0
        resid = float(np.sqrt(np.mean((data - _model(np.array([0, 0, 0, g]), t)) ** 2)))
        return BlochFit(GeneralizedField(0.0, 0.0, 0.0), g, resid, 1, n < 12, None, t)

    starts, B0 = _initial_guesses(t, data, n_starts)
    scale = 1.0 / tmax
    ts = t / tmax

    def cost(q):
        return float(np.sum((_model(q, ts) - data) ** 2))

    opts = opts or SimplexOptions(max_iter=8_000, xtol=1e-9, ftol=1e-14, initial_step=0.05)
    results = []
    for s in starts:
        q0 = s / scale
        r = nelder_mead(cost, q0, opts, step=0.05 * max(np.max(np.abs(q0)), 1.0))
        # one restart polishes a collapsed simplex
        r2 = nelder_mead(cost, r.x, opts, step=1e-3 * max(np.max(np.abs(r.x)), 1.0))
        results.append(r2 if r2.fun <= r.fun else r)
    order = sorted(range(len(results)), key=lambda i: (results[i].fun, i))
    best = results[order[0]]
    p = best.x * scale
    field = GeneralizedField(float(p[0]), float(p[1]), float(p[2]))
    resid = float(np.sqrt(best.fun / data.size))
    low = n < 12 or field.B * tmax < np.pi
    n_conv = sum(r.converged for r in results)
    cov = _covariance(p, t, data, resid)
    return BlochFit(field, abs(float(p[3])), resid, int(n_conv), bool(low), cov, t)


def _covariance(p, t, data, resid):
    """Gauss-Newton covariance from a finite-difference Jacobian."""
    J = []
    for i in range(4):
        h = 1e-6 * max(abs(p[i]), 1.0 / max(t[-1], 1e-300))
        dp = np.zeros(4)
        dp[i] = h
        J.append(((_model(p + dp, t) - _model(p - dp, t)) / (2 * h)).ravel())
    J = np.array(J).T
    try:
        return np.linalg.pinv(J.T @ J) * resid**2
    except np.linalg.LinAlgError:
        return None


class BlochTrajectoryFitter(RegressorMixin, BaseEstimator):
    """Estimator wrapper: ``fit(traj)`` then ``predict(t) -> (3, n)``.

    ``fit`` accepts a :class:`BlochTrajectory` or ``(t, xyz)`` with ``xyz`` of
    shape ``(n, 3)``.
    """

    def __init__(self, n_starts=4, max_iter=8_000):
        self.n_starts = n_starts
        self.max_iter = max_iter

    def fit(self, X, y=None, control_state=0):
        if not isinstance(X, BlochTrajectory):
            xyz = np.asarray(y, dtype=float)
            X = BlochTrajectory(np.asarray(X, dtype=float).ravel(), xyz[:, 0], xyz[:, 1], xyz[:, 2], control_state)
        opts = SimplexOptions(max_iter=self.max_iter, xtol=1e-9, ftol=1e-14, initial_step=0.05)
        self.fit_ = fit_bloch_trajectory(X, n_starts=self.n_starts, opts=opts)
        self.field_ = self.fit_.field
        self.gamma_ = self.fit_.gamma
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "fit_")
        return self.fit_.predict(np.asarray(X, dtype=float).ravel()).T

    def score(self, X, y=None):
        """Negative RMS residual on a trajectory."""
        check_is_fitted(self, "fit_")
        if isinstance(X, BlochTrajectory):
            pred = self.fit_.predict(X.times)
            return -float(np.sqrt(np.mean((pred - X.as_array()) ** 2)))
        return -float(np.sqrt(np.mean((self.predict(X) - np.asarray(y)) ** 2)))


@dataclass
class HTResult:
    coefficients: EffectiveHamiltonian
    fit0: BlochFit
    fit1: BlochFit
    gamma_mismatch: bool

    def in_mhz(self) -> dict:
        return {k: v for k, v in self.coefficients.in_mhz().items() if k not in ("II", "ZI")}


def hamiltonian_tomography(traj0, traj1, *, n_starts: int = 4) -> HTResult:
    """Six CR coefficients from trajectories with the control in 0 and 1.

    ``ZX = (Ox0 - Ox1)/2``, ``IX = (Ox0 + Ox1)/2`` and likewise for Y; the Z
    terms carry the ``-Delta`` sign of the field: ``ZZ = -(D0 - D1)/2``,
    ``IZ = -(D0 + D1)/2``. ``II`` and ``ZI`` are not observable and are 0.
    Either argument may be a trajectory or an existing :class:`BlochFit`.
    """
    f0 = traj0 if isinstance(traj0, BlochFit) else fit_bloch_trajectory(traj0, n_starts=n_starts)
    f1 = traj1 if isinstance(traj1, BlochFit) else fit_bloch_trajectory(traj1, n_starts=n_starts)
    a, b = f0.field, f1.field
    coeffs = EffectiveHamiltonian(
        IX=0.5 * (a.omega_x + b.omega_x),
        ZX=0.5 * (a.omega_x - b.omega_x),
        IY=0.5 * (a.omega_y + b.omega_y),
        ZY=0.5 * (a.omega_y - b.omega_y),
        IZ=-0.5 * (a.delta + b.delta),
        ZZ=-0.5 * (a.delta - b.delta),
    )
    g0, g1 = f0.gamma, f1.gamma
    # only meaningful when the decay is resolved within the record
    span = max(float(np.ptp(f.times)) for f in (f0, f1))
    resolved = max(g0, g1) * span > 0.05
    mismatch = bool(resolved and max(g0, g1) > 3 * max(min(g0, g1), 1e-300))
    if mismatch:
        warnings.warn(f"decay rates of the two fits differ by more than 3x ({g0:.3e}, {g1:.3e})", RuntimeWarning,
                      stacklevel=2)
    return HTResult(coeffs, f0, f1, mismatch)


class HamiltonianTomography(BaseEstimator):
    """``fit([traj0, traj1])`` stores ``coefficients_`` (an
    :class:`EffectiveHamiltonian`)."""

    def __init__(self, n_starts=4):
        self.n_starts = n_starts

    def fit(self, X, y=None):
        traj0, traj1 = X
        self.result_ = hamiltonian_tomography(traj0, traj1, n_starts=self.n_starts)
        self.coefficients_ = self.result_.coefficients
        return self

    def transform(self, X=None):
        check_is_fitted(self, "coefficients_")
        return np.array([[getattr(self.coefficients_, k) for k in ("ZX", "ZY", "ZZ", "IX", "IY", "IZ")]])
