"""Two-qubit Clifford randomized benchmarking and coherence-limited fidelities.

The Clifford group is enumerated once by breadth-first search over
Heisenberg-picture tableaux from ``{H1, H2, S1, S2, CNOT}`` and cached;
sampling draws a uniform group index. Channels act on 4x4 density matrices in
``control (x) target`` order.
"""

from __future__ import annotations

import logging
import warnings
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import curve_fit
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .dynamics import mode_kraus
from .numerics import spawn_rngs

log = logging.getLogger(__name__)

__all__ = [
    "N_CLIFFORD2",
    "CliffordGroup",
    "CliffordElement",
    "clifford_group",
    "clifford_from_unitary",
    "sample_clifford2",
    "DurationModel",
    "CliffordChannel",
    "ideal_channel",
    "depolarizing_channel",
    "coherence_channel",
    "superoperator_channel",
    "superoperator_from_map",
    "depolarizing_parameter",
    "RbFitError",
    "RbResult",
    "fit_rb_decay",
    "run_rb",
    "RandomizedBenchmarking",
    "InterleavedResult",
    "interleaved_rb",
    "interleaved_error",
    "CoherenceParams",
    "coherence_limit_1q",
    "coherence_limit_2q",
    "kraus_limit_1q",
    "kraus_limit_2q",
]

N_CLIFFORD2 = 11_520

_I2 = np.eye(2, dtype=complex)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Y = np.array([[0, -1j], [1j, 0]])
_Z = np.diag([1.0 + 0j, -1.0])
_P1 = (_I2, _X, _Y, _Z)
# 16 two-qubit Paulis, index 4 i + j for P_i (x) P_j
_P2 = np.array([np.kron(a, b) for a in _P1 for b in _P1])
# Heisenberg generators X1, Z1, X2, Z2
_GEN = _P2[[4, 12, 1, 3]]
# Pauli index -> symplectic bits (x1, z1, x2, z2)
_XZ = {0: (0, 0), 1: (1, 0), 2: (1, 1), 3: (0, 1)}
_BITS = np.array([[*_XZ[i], *_XZ[j]] for i in range(4) for j in range(4)], dtype=np.uint8)

_H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
_S = np.diag([1.0 + 0j, 1j])
_CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
_GENERATORS = (np.kron(_H, _I2), np.kron(_I2, _H), np.kron(_S, _I2), np.kron(_I2, _S), _CNOT)
_IS_TWO_QUBIT = (False, False, False, False, True)


def _keys(U):
    """Tableau keys of a batch ``(k, 4, 4)`` of Clifford unitaries.

    Each generator image ``U G U^dag = s P`` is encoded as ``2 p + (s < 0)``
    and the four codes are packed base 32. Raises if an image is not a signed
    Pauli.
    """
    img = np.einsum("kab,gbc,kdc->kgad", U, _GEN, U.conj(), optimize=True)
    coef = np.einsum("pba,kgab->kgp", _P2.conj(), img, optimize=True).real / 4
    p = np.argmax(np.abs(coef), axis=-1)
    s = np.take_along_axis(coef, p[..., None], -1)[..., 0]
    if np.any(np.abs(np.abs(s) - 1) > 1e-8):
        raise ValueError("unitary is not a Clifford")
    code = 2 * p + (s < 0)
    return code @ (32 ** np.arange(4))


def _fix_phase(U):
    flat = U.reshape(len(U), -1)
    k = np.argmax(np.abs(flat) > 1e-9, axis=1)
    ph = flat[np.arange(len(U)), k]
    return U * (np.abs(ph) / ph)[:, None, None]


class CliffordGroup:
    """The enumerated group: phase-fixed unitaries, tableau keys, inverse and
    multiplication-by-generator tables and minimal CNOT counts."""

    def __init__(self):
        start = np.eye(4, dtype=complex)[None]
        units = [start[0]]
        keys = [int(_keys(start)[0])]
        index = {keys[0]: 0}
        nbr = [[-1] * len(_GENERATORS)]
        frontier = [0]
        while frontier:
            F = np.array([units[k] for k in frontier])
            new_frontier = []
            for g, G in enumerate(_GENERATORS):
                V = _fix_phase(np.einsum("ab,kbc->kac", G, F))
                for k, key, v in zip(frontier, _keys(V), V):
                    key = int(key)
                    j = index.get(key)
                    if j is None:
                        j = len(units)
                        index[key] = j
                        units.append(v)
                        keys.append(key)
                        nbr.append([-1] * len(_GENERATORS))
                        new_frontier.append(j)
                    nbr[k][g] = j
            frontier = new_frontier
        self.unitaries = np.array(units)
        self.keys = np.array(keys, dtype=np.int64)
        self.index = index
        self.neighbors = np.array(nbr)
        self.inverse = np.array([index[int(k)] for k in _keys(self.unitaries.conj().transpose(0, 2, 1))])
        self.cnot_count = self._cnot_counts()

    def __len__(self):
        return len(self.unitaries)

    def _cnot_counts(self):
        # 0-1 BFS: local generators cost 0, CNOT costs 1
        n = len(self.unitaries)
        dist = np.full(n, np.iinfo(np.int64).max)
        dist[0] = 0
        dq = deque([0])
        while dq:
            k = dq.popleft()
            for g, j in enumerate(self.neighbors[k]):
                w = int(_IS_TWO_QUBIT[g])
                if dist[k] + w < dist[j]:
                    dist[j] = dist[k] + w
                    (dq.append if w else dq.appendleft)(j)
        return dist

    def lookup(self, U) -> int:
        U = np.asarray(U, dtype=complex)
        return self.index[int(_keys(U[None])[0])]

    def compose(self, a: int, b: int) -> int:
        """Index of ``U_a U_b`` (``b`` acts first)."""
        return self.lookup(self.unitaries[a] @ self.unitaries[b])

    def tableau(self, k: int):
        """``(M, r)``: rows are the symplectic images ``(x1, z1, x2, z2)`` of
        ``X1, Z1, X2, Z2`` and ``r`` their sign bits."""
        key = int(self.keys[k])
        codes = [(key >> (5 * i)) & 31 for i in range(4)]
        M = _BITS[[c >> 1 for c in codes]]
        r = np.array([c & 1 for c in codes], dtype=np.uint8)
        return M, r


_OMEGA = np.kron(np.eye(2, dtype=np.uint8), np.array([[0, 1], [1, 0]], dtype=np.uint8))


def tableau_is_symplectic(M) -> bool:
    return bool(np.array_equal((M @ _OMEGA @ M.T) % 2, _OMEGA))


@lru_cache(maxsize=1)
def clifford_group() -> CliffordGroup:
    """Enumerate (once per process) and return the two-qubit Clifford group."""
    G = CliffordGroup()
    if len(G) != N_CLIFFORD2:
        raise RuntimeError(f"enumeration produced {len(G)} elements")
    return G


@dataclass(frozen=True)
class CliffordElement:
    index: int

    @property
    def group(self) -> CliffordGroup:
        return clifford_group()

    @property
    def unitary(self) -> np.ndarray:
        return self.group.unitaries[self.index]

    @property
    def tableau(self):
        return self.group.tableau(self.index)

    @property
    def n_2q(self) -> int:
        return int(self.group.cnot_count[self.index])

    def inverse(self) -> "CliffordElement":
        return CliffordElement(int(self.group.inverse[self.index]))

    def __matmul__(self, other: "CliffordElement") -> "CliffordElement":
        return CliffordElement(self.group.compose(self.index, other.index))

    def conjugate(self, pauli: int) -> tuple[int, int]:
        """``U P U^dag = sign * P'`` for Pauli index ``pauli``; returns
        ``(sign, index')``."""
        U = self.unitary
        img = U @ _P2[pauli] @ U.conj().T
        coef = np.einsum("pba,ab->p", _P2.conj(), img).real / 4
        p = int(np.argmax(np.abs(coef)))
        return int(np.sign(coef[p])), p

    def is_identity(self) -> bool:
        return self.index == 0


def clifford_from_unitary(U) -> CliffordElement:
    return CliffordElement(clifford_group().lookup(U))


def sample_clifford2(rng: np.random.Generator) -> CliffordElement:
    """Uniform random two-qubit Clifford."""
    return CliffordElement(int(rng.integers(N_CLIFFORD2)))


# --- noisy Clifford channels ----------------------------------------------------------------


@dataclass(frozen=True)
class DurationModel:
    """Clifford duration ``n_2q t_2q + n_1q t_1q`` with ``n_1q`` the
    ``n_2q + 1`` single-qubit layers times the mean pulse count per layer."""

    t_2q: float = 220e-9
    t_1q: float = 45e-9
    pulses_per_layer: float = 1.875

    def duration(self, n_2q: int) -> float:
        return n_2q * self.t_2q + (n_2q + 1) * self.pulses_per_layer * self.t_1q

    def mean_duration(self) -> float:
        counts = np.bincount(clifford_group().cnot_count)
        return float(sum(c * self.duration(k) for k, c in enumerate(counts)) / counts.sum())


def _vec_apply(S, rho):
    return (S @ rho.reshape(-1)).reshape(rho.shape)


class CliffordChannel:
    """Noisy Clifford: the ideal unitary followed by a noise superoperator
    chosen by the element (``noise(element) -> 16x16`` or ``None``)."""

    def __init__(self, noise: Callable[[CliffordElement], np.ndarray | None] | None = None, name: str = "channel"):
        self.noise = noise
        self.name = name

    def __call__(self, element: CliffordElement, rho):
        U = element.unitary
        out = U @ rho @ U.conj().T
        S = None if self.noise is None else self.noise(element)
        return out if S is None else _vec_apply(S, out)


def ideal_channel() -> CliffordChannel:
    return CliffordChannel(None, "ideal")


def _depol_superop(p: float) -> np.ndarray:
    # rho -> (1 - p) rho + p tr(rho) I/4, row-major
    I = np.eye(4)
    return (1 - p) * np.eye(16) + p * np.outer(I.ravel(), I.ravel()) / 4


def depolarizing_channel(p: float) -> CliffordChannel:
    if not 0 <= p <= 1:
        raise ValueError("depolarizing parameter must lie in [0, 1]")
    S = _depol_superop(p)
    return CliffordChannel(lambda e: S, f"depolarizing:{p}")


def _two_qubit_decoherence(c1: "CoherenceParams", c2: "CoherenceParams", t: float) -> np.ndarray:
    """Row-major superoperator of independent amplitude damping + dephasing
    on both qubits for time ``t``."""
    S = []
    for c in (c1, c2):
        g1 = 1.0 / c.t1
        gphi = max(1.0 / c.t2 - 0.5 * g1, 0.0)
        K = mode_kraus(2, g1, gphi, t)
        S.append(sum(np.kron(k, k.conj()) for k in K))
    # row-major vec of a (x) b ordering: indices (i1 i2),(j1 j2)
    S12 = np.einsum("acbd,egfh->aecgbfdh", S[0].reshape(2, 2, 2, 2), S[1].reshape(2, 2, 2, 2))
    return S12.reshape(16, 16)


def coherence_channel(c1: "CoherenceParams", c2: "CoherenceParams", durations: DurationModel | float | None = None
                      ) -> CliffordChannel:
    """T1/T2 noise after each Clifford for its estimated duration.

    ``durations`` is a :class:`DurationModel` or a fixed duration in seconds.
    """
    durations = DurationModel() if durations is None else durations
    cache: dict[int, np.ndarray] = {}

    def noise(e: CliffordElement):
        key = 0 if not isinstance(durations, DurationModel) else e.n_2q
        if key not in cache:
            t = float(durations) if not isinstance(durations, DurationModel) else durations.duration(key)
            cache[key] = _two_qubit_decoherence(c1, c2, t)
        return cache[key]

    return CliffordChannel(noise, "coherence")


def superoperator_from_map(fn: Callable) -> np.ndarray:
    """Row-major superoperator of a linear map on 4x4 matrices.

    The map is probed on the 16 tomography input states (all valid density
    matrices), so hooks that validate their input can be used directly.
    """
    from .qpt import input_states

    ins = input_states().states
    try:
        outs = np.asarray(fn(ins))
        if outs.shape != ins.shape:
            raise ValueError
    except (ValueError, TypeError):
        outs = np.array([fn(r) for r in ins])
    X = ins.reshape(16, 16).T
    Y = outs.reshape(16, 16).T
    return np.linalg.solve(X.T, Y.T).T


def superoperator_channel(S) -> Callable:
    """Fixed gate channel ``rho -> S vec(rho)``."""
    S = np.asarray(S, dtype=complex)
    if S.shape != (16, 16):
        raise ValueError("superoperator must be 16x16")
    return lambda rho: _vec_apply(S, rho)


def depolarizing_parameter(S) -> float:
    """Twirled depolarizing parameter ``(tr S - 1) / (d^2 - 1)``."""
    return float((np.trace(S).real - 1) / 15)


# --- RB --------------------------------------------------------------------------------


class RbFitError(RuntimeError):
    """Survival data does not decay."""


def _decay(m, A, alpha, B):
    return A * alpha**m + B


@dataclass
class RbResult:
    lengths: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    n_seq: int
    A: float
    B: float
    alpha: float
    alpha_err: float
    residual: float
    survival: np.ndarray | None = field(default=None, repr=False)

    @property
    def r(self) -> float:
        return 0.75 * (1 - self.alpha)

    @property
    def r_err(self) -> float:
        return 0.75 * self.alpha_err

    @property
    def fidelity(self) -> float:
        return 1 - self.r

    def records(self):
        for m, mu, s in zip(self.lengths, self.mean, self.std):
            yield {"length": int(m), "mean_survival": float(mu), "std": float(s), "n_seq": self.n_seq}

    def summary(self) -> dict:
        return {"A": self.A, "B": self.B, "alpha": self.alpha, "r": self.r, "fidelity": self.fidelity,
                "stderr": self.alpha_err, "fidelity_stderr": self.r_err, "residual": self.residual}


def fit_rb_decay(lengths, mean, std=None, n_seq: int = 1) -> tuple[np.ndarray, np.ndarray, float]:
    """Weighted fit of ``A alpha^m + B``.

    Returns ``(params, covariance, rms residual)``. Flat data at unit survival
    gives ``alpha = 1`` with zero uncertainty.
    """
    m = np.asarray(lengths, dtype=float)
    y = np.asarray(mean, dtype=float)
    if len(m) < 3:
        raise RbFitError("need at least three lengths")
    if np.ptp(y) < 1e-12:
        if abs(y[0] - 1) < 1e-9:
            return np.array([0.0, 1.0, 1.0]), np.zeros((3, 3)), 0.0
        raise RbFitError("survival does not decay")
    if np.polyfit(m, y, 1)[0] >= 0:
        raise RbFitError("survival does not decay")
    sig = None
    absolute = False
    if std is not None:
        se = np.asarray(std, dtype=float) / np.sqrt(max(n_seq, 1))
        if np.all(se > 0):
            sig, absolute = se, True
        elif np.any(se > 0):
            sig, absolute = np.maximum(se, se[se > 0].min()), True
    B0 = 0.25
    A0 = max(y[0] - B0, 1e-3)
    ratio = np.clip((y[-1] - B0) / A0, 1e-6, 1.0)
    a0 = float(np.clip(ratio ** (1.0 / max(m[-1] - m[0], 1.0)), 0.5, 0.9999))
    try:
        p, cov = curve_fit(_decay, m, y, p0=(A0, a0, B0), sigma=sig, absolute_sigma=absolute,
                           bounds=([0.0, 0.0, 0.0], [1.5, 1.0, 1.0]), max_nfev=20_000)
    except (RuntimeError, ValueError) as exc:
        raise RbFitError(f"decay fit failed: {exc}") from exc
    if not np.all(np.isfinite(cov)):
        cov = np.zeros((3, 3))
    res = float(np.sqrt(np.mean((_decay(m, *p) - y) ** 2)))
    return p, cov, res


_GROUND = np.zeros((4, 4), dtype=complex)
_GROUND[0, 0] = 1


def _run_sequences(lengths, n_seq, gate_channel, rng, interleave=None, shots=None):
    G = clifford_group()
    streams = spawn_rngs(rng, n_seq)
    surv = np.empty((n_seq, len(lengths)))
    for s, r in enumerate(streams):
        for i, m in enumerate(lengths):
            rho = _GROUND.copy()
            acc = 0
            for idx in r.integers(N_CLIFFORD2, size=int(m)):
                e = CliffordElement(int(idx))
                rho = gate_channel(e, rho)
                acc = G.compose(e.index, acc)
                if interleave is not None:
                    g_elem, g_channel = interleave
                    rho = g_channel(rho)
                    acc = G.compose(g_elem.index, acc)
            rho = gate_channel(CliffordElement(int(G.inverse[acc])), rho)
            p = float(np.clip(rho[0, 0].real, 0.0, 1.0))
            if shots:
                p = r.binomial(int(shots), p) / shots
            surv[s, i] = p
    return surv


def run_rb(lengths: Sequence[int], n_seq: int, gate_channel: CliffordChannel, rng, *, shots: int | None = None,
           interleave=None) -> RbResult:
    """Standard RB: ``m`` random Cliffords plus the exact recovery, from
    ``|00>``; survival is the ``|00>`` population.

    ``rng`` is a Generator or a seed; sequence ``s`` draws from the ``s``-th
    spawned substream. ``shots`` adds binomial readout noise.
    ``interleave = (element, channel)`` inserts a gate after every Clifford.
    """
    lengths = np.asarray(lengths, dtype=int)
    if np.any(lengths < 0) or n_seq < 1:
        raise ValueError("lengths must be non-negative and n_seq positive")
    surv = _run_sequences(lengths, n_seq, gate_channel, rng, interleave, shots)
    mean = surv.mean(axis=0)
    std = surv.std(axis=0, ddof=1) if n_seq > 1 else np.zeros(len(lengths))
    if shots and n_seq == 1:
        std = np.sqrt(mean * (1 - mean) / shots)
    p, cov, res = fit_rb_decay(lengths, mean, std, n_seq)
    return RbResult(lengths, mean, std, n_seq, float(p[0]), float(p[2]), float(p[1]), float(np.sqrt(max(cov[1, 1], 0))),
                    res, surv)


class RandomizedBenchmarking(BaseEstimator):
    """``fit(gate_channel)`` runs standard RB and stores ``result_`` and
    ``alpha_``."""

    def __init__(self, lengths=(1, 5, 10, 15, 20, 25, 30, 35, 40), n_seq=17, shots=None, seed=0):
        self.lengths = lengths
        self.n_seq = n_seq
        self.shots = shots
        self.seed = seed

    def fit(self, X, y=None):
        self.result_ = run_rb(self.lengths, self.n_seq, X, self.seed, shots=self.shots)
        self.alpha_ = self.result_.alpha
        return self

    def score(self, X=None, y=None):
        check_is_fitted(self, "result_")
        return self.result_.fidelity


def interleaved_error(alpha_ref: float, alpha_int: float, d: int = 4) -> float:
    return (d - 1) * (1 - alpha_int / alpha_ref) / d


@dataclass
class InterleavedResult:
    reference: RbResult
    interleaved: RbResult
    error: float
    error_stderr: float
    unphysical: bool

    @property
    def fidelity(self) -> float:
        return 1 - self.error

    def summary(self) -> dict:
        return {"alpha_ref": self.reference.alpha, "alpha_int": self.interleaved.alpha, "gate_error": self.error,
                "gate_fidelity": self.fidelity, "stderr": self.error_stderr, "unphysical": self.unphysical}


def interleaved_rb(lengths, n_seq, reference_channel: CliffordChannel, interleaved_gate_channel: Callable, rng, *,
                   gate=None, shots: int | None = None) -> InterleavedResult:
    """Reference and interleaved RB; ``r = (d-1)(1 - a_int/a_ref)/d``.

    ``interleaved_gate_channel`` maps a 4x4 state through the noisy gate
    whose ideal unitary is ``gate`` (a :class:`CliffordElement` or unitary,
    default identity).
    """
    if gate is None:
        g = CliffordElement(0)
    elif isinstance(gate, CliffordElement):
        g = gate
    else:
        g = clifford_from_unitary(gate)
    r_ref, r_int = spawn_rngs(rng, 2)
    ref = run_rb(lengths, n_seq, reference_channel, r_ref, shots=shots)
    inter = run_rb(lengths, n_seq, reference_channel, r_int, shots=shots, interleave=(g, interleaved_gate_channel))
    err = interleaved_error(ref.alpha, inter.alpha)
    ratio = inter.alpha / ref.alpha
    rel = np.hypot(inter.alpha_err / inter.alpha, ref.alpha_err / ref.alpha)
    stderr = 0.75 * ratio * rel
    unphysical = bool(inter.alpha - ref.alpha > 2 * np.hypot(inter.alpha_err, ref.alpha_err) + 1e-12)
    if unphysical:
        warnings.warn("interleaved decay exceeds reference decay beyond noise", RuntimeWarning, stacklevel=2)
    return InterleavedResult(ref, inter, float(err), float(stderr), unphysical)


# --- coherence limits -----------------------------------------------------------------------


@dataclass(frozen=True)
class CoherenceParams:
    """Single-qubit relaxation and echo times (s) and an optional gate time."""

    t1: float
    t2: float
    tau_g: float | None = None

    def __post_init__(self):
        if self.t1 <= 0 or self.t2 <= 0:
            raise ValueError("T1 and T2 must be positive")
        if self.t2 > 2 * self.t1 * (1 + 1e-12):
            raise ValueError(f"T2 = {self.t2:.3g} exceeds 2 T1 = {2 * self.t1:.3g}")
        if self.tau_g is not None and self.tau_g < 0:
            raise ValueError("gate time must be non-negative")


_VARIANTS = {"as_printed": "as_printed", "corrected": "completed", "completed": "completed"}


def _variant(v):
    try:
        return _VARIANTS[v]
    except KeyError:
        raise ValueError(f"unknown variant {v!r}; choose as_printed or completed") from None


def _tau(p, tau_g):
    t = p.tau_g if tau_g is None else tau_g
    if t is None:
        raise ValueError("gate time is required")
    if t < 0:
        raise ValueError("gate time must be non-negative")
    return float(t)


def coherence_limit_1q(p: CoherenceParams, variant: str = "completed", tau_g: float | None = None) -> float:
    """Decoherence-limited single-qubit gate error.

    ``as_printed`` keeps ``+1/3 exp(-t/T1)`` and gives 1/3 at ``t = 0``;
    ``completed`` (alias ``corrected``) uses ``-1/3`` and vanishes at 0.
    """
    t = _tau(p, tau_g)
    e1, e2 = np.exp(-t / p.t1), np.exp(-t / p.t2)
    sign = 1.0 if _variant(variant) == "as_printed" else -1.0
    return float(0.5 * (1 - 2 / 3 * e2 + sign / 3 * e1))


def coherence_limit_2q(p1: CoherenceParams, p2: CoherenceParams, tau_g: float | None = None,
                       variant: str = "completed") -> float:
    """Decoherence-limited two-qubit gate error ``3/4 (1 - zT1 - zT2)``.

    The ``completed`` variant adds the ``exp(-t (1/T1a + 1/T1b))/15`` term to
    ``zT1`` and ``4/15 exp(-t (1/T2a + 1/T2b))`` to ``zT2``; it then equals the
    error of independent amplitude damping plus dephasing on both qubits.
    """
    t = _tau(p1, tau_g) if tau_g is not None or p1.tau_g is not None else _tau(p2, None)
    a1, b1 = np.exp(-t / p1.t1), np.exp(-t / p2.t1)
    a2, b2 = np.exp(-t / p1.t2), np.exp(-t / p2.t2)
    z1 = (a1 + b1) / 15
    z2 = 2 / 15 * (a2 + b2) + 2 / 15 * np.exp(-t * (1 / p2.t2 + 1 / p1.t1)) + 2 / 15 * np.exp(
        -t * (1 / p1.t2 + 1 / p2.t1))
    if _variant(variant) == "completed":
        z1 += a1 * b1 / 15
        z2 += 4 / 15 * a2 * b2
    return float(0.75 * (1 - z1 - z2))


def kraus_limit_1q(p: CoherenceParams, tau_g: float | None = None) -> float:
    """Average gate error of the identity under T1/T2 Kraus noise,
    ``1 - (d F_pro + 1)/(d + 1)`` with ``F_pro = sum_k |tr K_k|^2 / d^2``."""
    t = _tau(p, tau_g)
    g1 = 1.0 / p.t1
    K = mode_kraus(2, g1, max(1.0 / p.t2 - 0.5 * g1, 0.0), t)
    Fp = sum(abs(np.trace(k)) ** 2 for k in K) / 4
    return float(1 - (2 * Fp + 1) / 3)


def kraus_limit_2q(p1: CoherenceParams, p2: CoherenceParams, tau_g: float | None = None) -> float:
    """Brute-force two-qubit error: the identity's process fidelity is
    reconstructed from the channel's action on the 16 tomography input
    states, then converted to an average gate error."""
    from .qpt import beta_tensor, chi_from_lambda, input_states, lambda_matrix

    t = _tau(p1, tau_g) if tau_g is not None or p1.tau_g is not None else _tau(p2, None)
    S = _two_qubit_decoherence(p1, p2, t)
    rhos = input_states().states
    outs = np.array([_vec_apply(S, r) for r in rhos])
    chi = chi_from_lambda(lambda_matrix(outs), beta_tensor())
    Fp = float(chi[0, 0].real)
    return float(1 - (4 * Fp + 1) / 5)
