"""Circuit and drive specifications, presets, and lab-frame operators for the
transmon (T) plus dimon (A, B) system on a truncated Fock space.

All frequencies are angular (rad/s) unless a name says otherwise.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

TWO_PI = 2.0 * np.pi
GHZ = TWO_PI * 1e9
MHZ = TWO_PI * 1e6
KHZ = TWO_PI * 1e3
US = 1e-6
NS = 1e-9

MODE_LABELS = ("T", "A", "B")

__all__ = [
    "GHZ",
    "MHZ",
    "KHZ",
    "US",
    "NS",
    "ModeSpec",
    "CircuitSpec",
    "DriveSpec",
    "BasisLayout",
    "Coherence",
    "Preset",
    "DispersiveWarning",
    "build_bare_hamiltonian",
    "build_drive_operators",
    "build_number_operators",
    "load_preset",
    "PRESETS",
]


class DispersiveWarning(UserWarning):
    """Coupling is not small compared with the relevant detunings."""


@dataclass(frozen=True)
class ModeSpec:
    label: str
    frequency: float
    anharmonicity: float
    levels: int = 4

    def __post_init__(self):
        if self.label not in MODE_LABELS:
            raise ValueError(f"mode label must be one of {MODE_LABELS}, got {self.label!r}")
        for name in ("frequency", "anharmonicity"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} of mode {self.label} is not finite")
        if int(self.levels) != self.levels or self.levels < 2:
            raise ValueError(f"mode {self.label} needs at least 2 levels, got {self.levels}")
        if self.frequency <= 0:
            raise ValueError(f"mode {self.label} frequency must be positive")
        if abs(self.anharmonicity) >= self.frequency:
            raise ValueError(f"mode {self.label}: |anharmonicity| must be below the frequency")

    # Duffing parameters: delta = -alpha/2, beta = -delta, so that the bare
    # 0->1 transition is exactly `frequency` and 1->2 is frequency + alpha.
    @property
    def delta(self) -> float:
        return -0.5 * self.anharmonicity

    @property
    def beta(self) -> float:
        return -self.delta


@dataclass(frozen=True)
class CircuitSpec:
    """Three coupled Duffing modes.

    ``j_zz`` is the longitudinal A-B coupling (term ``2 j_zz n_A n_B``),
    ``j_xx`` the transverse T-A exchange and ``lam`` the relative T-B exchange.
    """

    modes: tuple[ModeSpec, ModeSpec, ModeSpec]
    j_zz: float
    j_xx: float
    lam: float = 0.0

    def __post_init__(self):
        modes = tuple(self.modes)
        if tuple(m.label for m in modes) != MODE_LABELS:
            raise ValueError(f"modes must be ordered {MODE_LABELS}")
        object.__setattr__(self, "modes", modes)
        for name in ("j_zz", "j_xx", "lam"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} is not finite")
        if abs(self.lam) >= 0.5:
            raise ValueError(f"|lambda| must be below 0.5, got {self.lam}")
        if abs(self.lam) > 0.1:
            warnings.warn(f"relative T-B coupling lambda={self.lam} is not small", DispersiveWarning, stacklevel=3)
        detunings = [abs(self.mode("T").frequency - self.mode("A").frequency)]
        if self.lam:
            detunings.append(abs(self.mode("T").frequency - self.mode("B").frequency))
        if self.j_xx and min(detunings) < 3 * abs(self.j_xx):
            warnings.warn(
                "transverse coupling exceeds a third of the T-A detuning; outside the dispersive regime",
                DispersiveWarning,
                stacklevel=3,
            )

    def mode(self, label: str) -> ModeSpec:
        return self.modes[MODE_LABELS.index(label)]

    @property
    def levels(self) -> tuple[int, int, int]:
        return tuple(m.levels for m in self.modes)

    def with_mode(self, label: str, **changes) -> "CircuitSpec":
        modes = list(self.modes)
        i = MODE_LABELS.index(label)
        modes[i] = replace(modes[i], **changes)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DispersiveWarning)
            return replace(self, modes=tuple(modes))

    def with_levels(self, d: int) -> "CircuitSpec":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DispersiveWarning)
            return replace(self, modes=tuple(replace(m, levels=d) for m in self.modes))

    @property
    def detuning_ta(self) -> float:
        """omega_T - omega_A of the bare transitions (n_B = 0 sector)."""
        return self.mode("T").frequency - self.mode("A").frequency


@dataclass(frozen=True)
class DriveSpec:
    amplitude: float
    frequency: float | None = None
    phase: float = 0.0
    crosstalk: float = 0.0
    crosstalk_phase: float = 0.0

    def __post_init__(self):
        for name in ("amplitude", "phase", "crosstalk", "crosstalk_phase"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} is not finite")
        if self.frequency is not None and not (np.isfinite(self.frequency) and self.frequency > 0):
            raise ValueError("drive frequency must be positive and finite")
        if self.crosstalk < 0:
            raise ValueError("cross-talk fraction m must be non-negative")
        if self.crosstalk == 0 and self.crosstalk_phase != 0:
            object.__setattr__(self, "crosstalk_phase", 0.0)


@dataclass(frozen=True)
class BasisLayout:
    """Level counts per mode and the ordering of basis states.

    ``tensor`` ordering is ``|n_T, n_A, n_B>`` with T slowest. ``excitation``
    ordering sorts by total excitation, ties broken lexicographically.
    """

    dims: tuple[int, int, int]
    ordering: Literal["tensor", "excitation"] = "tensor"

    def __post_init__(self):
        if len(self.dims) != 3 or min(self.dims) < 2:
            raise ValueError(f"need three mode dimensions >= 2, got {self.dims}")
        if self.ordering not in ("tensor", "excitation"):
            raise ValueError(f"unknown ordering {self.ordering!r}")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))

    @classmethod
    def for_spec(cls, spec: CircuitSpec, ordering="tensor") -> "BasisLayout":
        return cls(spec.levels, ordering)

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    def tensor_labels(self) -> list[tuple[int, int, int]]:
        return list(itertools.product(*(range(d) for d in self.dims)))

    @property
    def permutation(self) -> np.ndarray:
        """``perm[i]`` is the tensor index of the i-th state in this ordering."""
        labels = self.tensor_labels()
        if self.ordering == "tensor":
            return np.arange(len(labels))
        return np.array(sorted(range(len(labels)), key=lambda i: (sum(labels[i]), labels[i])))

    def labels(self) -> list[tuple[int, int, int]]:
        tl = self.tensor_labels()
        return [tl[i] for i in self.permutation]

    def index(self, label) -> int:
        t_index = int(np.ravel_multi_index(tuple(label), self.dims))
        if self.ordering == "tensor":
            return t_index
        return int(np.nonzero(self.permutation == t_index)[0][0])

    def from_tensor(self, M):
        """Re-express a tensor-ordered vector or matrix in this ordering."""
        p = self.permutation
        M = np.asarray(M)
        return M[p] if M.ndim == 1 else M[np.ix_(p, p)]

    def to_tensor(self, M):
        inv = np.argsort(self.permutation)
        M = np.asarray(M)
        return M[inv] if M.ndim == 1 else M[np.ix_(inv, inv)]

    def excitations(self) -> np.ndarray:
        return np.array([sum(l) for l in self.labels()])


def _ladder(d):
    return np.diag(np.sqrt(np.arange(1, d, dtype=float)), 1)


def _embed(op, which, dims):
    mats = [np.eye(d) for d in dims]
    mats[which] = op
    return np.kron(np.kron(mats[0], mats[1]), mats[2])


def _check_layout(spec: CircuitSpec, layout: BasisLayout | None) -> BasisLayout:
    if layout is None:
        return BasisLayout.for_spec(spec)
    if tuple(layout.dims) != spec.levels:
        raise ValueError(f"layout dims {layout.dims} do not match spec levels {spec.levels}")
    return layout


def build_number_operators(layout: BasisLayout):
    """Diagonal number operators (n_T, n_A, n_B) in the layout's ordering."""
    labels = np.array(layout.labels())
    return tuple(np.diag(labels[:, i].astype(float)) for i in range(3))


def build_bare_hamiltonian(spec: CircuitSpec, layout: BasisLayout | None = None) -> np.ndarray:
    """H0/hbar of the coupled Duffing modes (real symmetric, rad/s)."""
    layout = _check_layout(spec, layout)
    dims = layout.dims
    a = [_embed(_ladder(d), i, dims) for i, d in enumerate(dims)]
    n = [ai.T @ ai for ai in a]
    H = np.zeros((layout.dim, layout.dim))
    for i, m in enumerate(spec.modes):
        H += (m.frequency - m.beta) * n[i] - m.delta * (n[i] @ n[i])
    iT, iA, iB = 0, 1, 2
    H += 2.0 * spec.j_zz * (n[iA] @ n[iB])
    H += spec.j_xx * (a[iA].T @ a[iT] + a[iT].T @ a[iA])
    H += spec.lam * spec.j_xx * (a[iB].T @ a[iT] + a[iT].T @ a[iB])
    H = 0.5 * (H + H.T)  # exact symmetry, guards against rounding in products
    return layout.from_tensor(H)


def build_drive_operators(spec: CircuitSpec, layout: BasisLayout | None = None):
    """Quadrature operators (a_T^dag + a_T, a_A^dag + a_A)."""
    layout = _check_layout(spec, layout)
    ops = []
    for i in (0, 1):
        a = _ladder(layout.dims[i])
        ops.append(layout.from_tensor(_embed(a + a.T, i, layout.dims)))
    return tuple(ops)


@dataclass(frozen=True)
class Coherence:
    t1: float
    t2_echo: float
    t2_ramsey: float

    def __post_init__(self):
        if min(self.t1, self.t2_echo, self.t2_ramsey) <= 0:
            raise ValueError("coherence times must be positive")


@dataclass(frozen=True)
class Preset:
    name: str
    spec: CircuitSpec
    coherence: dict[str, Coherence] = field(default_factory=dict)

    @property
    def upper_sideband_a(self) -> float:
        """Tabulated A-mode qubit frequency (the CR target transition)."""
        return self.spec.mode("A").frequency


# Table values: frequency (GHz), anharmonicity (MHz), T1, T2 Ramsey, T2 echo (us).
_TABLE = {
    "exp1_cu": {
        "T": (4.959, -220.0, 11.3, 1.1, 1.6),
        "A": (4.413, -100.0, 10.0, 1.6, 1.8),
        "B": (5.620, -123.0, 5.2, 1.3, 2.1),
        "j_xx_mhz": 1.9,
        "j_zz_mhz": 70.5,
    },
    "exp2_al": {
        "T": (4.774, -280.0, 14.0, 6.0, 8.0),
        "A": (4.562, -128.0, 18.0, 17.0, 19.0),
        "B": (5.822, -142.0, 7.0, 4.0, 4.0),
        "j_xx_mhz": 2.76,
        # not published for this device; exp1 value reused
        "j_zz_mhz": 70.5,
    },
}

PRESETS = tuple(_TABLE)


def load_preset(name: str, *, levels: int = 4, j_zz_mhz: float | None = None) -> Preset:
    """Published device parameters as a :class:`Preset`.

    The dimon frequencies in the table are its sideband transitions; they are
    stored as the bare mode frequencies so that the A transition in the
    ``n_B = 0`` sector, where the CR analysis is carried out, equals the
    tabulated target frequency.
    """
    try:
        row = _TABLE[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {PRESETS}") from None
    modes = []
    coherence = {}
    for label in MODE_LABELS:
        f_ghz, anh_mhz, t1, t2r, t2e = row[label]
        modes.append(ModeSpec(label, f_ghz * GHZ, anh_mhz * MHZ, levels))
        coherence[label] = Coherence(t1 * US, t2e * US, t2r * US)
    jzz = row["j_zz_mhz"] if j_zz_mhz is None else j_zz_mhz
    spec = CircuitSpec(tuple(modes), j_zz=jzz * MHZ, j_xx=row["j_xx_mhz"] * MHZ, lam=0.0)
    return Preset(name, spec, coherence)
