"""Least-action block diagonalization and two-qubit Pauli coefficients of the
cross-resonance Hamiltonian, static ZZ, and detuning/amplitude sweeps."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment, minimize_scalar
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .frames import (
    DressedLabelWarning,
    LabelingError,
    RwaHamiltonian,
    apply_rwa,
    diagonalize_bare,
    rotate_operator,
)
from .model import (
    MHZ,
    BasisLayout,
    CircuitSpec,
    DispersiveWarning,
    DriveSpec,
    build_bare_hamiltonian,
    build_drive_operators,
)
from .numerics import SingularMatrixError, eig_hermitian, inv_sqrt_psd
from .validation import check_hermitian

__all__ = [
    "BlockDiagonalizationError",
    "Partition",
    "cr_partition",
    "least_action_block_diagonalize",
    "LeastActionBlockDiagonalizer",
    "EffectiveHamiltonian",
    "PAULI_TERMS",
    "extract_pauli_coefficients",
    "StaticZZ",
    "static_zz",
    "conditional_target_frequencies",
    "CRResult",
    "cr_effective_hamiltonian",
    "rwa_hamiltonian",
    "SweepRow",
    "SweepTable",
    "DETUNING_POLES",
    "sweep_detuning",
    "sweep_amplitude",
    "PhaseOptimum",
    "optimize_drive_phase",
]


class BlockDiagonalizationError(np.linalg.LinAlgError):
    """The eigenvectors cannot be split across the partition (near-degenerate mixing)."""


@dataclass(frozen=True)
class Partition:
    groups: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        groups = tuple(tuple(int(i) for i in g) for g in self.groups)
        if any(len(g) == 0 for g in groups):
            raise ValueError("partition groups must be non-empty")
        flat = [i for g in groups for i in g]
        if len(set(flat)) != len(flat):
            raise ValueError("partition groups overlap")
        if sorted(flat) != list(range(len(flat))):
            raise ValueError("partition must cover indices 0..n-1 exactly")
        object.__setattr__(self, "groups", groups)

    @property
    def size(self) -> int:
        return sum(len(g) for g in self.groups)

    def block_ids(self) -> np.ndarray:
        ids = np.empty(self.size, dtype=int)
        for b, g in enumerate(self.groups):
            ids[list(g)] = b
        return ids

    def mask(self) -> np.ndarray:
        ids = self.block_ids()
        return ids[:, None] == ids[None, :]


CR_LABELS = ((0, 0, 0), (0, 1, 0), (1, 0, 0), (1, 1, 0))
# computational states plus the first leakage levels of both qubits
PROTECTED_LABELS = CR_LABELS + ((2, 0, 0), (0, 2, 0), (2, 1, 0), (1, 2, 0))


def cr_partition(layout: BasisLayout) -> Partition:
    """``{000, 010}``, ``{100, 110}``, rest (labels ``n_T n_A n_B``)."""
    idx = [layout.index(l) for l in CR_LABELS]
    rest = tuple(i for i in range(layout.dim) if i not in idx)
    return Partition(((idx[0], idx[1]), (idx[2], idx[3]), rest))


def _assign_eigenvectors(S, partition: Partition):
    """Column permutation sending each eigenvector to a slot in the block
    holding most of its weight; maximizes the total in-block weight."""
    ids = partition.block_ids()
    nblocks = len(partition.groups)
    weights = np.stack([np.sum(np.abs(S[ids == b]) ** 2, axis=0) for b in range(nblocks)])
    slots = np.concatenate([[b] * len(g) for b, g in enumerate(partition.groups)])
    slot_index = np.concatenate([list(g) for g in partition.groups])
    rows, cols = linear_sum_assignment(-np.round(weights[slots], 12))
    perm = np.empty(len(slots), dtype=int)
    perm[slot_index[rows]] = cols
    return perm, weights


def least_action_block_diagonalize(H, partition: Partition, *, min_block_overlap: float = 1e-8):
    """Least-action block diagonalization.

    Computes ``T = S S_BD^dag (S_BD S_BD^dag)^(-1/2)`` where ``S`` holds the
    eigenvectors of ``H`` (columns ordered by the block-weight assignment)
    and ``S_BD`` is its block-diagonal part. ``T`` is the unitary closest to
    the identity that block-diagonalizes ``H``.

    Parameters
    ----------
    H : (n, n) array_like
        Hermitian matrix.
    partition : Partition
    min_block_overlap : float
        Smallest admissible eigenvalue of ``S_BD S_BD^dag``. Below it the
        partition is considered degenerate.

    Returns
    -------
    T : ndarray
    H_eff : ndarray
        ``T^dag H T`` with the off-block entries set to zero.

    Raises
    ------
    BlockDiagonalizationError
        If some block of ``S_BD S_BD^dag`` is (near) singular or the
        transformed matrix is not block diagonal to ``1e-9 ||H||``.
    """
    H = check_hermitian(H, "H")
    if H.shape[0] != partition.size:
        raise ValueError(f"partition size {partition.size} does not match H {H.shape}")
    w, S = eig_hermitian(H)
    perm, weights = _assign_eigenvectors(S, partition)
    S = S[:, perm]
    mask = partition.mask()
    S_bd = np.where(mask, S, 0)
    M = S_bd @ S_bd.conj().T
    for b, g in enumerate(partition.groups):
        sub = M[np.ix_(g, g)]
        lo = np.linalg.eigvalsh(sub)[0]
        if lo < min_block_overlap:
            assigned = weights[b, perm[list(g)]]
            raise BlockDiagonalizationError(
                f"block {b} is degenerate with the rest: min eigenvalue of S_BD S_BD^dag "
                f"{lo:.3e}; in-block weights of its eigenvectors {np.array2string(assigned, precision=4)}"
            )
    try:
        T = S @ S_bd.conj().T @ inv_sqrt_psd(M, eps=0.0)
    except SingularMatrixError as exc:
        raise BlockDiagonalizationError(str(exc)) from exc
    H_eff = T.conj().T @ H @ T
    norm = np.linalg.norm(H)
    off = np.max(np.abs(np.where(mask, 0, H_eff)), initial=0.0)
    if off > 1e-9 * max(norm, 1e-300):
        raise BlockDiagonalizationError(f"off-block residual {off:.3e} exceeds 1e-9*||H|| = {1e-9 * norm:.3e}")
    H_eff = np.where(mask, H_eff, 0)
    return T, 0.5 * (H_eff + H_eff.conj().T)


class LeastActionBlockDiagonalizer(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`least_action_block_diagonalize`.

    ``fit(H)`` learns the transformation ``T``; ``transform(O)`` returns
    ``T^dag O T`` for any operator in the same basis.
    """

    def __init__(self, partition=None, min_block_overlap=1e-8):
        self.partition = partition
        self.min_block_overlap = min_block_overlap

    def fit(self, H, y=None):
        partition = self.partition
        if not isinstance(partition, Partition):
            partition = Partition(partition)
        self.transform_, self.effective_hamiltonian_ = least_action_block_diagonalize(
            H, partition, min_block_overlap=self.min_block_overlap
        )
        self.n_features_in_ = self.transform_.shape[0]
        return self

    def transform(self, O):
        check_is_fitted(self, "transform_")
        return rotate_operator(self.transform_, O)

    def inverse_transform(self, O):
        check_is_fitted(self, "transform_")
        T = self.transform_
        return T @ np.asarray(O) @ T.conj().T


# --- Pauli decomposition -----------------------------------------------------

_I = np.eye(2)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Y = np.array([[0, -1j], [1j, 0]])
_Z = np.diag([1.0, -1.0])
PAULI_TERMS = ("II", "IX", "IY", "IZ", "ZI", "ZX", "ZY", "ZZ")
_P1 = {"I": _I, "X": _X, "Y": _Y, "Z": _Z}


def _pauli2(term):
    return np.kron(_P1[term[0]], _P1[term[1]])


@dataclass(frozen=True)
class EffectiveHamiltonian:
    """Coefficients of ``H = (1/2) sum_PQ c_PQ sigma_P (x) sigma_Q`` (rad/s),
    control qubit first."""

    II: float = 0.0
    IX: float = 0.0
    IY: float = 0.0
    IZ: float = 0.0
    ZI: float = 0.0
    ZX: float = 0.0
    ZY: float = 0.0
    ZZ: float = 0.0

    def to_matrix(self) -> np.ndarray:
        return 0.5 * sum(getattr(self, t) * _pauli2(t) for t in PAULI_TERMS)

    def as_dict(self) -> dict[str, float]:
        return asdict(self)

    def in_mhz(self) -> dict[str, float]:
        return {k: v / MHZ for k, v in asdict(self).items()}


def extract_pauli_coefficients(H4) -> EffectiveHamiltonian:
    """Project a 4x4 Hermitian matrix (order ``|00>, |01>, |10>, |11>``,
    control (x) target) onto the I/Z (x) I/X/Y/Z Pauli products."""
    H4 = check_hermitian(np.asarray(H4, dtype=complex), "H_eff block")
    if H4.shape != (4, 4):
        raise ValueError(f"expected a 4x4 block, got {H4.shape}")
    return EffectiveHamiltonian(**{t: float(np.real(np.trace(_pauli2(t) @ H4)) / 2) for t in PAULI_TERMS})


# --- static ZZ ------------------------------------------------------------------


@dataclass(frozen=True)
class StaticZZ:
    """Static ZZ splitting ``2 xi`` (rad/s).

    ``perturbative`` uses the two-level-plus-anharmonicity formula with
    anharmonicity magnitudes; ``perturbative_signed`` is the same expression
    with the signed (negative) anharmonicities; ``numeric`` is the exact
    conditional-frequency difference from diagonalizing H0.
    """

    perturbative: float
    perturbative_signed: float
    numeric: float


def _zz_formula(J, delta_ta, d_t, d_a):
    den = (delta_ta + d_t) * (d_a - delta_ta)
    if abs(den) < 1e-12 * max(abs(d_t), abs(d_a)) ** 2:
        raise ValueError("detuning sits on a pole of the static ZZ formula")
    return -2.0 * J**2 * (d_t + d_a) / den


def conditional_target_frequencies(spec: CircuitSpec, basis=None):
    """A-mode transition frequencies with the transmon in |0> and |1> (B in |0>)."""
    if basis is None:
        layout = BasisLayout.for_spec(spec)
        basis = diagonalize_bare(build_bare_hamiltonian(spec, layout), layout)
    E = basis.energy
    return E((0, 1, 0)) - E((0, 0, 0)), E((1, 1, 0)) - E((1, 0, 0))


def static_zz(spec: CircuitSpec) -> StaticZZ:
    J = spec.j_xx
    delta = spec.detuning_ta
    a_t = spec.mode("T").anharmonicity
    a_a = spec.mode("A").anharmonicity
    if J == 0:
        pert = signed = 0.0
    else:
        pert = _zz_formula(J, delta, abs(a_t), abs(a_a))
        signed = _zz_formula(J, delta, a_t, a_a)
    w0, w1 = conditional_target_frequencies(spec)
    return StaticZZ(pert, signed, w1 - w0)


# --- CR pipeline ----------------------------------------------------------------


@dataclass
class CRResult:
    coefficients: EffectiveHamiltonian
    omega_d: float
    dropped_norm: float
    leakage: float
    unitarity_defect: float
    H_eff: np.ndarray = field(repr=False)
    T: np.ndarray = field(repr=False)


def rwa_hamiltonian(spec: CircuitSpec, drive: DriveSpec, omega_d: float | None = None) -> RwaHamiltonian:
    """Model -> dressed basis -> rotating frame at the drive frequency.

    Without an explicit frequency the drive sits at the mean of the two
    conditional target frequencies.
    """
    layout = BasisLayout.for_spec(spec)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DressedLabelWarning)
        basis = diagonalize_bare(build_bare_hamiltonian(spec, layout), layout, protected=PROTECTED_LABELS)
    if omega_d is None:
        omega_d = drive.frequency
    if omega_d is None:
        omega_d = float(np.mean(conditional_target_frequencies(spec, basis)))
    X_T, X_A = build_drive_operators(spec, layout)
    D_T = rotate_operator(basis.U, X_T)
    D_A = rotate_operator(basis.U, X_A)
    return apply_rwa(basis, D_T, D_A, drive, omega_d)


def cr_effective_hamiltonian(
    spec: CircuitSpec,
    drive: DriveSpec,
    *,
    omega_d: float | None = None,
    min_block_overlap: float = 1e-8,
) -> CRResult:
    rwa = rwa_hamiltonian(spec, drive, omega_d)
    partition = cr_partition(rwa.layout)
    T, H_eff = least_action_block_diagonalize(rwa.H, partition, min_block_overlap=min_block_overlap)
    idx = list(partition.groups[0]) + list(partition.groups[1])
    coeffs = extract_pauli_coefficients(H_eff[np.ix_(idx, idx)])
    # weight of T's computational columns outside the computational subspace
    comp = np.abs(T[np.ix_(idx, idx)]) ** 2
    leakage = float(1.0 - comp.sum(axis=0).min())
    defect = float(np.linalg.norm(T.conj().T @ T - np.eye(T.shape[0])))
    return CRResult(coeffs, rwa.omega_d, rwa.dropped_norm, leakage, defect, H_eff, T)


# --- sweeps -----------------------------------------------------------------------

DETUNING_POLES = (-0.5, 0.0, 0.5, 1.0, 1.5)


@dataclass
class SweepRow:
    grid_value: float
    coefficients: EffectiveHamiltonian | None
    dropped_norm: float
    status: str
    message: str = ""


@dataclass
class SweepTable:
    parameter: str
    rows: list[SweepRow]

    COLUMNS = ("grid_value", "ZX_MHz", "ZY_MHz", "ZZ_MHz", "IX_MHz", "IY_MHz", "IZ_MHz", "ZI_MHz", "dropped_norm", "status")

    @property
    def grid(self) -> np.ndarray:
        return np.array([r.grid_value for r in self.rows])

    def column(self, term: str) -> np.ndarray:
        """Coefficient ``term`` in rad/s; NaN at failed points."""
        return np.array([getattr(r.coefficients, term) if r.coefficients else np.nan for r in self.rows])

    def records(self):
        for r in self.rows:
            c = r.coefficients.in_mhz() if r.coefficients else {}
            yield [r.grid_value] + [c.get(t, np.nan) for t in ("ZX", "ZY", "ZZ", "IX", "IY", "IZ", "ZI")] + [
                r.dropped_norm,
                r.status,
            ]


_FAILURES = (LabelingError, BlockDiagonalizationError, SingularMatrixError)


def _evaluate(spec, drive, value, near_pole, min_block_overlap):
    try:
        res = cr_effective_hamiltonian(spec, drive, min_block_overlap=min_block_overlap)
    except _FAILURES as exc:
        return SweepRow(value, None, np.nan, "degenerate", str(exc))
    return SweepRow(value, res.coefficients, res.dropped_norm, "near_pole" if near_pole else "ok")


def sweep_detuning(
    spec: CircuitSpec,
    drive: DriveSpec,
    grid,
    *,
    pole_window: float = 0.05,
    min_block_overlap: float = 0.5,
) -> SweepTable:
    """Effective coefficients versus ``x = (omega_T - omega_A) / |alpha_T|``.

    The transmon frequency is moved; the drive follows the conditional target
    frequency unless ``drive.frequency`` is fixed. Points where the
    partition becomes degenerate are kept with ``status='degenerate'``.
    ``min_block_overlap`` is the degeneracy threshold handed to the block
    diagonalization; points closer than ``pole_window`` to a pole are tagged
    ``near_pole``.
    """
    grid = np.asarray(grid, dtype=float)
    poles = np.array(DETUNING_POLES)
    if np.any(np.min(np.abs(grid[:, None] - poles[None, :]), axis=1) < 1e-9):
        raise ValueError("grid contains an exact pole abscissa")
    w_a = spec.mode("A").frequency
    a_t = abs(spec.mode("T").anharmonicity)
    rows = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DispersiveWarning)
        for x in grid:
            sx = spec.with_mode("T", frequency=w_a + x * a_t)
            near = bool(np.min(np.abs(poles - x)) < pole_window)
            rows.append(_evaluate(sx, drive, float(x), near, min_block_overlap))
    return SweepTable("detuning", rows)


def sweep_amplitude(spec: CircuitSpec, drive: DriveSpec, amplitudes, *, min_block_overlap: float = 0.5) -> SweepTable:
    """Effective coefficients versus CR drive amplitude (rad/s)."""
    rows = []
    for amp in np.asarray(amplitudes, dtype=float):
        rows.append(_evaluate(spec, replace(drive, amplitude=float(amp)), float(amp), False, min_block_overlap))
    return SweepTable("amplitude", rows)


@dataclass
class PhaseOptimum:
    phase: float
    coefficients: EffectiveHamiltonian
    iterations: int


def optimize_drive_phase(spec: CircuitSpec, drive: DriveSpec, *, omega_d=None, xatol=1e-10, maxiter=200) -> PhaseOptimum:
    """Drive phase minimizing ``|ZY|`` on the branch where ZX is positive.

    The cross-talk phase is shifted together with the CR phase, as a common
    phase offset of the drive line would.
    """
    if drive.amplitude == 0:
        raise ValueError("drive must be on to optimize its phase")
    if omega_d is None:
        omega_d = cr_effective_hamiltonian(spec, replace(drive, amplitude=0.0)).omega_d

    def coeffs(phi):
        d = replace(drive, phase=phi, crosstalk_phase=drive.crosstalk_phase + (phi - drive.phase))
        return cr_effective_hamiltonian(spec, d, omega_d=omega_d).coefficients

    c0 = coeffs(drive.phase)
    # ZX + i ZY rotates as exp(-i phi) with the drive phase
    guess = drive.phase + np.angle(c0.ZX + 1j * c0.ZY)
    res = minimize_scalar(
        lambda p: coeffs(p).ZY ** 2,
        bounds=(guess - np.pi / 4, guess + np.pi / 4),
        method="bounded",
        options={"xatol": xatol, "maxiter": maxiter},
    )
    if not res.success:
        raise RuntimeError(f"drive-phase optimization did not converge: {res.message}")
    phi = float(np.angle(np.exp(1j * res.x)))
    return PhaseOptimum(phi, coeffs(phi), int(res.nfev))
