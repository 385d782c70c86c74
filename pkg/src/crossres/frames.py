"""Dressed basis, drive-frame rotation and the rotating-wave approximation.

The dressed basis is stored label-ordered: column ``k`` of ``U`` is the
eigenvector whose maximum-overlap bare state is basis state ``k``. Every
dressed-frame matrix therefore shares the bare layout's indexing, which is
what the excitation grading of the RWA and the per-mode noise channels rely
on.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .model import BasisLayout, DriveSpec
from .numerics import eig_hermitian
from .validation import check_hermitian, check_square

__all__ = [
    "LabelingError",
    "DressedLabelWarning",
    "DressedBasis",
    "RwaHamiltonian",
    "diagonalize_bare",
    "rotate_operator",
    "grade_operator",
    "apply_rwa",
]


class LabelingError(ValueError):
    """Dressed states cannot be matched one-to-one with bare labels."""


class DressedLabelWarning(UserWarning):
    pass


MIN_LABEL_OVERLAP = 0.25


@dataclass(frozen=True)
class DressedBasis:
    U: np.ndarray
    energies: np.ndarray
    layout: BasisLayout
    overlaps: np.ndarray

    @property
    def labels(self):
        return self.layout.labels()

    @property
    def excitations(self) -> np.ndarray:
        return self.layout.excitations()

    def energy(self, label) -> float:
        return float(self.energies[self.layout.index(label)])

    def h0_diag(self) -> np.ndarray:
        return np.diag(self.energies)


def diagonalize_bare(H0, layout: BasisLayout | None = None, *, protected=None) -> DressedBasis:
    """Eigendecomposition of the bare Hamiltonian with maximum-overlap labels.

    Parameters
    ----------
    H0 : array_like
        Hermitian bare Hamiltonian in the layout's ordering.
    layout : BasisLayout, optional
        Defaults to equal level counts in tensor ordering.
    protected : iterable of labels, optional
        Labels that must be claimed unambiguously. By default every label is
        protected. Collisions among unprotected labels (accidental crossings
        of high levels) are resolved by the assignment maximizing the total
        overlap, with a :class:`DressedLabelWarning`.

    Raises
    ------
    LabelingError
        If two dressed states share the maximum-overlap bare state of a
        protected label, or a protected label's best overlap is below 0.25.
    """
    H0 = check_hermitian(H0, "H0")
    if layout is None:
        d = round(H0.shape[0] ** (1 / 3))
        layout = BasisLayout((d, d, d))
    if layout.dim != H0.shape[0]:
        raise ValueError(f"layout dimension {layout.dim} does not match H0 {H0.shape}")
    w, V = eig_hermitian(H0)
    weights = np.abs(V) ** 2
    labels = layout.labels()
    guarded = set(range(len(labels))) if protected is None else {layout.index(l) for l in protected}
    # first-occurrence argmax on rounded weights: ties go to the lower bare index
    best = np.argmax(np.round(weights, 12), axis=0)
    claimed: dict[int, int] = {}
    collision = None
    for k, b in enumerate(best):
        if b in claimed:
            collision = (claimed[b], k, b)
            if b in guarded:
                break
        claimed[b] = k
    if collision is not None:
        k0, k1, b = collision
        message = (
            f"dressed states {k0} and {k1} both claim bare label {labels[b]} "
            f"(overlaps {weights[b, k0]:.3f}, {weights[b, k1]:.3f})"
        )
        rows, cols = linear_sum_assignment(-np.round(weights, 12))
        assigned = np.empty_like(best)
        assigned[cols] = rows
        changed = {int(i) for i in np.flatnonzero(assigned != best)} | {int(best[i]) for i in np.flatnonzero(assigned != best)}
        if b in guarded or changed & guarded:
            raise LabelingError(message)
        warnings.warn(message + "; resolved by optimal assignment", DressedLabelWarning, stacklevel=2)
        best = assigned
    best_overlap = weights[best, np.arange(len(best))]
    check = [k for k in range(len(best)) if best[k] in guarded]
    if check:
        worst = min(check, key=lambda k: best_overlap[k])
        if best_overlap[worst] < MIN_LABEL_OVERLAP:
            raise LabelingError(
                f"dressed state {worst} has best overlap {best_overlap[worst]:.3f} with "
                f"{labels[best[worst]]}, below {MIN_LABEL_OVERLAP}"
            )
        if best_overlap[worst] <= 0.5:
            warnings.warn(
                f"weak dressed labeling: overlap {best_overlap[worst]:.3f} for {labels[best[worst]]}",
                DressedLabelWarning,
                stacklevel=2,
            )
    order = np.empty_like(best)
    order[best] = np.arange(len(best))
    U = V[:, order]
    return DressedBasis(U=U, energies=w[order], layout=layout, overlaps=best_overlap[order])


def rotate_operator(U, O) -> np.ndarray:
    """``U^dag O U``."""
    U = check_square(U, "U")
    O = check_square(O, "O")
    if U.shape != O.shape:
        raise ValueError(f"shape mismatch: U {U.shape} vs O {O.shape}")
    return U.conj().T @ O @ U


def grade_operator(D, excitations):
    """Split ``D`` into parts raising, lowering and otherwise changing excitation.

    Returns ``(D_plus, D_minus, D_rest)`` with ``D_plus + D_minus + D_rest == D``.
    """
    n = np.asarray(excitations)
    diff = n[:, None] - n[None, :]
    plus = np.where(diff == 1, D, 0)
    minus = np.where(diff == -1, D, 0)
    rest = D - plus - minus
    return plus, minus, rest


@dataclass(frozen=True)
class RwaHamiltonian:
    """Time-independent rotating-frame Hamiltonian in the dressed basis.

    ``H = h_static + (amplitude/2) (cr_raising + cr_raising^dag)``; the pieces
    are kept separate so pulse envelopes can rescale the drive term.
    """

    h_static: np.ndarray
    cr_raising: np.ndarray
    control_raising: np.ndarray
    amplitude: float
    omega_d: float
    dropped_norm: float
    basis: DressedBasis

    @property
    def H(self) -> np.ndarray:
        drive = 0.5 * self.amplitude * (self.cr_raising + self.cr_raising.conj().T)
        return self.h_static + drive

    @property
    def layout(self) -> BasisLayout:
        return self.basis.layout


def apply_rwa(basis: DressedBasis, D_T, D_A, drive: DriveSpec, omega_d: float | None = None) -> RwaHamiltonian:
    """Rotating frame at the drive frequency and RWA by excitation grading.

    ``D_T`` and ``D_A`` are the drive quadratures already expressed in the
    dressed basis. Matrix elements that change the label excitation by
    exactly one are kept; everything else is dropped and its Frobenius norm
    (scaled by the drive strength) is reported as ``dropped_norm``.
    """
    omega_d = drive.frequency if omega_d is None else omega_d
    if omega_d is None:
        raise ValueError("drive frequency is required")
    n = basis.excitations
    tp, _, trest = grade_operator(np.asarray(D_T, dtype=complex), n)
    ap, _, arest = grade_operator(np.asarray(D_A, dtype=complex), n)
    m = drive.crosstalk
    cr_raising = np.exp(-1j * drive.phase) * tp + m * np.exp(-1j * drive.crosstalk_phase) * ap
    h_static = np.diag(basis.energies - omega_d * n).astype(complex)
    dropped = 0.5 * abs(drive.amplitude) * (np.linalg.norm(trest) + m * np.linalg.norm(arest))
    return RwaHamiltonian(
        h_static=h_static,
        cr_raising=cr_raising,
        control_raising=tp.astype(complex),
        amplitude=drive.amplitude,
        omega_d=float(omega_d),
        dropped_norm=float(dropped),
        basis=basis,
    )
