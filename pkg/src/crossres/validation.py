"""Input checks shared by the estimators and functional entry points."""

from __future__ import annotations

import numpy as np

__all__ = [
    "check_square",
    "check_hermitian",
    "check_unitary",
    "check_density_matrix",
    "check_finite_scalar",
]


def check_square(M, name: str = "matrix") -> np.ndarray:
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} contains non-finite entries")
    return M


def check_hermitian(M, name: str = "matrix", tol: float = 1e-9) -> np.ndarray:
    """Return the Hermitian part of ``M`` after verifying the anti-Hermitian part
    is below ``tol`` relative to the largest entry."""
    M = check_square(M, name)
    scale = max(np.max(np.abs(M), initial=0.0), 1.0)
    defect = np.max(np.abs(M - M.conj().T), initial=0.0)
    if defect > tol * scale:
        raise ValueError(f"{name} is not Hermitian (defect {defect:.3e})")
    return 0.5 * (M + M.conj().T)


def check_unitary(U, name: str = "unitary", tol: float = 1e-10) -> np.ndarray:
    U = check_square(U, name)
    defect = np.linalg.norm(U.conj().T @ U - np.eye(U.shape[0]))
    if defect > tol * max(1.0, U.shape[0]):
        raise ValueError(f"{name} is not unitary (defect {defect:.3e})")
    return U


def check_density_matrix(rho, name: str = "rho", tol: float = 1e-9) -> np.ndarray:
    rho = check_hermitian(rho, name, tol)
    tr = np.trace(rho).real
    if abs(tr - 1.0) > tol:
        raise ValueError(f"{name} must have unit trace, got {tr:.12g}")
    wmin = np.linalg.eigvalsh(rho)[0]
    if wmin < -tol:
        raise ValueError(f"{name} is not positive semidefinite (min eigenvalue {wmin:.3e})")
    return rho


def check_finite_scalar(value, name: str) -> float:
    value = float(value)
    if not np.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value}")
    return value
