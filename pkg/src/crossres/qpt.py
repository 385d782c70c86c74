"""Two-qubit state and process tomography in the Pauli chi representation,
physicality projection, fidelities and readout correction."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from itertools import product
from typing import Callable

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .numerics import SimplexOptions, make_rng, nelder_mead
from .validation import check_unitary

__all__ = [
    "PAULI_LABELS",
    "pauli_basis",
    "ChiMatrix",
    "InputStateSet",
    "input_states",
    "pauli_expectations",
    "state_tomography",
    "beta_tensor",
    "lambda_matrix",
    "chi_from_lambda",
    "apply_chi",
    "trace_preservation_defect",
    "ProjectionResult",
    "project_physical",
    "process_fidelity",
    "gate_fidelity_from_process",
    "ideal_chi",
    "ConfusionMatrix",
    "correct_readout",
    "measure_expectations",
    "QPTResult",
    "run_qpt",
    "ProcessTomography",
]

log = logging.getLogger(__name__)

_P = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]]),
    "Z": np.diag([1.0, -1.0]).astype(complex),
}
PAULI_LABELS = tuple(a + b for a, b in product("IXYZ", repeat=2))


def pauli_basis() -> np.ndarray:
    """``A[4 i + j] = P_i (x) P_j`` with ``P = (I, X, Y, Z)``, unnormalized."""
    return np.array([np.kron(_P[l[0]], _P[l[1]]) for l in PAULI_LABELS])


_A = pauli_basis()


# --- chi container -----------------------------------------------------------------


@dataclass
class ChiMatrix:
    """16x16 process matrix in the basis ``A_{4i+j} = P_i (x) P_j``."""

    data: np.ndarray
    labels: tuple = PAULI_LABELS

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=complex)
        if self.data.shape != (16, 16):
            raise ValueError(f"chi must be 16x16, got {self.data.shape}")

    @property
    def hermitian(self) -> bool:
        return bool(np.allclose(self.data, self.data.conj().T, atol=1e-10))

    @property
    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.data + self.data.conj().T))[0])

    @property
    def trace(self) -> float:
        return float(np.trace(self.data).real)

    def to_dict(self) -> dict:
        return {
            "basis": list(self.labels),
            "real": [[float(v) for v in row] for row in self.data.real],
            "imag": [[float(v) for v in row] for row in self.data.imag],
            "trace": self.trace,
            "min_eigenvalue": self.min_eigenvalue,
        }


# --- states ---------------------------------------------------------------------------

_KETS = (
    np.array([1, 0], dtype=complex),
    np.array([0, 1], dtype=complex),
    np.array([1, 1], dtype=complex) / np.sqrt(2),
    np.array([1, -1j], dtype=complex) / np.sqrt(2),
)


@dataclass(frozen=True)
class InputStateSet:
    states: np.ndarray
    condition_number: float


def input_states() -> InputStateSet:
    """Products of ``|0>, |1>, |+>, (|0> - i|1>)/sqrt 2``; index ``4 i + j``."""
    rhos = []
    for a, b in product(_KETS, repeat=2):
        psi = np.kron(a, b)
        rhos.append(np.outer(psi, psi.conj()))
    rhos = np.array(rhos)
    M = rhos.reshape(16, 16).T
    return InputStateSet(rhos, float(np.linalg.cond(M)))


def pauli_expectations(rho) -> np.ndarray:
    """The 15 non-identity two-qubit Pauli expectations in basis order."""
    rho = np.asarray(rho)
    return np.real(np.einsum("mij,...ji->...m", _A[1:], rho))


def _project_simplex(w):
    """Euclidean projection of a real vector onto the probability simplex."""
    u = np.sort(w)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, len(w) + 1)
    r = np.nonzero(u - css / k > 0)[0][-1]
    return np.maximum(w - css[r] / (r + 1), 0.0)


def state_tomography(expectations, tol: float = 1e-9) -> np.ndarray:
    """Linear-inversion two-qubit state with a spectral PSD projection.

    Parameters
    ----------
    expectations : array_like, shape (15,)
        ``<P>`` for the non-identity Paulis in the order ``IX, IY, ..., ZZ``.
    """
    e = np.asarray(expectations, dtype=float)
    if e.shape != (15,):
        raise ValueError(f"need 15 Pauli expectations, got shape {e.shape}")
    if np.any(np.abs(e) > 1 + 1e-9):
        raise ValueError("Pauli expectations must lie in [-1, 1]")
    rho = 0.25 * (_A[0] + np.tensordot(e, _A[1:], axes=1))
    rho = 0.5 * (rho + rho.conj().T)
    w, V = np.linalg.eigh(rho)
    if w[0] < -tol:
        w = _project_simplex(w)
        rho = (V * w) @ V.conj().T
    return rho


# --- beta / lambda / chi ----------------------------------------------------------------


def _lu(inputs):
    M = np.asarray(inputs).reshape(len(inputs), -1).T
    if np.linalg.matrix_rank(M, tol=1e-10) < M.shape[0]:
        raise np.linalg.LinAlgError("input states are not linearly independent")
    return scipy.linalg.lu_factor(M)


def beta_tensor(basis=None, inputs=None) -> np.ndarray:
    """``beta[j, k, m, n]`` with ``A_m rho_j A_n^dag = sum_k beta[j,k,m,n] rho_k``."""
    basis = _A if basis is None else np.asarray(basis)
    inputs = input_states().states if inputs is None else np.asarray(inputs)
    lu = _lu(inputs)
    # rhs[(j, m, n)] = vec(A_m rho_j A_n^dag)
    rhs = np.einsum("mab,jbc,ndc->jmnad", basis, inputs, basis.conj())
    nj, nm = len(inputs), len(basis)
    sol = scipy.linalg.lu_solve(lu, rhs.reshape(nj * nm * nm, -1).T)
    return sol.T.reshape(nj, nm, nm, nj).transpose(0, 3, 1, 2)


def lambda_matrix(outputs, inputs=None) -> np.ndarray:
    """``lambda[j, k]`` with ``E(rho_j) = sum_k lambda[j,k] rho_k``."""
    inputs = input_states().states if inputs is None else np.asarray(inputs)
    outputs = np.asarray(outputs)
    lu = _lu(inputs)
    return scipy.linalg.lu_solve(lu, outputs.reshape(len(outputs), -1).T).T


def chi_from_lambda(lam, beta, cond_limit: float = 1e8) -> np.ndarray:
    """Solve ``lambda_jk = sum_mn chi_mn beta_jk^mn`` (256 x 256)."""
    lam = np.asarray(lam)
    B = np.asarray(beta).reshape(lam.size, -1)
    cond = np.linalg.cond(B)
    if cond > cond_limit:
        warnings.warn(f"chi inversion is ill-conditioned (condition number {cond:.3e})", RuntimeWarning, stacklevel=2)
    chi = np.linalg.solve(B, lam.ravel())
    n = int(round(np.sqrt(chi.size)))
    return chi.reshape(n, n)


def apply_chi(chi, rho) -> np.ndarray:
    """``sum_mn chi_mn A_m rho A_n^dag`` (works on batches of states)."""
    chi = chi.data if isinstance(chi, ChiMatrix) else np.asarray(chi)
    return np.einsum("mn,mab,...bc,ndc->...ad", chi, _A, np.asarray(rho), _A.conj(), optimize=True)


_TP = np.einsum("nbd,mbc->mndc", _A.conj(), _A)  # A_n^dag A_m


def trace_preservation_defect(chi) -> float:
    """``|| sum_mn chi_mn A_n^dag A_m - I ||_F``."""
    S = np.einsum("mn,mndc->dc", np.asarray(chi), _TP)
    return float(np.linalg.norm(S - np.eye(4)))


# --- physicality projection -------------------------------------------------------------

_TRIL = np.tril_indices(16, -1)


def _unpack(t):
    T = np.zeros((16, 16), dtype=complex)
    T[np.diag_indices(16)] = t[:16]
    k = len(_TRIL[0])
    T[_TRIL] = t[16 : 16 + k] + 1j * t[16 + k :]
    return T


def _pack(T):
    return np.concatenate([T.diagonal().real, T[_TRIL].real, T[_TRIL].imag])


def _chi_of(t):
    T = _unpack(t)
    C = T.conj().T @ T
    return C / np.trace(C).real


def _seed_factor(chi, eps=1e-10):
    """Lower-triangular ``T`` with ``T^dag T`` equal to the spectral projection
    of ``chi`` (negative eigenvalues removed, unit trace)."""
    w, V = np.linalg.eigh(0.5 * (chi + chi.conj().T))
    w = np.clip(w, 0.0, None)
    if w.sum() <= 0:
        w = np.ones_like(w)
    C = (V * (w / w.sum())) @ V.conj().T + eps * np.eye(len(w))
    J = np.eye(len(w))[::-1]
    L = np.linalg.cholesky(J @ C @ J)
    return J @ L.conj().T @ J


@dataclass
class ProjectionResult:
    chi: np.ndarray
    objective: float
    iterations: int
    converged: bool
    multiplier: float
    seed_objective: float = field(default=np.nan)


def project_physical(chi_exp, *, multiplier: float | None = None, opts: SimplexOptions | None = None) -> ProjectionResult:
    """Nearest completely positive, trace-preserving process matrix.

    ``chi_p = T^dag T / tr(T^dag T)`` with ``T`` complex lower triangular
    (256 real parameters). The objective is ``||chi_exp - chi_p||_F`` plus
    ``multiplier`` times the trace-preservation defect, minimized by
    Nelder-Mead from the spectral projection of ``chi_exp``. The default
    multiplier is ``10 ||chi_exp||_2``.
    """
    chi_exp = np.asarray(chi_exp, dtype=complex)
    if chi_exp.shape != (16, 16):
        raise ValueError("chi must be 16x16")
    chi_h = 0.5 * (chi_exp + chi_exp.conj().T)
    lam = 10.0 * np.linalg.norm(chi_h, 2) if multiplier is None else float(multiplier)

    def f(t):
        C = _chi_of(t)
        return float(np.linalg.norm(chi_h - C) + lam * trace_preservation_defect(C))

    t0 = _pack(_seed_factor(chi_h))
    f0 = f(t0)
    if f0 <= 1e-9:
        # already physical to working precision
        C = _chi_of(t0)
        return ProjectionResult(0.5 * (C + C.conj().T), f0, 0, True, lam, f0)
    opts = opts or SimplexOptions(max_iter=20_000, xtol=1e-9, ftol=1e-13, initial_step=1e-3)
    res = nelder_mead(f, t0, opts, step=opts.initial_step)
    best = res.x if res.fun <= f0 else t0
    C = _chi_of(best)
    C = 0.5 * (C + C.conj().T)
    return ProjectionResult(C, min(res.fun, f0), res.iterations, res.converged, lam, f0)


# --- fidelities -----------------------------------------------------------------------------


def process_fidelity(chi_p, chi_id) -> float:
    chi_p = chi_p.data if isinstance(chi_p, ChiMatrix) else np.asarray(chi_p)
    chi_id = chi_id.data if isinstance(chi_id, ChiMatrix) else np.asarray(chi_id)
    F = float(np.real(np.trace(chi_p @ chi_id.conj().T)))
    if F < 0 or F > 1:
        log.info("process fidelity %.3e clipped to [0, 1]", F)
    return float(np.clip(F, 0.0, 1.0))


def gate_fidelity_from_process(F_pro: float, d: int = 4) -> float:
    """Average gate fidelity ``(d F_pro + 1) / (d + 1)``."""
    if not 0.0 <= F_pro <= 1.0:
        raise ValueError("process fidelity must lie in [0, 1]")
    return (d * F_pro + 1.0) / (d + 1.0)


def ideal_chi(U) -> np.ndarray:
    """Rank-one chi of a two-qubit unitary, ``c_m = tr(A_m^dag U) / 4``."""
    U = check_unitary(np.asarray(U, dtype=complex), "U")
    if U.shape != (4, 4):
        raise ValueError("U must be 4x4")
    c = np.einsum("mba,ba->m", _A.conj(), U) / 4
    return np.outer(c, c.conj())


# --- readout ---------------------------------------------------------------------------------


@dataclass(frozen=True)
class ConfusionMatrix:
    """``M[i, j] = P(read i | prepared j)`` for one qubit."""

    matrix: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.matrix, dtype=float)
        if M.shape != (2, 2):
            raise ValueError("confusion matrix must be 2x2")
        if np.any(M < 0) or np.any(M > 1) or not np.allclose(M.sum(axis=0), 1.0, atol=1e-12):
            raise ValueError("confusion columns must be probability vectors")
        object.__setattr__(self, "matrix", M)

    @classmethod
    def symmetric(cls, error: float) -> "ConfusionMatrix":
        return cls(np.array([[1 - error, error], [error, 1 - error]]))

    @classmethod
    def from_fidelity(cls, fidelity: float) -> "ConfusionMatrix":
        return cls.symmetric(1.0 - fidelity)


def correct_readout(raw, confusions) -> np.ndarray:
    """Invert the tensor-product confusion model on two-qubit outcome
    probabilities ordered ``00, 01, 10, 11`` (first qubit slowest)."""
    M = np.kron(*[c.matrix if isinstance(c, ConfusionMatrix) else np.asarray(c) for c in confusions])
    if abs(np.linalg.det(M)) < 1e-12:
        raise np.linalg.LinAlgError("confusion matrix is singular")
    p = np.linalg.solve(M, np.asarray(raw, dtype=float).T).T
    clipped = -np.minimum(p, 0).sum()
    if clipped > 0:
        log.info("readout correction clipped %.3e of negative probability", clipped)
        p = np.maximum(p, 0)
        p = p / p.sum(axis=-1, keepdims=True)
    return p


_H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
_ROT = {"X": _H, "Y": _H @ np.diag([1, -1j]), "Z": np.eye(2, dtype=complex)}


def measure_expectations(rho, confusions=None, shots: int | None = None, rng=None) -> np.ndarray:
    """Pauli expectations from simulated measurements in the nine product
    bases, with optional readout error, shot noise and readout correction.

    Single-qubit terms are taken from the Z-basis setting of the other qubit.
    """
    rho = np.asarray(rho)
    rng = make_rng(rng) if shots else None
    M = None
    if confusions is not None:
        M = np.kron(*[c.matrix if isinstance(c, ConfusionMatrix) else np.asarray(c) for c in confusions])
    signs = np.array([1, -1])
    exp = {}
    for b1, b2 in product("XYZ", repeat=2):
        V = np.kron(_ROT[b1], _ROT[b2])
        p = np.clip(np.real(np.diagonal(V @ rho @ V.conj().T)), 0, None)
        p = p / p.sum()
        if M is not None:
            p = M @ p
        if shots:
            p = rng.multinomial(shots, p) / shots
        if M is not None:
            p = correct_readout(p, confusions)
        P = p.reshape(2, 2)
        exp[b1 + b2] = float(np.einsum("ab,a,b->", P, signs, signs))
        if b2 == "Z":
            exp[b1 + "I"] = float(P.sum(axis=1) @ signs)
        if b1 == "Z":
            exp["I" + b2] = float(P.sum(axis=0) @ signs)
    return np.array([exp[l] for l in PAULI_LABELS[1:]])


# --- pipeline ------------------------------------------------------------------------------------


@dataclass
class QPTResult:
    chi_exp: np.ndarray
    chi_p: np.ndarray
    F_pro: float
    F_gate: float
    projection: ProjectionResult
    outputs: np.ndarray = field(repr=False)


_ZX90 = np.cos(np.pi / 4) * np.eye(4) - 1j * np.sin(np.pi / 4) * np.kron(_P["Z"], _P["X"])


def run_qpt(
    gate: Callable,
    target=None,
    *,
    confusions=None,
    shots: int | None = None,
    rng=None,
    project: bool = True,
    opts: SimplexOptions | None = None,
) -> QPTResult:
    """Prepare the 16 inputs, apply ``gate``, reconstruct each output by
    state tomography, invert to ``chi`` and project it.

    ``gate`` maps a 4x4 density matrix (or a batch) to its output. ``target``
    is the ideal unitary (default ``exp(-i pi/4 ZX)``).
    """
    target = _ZX90 if target is None else np.asarray(target)
    ins = input_states()
    try:
        outs = np.asarray(gate(ins.states))
        if outs.shape != ins.states.shape:
            raise ValueError
    except (ValueError, TypeError):
        outs = np.array([gate(r) for r in ins.states])
    rng = make_rng(rng)
    recon = []
    for r in outs:
        if confusions is None and not shots:
            e = pauli_expectations(r)
        else:
            e = measure_expectations(r, confusions, shots, rng)
        recon.append(state_tomography(np.clip(e, -1, 1)))
    recon = np.array(recon)
    lam = lambda_matrix(recon, ins.states)
    chi_exp = chi_from_lambda(lam, beta_tensor(_A, ins.states))
    if project:
        proj = project_physical(chi_exp, opts=opts)
    else:
        C = 0.5 * (chi_exp + chi_exp.conj().T)
        proj = ProjectionResult(C, 0.0, 0, True, 0.0, 0.0)
    F = process_fidelity(proj.chi, ideal_chi(target))
    return QPTResult(chi_exp, proj.chi, F, gate_fidelity_from_process(F), proj, outs)


class ProcessTomography(TransformerMixin, BaseEstimator):
    """Estimator form of process tomography.

    ``fit(outputs)`` takes the 16 output density matrices for the standard
    inputs (or, with ``from_expectations=True``, their 16 x 15 Pauli
    expectations), reconstructs and projects ``chi``. ``transform(rho)``
    applies the fitted channel; ``score`` returns the process fidelity to
    ``target``.
    """

    def __init__(self, target=None, project=True, multiplier=None, max_iter=20_000, from_expectations=False):
        self.target = target
        self.project = project
        self.multiplier = multiplier
        self.max_iter = max_iter
        self.from_expectations = from_expectations

    def fit(self, X, y=None):
        X = np.asarray(X)
        ins = input_states().states
        if self.from_expectations:
            recon = np.array([state_tomography(e) for e in X])
        else:
            recon = X
        if recon.shape != (16, 4, 4):
            raise ValueError(f"expected 16 output states, got shape {recon.shape}")
        self.chi_exp_ = chi_from_lambda(lambda_matrix(recon, ins), beta_tensor(_A, ins))
        if self.project:
            opts = SimplexOptions(max_iter=self.max_iter, xtol=1e-9, ftol=1e-13, initial_step=1e-3)
            self.projection_ = project_physical(self.chi_exp_, multiplier=self.multiplier, opts=opts)
            self.chi_ = self.projection_.chi
        else:
            self.chi_ = 0.5 * (self.chi_exp_ + self.chi_exp_.conj().T)
        self.n_features_in_ = 16
        return self

    def transform(self, X):
        check_is_fitted(self, "chi_")
        return apply_chi(self.chi_, X)

    def score(self, X=None, y=None):
        check_is_fitted(self, "chi_")
        target = _ZX90 if self.target is None else self.target
        return process_fidelity(self.chi_, ideal_chi(target))
