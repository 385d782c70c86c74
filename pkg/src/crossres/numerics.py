"""Shared numerical kernels: simplex minimization, Hermitian eigensolver,
matrix exponential, inverse square root and seeded random streams."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

__all__ = [
    "SimplexOptions",
    "SimplexResult",
    "nelder_mead",
    "eig_hermitian",
    "expm",
    "inv_sqrt_psd",
    "make_rng",
    "spawn_rngs",
    "SingularMatrixError",
]


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when a matrix is too close to singular for the requested operation."""


@dataclass(frozen=True)
class SimplexOptions:
    max_iter: int = 20_000
    xtol: float = 1e-10
    ftol: float = 1e-12
    initial_step: float = 0.05
    reflection: float = 1.0
    expansion: float = 2.0
    contraction: float = 0.5
    shrink: float = 0.5

    def __post_init__(self):
        coeffs = (self.reflection, self.expansion, self.contraction, self.shrink)
        if min(coeffs) <= 0:
            raise ValueError("simplex coefficients must be positive")
        if self.expansion <= self.reflection:
            raise ValueError("expansion coefficient must exceed reflection")
        if not 0 < self.contraction < 1 or not 0 < self.shrink < 1:
            raise ValueError("contraction and shrink coefficients must lie in (0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")


@dataclass
class SimplexResult:
    x: np.ndarray
    fun: float
    iterations: int
    n_evaluations: int
    converged: bool


def nelder_mead(
    f: Callable[[np.ndarray], float],
    x0,
    opts: SimplexOptions | None = None,
    *,
    step=None,
) -> SimplexResult:
    """Minimize ``f`` with the Nelder-Mead downhill simplex.

    Parameters
    ----------
    f : callable
        Objective, ``f(x) -> float``.
    x0 : array_like
        Starting point.
    opts : SimplexOptions, optional
        Iteration limits, tolerances and simplex coefficients.
    step : float or array_like, optional
        Initial simplex edge per coordinate. Defaults to
        ``opts.initial_step * max(|x0_i|, 1)``.

    Returns
    -------
    SimplexResult
        Best vertex, its value, iteration count and a convergence flag. When the
        iteration cap is hit the best point found so far is returned with
        ``converged=False``.

    Notes
    -----
    Convergence requires both the simplex diameter (max-norm distance of all
    vertices from the best one) to fall below ``xtol`` and the spread of
    function values to fall below ``ftol``.
    """
    opts = opts or SimplexOptions()
    x0 = np.asarray(x0, dtype=float).ravel()
    n = x0.size
    if step is None:
        step = opts.initial_step * np.maximum(np.abs(x0), 1.0)
    step = np.broadcast_to(np.asarray(step, dtype=float), (n,))

    simplex = np.empty((n + 1, n))
    simplex[0] = x0
    for i in range(n):
        simplex[i + 1] = x0
        simplex[i + 1, i] += step[i]
    values = np.array([f(v) for v in simplex], dtype=float)
    n_eval = n + 1
    if not np.all(np.isfinite(values)):
        raise ValueError("objective is not finite at the initial simplex")

    alpha, gamma, rho, sigma = opts.reflection, opts.expansion, opts.contraction, opts.shrink
    converged = False
    it = 0
    while it < opts.max_iter:
        order = np.argsort(values, kind="stable")
        simplex = simplex[order]
        values = values[order]
        diameter = np.max(np.abs(simplex[1:] - simplex[0]))
        spread = values[-1] - values[0]
        if diameter <= opts.xtol and spread <= opts.ftol:
            converged = True
            break
        it += 1

        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = centroid + alpha * (centroid - worst)
        fr = f(xr)
        n_eval += 1
        if fr < values[0]:
            xe = centroid + gamma * (xr - centroid)
            fe = f(xe)
            n_eval += 1
            if fe < fr:
                simplex[-1], values[-1] = xe, fe
            else:
                simplex[-1], values[-1] = xr, fr
            continue
        if fr < values[-2]:
            simplex[-1], values[-1] = xr, fr
            continue
        if fr < values[-1]:
            # outside contraction
            xc = centroid + rho * (xr - centroid)
            fc = f(xc)
            n_eval += 1
            if fc <= fr:
                simplex[-1], values[-1] = xc, fc
                continue
        else:
            xc = centroid + rho * (worst - centroid)
            fc = f(xc)
            n_eval += 1
            if fc < values[-1]:
                simplex[-1], values[-1] = xc, fc
                continue
        simplex[1:] = simplex[0] + sigma * (simplex[1:] - simplex[0])
        values[1:] = [f(v) for v in simplex[1:]]
        n_eval += n

    best = int(np.argmin(values))
    return SimplexResult(simplex[best].copy(), float(values[best]), it, n_eval, converged)


def _check_finite(M):
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix contains non-finite entries")


def eig_hermitian(H, *, tol: float = 1e-9):
    """Eigendecomposition of a Hermitian matrix, ascending eigenvalues.

    The input is symmetrized before the LAPACK call. Each eigenvector is
    phase-fixed so its largest-magnitude component is real and positive,
    which makes the output deterministic for identical input.
    """
    H = np.asarray(H)
    _check_finite(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {H.shape}")
    scale = max(np.max(np.abs(H)), 1.0) if H.size else 1.0
    if np.max(np.abs(H - H.conj().T), initial=0.0) > tol * scale:
        raise ValueError("matrix is not Hermitian within tolerance")
    Hs = 0.5 * (H + H.conj().T)
    w, V = np.linalg.eigh(Hs)
    return w, fix_phases(V)


def fix_phases(V):
    """Rotate each column so its largest-magnitude entry is real positive."""
    V = np.array(V, dtype=complex if np.iscomplexobj(V) else float, copy=True)
    if V.size == 0:
        return V
    # ties broken by the lowest row index (argmax is first-occurrence)
    mags = np.round(np.abs(V), 12)
    idx = np.argmax(mags, axis=0)
    pivots = V[idx, np.arange(V.shape[1])]
    phases = pivots / np.abs(pivots)
    return V / phases


def expm(M):
    """Matrix exponential.

    Hermitian and anti-Hermitian inputs go through an eigendecomposition
    (exact unitarity for ``expm(-i H t)``); anything else uses scipy's
    scaling-and-squaring Pade routine.
    """
    M = np.asarray(M)
    _check_finite(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if M.size == 0:
        return M.copy()
    scale = max(np.max(np.abs(M)), 1e-300)
    tol = 1e-13 * scale
    if np.max(np.abs(M - M.conj().T)) <= tol:
        w, V = np.linalg.eigh(0.5 * (M + M.conj().T))
        out = (V * np.exp(w)) @ V.conj().T
        return out.real if not np.iscomplexobj(M) else out
    if np.max(np.abs(M + M.conj().T)) <= tol:
        # anti-Hermitian: M = iK with K Hermitian
        K = -0.5j * (M - M.conj().T)
        w, V = np.linalg.eigh(K)
        out = (V * np.exp(1j * w)) @ V.conj().T
        return out.real if not np.iscomplexobj(M) else out
    return scipy.linalg.expm(M)


def inv_sqrt_psd(M, *, eps: float = 1e-12):
    """Inverse square root of a Hermitian positive-definite matrix."""
    M = np.asarray(M)
    _check_finite(M)
    w, V = np.linalg.eigh(0.5 * (M + M.conj().T))
    if w.size and w[0] <= eps:
        raise SingularMatrixError(
            f"matrix is not positive definite enough: min eigenvalue {w[0]:.3e} <= {eps:.1e}"
        )
    return (V / np.sqrt(w)) @ V.conj().T


# Random streams: numpy's counter-based Philox bit generator with
# SeedSequence spawning. Fixed here so that named seeds reproduce across runs.


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(ss))


def spawn_rngs(seed, n: int) -> list[np.random.Generator]:
    """Independent child streams derived deterministically from ``seed``."""
    if isinstance(seed, np.random.Generator):
        children = seed.bit_generator.seed_seq.spawn(n)
    else:
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        children = ss.spawn(n)
    return [np.random.Generator(np.random.Philox(c)) for c in children]
