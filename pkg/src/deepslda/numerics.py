"""Dense symmetric-matrix helpers: SPD solves, shrinkage precision, OAS.

Symmetric matrices are plain 2-D float64 numpy arrays. Routines that
produce them copy the lower triangle over the upper one so the result is
symmetric bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack

from .errors import InsufficientSamples, NotSPD, RegularizedNotSPD

# shrinkage values swept when tuning epsilon
SHRINKAGE_GRID = (1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0)


@dataclass(frozen=True)
class Tolerances:
    precision_residual: float = 1e-8
    solve_residual: float = 1e-10
    # relative asymmetry accepted on input before refusing to regularize
    symmetry: float = 1e-10


DEFAULT_TOLERANCES = Tolerances()


@dataclass(frozen=True)
class ShrinkageConfig:
    epsilon: float = 1e-4

    def __post_init__(self):
        if not (0.0 < self.epsilon <= 1.0):
            raise ValueError(f"epsilon must lie in (0, 1], got {self.epsilon}")


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Return a copy of ``a`` with the upper triangle mirrored from the lower."""
    a = np.array(a, dtype=np.float64, copy=True)
    iu = np.triu_indices(a.shape[0], k=1)
    a[iu] = a.T[iu]
    return a


def _check_square(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ValueError(f"{name} must be a non-empty square matrix, got shape {a.shape}")
    return a


def is_symmetric(a: np.ndarray, tol: float = DEFAULT_TOLERANCES.symmetry) -> bool:
    scale = max(float(np.max(np.abs(a))), 1.0)
    return bool(np.max(np.abs(a - a.T)) <= tol * scale)


def cholesky_lower(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of ``a``; raises NotSPD when a pivot is not positive."""
    a = _check_square(a)
    c, info = lapack.dpotrf(a, lower=1, clean=1)
    if info != 0:
        raise NotSPD(f"Cholesky factorization failed at pivot {info}")
    return c


def spd_inverse(a: np.ndarray) -> np.ndarray:
    """Invert an SPD matrix through its Cholesky factor (potrf + potri)."""
    c = cholesky_lower(a)
    inv, info = lapack.dpotri(c, lower=1)
    if info != 0:
        raise NotSPD(f"triangular inversion failed (info={info})")
    il = np.tril_indices(inv.shape[0], k=-1)
    inv[il[1], il[0]] = inv[il]
    return inv


def spd_solve(a: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``a @ x = rhs`` for SPD ``a``; ``rhs`` may be a vector or a matrix."""
    c = cholesky_lower(a)
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.shape[0] != c.shape[0]:
        raise ValueError(f"rhs has {rhs.shape[0]} rows, matrix is {c.shape[0]}x{c.shape[0]}")
    x, info = lapack.dpotrs(c, rhs, lower=1)
    if info != 0:
        raise NotSPD(f"potrs failed (info={info})")
    return x


def regularize(sigma: np.ndarray, cfg: ShrinkageConfig) -> np.ndarray:
    """(1 - eps) * sigma + eps * I."""
    sigma = _check_square(sigma, "sigma")
    eps = cfg.epsilon
    out = (1.0 - eps) * sigma
    out[np.diag_indices_from(out)] += eps
    return out


def shrinkage_precision(
    sigma: np.ndarray,
    cfg: ShrinkageConfig = ShrinkageConfig(),
    tol: Tolerances = DEFAULT_TOLERANCES,
) -> np.ndarray:
    """Precision of the shrinkage-regularized covariance, ``[(1-eps)Σ + eps I]^-1``.

    Raises RegularizedNotSPD if the regularized matrix is asymmetric or its
    Cholesky factorization fails (eps too small for an indefinite Σ).
    """
    sigma = _check_square(sigma, "sigma")
    if not np.all(np.isfinite(sigma)):
        raise RegularizedNotSPD("sigma contains non-finite entries")
    if not is_symmetric(sigma, tol.symmetry):
        raise RegularizedNotSPD("sigma is not symmetric")
    try:
        return spd_inverse(regularize(sigma, cfg))
    except NotSPD as exc:
        raise RegularizedNotSPD(
            f"(1-eps)Σ + eps·I is not positive definite for eps={cfg.epsilon}: {exc}"
        ) from exc


def empirical_covariance(samples: np.ndarray) -> np.ndarray:
    """Mean-centred covariance with divisor n."""
    x = np.asarray(samples, dtype=np.float64)
    xc = x - x.mean(axis=0)
    return symmetrize(xc.T @ xc / x.shape[0])


def oas_shrinkage(s: np.ndarray, n: int) -> float:
    """OAS shrinkage intensity for empirical covariance ``s`` estimated from ``n`` samples."""
    d = s.shape[0]
    tr_s = float(np.trace(s))
    tr_s2 = float(np.sum(s * s))
    num = (1.0 - 2.0 / d) * tr_s2 + tr_s**2
    den = (n + 1.0 - 2.0 / d) * (tr_s2 - tr_s**2 / d)
    if den <= 0.0:
        return 1.0
    return float(min(1.0, max(0.0, num / den)))


def oas_covariance(samples: np.ndarray) -> np.ndarray:
    """Oracle Approximating Shrinkage covariance of an ``n x d`` sample matrix.

    Shrinks the divisor-n empirical covariance toward ``tr(S)/d * I``.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"samples must be a 2-D array, got shape {x.shape}")
    n, d = x.shape
    if n < 2:
        raise InsufficientSamples(f"OAS needs at least 2 samples, got {n}")
    if d < 1:
        raise ValueError("samples must have at least one column")
    s = empirical_covariance(x)
    rho = oas_shrinkage(s, n)
    out = (1.0 - rho) * s
    out[np.diag_indices(d)] += rho * float(np.trace(s)) / d
    return symmetrize(out)
