"""Autoregressive noise structure: covariance, precision, whitening, estimation.

Noise in the subject-level model is ``eps ~ N(0, sigma2 * V)`` where ``V`` is
the unit-diagonal correlation matrix of a stationary AR(1) or AR(2) process.
AR(1) covariance and precision have closed forms (Toeplitz / tridiagonal);
AR(2) falls back to dense linear algebra.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import toeplitz

from .util import DataError

__all__ = [
    "NoiseSpec",
    "ar1_covariance",
    "ar1_precision",
    "ar2_covariance",
    "ar_covariance",
    "whitening_matrix",
    "whiten",
    "estimate_ar",
]


@dataclass(frozen=True)
class NoiseSpec:
    """Stationary AR noise description.

    Parameters
    ----------
    order : int
        1 or 2.
    rho : tuple of float
        AR coefficients, one per order.  Stationarity is required.
    sigma2 : float
        Marginal noise variance (the diagonal of ``sigma2 * V``).
    known : bool
        When True, ``sigma2 * V`` is treated as known a priori downstream
        (plug-in likelihoods, known-variance post-selection inference).
    """

    order: int = 1
    rho: tuple = (0.0,)
    sigma2: float = 1.0
    known: bool = False

    def __post_init__(self):
        rho = tuple(float(r) for r in np.atleast_1d(self.rho))
        object.__setattr__(self, "rho", rho)
        if self.order not in (1, 2):
            raise DataError(f"AR order must be 1 or 2, got {self.order}")
        if len(rho) != self.order:
            raise DataError(f"expected {self.order} AR coefficient(s), got {len(rho)}")
        if not np.isfinite(self.sigma2) or self.sigma2 <= 0:
            raise DataError(f"sigma2 must be positive, got {self.sigma2}")
        if self.order == 1:
            if abs(rho[0]) >= 1:
                raise DataError(f"AR(1) requires |rho| < 1, got {rho[0]}")
        else:
            r1, r2 = rho
            if not (abs(r2) < 1 and r2 + r1 < 1 and r2 - r1 < 1):
                raise DataError(f"AR(2) coefficients {rho} are not stationary")

    @property
    def is_white(self) -> bool:
        return all(r == 0.0 for r in self.rho)


def ar1_covariance(rho: float, T: int) -> np.ndarray:
    """Correlation matrix of a stationary AR(1) process: V[s, t] = rho**|s-t|."""
    if abs(rho) >= 1:
        raise DataError(f"AR(1) requires |rho| < 1, got {rho}")
    if T < 1:
        raise DataError(f"T must be >= 1, got {T}")
    col = rho ** np.arange(T, dtype=float)
    return toeplitz(col)


def ar1_precision(rho: float, T: int) -> np.ndarray:
    """Closed-form inverse of :func:`ar1_covariance` (tridiagonal).

    For |rho| < 1 the inverse is
    ``(1/(1-rho^2)) * tridiag(-rho; 1, 1+rho^2, ..., 1+rho^2, 1; -rho)``.
    """
    if abs(rho) >= 1:
        raise DataError(f"AR(1) requires |rho| < 1, got {rho}")
    if T < 1:
        raise DataError(f"T must be >= 1, got {T}")
    if T == 1:
        return np.array([[1.0]])
    scale = 1.0 / (1.0 - rho * rho)
    diag = np.full(T, (1.0 + rho * rho) * scale)
    diag[0] = diag[-1] = scale
    P = np.diag(diag)
    off = np.full(T - 1, -rho * scale)
    P += np.diag(off, 1) + np.diag(off, -1)
    return P


def _ar2_autocorr(rho1: float, rho2: float, T: int) -> np.ndarray:
    r = np.empty(T)
    r[0] = 1.0
    if T > 1:
        r[1] = rho1 / (1.0 - rho2)
    for k in range(2, T):
        r[k] = rho1 * r[k - 1] + rho2 * r[k - 2]
    return r


def ar2_covariance(rho1: float, rho2: float, T: int) -> np.ndarray:
    """Correlation matrix of a stationary AR(2) process (Yule-Walker recursion)."""
    spec = NoiseSpec(order=2, rho=(rho1, rho2))  # validates stationarity
    return toeplitz(_ar2_autocorr(*spec.rho, T))


def ar_covariance(spec: NoiseSpec, T: int) -> np.ndarray:
    """Correlation matrix for either supported order."""
    if spec.order == 1:
        return ar1_covariance(spec.rho[0], T)
    return ar2_covariance(spec.rho[0], spec.rho[1], T)


def ar_logdet(spec: NoiseSpec, T: int) -> float:
    """log det of the correlation matrix V (closed form for AR(1))."""
    if spec.order == 1:
        rho = spec.rho[0]
        return float((T - 1) * np.log1p(-rho * rho))
    sign, logdet = np.linalg.slogdet(ar_covariance(spec, T))
    if sign <= 0:
        raise DataError("noise correlation matrix is not positive definite")
    return float(logdet)


def whitening_matrix(spec: NoiseSpec, T: int, method: str = "cholesky") -> np.ndarray:
    """Matrix W with W V W' = I for the correlation matrix V of ``spec``.

    ``method="cholesky"`` uses the inverse lower Cholesky factor (banded and
    closed-form for AR(1)); ``method="symmetric"`` uses the symmetric inverse
    square root.  GLS results are invariant to the choice.
    """
    if method not in ("cholesky", "symmetric"):
        raise ValueError(f"unknown whitening method {method!r}")
    if spec.is_white:
        return np.eye(T)
    if method == "symmetric":
        V = ar_covariance(spec, T)
        vals, vecs = np.linalg.eigh(V)
        if np.any(vals <= 0):
            raise DataError("noise correlation matrix is not positive definite")
        return (vecs / np.sqrt(vals)) @ vecs.T
    if spec.order == 1:
        # First row sqrt(1-rho^2)*y1; rows t: y_t - rho*y_{t-1}; rescaled so
        # the whitened noise has unit variance (not innovation variance).
        rho = spec.rho[0]
        W = np.eye(T)
        idx = np.arange(1, T)
        W[idx, idx - 1] = -rho
        W /= np.sqrt(1.0 - rho * rho)
        W[0, 0] = 1.0
        return W
    V = ar_covariance(spec, T)
    L = np.linalg.cholesky(V)
    return np.linalg.inv(L)


def whiten(arr: np.ndarray, spec: NoiseSpec, method: str = "cholesky") -> np.ndarray:
    """Apply the whitening transform to a vector or matrix (rows are time)."""
    arr = np.asarray(arr, dtype=float)
    T = arr.shape[0]
    if spec.is_white:
        return arr.copy()
    return whitening_matrix(spec, T, method=method) @ arr


def estimate_ar(residuals: np.ndarray, order: int = 1, clamp: float = 0.99) -> NoiseSpec:
    """Yule-Walker AR fit on regression residuals.

    Returns a :class:`NoiseSpec` with ``sigma2`` set to the marginal residual
    variance.  AR(1) coefficients are clamped to ``[-clamp, clamp]`` for
    numerical stability near the unit root.
    """
    e = np.asarray(residuals, dtype=float).ravel()
    if e.size < 10:
        raise DataError(f"need at least 10 residuals to estimate AR noise, got {e.size}")
    n = e.size
    acov = [float(e[: n - k] @ e[k:]) / n for k in range(order + 1)]
    if acov[0] <= 0 or np.ptp(e) == 0:
        raise DataError("residuals are constant; AR coefficients are undefined")
    if order == 1:
        rho = float(np.clip(acov[1] / acov[0], -clamp, clamp))
        return NoiseSpec(order=1, rho=(rho,), sigma2=acov[0])
    if order == 2:
        r1, r2 = acov[1] / acov[0], acov[2] / acov[0]
        A = np.array([[1.0, r1], [r1, 1.0]])
        phi = np.linalg.solve(A, np.array([r1, r2]))
        return NoiseSpec(order=2, rho=tuple(phi), sigma2=acov[0])
    raise DataError(f"AR order must be 1 or 2, got {order}")
