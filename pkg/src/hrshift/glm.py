"""Subject-level generalized least squares fitting and response reconstruction."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ar import NoiseSpec, ar_logdet, estimate_ar, whiten
from .design import DesignMatrix
from .hrf import BasisSet
from .util import DataError

__all__ = ["SubjectGLMFit", "fit_gls", "estimate_hr"]


@dataclass
class SubjectGLMFit:
    """GLS fit of one subject/ROI time series.

    ``sigma2`` is the marginal residual variance (the plug-in value when the
    noise is known a priori, the T-p estimate otherwise); ``cov_beta`` is
    sigma2 * (X' V^-1 X)^-1.
    """

    beta: np.ndarray
    cov_beta: np.ndarray
    sigma2: float
    noise: NoiseSpec
    loglik: float
    design: DesignMatrix
    residuals: np.ndarray

    def block_indices(self, condition: str, segment: int) -> list:
        return self.design.column_indices("condition", condition, segment)

    def block_beta_cov(self, condition: str, segment: int):
        """Coefficients and their covariance for one (condition, segment) block."""
        idx = self.block_indices(condition, segment)
        return self.beta[idx], self.cov_beta[np.ix_(idx, idx)]


def fit_gls(
    y: np.ndarray,
    design: DesignMatrix,
    noise: NoiseSpec | None = None,
    estimate_order: int = 1,
) -> SubjectGLMFit:
    """Fit y = X beta + eps with eps ~ N(0, sigma2 V).

    When ``noise`` is None the AR coefficients are estimated from ordinary
    least squares residuals (Yule-Walker), the data are whitened, and the
    model is refit once.  When ``noise.known`` is set, the provided sigma2
    is used everywhere; otherwise sigma2 is the whitened residual sum of
    squares over T - p.
    """
    y = np.asarray(y, dtype=float).ravel()
    X = design.matrix
    T, p = X.shape
    if y.size != T:
        raise DataError(f"series length {y.size} does not match design rows {T}")
    if T <= p:
        raise DataError(f"need more scans than design columns (T={T}, p={p})")

    if noise is None:
        beta_ols, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
        if rank < p:
            raise DataError("design matrix is rank deficient")
        spec = estimate_ar(y - X @ beta_ols, order=estimate_order)
        noise = NoiseSpec(order=spec.order, rho=spec.rho, sigma2=spec.sigma2, known=False)

    Xw = whiten(X, noise)
    yw = whiten(y, noise)
    beta, _, rank, _ = np.linalg.lstsq(Xw, yw, rcond=None)
    if rank < p:
        raise DataError("design matrix is rank deficient after whitening")
    resid_w = yw - Xw @ beta
    rss = float(resid_w @ resid_w)
    sigma2 = noise.sigma2 if noise.known else rss / (T - p)
    if sigma2 <= 0:
        raise DataError("non-positive residual variance")
    xtx_inv = np.linalg.inv(Xw.T @ Xw)
    cov_beta = sigma2 * xtx_inv
    loglik = -0.5 * (T * np.log(2.0 * np.pi * sigma2) + ar_logdet(noise, T) + rss / sigma2)
    return SubjectGLMFit(
        beta=beta,
        cov_beta=cov_beta,
        sigma2=sigma2,
        noise=noise,
        loglik=float(loglik),
        design=design,
        residuals=y - X @ beta,
    )


def estimate_hr(fit: SubjectGLMFit, basis: BasisSet, condition: str, segment: int = 0) -> np.ndarray:
    """Reconstruct the hemodynamic response curve B @ beta for one block."""
    idx = fit.block_indices(condition, segment)
    if len(idx) != basis.n_functions:
        raise DataError(
            f"block has {len(idx)} coefficients but basis has {basis.n_functions} functions"
        )
    return basis.matrix @ fit.beta[idx]
