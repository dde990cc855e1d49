"""Natural parametrization of the Gaussian AR(1) regression density.

The density of y ~ N(X zeta, sigma^2 V), with V the AR(1) correlation
matrix, is an exponential family exp(lambda' w - kappa).  The natural
parameter decomposes into six blocks built from boundary-corrected shift
and selector matrices; at rho = 0 it collapses to the familiar two-block
(coefficient, quadratic) form.  This representation drives the
post-selection conditioning: the sufficient statistics paired with
nuisance parameters are exactly the quantities that must be held fixed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ar import NoiseSpec, ar_covariance, ar_logdet
from .util import DataError

__all__ = ["NaturalParamView", "boundary_matrices", "natural_params"]


@dataclass(frozen=True)
class NaturalParamView:
    """Natural parameters, sufficient statistics, and log-normalizer.

    ``blocks`` maps block names to slices of ``lam``/``w``.  The log density
    of the underlying Gaussian is ``lam @ w - kappa``.
    """

    lam: np.ndarray
    w: np.ndarray
    kappa: float
    blocks: dict

    def __post_init__(self) -> None:
        if self.lam.shape != self.w.shape:
            raise DataError("natural parameter and statistic lengths differ")

    def log_density(self) -> float:
        return float(self.lam @ self.w - self.kappa)

    def block(self, name: str) -> tuple:
        s = self.blocks[name]
        return self.lam[s], self.w[s]


def boundary_matrices(T: int) -> tuple:
    """Shift matrix G, first-(T-1) selector Gt, and endpoint selector Gb.

    G maps y to its lead (Gy)[t] = y[t+1] (zero in the last entry); Gt is
    the identity with the last diagonal entry zeroed; Gb is the 2 x T matrix
    picking out (y[1], y[T]).  Together they express the tridiagonal AR(1)
    precision:  V^{-1} = I - q(2I - Gb'Gb) + s(Gt'G + G'Gt)  with
    q = rho^2/(rho^2-1) and s = rho/(rho^2-1).
    """
    if T < 2:
        raise DataError("need at least two time points")
    G = np.zeros((T, T))
    idx = np.arange(T - 1)
    G[idx, idx + 1] = 1.0
    Gt = np.eye(T)
    Gt[T - 1, T - 1] = 0.0
    Gb = np.zeros((2, T))
    Gb[0, 0] = 1.0
    Gb[1, T - 1] = 1.0
    return G, Gt, Gb


def natural_params(
    X: np.ndarray,
    y: np.ndarray,
    zeta: np.ndarray,
    sigma2: float,
    rho: float,
) -> NaturalParamView:
    """Assemble (lambda, w, kappa) for y ~ N(X zeta, sigma^2 V_rho).

    With rho = 0 the two-block reduced form is returned; otherwise the full
    six-block form with the boundary-correction terms.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    zeta = np.asarray(zeta, dtype=float).ravel()
    T, p = X.shape
    if y.size != T or zeta.size != p:
        raise DataError("shape mismatch between X, y, and zeta")
    if sigma2 <= 0:
        raise DataError("sigma2 must be positive")
    if rho**2 >= 1.0:
        raise DataError("|rho| must be below 1")

    spec = NoiseSpec(order=1, rho=(rho,), sigma2=sigma2, known=True)
    V = ar_covariance(spec, T)
    Vi = np.linalg.inv(V)
    mean = X @ zeta
    kappa = float(
        0.5 / sigma2 * mean @ Vi @ mean
        + 0.5 * (T * np.log(sigma2) + ar_logdet(spec, T))
        + 0.5 * T * np.log(2.0 * np.pi)
    )

    if rho == 0.0:
        lam = np.concatenate([zeta / sigma2, [-0.5 / sigma2]])
        w = np.concatenate([X.T @ y, [y @ y]])
        blocks = {"coef": slice(0, p), "quad": slice(p, p + 1)}
        return NaturalParamView(lam, w, kappa, blocks)

    s = rho / (rho**2 - 1.0)
    q = rho**2 / (rho**2 - 1.0)
    G, Gt, Gb = boundary_matrices(T)

    lam = np.concatenate([
        zeta / sigma2,
        (s / sigma2) * zeta,
        (-q / sigma2) * zeta,
        [-0.5 / sigma2, -s / sigma2, 0.5 * q / sigma2],
    ])
    GX, GtX, GbX = G @ X, Gt @ X, Gb @ X
    Gy, Gty, Gby = G @ y, Gt @ y, Gb @ y
    w = np.concatenate([
        X.T @ y,
        GtX.T @ Gy + GX.T @ Gty,
        2.0 * (X.T @ y) - GbX.T @ Gby,
        [y @ y, Gty @ Gy, 2.0 * (y @ y) - Gby @ Gby],
    ])
    blocks = {
        "coef": slice(0, p),
        "coef_lag": slice(p, 2 * p),
        "coef_edge": slice(2 * p, 3 * p),
        "quad": slice(3 * p, 3 * p + 1),
        "quad_lag": slice(3 * p + 1, 3 * p + 2),
        "quad_edge": slice(3 * p + 2, 3 * p + 3),
    }
    return NaturalParamView(lam, w, kappa, blocks)
