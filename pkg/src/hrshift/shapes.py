"""The seven scalar descriptors of a hemodynamic response curve and their
Monte-Carlo within-subject variances.

Descriptors (time quantities in seconds from curve start):

* ``pm``   peak magnitude (curve maximum)
* ``ttp``  time to peak (argmax)
* ``na``   nadir amplitude: minimum after the peak (undershoot depth)
* ``tpn``  time from peak to nadir
* ``fwhm`` full width at half maximum, linear interpolation at crossings
* ``fwhn`` full width at half nadir, same convention around the undershoot
* ``auc``  signed trapezoidal area of the whole curve window

A descriptor can be undefined for a given curve (flat curve, no negative
undershoot, half level never crossed); validity flags record this and the
Monte-Carlo variance excludes invalid draws per descriptor.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .glm import SubjectGLMFit
from .hrf import BasisSet
from .util import DataError

__all__ = [
    "PARAM_NAMES",
    "ShapeParams",
    "shape_params",
    "batch_shape_params",
    "mc_shape_variance",
    "McShapeVariances",
    "auc_weights",
    "psd_repair",
]

PARAM_NAMES = ("pm", "ttp", "na", "tpn", "fwhm", "fwhn", "auc")


@dataclass(frozen=True)
class ShapeParams:
    values: dict
    valid: dict

    def __getitem__(self, name: str) -> float:
        return self.values[name]

    def is_valid(self, name: str) -> bool:
        return bool(self.valid[name])

    def as_dict(self) -> dict:
        return {
            name: {"value": float(self.values[name]), "valid": bool(self.valid[name])}
            for name in PARAM_NAMES
        }


def batch_shape_params(curves: np.ndarray, dt: float) -> tuple:
    """Vectorized descriptor extraction for a stack of curves.

    Parameters
    ----------
    curves : ndarray, shape (D, n) or (n,)
    dt : float
        Seconds per curve sample.

    Returns
    -------
    values, valid : dict of ndarray keyed by descriptor name.
    """
    curves = np.atleast_2d(np.asarray(curves, dtype=float))
    D, n = curves.shape
    if n < 3:
        raise DataError(f"curves must have at least 3 samples, got {n}")
    rows = np.arange(D)
    idx = np.arange(n)

    ipk = curves.argmax(axis=1)
    pm = curves[rows, ipk]
    flat = pm == curves.min(axis=1)
    ttp = ipk * dt

    # nadir: minimum strictly after the peak
    after = idx[None, :] > ipk[:, None]
    has_after = after.any(axis=1)
    masked = np.where(after, curves, np.inf)
    inad = masked.argmin(axis=1)
    na = np.where(has_after, masked[rows, inad], np.nan)
    na_valid = has_after & ~flat & (np.nan_to_num(na, nan=1.0) < 0)
    tpn = (inad - ipk) * dt

    # full width at half maximum
    half = pm / 2.0
    below = curves < half[:, None]
    il = np.where(below & (idx[None, :] <= ipk[:, None]), idx[None, :], -1).max(axis=1)
    ir = np.where(below & (idx[None, :] >= ipk[:, None]), idx[None, :], n + 1).min(axis=1)
    fwhm_valid = (il >= 0) & (il < ipk) & (ir <= n - 1) & (ir > ipk) & (pm > 0) & ~flat
    il_ = np.clip(il, 0, n - 2)
    ir_ = np.clip(ir, 1, n - 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        cl0, cl1 = curves[rows, il_], curves[rows, il_ + 1]
        t_left = (il_ + (half - cl0) / (cl1 - cl0)) * dt
        cr0, cr1 = curves[rows, ir_ - 1], curves[rows, ir_]
        t_right = (ir_ - 1 + (cr0 - half) / (cr0 - cr1)) * dt
    fwhm = np.where(fwhm_valid, t_right - t_left, np.nan)

    # full width at half nadir (region where curve <= na/2 around the nadir)
    thr = na / 2.0
    above = curves > np.where(np.isnan(thr), -np.inf, thr)[:, None]
    jl = np.where(above & (idx[None, :] <= inad[:, None]), idx[None, :], -1).max(axis=1)
    jr = np.where(above & (idx[None, :] >= inad[:, None]), idx[None, :], n + 1).min(axis=1)
    fwhn_valid = na_valid & (jl >= 0) & (jl < inad) & (jr <= n - 1) & (jr > inad)
    jl_ = np.clip(jl, 0, n - 2)
    jr_ = np.clip(jr, 1, n - 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        dl0, dl1 = curves[rows, jl_], curves[rows, jl_ + 1]
        s_left = (jl_ + (dl0 - thr) / (dl0 - dl1)) * dt
        dr0, dr1 = curves[rows, jr_ - 1], curves[rows, jr_]
        s_right = (jr_ - 1 + (thr - dr0) / (dr1 - dr0)) * dt
    fwhn = np.where(fwhn_valid, s_right - s_left, np.nan)

    auc = np.trapezoid(curves, dx=dt, axis=1)

    ok = ~flat
    values = {
        "pm": pm,
        "ttp": ttp,
        "na": np.where(na_valid, na, np.nan),
        "tpn": np.where(na_valid, tpn, np.nan),
        "fwhm": fwhm,
        "fwhn": fwhn,
        "auc": auc,
    }
    valid = {
        "pm": ok,
        "ttp": ok,
        "na": na_valid,
        "tpn": na_valid,
        "fwhm": fwhm_valid,
        "fwhn": fwhn_valid,
        "auc": ok,
    }
    return values, valid


def shape_params(curve: np.ndarray, dt: float) -> ShapeParams:
    """Descriptors of a single sampled curve."""
    values, valid = batch_shape_params(curve, dt)
    return ShapeParams(
        values={k: float(v[0]) for k, v in values.items()},
        valid={k: bool(v[0]) for k, v in valid.items()},
    )


def auc_weights(basis: BasisSet) -> np.ndarray:
    """Weight vector b with auc(B @ beta) = b @ beta (trapezoidal rule)."""
    n = basis.n_samples
    w = np.full(n, basis.dt)
    w[0] = w[-1] = basis.dt / 2.0
    return w @ basis.matrix


def psd_repair(cov: np.ndarray, tol: float = 1e-10):
    """Symmetrize and clip tiny negative eigenvalues; reject real negativity.

    Returns (eigenvalues, eigenvectors) of the repaired matrix.
    """
    sym = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(sym)
    trace = float(np.trace(sym))
    floor = -tol * max(trace, 1.0)
    if np.any(vals < floor):
        raise DataError(
            f"coefficient covariance is not positive semi-definite "
            f"(min eigenvalue {vals.min():.3e})"
        )
    return np.clip(vals, 0.0, None), vecs


@dataclass(frozen=True)
class McShapeVariances:
    variances: dict
    excluded: dict
    iters: int

    def __getitem__(self, name: str) -> float:
        return self.variances[name]


def mc_shape_variance(
    fit: SubjectGLMFit,
    basis: BasisSet,
    condition: str,
    segment: int = 0,
    iters: int = 10_000,
    rng: np.random.Generator | None = None,
    seed: int | None = None,
) -> McShapeVariances:
    """Monte-Carlo within-subject variance of the shape descriptors.

    Coefficients are drawn from N(beta_hat, cov_beta) for the requested
    (condition, segment) block, each draw's curve is re-described, and the
    per-descriptor empirical variance over valid draws is returned together
    with the number of excluded (invalid) draws.
    """
    if iters < 100:
        raise DataError(f"iters must be >= 100, got {iters}")
    if rng is None:
        rng = np.random.default_rng(seed)
    beta, cov = fit.block_beta_cov(condition, segment)
    vals, vecs = psd_repair(cov)
    scale = vecs * np.sqrt(vals)
    draws = beta + rng.standard_normal((iters, beta.size)) @ scale.T
    curves = draws @ basis.matrix.T
    values, valid = batch_shape_params(curves, basis.dt)
    variances, excluded = {}, {}
    for name in PARAM_NAMES:
        mask = valid[name]
        excluded[name] = int(iters - mask.sum())
        if mask.sum() >= 2:
            variances[name] = float(np.var(values[name][mask], ddof=1))
        else:
            variances[name] = float("nan")
    return McShapeVariances(variances, excluded, iters)
