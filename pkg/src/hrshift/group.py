"""Group-level random-effects estimation and tests.

One shape parameter (or its between-segment difference) per subject enters
a one-way random-effects model: gamma_i = eta + b_i + e_i, with
b_i ~ N(0, sigma2_B) between subjects and e_i ~ N(0, v_i) within subject,
the v_i known from the subject stage.  REML estimates sigma2_B; the mean
is tested with either the Wald statistic or the Knapp-Hartung small-sample
statistic, both referred to a t distribution with n-1 degrees of freedom.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.stats import t as t_dist

from .util import DataError

__all__ = [
    "GroupSample",
    "GroupTestResult",
    "RemlFit",
    "difference_sample",
    "reml_fit",
    "kh_statistic",
    "wald_statistic",
]


@dataclass(frozen=True)
class GroupSample:
    """Per-subject estimates with their within-subject variances."""

    gamma_hat: np.ndarray
    sigma_w: np.ndarray          # diagonal of Sigma_W
    labels: tuple = ()

    def __post_init__(self) -> None:
        g = np.asarray(self.gamma_hat, dtype=float).ravel()
        v = np.asarray(self.sigma_w, dtype=float).ravel()
        if g.size != v.size:
            raise DataError("estimates and variances differ in length")
        if g.size < 2:
            raise DataError("need at least two subjects")
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(v))):
            raise DataError("non-finite group sample entries")
        if np.any(v < 0):
            raise DataError("within-subject variances must be non-negative")
        object.__setattr__(self, "gamma_hat", g)
        object.__setattr__(self, "sigma_w", v)

    @property
    def n(self) -> int:
        return self.gamma_hat.size


def difference_sample(first: GroupSample, second: GroupSample) -> GroupSample:
    """Paired difference (second - first); within-variances add."""
    if first.n != second.n:
        raise DataError("paired samples need equal numbers of subjects")
    return GroupSample(
        second.gamma_hat - first.gamma_hat,
        first.sigma_w + second.sigma_w,
        labels=first.labels,
    )


class RemlFit(NamedTuple):
    eta: float
    sigma2_b: float
    var_eta: float


def _reml_neg_loglik(s: float, g: np.ndarray, v: np.ndarray) -> float:
    w = 1.0 / (s + v)
    W = float(w.sum())
    eta = float((w @ g) / W)
    r = g - eta
    return 0.5 * (float(np.log(s + v).sum()) + np.log(W) + float((w * r * r).sum()))


def reml_fit(sample: GroupSample) -> RemlFit:
    """REML for the between-subject variance, then the GLS mean.

    sigma2_B maximizes the restricted likelihood over [0, 1e3 * var(gamma)]
    by bounded scalar search (tolerance 1e-8); eta_hat is the inverse-variance
    weighted mean at the fitted covariance, with Var(eta_hat) = 1 / sum(w).
    """
    g, v = sample.gamma_hat, sample.sigma_w
    n = g.size
    ss = float(np.sum((g - g.mean()) ** 2))
    if ss == 0.0:
        # zero spread: the between variance is 0 by construction; an exact
        # (zero-variance) observation pins the mean exactly
        if np.all(v > 0):
            w = 1.0 / v
            return RemlFit(float((w @ g) / w.sum()), 0.0, float(1.0 / w.sum()))
        return RemlFit(float(g.mean()), 0.0, 0.0)

    hi = 1e3 * ss / (n - 1)
    res = minimize_scalar(
        _reml_neg_loglik, bounds=(0.0, hi), method="bounded",
        args=(g, v), options={"xatol": 1e-8},
    )
    s_hat = float(res.x)
    # the bounded search never probes the boundary itself; take it when better
    if np.all(v > 0) and _reml_neg_loglik(0.0, g, v) <= res.fun:
        s_hat = 0.0
    w = 1.0 / (s_hat + v)
    W = float(w.sum())
    return RemlFit(float((w @ g) / W), s_hat, float(1.0 / W))


@dataclass(frozen=True)
class GroupTestResult:
    eta: float
    sigma2_b: float
    statistic: float
    kind: str                    # "KH" or "Wald"
    sr: float | None             # Knapp-Hartung scale factor (KH only)
    df: int
    p_value: float
    labels: tuple = ()

    def to_json_dict(self) -> dict:
        return {
            "eta": self.eta,
            "sigma2_between": self.sigma2_b,
            "statistic": self.statistic,
            "kind": self.kind,
            "sr": self.sr,
            "df": self.df,
            "p_value": self.p_value,
            "labels": list(self.labels),
        }


def _t_test(sample: GroupSample, kind: str) -> GroupTestResult:
    fit = reml_fit(sample)
    n = sample.n
    sr = None
    if fit.var_eta > 0:
        if kind == "KH":
            w = 1.0 / (fit.sigma2_b + sample.sigma_w)
            sr = float((w * (sample.gamma_hat - fit.eta) ** 2).sum() / (n - 1))
            var = sr * fit.var_eta
        else:
            var = fit.var_eta
    else:
        var = 0.0
    if var <= 0:
        if fit.eta == 0.0:
            stat, p = 0.0, 1.0
        else:
            warnings.warn(
                "zero estimated variance with a nonzero effect; p-value set to 0",
                RuntimeWarning,
            )
            stat, p = float(np.sign(fit.eta) * np.inf), 0.0
    else:
        stat = float(fit.eta / np.sqrt(var))
        p = float(2.0 * t_dist.sf(abs(stat), n - 1))
    return GroupTestResult(
        eta=fit.eta, sigma2_b=fit.sigma2_b, statistic=stat, kind=kind,
        sr=sr, df=n - 1, p_value=p, labels=sample.labels,
    )


def kh_statistic(sample: GroupSample, second: GroupSample | None = None) -> GroupTestResult:
    """Knapp-Hartung test of eta = 0 (or of equal means, paired mode).

    T = eta_hat / sqrt(SR * Var(eta_hat)) with
    SR = sum_i w_i (gamma_i - eta_hat)^2 / (n-1), the REML-weighted residual
    quadratic form; two-sided p from t with n-1 degrees of freedom.
    """
    if second is not None:
        sample = difference_sample(sample, second)
    return _t_test(sample, "KH")


def wald_statistic(sample: GroupSample, second: GroupSample | None = None) -> GroupTestResult:
    """Wald test of eta = 0 (or of equal means, paired mode)."""
    if second is not None:
        sample = difference_sample(sample, second)
    return _t_test(sample, "Wald")
