"""Post-selection confidence distributions for a change-magnitude coefficient.

After picking a change-point configuration by maximum likelihood, the naive
variance of the change coefficient ignores that the same data chose the
model.  The remedy implemented here is the conditional (truncated
exponential family) law of the focus sufficient statistic given all
nuisance sufficient statistics and the selection event.  Its CDF in the
focus natural parameter theta — the confidence distribution — yields a
variance and point estimates that account for selection.

Two regimes:

* known sigma^2 V (Proposition-1 setting): conditioning on the nuisance
  coefficient statistics of every candidate model plus the whitened squared
  norm confines the data to a sphere inside an affine slice; the tilted law
  there is von Mises-Fisher, which we sample exactly (no optimization),
  with the selection event enforced by rejection.

* unknown sigma^2 / rho (Proposition-2 setting): the literal conditioning
  statistics over-determine the data, so we sample a one-parameter family
  y* = y_obs + t * X d (d in the null space of the non-focus cross-moment
  matrix).  The family preserves the selected model's non-focus statistics
  and the ordinary-least-squares residual vector exactly; the remaining
  boundary-correction and quadratic statistics cannot be held fixed along
  any non-trivial family and are documented as unenforced.  t follows the
  plug-in Gaussian slice law tilted to the requested theta.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import orth
from scipy.special import expit

from .ar import NoiseSpec, whitening_matrix
from .selection import CandidateModel
from .util import DataError, substream

__all__ = [
    "PosiProblem",
    "SamplerResult",
    "ConfidenceDistributionEstimate",
    "BoundsResult",
    "conditional_sampler",
    "approx_cd",
    "bounds_search",
    "posi_variance",
    "posi_analysis",
]

_RANK_TOL = 1e-9
_AUDIT_RTOL = 1e-6


# ---------------------------------------------------------------------------
# problem setup
# ---------------------------------------------------------------------------

def _dedup_columns(columns: Sequence[np.ndarray], exclude: np.ndarray) -> np.ndarray:
    """Stack distinct columns, dropping any equal to the excluded one.

    Identity is exact byte equality: candidate designs are built
    deterministically, so shared regressors (full-convolution column,
    intercept, confounds) repeat bit-for-bit across candidates.
    """
    seen = {np.ascontiguousarray(exclude).tobytes()}
    out = []
    for col in columns:
        key = np.ascontiguousarray(col).tobytes()
        if key not in seen:
            seen.add(key)
            out.append(col)
    if not out:
        raise DataError("no nuisance statistics left to condition on")
    return np.column_stack(out)


@dataclass
class PosiProblem:
    """Observed data, candidate set, focus column, and conditioning caches."""

    y: np.ndarray
    models: tuple
    selected_index: int
    focus: int
    noise: NoiseSpec
    # filled by __post_init__
    w_obs: float = field(init=False)
    theta_hat_ols: float = field(init=False)
    se_theta: float = field(init=False)

    def __post_init__(self) -> None:
        y = np.asarray(self.y, dtype=float).ravel()
        self.y = y
        T = y.size
        sel = self.models[self.selected_index]
        X = sel.design.matrix
        if not 0 <= self.focus < X.shape[1]:
            raise DataError(f"focus column {self.focus} out of range")
        W = whitening_matrix(self.noise, T)
        self._W = W
        self._x_obs = W @ y
        # per-candidate orthonormal bases of the whitened column spaces,
        # used for the likelihood-comparison selection check
        self._Q_models = []
        for m in self.models:
            Q, R = np.linalg.qr(W @ m.design.matrix)
            if np.min(np.abs(np.diag(R))) < _RANK_TOL * max(1.0, np.max(np.abs(np.diag(R)))):
                raise DataError("candidate design is rank deficient after whitening")
            self._Q_models.append(Q)

        focus_col = X[:, self.focus]
        all_cols = [
            m.design.matrix[:, j]
            for m in self.models
            for j in range(m.design.matrix.shape[1])
        ]
        U = _dedup_columns(all_cols, exclude=focus_col)
        self._n_nuisance = U.shape[1]

        sigma2 = self.noise.sigma2
        Xw = W @ X
        xtx_inv = np.linalg.inv(Xw.T @ Xw)
        beta = xtx_inv @ (Xw.T @ self._x_obs)
        self.theta_hat_ols = float(beta[self.focus] / sigma2)
        self.se_theta = float(np.sqrt(xtx_inv[self.focus, self.focus] / sigma2))

        if self.noise.known:
            # sphere-in-slice geometry of the Proposition-1 conditioning
            a_f = W @ focus_col
            Uw = W @ U
            self._Uw = Uw
            Q_U = orth(Uw)
            self._Q_U = Q_U
            x_par = Q_U @ (Q_U.T @ self._x_obs)
            self._x_par = x_par
            r2 = float(self._x_obs @ self._x_obs - x_par @ x_par)
            self._radius = float(np.sqrt(max(r2, 0.0)))
            g = a_f - Q_U @ (Q_U.T @ a_f)
            gnorm = float(np.linalg.norm(g))
            if gnorm < 1e-10 * max(1.0, float(np.linalg.norm(a_f))):
                raise DataError(
                    "focus column lies in the span of the conditioned statistics; "
                    "its coefficient is not identified by the conditional law"
                )
            self._a_f = a_f
            self._gnorm = gnorm
            self._mu = g / gnorm
            self._m = T - Q_U.shape[1]
            if self._m < 1:
                raise DataError("conditioning leaves no degrees of freedom")
            self.w_obs = float(a_f @ self._x_obs)
            self._w_par = float(a_f @ x_par)
        else:
            # line family of the Proposition-2 best-effort sampler
            X_rest = np.delete(X, self.focus, axis=1)
            M = X_rest.T @ X
            _, sv, Vt = np.linalg.svd(M)
            d = Vt[-1]
            resid = float(np.linalg.norm(M @ d))
            scale0 = float(sv[0]) if sv.size else 1.0
            if resid > _RANK_TOL * max(1.0, scale0):
                raise DataError("non-focus cross-moment matrix has no null direction")
            Xd = X @ d
            scale = float(X[:, self.focus] @ Xd)
            if abs(scale) < _RANK_TOL:
                raise DataError("line family does not move the focus statistic")
            if scale < 0:
                d, Xd, scale = -d, -Xd, -scale
            self._d = d
            self._Xd = Xd
            self._w_scale = scale               # d w*/d t
            self._Xd_w = W @ Xd                 # whitened direction (plug-in V)
            self._Xd_w2 = float(self._Xd_w @ self._Xd_w)
            self.w_obs = float(focus_col @ y)
            self._X_rest = X_rest
            # OLS residual statistics w_bar, preserved exactly along the line
            Q_sel, _ = np.linalg.qr(X)
            self._resid_obs = y - Q_sel @ (Q_sel.T @ y)
            self._Q_sel_plain = Q_sel
            # plug-in mean for the tilt: non-focus coefficients at their
            # GLS estimates, focus coefficient at theta_e * sigma2
            self._beta_plugin = beta
            self._zeta_dir = np.zeros(X.shape[1])
            self._zeta_dir[self.focus] = 1.0
            self._Xw = Xw

    # -- diagnostics ------------------------------------------------------

    @property
    def n_models(self) -> int:
        return len(self.models)

    @property
    def selected_model(self) -> CandidateModel:
        return self.models[self.selected_index]


# ---------------------------------------------------------------------------
# exact sphere sampling (known variance)
# ---------------------------------------------------------------------------

def _vmf_cos(rng: np.random.Generator, kappa: float, m: int, size: int) -> np.ndarray:
    """Cosine marginal of the von Mises-Fisher law on the sphere in R^m.

    Density on [-1, 1] proportional to exp(kappa*t) (1-t^2)^((m-3)/2),
    sampled by Wood's beta-rejection scheme; m == 1 degenerates to +-1.
    Negative concentration is handled by flipping the sign.
    """
    if size == 0:
        return np.empty(0)
    sign = 1.0
    if kappa < 0:
        kappa, sign = -kappa, -1.0
    if m == 1:
        p_plus = expit(2.0 * kappa)
        return sign * np.where(rng.random(size) < p_plus, 1.0, -1.0)
    mm = m - 1.0
    b = (-2.0 * kappa + np.hypot(2.0 * kappa, mm)) / mm
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + mm * np.log1p(-x0 * x0)
    out = np.empty(size)
    filled = 0
    while filled < size:
        n = size - filled
        Z = rng.beta(mm / 2.0, mm / 2.0, size=n)
        t = (1.0 - (1.0 + b) * Z) / (1.0 - (1.0 - b) * Z)
        accept = kappa * t + mm * np.log1p(-x0 * t) - c >= np.log(rng.random(n))
        k = int(accept.sum())
        out[filled : filled + k] = t[accept]
        filled += k
    return sign * out


def _draw_known(problem: PosiProblem, theta: float, n: int, rng) -> tuple:
    """n proposals from the conditional law; returns (w_stats, selected_mask)."""
    R, gn, m = problem._radius, problem._gnorm, problem._m
    kappa = theta * R * gn
    t = _vmf_cos(rng, kappa, m, n)
    T = problem.y.size
    mu, Q_U = problem._mu, problem._Q_U
    if m > 1:
        xi = rng.standard_normal((n, T))
        xi -= (xi @ Q_U) @ Q_U.T
        xi -= np.outer(xi @ mu, mu)
        norms = np.linalg.norm(xi, axis=1)
        norms[norms == 0] = 1.0
        xi /= norms[:, None]
        sin_part = np.sqrt(np.clip(1.0 - t * t, 0.0, None))
        X_star = problem._x_par[None, :] + R * (
            t[:, None] * mu[None, :] + sin_part[:, None] * xi
        )
    else:
        X_star = problem._x_par[None, :] + R * t[:, None] * mu[None, :]
    w_stats = problem._w_par + R * gn * t
    sel = _selection_mask(problem, X_star)
    _audit_known(problem, X_star[sel])
    return w_stats, sel


def _selection_mask(problem: PosiProblem, X_star: np.ndarray) -> np.ndarray:
    """Rows of X_star (whitened draws) on which the selected model wins."""
    proj2 = np.stack(
        [((X_star @ Q) ** 2).sum(axis=1) for Q in problem._Q_models]
    )
    top = proj2[problem.selected_index]
    others = np.delete(proj2, problem.selected_index, axis=0)
    if others.size == 0:
        return np.ones(X_star.shape[0], dtype=bool)
    return np.all(top[None, :] > others, axis=0)


def _audit_known(problem: PosiProblem, X_acc: np.ndarray) -> None:
    """Verify conditioning identities for every accepted draw."""
    if X_acc.shape[0] == 0:
        return
    stats = X_acc @ problem._Uw                    # nuisance statistics
    ref = problem._Uw.T @ problem._x_obs
    scale = max(1.0, float(np.max(np.abs(ref))))
    if np.max(np.abs(stats - ref[None, :])) > _AUDIT_RTOL * scale:
        raise DataError("sampler audit failed: nuisance statistics drifted")
    qn = (X_acc**2).sum(axis=1)
    qref = float(problem._x_obs @ problem._x_obs)
    if np.max(np.abs(qn - qref)) > _AUDIT_RTOL * max(1.0, qref):
        raise DataError("sampler audit failed: quadratic statistic drifted")


# ---------------------------------------------------------------------------
# line-family sampling (unknown variance, best effort)
# ---------------------------------------------------------------------------

def _draw_unknown(problem: PosiProblem, theta: float, n: int, rng) -> tuple:
    sigma2 = problem.noise.sigma2
    zeta = problem._beta_plugin.copy()
    zeta[problem.focus] = theta * sigma2
    r0_w = problem._x_obs - problem._Xw @ zeta
    var_t = sigma2 / problem._Xd_w2
    mu_t = -float(r0_w @ problem._Xd_w) / problem._Xd_w2
    t = rng.normal(mu_t, np.sqrt(var_t), size=n)
    # whitened draws for the profiled-likelihood selection check
    X_star = problem._x_obs[None, :] + t[:, None] * problem._Xd_w[None, :]
    w_stats = problem.w_obs + t * problem._w_scale
    sel = _selection_mask(problem, X_star)
    _audit_unknown(problem, t[sel])
    return w_stats, sel


def _audit_unknown(problem: PosiProblem, t_acc: np.ndarray) -> None:
    if t_acc.size == 0:
        return
    take = t_acc[: min(t_acc.size, 8)]            # spot audit; identities are exact
    for t in take:
        y_star = problem.y + t * problem._Xd
        stats = problem._X_rest.T @ y_star
        ref = problem._X_rest.T @ problem.y
        scale = max(1.0, float(np.max(np.abs(ref))))
        if np.max(np.abs(stats - ref)) > _AUDIT_RTOL * scale:
            raise DataError("sampler audit failed: non-focus statistics drifted")
        resid = y_star - problem._Q_sel_plain @ (problem._Q_sel_plain.T @ y_star)
        rscale = max(1.0, float(np.max(np.abs(problem._resid_obs))))
        if np.max(np.abs(resid - problem._resid_obs)) > _AUDIT_RTOL * rscale:
            raise DataError("sampler audit failed: residual statistics drifted")


# ---------------------------------------------------------------------------
# sampler driver
# ---------------------------------------------------------------------------

@dataclass
class SamplerResult:
    w: np.ndarray
    attempts: int
    accepted: int
    infeasible: bool

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.attempts if self.attempts else 0.0


def conditional_sampler(
    problem: PosiProblem,
    theta: float,
    D: int,
    seed: int | None = None,
    rng: np.random.Generator | None = None,
    max_attempt_factor: int = 50,
) -> SamplerResult:
    """Draw D focus statistics from the conditional law at the given theta.

    Proposals satisfy the equality constraints by construction; membership
    in the realized selection region is enforced by rejection.  The budget
    is ``max_attempt_factor * D`` proposals; running out with nothing
    accepted (or with acceptance below 1%) marks the point infeasible.
    """
    if D < 1:
        raise DataError("D must be at least 1")
    if not np.isfinite(theta):
        raise DataError("theta must be finite")
    if rng is None:
        rng = substream(seed if seed is not None else 0, "sampler")
    draw = _draw_known if problem.noise.known else _draw_unknown
    budget = max_attempt_factor * D
    collected = []
    attempts = accepted = 0
    while accepted < D and attempts < budget:
        n = min(D, budget - attempts)
        w_stats, sel = draw(problem, theta, n, rng)
        attempts += n
        got = w_stats[sel]
        accepted += got.size
        collected.append(got)
    w = np.concatenate(collected) if collected else np.empty(0)
    w = w[:D]
    accepted = w.size
    rate = accepted / attempts if attempts else 0.0
    infeasible = accepted == 0 or (accepted < D and rate < 0.01)
    return SamplerResult(w=w, attempts=attempts, accepted=accepted, infeasible=infeasible)


def _feasibility_probe(problem, theta, d_e, rng) -> int:
    """Number of selected draws among exactly d_e proposals (bounds search)."""
    draw = _draw_known if problem.noise.known else _draw_unknown
    _, sel = draw(problem, theta, d_e, rng)
    return int(sel.sum())


# ---------------------------------------------------------------------------
# confidence-distribution estimation
# ---------------------------------------------------------------------------

def _pav_nondecreasing(v: np.ndarray) -> np.ndarray:
    """Pool-adjacent-violators fit of a non-decreasing sequence."""
    vals: list = []
    counts: list = []
    for x in v:
        vals.append(float(x))
        counts.append(1)
        while len(vals) > 1 and vals[-2] > vals[-1]:
            tot = counts[-2] + counts[-1]
            vals[-2] = (vals[-2] * counts[-2] + vals[-1] * counts[-1]) / tot
            counts[-2] = tot
            del vals[-1], counts[-1]
    return np.concatenate([np.full(c, val) for val, c in zip(vals, counts)])


def posi_variance(grid, c=None, *, max_violation: float = 0.05) -> float:
    """Variance of the discrete confidence distribution.

    Accepts a ConfidenceDistributionEstimate or a (grid, values) pair.  The
    increments of the CDF over the sorted grid act as probability masses,
    with zero mass assumed before the first grid point; a defective total
    mass is used as-is.
    """
    if c is None:
        est = grid
        if est.failed:
            raise DataError("cannot take the variance of a failed estimate")
        grid, c = est.grid, est.c_hat
    grid = np.asarray(grid, dtype=float)
    c = np.asarray(c, dtype=float)
    if grid.size < 2:
        raise DataError("need at least two grid points for a variance")
    order = np.argsort(grid)
    grid, c = grid[order], c[order]
    drops = c[:-1] - c[1:]
    violation = float(np.max(drops)) if drops.size else 0.0
    if violation > max_violation:
        raise DataError(
            f"confidence distribution is non-monotone beyond tolerance "
            f"({violation:.3f} > {max_violation})"
        )
    if violation > 0:
        c = _pav_nondecreasing(c)
    masses = np.diff(np.concatenate([[0.0], c]))
    if not np.any(masses > 0):
        raise DataError("confidence distribution carries no mass on the grid")
    m1 = float(masses @ grid)
    m2 = float(masses @ grid**2)
    return m2 - m1 * m1


@dataclass
class ConfidenceDistributionEstimate:
    grid: np.ndarray                 # feasible grid points, ascending
    c_raw: np.ndarray                # raw MC estimates of the CD
    c_hat: np.ndarray                # isotonic cleanup of c_raw
    D: int
    acceptance_rates: np.ndarray
    requested_grid: np.ndarray
    feasible_mask: np.ndarray
    variance: float
    est_median: float
    est_mean: float
    est_ols: float
    se_ols: float
    sigma2: float
    monotonicity_violation: float
    failed: bool = False
    failure_reason: str = ""

    # beta-scale views (beta = theta * sigma2)
    @property
    def variance_beta(self) -> float:
        return self.variance * self.sigma2**2

    @property
    def est_median_beta(self) -> float:
        return self.est_median * self.sigma2

    @property
    def est_mean_beta(self) -> float:
        return self.est_mean * self.sigma2

    @property
    def est_ols_beta(self) -> float:
        return self.est_ols * self.sigma2

    def to_json_dict(self) -> dict:
        return {
            "grid": [float(v) for v in self.grid],
            "c_hat": [float(v) for v in self.c_hat],
            "c_raw": [float(v) for v in self.c_raw],
            "draws_per_point": self.D,
            "acceptance_rates": [float(v) for v in self.acceptance_rates],
            "requested_grid": [float(v) for v in self.requested_grid],
            "feasible_mask": [bool(v) for v in self.feasible_mask],
            "variance": float(self.variance),
            "estimates": {
                "median_cd": float(self.est_median),
                "mean_cd": float(self.est_mean),
                "ols": float(self.est_ols),
            },
            "se_ols": float(self.se_ols),
            "sigma2": float(self.sigma2),
            "monotonicity_violation": float(self.monotonicity_violation),
            "failed": self.failed,
            "failure_reason": self.failure_reason,
        }


def _failed_estimate(problem, grid, rates, reason: str) -> ConfidenceDistributionEstimate:
    empty = np.empty(0)
    return ConfidenceDistributionEstimate(
        grid=empty, c_raw=empty, c_hat=empty, D=0,
        acceptance_rates=np.asarray(rates, dtype=float),
        requested_grid=np.asarray(grid, dtype=float),
        feasible_mask=np.zeros(len(grid), dtype=bool),
        variance=float("nan"), est_median=float("nan"), est_mean=float("nan"),
        est_ols=problem.theta_hat_ols, se_ols=problem.se_theta,
        sigma2=problem.noise.sigma2,
        monotonicity_violation=float("nan"), failed=True, failure_reason=reason,
    )


def _median_crossing(grid: np.ndarray, c: np.ndarray) -> float:
    above = np.flatnonzero(c >= 0.5)
    if above.size == 0:
        return float("nan")
    e = int(above[0])
    if e == 0:
        return float(grid[0])
    c0, c1 = c[e - 1], c[e]
    if c1 == c0:
        return float(grid[e])
    frac = (0.5 - c0) / (c1 - c0)
    return float(grid[e - 1] + frac * (grid[e] - grid[e - 1]))


def approx_cd(
    problem: PosiProblem,
    grid: Sequence[float],
    D: int = 500,
    seed: int | None = None,
) -> ConfidenceDistributionEstimate:
    """Monte-Carlo confidence distribution over a grid of theta values.

    Each grid point gets its own substream; infeasible points are dropped
    (recorded in ``feasible_mask``); the isotonic cleanup and the discrete
    variance are applied to the feasible part.
    """
    grid = np.asarray(list(grid), dtype=float)
    if grid.size == 0:
        raise DataError("theta grid is empty")
    if np.any(np.diff(grid) <= 0):
        raise DataError("theta grid must be strictly increasing")
    base = seed if seed is not None else 0
    c_raw, rates, feas = [], [], []
    for e, theta in enumerate(grid):
        res = conditional_sampler(
            problem, float(theta), D, rng=substream(base, "cd", e)
        )
        rates.append(res.acceptance_rate)
        if res.infeasible:
            feas.append(False)
            c_raw.append(np.nan)
        else:
            feas.append(True)
            c_raw.append(float(np.mean(res.w > problem.w_obs)))
    feas = np.asarray(feas, dtype=bool)
    rates = np.asarray(rates, dtype=float)
    if not feas.any():
        return _failed_estimate(problem, grid, rates, "all grid points infeasible")
    g = grid[feas]
    c = np.asarray(c_raw, dtype=float)[feas]
    drops = c[:-1] - c[1:]
    violation = float(max(0.0, np.max(drops))) if drops.size else 0.0
    c_hat = _pav_nondecreasing(c)
    if g.size == 1:
        variance = 0.0      # a single-point CD is a point mass
    else:
        variance = posi_variance(g, c_hat)
    masses = np.diff(np.concatenate([[0.0], c_hat]))
    est_mean = float(masses @ g) if np.any(masses > 0) else float("nan")
    return ConfidenceDistributionEstimate(
        grid=g, c_raw=c, c_hat=c_hat, D=D, acceptance_rates=rates,
        requested_grid=grid, feasible_mask=feas, variance=variance,
        est_median=_median_crossing(g, c_hat), est_mean=est_mean,
        est_ols=problem.theta_hat_ols, se_ols=problem.se_theta,
        sigma2=problem.noise.sigma2,
        monotonicity_violation=violation,
    )


# ---------------------------------------------------------------------------
# bracket search for the theta grid
# ---------------------------------------------------------------------------

@dataclass
class BoundsResult:
    lower: float
    upper: float
    rounds: int
    probes: dict
    failed: bool = False
    failure_reason: str = ""
    used_fallback: bool = False


def _run_bounds(problem, theta_start, a, d_e, step, max_rounds, width_factor, base_seed):
    """Integer-indexed version of the bracket-expansion algorithm."""
    k_a = max(1, int(round(a / step)))
    probes: dict = {}                     # k -> accepted count among d_e
    probe_counter = 0

    def feasible(k: int) -> bool:
        nonlocal probe_counter
        if k not in probes:
            rng = substream(base_seed, "bounds", probe_counter)
            probe_counter += 1
            probes[k] = _feasibility_probe(
                problem, theta_start + k * step, d_e, rng
            )
        return probes[k] > 0

    lo_k, hi_k = -k_a, k_a
    current = [k for k in range(lo_k, hi_k + 1) if feasible(k)]
    if not current:
        return None, probes
    width_stop = width_factor * problem.se_theta
    rounds = 1
    while rounds < max_rounds:
        lo, hi = min(current), max(current)
        if (hi - lo) * step >= width_stop:
            break
        grew = False
        if lo == lo_k:
            lo_k -= k_a
            grew = True
        if hi == hi_k:
            hi_k += k_a
            grew = True
        if not grew:
            break
        new = [k for k in range(lo_k, hi_k + 1) if k not in probes]
        current.extend(k for k in new if feasible(k))
        rounds += 1
    lo, hi = min(current), max(current)
    return (theta_start + lo * step, theta_start + hi * step, rounds), probes


def bounds_search(
    problem: PosiProblem,
    theta_start: float | None = None,
    a: float | None = None,
    d_e: int = 100,
    step: float | None = None,
    max_rounds: int = 10,
    width_factor: float = 20.0,
    seed: int | None = None,
) -> BoundsResult:
    """Find a theta bracket with positive selection feasibility.

    Starts from the standard coefficient estimate, expands outward in steps
    of ``a`` while the bracket edges stay feasible, and stops at a width of
    ``width_factor`` standard errors or after ``max_rounds`` expansions.  If
    the initial bracket is entirely infeasible, one restart is attempted at
    the median of a coarse wide-grid pre-pass; after that the search reports
    failure.
    """
    if d_e < 1:
        raise DataError("d_e must be at least 1")
    if theta_start is None:
        theta_start = problem.theta_hat_ols
    if a is None:
        a = 2.0 * problem.se_theta
    if a <= 0:
        raise DataError("a must be positive")
    if step is None:
        step = a / 5.0
    base = seed if seed is not None else 0

    out, probes = _run_bounds(
        problem, theta_start, a, d_e, step, max_rounds, width_factor, base
    )
    if out is not None:
        lo, hi, rounds = out
        return BoundsResult(lo, hi, rounds, probes)

    # coarse pre-pass: theta_start +- 5a in steps of a
    coarse = theta_start + a * np.arange(-5, 6)
    cs, feas_pts = [], []
    for j, theta in enumerate(coarse):
        rng = substream(base, "fallback", j)
        res = conditional_sampler(problem, float(theta), d_e, rng=rng)
        if not res.infeasible and res.accepted > 0:
            feas_pts.append(float(theta))
            cs.append(float(np.mean(res.w > problem.w_obs)))
    if feas_pts:
        restart = _median_crossing(np.asarray(feas_pts), _pav_nondecreasing(np.asarray(cs)))
        if not np.isfinite(restart):
            restart = float(np.median(feas_pts))
        out, probes2 = _run_bounds(
            problem, restart, a, d_e, step, max_rounds, width_factor, base + 1
        )
        if out is not None:
            lo, hi, rounds = out
            return BoundsResult(lo, hi, rounds, probes2, used_fallback=True)
    return BoundsResult(
        float("nan"), float("nan"), 0, probes,
        failed=True, failure_reason="no feasible theta values found",
        used_fallback=True,
    )


def posi_analysis(
    problem: PosiProblem,
    D: int = 500,
    d_e: int = 100,
    seed: int | None = None,
    a: float | None = None,
    step: float | None = None,
) -> ConfidenceDistributionEstimate:
    """Bracket search followed by CD estimation on the resulting grid."""
    base = seed if seed is not None else 0
    if a is None:
        a = 2.0 * problem.se_theta
    if step is None:
        step = a / 5.0
    bounds = bounds_search(
        problem, a=a, d_e=d_e, step=step, seed=base,
    )
    if bounds.failed:
        return _failed_estimate(problem, [], [], bounds.failure_reason)
    n_steps = int(round((bounds.upper - bounds.lower) / step))
    grid = bounds.lower + step * np.arange(n_steps + 1)
    return approx_cd(problem, grid, D=D, seed=base)
