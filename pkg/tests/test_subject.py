import numpy as np
import pytest

from hrshift.ar import NoiseSpec, ar_covariance
from hrshift.design import OnsetSeries, build_design
from hrshift.glm import estimate_hr, fit_gls
from hrshift.hrf import canonical_hrf, shape_basis
from hrshift.shapes import (
    PARAM_NAMES,
    auc_weights,
    batch_shape_params,
    mc_shape_variance,
    psd_repair,
    shape_params,
)
from hrshift.util import DataError


def _toy_design(T=120, tr=2.0, onset_idx=(5, 17, 29, 41, 53, 65, 77, 89, 101)):
    u = OnsetSeries.from_indices(T, onset_idx, "a")
    return build_design({"a": u}, shape_basis(), tr, model_kind="stationary")


# ----------------------------------------------------------------- fitting ----

def test_fit_gls_recovers_noiseless_coefficients():
    d = _toy_design()
    beta_true = np.array([3.2, -6.4, 3.2, 0.7])  # 3 basis + intercept
    y = d.matrix @ beta_true
    fit = fit_gls(y, d, NoiseSpec(order=1, rho=(0.0,), sigma2=1.0, known=True))
    assert np.max(np.abs(fit.beta - beta_true)) < 1e-8


def test_fit_gls_white_noise_equals_ols():
    d = _toy_design()
    rng = np.random.default_rng(3)
    y = d.matrix @ np.array([1.0, 0.5, -0.2, 0.0]) + rng.standard_normal(d.T)
    fit = fit_gls(y, d, NoiseSpec(order=1, rho=(0.0,)))
    beta_ols, *_ = np.linalg.lstsq(d.matrix, y, rcond=None)
    assert np.allclose(fit.beta, beta_ols)


def test_fit_gls_matches_direct_gls_under_ar1():
    d = _toy_design()
    rng = np.random.default_rng(4)
    y = d.matrix @ np.array([1.0, -1.0, 0.3, 2.0]) + rng.standard_normal(d.T)
    spec = NoiseSpec(order=1, rho=(0.35,))
    fit = fit_gls(y, d, spec)
    Vinv = np.linalg.inv(ar_covariance(spec, d.T))
    X = d.matrix
    beta_gls = np.linalg.solve(X.T @ Vinv @ X, X.T @ Vinv @ y)
    assert np.max(np.abs(fit.beta - beta_gls)) < 1e-10
    # covariance agrees with the closed form
    dof = d.T - d.p
    resid = y - X @ fit.beta
    s2 = float(resid @ Vinv @ resid) / dof
    cov = s2 * np.linalg.inv(X.T @ Vinv @ X)
    assert np.max(np.abs(fit.cov_beta - cov)) < 1e-8


def test_fit_gls_zero_signal_unbiased_over_replicates():
    d = _toy_design(T=60, onset_idx=(5, 20, 35, 50))
    rng = np.random.default_rng(99)
    betas = []
    for _ in range(1000):
        y = rng.standard_normal(d.T)
        betas.append(fit_gls(y, d, NoiseSpec(order=1, rho=(0.0,))).beta)
    mean = np.mean(betas, axis=0)
    se = np.std(betas, axis=0, ddof=1) / np.sqrt(1000)
    assert np.all(np.abs(mean) < 4 * se + 1e-12)


def test_fit_gls_estimates_noise_when_unspecified():
    d = _toy_design(T=400, onset_idx=tuple(range(5, 395, 15)))
    rng = np.random.default_rng(11)
    rho = 0.4
    e = np.empty(d.T)
    e[0] = rng.standard_normal()
    for t in range(1, d.T):
        e[t] = rho * e[t - 1] + rng.standard_normal() * np.sqrt(1 - rho**2)
    y = d.matrix @ np.array([1.0, 0.0, 0.5, 3.0]) + e
    fit = fit_gls(y, d)
    assert fit.noise.rho[0] == pytest.approx(rho, abs=0.15)
    assert np.isfinite(fit.loglik)


def test_fit_gls_preconditions():
    d = _toy_design(T=120)
    with pytest.raises(DataError):
        fit_gls(np.zeros(50), d)
    dup = np.hstack([d.matrix, d.matrix[:, :1]])
    from hrshift.design import DesignMatrix
    bad = DesignMatrix(dup, d.columns + (d.columns[0],), d.model_kind)
    with pytest.raises(DataError):
        fit_gls(np.zeros(120), bad, NoiseSpec())


def test_estimate_hr_linearity_and_basis_pickout():
    d = _toy_design()
    basis = shape_basis()
    fit = fit_gls(d.matrix @ np.array([1.0, 0.0, 0.0, 0.0]), d,
                  NoiseSpec(order=1, rho=(0.0,), sigma2=1.0, known=True))
    curve = estimate_hr(fit, basis, "a", 0)
    assert np.max(np.abs(curve - basis.matrix[:, 0])) < 1e-8
    fit.beta[:3] *= 2.0
    assert np.max(np.abs(estimate_hr(fit, basis, "a", 0) - 2 * curve)) < 1e-7


# ------------------------------------------------------------- descriptors ----

def test_shape_params_symmetric_triangle():
    dt = 0.5
    t = np.arange(0, 10.0 + dt, dt)
    curve = np.where(t <= 5, t / 5.0, (10 - t) / 5.0)
    sp = shape_params(curve, dt)
    assert sp["pm"] == pytest.approx(1.0)
    assert sp["ttp"] == pytest.approx(5.0)
    assert sp["fwhm"] == pytest.approx(5.0)
    assert sp["auc"] == pytest.approx(5.0)
    assert not sp.is_valid("na") and not sp.is_valid("tpn") and not sp.is_valid("fwhn")


def test_shape_params_scaling_behavior():
    dt = 0.1
    curve = canonical_hrf(dt=dt).matrix[:, 0]
    a, b = shape_params(curve, dt), shape_params(2 * curve, dt)
    assert b["pm"] == pytest.approx(2 * a["pm"])
    assert b["auc"] == pytest.approx(2 * a["auc"])
    assert b["ttp"] == a["ttp"]
    assert b["fwhm"] == pytest.approx(a["fwhm"])


def test_shape_params_canonical_frozen_values():
    # fine-grid oracle values computed from the closed-form double-gamma
    dt = 0.01
    curve = canonical_hrf(dt=dt, duration=32).matrix[:, 0]
    sp = shape_params(curve, dt)
    assert sp["ttp"] == pytest.approx(5.0, abs=0.02)
    assert sp["na"] == pytest.approx(-0.0889, abs=0.001)
    assert sp["tpn"] == pytest.approx(10.75, abs=0.05)
    assert sp["fwhm"] == pytest.approx(5.27, abs=0.05)
    assert sp["auc"] == pytest.approx(4.75, abs=0.02)
    assert all(sp.is_valid(k) for k in PARAM_NAMES)


def test_shape_params_flat_curve_all_invalid():
    sp = shape_params(np.ones(50), 0.1)
    assert not any(sp.is_valid(k) for k in PARAM_NAMES)


def test_shape_params_time_shift_covariance():
    dt = 0.1
    curve = canonical_hrf(dt=dt).matrix[:, 0]
    shifted = np.concatenate([np.zeros(30), curve])
    a, b = shape_params(curve, dt), shape_params(shifted, dt)
    assert b["ttp"] == pytest.approx(a["ttp"] + 3.0)
    assert b["pm"] == a["pm"]
    assert b["fwhm"] == pytest.approx(a["fwhm"])


def test_batch_matches_scalar_path():
    rng = np.random.default_rng(8)
    basis = shape_basis()
    draws = np.array([3.2, -6.4, 3.2]) + 0.5 * rng.standard_normal((40, 3))
    curves = draws @ basis.matrix.T
    values, valid = batch_shape_params(curves, basis.dt)
    for i in range(40):
        sp = shape_params(curves[i], basis.dt)
        for name in PARAM_NAMES:
            assert valid[name][i] == sp.is_valid(name)
            if sp.is_valid(name):
                assert values[name][i] == pytest.approx(sp[name])


# ---------------------------------------------------------- MC variances ----

def _fitted_subject(seed=0, T=150):
    d = _toy_design(T=T, onset_idx=tuple(range(4, T - 16, 12)))
    rng = np.random.default_rng(seed)
    y = d.matrix @ np.array([3.2, -6.4, 3.2, 1.0]) + 0.3 * rng.standard_normal(T)
    return fit_gls(y, d, NoiseSpec(order=1, rho=(0.0,)))


def test_mc_variance_zero_covariance_gives_zero():
    fit = _fitted_subject()
    fit.cov_beta = np.zeros_like(fit.cov_beta)
    mc = mc_shape_variance(fit, shape_basis(), "a", iters=200, seed=1)
    for name in PARAM_NAMES:
        if mc.excluded[name] == 0:
            assert abs(mc[name]) < 1e-20  # identical draws up to float summation


def test_mc_variance_auc_matches_analytic():
    basis = shape_basis()
    fit = _fitted_subject(seed=5)
    idx = fit.block_indices("a", 0)
    b = auc_weights(basis)
    analytic = float(b @ fit.cov_beta[np.ix_(idx, idx)] @ b)
    mc = mc_shape_variance(fit, basis, "a", iters=10_000, seed=7)
    assert mc["auc"] == pytest.approx(analytic, rel=0.05)


def test_mc_variance_seed_deterministic():
    fit = _fitted_subject(seed=2)
    basis = shape_basis()
    a = mc_shape_variance(fit, basis, "a", iters=300, seed=42)
    b = mc_shape_variance(fit, basis, "a", iters=300, seed=42)
    assert a.variances == b.variances and a.excluded == b.excluded
    c = mc_shape_variance(fit, basis, "a", iters=300, seed=43)
    assert any(a.variances[k] != c.variances[k] for k in PARAM_NAMES)


def test_mc_variance_iteration_floor():
    fit = _fitted_subject()
    with pytest.raises(DataError):
        mc_shape_variance(fit, shape_basis(), "a", iters=50)


def test_psd_repair_clips_and_rejects():
    good = np.array([[1.0, 0.0], [0.0, -1e-14]])
    vals, _ = psd_repair(good)
    assert np.all(vals >= 0)
    with pytest.raises(DataError):
        psd_repair(np.array([[1.0, 0.0], [0.0, -0.5]]))
