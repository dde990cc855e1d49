"""Natural parametrization, conditional sampling, and confidence distributions."""
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats
from scipy.special import expit, ive

from hrshift.ar import NoiseSpec, ar1_covariance, ar1_precision, whitening_matrix
from hrshift.design import ColumnInfo, DesignMatrix
from hrshift.natparam import NaturalParamView, boundary_matrices, natural_params
from hrshift.posi import (
    PosiProblem,
    approx_cd,
    bounds_search,
    conditional_sampler,
    posi_analysis,
    posi_variance,
    _pav_nondecreasing,
    _vmf_cos,
)
from hrshift.selection import CandidateModel, build_candidate_models, select_model
from hrshift.sim import simulate_unknown_cp_subject
from hrshift.util import DataError, substream

MASTER = 1234


# ---------------------------------------------------------------------------
# natural parametrization
# ---------------------------------------------------------------------------

def test_log_density_identity_100_random_instances():
    # lam @ w - kappa must reproduce the Gaussian log density exactly,
    # whatever X, y, zeta, sigma2, rho.
    rng = np.random.default_rng(0)
    for i in range(100):
        T = int(rng.integers(8, 41))
        p = int(rng.integers(1, 5))
        rho = 0.0 if i % 10 == 0 else float(rng.uniform(-0.9, 0.9))
        sigma2 = float(rng.uniform(0.3, 4.0))
        X = rng.standard_normal((T, p))
        zeta = rng.standard_normal(p)
        y = X @ zeta + 2.0 * rng.standard_normal(T)
        view = natural_params(X, y, zeta, sigma2, rho)
        direct = stats.multivariate_normal.logpdf(
            y, mean=X @ zeta, cov=sigma2 * ar1_covariance(rho, T)
        )
        assert abs(view.log_density() - direct) <= 1e-8 * max(1.0, abs(direct))


def test_rho_zero_collapses_to_two_blocks():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((15, 3))
    y = rng.standard_normal(15)
    zeta = np.array([0.4, -1.0, 2.0])
    sigma2 = 1.7
    view = natural_params(X, y, zeta, sigma2, 0.0)
    assert set(view.blocks) == {"coef", "quad"}
    lam_c, w_c = view.block("coef")
    lam_q, w_q = view.block("quad")
    assert np.allclose(lam_c, zeta / sigma2)
    assert np.allclose(w_c, X.T @ y)
    assert lam_q[0] == pytest.approx(-0.5 / sigma2)
    assert w_q[0] == pytest.approx(y @ y)


def test_six_blocks_and_their_values():
    rng = np.random.default_rng(2)
    T, p, rho, sigma2 = 12, 2, 0.4, 1.7
    X = rng.standard_normal((T, p))
    y = rng.standard_normal(T)
    zeta = np.array([0.3, -1.1])
    view = natural_params(X, y, zeta, sigma2, rho)
    s = rho / (rho**2 - 1.0)
    q = rho**2 / (rho**2 - 1.0)
    G, Gt, Gb = boundary_matrices(T)
    assert list(view.blocks) == [
        "coef", "coef_lag", "coef_edge", "quad", "quad_lag", "quad_edge",
    ]
    assert np.allclose(view.block("coef")[0], zeta / sigma2)
    assert np.allclose(view.block("coef_lag")[0], (s / sigma2) * zeta)
    assert np.allclose(view.block("coef_edge")[0], (-q / sigma2) * zeta)
    assert view.block("quad")[0][0] == pytest.approx(-0.5 / sigma2)
    assert view.block("quad_lag")[0][0] == pytest.approx(-s / sigma2)
    assert view.block("quad_edge")[0][0] == pytest.approx(0.5 * q / sigma2)
    assert np.allclose(view.block("coef")[1], X.T @ y)
    assert np.allclose(
        view.block("coef_lag")[1], (Gt @ X).T @ (G @ y) + (G @ X).T @ (Gt @ y)
    )
    assert np.allclose(
        view.block("coef_edge")[1], 2.0 * X.T @ y - (Gb @ X).T @ (Gb @ y)
    )
    assert view.block("quad")[1][0] == pytest.approx(y @ y)
    assert view.block("quad_lag")[1][0] == pytest.approx((Gt @ y) @ (G @ y))
    assert view.block("quad_edge")[1][0] == pytest.approx(
        2.0 * (y @ y) - (Gb @ y) @ (Gb @ y)
    )
    # the block slices tile the whole vector
    total = sum(sl.stop - sl.start for sl in view.blocks.values())
    assert total == view.lam.size == 3 * p + 3


def test_kappa_at_zero_mean_is_normalizer():
    rng = np.random.default_rng(3)
    T, rho, sigma2 = 20, -0.3, 2.5
    X = rng.standard_normal((T, 2))
    y = rng.standard_normal(T)
    view = natural_params(X, y, np.zeros(2), sigma2, rho)
    _, logdet = np.linalg.slogdet(sigma2 * ar1_covariance(rho, T))
    assert view.kappa == pytest.approx(
        0.5 * logdet + 0.5 * T * np.log(2.0 * np.pi), rel=1e-12
    )


def test_boundary_matrices_express_ar1_precision():
    for rho, T in [(0.2, 10), (-0.7, 25), (0.95, 6)]:
        G, Gt, Gb = boundary_matrices(T)
        s = rho / (rho**2 - 1.0)
        q = rho**2 / (rho**2 - 1.0)
        lhs = (
            np.eye(T)
            - q * (2.0 * np.eye(T) - Gb.T @ Gb)
            + s * (Gt.T @ G + G.T @ Gt)
        )
        assert np.allclose(lhs, ar1_precision(rho, T), atol=1e-10)


def test_natural_params_validation():
    X = np.ones((10, 2))
    y = np.ones(10)
    zeta = np.ones(2)
    with pytest.raises(DataError):
        natural_params(X, np.ones(9), zeta, 1.0, 0.2)
    with pytest.raises(DataError):
        natural_params(X, y, np.ones(3), 1.0, 0.2)
    with pytest.raises(DataError):
        natural_params(X, y, zeta, 0.0, 0.2)
    with pytest.raises(DataError):
        natural_params(X, y, zeta, 1.0, 1.0)
    with pytest.raises(DataError):
        NaturalParamView(np.ones(3), np.ones(4), 0.0, {})
    with pytest.raises(DataError):
        boundary_matrices(1)


# ---------------------------------------------------------------------------
# von Mises-Fisher cosine marginal
# ---------------------------------------------------------------------------

def test_vmf_moments_match_bessel_ratios():
    # E t = I_{m/2}(k)/I_{m/2-1}(k); Var t = 1 - (E t)^2 - (m-1) E t / k.
    rng = substream(17, "vmf")
    for kappa, m in [(0.5, 5), (3.0, 12), (25.0, 40)]:
        t = _vmf_cos(rng, kappa, m, 30_000)
        A = ive(m / 2.0, kappa) / ive(m / 2.0 - 1.0, kappa)
        var = 1.0 - A * A - (m - 1.0) * A / kappa
        assert abs(t.mean() - A) < 4.0 * np.sqrt(var / t.size)
        assert t.var() == pytest.approx(var, rel=0.10)


def test_vmf_m1_is_two_point_law():
    rng = substream(18, "vmf")
    kappa = 0.7
    t = _vmf_cos(rng, kappa, 1, 4000)
    assert set(np.unique(t)) == {-1.0, 1.0}
    p_plus = expit(2.0 * kappa)
    se = np.sqrt(p_plus * (1.0 - p_plus) / t.size)
    assert abs(np.mean(t == 1.0) - p_plus) < 4.0 * se


def test_vmf_negative_kappa_mirrors_positive():
    a = _vmf_cos(substream(19, "vmf"), -3.0, 8, 500)
    b = _vmf_cos(substream(19, "vmf"), 3.0, 8, 500)
    assert np.array_equal(a, -b)


# ---------------------------------------------------------------------------
# problem setup
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def strong_subject():
    # change planted at onset rank 30 with a solid effect; the true model wins
    return simulate_unknown_cp_subject(MASTER, 3, eta=1.0, true_rank=30)


@pytest.fixture(scope="module")
def known_problem(strong_subject):
    s = strong_subject
    models = build_candidate_models(s.onsets, s.basis, s.tr, s.candidates)
    res = select_model(s.y, models, s.noise)
    focus = models[res.selected_index].design.column_indices(
        condition="a", segment=1
    )[0]
    return PosiProblem(
        y=s.y, models=tuple(models), selected_index=res.selected_index,
        focus=focus, noise=s.noise,
    )


@pytest.fixture(scope="module")
def unknown_problem(strong_subject):
    s = strong_subject
    models = build_candidate_models(s.onsets, s.basis, s.tr, s.candidates)
    noise = NoiseSpec(order=1, rho=s.noise.rho, sigma2=s.noise.sigma2, known=False)
    res = select_model(s.y, models, noise)
    focus = models[res.selected_index].design.column_indices(
        condition="a", segment=1
    )[0]
    return PosiProblem(
        y=s.y, models=tuple(models), selected_index=res.selected_index,
        focus=focus, noise=noise,
    )


def _orthogonal_focus_design(T, noise, seed, p_nuis=3):
    """Single-candidate design whose whitened focus column is orthogonal to
    the whitened nuisance block, so |g|^2 is exactly |focus column|^2."""
    W = whitening_matrix(noise, T)
    Wi = np.linalg.inv(W)
    rng = np.random.default_rng(seed)
    Zw = rng.standard_normal((T, p_nuis))
    fw = rng.standard_normal(T)
    Q, _ = np.linalg.qr(Zw)
    fw -= Q @ (Q.T @ fw)
    X = Wi @ np.column_stack([fw, Zw])
    cols = tuple(
        ColumnInfo("condition", "a", 0, j, f"x{j}") for j in range(p_nuis + 1)
    )
    model = CandidateModel(None, DesignMatrix(X, cols, "cumulative"))
    return X, fw, model


def test_known_problem_summary_statistics(known_problem, strong_subject):
    p = known_problem
    X = p.selected_model.design.matrix
    V = ar1_covariance(strong_subject.noise.rho[0], p.y.size)
    Vi = np.linalg.inv(V)
    sigma2 = p.noise.sigma2
    assert p.w_obs == pytest.approx(X[:, p.focus] @ Vi @ p.y, rel=1e-8)
    xtx_inv = np.linalg.inv(X.T @ Vi @ X)
    beta = xtx_inv @ (X.T @ Vi @ p.y)
    assert p.theta_hat_ols == pytest.approx(beta[p.focus] / sigma2, rel=1e-8)
    assert p.se_theta == pytest.approx(
        np.sqrt(xtx_inv[p.focus, p.focus] / sigma2), rel=1e-8
    )


def test_focus_out_of_range_raises(strong_subject):
    s = strong_subject
    models = build_candidate_models(s.onsets, s.basis, s.tr, s.candidates)
    with pytest.raises(DataError, match="focus"):
        PosiProblem(
            y=s.y, models=tuple(models), selected_index=0, focus=99, noise=s.noise
        )


def test_focus_inside_conditioned_span_raises():
    # a non-selected model carries a rescaled copy of the focus column, so
    # conditioning on its statistic pins the focus statistic itself
    rng = np.random.default_rng(5)
    T = 40
    f = rng.standard_normal(T)
    z = rng.standard_normal(T)
    cols = (
        ColumnInfo("condition", "a", 0, 0, "f"),
        ColumnInfo("condition", "a", 1, 0, "z"),
    )
    m_sel = CandidateModel(None, DesignMatrix(np.column_stack([f, z]), cols, "cumulative"))
    m_alt = CandidateModel(None, DesignMatrix(np.column_stack([z, 2.0 * f]), cols, "cumulative"))
    noise = NoiseSpec(order=1, rho=(0.0,), sigma2=1.0, known=True)
    with pytest.raises(DataError, match="span"):
        PosiProblem(
            y=rng.standard_normal(T), models=(m_sel, m_alt),
            selected_index=0, focus=0, noise=noise,
        )


def test_duplicate_focus_columns_dropped_globally():
    # byte-identical copies of the focus column in other candidates are not
    # conditioned on (the statistic would be the focus statistic itself)
    rng = np.random.default_rng(6)
    T = 40
    f = rng.standard_normal(T)
    z1 = rng.standard_normal(T)
    z2 = rng.standard_normal(T)
    cols = (
        ColumnInfo("condition", "a", 0, 0, "c0"),
        ColumnInfo("condition", "a", 1, 0, "c1"),
    )
    m_sel = CandidateModel(None, DesignMatrix(np.column_stack([f, z1]), cols, "cumulative"))
    m_alt = CandidateModel(None, DesignMatrix(np.column_stack([z2, f]), cols, "cumulative"))
    noise = NoiseSpec(order=1, rho=(0.0,), sigma2=1.0, known=True)
    y = rng.standard_normal(T)
    # stated selection must match the data: pick the higher-energy model
    energies = []
    for m in (m_sel, m_alt):
        Q, _ = np.linalg.qr(m.design.matrix)
        energies.append(float(((Q.T @ y) ** 2).sum()))
    sel = int(np.argmax(energies))
    problem = PosiProblem(
        y=y, models=(m_sel, m_alt),
        selected_index=sel, focus=0 if sel == 0 else 1, noise=noise,
    )
    assert problem._n_nuisance == 2  # z1 and z2 only
    res = conditional_sampler(problem, 0.0, 50, seed=1)
    assert res.accepted > 0


# ---------------------------------------------------------------------------
# known-variance sampler
# ---------------------------------------------------------------------------

def test_single_candidate_accepts_every_proposal():
    noise = NoiseSpec(order=1, rho=(0.3,), sigma2=1.3, known=True)
    X, fw, model = _orthogonal_focus_design(150, noise, seed=11)
    y = X @ np.array([0.5, 0.4, -0.3, 1.1]) + np.linalg.cholesky(
        1.3 * ar1_covariance(0.3, 150)
    ) @ np.random.default_rng(12).standard_normal(150)
    problem = PosiProblem(y=y, models=(model,), selected_index=0, focus=0, noise=noise)
    res = conditional_sampler(problem, 0.8, 200, seed=2)
    assert res.accepted == 200
    assert res.attempts == 200
    assert res.acceptance_rate == 1.0
    assert not res.infeasible


def test_sampler_determinism(known_problem):
    a = conditional_sampler(known_problem, known_problem.theta_hat_ols, 150, seed=7)
    b = conditional_sampler(known_problem, known_problem.theta_hat_ols, 150, seed=7)
    assert np.array_equal(a.w, b.w)
    assert a.attempts == b.attempts


def test_sampler_argument_validation(known_problem):
    with pytest.raises(DataError):
        conditional_sampler(known_problem, 0.0, 0, seed=1)
    with pytest.raises(DataError):
        conditional_sampler(known_problem, np.inf, 10, seed=1)


def test_far_theta_infeasible_below_feasible_above(known_problem):
    p = known_problem
    low = conditional_sampler(p, p.theta_hat_ols - 12 * p.se_theta, 100, seed=11)
    assert low.infeasible
    high = conditional_sampler(p, p.theta_hat_ols + 12 * p.se_theta, 100, seed=11)
    assert not high.infeasible
    assert high.acceptance_rate >= 0.9


def test_far_theta_acceptance_reopens_at_extremes(known_problem):
    # the selection region in the sphere cosine is the complement of an
    # interval: as theta -> -inf the mass piles onto t = -1 where the
    # selected model's projection again dominates the (fixed) rival ones
    p = known_problem
    res = conditional_sampler(p, p.theta_hat_ols - 50 * p.se_theta, 100, seed=11)
    assert not res.infeasible
    assert res.acceptance_rate >= 0.5


def test_multicandidate_draws_pass_audit(known_problem):
    p = known_problem
    res = conditional_sampler(p, p.theta_hat_ols, 300, seed=3)
    assert res.accepted == 300
    assert np.all(np.isfinite(res.w))
    assert np.std(res.w) > 0


def test_tower_draws_match_unconditional_gaussian():
    # Averaged over fresh data replicates, one conditional draw per replicate
    # must recover the unconditional law of the focus statistic,
    # w ~ N(theta sigma2 |g|^2, sigma2 |g|^2); a fixed-y check cannot do
    # this because conditioning pins the realized radius.
    T, sigma2, rho, theta = 200, 1.3, 0.3, 0.5
    noise = NoiseSpec(order=1, rho=(rho,), sigma2=sigma2, known=True)
    X, fw, model = _orthogonal_focus_design(T, noise, seed=42)
    beta = np.array([theta * sigma2, 0.4, -0.3, 1.1])
    L = np.linalg.cholesky(sigma2 * ar1_covariance(rho, T))
    af2 = float(fw @ fw)
    rep_rng = substream(77, "tower")
    draws = np.empty(1200)
    for i in range(draws.size):
        y = X @ beta + L @ rep_rng.standard_normal(T)
        problem = PosiProblem(
            y=y, models=(model,), selected_index=0, focus=0, noise=noise
        )
        draws[i] = conditional_sampler(
            problem, theta, 1, rng=substream(77, "draw", i)
        ).w[0]
    ks = stats.kstest(
        draws, "norm", args=(theta * sigma2 * af2, np.sqrt(sigma2 * af2))
    )
    assert ks.statistic < 1.36 / np.sqrt(draws.size)  # 5% critical value


def test_single_candidate_cd_matches_classical_gaussian():
    # with one candidate and white noise the conditional approach must agree
    # with the textbook Gaussian confidence distribution for the coefficient
    T, sigma2, D = 300, 2.0, 500
    noise = NoiseSpec(order=1, rho=(0.0,), sigma2=sigma2, known=True)
    X, fw, model = _orthogonal_focus_design(T, noise, seed=9)
    y = X @ np.array([0.0, 1.0, -2.0, 0.5]) + np.sqrt(sigma2) * np.random.default_rng(
        10
    ).standard_normal(T)
    problem = PosiProblem(y=y, models=(model,), selected_index=0, focus=0, noise=noise)
    af2 = float(fw @ fw)
    grid = problem.theta_hat_ols + problem.se_theta * np.linspace(-3, 3, 13)
    cd = approx_cd(problem, grid, D=D, seed=21)
    assert not cd.failed
    classical = stats.norm.cdf(
        (cd.grid * sigma2 * af2 - problem.w_obs) / np.sqrt(sigma2 * af2)
    )
    assert np.max(np.abs(cd.c_hat - classical)) <= 3.0 / np.sqrt(D)


# ---------------------------------------------------------------------------
# unknown-variance sampler
# ---------------------------------------------------------------------------

def test_unknown_sampler_feasible_at_estimate(unknown_problem):
    p = unknown_problem
    res = conditional_sampler(p, p.theta_hat_ols, 300, seed=3)
    assert res.accepted == 300
    assert not res.infeasible


def test_unknown_sampler_determinism(unknown_problem):
    p = unknown_problem
    a = conditional_sampler(p, 0.5, 100, seed=9)
    b = conditional_sampler(p, 0.5, 100, seed=9)
    assert np.array_equal(a.w, b.w)


def test_unknown_line_family_preserves_conditioning(unknown_problem):
    # moving along y + t X d must leave every non-focus cross product and the
    # selected-model residual vector untouched, while shifting w linearly
    p = unknown_problem
    X = p.selected_model.design.matrix
    X_rest = np.delete(X, p.focus, axis=1)
    Q, _ = np.linalg.qr(X)
    for t in (-2.0, 1.7):
        y_star = p.y + t * p._Xd
        assert np.allclose(X_rest.T @ y_star, X_rest.T @ p.y, rtol=0, atol=1e-7)
        r_star = y_star - Q @ (Q.T @ y_star)
        r_obs = p.y - Q @ (Q.T @ p.y)
        assert np.allclose(r_star, r_obs, rtol=0, atol=1e-7)
        w_star = X[:, p.focus] @ y_star
        assert w_star - p.w_obs == pytest.approx(t * p._w_scale, rel=1e-8)


def test_unknown_cd_variance_exceeds_naive(unknown_problem):
    p = unknown_problem
    grid = p.theta_hat_ols + p.se_theta * np.linspace(-6, 6, 13)
    cd = approx_cd(p, grid, D=300, seed=7)
    assert not cd.failed
    assert np.all(np.diff(cd.c_hat) >= 0)
    assert cd.variance > p.se_theta**2


# ---------------------------------------------------------------------------
# confidence-distribution machinery
# ---------------------------------------------------------------------------

@given(
    st.lists(
        st.floats(min_value=-10, max_value=10, allow_nan=False),
        min_size=1, max_size=30,
    )
)
def test_pav_properties(vals):
    v = np.asarray(vals, dtype=float)
    out = _pav_nondecreasing(v)
    assert out.size == v.size
    assert np.all(np.diff(out) >= -1e-12)
    assert np.allclose(_pav_nondecreasing(out), out, atol=1e-12)
    assert out.mean() == pytest.approx(v.mean(), abs=1e-9)
    if np.all(np.diff(v) >= 0):
        assert np.allclose(out, v)


def test_posi_variance_two_point_exact():
    # masses 0.5 at 0 and 0.5 at 2: variance 2 - 1 = 1
    assert posi_variance([0.0, 2.0], [0.5, 1.0]) == pytest.approx(1.0)


def test_posi_variance_defective_mass_used_as_is():
    # masses 0.2 at 1 and 0.4 at 3: m1 = 1.4, m2 = 3.8
    assert posi_variance([1.0, 3.0], [0.2, 0.6]) == pytest.approx(1.84)


def test_posi_variance_small_violation_repaired():
    # drop of 0.02 is inside tolerance; adjacent pooling gives (.49, .49, .9)
    v = posi_variance([0.0, 1.0, 2.0], [0.5, 0.48, 0.9])
    assert v == pytest.approx(0.9676)


def test_posi_variance_errors():
    with pytest.raises(DataError):
        posi_variance([1.0], [0.5])
    with pytest.raises(DataError, match="mass"):
        posi_variance([0.0, 1.0], [0.0, 0.0])
    with pytest.raises(DataError, match="non-monotone"):
        posi_variance([0.0, 1.0, 2.0], [0.5, 0.4, 0.9])


def test_approx_cd_monotone_deterministic_json(known_problem):
    p = known_problem
    grid = p.theta_hat_ols + p.se_theta * np.linspace(-4, 4, 9)
    cd1 = approx_cd(p, grid, D=200, seed=5)
    cd2 = approx_cd(p, grid, D=200, seed=5)
    assert not cd1.failed
    assert np.all(np.diff(cd1.c_hat) >= 0)
    assert np.all((cd1.c_raw >= 0) & (cd1.c_raw <= 1))
    assert np.array_equal(cd1.c_raw, cd2.c_raw)
    assert cd1.variance == cd2.variance
    d = cd1.to_json_dict()
    assert d["draws_per_point"] == 200
    assert len(d["grid"]) == len(d["c_hat"])
    assert d["failed"] is False
    # beta-scale views are plain rescalings
    assert cd1.variance_beta == pytest.approx(cd1.variance * p.noise.sigma2**2)
    assert cd1.est_median_beta == pytest.approx(cd1.est_median * p.noise.sigma2)


def test_approx_cd_single_point_grid_is_point_mass(known_problem):
    p = known_problem
    cd = approx_cd(p, [p.theta_hat_ols], D=100, seed=5)
    assert not cd.failed
    assert cd.variance == 0.0


def test_approx_cd_all_infeasible_reports_failure(known_problem):
    p = known_problem
    grid = p.theta_hat_ols + p.se_theta * np.array([-20.0, -16.0, -12.0])
    cd = approx_cd(p, grid, D=100, seed=5)
    assert cd.failed
    assert "infeasible" in cd.failure_reason
    assert not cd.feasible_mask.any()
    with pytest.raises(DataError):
        posi_variance(cd)


def test_approx_cd_grid_validation(known_problem):
    with pytest.raises(DataError):
        approx_cd(known_problem, [], D=10, seed=1)
    with pytest.raises(DataError):
        approx_cd(known_problem, [0.0, 0.0], D=10, seed=1)
    with pytest.raises(DataError):
        approx_cd(known_problem, [1.0, 0.5], D=10, seed=1)


# ---------------------------------------------------------------------------
# bracket search and end-to-end analysis
# ---------------------------------------------------------------------------

def test_bounds_bracket_contains_estimate(known_problem):
    p = known_problem
    b = bounds_search(p, d_e=50, seed=5)
    assert not b.failed
    assert b.lower <= p.theta_hat_ols <= b.upper
    assert 1 <= b.rounds <= 10
    assert len(b.probes) > 0


def test_bounds_fallback_restart_succeeds(known_problem):
    # start deep inside the infeasible stretch with a coarse step: the wide
    # pre-pass finds the feasible region and the restart brackets it
    p = known_problem
    b = bounds_search(
        p,
        theta_start=p.theta_hat_ols - 20 * p.se_theta,
        a=5 * p.se_theta,
        d_e=50,
        seed=5,
    )
    assert b.used_fallback
    assert not b.failed
    assert b.lower <= p.theta_hat_ols <= b.upper


def test_bounds_reports_failure_when_stranded(known_problem):
    # a tiny step keeps both the initial bracket and the pre-pass inside the
    # infeasible stretch around theta_hat - 13 se
    p = known_problem
    b = bounds_search(
        p,
        theta_start=p.theta_hat_ols - 13 * p.se_theta,
        a=p.se_theta / 5,
        d_e=100,
        seed=5,
    )
    assert b.failed
    assert b.used_fallback
    assert np.isnan(b.lower) and np.isnan(b.upper)
    assert b.failure_reason != ""


def test_bounds_argument_validation(known_problem):
    with pytest.raises(DataError):
        bounds_search(known_problem, d_e=0)
    with pytest.raises(DataError):
        bounds_search(known_problem, a=-1.0)


def test_posi_analysis_end_to_end(known_problem):
    p = known_problem
    cd = posi_analysis(p, D=200, d_e=50, seed=5)
    assert not cd.failed
    assert np.all(np.diff(cd.grid) > 0)
    assert cd.variance > p.se_theta**2  # selection widens the distribution
    assert cd.est_ols == pytest.approx(p.theta_hat_ols)
    assert cd.se_ols == pytest.approx(p.se_theta)
