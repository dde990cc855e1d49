"""End-to-end pipelines for the two simulation studies.

Known change points (``run_procedure1``): per repetition, simulate the
two-condition group, fit each subject's segmented model at the *reported*
change points, describe each (condition, segment) response by the seven
shape descriptors with Monte-Carlo within-subject variances, test each
descriptor's between-segment change with random-effects statistics, and
adjust the 14 p-values over the condition -> descriptor tree.  Rejection
rates, false-discovery proportions and familywise error indicators are
aggregated over repetitions.

Unknown change points (``run_procedure2``): build a pool of subjects, each
with a maximum-likelihood change-point selection and a post-selection
confidence distribution for the change coefficient; per repetition, resample
a group from the pool without replacement and test the group mean change
with four estimation approaches (naive, posi_05, posi_e, posi_ols) and both
random-effects statistics.  Subjects whose confidence distribution cannot be
computed are replaced and counted.

Repetitions (and pool subjects) own isolated RNG substreams, so results are
identical for any ``n_jobs`` and workers can run in any order.
"""
from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .ar import NoiseSpec
from .config import KnownCpConfig, UnknownCpConfig
from .design import build_design
from .glm import estimate_hr, fit_gls
from .group import GroupSample, kh_statistic, wald_statistic
from .hrf import BasisSet, canonical_hrf, shape_basis
from .mtp import HypothesisTree, TreeNode, inheritance_reject, tree_selective_fdr
from .posi import PosiProblem, posi_analysis
from .selection import build_candidate_models, select_model
from .shapes import PARAM_NAMES, mc_shape_variance, shape_params
from .sim import simulate_known_cp_replicate, simulate_unknown_cp_subject
from .util import ConfigError, PosiFailure, substream

__all__ = [
    "APPROACHES",
    "MAGNITUDE_PARAMS",
    "ResultTable",
    "Procedure1Result",
    "Procedure2Result",
    "run_procedure1",
    "run_procedure2",
]

#: estimation approaches compared in the unknown-change-point study
APPROACHES = ("naive", "posi_05", "posi_e", "posi_ols")

#: descriptors that scale with the response; the remaining four are invariant
#: under the generator's post-change rescaling, so their nulls are always true
MAGNITUDE_PARAMS = ("pm", "na", "auc")

_WHITE_UNKNOWN = NoiseSpec(order=1, rho=(0.0,), sigma2=1.0, known=False)

_BASIS_CACHE: dict = {}


def _get_basis(name: str) -> BasisSet:
    if name not in _BASIS_CACHE:
        if name == "shape":
            _BASIS_CACHE[name] = shape_basis()
        elif name == "canonical":
            _BASIS_CACHE[name] = canonical_hrf()
        else:  # config validation should make this unreachable
            raise ConfigError(f"unknown basis {name!r}")
    return _BASIS_CACHE[name]


@dataclass(frozen=True)
class ResultTable:
    """A flat, CSV-ready table with a fixed column order."""

    columns: tuple
    rows: tuple

    def __post_init__(self):
        columns = tuple(str(c) for c in self.columns)
        rows = tuple(tuple(r) for r in self.rows)
        if len(set(columns)) != len(columns):
            raise ValueError("duplicate column names")
        for row in rows:
            if len(row) != len(columns):
                raise ValueError(
                    f"row of width {len(row)} does not match {len(columns)} columns"
                )
        for j, name in enumerate(columns):
            if name.startswith("rate_") or name.endswith("_rate"):
                for row in rows:
                    v = row[j]
                    if v is not None and not 0.0 <= float(v) <= 1.0:
                        raise ValueError(f"{name}={v!r} outside [0, 1]")
        object.__setattr__(self, "columns", columns)
        object.__setattr__(self, "rows", rows)

    def to_dicts(self) -> list:
        return [dict(zip(self.columns, row)) for row in self.rows]

    def to_json_dict(self) -> dict:
        return {"columns": list(self.columns), "rows": [list(r) for r in self.rows]}


def _map_ordered(worker, config, indices: Sequence[int], n_jobs: int) -> list:
    """Apply ``worker(config, i)`` over indices, preserving order."""
    if n_jobs <= 1:
        return [worker(config, i) for i in indices]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        chunk = max(1, len(indices) // (8 * n_jobs))
        return list(
            pool.map(worker, itertools.repeat(config), indices, chunksize=chunk)
        )


# ---------------------------------------------------------------------------
# Procedure 1: known (reported) change points
# ---------------------------------------------------------------------------

def _leaf_true_null(effect_mean: float, param: str) -> bool:
    return param not in MAGNITUDE_PARAMS or effect_mean == 0.0


def _shape_tree(conditions: Sequence[str], pvals: Mapping) -> HypothesisTree:
    root = TreeNode("hr-change", level="study")
    for cond in conditions:
        cnode = TreeNode(cond, level="condition")
        for param in PARAM_NAMES:
            cnode.add(TreeNode(param, level="parameter", p=pvals[cond, param]))
        root.add(cnode)
    tree = HypothesisTree(root)
    tree.fill_parent_pvalues()
    return tree


def _harvest_tree(tree: HypothesisTree, effect_means: Mapping, selective: bool) -> dict:
    """Leaf rejections, FDP, any-true-null-rejection flag and (optionally)
    the per-repetition average FDP over the tested families."""
    root = tree.root
    leaves: dict = {}
    n_rej = 0
    n_false = 0
    false_rejection = False
    for cnode in root.children:
        cond_null = effect_means[cnode.label] == 0.0
        if cnode.rejected and cond_null:
            false_rejection = True
        for leaf in cnode.children:
            rejected = bool(leaf.rejected)
            leaves[cnode.label, leaf.label] = rejected
            if rejected:
                n_rej += 1
                if _leaf_true_null(effect_means[cnode.label], leaf.label):
                    n_false += 1
                    false_rejection = True
    out = {
        "fdp": n_false / max(n_rej, 1),
        "leaves": leaves,
        "false_rejection": false_rejection,
        "sfdr": None,
    }
    if selective:
        fdps = []
        families = [root.children]
        families.extend(c.children for c in root.children if c.rejected)
        for family in families:
            rejected = [m for m in family if m.rejected]
            if not rejected:
                fdps.append(0.0)
                continue
            v = 0
            for m in rejected:
                if m.level == "condition":
                    v += effect_means[m.label] == 0.0
                else:
                    cond = next(c.label for c in root.children if m in c.children)
                    v += _leaf_true_null(effect_means[cond], m.label)
            fdps.append(v / len(rejected))
        out["sfdr"] = float(np.mean(fdps))
    return out


def _procedure1_rep(config: KnownCpConfig, rep: int) -> dict:
    basis = _get_basis(config.basis)
    data = simulate_known_cp_replicate(
        config.master_seed, rep,
        n_subjects=config.n, T=config.T, tr=config.tr,
        stimuli_per_condition=config.stimuli_per_condition, itis=config.itis,
        effect_means=config.effect_means, snr=config.snr,
        misreport=config.misreport, misreport_bound=config.misreport_bound,
        cp_rank_range=config.cp_rank_range, basis=basis,
    )
    conditions = list(config.effect_means)

    point: dict = {}
    mcvar: dict = {}
    for i, subj in enumerate(data.subjects):
        design = build_design(
            data.onsets, basis, config.tr, change_points=subj.reported_cps,
            model_kind="segmented", intercept=False,
        )
        fit = fit_gls(subj.y, design, noise=_WHITE_UNKNOWN)
        for ci, cond in enumerate(conditions):
            for seg in (0, 1):
                point[i, cond, seg] = shape_params(estimate_hr(fit, basis, cond, seg), basis.dt)
                mcvar[i, cond, seg] = mc_shape_variance(
                    fit, basis, cond, seg, iters=config.mc_draws,
                    rng=substream(config.master_seed, "mc", rep, i, ci, seg),
                )

    pvals: dict = {}
    dropped = 0
    for cond in conditions:
        for param in PARAM_NAMES:
            diffs, variances = [], []
            for i in range(config.n):
                p0, p1 = point[i, cond, 0], point[i, cond, 1]
                v0, v1 = mcvar[i, cond, 0][param], mcvar[i, cond, 1][param]
                if (p0.is_valid(param) and p1.is_valid(param)
                        and np.isfinite(v0) and np.isfinite(v1)):
                    diffs.append(p1[param] - p0[param])
                    variances.append(v0 + v1)
            if len(diffs) < 2:
                # nothing to test: the hypothesis simply cannot be rejected
                dropped += 1
                for stat in config.statistics:
                    pvals[stat, cond, param] = 1.0
                continue
            sample = GroupSample(np.asarray(diffs), np.asarray(variances))
            for stat in config.statistics:
                test = kh_statistic if stat == "kh" else wald_statistic
                pvals[stat, cond, param] = test(sample).p_value

    per: dict = {}
    for stat in config.statistics:
        tree = _shape_tree(conditions, {
            (c, p): pvals[stat, c, p] for c in conditions for p in PARAM_NAMES
        })
        for proc in config.procedures:
            if proc == "tree-bh":
                tree_selective_fdr(tree, config.q)
                per[stat, proc] = _harvest_tree(tree, config.effect_means, selective=True)
            else:
                inheritance_reject(tree, config.alpha)
                per[stat, proc] = _harvest_tree(tree, config.effect_means, selective=False)
            tree.reset_annotations()
    return {"pvals": pvals, "dropped": dropped, "per": per}


@dataclass(frozen=True)
class Procedure1Result:
    """Aggregates of the known-change-point study over all repetitions."""

    config: KnownCpConfig
    tree: HypothesisTree          # first repetition, first statistic (exemplar)
    table: ResultTable
    avg_fdp: dict                 # (statistic, procedure) -> mean leaf-level FDP
    rejection_rates: dict         # (statistic, procedure) -> {(cond, param): rate}
    sfdr: dict                    # statistic -> mean FDP over tested families
    fwer: dict                    # (statistic, procedure) -> any-true-null-rejection rate
    dropped_tests: int

    def to_json_dict(self) -> dict:
        rates = {
            stat: {
                proc: {
                    cond: {
                        param: self.rejection_rates[stat, proc][cond, param]
                        for param in PARAM_NAMES
                    }
                    for cond in self.config.effect_means
                }
                for proc in self.config.procedures
            }
            for stat in self.config.statistics
        }
        return {
            "scenario": self.config.kind,
            "tree": self.tree.to_json_dict(),
            "table": self.table.to_json_dict(),
            "avg_fdp": {s: {p: self.avg_fdp[s, p] for p in self.config.procedures}
                        for s in self.config.statistics},
            "sfdr": dict(self.sfdr),
            "fwer": {s: {p: self.fwer[s, p] for p in self.config.procedures}
                     for s in self.config.statistics},
            "rejection_rates": rates,
            "dropped_tests": self.dropped_tests,
        }


def run_procedure1(config: KnownCpConfig) -> Procedure1Result:
    """Run the known-change-point study defined by ``config``."""
    if not isinstance(config, KnownCpConfig):
        raise ConfigError("run_procedure1 needs a known-cp configuration")
    conditions = list(config.effect_means)
    reps = _map_ordered(_procedure1_rep, config, range(config.B), config.n_jobs)

    avg_fdp: dict = {}
    rejection_rates: dict = {}
    sfdr: dict = {}
    fwer: dict = {}
    for stat in config.statistics:
        for proc in config.procedures:
            harvests = [r["per"][stat, proc] for r in reps]
            avg_fdp[stat, proc] = float(np.mean([h["fdp"] for h in harvests]))
            fwer[stat, proc] = float(np.mean([h["false_rejection"] for h in harvests]))
            rejection_rates[stat, proc] = {
                key: float(np.mean([h["leaves"][key] for h in harvests]))
                for key in harvests[0]["leaves"]
            }
            if proc == "tree-bh":
                sfdr[stat] = float(np.mean([h["sfdr"] for h in harvests]))
    dropped = int(sum(r["dropped"] for r in reps))

    stat0 = config.statistics[0]
    tree = _shape_tree(conditions, {
        (c, p): reps[0]["pvals"][stat0, c, p] for c in conditions for p in PARAM_NAMES
    })
    if "tree-bh" in config.procedures:
        tree_selective_fdr(tree, config.q)
    else:
        inheritance_reject(tree, config.alpha)

    columns = (
        ["scenario", "snr", "misreported"]
        + [f"e_{cond}" for cond in conditions]
        + ["statistic", "procedure", "n_reps", "avg_fdp", "sfdr", "fwer", "dropped_tests"]
        + [f"rate_{cond}_{param}" for cond in conditions for param in PARAM_NAMES]
    )
    rows = []
    for stat in config.statistics:
        for proc in config.procedures:
            row = (
                [config.kind, config.snr, config.misreport]
                + [config.effect_means[c] for c in conditions]
                + [stat, proc, config.B, avg_fdp[stat, proc],
                   sfdr.get(stat) if proc == "tree-bh" else None,
                   fwer[stat, proc], dropped]
                + [rejection_rates[stat, proc][cond, param]
                   for cond in conditions for param in PARAM_NAMES]
            )
            rows.append(tuple(row))
    table = ResultTable(tuple(columns), tuple(rows))
    return Procedure1Result(
        config=config, tree=tree, table=table, avg_fdp=avg_fdp,
        rejection_rates=rejection_rates, sfdr=sfdr, fwer=fwer, dropped_tests=dropped,
    )


# ---------------------------------------------------------------------------
# Procedure 2: unknown change points
# ---------------------------------------------------------------------------

def _posi_subject(config: UnknownCpConfig, attempt: int) -> dict:
    basis = _get_basis(config.basis)
    subj = simulate_unknown_cp_subject(
        config.master_seed, attempt,
        T=config.T, tr=config.tr, n_stimuli=config.n_stimuli, itis=config.itis,
        eta=config.eta, effect_sd=config.effect_sd, snr=config.snr, rho=config.rho,
        margin=config.margin, spacing=config.spacing, n_decoys=config.n_decoys,
        basis=basis,
    )
    models = build_candidate_models(subj.onsets, subj.basis, subj.tr, subj.candidates)
    selection = select_model(subj.y, models, subj.noise)
    cond = next(iter(subj.onsets))
    focus = models[selection.selected_index].design.column_indices(
        condition=cond, segment=1)[0]
    problem = PosiProblem(
        y=subj.y, models=tuple(models), selected_index=selection.selected_index,
        focus=focus, noise=subj.noise,
    )
    posi_seed = int(substream(config.master_seed, "posi", attempt).integers(0, 2**31 - 1))
    estimate = posi_analysis(problem, D=config.D, d_e=config.d_e, seed=posi_seed)

    record = {
        "attempt": attempt,
        "selected_true": selection.selected_index == subj.true_index,
        "true_coef": subj.change_coef,
    }
    if estimate.failed:
        record.update(failed=True, reason=estimate.failure_reason)
        return record
    naive_var = (problem.se_theta * subj.noise.sigma2) ** 2
    values = {
        "naive": estimate.est_ols_beta,
        "posi_05": estimate.est_median_beta,
        "posi_e": estimate.est_mean_beta,
        "posi_ols": estimate.est_ols_beta,
    }
    variances = {
        "naive": naive_var,
        "posi_05": estimate.variance_beta,
        "posi_e": estimate.variance_beta,
        "posi_ols": estimate.variance_beta,
    }
    finite = all(np.isfinite(v) for v in values.values())
    finite = finite and all(np.isfinite(v) and v >= 0 for v in variances.values())
    if not finite:
        record.update(failed=True, reason="non-finite estimate or variance")
        return record
    record.update(
        failed=False, values=values, variances=variances,
        variance_naive=naive_var, variance_posi=estimate.variance_beta,
        grid_points=int(estimate.grid.size),
    )
    return record


def _build_pool(config: UnknownCpConfig) -> tuple:
    """First ``N`` usable subjects in attempt order, plus failure bookkeeping.

    The pool is independent of ``n_jobs``: attempts are evaluated in index
    order and the pool closes at the N-th success; later attempts never count.
    """
    cap = config.max_attempt_factor * config.N
    successes: list = []
    failures: list = []
    next_attempt = 0
    batch = config.N if config.n_jobs <= 1 else max(config.n_jobs * 8, 16)
    while len(successes) < config.N and next_attempt < cap:
        indices = range(next_attempt, min(next_attempt + batch, cap))
        for record in _map_ordered(_posi_subject, config, indices, config.n_jobs):
            if record["failed"]:
                failures.append(record)
            else:
                successes.append(record)
                if len(successes) == config.N:
                    break
        next_attempt = indices.stop
    if len(successes) < config.N:
        raise PosiFailure(
            f"only {len(successes)} of {config.N} subjects produced a usable "
            f"confidence distribution after {cap} attempts"
        )
    attempts = successes[-1]["attempt"] + 1
    failures = [f for f in failures if f["attempt"] < attempts]
    return successes, failures, attempts


@dataclass(frozen=True)
class Procedure2Result:
    """Aggregates of the unknown-change-point study."""

    config: UnknownCpConfig
    tree: HypothesisTree            # single tested hypothesis, first repetition
    table: ResultTable
    subject_table: ResultTable      # per-pool-subject estimates and variances
    rejection_rates: dict           # (approach, statistic) -> rate over repetitions
    n_pool: int
    n_attempts: int
    n_failures: int
    failure_reasons: dict
    mean_naive_variance: float
    mean_posi_variance: float
    true_selection_rate: float

    @property
    def failure_rate(self) -> float:
        return self.n_failures / self.n_attempts

    def to_json_dict(self) -> dict:
        return {
            "scenario": self.config.kind,
            "tree": self.tree.to_json_dict(),
            "table": self.table.to_json_dict(),
            "subjects": self.subject_table.to_json_dict(),
            "rejection_rates": {
                approach: {
                    stat: self.rejection_rates[approach, stat]
                    for stat in self.config.statistics
                }
                for approach in APPROACHES
            },
            "n_pool": self.n_pool,
            "n_attempts": self.n_attempts,
            "n_failures": self.n_failures,
            "failure_rate": self.failure_rate,
            "failure_reasons": dict(self.failure_reasons),
            "mean_naive_variance": self.mean_naive_variance,
            "mean_posi_variance": self.mean_posi_variance,
            "true_selection_rate": self.true_selection_rate,
        }


def run_procedure2(config: UnknownCpConfig) -> Procedure2Result:
    """Run the unknown-change-point study defined by ``config``."""
    if not isinstance(config, UnknownCpConfig):
        raise ConfigError("run_procedure2 needs an unknown-cp configuration")
    pool, failures, attempts = _build_pool(config)

    values = {a: np.array([s["values"][a] for s in pool]) for a in APPROACHES}
    variances = {a: np.array([s["variances"][a] for s in pool]) for a in APPROACHES}

    counts = {(a, s): 0 for a in APPROACHES for s in config.statistics}
    pvals_rep0: dict = {}
    for rep in range(config.B):
        idx = substream(config.master_seed, "rep", rep).choice(
            config.N, size=config.n, replace=False)
        for approach in APPROACHES:
            sample = GroupSample(values[approach][idx], variances[approach][idx])
            for stat in config.statistics:
                test = kh_statistic if stat == "kh" else wald_statistic
                p = test(sample).p_value
                if rep == 0:
                    pvals_rep0[approach, stat] = p
                counts[approach, stat] += p <= config.alpha
    rates = {key: counts[key] / config.B for key in counts}

    exemplar_approach = "posi_e" if "posi_e" in APPROACHES else APPROACHES[0]
    tree = HypothesisTree(TreeNode(
        "eta-change", level="hypothesis",
        p=pvals_rep0[exemplar_approach, config.statistics[0]],
    ))
    inheritance_reject(tree, config.alpha)

    reasons: dict = {}
    for f in failures:
        reasons[f["reason"]] = reasons.get(f["reason"], 0) + 1

    mean_naive = float(np.mean(variances["naive"]))
    mean_posi = float(np.mean(variances["posi_e"]))
    selection_rate = float(np.mean([s["selected_true"] for s in pool]))

    columns = (
        "scenario", "eta", "snr", "approach", "statistic", "rejection_rate",
        "n_reps", "n_resampled", "n_pool", "n_attempts", "n_failures",
        "pool_failure_rate", "mean_naive_variance", "mean_posi_variance",
        "true_selection_rate",
    )
    rows = []
    for approach in APPROACHES:
        for stat in config.statistics:
            rows.append((
                config.kind, config.eta, config.snr, approach, stat,
                rates[approach, stat], config.B, config.n, config.N, attempts,
                len(failures), len(failures) / attempts, mean_naive, mean_posi,
                selection_rate,
            ))
    table = ResultTable(columns, tuple(rows))

    subject_columns = (
        "attempt", "selected_true", "true_coef", "est_naive", "est_posi_05",
        "est_posi_e", "est_posi_ols", "variance_naive", "variance_posi",
        "grid_points",
    )
    subject_rows = tuple(
        (
            s["attempt"], s["selected_true"], s["true_coef"],
            s["values"]["naive"], s["values"]["posi_05"], s["values"]["posi_e"],
            s["values"]["posi_ols"], s["variance_naive"], s["variance_posi"],
            s["grid_points"],
        )
        for s in pool
    )
    subject_table = ResultTable(subject_columns, subject_rows)

    return Procedure2Result(
        config=config, tree=tree, table=table, subject_table=subject_table,
        rejection_rates=rates, n_pool=len(pool), n_attempts=attempts,
        n_failures=len(failures), failure_reasons=reasons,
        mean_naive_variance=mean_naive, mean_posi_variance=mean_posi,
        true_selection_rate=selection_rate,
    )
