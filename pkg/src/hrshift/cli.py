"""Command-line interface.

Every command reads JSON, writes JSON/CSV via the deterministic serializers
in :mod:`hrshift.io`, and never embeds timestamps or machine state, so a
rerun with the same inputs produces byte-identical files.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 confidence
distribution failed for every subject.
"""
from __future__ import annotations

import dataclasses
import functools
import sys
from pathlib import Path

import click
import numpy as np

from .ar import NoiseSpec
from .config import KnownCpConfig, UnknownCpConfig, load_config
from .design import ChangePointSet, OnsetSeries, build_design
from .glm import estimate_hr, fit_gls
from .group import GroupSample, kh_statistic, wald_statistic
from .hrf import load_basis
from .io import load_json, write_csv, write_json
from .learning import backward_learning_curve, learning_criterion
from .mtp import HypothesisTree, TreeNode, inheritance_reject, tree_selective_fdr
from .pipelines import (
    APPROACHES,
    ResultTable,
    _get_basis,
    run_procedure1,
    run_procedure2,
)
from .posi import PosiProblem, posi_analysis
from .selection import build_candidate_models, enumerate_candidates, select_model
from .shapes import PARAM_NAMES, mc_shape_variance, shape_params
from .sim import simulate_known_cp_replicate, simulate_unknown_cp_subject
from .util import ConfigError, DataError, PosiFailure, substream


def _friendly(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(2)
        except DataError as exc:
            click.echo(f"data error: {exc}", err=True)
            sys.exit(3)
        except PosiFailure as exc:
            click.echo(f"posi failure: {exc}", err=True)
            sys.exit(4)
    return wrapper


@click.group()
def main():
    """Detect and characterize rapid hemodynamic-response changes."""


# ---------------------------------------------------------------------------
# shared JSON readers
# ---------------------------------------------------------------------------

def _require_key(data: dict, key: str, where: str):
    if key not in data:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return data[key]


def _read_onsets(data: dict, T: int, where: str) -> dict:
    raw = _require_key(data, "onsets", where)
    if not isinstance(raw, dict) or not raw:
        raise ConfigError(f"{where}: 'onsets' must map condition -> onset scans")
    return {
        str(cond): OnsetSeries.from_indices(T, [int(v) for v in idx], str(cond))
        for cond, idx in raw.items()
    }


def _read_noise(data: dict) -> NoiseSpec | None:
    raw = data.get("noise")
    if raw is None:
        return None
    rho = raw.get("rho", 0.0)
    rho = tuple(float(r) for r in (rho if isinstance(rho, (list, tuple)) else [rho]))
    return NoiseSpec(
        order=len(rho),
        rho=rho,
        sigma2=float(raw.get("sigma2", 1.0)),
        known=bool(raw.get("known", False)),
    )


def _read_basis(data: dict, tr_needed: bool = False):
    name = data.get("basis", "canonical")
    if isinstance(name, str) and name in ("canonical", "shape"):
        return _get_basis(name)
    return load_basis(name, dt=float(data.get("basis_dt", 0.1)))


def _read_change_points(raw, conditions, where: str) -> ChangePointSet:
    if raw is None:
        return ChangePointSet.empty(conditions)
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: change points must map condition -> scan list")
    points = {str(c): tuple(int(v) for v in pts) for c, pts in raw.items()}
    for cond in conditions:
        points.setdefault(cond, ())
    return ChangePointSet(points)


def _read_subject(path, need_candidates: bool = False) -> dict:
    data = load_json(path)
    where = str(path)
    y = np.asarray(_require_key(data, "y", where), dtype=float)
    if y.ndim != 1 or y.size < 3:
        raise ConfigError(f"{where}: 'y' must be a 1-D series")
    tr = float(data.get("tr", 2.0))
    onsets = _read_onsets(data, y.size, where)
    basis = _read_basis(data)
    noise = _read_noise(data)
    out = {"y": y, "tr": tr, "onsets": onsets, "basis": basis, "noise": noise,
           "data": data, "where": where}
    if need_candidates:
        conditions = list(onsets)
        if "candidates" in data:
            out["candidates"] = [
                _read_change_points(c, conditions, where) for c in data["candidates"]
            ]
        else:
            out["candidates"] = enumerate_candidates(
                onsets,
                int(data.get("n_change_points", 1)),
                margin=int(data.get("margin", 10)),
                spacing=int(data.get("spacing", 5)),
            )
    return out


def _load_study_config(path, paper_scale: bool):
    config = load_config(path)
    if paper_scale:
        config = dataclasses.replace(config, B=1000)
    return config


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

@main.command()
@click.argument("config_path", metavar="CONFIG", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="Output JSON file.")
@click.option("--rep", default=0, show_default=True, help="Repetition index (known-cp).")
@click.option("--subject", default=0, show_default=True, help="Subject index (unknown-cp).")
@_friendly
def simulate(config_path, out, rep, subject):
    """Generate one repetition (known-cp) or one subject (unknown-cp)."""
    config = load_config(config_path)
    if isinstance(config, KnownCpConfig):
        data = simulate_known_cp_replicate(
            config.master_seed, rep,
            n_subjects=config.n, T=config.T, tr=config.tr,
            stimuli_per_condition=config.stimuli_per_condition, itis=config.itis,
            effect_means=config.effect_means, snr=config.snr,
            misreport=config.misreport, misreport_bound=config.misreport_bound,
            cp_rank_range=config.cp_rank_range, basis=_get_basis(config.basis),
        )
        payload = {
            "scenario": config.kind,
            "rep": rep,
            "tr": config.tr,
            "onsets": {c: list(s.onset_indices()) for c, s in data.onsets.items()},
            "subjects": [
                {
                    "y": subj.y,
                    "true_change_points": dict(subj.true_cps.points),
                    "reported_change_points": dict(subj.reported_cps.points),
                    "true_ranks": dict(subj.true_ranks),
                    "reported_ranks": dict(subj.reported_ranks),
                    "sigma2": subj.sigma2,
                }
                for subj in data.subjects
            ],
        }
    else:
        subj = simulate_unknown_cp_subject(
            config.master_seed, subject,
            T=config.T, tr=config.tr, n_stimuli=config.n_stimuli, itis=config.itis,
            eta=config.eta, effect_sd=config.effect_sd, snr=config.snr,
            rho=config.rho, margin=config.margin, spacing=config.spacing,
            n_decoys=config.n_decoys, basis=_get_basis(config.basis),
        )
        payload = {
            "scenario": config.kind,
            "subject": subject,
            "tr": config.tr,
            "onsets": {c: list(s.onset_indices()) for c, s in subj.onsets.items()},
            "y": subj.y,
            "true_change_points": dict(subj.true_cp.points),
            "candidates": [dict(c.points) for c in subj.candidates],
            "true_index": subj.true_index,
            "change_coef": subj.change_coef,
            "noise": {"rho": list(subj.noise.rho), "sigma2": subj.noise.sigma2,
                      "known": subj.noise.known},
        }
    write_json(out, payload)
    click.echo(f"wrote {out}")


# ---------------------------------------------------------------------------
# fit-subject
# ---------------------------------------------------------------------------

@main.command("fit-subject")
@click.argument("data_path", metavar="DATA", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="Output JSON file.")
@click.option("--mc-draws", default=0, show_default=True,
              help="Monte-Carlo draws for descriptor variances (0 = skip).")
@click.option("--seed", default=0, show_default=True, help="Seed for the MC draws.")
@_friendly
def fit_subject(data_path, out, mc_draws, seed):
    """Fit one subject's segmented model and describe each response shape.

    DATA is JSON with y, tr, onsets {condition: 1-based scans}, optional
    change_points {condition: scans}, basis (canonical|shape|CSV path) and
    noise {rho, sigma2, known}.
    """
    sub = _read_subject(data_path)
    cps = _read_change_points(sub["data"].get("change_points"),
                              list(sub["onsets"]), sub["where"])
    design = build_design(sub["onsets"], sub["basis"], sub["tr"],
                          change_points=cps, model_kind="segmented",
                          intercept=bool(sub["data"].get("intercept", False)))
    fit = fit_gls(sub["y"], design, noise=sub["noise"])

    shape: dict = {}
    for cond in sub["onsets"]:
        shape[cond] = {}
        for seg in range(len(cps.for_condition(cond)) + 1):
            params = shape_params(estimate_hr(fit, sub["basis"], cond, seg),
                                  sub["basis"].dt)
            entry = {"params": params.as_dict(),
                     "valid": {p: bool(params.is_valid(p)) for p in PARAM_NAMES}}
            if mc_draws:
                mc = mc_shape_variance(fit, sub["basis"], cond, seg,
                                       iters=mc_draws, seed=seed)
                entry["mc_variances"] = {p: mc[p] for p in PARAM_NAMES}
            shape[cond][str(seg)] = entry

    write_json(out, {
        "beta": fit.beta,
        "sigma2": fit.sigma2,
        "noise": {"rho": list(fit.noise.rho), "sigma2": fit.noise.sigma2,
                  "known": fit.noise.known},
        "loglik": fit.loglik,
        "columns": [c.name for c in fit.design.columns],
        "shape": shape,
    })
    click.echo(f"wrote {out}")


# ---------------------------------------------------------------------------
# select-cp / posi
# ---------------------------------------------------------------------------

@main.command("select-cp")
@click.argument("data_path", metavar="DATA", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="Output JSON file.")
@_friendly
def select_cp(data_path, out):
    """Pick the change-point candidate with maximum likelihood.

    DATA adds to the fit-subject layout either an explicit candidate list
    (candidates: [{condition: scans}, ...]) or enumeration controls
    (n_change_points, margin, spacing).
    """
    sub = _read_subject(data_path, need_candidates=True)
    models = build_candidate_models(sub["onsets"], sub["basis"], sub["tr"],
                                    sub["candidates"])
    noise = sub["noise"] or NoiseSpec(order=1, rho=(0.0,), sigma2=1.0, known=False)
    result = select_model(sub["y"], models, noise)
    write_json(out, {
        "selected_index": result.selected_index,
        "selected_change_points": dict(result.selected_change_points.points),
        "logliks": result.logliks,
        "candidates": [dict(c.points) for c in sub["candidates"]],
    })
    click.echo(f"wrote {out}")


@main.command("posi")
@click.argument("data_path", metavar="DATA", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="Output JSON file.")
@click.option("--draws", "-D", "draws", default=500, show_default=True,
              help="Conditional Monte-Carlo draws per grid point.")
@click.option("--d-e", default=100, show_default=True,
              help="Pilot draws for the feasibility search.")
@click.option("--seed", default=0, show_default=True)
@click.option("--focus-condition", default=None, help="Condition of the change column.")
@click.option("--focus-segment", default=1, show_default=True,
              help="Change index of the focus column in the cumulative design.")
@_friendly
def posi_cmd(data_path, out, draws, d_e, seed, focus_condition, focus_segment):
    """Post-selection confidence distribution for the selected change column."""
    sub = _read_subject(data_path, need_candidates=True)
    models = build_candidate_models(sub["onsets"], sub["basis"], sub["tr"],
                                    sub["candidates"])
    noise = sub["noise"]
    if noise is None:
        raise ConfigError(f"{sub['where']}: posi needs an explicit noise spec")
    selection = select_model(sub["y"], models, noise)
    cond = focus_condition or next(iter(sub["onsets"]))
    try:
        focus = models[selection.selected_index].design.column_indices(
            condition=cond, segment=focus_segment)[0]
    except KeyError:
        raise ConfigError(
            f"no column for condition {cond!r}, change index {focus_segment}")
    problem = PosiProblem(y=sub["y"], models=tuple(models),
                          selected_index=selection.selected_index,
                          focus=focus, noise=noise)
    estimate = posi_analysis(problem, D=draws, d_e=d_e, seed=seed)
    if estimate.failed:
        raise PosiFailure(f"confidence distribution failed: {estimate.failure_reason}")
    payload = estimate.to_json_dict()
    payload["selected_index"] = selection.selected_index
    payload["selected_change_points"] = dict(selection.selected_change_points.points)
    write_json(out, payload)
    click.echo(f"wrote {out}")


# ---------------------------------------------------------------------------
# group-test / mt-adjust
# ---------------------------------------------------------------------------

@main.command("group-test")
@click.argument("data_path", metavar="DATA", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="Output JSON file.")
@click.option("--statistic", type=click.Choice(["kh", "wald", "both"]),
              default="both", show_default=True)
@_friendly
def group_test(data_path, out, statistic):
    """Random-effects test of a zero group mean.

    DATA is JSON with values (per-subject estimates) and variances
    (within-subject variances).
    """
    data = load_json(data_path)
    where = str(data_path)
    values = np.asarray(_require_key(data, "values", where), dtype=float)
    variances = np.asarray(_require_key(data, "variances", where), dtype=float)
    sample = GroupSample(values, variances)
    payload = {}
    if statistic in ("kh", "both"):
        payload["kh"] = kh_statistic(sample).to_json_dict()
    if statistic in ("wald", "both"):
        payload["wald"] = wald_statistic(sample).to_json_dict()
    write_json(out, payload)
    click.echo(f"wrote {out}")


def _parse_tree(node: dict, where: str, depth: int = 0) -> TreeNode:
    if not isinstance(node, dict) or "label" not in node:
        raise ConfigError(f"{where}: each tree node needs at least a 'label'")
    p = node.get("p")
    parsed = TreeNode(str(node["label"]), level=str(node.get("level", f"level-{depth}")),
                      p=None if p is None else float(p))
    for child in node.get("children", ()):
        parsed.add(_parse_tree(child, where, depth + 1))
    return parsed


@main.command("mt-adjust")
@click.argument("tree_path", metavar="TREE", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="Output JSON file.")
@click.option("--procedure", type=click.Choice(["tree-bh", "inheritance"]),
              default="tree-bh", show_default=True)
@click.option("--q", default=0.05, show_default=True,
              help="FDR budget (tree-bh).")
@click.option("--alpha", default=0.05, show_default=True,
              help="FWER budget (inheritance).")
@_friendly
def mt_adjust(tree_path, out, procedure, q, alpha):
    """Hierarchical multiple-testing adjustment over a p-value tree.

    TREE is nested JSON: {label, p?, level?, children: [...]}; parent
    p-values left null are filled by Simes combination of their children.
    """
    data = load_json(tree_path)
    tree = HypothesisTree(_parse_tree(data, str(tree_path)))
    tree.fill_parent_pvalues()
    if procedure == "tree-bh":
        tree_selective_fdr(tree, q)
    else:
        inheritance_reject(tree, alpha)
    write_json(out, {"procedure": procedure, "tree": tree.to_json_dict()})
    click.echo(f"wrote {out}")


# ---------------------------------------------------------------------------
# pipelines
# ---------------------------------------------------------------------------

def _rates_rows(result) -> ResultTable:
    rows = []
    for stat in result.config.statistics:
        for proc in result.config.procedures:
            for cond in result.config.effect_means:
                for param in PARAM_NAMES:
                    rows.append((stat, proc, cond, param,
                                 result.rejection_rates[stat, proc][cond, param]))
    return ResultTable(
        ("statistic", "procedure", "condition", "parameter", "rejection_rate"),
        tuple(rows))


@main.command("pipeline-known")
@click.argument("config_path", metavar="CONFIG", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="Output directory.")
@click.option("--paper-scale", is_flag=True,
              help="Use B=1000 repetitions instead of the configured count.")
@_friendly
def pipeline_known(config_path, out, paper_scale):
    """Full known-change-point study: simulate, fit, test, adjust, tabulate."""
    config = _load_study_config(config_path, paper_scale)
    if not isinstance(config, KnownCpConfig):
        raise ConfigError(f"{config_path}: pipeline-known needs kind 'known-cp'")
    result = run_procedure1(config)
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    write_json(outdir / "results.json", result.to_json_dict())
    write_csv(outdir / "table.csv", result.table)
    write_csv(outdir / "rates.csv", _rates_rows(result))
    click.echo(f"wrote {outdir}/results.json, table.csv, rates.csv")


@main.command("pipeline-unknown")
@click.argument("config_path", metavar="CONFIG", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="Output directory.")
@click.option("--paper-scale", is_flag=True,
              help="Use B=1000 repetitions and a pool of N=500 subjects.")
@_friendly
def pipeline_unknown(config_path, out, paper_scale):
    """Full unknown-change-point study: select, posi, resample, test, tabulate."""
    config = _load_study_config(config_path, paper_scale)
    if not isinstance(config, UnknownCpConfig):
        raise ConfigError(f"{config_path}: pipeline-unknown needs kind 'unknown-cp'")
    if paper_scale:
        config = dataclasses.replace(config, N=500)
    result = run_procedure2(config)
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    write_json(outdir / "results.json", result.to_json_dict())
    write_csv(outdir / "table.csv", result.table)
    write_csv(outdir / "subjects.csv", result.subject_table)
    click.echo(f"wrote {outdir}/results.json, table.csv, subjects.csv")


# ---------------------------------------------------------------------------
# blc
# ---------------------------------------------------------------------------

@main.command("blc")
@click.argument("data_path", metavar="DATA", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="Output JSON file.")
@click.option("--block-size", default=5, show_default=True)
@_friendly
def blc(data_path, out, block_size):
    """Backward learning curve aligned at each subject's criterion trial.

    DATA is JSON: {subjects: [{correct_targets: [...0/1...],
    positive_feedback: [...0/1...]}, ...]}.
    """
    data = load_json(data_path)
    raw = _require_key(data, "subjects", str(data_path))
    if not isinstance(raw, list) or not raw:
        raise ConfigError(f"{data_path}: 'subjects' must be a non-empty list")
    pairs = []
    for i, entry in enumerate(raw):
        pairs.append((
            _require_key(entry, "correct_targets", f"{data_path}: subject {i}"),
            _require_key(entry, "positive_feedback", f"{data_path}: subject {i}"),
        ))
    curve = backward_learning_curve(pairs, block_size)
    payload = curve.to_json_dict()
    payload["criteria"] = [
        learning_criterion(t, f) for t, f in pairs
    ]
    write_json(out, payload)
    click.echo(f"wrote {out}")


if __name__ == "__main__":
    main()
