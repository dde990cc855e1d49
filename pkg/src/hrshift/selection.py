"""Candidate change-point enumeration and maximum-likelihood model selection.

Candidates are restricted to condition onset times.  Each candidate is fit
under the cumulative model; the configuration with the strictly largest
Gaussian log-likelihood is selected.  The realized selection region is the
set of series for which the selected model beats every other candidate,
which later conditioning steps rely on.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .ar import NoiseSpec, ar_logdet, whiten
from .design import ChangePointSet, DesignMatrix, OnsetSeries, build_design
from .hrf import BasisSet
from .util import DataError

__all__ = [
    "CandidateModel",
    "SelectionResult",
    "enumerate_candidates",
    "build_candidate_models",
    "model_loglik",
    "select_model",
    "MAX_CANDIDATES",
]

MAX_CANDIDATES = 10_000


@dataclass(frozen=True)
class CandidateModel:
    change_points: ChangePointSet
    design: DesignMatrix


@dataclass
class SelectionResult:
    selected_index: int
    logliks: np.ndarray
    candidates: tuple

    @property
    def selected(self) -> CandidateModel:
        return self.candidates[self.selected_index]

    @property
    def selected_change_points(self) -> ChangePointSet:
        return self.selected.change_points


def enumerate_candidates(
    onsets: Mapping[str, OnsetSeries],
    n_change_points: Mapping[str, int],
    margin: int = 10,
    spacing: int = 5,
) -> list:
    """All admissible change-point configurations.

    Per condition, a change point must sit on an onset whose rank (1-based
    position among that condition's onsets) excludes the first and last
    ``margin`` onsets; multiple change points for the same condition must be
    at least ``spacing`` onset ranks apart.  Configurations are the cross
    product over conditions.
    """
    per_condition = []
    conditions = list(onsets)
    for cond in conditions:
        idx = onsets[cond].onset_indices()
        c = int(n_change_points.get(cond, 0))
        if c == 0:
            per_condition.append([()])
            continue
        admissible = idx[margin : len(idx) - margin] if margin > 0 else idx
        ranks = np.arange(margin + 1, len(idx) - margin + 1)
        if admissible.size == 0:
            raise DataError(
                f"margin {margin} leaves no admissible onsets for condition {cond!r}"
            )
        combos = [
            tuple(int(admissible[j]) for j in pick)
            for pick in itertools.combinations(range(admissible.size), c)
            if all(ranks[pick[k + 1]] - ranks[pick[k]] >= spacing for k in range(c - 1))
        ]
        if not combos:
            raise DataError(
                f"constraints (margin={margin}, spacing={spacing}) admit no "
                f"configuration for condition {cond!r}"
            )
        per_condition.append(combos)
    total = int(np.prod([len(c) for c in per_condition]))
    if total > MAX_CANDIDATES:
        raise DataError(
            f"{total} candidate configurations exceed the cap of {MAX_CANDIDATES}; "
            "supply an explicit candidate list instead"
        )
    out = []
    for combo in itertools.product(*per_condition):
        out.append(ChangePointSet(dict(zip(conditions, combo))))
    return out


def build_candidate_models(
    onsets: Mapping[str, OnsetSeries],
    basis: BasisSet,
    tr: float,
    candidates: Sequence[ChangePointSet],
    confounds: np.ndarray | None = None,
    intercept: bool = True,
) -> list:
    """Cumulative-model designs for each candidate configuration."""
    if not candidates:
        raise DataError("at least one candidate configuration is required")
    models = []
    for cps in candidates:
        design = build_design(
            onsets, basis, tr, change_points=cps, confounds=confounds,
            model_kind="cumulative", intercept=intercept,
        )
        models.append(CandidateModel(cps, design))
    return models


def _whitened_rss(y: np.ndarray, design: DesignMatrix, noise: NoiseSpec) -> tuple:
    Xw = whiten(design.matrix, noise)
    yw = whiten(np.asarray(y, dtype=float).ravel(), noise)
    Q, R = np.linalg.qr(Xw)
    if np.min(np.abs(np.diag(R))) < 1e-10 * max(1.0, np.max(np.abs(np.diag(R)))):
        raise DataError("candidate design is rank deficient")
    proj = Q.T @ yw
    rss = float(yw @ yw - proj @ proj)
    return rss, yw.size


def model_loglik(y: np.ndarray, design: DesignMatrix, noise: NoiseSpec) -> float:
    """Gaussian log-likelihood of the GLS-fitted model.

    With known noise the provided sigma2*V is plugged in; otherwise sigma2 is
    profiled at its maximum-likelihood value RSS/T (the correlation shape V
    still comes from the noise spec, shared across candidates so that which
    model wins depends on the data only).
    """
    rss, T = _whitened_rss(y, design, noise)
    logdet = ar_logdet(noise, T)
    if noise.known:
        s2 = noise.sigma2
        return float(-0.5 * (T * np.log(2.0 * np.pi * s2) + logdet + rss / s2))
    s2 = max(rss / T, np.finfo(float).tiny)
    return float(-0.5 * (T * (np.log(2.0 * np.pi * s2) + 1.0) + logdet))


def select_model(y: np.ndarray, candidates: Sequence[CandidateModel], noise: NoiseSpec) -> SelectionResult:
    """Pick the candidate with the strictly largest log-likelihood.

    An exact tie is an error: with continuous data it has probability zero,
    so in practice it means duplicated candidate configurations.
    """
    if not candidates:
        raise DataError("cannot select among zero candidates")
    logliks = np.array([model_loglik(y, c.design, noise) for c in candidates])
    best = int(np.argmax(logliks))
    if len(candidates) > 1:
        ties = np.flatnonzero(logliks == logliks[best])
        if ties.size > 1:
            raise DataError(
                f"exact log-likelihood tie between candidates {ties.tolist()}; "
                "candidate configurations are probably duplicated"
            )
    return SelectionResult(best, logliks, tuple(candidates))
