"""Synthetic event-related time-series generators for the two benchmark studies.

Study A ("known change point"): two conditions, a shape-basis response whose
coefficient vector is rescaled after a per-subject change point, white noise,
and an optionally misreported change-point location handed to the analysis.

Study B ("unknown change point"): one condition under the cumulative model
with a post-change increment that follows the canonical response shape, a
baseline offset, AR(1) noise, and a candidate set of one true plus several
decoy locations for selection.

All randomness is drawn through named substreams of a master seed so that
any subject or replicate can be regenerated in isolation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .ar import NoiseSpec
from .design import ChangePointSet, OnsetSeries, build_design
from .hrf import BasisSet, canonical_hrf, shape_basis
from .util import DataError, substream

__all__ = [
    "KnownCpSubject",
    "KnownCpReplicate",
    "UnknownCpSubject",
    "sample_onset_indices",
    "simulate_known_cp_replicate",
    "simulate_unknown_cp_subject",
    "BASE_COMBINATION",
]

#: coefficient vector applied to the shape basis before the change point
BASE_COMBINATION = (3.2, -6.4, 3.2)


def sample_onset_indices(
    rng: np.random.Generator,
    T: int,
    n_onsets: int,
    itis: Sequence[int] = (3, 4, 5),
    max_tries: int = 1000,
) -> np.ndarray:
    """1-based onset scan indices with gaps drawn uniformly from ``itis``.

    The gap sequence is resampled if its span exceeds the series; the first
    onset is then placed uniformly among the feasible start scans.
    """
    if n_onsets < 1:
        raise DataError("need at least one onset")
    itis = np.asarray(itis, dtype=int)
    for _ in range(max_tries):
        gaps = rng.choice(itis, size=n_onsets - 1)
        span = int(gaps.sum())
        if span <= T - 1:
            t1 = int(rng.integers(1, T - span + 1))
            return t1 + np.concatenate([[0], np.cumsum(gaps)])
    raise DataError(
        f"could not place {n_onsets} onsets with gaps {itis.tolist()} inside T={T}"
    )


def _ar1_noise(rng: np.random.Generator, T: int, rho: float, sigma2: float) -> np.ndarray:
    eps = rng.standard_normal(T)
    out = np.empty(T)
    out[0] = eps[0]
    scale = np.sqrt(1.0 - rho**2)
    for t in range(1, T):
        out[t] = rho * out[t - 1] + scale * eps[t]
    return np.sqrt(sigma2) * out


# ---------------------------------------------------------------------------
# Study A: known (reported) change point, two conditions
# ---------------------------------------------------------------------------

@dataclass
class KnownCpSubject:
    y: np.ndarray
    true_cps: ChangePointSet
    reported_cps: ChangePointSet
    true_ranks: dict
    reported_ranks: dict
    effects: dict          # condition -> e_ik
    sigma2: float


@dataclass
class KnownCpReplicate:
    onsets: dict           # condition -> OnsetSeries
    basis: BasisSet
    tr: float
    subjects: list
    effect_means: dict     # condition -> mean of e_ik


def _split_conditions(rng: np.random.Generator, all_onsets: np.ndarray) -> tuple:
    n = all_onsets.size
    perm = rng.permutation(n)
    half = n // 2
    a = np.sort(all_onsets[perm[:half]])
    b = np.sort(all_onsets[perm[half:]])
    return a, b


def simulate_known_cp_replicate(
    master_seed: int,
    rep: int,
    *,
    n_subjects: int = 30,
    T: int = 500,
    tr: float = 2.0,
    stimuli_per_condition: int = 60,
    itis: Sequence[int] = (3, 4, 5),
    effect_means: Mapping[str, float] | None = None,
    snr: float = 1.0,
    misreport: bool = False,
    misreport_bound: float = 5.0,
    cp_rank_range: tuple = (16, 46),
    basis: BasisSet | None = None,
) -> KnownCpReplicate:
    """One replicate of the two-condition study with per-subject change points.

    Every subject shares the replicate's onset grid.  Condition ``k`` scales
    the base coefficient vector by (3.2 + e_ik)/3.2 after the change point,
    with e_ik ~ N(effect_means[k], 1).  Noise is white with variance set by
    the mean clean signal over the requested signal-to-noise ratio.  With
    ``misreport`` the change point handed to the analysis is shifted by a
    rounded uniform[-misreport_bound, misreport_bound] number of onset ranks
    (zero shifts can occur; the truth is then reported by accident).
    """
    if effect_means is None:
        effect_means = {"a": 0.0, "b": 0.5}
    conditions = list(effect_means)
    if len(conditions) != 2:
        raise DataError("this study uses exactly two conditions")
    if basis is None:
        basis = shape_basis()

    rng_design = substream(master_seed, "design", rep)
    grid = sample_onset_indices(
        rng_design, T, 2 * stimuli_per_condition, itis=itis
    )
    idx_a, idx_b = _split_conditions(rng_design, grid)
    onsets = {
        conditions[0]: OnsetSeries.from_indices(T, idx_a, conditions[0]),
        conditions[1]: OnsetSeries.from_indices(T, idx_b, conditions[1]),
    }

    beta_bc = np.asarray(BASE_COMBINATION)
    lo, hi = cp_rank_range
    subjects = []
    for i in range(n_subjects):
        rng = substream(master_seed, "subject", rep, i)
        true_ranks, reported_ranks, effects = {}, {}, {}
        true_pts, reported_pts = {}, {}
        for cond in conditions:
            idx = onsets[cond].onset_indices()
            rank = int(rng.integers(lo, hi + 1))
            true_ranks[cond] = rank
            true_pts[cond] = (int(idx[rank - 1]),)
            if misreport:
                shift = int(np.round(rng.uniform(-misreport_bound, misreport_bound)))
            else:
                shift = 0
            rrank = rank + shift
            if not 1 <= rrank <= idx.size:
                raise DataError(
                    f"misreported rank {rrank} leaves the onset grid; shrink the "
                    f"misreport bound or the change-point rank range"
                )
            reported_ranks[cond] = rrank
            reported_pts[cond] = (int(idx[rrank - 1]),)
            effects[cond] = float(rng.normal(effect_means[cond], 1.0))
        true_cps = ChangePointSet(true_pts)
        reported_cps = ChangePointSet(reported_pts)

        design = build_design(
            onsets, basis, tr, change_points=true_cps,
            model_kind="segmented", intercept=False,
        )
        coef = np.empty(design.p)
        for cond in conditions:
            scale = (3.2 + effects[cond]) / 3.2
            coef[design.column_indices(condition=cond, segment=0)] = beta_bc
            coef[design.column_indices(condition=cond, segment=1)] = beta_bc * scale
        clean = design.matrix @ coef
        mean_clean = float(clean.mean())
        if mean_clean <= 0:
            raise DataError("mean clean signal is not positive; cannot set noise level")
        sigma2 = mean_clean / snr
        y = clean + rng.normal(0.0, np.sqrt(sigma2), size=T)
        subjects.append(
            KnownCpSubject(
                y=y, true_cps=true_cps, reported_cps=reported_cps,
                true_ranks=true_ranks, reported_ranks=reported_ranks,
                effects=effects, sigma2=sigma2,
            )
        )
    return KnownCpReplicate(
        onsets=onsets, basis=basis, tr=tr, subjects=subjects,
        effect_means=dict(effect_means),
    )


# ---------------------------------------------------------------------------
# Study B: unknown change point, cumulative model, AR(1) noise
# ---------------------------------------------------------------------------

@dataclass
class UnknownCpSubject:
    y: np.ndarray
    onsets: dict                    # condition -> OnsetSeries
    basis: BasisSet
    tr: float
    true_cp: ChangePointSet
    candidates: list                # ChangePointSet, true one included
    true_index: int                 # position of the truth in candidates
    change_coef: float              # e_i, the cumulative-column coefficient
    baseline: float
    noise: NoiseSpec                # true AR(1) noise, known variance
    theta_true: float = field(init=False)

    def __post_init__(self) -> None:
        # natural-parameter scale of the change coefficient
        self.theta_true = self.change_coef / self.noise.sigma2


def _sample_candidate_ranks(
    rng: np.random.Generator,
    n_onsets: int,
    n_decoys: int,
    margin: int,
    spacing: int,
    true_rank: int | None = None,
    max_tries: int = 10_000,
) -> np.ndarray:
    """True rank plus decoys, uniform over admissible ranks, pairwise spaced.

    ``true_rank`` pins the first entry; decoys are then drawn around it.
    """
    admissible = np.arange(margin + 1, n_onsets - margin + 1)
    for _ in range(max_tries):
        if true_rank is None:
            picks = rng.choice(admissible, size=n_decoys + 1, replace=False)
        else:
            if true_rank not in admissible:
                raise DataError(f"true rank {true_rank} violates margin {margin}")
            rest = admissible[admissible != true_rank]
            picks = np.concatenate(
                [[true_rank], rng.choice(rest, size=n_decoys, replace=False)]
            )
        if np.all(np.diff(np.sort(picks)) >= spacing):
            return picks  # picks[0] is the true rank
    raise DataError("could not sample spaced candidate ranks")


def simulate_unknown_cp_subject(
    master_seed: int,
    subject: int,
    *,
    T: int = 250,
    tr: float = 2.0,
    n_stimuli: int = 60,
    itis: Sequence[int] = (3, 4, 5),
    eta: float = 0.0,
    effect_sd: float = np.sqrt(0.1),
    baseline_mean: float = 10.0,
    baseline_sd: float = 1.0,
    snr: float = 2.0,
    rho: float = 0.2,
    margin: int = 10,
    spacing: int = 5,
    n_decoys: int = 3,
    true_rank: int | None = None,
    basis: BasisSet | None = None,
) -> UnknownCpSubject:
    """One subject of the unknown-change-point study.

    The clean series is the cumulative model: a full convolved regressor with
    coefficient 1, a post-change (suffix) regressor with coefficient
    e_i ~ N(eta, effect_sd^2), and a baseline ~ N(10, 1).  AR(1) noise with
    lag-one correlation ``rho`` has variance mean(stimulus signal)/snr; the
    constant baseline is excluded from that mean, so the ratio measures the
    evoked signal against the noise.  Candidates are the true change point
    and ``n_decoys`` decoys, all on onsets, pairwise at least ``spacing``
    onset ranks apart and at least ``margin`` ranks from either end.

    The onset grid depends only on the master seed, so all subjects drawn
    from the same seed share one experimental design.
    """
    if basis is None:
        basis = canonical_hrf()
    rng_design = substream(master_seed, "design")
    idx = sample_onset_indices(rng_design, T, n_stimuli, itis=itis)
    cond = "a"
    onsets = {cond: OnsetSeries.from_indices(T, idx, cond)}

    rng = substream(master_seed, "subject", subject)
    ranks = _sample_candidate_ranks(
        rng, n_stimuli, n_decoys, margin, spacing, true_rank=true_rank
    )
    true_rank = int(ranks[0])
    candidates = [
        ChangePointSet({cond: (int(idx[r - 1]),)}) for r in ranks
    ]
    # deterministic candidate ordering by location; remember where truth sits
    candidates.sort(key=lambda c: c.for_condition(cond))
    true_cp = ChangePointSet({cond: (int(idx[true_rank - 1]),)})
    true_index = candidates.index(true_cp)

    e_i = float(rng.normal(eta, effect_sd))
    delta_i = float(rng.normal(baseline_mean, baseline_sd))

    design = build_design(
        onsets, basis, tr, change_points=true_cp,
        model_kind="cumulative", intercept=True,
    )
    coef = np.zeros(design.p)
    coef[design.column_indices(condition=cond, segment=0)] = 1.0
    coef[design.column_indices(condition=cond, segment=1)] = e_i
    signal = design.matrix @ coef
    mean_signal = float(signal.mean())
    if mean_signal <= 0:
        raise DataError("mean stimulus signal is not positive; cannot set noise level")
    sigma2 = mean_signal / snr
    noise = NoiseSpec(order=1, rho=(rho,), sigma2=sigma2, known=True)
    y = signal + delta_i + _ar1_noise(rng, T, rho, sigma2)
    return UnknownCpSubject(
        y=y, onsets=onsets, basis=basis, tr=tr, true_cp=true_cp,
        candidates=candidates, true_index=true_index, change_coef=e_i,
        baseline=delta_i, noise=noise,
    )
