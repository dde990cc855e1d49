"""Learning-criterion detection and backward learning curves for feedback tasks.

A subject answers a sequence of trials and receives positive or negative
feedback on each.  The learning criterion is met at the first trial that
starts a run of ``run_length`` consecutive positive-feedback trials, provided
the run contains at least ``min_targets`` correctly specified target tones
and at least ``min_prior`` positive-feedback trials precede the run (those
need not be consecutive).

The backward learning curve averages per-block positive-feedback proportions
across subjects after shifting each subject so that the block containing
their criterion trial becomes block zero.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .util import DataError

__all__ = ["LearningCurve", "learning_criterion", "backward_learning_curve"]

RUN_LENGTH = 12
MIN_TARGETS = 3
MIN_PRIOR = 9


def _as_indicator(seq, name: str) -> np.ndarray:
    arr = np.asarray(seq)
    if arr.ndim != 1 or arr.size == 0:
        raise DataError(f"{name} must be a non-empty 1-D sequence")
    if arr.dtype != bool and not np.isin(arr, (0, 1)).all():
        raise DataError(f"{name} entries must be boolean or 0/1")
    return arr.astype(bool)


def learning_criterion(
    correct_targets,
    positive_feedback,
    *,
    run_length: int = RUN_LENGTH,
    min_targets: int = MIN_TARGETS,
    min_prior: int = MIN_PRIOR,
) -> int | None:
    """1-based index of the trial at which the criterion is first met.

    Parameters
    ----------
    correct_targets : sequence of bool
        Per trial, whether the answer was a correctly specified target tone.
    positive_feedback : sequence of bool
        Per trial, whether the feedback was positive.

    Returns None when no trial qualifies (including when the run does not
    fit before the end of the sequence).
    """
    targets = _as_indicator(correct_targets, "correct_targets")
    feedback = _as_indicator(positive_feedback, "positive_feedback")
    if targets.size != feedback.size:
        raise DataError(
            f"sequence lengths differ: {targets.size} answers vs "
            f"{feedback.size} feedback trials"
        )
    if run_length < 1 or min_targets < 0 or min_prior < 0:
        raise DataError("criterion clauses must be non-negative (run length >= 1)")
    n = feedback.size
    if n < run_length:
        return None
    cum_pos = np.concatenate([[0], np.cumsum(feedback)])
    cum_tgt = np.concatenate([[0], np.cumsum(targets & feedback)])
    starts = np.arange(n - run_length + 1)
    all_positive = (cum_pos[starts + run_length] - cum_pos[starts]) == run_length
    enough_targets = (cum_tgt[starts + run_length] - cum_tgt[starts]) >= min_targets
    enough_prior = cum_pos[starts] >= min_prior
    hits = np.flatnonzero(all_positive & enough_targets & enough_prior)
    if hits.size == 0:
        return None
    return int(hits[0]) + 1


@dataclass(frozen=True)
class LearningCurve:
    """Block-aligned average performance across subjects.

    ``blocks`` are block numbers relative to each subject's criterion block
    (block zero contains the criterion trial); ``proportions`` is, per block,
    the mean over contributing subjects of the subject's within-block
    positive-feedback proportion; ``n_subjects`` counts contributors.
    """

    blocks: np.ndarray
    proportions: np.ndarray
    n_subjects: np.ndarray
    criterion_trials: tuple

    def to_json_dict(self) -> dict:
        return {
            "blocks": [int(b) for b in self.blocks],
            "proportions": [float(p) for p in self.proportions],
            "n_subjects": [int(c) for c in self.n_subjects],
            "criterion_trials": [int(t) for t in self.criterion_trials],
        }


def backward_learning_curve(
    subjects: Sequence[tuple],
    block_size: int = 5,
    *,
    run_length: int = RUN_LENGTH,
    min_targets: int = MIN_TARGETS,
    min_prior: int = MIN_PRIOR,
) -> LearningCurve:
    """Average per-block positive-feedback proportion, criterion-aligned.

    ``subjects`` holds one ``(correct_targets, positive_feedback)`` pair per
    subject.  Each feedback sequence is cut into consecutive blocks of
    ``block_size`` trials (the final block may be shorter); the block holding
    the subject's criterion trial becomes block zero.  Subjects that never
    meet the criterion are dropped; dropping everyone is an error.
    """
    if block_size < 1:
        raise DataError(f"block_size must be >= 1, got {block_size}")
    per_subject: dict[int, list] = {}
    criterion_trials = []
    for targets, feedback in subjects:
        trial = learning_criterion(
            targets, feedback,
            run_length=run_length, min_targets=min_targets, min_prior=min_prior,
        )
        if trial is None:
            continue
        criterion_trials.append(trial)
        fb = _as_indicator(feedback, "positive_feedback")
        zero_block = (trial - 1) // block_size
        for b in range(int(np.ceil(fb.size / block_size))):
            chunk = fb[b * block_size : (b + 1) * block_size]
            per_subject.setdefault(b - zero_block, []).append(float(chunk.mean()))
    if not per_subject:
        raise DataError("no subject meets the learning criterion")
    blocks = np.array(sorted(per_subject), dtype=int)
    proportions = np.array([np.mean(per_subject[b]) for b in blocks])
    counts = np.array([len(per_subject[b]) for b in blocks], dtype=int)
    return LearningCurve(blocks, proportions, counts, tuple(criterion_trials))
