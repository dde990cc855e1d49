"""Onset series, change-point bookkeeping, and regression design assembly.

Three model kinds are supported:

* ``stationary`` — one column block per condition: the condition onset
  indicator convolved with each basis function (time-invariant response).
* ``segmented`` — the onset series is split at the change points; each
  stationary segment gets its own column block, so coefficients are
  per-(condition, segment).
* ``cumulative`` — single-basis only; column c is the convolved *suffix*
  onset series starting at change point c, so the coefficient on column
  c > 0 is the change magnitude at that change point.

Scan indices are 1-based in all external files and in ``ChangePointSet``;
conversion to 0-based happens here.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .hrf import BasisSet
from .util import DataError

__all__ = [
    "OnsetSeries",
    "ChangePointSet",
    "ColumnInfo",
    "DesignMatrix",
    "split_onsets",
    "suffix_onsets",
    "build_design",
]


@dataclass(frozen=True)
class OnsetSeries:
    """Binary stimulus-onset indicator for one condition over T scans."""

    indicator: np.ndarray
    condition: str

    def __post_init__(self):
        ind = np.asarray(self.indicator)
        if ind.ndim != 1 or ind.size < 1:
            raise DataError("onset indicator must be a non-empty 1-D array")
        if not np.isin(ind, (0, 1)).all():
            raise DataError("onset indicator entries must be 0 or 1")
        object.__setattr__(self, "indicator", ind.astype(np.uint8))

    @classmethod
    def from_indices(cls, T: int, indices: Sequence[int], condition: str) -> "OnsetSeries":
        """Build from 1-based scan indices."""
        ind = np.zeros(T, dtype=np.uint8)
        for i in indices:
            if not 1 <= i <= T:
                raise DataError(f"onset index {i} outside 1..{T}")
            ind[i - 1] = 1
        return cls(ind, condition)

    @property
    def T(self) -> int:
        return self.indicator.size

    def onset_indices(self) -> np.ndarray:
        """1-based scan indices of the onsets."""
        return np.flatnonzero(self.indicator) + 1


@dataclass(frozen=True)
class ChangePointSet:
    """Per-condition sorted 1-based change-point scan indices."""

    points: Mapping[str, tuple]

    def __post_init__(self):
        clean = {}
        for cond, psi in dict(self.points).items():
            psi = tuple(int(p) for p in psi)
            if any(b <= a for a, b in zip(psi, psi[1:])):
                raise DataError(f"change points for condition {cond!r} must be strictly increasing")
            clean[cond] = psi
        object.__setattr__(self, "points", clean)

    @classmethod
    def empty(cls, conditions: Sequence[str]) -> "ChangePointSet":
        return cls({c: () for c in conditions})

    def for_condition(self, condition: str) -> tuple:
        return self.points.get(condition, ())

    def counts(self) -> dict:
        return {c: len(p) for c, p in self.points.items()}


@dataclass(frozen=True)
class ColumnInfo:
    """Provenance tag for one design column."""

    kind: str  # "condition" or "confound"
    condition: str | None = None
    segment: int | None = None  # segment (segmented) or change index (cumulative)
    basis: int | None = None
    name: str = ""


@dataclass(frozen=True)
class DesignMatrix:
    matrix: np.ndarray
    columns: tuple
    model_kind: str

    @property
    def T(self) -> int:
        return self.matrix.shape[0]

    @property
    def p(self) -> int:
        return self.matrix.shape[1]

    def column_indices(self, kind: str = "condition", condition: str | None = None,
                       segment: int | None = None) -> list:
        out = []
        for j, info in enumerate(self.columns):
            if info.kind != kind:
                continue
            if condition is not None and info.condition != condition:
                continue
            if segment is not None and info.segment != segment:
                continue
            out.append(j)
        if not out:
            raise KeyError(f"no design columns match kind={kind} condition={condition} segment={segment}")
        return out


def split_onsets(u: OnsetSeries, psi: Sequence[int]) -> list:
    """Split an onset series into stationary segments at change points ``psi``.

    Segment c keeps the onsets t with psi[c-1] <= t < psi[c] (1-based), with
    psi[0] = 1 and psi[C+1] = T+1, so a change point opens the segment that
    follows it.  The elementwise sum of the outputs equals the input.
    """
    psi = [int(p) for p in psi]
    if any(b <= a for a, b in zip(psi, psi[1:])):
        raise DataError("change points must be strictly increasing")
    for p in psi:
        if not 1 <= p <= u.T:
            raise DataError(f"change point {p} outside 1..{u.T}")
    bounds = [1] + psi + [u.T + 1]
    scan = np.arange(1, u.T + 1)
    segments = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        keep = (scan >= lo) & (scan < hi)
        segments.append(OnsetSeries(u.indicator * keep, u.condition))
    return segments


def suffix_onsets(u: OnsetSeries, psi: Sequence[int]) -> list:
    """Cumulative-model series: element c keeps all onsets at t >= psi[c].

    psi[0] = 1, so the first series is the full onset series and series
    c > 0 accumulates everything from change point c onward.
    """
    psi = [int(p) for p in psi]
    if any(b <= a for a, b in zip(psi, psi[1:])):
        raise DataError("change points must be strictly increasing")
    for p in psi:
        if not 1 <= p <= u.T:
            raise DataError(f"change point {p} outside 1..{u.T}")
    starts = [1] + psi
    scan = np.arange(1, u.T + 1)
    return [OnsetSeries(u.indicator * (scan >= s), u.condition) for s in starts]


def _convolve_block(u: OnsetSeries, basis_at_tr: np.ndarray) -> np.ndarray:
    T = u.T
    cols = np.empty((T, basis_at_tr.shape[1]))
    ind = u.indicator.astype(float)
    for g in range(basis_at_tr.shape[1]):
        cols[:, g] = np.convolve(ind, basis_at_tr[:, g])[:T]
    return cols


def build_design(
    onsets: Mapping[str, OnsetSeries] | Sequence[OnsetSeries],
    basis: BasisSet,
    tr: float,
    change_points: ChangePointSet | None = None,
    confounds: np.ndarray | None = None,
    model_kind: str = "stationary",
    intercept: bool = True,
    check_rank: bool = True,
) -> DesignMatrix:
    """Assemble the regression design for one subject/ROI.

    The basis is sampled at multiples of TR and convolved with the
    (scan-resolution) onset indicators; because onsets sit on the scan grid,
    this equals convolving at basis resolution and reading off scan times.
    """
    if isinstance(onsets, Mapping):
        series = list(onsets.values())
    else:
        series = list(onsets)
    if not series:
        raise DataError("at least one condition onset series is required")
    T = series[0].T
    if any(u.T != T for u in series):
        raise DataError("all onset series must share the same scan count")
    if model_kind not in ("stationary", "segmented", "cumulative"):
        raise DataError(f"unknown model kind {model_kind!r}")
    if model_kind == "cumulative" and basis.n_functions != 1:
        raise DataError("the cumulative model requires a single-function basis")
    cps = change_points or ChangePointSet.empty([u.condition for u in series])
    basis_tr = basis.at_scan_resolution(tr)

    blocks, infos = [], []
    for u in series:
        psi = cps.for_condition(u.condition)
        if model_kind == "stationary":
            pieces = [u]
        elif model_kind == "segmented":
            pieces = split_onsets(u, psi)
        else:
            pieces = suffix_onsets(u, psi)
        for seg, piece in enumerate(pieces):
            block = _convolve_block(piece, basis_tr)
            blocks.append(block)
            for g in range(basis_tr.shape[1]):
                infos.append(ColumnInfo("condition", u.condition, seg, g,
                                        name=f"{u.condition}:s{seg}:b{g}"))

    if intercept:
        blocks.append(np.ones((T, 1)))
        infos.append(ColumnInfo("confound", name="intercept"))
    if confounds is not None:
        conf = np.asarray(confounds, dtype=float)
        if conf.ndim == 1:
            conf = conf[:, None]
        if conf.shape[0] != T:
            raise DataError(f"confounds have {conf.shape[0]} rows, expected {T}")
        blocks.append(conf)
        for m in range(conf.shape[1]):
            infos.append(ColumnInfo("confound", name=f"confound{m}"))

    X = np.hstack(blocks)
    if check_rank and np.linalg.matrix_rank(X) < X.shape[1]:
        raise DataError(
            f"design matrix is rank deficient ({np.linalg.matrix_rank(X)} < {X.shape[1]}); "
            "check for empty segments or collinear confounds"
        )
    return DesignMatrix(X, tuple(infos), model_kind)
