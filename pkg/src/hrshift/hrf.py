"""Hemodynamic response bases: canonical double-gamma, file-loaded sets, and a
built-in three-function shape basis for studies that need G > 1."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import gamma as _gamma

from .util import DataError

__all__ = ["BasisSet", "canonical_hrf", "load_basis", "shape_basis", "double_gamma"]

MIN_SPAN_SECONDS = 20.0


@dataclass(frozen=True)
class BasisSet:
    """A matrix of hemodynamic response basis functions sampled at ``dt``.

    Parameters
    ----------
    matrix : ndarray, shape (T', G)
        One basis function per column, sampled every ``dt`` seconds starting
        at t = 0.
    dt : float
        Seconds per sample.
    kind : str
        "canonical", "shape", or "file".
    """

    matrix: np.ndarray
    dt: float
    kind: str = "file"

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim == 1:
            m = m[:, None]
        if m.ndim != 2 or m.size == 0:
            raise DataError("basis matrix must be a non-empty 2-D array")
        if not np.all(np.isfinite(m)):
            raise DataError("basis matrix contains non-finite values")
        if self.dt <= 0:
            raise DataError(f"dt must be positive, got {self.dt}")
        if m.shape[0] * self.dt < MIN_SPAN_SECONDS:
            raise DataError(
                f"basis spans {m.shape[0] * self.dt:.2f} s; needs at least "
                f"{MIN_SPAN_SECONDS:.0f} s to cover a hemodynamic response"
            )
        object.__setattr__(self, "matrix", m)

    @property
    def n_samples(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_functions(self) -> int:
        return self.matrix.shape[1]

    def at_scan_resolution(self, tr: float) -> np.ndarray:
        """Sample each basis function at multiples of the scan interval TR."""
        if tr <= 0:
            raise DataError(f"TR must be positive, got {tr}")
        n = int(np.floor((self.n_samples - 1) * self.dt / tr)) + 1
        idx = np.rint(np.arange(n) * tr / self.dt).astype(int)
        idx = idx[idx < self.n_samples]
        return self.matrix[idx]


def double_gamma(
    t: np.ndarray,
    peak_delay: float = 6.0,
    undershoot_delay: float = 16.0,
    peak_disp: float = 1.0,
    undershoot_disp: float = 1.0,
    ratio: float = 6.0,
) -> np.ndarray:
    """Double-gamma response: difference of gamma densities.

    Shapes are delay/dispersion and scales are the dispersions, so the
    default curve peaks near (peak_delay - peak_disp) = 5 s and dips around
    the undershoot delay.  Not normalized.
    """
    t = np.asarray(t, dtype=float)
    pos = _gamma.pdf(t, peak_delay / peak_disp, scale=peak_disp)
    neg = _gamma.pdf(t, undershoot_delay / undershoot_disp, scale=undershoot_disp)
    return pos - neg / ratio


def canonical_hrf(dt: float = 0.1, duration: float = 32.0) -> BasisSet:
    """Single-column canonical double-gamma basis, peak-normalized to 1."""
    if dt <= 0:
        raise DataError(f"dt must be positive, got {dt}")
    if duration < MIN_SPAN_SECONDS:
        raise DataError(f"duration must be >= {MIN_SPAN_SECONDS:.0f} s, got {duration}")
    t = np.arange(0.0, duration, dt)
    h = double_gamma(t)
    h = h / h.max()
    return BasisSet(h[:, None], dt=dt, kind="canonical")


def load_basis(path, dt: float) -> BasisSet:
    """Read a T'xG numeric CSV (no header), one basis function per column."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        width = None
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise DataError(f"{path}: ragged row at line {lineno}")
            try:
                rows.append([float(c) for c in cells])
            except ValueError as exc:
                raise DataError(f"{path}: non-numeric cell at line {lineno}") from exc
    if not rows:
        raise DataError(f"{path}: empty basis file")
    return BasisSet(np.array(rows), dt=dt, kind="file")


def shape_basis(dt: float = 0.1, duration: float = 32.0, combination=(3.2, -6.4, 3.2)) -> BasisSet:
    """Built-in three-function basis for flexible response-shape modeling.

    The three functions are principal components of a family of double-gamma
    responses with varied peak delay, undershoot delay, dispersion and
    undershoot ratio; the mixing is then chosen so that the specific
    coefficient vector ``combination`` reproduces the canonical response
    (projected onto the component span, peak magnitude ~= 1) while keeping
    the columns well conditioned.  Deterministic: no randomness involved.
    """
    if dt <= 0:
        raise DataError(f"dt must be positive, got {dt}")
    if duration < MIN_SPAN_SECONDS:
        raise DataError(f"duration must be >= {MIN_SPAN_SECONDS:.0f} s, got {duration}")
    beta = np.asarray(combination, dtype=float)
    if beta.shape != (3,) or np.allclose(beta, 0):
        raise DataError("combination must be a non-zero length-3 vector")
    t = np.arange(0.0, duration, dt)
    family = []
    for peak_delay in np.linspace(4.5, 7.5, 7):
        for undershoot_delay in np.linspace(13.0, 19.0, 5):
            for disp in np.linspace(0.8, 1.2, 5):
                for ratio in np.linspace(4.0, 8.0, 5):
                    family.append(double_gamma(t, peak_delay, undershoot_delay, disp, disp, ratio))
    family = np.array(family)
    family /= np.abs(family).max(axis=1, keepdims=True)
    components = np.linalg.svd(family, full_matrices=False)[2][:3].T  # T' x 3
    target = double_gamma(t)
    target /= target.max()
    coef, *_ = np.linalg.lstsq(components, target, rcond=None)
    # mixing A with A @ beta = coef; the sI term keeps columns balanced
    bsq = float(beta @ beta)
    s = float(np.linalg.norm(coef) / np.linalg.norm(beta))
    A = s * np.eye(3) + np.outer((coef - s * beta) / bsq, beta)
    return BasisSet(components @ A, dt=dt, kind="shape")
