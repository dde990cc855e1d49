"""Validated study configurations with a versioned JSON representation.

A configuration fully determines a simulation study: one ``master_seed``
drives every random draw through named substreams, so runs are reproducible
bit for bit.  Two kinds exist: ``known-cp`` (two-condition study analyzed at
reported change points) and ``unknown-cp`` (single-condition study with
change-point selection and post-selection inference).
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .util import ConfigError

__all__ = [
    "SCHEMA",
    "STATISTIC_NAMES",
    "MT_PROCEDURES",
    "StudyConfig",
    "KnownCpConfig",
    "UnknownCpConfig",
    "parse_config",
    "load_config",
    "config_to_dict",
]

SCHEMA = "hrshift-config/1"
STATISTIC_NAMES = ("kh", "wald")
MT_PROCEDURES = ("tree-bh", "inheritance")


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


def _positive_int(value, name: str, minimum: int = 1) -> int:
    _require(
        isinstance(value, (int, np.integer)) and not isinstance(value, bool),
        f"{name} must be an integer",
    )
    _require(value >= minimum, f"{name} must be >= {minimum}, got {value}")
    return int(value)


def _finite_float(value, name: str) -> float:
    _require(isinstance(value, (int, float, np.floating)) and not isinstance(value, bool),
             f"{name} must be a number")
    v = float(value)
    _require(np.isfinite(v), f"{name} must be finite")
    return v


@dataclass(frozen=True)
class StudyConfig:
    """Fields shared by both study kinds."""

    master_seed: int
    B: int = 200
    n: int = 30
    tr: float = 2.0
    itis: tuple = (3, 4, 5)
    alpha: float = 0.05
    q: float = 0.05
    statistics: tuple = STATISTIC_NAMES
    n_jobs: int = 1

    kind = "study"

    def __post_init__(self):
        _require(
            isinstance(self.master_seed, (int, np.integer))
            and not isinstance(self.master_seed, bool)
            and self.master_seed >= 0,
            "master_seed must be an explicit non-negative integer (no implicit seeding)",
        )
        object.__setattr__(self, "master_seed", int(self.master_seed))
        object.__setattr__(self, "B", _positive_int(self.B, "B"))
        object.__setattr__(self, "n", _positive_int(self.n, "n", minimum=2))
        object.__setattr__(self, "tr", _finite_float(self.tr, "tr"))
        _require(self.tr > 0, f"tr must be positive, got {self.tr}")
        itis = tuple(_positive_int(i, "iti value") for i in self.itis)
        _require(len(itis) > 0, "itis must be non-empty")
        object.__setattr__(self, "itis", itis)
        object.__setattr__(self, "alpha", _finite_float(self.alpha, "alpha"))
        object.__setattr__(self, "q", _finite_float(self.q, "q"))
        _require(0 < self.alpha < 1, f"alpha must be in (0, 1), got {self.alpha}")
        _require(0 < self.q < 1, f"q must be in (0, 1), got {self.q}")
        stats = tuple(str(s) for s in self.statistics)
        _require(len(stats) > 0, "statistics must be non-empty")
        bad = sorted(set(stats) - set(STATISTIC_NAMES))
        _require(not bad, f"unknown statistic(s) {bad}; choose from {list(STATISTIC_NAMES)}")
        _require(len(set(stats)) == len(stats), "statistics contains duplicates")
        object.__setattr__(self, "statistics", stats)
        object.__setattr__(self, "n_jobs", _positive_int(self.n_jobs, "n_jobs"))


@dataclass(frozen=True)
class KnownCpConfig(StudyConfig):
    """Two-condition study with reported (possibly misreported) change points."""

    T: int = 500
    stimuli_per_condition: int = 60
    effect_means: Mapping = field(default_factory=lambda: {"a": 0.0, "b": 0.5})
    snr: float = 1.0
    misreport: bool = False
    misreport_bound: float = 5.0
    cp_rank_range: tuple = (16, 46)
    basis: str = "shape"
    mc_draws: int = 10_000
    procedures: tuple = MT_PROCEDURES

    kind = "known-cp"

    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, "T", _positive_int(self.T, "T", minimum=20))
        object.__setattr__(
            self, "stimuli_per_condition",
            _positive_int(self.stimuli_per_condition, "stimuli_per_condition"),
        )
        _require(
            isinstance(self.effect_means, Mapping) and len(self.effect_means) == 2,
            "effect_means must map exactly two condition names to group effect sizes",
        )
        means = {}
        for cond, value in self.effect_means.items():
            _require(isinstance(cond, str) and cond, "condition names must be non-empty strings")
            means[cond] = _finite_float(value, f"effect_means[{cond!r}]")
        object.__setattr__(self, "effect_means", means)
        object.__setattr__(self, "snr", _finite_float(self.snr, "snr"))
        _require(self.snr > 0, f"snr must be positive, got {self.snr}")
        _require(isinstance(self.misreport, bool), "misreport must be a boolean")
        object.__setattr__(
            self, "misreport_bound", _finite_float(self.misreport_bound, "misreport_bound")
        )
        _require(self.misreport_bound >= 0, "misreport_bound must be >= 0")
        rng = tuple(_positive_int(r, "cp_rank_range entry") for r in self.cp_rank_range)
        _require(len(rng) == 2 and rng[0] <= rng[1], "cp_rank_range must be (low, high) with low <= high")
        _require(
            rng[1] <= self.stimuli_per_condition,
            f"cp_rank_range {rng} exceeds the {self.stimuli_per_condition} onsets per condition",
        )
        object.__setattr__(self, "cp_rank_range", rng)
        if self.misreport:
            bound = int(np.ceil(self.misreport_bound))
            _require(
                rng[0] - bound >= 1 and rng[1] + bound <= self.stimuli_per_condition,
                "misreport_bound can push reported change points off the onset grid; "
                "shrink it or the cp_rank_range",
            )
        _require(self.basis in ("shape", "canonical"),
                 f"basis must be 'shape' or 'canonical', got {self.basis!r}")
        object.__setattr__(self, "mc_draws", _positive_int(self.mc_draws, "mc_draws", minimum=100))
        procs = tuple(str(p) for p in self.procedures)
        bad = sorted(set(procs) - set(MT_PROCEDURES))
        _require(not bad, f"unknown procedure(s) {bad}; choose from {list(MT_PROCEDURES)}")
        _require(len(procs) > 0 and len(set(procs)) == len(procs),
                 "procedures must be a non-empty list without duplicates")
        object.__setattr__(self, "procedures", procs)


@dataclass(frozen=True)
class UnknownCpConfig(StudyConfig):
    """Single-condition study: selection among candidate change points, then
    post-selection confidence distributions, pooled two-stage sampling."""

    N: int = 500
    T: int = 250
    n_stimuli: int = 60
    eta: float = 0.0
    effect_sd: float = float(np.sqrt(0.1))
    snr: float = 2.0
    rho: float = 0.2
    margin: int = 10
    spacing: int = 5
    n_decoys: int = 3
    D: int = 500
    d_e: int = 100
    basis: str = "canonical"
    max_attempt_factor: int = 4

    kind = "unknown-cp"

    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, "N", _positive_int(self.N, "N", minimum=2))
        _require(self.N >= self.n,
                 f"pool size N={self.N} must be at least the per-repetition group size n={self.n}")
        object.__setattr__(self, "T", _positive_int(self.T, "T", minimum=20))
        object.__setattr__(self, "n_stimuli", _positive_int(self.n_stimuli, "n_stimuli"))
        object.__setattr__(self, "eta", _finite_float(self.eta, "eta"))
        object.__setattr__(self, "effect_sd", _finite_float(self.effect_sd, "effect_sd"))
        _require(self.effect_sd > 0, "effect_sd must be positive")
        object.__setattr__(self, "snr", _finite_float(self.snr, "snr"))
        _require(self.snr > 0, f"snr must be positive, got {self.snr}")
        object.__setattr__(self, "rho", _finite_float(self.rho, "rho"))
        _require(abs(self.rho) < 1, f"AR(1) rho must satisfy |rho| < 1, got {self.rho}")
        object.__setattr__(self, "margin", _positive_int(self.margin, "margin", minimum=0))
        object.__setattr__(self, "spacing", _positive_int(self.spacing, "spacing"))
        object.__setattr__(self, "n_decoys", _positive_int(self.n_decoys, "n_decoys"))
        admissible = self.n_stimuli - 2 * self.margin
        _require(
            admissible >= self.n_decoys * self.spacing + 1,
            f"{self.n_decoys + 1} candidates spaced {self.spacing} apart do not fit "
            f"into the {admissible} admissible onset ranks",
        )
        object.__setattr__(self, "D", _positive_int(self.D, "D"))
        object.__setattr__(self, "d_e", _positive_int(self.d_e, "d_e"))
        _require(self.basis == "canonical",
                 "the unknown-cp study models a single-column response; basis must be 'canonical'")
        object.__setattr__(
            self, "max_attempt_factor",
            _positive_int(self.max_attempt_factor, "max_attempt_factor"),
        )


_KINDS = {"known-cp": KnownCpConfig, "unknown-cp": UnknownCpConfig}


def parse_config(data) -> StudyConfig:
    """Build a validated config from a plain mapping (parsed JSON)."""
    if not isinstance(data, Mapping):
        raise ConfigError("config must be a JSON object")
    schema = data.get("schema")
    if schema != SCHEMA:
        raise ConfigError(f"unsupported config schema {schema!r}; expected {SCHEMA!r}")
    kind = data.get("kind")
    cls = _KINDS.get(kind)
    if cls is None:
        raise ConfigError(f"unknown study kind {kind!r}; expected one of {sorted(_KINDS)}")
    body = {k: v for k, v in data.items() if k not in ("schema", "kind")}
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(body) - allowed)
    if unknown:
        raise ConfigError(f"unknown config field(s) for {kind}: {', '.join(unknown)}")
    if "master_seed" not in body:
        raise ConfigError("master_seed is required (explicit seeding only)")
    for name in ("itis", "statistics", "procedures", "cp_rank_range"):
        if name in body and isinstance(body[name], list):
            body[name] = tuple(body[name])
    try:
        return cls(**body)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> StudyConfig:
    """Read and validate a JSON config file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(data)


def config_to_dict(config: StudyConfig) -> dict:
    """JSON-ready dict that :func:`parse_config` accepts back unchanged."""
    out = {"schema": SCHEMA, "kind": config.kind}
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            value = list(value)
        elif isinstance(value, Mapping):
            value = dict(value)
        out[f.name] = value
    return out
