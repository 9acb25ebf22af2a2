"""Experiment configuration and CSV data ingestion.

Config grammar: one ``key = value`` per line, ``#`` starts a comment, blank
lines are ignored.  Keys are dotted; lists are comma separated; numbers may
be written as fractions (``1/8``); booleans are ``true``/``false``.

=======================  ==============================  ==================================
key                      default                         meaning
=======================  ==============================  ==================================
model.id                 (required)                      one of :data:`abcts.models.MODELS`
model.<option>           model default                   constructor option, e.g. ``model.s1``
model.theta              model default                   parameter used to simulate data and run filters
data.csv                 none                            observations; synthetic data if unset
data.n                   100                             length of the synthetic series
abc.eps                  (required)                      ball radius, > 0
abc.noisy                false                           perturb the data on the eps-ball first
algorithm.id             (required)                      see :data:`ALGORITHMS`
algorithm.N              n/2 (trials), n (particles)     trials per datum or particle count
algorithm.iterations     10000                           chain length
algorithm.cap            10000000                        per-datum / per-step trial budget
algorithm.early_reject   false                           naive kernel: stop simulating at the first miss
algorithm.noise_step     0.5                             collapsed kernel: noise random-walk size
algorithm.resampling     multinomial                     standard filter: multinomial or systematic
algorithm.filter         standard                        collapsed-pmmh: standard or alive
algorithm.init           prior                           ``prior`` or a parameter vector
proposal.scales          model default                   one scale per parameter
proposal.kinds           model default                   rw, logrw or gamma per parameter
diagnostics.max_lag      50                              ACF lags written to acf.csv
diagnostics.kde_points   512                             grid size of kde.csv
output.dir               out                             output directory
seed                     0                               root seed
=======================  ==============================  ==================================
"""
from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .mcmc import DEFAULT_CAP, default_N
from .models import MODELS, PROPOSAL_KINDS, Model, ObservationSeries, Proposal

MCMC_ALGORITHMS = ("marginal", "naive", "ntrials", "nhit", "collapsed")
FILTER_ALGORITHMS = ("smc", "alive")
PMMH_ALGORITHMS = ("pmmh-standard", "pmmh-alive", "collapsed-pmmh")
ALGORITHMS = MCMC_ALGORITHMS + FILTER_ALGORITHMS + PMMH_ALGORITHMS
HMM_ONLY = FILTER_ALGORITHMS + PMMH_ALGORITHMS


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class DataError(ValueError):
    """Malformed observation file."""


@dataclass(frozen=True)
class ExperimentConfig:
    model_id: str
    eps: float
    algorithm: str
    model_options: dict = field(default_factory=dict)
    theta: tuple | None = None
    data_csv: str | None = None
    data_n: int = 100
    noisy: bool = False
    N: int | None = None
    iterations: int = 10000
    cap: int = DEFAULT_CAP
    early_reject: bool = False
    noise_step: float = 0.5
    resampling: str = "multinomial"
    filter_kind: str = "standard"
    init: str | tuple = "prior"
    proposal_scales: tuple | None = None
    proposal_kinds: tuple | None = None
    max_lag: int = 50
    kde_points: int = 512
    output_dir: str = "out"
    seed: int = 0

    def make_model(self) -> Model:
        return MODELS[self.model_id](**self.model_options)

    def make_proposal(self, model) -> Proposal:
        if self.proposal_scales is None:
            base = model.default_proposal()
            return base if self.proposal_kinds is None else Proposal(base.scales, self.proposal_kinds)
        return Proposal(self.proposal_scales, self.proposal_kinds)

    def resolved_N(self, n):
        if self.N is not None:
            return self.N
        return default_N(n) if self.algorithm in ("ntrials", "nhit") else max(2, n)

    def materialize(self, n) -> "ExperimentConfig":
        """Copy with every default filled in, for echoing into summaries."""
        model = self.make_model()
        prop = self.make_proposal(model)
        opts = dict(model.options)
        opts.update(self.model_options)
        theta = self.theta if self.theta is not None else tuple(float(v) for v in model.default_theta())
        return dataclasses.replace(
            self, model_options=opts, theta=theta, N=self.resolved_N(n),
            proposal_scales=prop.scales, proposal_kinds=prop.kinds,
        )


def _num(text):
    text = text.strip()
    try:
        return float(Fraction(text)) if "/" in text else float(text)
    except (ValueError, ZeroDivisionError):
        raise ValueError(f"expected a number, got {text!r}") from None


def _int(text):
    v = _num(text)
    if v != int(v):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(v)


def _bool(text):
    t = text.strip().lower()
    if t in ("true", "yes", "1"):
        return True
    if t in ("false", "no", "0"):
        return False
    raise ValueError(f"expected true or false, got {text!r}")


def _floats(text):
    return tuple(_num(t) for t in text.split(","))


def _strs(text):
    return tuple(t.strip() for t in text.split(","))


def _init(text):
    return "prior" if text.strip() == "prior" else _floats(text)


# config key -> (field name, parser)
_KEYS = {
    "model.id": ("model_id", str.strip),
    "model.theta": ("theta", _floats),
    "data.csv": ("data_csv", str.strip),
    "data.n": ("data_n", _int),
    "abc.eps": ("eps", _num),
    "abc.noisy": ("noisy", _bool),
    "algorithm.id": ("algorithm", str.strip),
    "algorithm.N": ("N", _int),
    "algorithm.iterations": ("iterations", _int),
    "algorithm.cap": ("cap", _int),
    "algorithm.early_reject": ("early_reject", _bool),
    "algorithm.noise_step": ("noise_step", _num),
    "algorithm.resampling": ("resampling", str.strip),
    "algorithm.filter": ("filter_kind", str.strip),
    "algorithm.init": ("init", _init),
    "proposal.scales": ("proposal_scales", _floats),
    "proposal.kinds": ("proposal_kinds", _strs),
    "diagnostics.max_lag": ("max_lag", _int),
    "diagnostics.kde_points": ("kde_points", _int),
    "output.dir": ("output_dir", str.strip),
    "seed": ("seed", _int),
}
_FIELD_KEY = {f: k for k, (f, _) in _KEYS.items()}


def _read_pairs(text):
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in pairs:
            raise ConfigError(key, f"duplicate key (line {lineno})")
        pairs[key] = value
    return pairs


def parse_config(text, overrides=None) -> ExperimentConfig:
    """Parse and validate a config; ``overrides`` maps keys to replacement strings."""
    pairs = _read_pairs(text)
    pairs.update(overrides or {})
    values, model_opts = {}, {}
    for key, value in pairs.items():
        if key in _KEYS:
            name, conv = _KEYS[key]
            try:
                values[name] = conv(value)
            except ValueError as exc:
                raise ConfigError(key, str(exc)) from None
        elif key.startswith("model.") and key.count(".") == 1:
            model_opts[key[6:]] = value
        else:
            raise ConfigError(key, "unknown key")
    for key in ("model.id", "abc.eps", "algorithm.id"):
        if _KEYS[key][0] not in values:
            raise ConfigError(key, "required key missing")
    model_id = values["model_id"]
    if model_id not in MODELS:
        raise ConfigError("model.id", f"unknown model {model_id!r}; choose from {sorted(MODELS)}")
    cls = MODELS[model_id]
    for opt, value in model_opts.items():
        key = f"model.{opt}"
        if opt not in cls.options:
            raise ConfigError(key, f"unknown option for {model_id}; choose from {sorted(cls.options)}")
        try:
            model_opts[opt] = _bool(value) if isinstance(cls.options[opt], bool) else _num(value)
        except ValueError as exc:
            raise ConfigError(key, str(exc)) from None
    cfg = ExperimentConfig(model_options=model_opts, **values)
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig):
    def fail(name, message):
        raise ConfigError(_FIELD_KEY.get(name, name), message)

    if not (np.isfinite(cfg.eps) and cfg.eps > 0):
        fail("eps", f"must be positive, got {cfg.eps}")
    if cfg.algorithm not in ALGORITHMS:
        fail("algorithm", f"unknown algorithm {cfg.algorithm!r}; choose from {list(ALGORITHMS)}")
    for name, low in (("iterations", 1), ("data_n", 1), ("cap", 1), ("max_lag", 1), ("kde_points", 2)):
        if getattr(cfg, name) < low:
            fail(name, f"must be >= {low}")
    if cfg.N is not None and cfg.N < (2 if cfg.algorithm in ("nhit", "alive", "pmmh-alive") else 1):
        fail("N", f"too small for {cfg.algorithm}")
    if cfg.resampling not in ("multinomial", "systematic"):
        fail("resampling", "must be multinomial or systematic")
    if cfg.filter_kind not in ("standard", "alive"):
        fail("filter_kind", "must be standard or alive")
    if not cfg.noise_step > 0:
        fail("noise_step", "must be positive")
    if cfg.seed < 0:
        fail("seed", "must be non-negative")
    try:
        model = cfg.make_model()
    except (ValueError, TypeError) as exc:
        raise ConfigError("model.id", f"cannot build {cfg.model_id}: {exc}") from None
    d = model.d_theta
    if cfg.theta is not None and len(cfg.theta) != d:
        fail("theta", f"expected {d} values")
    if cfg.theta is not None and not model.in_support(cfg.theta):
        fail("theta", f"outside the support of {cfg.model_id}")
    if not isinstance(cfg.init, str) and len(cfg.init) != d:
        fail("init", f"expected 'prior' or {d} values")
    for name in ("proposal_scales", "proposal_kinds"):
        v = getattr(cfg, name)
        if v is not None and len(v) != d:
            fail(name, f"expected {d} values")
    if cfg.proposal_kinds is not None and any(k not in PROPOSAL_KINDS for k in cfg.proposal_kinds):
        fail("proposal_kinds", f"kinds must be among {PROPOSAL_KINDS}")
    if cfg.proposal_scales is not None and any(s < 0 for s in cfg.proposal_scales):
        fail("proposal_scales", "scales must be non-negative")
    hmm = model.kind == "hmm"
    if cfg.algorithm in HMM_ONLY and not hmm:
        fail("algorithm", f"{cfg.algorithm} needs a hidden Markov model; {cfg.model_id} is {model.kind}")
    if cfg.algorithm in ("naive", "ntrials", "nhit", "collapsed") and hmm:
        fail("algorithm", f"{cfg.algorithm} needs an i.i.d. or observation-driven model")
    if cfg.algorithm == "marginal" and type(model).abc_loglik is Model.abc_loglik:
        fail("algorithm", f"marginal MH needs a tractable ABC likelihood, which {cfg.model_id} lacks")
    if cfg.algorithm == "collapsed" and not model.has_noise_density:
        fail("algorithm", f"collapsed MH needs an observation-noise density, which {cfg.model_id} lacks")


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)  # shortest string that round-trips
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


def config_items(cfg: ExperimentConfig):
    """``(key, text)`` pairs for every field that is set, in grammar order."""
    items = []
    for key, (name, _) in _KEYS.items():
        v = getattr(cfg, name)
        if v is not None:
            items.append((key, _fmt(v)))
        if key == "model.theta":
            items += [(f"model.{k}", _fmt(v if isinstance(v, bool) else float(v))) for k, v in sorted(cfg.model_options.items())]
    return items


def dump_config(cfg: ExperimentConfig) -> str:
    """Serialize so that ``parse_config(dump_config(c)) == c``."""
    return "".join(f"{k} = {v}\n" for k, v in config_items(cfg))


def config_dict(cfg: ExperimentConfig):
    return dict(config_items(cfg))


def load_config(path, overrides=None) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read(), overrides)


# ---------------------------------------------------------------------------
# data files
# ---------------------------------------------------------------------------


def _is_number(cell):
    try:
        float(cell)
        return True
    except ValueError:
        return False


def load_csv(path) -> ObservationSeries:
    """Read one observation per row; a non-numeric first line is taken as a header."""
    with open(path, newline="") as fh:
        rows = [(i, r) for i, r in enumerate(csv.reader(fh), 1) if r and any(c.strip() for c in r)]
    if rows and not all(_is_number(c) for c in rows[0][1]):
        rows = rows[1:]
    if not rows:
        raise DataError(f"{path}: no data rows")
    width = len(rows[0][1])
    data = np.empty((len(rows), width))
    for k, (lineno, row) in enumerate(rows):
        if len(row) != width:
            raise DataError(f"{path}: line {lineno}: expected {width} columns, got {len(row)}")
        for j, cell in enumerate(row):
            try:
                data[k, j] = float(cell)
            except ValueError:
                raise DataError(f"{path}: line {lineno}: non-numeric value {cell.strip()!r}") from None
            if not np.isfinite(data[k, j]):
                raise DataError(f"{path}: line {lineno}: non-finite value {cell.strip()!r}")
    return ObservationSeries(data)


def write_csv(path, series, header=None):
    data = np.asarray(getattr(series, "data", series), dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header or [f"y{j + 1}" for j in range(data.shape[1])])
        for row in data:
            w.writerow([format(v, ".17g") for v in row])
