"""Run and grid configurations with canonical JSON hashing."""
from __future__ import annotations

import copy
import hashlib
import itertools
import json
from dataclasses import dataclass, field, fields

from hfs_lab.exceptions import ConfigurationError
from hfs_lab.factor_world import PRESETS, FactorWorld, default_world, preset
from hfs_lab.hfs import HfsConfig
from hfs_lab.metrics.report import EvalConfig


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def digest(obj, length=16):
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:length]


def parse_correlation(label, default_sigma):
    """``"name"`` or ``"name@sigma"`` -> (name, sigma, CorrelationSpec)."""
    name, _, sigma = str(label).partition("@")
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    s = float(sigma) if sigma else float(default_sigma)
    if not s > 0:
        raise ConfigurationError(f"sigma must be > 0 in {label!r}")
    return name, s, preset(name, s)


def _default_world():
    return default_world().to_dict()


@dataclass
class RunConfig:
    """Everything that determines one training run.

    ``eval_correlations`` holds correlation labels (``name`` or ``name@sigma``);
    a bare name reuses the run's ``sigma``. ``output_dir`` does not enter the hash.
    """

    world: dict = field(default_factory=_default_world)
    preset: str = "pair1_v1"
    sigma: float = 0.1
    eval_correlations: tuple = ("no_corr",)
    n_train: int = 20000
    latent_dim: int = 10
    hidden: tuple = (64, 64)
    min_log_variance: float = -6.0
    hfs: dict = field(default_factory=dict)
    beta: float = 1.0
    learning_rate: float = 1e-3
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    steps: int = 5000
    batch_size: int = 64
    eval_every: int = 500
    trace_rows: int = 2048
    seed: int = 0
    eval: dict = field(default_factory=dict)
    output_dir: str = "runs"

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        self.adam_betas = tuple(self.adam_betas)
        self.eval_correlations = tuple(self.eval_correlations)
        self.validate()

    def validate(self):
        if self.steps < 1:
            raise ConfigurationError("steps must be >= 1")
        if self.batch_size < 2:
            raise ConfigurationError("batch_size must be >= 2")
        if self.eval_every < 1:
            raise ConfigurationError("eval_every must be >= 1")
        if self.n_train < self.batch_size:
            raise ConfigurationError("n_train must be at least batch_size")
        if self.beta < 0:
            raise ConfigurationError("beta must be >= 0")
        spec = self.world_obj().spec
        for label in (self.preset,) + self.eval_correlations:
            parse_correlation(label, self.sigma)[2].validate(spec)
        cfg = self.hfs_config()
        if cfg.gamma > 0:
            cfg.n_pairs_for(self.latent_dim)
        self.eval_config()

    def world_obj(self):
        return FactorWorld.from_dict(self.world)

    def hfs_config(self):
        return HfsConfig.from_dict(self.hfs)

    def eval_config(self):
        return EvalConfig.from_dict(self.eval)

    def train_correlation(self):
        return parse_correlation(self.preset, self.sigma)[2]

    def to_dict(self):
        d = {f.name: copy.deepcopy(getattr(self, f.name)) for f in fields(self)}
        for key in ("hidden", "adam_betas", "eval_correlations"):
            d[key] = list(d[key])
        d["hfs"] = self.hfs_config().to_dict()
        d["eval"] = self.eval_config().to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown run config keys {sorted(unknown)}")
        return cls(**copy.deepcopy(d))

    def config_hash(self):
        d = self.to_dict()
        d.pop("output_dir")
        return digest(d)

    def replace(self, **changes):
        """Copy with top-level fields or dotted ``hfs.<key>`` / ``eval.<key>`` changed."""
        d = self.to_dict()
        for key, value in changes.items():
            head, _, tail = key.partition(".")
            if tail:
                if head not in ("hfs", "eval", "world"):
                    raise ConfigurationError(f"cannot set nested key {key!r}")
                d[head][tail] = value
            else:
                d[key] = value
        return RunConfig.from_dict(d)


# sweep axis aliases
AXIS_KEYS = {"gamma": "hfs.gamma", "variant": "hfs.variant", "beta": "beta", "sigma": "sigma",
             "seed": "seed", "preset": "preset"}
SETTING_COLUMNS = ("preset", "variant", "gamma", "beta", "sigma")


@dataclass
class GridConfig:
    """Cartesian sweep over named axes on top of ``base``.

    ``axes`` maps names (``gamma``, ``beta``, ``sigma``, ``variant``, ``seed``,
    ``preset`` or any dotted RunConfig key) to value lists. An empty or missing
    axis keeps the base value.
    """

    base: RunConfig = field(default_factory=RunConfig)
    axes: dict = field(default_factory=dict)
    aggregate_metrics: tuple = ("dci_d", "dci_i", "mig", "train_hfs")
    max_runs: int = 5000
    transfer: dict = None

    def __post_init__(self):
        if isinstance(self.base, dict):
            self.base = RunConfig.from_dict(self.base)
        self.axes = {k: list(v) for k, v in (self.axes or {}).items()}
        self.aggregate_metrics = tuple(self.aggregate_metrics)
        size = len(self.expand())
        if size > self.max_runs:
            raise ConfigurationError(f"sweep has {size} runs, above the cap of {self.max_runs}")

    def expand(self):
        """Run configs in a deterministic order (axes sorted by name)."""
        names = sorted(k for k, v in self.axes.items() if v)
        if not names:
            return [self.base]
        runs = []
        for combo in itertools.product(*(self.axes[n] for n in names)):
            runs.append(self.base.replace(**{AXIS_KEYS.get(n, n): v for n, v in zip(names, combo)}))
        return runs

    def to_dict(self):
        return {"base": self.base.to_dict(), "axes": self.axes,
                "aggregate_metrics": list(self.aggregate_metrics), "max_runs": self.max_runs,
                "transfer": self.transfer}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        base = d.pop("base", {})
        return cls(base=RunConfig.from_dict(base) if isinstance(base, dict) else base, **d)


def load_json(path):
    with open(path) as fh:
        return json.load(fh)
