"""Synthetic ground-truth factor worlds with controllable correlations.

Factors live on a finite grid. Correlations between factor pairs follow a
Gaussian kernel on normalized factor values,
``w(z) = prod_pairs exp(-(z_i - f(z_j))**2 / (2 sigma**2))`` with ``f(z) = z``
or ``1 - z`` for inverted pairs. The grid is small enough to enumerate, so
sampling is exact categorical sampling from the normalized joint.

Observations come from a fixed random MLP applied to the normalized factors.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from hfs_lab.exceptions import ConfigurationError, GridTooLargeError

DEFAULT_GRID_LIMIT = 10_000_000


@dataclass(frozen=True)
class FactorSpec:
    cardinalities: tuple
    names: tuple = None

    def __post_init__(self):
        cards = tuple(int(c) for c in self.cardinalities)
        object.__setattr__(self, "cardinalities", cards)
        if len(cards) < 2:
            raise ConfigurationError("need at least 2 factors")
        if any(c < 2 for c in cards):
            raise ConfigurationError(f"every factor needs >= 2 values, got {cards}")
        names = self.names or tuple(f"factor{i}" for i in range(len(cards)))
        if len(names) != len(cards):
            raise ConfigurationError("names and cardinalities differ in length")
        object.__setattr__(self, "names", tuple(names))

    @property
    def k(self):
        return len(self.cardinalities)

    @property
    def grid_size(self):
        return int(np.prod(self.cardinalities, dtype=np.int64))

    def normalize(self, factors):
        factors = np.asarray(factors)
        return factors / (np.asarray(self.cardinalities, dtype=np.float64) - 1.0)

    def grid(self):
        """All factor tuples in row-major order, shape (grid_size, k)."""
        idx = np.indices(self.cardinalities).reshape(self.k, -1).T
        return idx.astype(np.int64)

    def to_dict(self):
        return {"cardinalities": list(self.cardinalities), "names": list(self.names)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["cardinalities"]), tuple(d.get("names") or ()) or None)


@dataclass(frozen=True)
class CorrelatedPair:
    i: int
    j: int
    sigma: float
    inverted: bool = False


@dataclass(frozen=True)
class CorrelationSpec:
    """Correlated factor pairs, or one shared confounder correlated with all others."""

    pairs: tuple = ()
    confounder: int = None
    confounder_sigma: float = None

    def __post_init__(self):
        pairs = tuple(p if isinstance(p, CorrelatedPair) else CorrelatedPair(*p) for p in self.pairs)
        object.__setattr__(self, "pairs", pairs)
        if pairs and self.confounder is not None:
            raise ConfigurationError("pairs and confounder are mutually exclusive")
        for p in pairs:
            if p.i == p.j:
                raise ConfigurationError(f"pair ({p.i}, {p.j}) correlates a factor with itself")
            if not p.sigma > 0:
                raise ConfigurationError(f"sigma must be > 0, got {p.sigma}")
        if self.confounder is not None and not (self.confounder_sigma or 0) > 0:
            raise ConfigurationError("confounder needs a positive sigma")

    @classmethod
    def none(cls):
        return cls()

    @property
    def is_uncorrelated(self):
        return not self.pairs and self.confounder is None

    def expanded_pairs(self, k):
        """Pairs with the confounder expanded to (c, j) for every j != c."""
        if self.confounder is not None:
            c = self.confounder
            return tuple(CorrelatedPair(c, j, self.confounder_sigma) for j in range(k) if j != c)
        return self.pairs

    def validate(self, spec):
        idx = [v for p in self.pairs for v in (p.i, p.j)]
        if self.confounder is not None:
            idx.append(self.confounder)
        if any(v < 0 or v >= spec.k for v in idx):
            raise ConfigurationError(f"factor index out of range for k={spec.k}: {idx}")

    def to_dict(self):
        return {"pairs": [asdict(p) for p in self.pairs], "confounder": self.confounder,
                "confounder_sigma": self.confounder_sigma}

    @classmethod
    def from_dict(cls, d):
        if d is None:
            return cls()
        return cls(tuple(CorrelatedPair(**p) for p in d.get("pairs", ())),
                   d.get("confounder"), d.get("confounder_sigma"))


# Correlation presets for the default 5-factor world. With five factors at most
# two disjoint pairs exist, so there is no three-pair preset.
PRESETS = {
    "no_corr": lambda s: CorrelationSpec(),
    "pair1_v1": lambda s: CorrelationSpec(((0, 1, s),)),
    "pair1_v2": lambda s: CorrelationSpec(((2, 3, s),)),
    "pair1_v3": lambda s: CorrelationSpec(((0, 4, s),)),
    "pair1_inv_v1": lambda s: CorrelationSpec(((0, 1, s, True),)),
    "pairs2_v1": lambda s: CorrelationSpec(((0, 1, s), (2, 3, s))),
    "pairs2_v2": lambda s: CorrelationSpec(((0, 2, s), (1, 3, s))),
    "conf_v1": lambda s: CorrelationSpec(confounder=0, confounder_sigma=s),
    "conf_v2": lambda s: CorrelationSpec(confounder=4, confounder_sigma=s),
}


def preset(name, sigma=0.1):
    try:
        return PRESETS[name](float(sigma))
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def joint_log_weight(spec, corr, factors):
    """Log of the unnormalized joint weight for each row of ``factors``."""
    z = spec.normalize(np.atleast_2d(factors))
    logw = np.zeros(z.shape[0])
    for p in corr.expanded_pairs(spec.k):
        target = 1.0 - z[:, p.j] if p.inverted else z[:, p.j]
        logw -= (z[:, p.i] - target) ** 2 / (2.0 * p.sigma ** 2)
    return logw


def joint_weight(spec, corr, factor_tuple):
    """Unnormalized joint weight of a single factor tuple."""
    corr.validate(spec)
    t = np.asarray(factor_tuple)
    if t.shape != (spec.k,) or np.any(t < 0) or np.any(t >= np.asarray(spec.cardinalities)):
        raise ConfigurationError(f"factor tuple {factor_tuple} outside the grid")
    return float(np.exp(joint_log_weight(spec, corr, t[None])[0]))


def joint_probabilities(spec, corr, grid_limit=DEFAULT_GRID_LIMIT):
    """Normalized joint over ``spec.grid()`` (row-major)."""
    if spec.grid_size > grid_limit:
        raise GridTooLargeError(
            f"factor grid has {spec.grid_size} tuples, above the enumeration limit {grid_limit}")
    corr.validate(spec)
    logw = joint_log_weight(spec, corr, spec.grid())
    w = np.exp(logw - logw.max())
    return w / w.sum()


def sample_factors(spec, corr, n, seed, grid_limit=DEFAULT_GRID_LIMIT):
    """Draw ``n`` i.i.d. factor tuples from the normalized joint."""
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    rng = np.random.default_rng(seed)
    if corr.is_uncorrelated:
        if spec.grid_size > grid_limit:
            raise GridTooLargeError(
                f"factor grid has {spec.grid_size} tuples, above the enumeration limit {grid_limit}")
        cols = [rng.integers(0, c, size=n) for c in spec.cardinalities]
        return np.stack(cols, axis=1).astype(np.int64)
    probs = joint_probabilities(spec, corr, grid_limit)
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    flat = np.searchsorted(cdf, rng.random(n), side="right")
    return np.stack(np.unravel_index(flat, spec.cardinalities), axis=1).astype(np.int64)


@dataclass
class FactorDataset:
    factors: np.ndarray
    observations: np.ndarray
    spec: FactorSpec
    correlation: CorrelationSpec = field(default_factory=CorrelationSpec)
    seed: int = 0

    def __post_init__(self):
        if len(self.factors) != len(self.observations):
            raise ConfigurationError("factors and observations are not row aligned")

    def __len__(self):
        return len(self.factors)

    @property
    def normalized_factors(self):
        return self.spec.normalize(self.factors)

    def save(self, path):
        """Write ``<path>.json`` sidecar and ``<path>.bin`` (int32 factors, then float64 obs)."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        f = np.ascontiguousarray(self.factors, dtype="<i4")
        x = np.ascontiguousarray(self.observations, dtype="<f8")
        path.with_suffix(".bin").write_bytes(f.tobytes() + x.tobytes())
        meta = {
            "spec": self.spec.to_dict(),
            "correlation": self.correlation.to_dict(),
            "seed": self.seed,
            "n": int(f.shape[0]),
            "k": int(f.shape[1]),
            "observation_dim": int(x.shape[1]),
            "blocks": [
                {"name": "factors", "dtype": "<i4", "offset": 0, "shape": list(f.shape)},
                {"name": "observations", "dtype": "<f8", "offset": f.nbytes, "shape": list(x.shape)},
            ],
        }
        path.with_suffix(".json").write_text(json.dumps(meta, indent=1, sort_keys=True))

    @classmethod
    def load(cls, path):
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        raw = path.with_suffix(".bin").read_bytes()
        arrays = {}
        for block in meta["blocks"]:
            n = int(np.prod(block["shape"]))
            arrays[block["name"]] = np.frombuffer(
                raw, dtype=block["dtype"], count=n, offset=block["offset"]).reshape(block["shape"])
        return cls(arrays["factors"].astype(np.int64), arrays["observations"].astype(np.float64),
                   FactorSpec.from_dict(meta["spec"]), CorrelationSpec.from_dict(meta["correlation"]),
                   meta["seed"])


class FactorWorld:
    """Factor grid plus a fixed, never-trained random MLP renderer.

    Parameters
    ----------
    spec : FactorSpec
    mixing_seed : int
        Seed for the renderer weights.
    observation_dim : int
        Must be at least ``spec.k``.
    mixing_depth : int
        Number of tanh hidden layers. With ``identity=True`` and depth 0
        observations are the normalized factors padded with zeros.
    noise_scale : float
        Std of additive Gaussian observation noise.
    """

    def __init__(self, spec, mixing_seed=0, observation_dim=32, mixing_depth=2,
                 noise_scale=0.01, identity=False, hidden_dim=None):
        if observation_dim < spec.k:
            raise ConfigurationError("observation_dim must be >= number of factors")
        if noise_scale < 0:
            raise ConfigurationError("noise_scale must be >= 0")
        if identity and mixing_depth != 0:
            raise ConfigurationError("identity rendering requires mixing_depth 0")
        self.spec = spec
        self.mixing_seed = mixing_seed
        self.observation_dim = observation_dim
        self.mixing_depth = mixing_depth
        self.noise_scale = float(noise_scale)
        self.identity = identity
        self.hidden_dim = hidden_dim or observation_dim
        rng = np.random.default_rng(mixing_seed)
        self._layers = []
        width = spec.k
        for _ in range(mixing_depth):
            w = rng.normal(size=(width, self.hidden_dim)) * (2.0 / np.sqrt(width))
            b = rng.uniform(-1.0, 1.0, size=self.hidden_dim)
            self._layers.append((w, b))
            width = self.hidden_dim
        if identity:
            self._out = None
            self._shift = np.zeros(observation_dim)
            self._scale = np.ones(observation_dim)
        else:
            self._out = rng.normal(size=(width, observation_dim)) / np.sqrt(width)
            # fixed standardization so observations have unit scale per dimension
            ref = spec.grid() if spec.grid_size <= 200_000 else sample_factors(
                spec, CorrelationSpec(), 200_000, mixing_seed)
            raw = self._mix(spec.normalize(ref))
            self._shift = raw.mean(axis=0)
            self._scale = raw.std(axis=0) + 1e-12

    def _mix(self, z):
        h = z
        for w, b in self._layers:
            h = np.tanh(h @ w + b)
        if self._out is None:
            out = np.zeros((h.shape[0], self.observation_dim))
            out[:, :h.shape[1]] = h
            return out
        return h @ self._out

    def render(self, factors, noise_seed=None):
        factors = np.atleast_2d(np.asarray(factors))
        if np.any(factors < 0) or np.any(factors >= np.asarray(self.spec.cardinalities)):
            raise ConfigurationError("factors outside the grid")
        x = (self._mix(self.spec.normalize(factors)) - self._shift) / self._scale
        if self.noise_scale > 0:
            x = x + np.random.default_rng(noise_seed).normal(scale=self.noise_scale, size=x.shape)
        return x

    def sample(self, corr, n, seed):
        ss = np.random.SeedSequence(seed)
        fseed, nseed = ss.spawn(2)
        factors = sample_factors(self.spec, corr, n, fseed)
        return FactorDataset(factors, self.render(factors, nseed), self.spec, corr, int(seed))

    def to_dict(self):
        return {"spec": self.spec.to_dict(), "mixing_seed": self.mixing_seed,
                "observation_dim": self.observation_dim, "mixing_depth": self.mixing_depth,
                "noise_scale": self.noise_scale, "identity": self.identity,
                "hidden_dim": self.hidden_dim}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        spec = FactorSpec.from_dict(d.pop("spec"))
        return cls(spec, **d)


def default_world(mixing_seed=0, **overrides):
    """Five factors on an 8x8x8x8x4 grid, 32-dim observations."""
    spec = FactorSpec((8, 8, 8, 8, 4), ("f0", "f1", "f2", "f3", "f4"))
    kw = dict(observation_dim=32, mixing_depth=2, noise_scale=0.01)
    kw.update(overrides)
    return FactorWorld(spec, mixing_seed=mixing_seed, **kw)


def make_splits(world, corr_train, corr_test, n_train, n_test, seed):
    """Independent train/test datasets drawn from the same world."""
    s_train, s_test = np.random.SeedSequence(seed).generate_state(2)
    return (world.sample(corr_train, n_train, int(s_train)),
            world.sample(corr_test, n_test, int(s_test)))
