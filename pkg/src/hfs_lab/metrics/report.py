"""Full evaluation of a representation against a factor world."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from hfs_lab.hfs import hfs_metric
from hfs_lab.metrics.probes import fit_probe
from hfs_lab.metrics.scores import (betavae_score, dci, factorvae_score, mig, modularity, nrmse,
                                    sap)

ALL_METRICS = ("dci", "mig", "modularity", "sap", "hfs", "betavae", "factorvae")
DEFAULT_METRICS = ("dci", "mig", "modularity", "sap", "hfs")


@dataclass
class EvalConfig:
    metrics: tuple = DEFAULT_METRICS
    n_train: int = 10000
    n_test: int = 5000
    probe: str = "tree-ensemble"
    probe_params: dict = field(default_factory=dict)
    mig_bins: int = 20
    mig_samples: int = 10000
    hfs_batch_size: int = 64
    hfs_batches: int = 20
    vote_train: int = 10000
    vote_test: int = 5000
    vote_batch_size: int = 64

    def __post_init__(self):
        self.metrics = tuple(self.metrics)
        unknown = set(self.metrics) - set(ALL_METRICS)
        if unknown:
            from hfs_lab.exceptions import ConfigurationError
            raise ConfigurationError(f"unknown metrics {sorted(unknown)}")

    def to_dict(self):
        d = asdict(self)
        d["metrics"] = list(self.metrics)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**(d or {}))


@dataclass
class MetricReport:
    scores: dict
    importance: np.ndarray = None
    mutual_information: np.ndarray = None
    factor_entropies: np.ndarray = None
    factor_errors: np.ndarray = None

    def to_dict(self):
        def arr(x):
            return None if x is None else np.asarray(x).tolist()

        return {"scores": {k: float(v) for k, v in sorted(self.scores.items())},
                "R": arr(self.importance), "m": arr(self.mutual_information),
                "factor_entropies": arr(self.factor_entropies),
                "factor_errors": arr(self.factor_errors)}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        def arr(x):
            return None if x is None else np.asarray(x, dtype=np.float64)

        return cls(dict(d["scores"]), arr(d.get("R")), arr(d.get("m")),
                   arr(d.get("factor_entropies")), arr(d.get("factor_errors")))

    def csv_row(self, **keys):
        row = dict(keys)
        row.update({k: repr(float(v)) for k, v in sorted(self.scores.items())})
        return row


def as_encoder(model):
    """Accept an SaeModel, a fitted transformer, or a plain callable."""
    if hasattr(model, "encode_means"):
        return model.encode_means
    if hasattr(model, "transform"):
        return model.transform
    if callable(model):
        return model
    raise TypeError(f"cannot use {type(model).__name__} as an encoder")


def evaluate_representation(Z_train, factors_train, Z_test, factors_test, spec, config=None):
    """Representation-level metrics (everything except the intervention scores)."""
    config = config or EvalConfig()
    scores = {}
    report = MetricReport(scores)
    if "dci" in config.metrics:
        y_tr, y_te = spec.normalize(factors_train), spec.normalize(factors_test)
        probe = fit_probe(Z_train, y_tr, config.probe, config.probe_params)
        errors = nrmse(y_te, probe.predict(Z_test))
        R = probe.feature_importances_
        report.importance, report.factor_errors = R, errors
        if R.sum() > 0:
            res = dci(R, errors)
            scores.update(dci_d=res.disentanglement, dci_c=res.completeness,
                          dci_i=res.informativeness)
        else:
            scores.update(dci_d=float("nan"), dci_c=float("nan"), dci_i=1.0 - float(np.mean(errors)))
    if "mig" in config.metrics or "modularity" in config.metrics:
        n = min(config.mig_samples, len(Z_train))
        res = mig(Z_train, factors_train, config.mig_bins, n)
        report.mutual_information, report.factor_entropies = res.m, res.entropies
        if "mig" in config.metrics:
            scores["mig"] = res.score
        if "modularity" in config.metrics:
            scores["modularity"] = modularity(res.m)
    if "sap" in config.metrics:
        scores["sap"] = sap(Z_test, spec.normalize(factors_test))[0]
    return report


def evaluate_all(model, world, corr_eval, config=None, seed=0):
    """Sample an evaluation set under ``corr_eval``, encode it and compute every enabled metric."""
    config = config or EvalConfig()
    encoder = as_encoder(model)
    ss = np.random.SeedSequence(seed)
    s_train, s_test, s_votes = (int(s) for s in ss.generate_state(3))
    train = world.sample(corr_eval, config.n_train, s_train)
    test = world.sample(corr_eval, config.n_test, s_test)
    Z_train = np.asarray(encoder(train.observations), dtype=np.float64)
    Z_test = np.asarray(encoder(test.observations), dtype=np.float64)
    report = evaluate_representation(Z_train, train.factors, Z_test, test.factors, world.spec, config)
    if "hfs" in config.metrics and Z_train.shape[1] >= 2:
        report.scores["hfs"] = hfs_metric(Z_train, config.hfs_batch_size, config.hfs_batches, seed)
    if "betavae" in config.metrics:
        report.scores["betavae"] = betavae_score(world, corr_eval, encoder, config.vote_train,
                                                 config.vote_test, config.vote_batch_size, s_votes)
    if "factorvae" in config.metrics:
        report.scores["factorvae"] = factorvae_score(world, corr_eval, encoder, config.vote_train,
                                                     config.vote_test, config.vote_batch_size,
                                                     s_votes + 1)
    return report
