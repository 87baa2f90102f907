"""Single training runs: fit, trace, evaluate and persist a RunRecord."""
from __future__ import annotations

import csv
import json
import os
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hfs_lab import autodiff as ad
from hfs_lab.estimator import HFSAutoencoder
from hfs_lab.exceptions import NonFiniteError
from hfs_lab.harness.config import RunConfig, digest, parse_correlation
from hfs_lab.hfs import hfs_metric
from hfs_lab.metrics.report import MetricReport, evaluate_all
from hfs_lab.models import SaeModel

TRACE_COLUMNS = ("step", "total", "sae", "kl", "hfs", "scale", "train_hfs")


@dataclass
class RunRecord:
    config_hash: str
    config: dict
    status: str = "complete"
    traces: list = field(default_factory=list)
    reports: dict = field(default_factory=dict)
    wall_time: float = 0.0
    checkpoint: str = None
    failure: str = None

    def content_hash(self):
        """Hash of everything except wall time and filesystem locations."""
        return digest({"config_hash": self.config_hash, "status": self.status,
                       "traces": self.traces, "failure": self.failure,
                       "reports": {k: r.to_dict() for k, r in sorted(self.reports.items())}})

    def final_trace(self):
        return self.traces[-1] if self.traces else {}

    def scores(self):
        """Flat ``metric@eval_label`` mapping plus ``train_hfs`` from the last trace."""
        out = {}
        for label, report in sorted(self.reports.items()):
            for metric, value in report.scores.items():
                out[f"{metric}@{label}"] = float(value)
        if "train_hfs" in self.final_trace():
            out["train_hfs"] = float(self.final_trace()["train_hfs"])
        return out

    def to_dict(self):
        return {"config_hash": self.config_hash, "config": self.config, "status": self.status,
                "traces": self.traces, "wall_time": self.wall_time, "checkpoint": self.checkpoint,
                "failure": self.failure, "content_hash": self.content_hash(),
                "reports": {k: r.to_dict() for k, r in sorted(self.reports.items())}}

    @classmethod
    def from_dict(cls, d):
        return cls(d["config_hash"], d["config"], d["status"], d["traces"],
                   {k: MetricReport.from_dict(v) for k, v in d["reports"].items()},
                   d["wall_time"], d.get("checkpoint"), d.get("failure"))


def _seed(config_seed, tag):
    return int(np.random.SeedSequence([int(config_seed), zlib.crc32(tag.encode())]).generate_state(1)[0])


def build_estimator(config: RunConfig):
    h = config.hfs_config()
    return HFSAutoencoder(
        latent_dim=config.latent_dim, hidden=config.hidden, beta=config.beta, gamma=h.gamma,
        hfs_variant=h.variant, n_pairs=h.pairs, hfs_distance=h.distance, tau=h.tau, tau1=h.tau1,
        tau2=h.tau2, subsample_count=h.subsample_count, resample_pairs=h.resample_pairs,
        scale_reg=h.scale_reg, scale_weight=h.scale_weight,
        min_log_variance=config.min_log_variance, learning_rate=config.learning_rate,
        adam_betas=config.adam_betas, adam_eps=config.adam_eps, batch_size=config.batch_size,
        n_steps=config.steps, log_every=config.eval_every, random_state=_seed(config.seed, "model"))


def training_data(config: RunConfig):
    world = config.world_obj()
    return world, world.sample(config.train_correlation(), config.n_train, _seed(config.seed, "data"))


def run_dir(config: RunConfig):
    return Path(config.output_dir) / config.config_hash()


def train(config: RunConfig, persist=True):
    """Train one model; returns its RunRecord (status ``failed`` on non-finite losses)."""
    start = time.perf_counter()
    world, data = training_data(config)
    X = data.observations
    trace_X = X[:min(config.trace_rows, len(X))]
    est = build_estimator(config)
    traces = []

    def log(step, parts):
        row = {key: float(parts.get(key, 0.0)) for key in TRACE_COLUMNS[1:-1]}
        row["step"] = int(step)
        row["train_hfs"] = float(hfs_metric(est.model_.encode_means(trace_X), config.batch_size,
                                            None, 0)) if config.latent_dim >= 2 else 0.0
        traces.append(row)

    record = RunRecord(config.config_hash(), config.to_dict())
    try:
        est.fit(X, callback=log)
    except NonFiniteError as exc:
        record.status, record.failure = "failed", str(exc)
    record.traces = traces
    if record.status == "complete":
        eval_cfg = config.eval_config()
        for label in config.eval_correlations:
            _, _, corr = parse_correlation(label, config.sigma)
            record.reports[label] = evaluate_all(est, world, corr, eval_cfg,
                                                 _seed(config.seed, "eval:" + label))
    record.wall_time = time.perf_counter() - start
    if persist:
        save_record(record, est.model_, config)
    return record


def save_record(record, model, config):
    out = run_dir(config)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint"
    ad.save_parameters(model.parameters(), ckpt)
    record.checkpoint = ckpt.name
    with open(out / "traces.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in record.traces:
            writer.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k]
                             for k in TRACE_COLUMNS})
    tmp = out / "record.json.tmp"
    tmp.write_text(json.dumps(record.to_dict(), sort_keys=True, indent=1))
    os.replace(tmp, out / "record.json")


def load_record(path):
    path = Path(path)
    if path.is_dir():
        path = path / "record.json"
    return RunRecord.from_dict(json.loads(path.read_text()))


def load_model(path):
    """Rebuild the SaeModel of a persisted run directory (or record.json path)."""
    path = Path(path)
    folder = path if path.is_dir() else path.parent
    record = load_record(path)
    config = RunConfig.from_dict(record.config)
    world = config.world_obj()
    model = SaeModel(world.observation_dim, config.latent_dim, config.hidden,
                     config.min_log_variance, seed=0)
    ad.load_parameters(model.parameters(), folder / record.checkpoint)
    return model


def train_or_resume(config: RunConfig):
    """Reuse ``runs/<hash>/record.json`` when present, otherwise train."""
    existing = run_dir(config) / "record.json"
    if existing.exists():
        return load_record(existing)
    return train(config)
