"""Hyperparameter sweeps, seed aggregation and correlation-shift transfer grids."""
from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from hfs_lab.exceptions import ConfigurationError
from hfs_lab.harness.config import AXIS_KEYS, SETTING_COLUMNS, GridConfig, parse_correlation
from hfs_lab.harness.train import train_or_resume

WORKERS_ENV = "HFS_LAB_WORKERS"
AGGREGATE_COLUMNS = SETTING_COLUMNS + ("seed-count", "metric", "median", "p25", "p75")


def resolve_workers(requested=None):
    """``HFS_LAB_WORKERS`` wins over ``requested``; the default is 1."""
    env = os.environ.get(WORKERS_ENV)
    value = env if env not in (None, "") else requested
    workers = int(value) if value is not None else 1
    if workers < 1:
        raise ConfigurationError("worker count must be >= 1")
    return workers


def run_all(configs, workers=1):
    """Train (or resume) every config; results keep the input order."""
    if workers == 1 or len(configs) <= 1:
        return [train_or_resume(c) for c in configs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(train_or_resume, configs))


def median_iqr(values):
    """(median, 25th percentile, 75th percentile) with linear interpolation."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return float("nan"), float("nan"), float("nan")
    p25, med, p75 = np.percentile(v, [25, 50, 75])
    return float(med), float(p25), float(p75)


def setting_of(config, extra_axes=()):
    h = config.hfs_config()
    base = {"preset": config.preset, "variant": h.variant, "gamma": h.gamma,
            "beta": config.beta, "sigma": config.sigma}
    d = config.to_dict()
    for axis in extra_axes:
        head, _, tail = AXIS_KEYS.get(axis, axis).partition(".")
        base[axis] = d[head][tail] if tail else d[head]
    return base


def metric_names(grid):
    labels = grid.base.eval_correlations
    names = []
    for metric in grid.aggregate_metrics:
        if metric == "train_hfs":
            names.append(metric)
        else:
            names.extend(f"{metric}@{label}" for label in labels)
    return names


def aggregate(grid, configs, records):
    """One row per (setting, metric) over the seeds of that setting."""
    extra = sorted(a for a, v in grid.axes.items() if v and a not in SETTING_COLUMNS + ("seed",))
    groups = {}
    for config, record in zip(configs, records):
        setting = setting_of(config, extra)
        key = json.dumps(setting, sort_keys=True)
        groups.setdefault(key, (setting, []))[1].append(record)
    rows = []
    for setting, recs in groups.values():
        alive = [r for r in recs if r.status == "complete"]
        for metric in metric_names(grid):
            values = [r.scores().get(metric, float("nan")) for r in alive]
            values = [v for v in values if np.isfinite(v)]
            med, p25, p75 = median_iqr(values)
            row = dict(setting)
            row.update({"seed-count": len(values), "metric": metric, "median": med,
                        "p25": p25, "p75": p75})
            rows.append(row)
    return rows, extra


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_csv(path, rows, columns):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in columns])
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(buf.getvalue())


def sweep(grid: GridConfig, workers=None, out=None):
    """Run every grid cell and write ``aggregate.csv``; returns (records, rows)."""
    configs = grid.expand()
    records = run_all(configs, resolve_workers(workers))
    rows, extra = aggregate(grid, configs, records)
    out = Path(out or grid.base.output_dir)
    columns = SETTING_COLUMNS + tuple(extra) + AGGREGATE_COLUMNS[len(SETTING_COLUMNS):]
    write_csv(out / "aggregate.csv", rows, columns)
    return records, rows


# ------------------------------------------------------------------ transfer grid

def transfer_configs(grid: GridConfig):
    """(source, arm, config) triples; arms are ``baseline`` (gamma = baseline_gamma) and ``hfs``."""
    spec = grid.transfer or {}
    base = grid.base
    sources = list(spec.get("sources") or [base.preset])
    targets = list(spec.get("targets") or sources)
    seeds = list(grid.axes.get("seed") or [base.seed])
    arms = (("baseline", float(spec.get("baseline_gamma", 0.0))),
            ("hfs", float(spec.get("gamma", base.hfs_config().gamma))))
    if arms[1][1] == arms[0][1]:
        raise ConfigurationError("the hfs arm needs a gamma different from the baseline")
    out = []
    for source in sources:
        name, sigma, _ = parse_correlation(source, base.sigma)
        for arm, gamma in arms:
            for seed in seeds:
                cfg = base.replace(preset=name, sigma=sigma, eval_correlations=targets,
                                   seed=seed, **{"hfs.gamma": gamma})
                out.append((source, arm, cfg))
    return sources, targets, out


def transfer_grid(grid: GridConfig, workers=None, out=None):
    """Source x target matrices of median scores per arm plus ``hfs - baseline`` differences."""
    spec = grid.transfer or {}
    metrics = list(spec.get("metrics") or ["dci_d", "dci_i"])
    sources, targets, triples = transfer_configs(grid)
    records = run_all([c for _, _, c in triples], resolve_workers(workers))
    cells = {}
    for (source, arm, _), record in zip(triples, records):
        if record.status == "complete":
            cells.setdefault((arm, source), []).append(record.scores())
    result = {"sources": sources, "targets": targets, "metrics": metrics,
              "baseline": {}, "hfs": {}, "difference": {}}
    for metric in metrics:
        for arm in ("baseline", "hfs"):
            mat = np.full((len(sources), len(targets)), np.nan)
            for a, source in enumerate(sources):
                for b, target in enumerate(targets):
                    vals = [s.get(f"{metric}@{target}", np.nan) for s in cells.get((arm, source), [])]
                    vals = [v for v in vals if np.isfinite(v)]
                    mat[a, b] = median_iqr(vals)[0]
            result[arm][metric] = mat
        result["difference"][metric] = result["hfs"][metric] - result["baseline"][metric]
    out = Path(out or grid.base.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for kind in ("baseline", "hfs", "difference"):
        for metric, mat in result[kind].items():
            rows = [dict(source=s, **{t: mat[a, b] for b, t in enumerate(targets)})
                    for a, s in enumerate(sources)]
            write_csv(out / f"transfer_{metric}_{kind}.csv", rows, ["source"] + targets)
    serial = {k: ({m: v.tolist() for m, v in val.items()} if isinstance(val, dict) else val)
              for k, val in result.items()}
    (out / "transfer.json").write_text(json.dumps(serial, sort_keys=True, indent=1))
    return result, records
