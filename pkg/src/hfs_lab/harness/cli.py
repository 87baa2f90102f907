"""``hfs-lab`` command line interface."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from hfs_lab import oracle
from hfs_lab.exceptions import HfsLabError
from hfs_lab.factor_world import FactorDataset
from hfs_lab.harness.config import GridConfig, RunConfig, load_json, parse_correlation
from hfs_lab.harness.sweep import sweep, transfer_grid
from hfs_lab.harness.train import load_model, load_record, train_or_resume, training_data
from hfs_lab.hfs import PairSet, hfs_pairwise_value
from hfs_lab.metrics.report import evaluate_all, evaluate_representation


def _run_config(args):
    d = load_json(args.config) if args.config else {}
    if "base" in d:
        d = d["base"]
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    if getattr(args, "preset", None):
        d["preset"] = args.preset
    if getattr(args, "out", None):
        d["output_dir"] = args.out
    return RunConfig.from_dict(d)


def _grid_config(args):
    d = load_json(args.config) if args.config else {}
    d.setdefault("base", {})
    if args.out:
        d["base"]["output_dir"] = args.out
    if args.preset:
        d["base"]["preset"] = args.preset
    if args.seed is not None:
        d["base"]["seed"] = args.seed
    return GridConfig.from_dict(d)


def _emit(obj):
    print(json.dumps(obj, sort_keys=True, indent=1))


def cmd_dataset_gen(args):
    config = _run_config(argparse.Namespace(config=args.config, seed=None, preset=None, out=None))
    name, sigma, corr = parse_correlation(args.preset or config.preset,
                                          args.sigma if args.sigma is not None else config.sigma)
    seed = config.seed if args.seed is None else args.seed
    data = config.world_obj().sample(corr, args.n, seed)
    stem = args.dataset_out or args.out
    data.save(stem)
    _emit({"path": str(Path(stem).with_suffix(".bin")), "n": len(data), "preset": name,
           "sigma": sigma, "seed": seed})


def cmd_train(args):
    config = _run_config(args)
    if args.dataset_out:
        training_data(config)[1].save(args.dataset_out)
    record = train_or_resume(config)
    _emit({"config_hash": record.config_hash, "status": record.status,
           "content_hash": record.content_hash(), "scores": record.scores()})
    return 0 if record.status == "complete" else 3


def cmd_sweep(args):
    grid = _grid_config(args)
    records, rows = sweep(grid, args.workers, args.out)
    out = Path(args.out or grid.base.output_dir)
    failed = sum(r.status != "complete" for r in records)
    _emit({"runs": len(records), "failed": failed, "aggregate": str(out / "aggregate.csv")})


def cmd_transfer(args):
    grid = _grid_config(args)
    result, records = transfer_grid(grid, args.workers, args.out)
    out = Path(args.out or grid.base.output_dir)
    _emit({"runs": len(records), "sources": result["sources"], "targets": result["targets"],
           "json": str(out / "transfer.json")})


def cmd_eval(args):
    record = load_record(args.run)
    config = RunConfig.from_dict(record.config)
    model = load_model(args.run)
    if args.dataset_in:
        data = FactorDataset.load(args.dataset_in)
        half = len(data) // 2
        Z = model.encode_means(data.observations)
        report = evaluate_representation(Z[:half], data.factors[:half], Z[half:], data.factors[half:],
                                         data.spec, config.eval_config())
    else:
        _, _, corr = parse_correlation(args.preset or "no_corr", config.sigma)
        report = evaluate_all(model, config.world_obj(), corr, config.eval_config(),
                              config.seed if args.seed is None else args.seed)
    if args.out:
        Path(args.out).write_text(report.to_json())
    _emit(report.to_dict()["scores"])


def _load_table(path):
    path = Path(path)
    if path.suffix == ".npy":
        return np.load(path)
    return np.loadtxt(path, delimiter=",", ndmin=2)


def cmd_oracle_hfs(args):
    Z = np.asarray(_load_table(args.table), dtype=np.float64)
    pairs = oracle.all_pairs(Z.shape[1])
    brute = oracle.pairwise(Z, pairs, args.distance)
    fast = hfs_pairwise_value(Z, PairSet(tuple(pairs)), args.distance)
    result = {"rows": int(Z.shape[0]), "dims": int(Z.shape[1]), "oracle": brute, "fast": fast,
              "abs_diff": abs(brute - fast)}
    if args.full:
        result["full_product"] = oracle.full_product(Z, args.distance)
    _emit(result)
    return 0 if result["abs_diff"] <= args.tolerance else 4


def build_parser():
    parser = argparse.ArgumentParser(prog="hfs-lab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help=out_help)
        p.add_argument("--preset", help="correlation preset, optionally name@sigma")
        return p

    dataset = sub.add_parser("dataset", help="dataset utilities")
    dsub = dataset.add_subparsers(dest="dataset_command", required=True)
    gen = common(dsub.add_parser("gen", help="sample and store a dataset"), "output path stem")
    gen.add_argument("--n", type=int, default=10000)
    gen.add_argument("--sigma", type=float)
    gen.add_argument("--dataset-out", help="alias of --out")
    gen.set_defaults(func=cmd_dataset_gen)

    tr = common(sub.add_parser("train", help="train one run"), "runs directory")
    tr.add_argument("--dataset-out", help="also store the training dataset at this stem")
    tr.set_defaults(func=cmd_train)

    for name, func in (("sweep", cmd_sweep), ("transfer-grid", cmd_transfer)):
        p = common(sub.add_parser(name, help=f"{name} over a grid config"), "output directory")
        p.add_argument("--workers", type=int, help=f"parallel runs (HFS_LAB_WORKERS overrides)")
        p.set_defaults(func=func)

    ev = common(sub.add_parser("eval", help="metrics for a stored run"), "report JSON path")
    ev.add_argument("--run", required=True, help="run directory containing record.json")
    ev.add_argument("--dataset-in", help="stored dataset stem (halves become probe train/test)")
    ev.set_defaults(func=cmd_eval)

    orc = sub.add_parser("oracle", help="brute-force cross-checks")
    osub = orc.add_subparsers(dest="oracle_command", required=True)
    oh = osub.add_parser("hfs", help="pairwise HFS of a stored representation table")
    oh.add_argument("--table", required=True, help=".npy or comma separated text file")
    oh.add_argument("--distance", default="squared_euclidean",
                    choices=("squared_euclidean", "euclidean"))
    oh.add_argument("--full", action="store_true", help="also the full product-space distance")
    oh.add_argument("--tolerance", type=float, default=1e-12)
    oh.set_defaults(func=cmd_oracle_hfs)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "dataset" and not (args.out or args.dataset_out):
        parser.error("--out or --dataset-out is required")
    try:
        return args.func(args) or 0
    except (HfsLabError, ValueError, FileNotFoundError) as exc:
        print(f"hfs-lab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
