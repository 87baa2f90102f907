"""Experiment orchestration: runs, sweeps, transfer grids and the CLI."""
from hfs_lab.harness.config import GridConfig, RunConfig
from hfs_lab.harness.sweep import median_iqr, sweep, transfer_grid
from hfs_lab.harness.train import RunRecord, load_model, load_record, train, train_or_resume

__all__ = ["GridConfig", "RunConfig", "RunRecord", "load_model", "load_record", "median_iqr",
           "sweep", "train", "train_or_resume", "transfer_grid"]
