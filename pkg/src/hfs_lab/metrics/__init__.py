"""Disentanglement metric suite and the probes it relies on."""
from hfs_lab.metrics.information import discretize, entropy, mi_matrix, mutual_information
from hfs_lab.metrics.probes import GradientBoostedTreeProbe, L1LinearProbe, fit_probe
from hfs_lab.metrics.report import EvalConfig, MetricReport, evaluate_all, evaluate_representation
from hfs_lab.metrics.scores import (betavae_score, dci, factorvae_score, mig, mig_from_matrix,
                                    modularity, nrmse, sap)

__all__ = [
    "discretize", "entropy", "mi_matrix", "mutual_information",
    "GradientBoostedTreeProbe", "L1LinearProbe", "fit_probe",
    "EvalConfig", "MetricReport", "evaluate_all", "evaluate_representation",
    "betavae_score", "dci", "factorvae_score", "mig", "mig_from_matrix", "modularity", "nrmse", "sap",
]
