"""gaplab: train grids of small convnets, compute complexity measures on
them, and evaluate how well each measure predicts the generalization gap."""

__version__ = "0.1.0"

from .data import Dataset, load_cifar10_binary, synth_dataset
from .evalstats import GridView, conditional_mi, granulated_kendall, k_min_cmi, kendall_tau
from .manifest import ExperimentManifest, load_manifest, parse_manifest
from .measures import CATALOG, MeasureConfig, MeasureVector, compute_all
from .network import AXES, HyperConfig, Network, build_nin, fuse_batchnorm, param_scatter, param_vecc
from .report import EvalReport, build_report
from .runner import evaluate_results, render_report, run_grid
from .train import ModelRecord, TrainSettings, TrainingTrace, train_model

__all__ = [
    "AXES",
    "CATALOG",
    "Dataset",
    "EvalReport",
    "ExperimentManifest",
    "GridView",
    "HyperConfig",
    "MeasureConfig",
    "MeasureVector",
    "ModelRecord",
    "Network",
    "TrainSettings",
    "TrainingTrace",
    "build_nin",
    "build_report",
    "compute_all",
    "conditional_mi",
    "evaluate_results",
    "fuse_batchnorm",
    "granulated_kendall",
    "k_min_cmi",
    "kendall_tau",
    "load_cifar10_binary",
    "load_manifest",
    "param_scatter",
    "param_vecc",
    "parse_manifest",
    "render_report",
    "run_grid",
    "synth_dataset",
    "train_model",
]
