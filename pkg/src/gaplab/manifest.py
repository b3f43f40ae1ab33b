"""Experiment manifests: one INI file drives a whole grid run.

Sections: ``[experiment]`` (seed, output dir, parallelism),
``[dataset]`` (source and shape), ``[axes]`` (the hyperparameter value
sets whose Cartesian product is the grid), ``[training]`` (stopping
criterion and schedule), ``[measures]`` (measure and search parameters)
and ``[evaluation]`` (baseline settings). Unknown keys are rejected so
typos cannot silently change an experiment. The manifest file's bytes are
hashed for provenance; resuming against a different manifest refuses.
"""

from __future__ import annotations

import configparser
import hashlib
import itertools
import os
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, load_cifar10_binary, synth_dataset
from .measures import MeasureConfig
from .network import AXES, OPTIMIZERS, HyperConfig
from .train import TrainSettings

_KNOWN_KEYS = {
    "experiment": {"name", "master_seed", "output_dir", "parallelism"},
    "dataset": {
        "source",
        "path",
        "train_size",
        "test_size",
        "downsample",
        "num_classes",
        "per_class",
        "test_per_class",
        "image_size",
        "separation",
        "noise",
        "label_noise",
        "data_seed",
    },
    "axes": set(AXES),
    "training": {
        "threshold",
        "max_steps",
        "eval_every",
        "eval_batches",
        "lr_milestones",
        "lr_decay",
        "grad_noise_samples",
        "lr_scale_momentum_sgd",
        "lr_scale_adam",
        "lr_scale_rmsprop",
    },
    "measures": set(MeasureConfig.__dataclass_fields__),
    "evaluation": {"oracle_epsilons", "baseline_seeds"},
}


class ManifestError(ValueError):
    pass


def _floats(text: str) -> list[float]:
    return [float(tok) for tok in text.replace(",", " ").split()]


def _ints(text: str) -> list[int]:
    return [int(tok) for tok in text.replace(",", " ").split()]


@dataclass
class ExperimentManifest:
    name: str
    master_seed: int
    output_dir: str
    parallelism: int
    dataset: dict
    axes: dict
    training: TrainSettings
    measures: MeasureConfig
    oracle_epsilons: tuple[float, ...]
    baseline_seeds: int
    manifest_hash: str
    source_text: str = field(repr=False, default="")

    def grid(self) -> list[HyperConfig]:
        """Cartesian product of the axis sets, fixed enumeration order."""
        combos = itertools.product(*(self.axes[a] for a in AXES))
        return [HyperConfig(**dict(zip(AXES, c))) for c in combos]

    def grid_size(self) -> int:
        return int(np.prod([len(self.axes[a]) for a in AXES]))

    def build_dataset(self) -> Dataset:
        d = self.dataset
        if d["source"] == "synthetic":
            return synth_dataset(
                num_classes=d["num_classes"],
                per_class=d["per_class"],
                image_size=d["image_size"],
                seed=d["data_seed"],
                test_per_class=d["test_per_class"],
                separation=d["separation"],
                noise=d["noise"],
                label_noise=d["label_noise"],
            )
        if d["source"] == "cifar10":
            return load_cifar10_binary(
                d["path"],
                train_size=d["train_size"],
                test_size=d["test_size"],
                downsample=d["downsample"],
                seed=d["data_seed"],
            )
        raise ManifestError(f"unknown dataset source {d['source']!r}")

    def resolved_training(self, train_examples: int) -> TrainSettings:
        """Training settings with decay milestones resolved.

        Empty milestones default to the standard two-decay schedule
        scaled by the training-set size relative to 50k examples.
        """
        t = self.training
        if t.lr_milestones:
            return t
        scale = train_examples / 50000.0
        milestones = (max(1, round(60000 * scale)), max(1, round(90000 * scale)))
        return TrainSettings(
            threshold=t.threshold,
            max_steps=t.max_steps,
            eval_every=t.eval_every,
            eval_batches=t.eval_batches,
            lr_milestones=milestones,
            lr_decay=t.lr_decay,
            grad_noise_samples=t.grad_noise_samples,
            lr_scale=t.lr_scale,
        )


def load_manifest(path: str, output_dir_override: str | None = None) -> ExperimentManifest:
    with open(path, "rb") as fh:
        raw = fh.read()
    return parse_manifest(raw.decode("utf-8"), output_dir_override=output_dir_override)


def parse_manifest(text: str, output_dir_override: str | None = None) -> ExperimentManifest:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.read_string(text)

    for section in parser.sections():
        if section not in _KNOWN_KEYS:
            raise ManifestError(f"unknown manifest section [{section}]")
        unknown = set(parser[section]) - _KNOWN_KEYS[section]
        if unknown:
            raise ManifestError(f"unknown key(s) in [{section}]: {sorted(unknown)}")

    def get(section, key, default, cast):
        if parser.has_option(section, key):
            return cast(parser.get(section, key))
        return default

    exp_name = get("experiment", "name", "experiment", str)
    master_seed = get("experiment", "master_seed", 0, int)
    output_dir = output_dir_override or os.environ.get("GAPLAB_OUTPUT_DIR") or get(
        "experiment", "output_dir", "runs/" + exp_name, str
    )
    parallelism = get("experiment", "parallelism", 0, int)
    if parallelism <= 0:
        parallelism = os.cpu_count() or 1

    dataset = {
        "source": get("dataset", "source", "synthetic", str),
        "path": get("dataset", "path", "", str),
        "train_size": get("dataset", "train_size", None, int),
        "test_size": get("dataset", "test_size", None, int),
        "downsample": get("dataset", "downsample", 1, int),
        "num_classes": get("dataset", "num_classes", 10, int),
        "per_class": get("dataset", "per_class", 64, int),
        "test_per_class": get("dataset", "test_per_class", 100, int),
        "image_size": get("dataset", "image_size", 16, int),
        "separation": get("dataset", "separation", 0.12, float),
        "noise": get("dataset", "noise", 0.22, float),
        "label_noise": get("dataset", "label_noise", 0.0, float),
        "data_seed": get("dataset", "data_seed", 0, int),
    }
    if dataset["source"] not in ("synthetic", "cifar10"):
        raise ManifestError(f"unknown dataset source {dataset['source']!r}")

    if not parser.has_section("axes"):
        raise ManifestError("manifest is missing the [axes] section")
    axes: dict[str, tuple] = {}
    defaults = {
        "batch_size": (32,),
        "dropout": (0.0,),
        "learning_rate": (0.1,),
        "depth": (2,),
        "optimizer": ("momentum-sgd",),
        "weight_decay": (0.0,),
        "width": (8,),
    }
    for axis in AXES:
        if parser.has_option("axes", axis):
            text_val = parser.get("axes", axis)
            if axis == "optimizer":
                values = tuple(tok.strip() for tok in text_val.split(",") if tok.strip())
                for v in values:
                    if v not in OPTIMIZERS:
                        raise ManifestError(f"unknown optimizer {v!r}")
            elif axis in ("batch_size", "depth", "width"):
                values = tuple(_ints(text_val))
            else:
                values = tuple(_floats(text_val))
            if not values:
                raise ManifestError(f"axis {axis} is empty")
            axes[axis] = values
        else:
            axes[axis] = defaults[axis]

    lr_scale = {
        "momentum-sgd": get("training", "lr_scale_momentum_sgd", 1.0, float),
        "adam": get("training", "lr_scale_adam", 0.01, float),
        "rmsprop": get("training", "lr_scale_rmsprop", 0.01, float),
    }
    training = TrainSettings(
        threshold=get("training", "threshold", 0.1, float),
        max_steps=get("training", "max_steps", 3000, int),
        eval_every=get("training", "eval_every", 50, int),
        eval_batches=get("training", "eval_batches", 20, int),
        lr_milestones=tuple(get("training", "lr_milestones", [], _ints)),
        lr_decay=get("training", "lr_decay", 0.1, float),
        grad_noise_samples=get("training", "grad_noise_samples", 256, int),
        lr_scale=lr_scale,
    )

    measure_kwargs = {}
    if parser.has_section("measures"):
        reference = MeasureConfig()
        for key in parser["measures"]:
            cast = type(getattr(reference, key))  # int, float or str
            measure_kwargs[key] = cast(parser.get("measures", key))
    measures = MeasureConfig(**measure_kwargs)
    if measures.spectral_method not in ("power", "fft"):
        raise ManifestError(f"unknown spectral method {measures.spectral_method!r}")

    oracle_epsilons = tuple(get("evaluation", "oracle_epsilons", [0.0, 0.02, 0.05, 0.1], _floats))
    baseline_seeds = get("evaluation", "baseline_seeds", 20, int)

    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    return ExperimentManifest(
        name=exp_name,
        master_seed=master_seed,
        output_dir=output_dir,
        parallelism=parallelism,
        dataset=dataset,
        axes=axes,
        training=training,
        measures=measures,
        oracle_epsilons=oracle_epsilons,
        baseline_seeds=baseline_seeds,
        manifest_hash=digest,
        source_text=text,
    )
