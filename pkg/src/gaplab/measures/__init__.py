"""Complexity-measure catalog.

``compute_all`` evaluates every measure in :data:`CATALOG` on one trained
model record and returns a :class:`MeasureVector` plus diagnostics (the
perturbation-search results and per-group wall clock). Individual measure
failures mark their entries undefined with a reason code instead of
aborting the vector. All measures are computed on the batch-norm-fused
network in eval mode; the whole evaluation is a pure function of
(record, dataset, config, seed).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from ..data import Dataset
from ..network import fuse_batchnorm
from ..rng import make_rng
from ..train import ModelRecord, gradient_noise
from . import basic, flatness

log = logging.getLogger(__name__)

CATALOG = (
    "vc-dim",
    "num-params",
    "cross-entropy",
    "inv-margin-sq",
    "neg-entropy",
    "spec-init",
    "spec-orig",
    "spec-init-main",
    "spec-orig-main",
    "prod-of-spec",
    "prod-of-spec-margin",
    "sum-of-spec",
    "sum-of-spec-margin",
    "fro-over-spec",
    "dist-spec-init",
    "prod-of-fro",
    "prod-of-fro-margin",
    "sum-of-fro",
    "sum-of-fro-margin",
    "frob-distance",
    "param-norm",
    "path-norm",
    "path-norm-margin",
    "fisher-rao",
    "pac-bayes-init",
    "pac-bayes-orig",
    "pac-bayes-flatness",
    "sharpness-init",
    "sharpness-orig",
    "sharpness-flatness",
    "pac-bayes-mag-init",
    "pac-bayes-mag-orig",
    "pac-bayes-mag-flatness",
    "pac-sharpness-mag-init",
    "pac-sharpness-mag-orig",
    "sharpness-mag-flatness",
    "step-to-0.1",
    "step-0.1-to-0.01",
    "grad-noise-epoch1",
    "grad-noise-final",
)

MARGIN_MEASURES = frozenset(
    (
        "inv-margin-sq",
        "spec-init",
        "spec-orig",
        "spec-init-main",
        "spec-orig-main",
        "prod-of-spec-margin",
        "sum-of-spec-margin",
        "prod-of-fro-margin",
        "sum-of-fro-margin",
        "path-norm-margin",
    )
)

FLATNESS_FAMILY = (
    "pac-bayes-init",
    "pac-bayes-orig",
    "pac-bayes-flatness",
    "sharpness-init",
    "sharpness-orig",
    "sharpness-flatness",
    "pac-bayes-mag-init",
    "pac-bayes-mag-orig",
    "pac-bayes-mag-flatness",
    "pac-sharpness-mag-init",
    "pac-sharpness-mag-orig",
    "sharpness-mag-flatness",
)


@dataclass
class MeasureConfig:
    delta: float = 0.01
    epsilon_mag: float = 1e-3
    target_deviation: float = 0.1
    margin_percentile: float = 10.0
    m1: int = 20  # bisection depth
    m2: int = 15  # Monte Carlo perturbations / ascent restarts
    m3: int = 10  # batches per accuracy estimate
    m4: int = 20  # ascent steps
    search_batch: int = 256
    ascent_batch: int = 0  # gradient-step batch; 0 means search_batch
    ascent_lr: float = 1e-3
    sigma_min: float = 1e-5
    sigma_max: float = 2.0
    eps_d: float = 0.01
    eps_sigma: float = 1e-4
    spectral_method: str = "power"  # "power" (true strided operator) or "fft"
    spectral_tol: float = 1e-3
    spectral_iters: int = 200
    grad_noise_samples: int = 256

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MeasureConfig":
        return cls(**{name: d[name] for name in cls.__dataclass_fields__ if name in d})


@dataclass
class MeasureValue:
    value: float
    defined: bool = True
    reason: str | None = None


@dataclass
class MeasureVector:
    entries: dict = field(default_factory=dict)

    def set(self, key: str, value: float) -> None:
        v = float(value)
        if np.isfinite(v):
            self.entries[key] = MeasureValue(v)
        else:
            self.entries[key] = MeasureValue(float("nan"), defined=False, reason="non-finite")

    def set_undefined(self, key: str, reason: str) -> None:
        self.entries[key] = MeasureValue(float("nan"), defined=False, reason=reason)

    def __getitem__(self, key: str) -> MeasureValue:
        return self.entries[key]

    def defined_value(self, key: str) -> float | None:
        mv = self.entries.get(key)
        return mv.value if mv is not None and mv.defined else None

    def complete(self) -> bool:
        return all(key in self.entries for key in CATALOG)


def compute_all(
    record: ModelRecord,
    dataset: Dataset,
    config: MeasureConfig,
    seed: int,
) -> tuple[MeasureVector, dict]:
    """Evaluate the full catalog on one converged, trained record.

    Each measure group owns a child stream keyed on ``seed``, so a group
    invoked on its own reproduces the value the full run produced.
    """
    vec = MeasureVector()
    diagnostics: dict = {"timings": {}, "sigma_searches": None}
    fused = fuse_batchnorm(record.network)
    x, y = dataset.train_x, dataset.train_y
    m = len(x)
    errors: dict[str, str] = {}

    def timed(name, fn):
        t0 = time.perf_counter()
        try:
            fn()
        except Exception as exc:  # a single measure failure must not abort the vector
            log.warning("measure group %s failed: %s", name, exc)
            errors[name] = f"error:{type(exc).__name__}"
        diagnostics["timings"][name] = time.perf_counter() - t0

    stats = basic.margin_stats(fused, x, y, config.margin_percentile)

    def do_output():
        for key, val in basic.output_measures(stats, m).items():
            vec.set(key, val)

    def do_arch():
        arch = basic.vc_measures(fused.conv_specs, fused.input_shape[1], fused.num_classes, config.delta)
        for key, val in arch.items():
            vec.set(key, val)

    def do_norms():
        for key, val in basic.norm_measures(fused, record, stats, m, config).items():
            vec.set(key, val)

    def do_path_fisher():
        pn = basic.path_norm(fused)
        vec.set("path-norm", pn)
        if stats.gamma > 0:
            vec.set("path-norm-margin", pn / stats.gamma**2)
        vec.set("fisher-rao", basic.fisher_rao(fused, x, y))

    def do_flatness():
        results = flatness.run_sigma_searches(fused, x, y, config, seed)
        diagnostics["sigma_searches"] = results
        for key, val, reason in flatness.flatness_measures(fused, record, results, m, config):
            if reason is None:
                vec.set(key, val)
            else:
                vec.set_undefined(key, reason)

    def do_optimization():
        trace = record.trace
        if trace.steps_to_01 is not None:
            vec.set("step-to-0.1", float(trace.steps_to_01))
        else:
            vec.set_undefined("step-to-0.1", "threshold-not-crossed")
        if trace.steps_01_to_001 is not None:
            vec.set("step-0.1-to-0.01", float(trace.steps_01_to_001))
        else:
            vec.set_undefined("step-0.1-to-0.01", "not-converged")
        vec.set("grad-noise-epoch1", trace.grad_noise_epoch1)
        vec.set(
            "grad-noise-final",
            gradient_noise(fused, x, y, config.grad_noise_samples, make_rng(seed, 90)),
        )

    timed("output", do_output)
    timed("architecture", do_arch)
    timed("norms", do_norms)
    timed("path-fisher", do_path_fisher)
    timed("flatness", do_flatness)
    timed("optimization", do_optimization)

    for key in CATALOG:
        if key not in vec.entries:
            if key in MARGIN_MEASURES and stats.gamma <= 0:
                vec.set_undefined(key, "nonpositive-margin")
            else:
                vec.set_undefined(key, next(iter(errors.values()), "not-computed"))
    return vec, diagnostics
