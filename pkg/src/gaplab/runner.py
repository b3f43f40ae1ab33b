"""Grid orchestration: train every grid point, measure every converged
model, evaluate, and write all artifacts under the manifest's output
directory.

Layout of a results directory::

    manifest.ini                 copy of the driving manifest
    manifest.sha256              provenance hash; resume refuses a mismatch
    checkpoints/cfg_00042.ckpt   one binary checkpoint per grid point
    measures/cfg_00042.json      measure vector + search diagnostics
    models.csv                   one row per grid point
    measures.csv                 one row per (converged model, measure)
    eval/report.json             the evaluation report
    report/...                   rendered tables and figures

Every artifact write is write-temp-then-rename, and each model's random
streams are derived from (master seed, config index), so partial runs can
be resumed and re-runs are bit-identical regardless of scheduling.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import logging
import os

import numpy as np
from threadpoolctl import threadpool_limits

from .checkpoint import CheckpointError, load_checkpoint, read_header, save_checkpoint
from .manifest import ExperimentManifest, ManifestError, load_manifest, parse_manifest
from .measures import CATALOG, compute_all
from .network import AXES, fusion_max_error
from .report import EvalReport, build_report, render_csv, correlation_table, cmi_table, render_figures, render_markdown, save_report_json, load_report_json
from .rng import make_rng
from .train import train_model

log = logging.getLogger(__name__)

_DATASET_CACHE: dict[str, object] = {}


def derive_seed(master_seed: int, index: int, purpose: str) -> int:
    """Stable 63-bit stream seed for one grid point and purpose."""
    digest = hashlib.sha256(f"{master_seed}:{index}:{purpose}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def _cached_dataset(manifest: ExperimentManifest):
    key = json.dumps(manifest.dataset, sort_keys=True)
    if key not in _DATASET_CACHE:
        _DATASET_CACHE[key] = manifest.build_dataset()
    return _DATASET_CACHE[key]


def checkpoint_path(out_dir: str, index: int) -> str:
    return os.path.join(out_dir, "checkpoints", f"cfg_{index:05d}.ckpt")


def measures_path(out_dir: str, index: int) -> str:
    return os.path.join(out_dir, "measures", f"cfg_{index:05d}.json")


def _atomic_write_text(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def run_job(manifest_text: str, out_dir: str, index: int) -> dict:
    """Train (or load) one grid point and measure it if converged.

    BLAS pools are pinned to one thread so results do not depend on the
    worker count, and pool workers do not oversubscribe each other.
    """
    with threadpool_limits(1):
        return _run_job_inner(manifest_text, out_dir, index)


def _run_job_inner(manifest_text: str, out_dir: str, index: int) -> dict:
    manifest = parse_manifest(manifest_text)
    dataset = _cached_dataset(manifest)
    config = manifest.grid()[index]
    settings = manifest.resolved_training(len(dataset.train_x))
    ckpt = checkpoint_path(out_dir, index)
    seed = derive_seed(manifest.master_seed, index, "train")

    record = None
    if os.path.exists(ckpt):
        try:
            record = load_checkpoint(ckpt, expected_manifest_hash=manifest.manifest_hash)
        except CheckpointError as exc:
            log.warning("discarding invalid checkpoint %s: %s", ckpt, exc)
    if record is None:
        try:
            record = train_model(config, dataset, seed, settings)
        except Exception as exc:
            log.error("training failed for cfg %d: %s", index, exc)
            return {"index": index, "failed": f"{type(exc).__name__}: {exc}"}
        save_checkpoint(ckpt, record, manifest.manifest_hash)

    summary = {
        "index": index,
        "seed": seed,
        "config": config.to_dict(),
        "converged": record.converged,
        "train_error": record.train_error,
        "test_error": record.test_error,
        "gap": record.gap,
        "trace": record.trace.to_dict(),
    }

    if record.converged:
        mpath = measures_path(out_dir, index)
        if not os.path.exists(mpath):
            measure_seed = derive_seed(manifest.master_seed, index, "measure")
            vec, diag = compute_all(record, dataset, manifest.measures, measure_seed)
            fusion_err = fusion_max_error(record.network, make_rng(measure_seed, 99), trials=100)
            # wall clock goes to the log only: persisted artifacts must be
            # bit-identical across re-runs
            log.info("cfg %d measure timings: %s", index, diag["timings"])
            payload = {
                "index": index,
                "measure_seed": measure_seed,
                "fusion_error": fusion_err,
                "measures": {
                    k: {"value": mv.value, "defined": mv.defined, "reason": mv.reason}
                    for k, mv in vec.entries.items()
                },
                "sigma_searches": {
                    mode: r.to_dict() for mode, r in (diag["sigma_searches"] or {}).items()
                },
            }
            _atomic_write_text(mpath, json.dumps(payload, sort_keys=True, indent=1) + "\n")
    return summary


def _format_float(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float) and np.isnan(v):
        return "nan"
    return repr(float(v)) if isinstance(v, float) else str(v)


def write_models_csv(out_dir: str, summaries: list[dict]) -> None:
    cols = (
        ["index"]
        + list(AXES)
        + [
            "seed",
            "converged",
            "train_error",
            "test_error",
            "gap",
            "steps_to_01",
            "steps_01_to_001",
            "grad_noise_epoch1",
            "final_train_ce",
            "final_train_error",
            "achieved_estimate",
            "total_steps",
            "failed",
        ]
    )
    lines = [",".join(cols)]
    for s in sorted(summaries, key=lambda s: s["index"]):
        if "failed" in s:
            row = [str(s["index"])] + [""] * (len(cols) - 2) + [s["failed"]]
        else:
            t = s["trace"]
            row = (
                [str(s["index"])]
                + [str(s["config"][a]) for a in AXES]
                + [
                    str(s["seed"]),
                    "true" if s["converged"] else "false",
                    _format_float(s["train_error"]),
                    _format_float(s["test_error"]),
                    _format_float(s["gap"]),
                    _format_float(t["steps_to_01"]),
                    _format_float(t["steps_01_to_001"]),
                    _format_float(t["grad_noise_epoch1"]),
                    _format_float(t["final_train_ce"]),
                    _format_float(t["final_train_error"]),
                    _format_float(t["achieved_estimate"]),
                    str(t["total_steps"]),
                    "",
                ]
            )
        lines.append(",".join(row))
    _atomic_write_text(os.path.join(out_dir, "models.csv"), "\n".join(lines) + "\n")


def write_measures_csv(out_dir: str, indices: list[int]) -> None:
    lines = ["index,measure,value,defined,reason"]
    for index in sorted(indices):
        with open(measures_path(out_dir, index)) as fh:
            payload = json.load(fh)
        for key in CATALOG:
            mv = payload["measures"][key]
            lines.append(
                f"{index},{key},{_format_float(mv['value'])},"
                f"{'true' if mv['defined'] else 'false'},{mv['reason'] or ''}"
            )
    _atomic_write_text(os.path.join(out_dir, "measures.csv"), "\n".join(lines) + "\n")


def evaluate_results(out_dir: str, manifest: ExperimentManifest) -> EvalReport:
    """Build the evaluation report from persisted artifacts."""
    grid = manifest.grid()
    converged: list[int] = []
    gaps: list[float] = []
    vectors: dict[int, dict] = {}
    for index in range(len(grid)):
        mpath = measures_path(out_dir, index)
        ckpt = checkpoint_path(out_dir, index)
        if not (os.path.exists(mpath) and os.path.exists(ckpt)):
            continue
        header = read_header(ckpt)
        if not header["converged"]:
            continue
        with open(mpath) as fh:
            vectors[index] = json.load(fh)["measures"]
        converged.append(index)
        gaps.append(header["test_error"] - header["trace"]["final_train_error"])
    if len(converged) < 2:
        raise ManifestError(f"need at least 2 converged models to evaluate, found {len(converged)}")

    configs = [grid[i] for i in converged]
    measure_table = {}
    for key in CATALOG:
        values = np.array([vectors[i][key]["value"] for i in converged], dtype=np.float64)
        defined = np.array([vectors[i][key]["defined"] for i in converged], dtype=bool)
        measure_table[key] = (values, defined)
    report = build_report(
        configs,
        np.array(gaps),
        measure_table,
        n_total=len(grid),
        oracle_epsilons=manifest.oracle_epsilons,
        baseline_seeds=manifest.baseline_seeds,
        seed=manifest.master_seed,
    )
    os.makedirs(os.path.join(out_dir, "eval"), exist_ok=True)
    save_report_json(report, os.path.join(out_dir, "eval", "report.json"))
    return report


def render_report(out_dir: str, fmt: str = "csv", figures: bool = True) -> list[str]:
    """Render eval/report.json into report/ tables and figures."""
    report = load_report_json(os.path.join(out_dir, "eval", "report.json"))
    rep_dir = os.path.join(out_dir, "report")
    os.makedirs(rep_dir, exist_ok=True)
    written = []
    tables = {"correlation": correlation_table(report), "cmi": cmi_table(report)}
    for name, table in tables.items():
        if fmt == "csv":
            path = os.path.join(rep_dir, f"report_{name}.csv")
            _atomic_write_text(path, render_csv(table))
        elif fmt == "md":
            path = os.path.join(rep_dir, f"report_{name}.md")
            _atomic_write_text(path, render_markdown(table))
        else:
            raise ValueError(f"unknown report format {fmt!r}")
        written.append(path)
    if figures:
        written += render_figures(report, rep_dir)
    return written


def run_grid(
    manifest: ExperimentManifest,
    limit: int | None = None,
    workers: int | None = None,
    evaluate: bool = True,
) -> dict:
    """Execute the whole experiment described by a manifest.

    ``limit`` trains only the first N grid points (useful to exercise
    interruption); a later full run resumes from the persisted artifacts.
    """
    out_dir = manifest.output_dir
    os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "measures"), exist_ok=True)

    hash_path = os.path.join(out_dir, "manifest.sha256")
    if os.path.exists(hash_path):
        with open(hash_path) as fh:
            stored = fh.read().strip()
        if stored != manifest.manifest_hash:
            raise ManifestError(
                f"output dir {out_dir} belongs to manifest {stored[:12]}; refusing to resume"
            )
    else:
        _atomic_write_text(hash_path, manifest.manifest_hash + "\n")
        _atomic_write_text(os.path.join(out_dir, "manifest.ini"), manifest.source_text)

    n_jobs = manifest.grid_size() if limit is None else min(limit, manifest.grid_size())
    workers = workers or manifest.parallelism
    summaries: list[dict] = []
    if workers <= 1 or n_jobs == 1:
        for index in range(n_jobs):
            summaries.append(run_job(manifest.source_text, out_dir, index))
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(run_job, manifest.source_text, out_dir, index) for index in range(n_jobs)
            ]
            for fut in futures:
                summaries.append(fut.result())

    write_models_csv(out_dir, summaries)
    done = [s["index"] for s in summaries if s.get("converged")]
    write_measures_csv(out_dir, done)

    result = {
        "jobs": n_jobs,
        "converged": len(done),
        "failed": sum(1 for s in summaries if "failed" in s),
    }
    if evaluate and limit is None and len(done) >= 2:
        evaluate_results(out_dir, manifest)
        render_report(out_dir, fmt="csv", figures=True)
        result["evaluated"] = True
    return result
