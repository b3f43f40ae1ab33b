"""Evaluation-report assembly and rendering.

``build_report`` turns converged model records and their measure vectors
into one row per measure: per-axis granulated tau, overall tau, the
grand mean Psi, per-axis normalized conditional mutual information, and
the min-over-conditioning-sets criterion. Baseline rows (noisy oracles,
random ranks, per-axis canonical orderings, the perfect-depth probe) are
appended, averaged over seeds where they are stochastic.

Rendering emits two delimited tables (correlation and mutual
information), optionally as markdown, plus matplotlib figures saved next
to them.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from .evalstats import (
    GridView,
    canonical_measure,
    conditional_mi,
    depth_oracle_measure,
    granulated_kendall,
    k_min_cmi,
    kendall_tau,
    oracle_measure,
    random_measure,
)
from .network import AXES, HyperConfig
from .rng import make_rng

CORRELATION_COLUMNS = ("measure",) + AXES + ("overall_tau", "psi")
CMI_COLUMNS = ("measure",) + AXES + ("s0", "min_s1", "min_s2", "k_min")


@dataclass
class MeasureRow:
    measure: str
    psi: dict
    tau: float | None
    big_psi: float | None
    cmi_axis: dict
    cmi_s0: float | None
    cmi_min_s1: float | None
    cmi_min_s2: float | None
    k_min: float | None
    defined_count: int
    skipped_slices: int

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MeasureRow":
        return cls(**{name: d[name] for name in cls.__dataclass_fields__})


@dataclass
class EvalReport:
    n_models: int
    n_converged: int
    n_excluded: int
    axis_levels: dict
    rows: list = field(default_factory=list)

    def row(self, measure: str) -> MeasureRow:
        for r in self.rows:
            if r.measure == measure:
                return r
        raise KeyError(measure)

    def to_dict(self) -> dict:
        return {
            "n_models": self.n_models,
            "n_converged": self.n_converged,
            "n_excluded": self.n_excluded,
            "axis_levels": self.axis_levels,
            "rows": [r.to_dict() for r in self.rows],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            n_models=d["n_models"],
            n_converged=d["n_converged"],
            n_excluded=d["n_excluded"],
            axis_levels=d["axis_levels"],
            rows=[MeasureRow.from_dict(r) for r in d["rows"]],
        )


def _stat_row(
    name: str, view: GridView, mu: np.ndarray, mask: np.ndarray | None = None
) -> MeasureRow:
    keep = np.ones(len(view), dtype=bool) if mask is None else mask
    tau = kendall_tau(mu[keep], view.gaps[keep]) if keep.sum() >= 2 else None
    psi, big_psi, skipped = granulated_kendall(view, mu, mask=mask)
    cmi_axis = {}
    for axis in AXES:
        _, _, norm = conditional_mi(view, mu, (axis,), mask=mask)
        cmi_axis[axis] = norm
    _, _, s0 = conditional_mi(view, mu, (), mask=mask)
    s1 = [v for a in AXES if (v := cmi_axis[a]) is not None]
    s2 = []
    for i in range(len(AXES)):
        for j in range(i + 1, len(AXES)):
            _, _, norm = conditional_mi(view, mu, (AXES[i], AXES[j]), mask=mask)
            if norm is not None:
                s2.append(norm)
    candidates = ([s0] if s0 is not None else []) + s1 + s2
    return MeasureRow(
        measure=name,
        psi=psi,
        tau=tau,
        big_psi=big_psi,
        cmi_axis=cmi_axis,
        cmi_s0=s0,
        cmi_min_s1=min(s1) if s1 else None,
        cmi_min_s2=min(s2) if s2 else None,
        k_min=min(candidates) if candidates else None,
        defined_count=int(keep.sum()),
        skipped_slices=sum(skipped.values()),
    )


def _mean_rows(name: str, rows: list[MeasureRow]) -> MeasureRow:
    """Cell-wise mean over per-seed rows of a stochastic baseline."""

    def mean(vals):
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else None

    return MeasureRow(
        measure=name,
        psi={a: mean([r.psi[a] for r in rows]) for a in AXES},
        tau=mean([r.tau for r in rows]),
        big_psi=mean([r.big_psi for r in rows]),
        cmi_axis={a: mean([r.cmi_axis[a] for r in rows]) for a in AXES},
        cmi_s0=mean([r.cmi_s0 for r in rows]),
        cmi_min_s1=mean([r.cmi_min_s1 for r in rows]),
        cmi_min_s2=mean([r.cmi_min_s2 for r in rows]),
        k_min=mean([r.k_min for r in rows]),
        defined_count=rows[0].defined_count,
        skipped_slices=rows[0].skipped_slices,
    )


def build_report(
    configs: list[HyperConfig],
    gaps: np.ndarray,
    measure_table: dict[str, tuple[np.ndarray, np.ndarray]],
    n_total: int,
    oracle_epsilons: tuple[float, ...] = (0.0, 0.02, 0.05, 0.1),
    baseline_seeds: int = 20,
    seed: int = 0,
) -> EvalReport:
    """Assemble the full report.

    ``measure_table`` maps measure id to (values, defined mask) aligned
    with ``configs``, which must already be restricted to converged
    models.
    """
    if len(configs) < 2:
        raise ValueError("need at least 2 converged models to evaluate")
    view = GridView(configs, np.asarray(gaps, dtype=np.float64))
    report = EvalReport(
        n_models=n_total,
        n_converged=len(configs),
        n_excluded=n_total - len(configs),
        axis_levels={a: [str(v) for v in view.levels[a]] for a in AXES},
    )
    for name, (values, defined) in measure_table.items():
        mask = defined & np.isfinite(values)
        if mask.sum() >= 2:
            report.rows.append(_stat_row(name, view, np.where(mask, values, 0.0), mask=mask))
        else:
            report.rows.append(
                MeasureRow(
                    measure=name,
                    psi={a: None for a in AXES},
                    tau=None,
                    big_psi=None,
                    cmi_axis={a: None for a in AXES},
                    cmi_s0=None,
                    cmi_min_s1=None,
                    cmi_min_s2=None,
                    k_min=None,
                    defined_count=int(mask.sum()),
                    skipped_slices=0,
                )
            )

    for eps in oracle_epsilons:
        rows = [
            _stat_row("oracle", view, oracle_measure(view.gaps, eps, make_rng(seed, 300, i)))
            for i in range(baseline_seeds)
        ]
        report.rows.append(_mean_rows(f"oracle-{eps:g}", rows))
    rows = [
        _stat_row("random", view, random_measure(len(view), make_rng(seed, 301, i)))
        for i in range(baseline_seeds)
    ]
    report.rows.append(_mean_rows("random", rows))
    for axis in AXES:
        if len(view.levels[axis]) < 2:
            continue
        mu = canonical_measure(axis, configs)
        psi, _, skipped = granulated_kendall(view, mu)
        report.rows.append(
            MeasureRow(
                measure=f"canonical-{axis}",
                psi={a: (psi[a] if a == axis else None) for a in AXES},
                tau=None,
                big_psi=None,
                cmi_axis={a: None for a in AXES},
                cmi_s0=None,
                cmi_min_s1=None,
                cmi_min_s2=None,
                k_min=None,
                defined_count=len(configs),
                skipped_slices=skipped[axis],
            )
        )
    if len(view.levels["depth"]) >= 2:
        rows = [
            _stat_row("depth-oracle", view, depth_oracle_measure(view, make_rng(seed, 302, i)))
            for i in range(baseline_seeds)
        ]
        report.rows.append(_mean_rows("depth-oracle", rows))
    return report


# ---------------------------------------------------------------------------
# rendering


def _fmt(v: float | None) -> str:
    if v is None:
        return "N/A"
    return f"{v:.6g}"


def correlation_table(report: EvalReport) -> list[list[str]]:
    rows = [list(CORRELATION_COLUMNS)]
    for r in report.rows:
        rows.append([r.measure] + [_fmt(r.psi[a]) for a in AXES] + [_fmt(r.tau), _fmt(r.big_psi)])
    return rows


def cmi_table(report: EvalReport) -> list[list[str]]:
    rows = [list(CMI_COLUMNS)]
    for r in report.rows:
        rows.append(
            [r.measure]
            + [_fmt(r.cmi_axis[a]) for a in AXES]
            + [_fmt(r.cmi_s0), _fmt(r.cmi_min_s1), _fmt(r.cmi_min_s2), _fmt(r.k_min)]
        )
    return rows


def render_csv(table: list[list[str]]) -> str:
    return "\n".join(",".join(row) for row in table) + "\n"


def render_markdown(table: list[list[str]]) -> str:
    header, *body = table
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(row) + " |" for row in body]
    return "\n".join(lines) + "\n"


def save_report_json(report: EvalReport, path: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(report.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def load_report_json(path: str) -> EvalReport:
    with open(path) as fh:
        return EvalReport.from_dict(json.load(fh))


def render_figures(report: EvalReport, out_dir: str) -> list[str]:
    """Save the report figures as PNGs; returns the written paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(out_dir, exist_ok=True)
    written = []
    rows = [r for r in report.rows if r.big_psi is not None]

    def save(fig, name):
        path = os.path.join(out_dir, name)
        fig.savefig(path, dpi=120, metadata={"Software": "gaplab"})
        plt.close(fig)
        written.append(path)

    if rows:
        order = np.argsort([r.big_psi for r in rows])
        names = [rows[i].measure for i in order]
        vals = [rows[i].big_psi for i in order]
        fig, ax = plt.subplots(figsize=(7, 0.22 * len(rows) + 1.2))
        ax.barh(range(len(rows)), vals, color=["tab:red" if v < 0 else "tab:blue" for v in vals])
        ax.set_yticks(range(len(rows)), names, fontsize=6)
        ax.set_xlabel("granulated rank correlation (mean over axes)")
        ax.axvline(0, color="k", lw=0.6)
        fig.tight_layout()
        save(fig, "psi_ranking.png")

        fig, ax = plt.subplots(figsize=(7, 0.22 * len(rows) + 1.4))
        grid = np.array([[r.psi[a] if r.psi[a] is not None else np.nan for a in AXES] for r in rows])
        im = ax.imshow(grid, aspect="auto", cmap="RdBu_r", vmin=-1, vmax=1)
        ax.set_xticks(range(len(AXES)), AXES, rotation=30, ha="right", fontsize=7)
        ax.set_yticks(range(len(rows)), [r.measure for r in rows], fontsize=6)
        fig.colorbar(im, ax=ax, label="per-axis rank correlation")
        fig.tight_layout()
        save(fig, "psi_heatmap.png")

        fig, ax = plt.subplots(figsize=(6, 6))
        taus = [r.tau for r in rows]
        psis = [r.big_psi for r in rows]
        ax.scatter(taus, psis, s=14)
        for r in rows:
            ax.annotate(r.measure, (r.tau, r.big_psi), fontsize=5, alpha=0.75)
        lim = max(1e-3, *(abs(v) for v in taus + psis if v is not None))
        ax.plot([-lim, lim], [-lim, lim], color="gray", lw=0.6, ls="--")
        ax.set_xlabel("overall rank correlation")
        ax.set_ylabel("granulated rank correlation")
        fig.tight_layout()
        save(fig, "tau_vs_psi.png")
    return written
