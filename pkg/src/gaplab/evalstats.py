"""Rank-correlation and information-theoretic evaluation of measures
against generalization gaps, plus the oracle/canonical/random baselines.

Conventions, applied uniformly:

* Kendall's coefficient runs over ordered pairs with sign(0) = 0, i.e.
  ties contribute nothing but still count in the normalization.
* The granulated coefficient averages single-axis-slice tau values over
  all assignments of the remaining axes; slices reduced below two models
  by exclusions are skipped and counted.
* Sign-difference variables feeding the conditional mutual information
  drop tied pairs; conditioning cells are ordered value pairs of the
  conditioning axes, weighted by their share of kept pairs.

Only converged models enter any statistic.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .network import AXES, HyperConfig

# direction of the folklore per-axis ordering, expressed as a measure that
# should increase with the generalization gap
CANONICAL_SIGN = {
    "batch_size": 1.0,  # smaller batches generalize better
    "dropout": -1.0,
    "learning_rate": -1.0,
    "depth": -1.0,
    "optimizer": 1.0,  # momentum-sgd < adam < rmsprop
    "weight_decay": -1.0,
    "width": -1.0,
}

OPTIMIZER_ORDER = {"momentum-sgd": 0, "adam": 1, "rmsprop": 2}


def axis_numeric(axis: str, value) -> float:
    if axis == "optimizer":
        return float(OPTIMIZER_ORDER[value])
    return float(value)


def kendall_tau(mu: np.ndarray, g: np.ndarray) -> float | None:
    """Pairwise sign agreement over ordered pairs; None below 2 points."""
    n = len(mu)
    if n < 2:
        return None
    smu = np.sign(mu[:, None] - mu[None, :])
    sg = np.sign(g[:, None] - g[None, :])
    return float((smu * sg).sum() / (n * (n - 1)))


@dataclass
class GridView:
    """Converged models laid out for slicing by hyperparameter axis."""

    configs: list[HyperConfig]
    gaps: np.ndarray
    levels: dict[str, list] = field(init=False)  # axis -> sorted level values
    level_idx: dict[str, np.ndarray] = field(init=False)  # axis -> per-model level index

    def __post_init__(self):
        self.levels = {}
        self.level_idx = {}
        for axis in AXES:
            values = [c.axis_value(axis) for c in self.configs]
            keys = sorted(set(values), key=lambda v: axis_numeric(axis, v))
            self.levels[axis] = keys
            lookup = {v: i for i, v in enumerate(keys)}
            self.level_idx[axis] = np.array([lookup[v] for v in values], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.configs)

    def active_axes(self) -> list[str]:
        return [a for a in AXES if len(self.levels[a]) >= 2]


def granulated_kendall(
    view: GridView, mu: np.ndarray, g: np.ndarray | None = None, mask: np.ndarray | None = None
) -> tuple[dict[str, float | None], float | None, dict[str, int]]:
    """Per-axis slice-averaged tau and its grand mean.

    Returns (psi per axis, Psi over axes with >= 2 levels, skipped-slice
    counts). ``mask`` removes models (e.g. with the measure undefined).
    """
    g = view.gaps if g is None else g
    keep = np.ones(len(view), dtype=bool) if mask is None else mask
    psi: dict[str, float | None] = {}
    skipped: dict[str, int] = {}
    for axis in AXES:
        if len(view.levels[axis]) < 2:
            psi[axis] = None
            skipped[axis] = 0
            continue
        others = [a for a in AXES if a != axis and len(view.levels[a]) >= 2]
        if others:
            sizes = [len(view.levels[a]) for a in others]
            key = np.zeros(len(view), dtype=np.int64)
            for a, size in zip(others, sizes):
                key = key * size + view.level_idx[a]
            n_slices = int(np.prod(sizes))
        else:
            key = np.zeros(len(view), dtype=np.int64)
            n_slices = 1
        taus = []
        skip = 0
        for slice_id in range(n_slices):
            sel = (key == slice_id) & keep
            if sel.sum() < 2:
                skip += 1
                continue
            taus.append(kendall_tau(mu[sel], g[sel]))
        psi[axis] = float(np.mean(taus)) if taus else None
        skipped[axis] = skip
    defined = [psi[a] for a in view.active_axes() if psi[a] is not None]
    big_psi = float(np.mean(defined)) if defined else None
    return psi, big_psi, skipped


def conditional_mi(
    view: GridView,
    mu: np.ndarray,
    s_axes: tuple[str, ...],
    g: np.ndarray | None = None,
    mask: np.ndarray | None = None,
) -> tuple[float, float, float | None]:
    """(I, H, normalized I/H) of the sign-difference variables given S.

    Ordered model pairs; pairs tied in either variable are dropped;
    conditioning cells are the ordered tuples of both models' levels on
    every axis in S. Normalized value is None when H is zero or no pairs
    survive.
    """
    g = view.gaps if g is None else g
    keep = np.ones(len(view), dtype=bool) if mask is None else mask
    idx = np.flatnonzero(keep)
    n = len(idx)
    if n < 2:
        return 0.0, 0.0, None
    mu_k, g_k = mu[idx], g[idx]
    a, b = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    off = a != b
    a, b = a[off], b[off]
    v_mu = np.sign(mu_k[a] - mu_k[b])
    v_g = np.sign(g_k[a] - g_k[b])
    kept = (v_mu != 0) & (v_g != 0)
    if not kept.any():
        return 0.0, 0.0, None
    a, b, v_mu, v_g = a[kept], b[kept], v_mu[kept], v_g[kept]

    cell = np.zeros(len(a), dtype=np.int64)
    n_cells = 1
    for axis in s_axes:
        lv = view.level_idx[axis][idx]
        size = len(view.levels[axis])
        cell = (cell * size + lv[a]) * size + lv[b]
        n_cells *= size * size
    code = (cell * 2 + (v_mu > 0)) * 2 + (v_g > 0)
    counts = np.bincount(code, minlength=n_cells * 4).reshape(n_cells, 2, 2).astype(np.float64)
    cell_totals = counts.sum(axis=(1, 2))
    live = cell_totals > 0
    total = cell_totals.sum()
    p_cell = cell_totals[live] / total
    joint = counts[live] / cell_totals[live][:, None, None]
    p_mu = joint.sum(axis=2)
    p_g = joint.sum(axis=1)

    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = joint / (p_mu[:, :, None] * p_g[:, None, :])
        terms = np.where(joint > 0, joint * np.log(ratio), 0.0)
        h_terms = np.where(p_g > 0, p_g * np.log(p_g), 0.0)
    info = float((p_cell * terms.sum(axis=(1, 2))).sum())
    entropy = float(-(p_cell * h_terms.sum(axis=1)).sum())
    return info, entropy, (info / entropy if entropy > 0 else None)


def conditioning_sets(max_size: int = 2) -> list[tuple[str, ...]]:
    sets: list[tuple[str, ...]] = [()]
    if max_size >= 1:
        sets += [(a,) for a in AXES]
    if max_size >= 2:
        sets += list(itertools.combinations(AXES, 2))
    return sets


def k_min_cmi(
    view: GridView, mu: np.ndarray, g: np.ndarray | None = None, mask: np.ndarray | None = None
) -> float | None:
    """Minimum normalized CMI over all conditioning sets with |S| <= 2."""
    vals = []
    for s in conditioning_sets():
        _, _, norm = conditional_mi(view, mu, s, g=g, mask=mask)
        if norm is not None:
            vals.append(norm)
    return min(vals) if vals else None


# ---------------------------------------------------------------------------
# baseline measures


def oracle_measure(gaps: np.ndarray, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """Gap corrupted by N(0, epsilon^2): the noisy-oracle baseline."""
    return gaps + epsilon * rng.standard_normal(len(gaps))


def random_measure(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.random(n)


def canonical_measure(axis: str, configs: list[HyperConfig]) -> np.ndarray:
    """Folklore per-axis ordering as a measure that should track the gap."""
    if axis not in AXES:
        raise ValueError(f"unknown axis {axis!r}")
    sign = CANONICAL_SIGN[axis]
    return np.array([sign * axis_numeric(axis, c.axis_value(axis)) for c in configs])


def depth_oracle_measure(view: GridView, rng: np.random.Generator) -> np.ndarray:
    """Perfect ranking across depth groups, uniform noise inside them."""
    lv = view.level_idx["depth"]
    group_means = np.array([view.gaps[lv == i].mean() for i in range(len(view.levels["depth"]))])
    base = np.argsort(np.argsort(group_means)).astype(np.float64)  # rank of each depth group
    return base[lv] + 0.999 * rng.random(len(view))
