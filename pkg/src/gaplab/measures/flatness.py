"""Perturbation-scale searches and the flatness measure family.

Four searches share one bisection skeleton: the perturbation scale is
bisected until the perturbed-accuracy deviation from the unperturbed
accuracy confidently hits the target (default 0.1), the interval collapses
below ``eps_sigma``, or ``m1`` bisections are spent.

* gaussian        - mean accuracy under w + N(0, sigma^2 I)
* gaussian-mag    - per-coordinate posterior N(w_i, sigma^2 w_i^2 + eps^2)
* ascent          - worst accuracy over restarts of projected gradient
                    ascent on the cross-entropy inside an l2 ball
* ascent-mag      - ascent with per-coordinate clipping to sigma * |w_i|

Monte Carlo discipline: sample stream j is a fixed function of the search
seed, so every bisection candidate sees the same draws (common random
numbers keep the deviation curve coherent in sigma); Gaussian draws come
in antithetic pairs; and a candidate is only accepted as converged when
its deviation is inside the tolerance by a two-standard-error margin,
escalating the sample count near the target until the margin resolves or
a cap is hit. Deviations are assumed to grow with sigma; observed
non-monotonicity is counted, never fatal.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, asdict

import numpy as np

from ..network import Network, param_scatter, param_vecc
from ..rng import make_rng
from ..train import backward_mean_ce, minibatch_sampler

MODES = ("gaussian", "ascent", "gaussian-mag", "ascent-mag")

# fresh-draw offset for re-estimation streams, disjoint from search draws
_REESTIMATE_BASE = 100_000


@dataclass
class SigmaSearchResult:
    mode: str
    sigma: float
    achieved_deviation: float
    deviation_stderr: float
    samples_used: int
    iterations: int
    converged: bool
    monotonicity_violations: int
    reference_accuracy: float

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SigmaSearchResult":
        return cls(**{name: d[name] for name in cls.__dataclass_fields__})


def estimate_accuracy(
    net: Network,
    x: np.ndarray,
    y: np.ndarray,
    num_batches: int,
    batch_size: int,
    rng: np.random.Generator,
) -> float:
    """Mean minibatch accuracy over ``num_batches`` sampled batches.

    Batches walk a seeded permutation in chunks, so enough batches tile
    the dataset exactly. Batches producing non-finite logits count as
    fully misclassified.
    """
    sampler = minibatch_sampler(len(x), min(batch_size, len(x)), rng)
    total = 0.0
    for _ in range(num_batches):
        idx = next(sampler)
        logits = net.forward(x[idx], train=False)
        if not np.all(np.isfinite(logits)):
            continue  # accuracy 0 for this batch
        total += float((logits.argmax(axis=1) == y[idx]).mean())
    return total / num_batches


def exact_accuracy(net: Network, x: np.ndarray, y: np.ndarray, batch: int = 512) -> float:
    right = 0
    for start in range(0, len(x), batch):
        logits = net.forward(x[start : start + batch], train=False)
        finite = np.all(np.isfinite(logits), axis=1)
        right += int(((logits.argmax(axis=1) == y[start : start + batch]) & finite).sum())
    return right / len(x)


class _Perturbation:
    """Evaluates the perturbed-accuracy deviation for one search mode.

    Sample ``j`` is reproducible from (seed_root, j) alone: candidate
    scales share draws, and re-estimation uses a disjoint j range.
    """

    def __init__(self, net: Network, x, y, config, mode: str, seed_root: int = 0):
        self.net = copy.deepcopy(net)
        self.x, self.y = x, y
        self.config = config
        self.mode = mode
        self.seed_root = seed_root
        self.w0 = param_vecc(net)
        self.abs_w = np.abs(self.w0)
        self.reference = exact_accuracy(net, x, y)

    def restore(self):
        param_scatter(self.net, self.w0)

    def _accuracy_at(self, vec: np.ndarray, rng) -> float:
        param_scatter(self.net, vec)
        return estimate_accuracy(self.net, self.x, self.y, self.config.m3, self.config.search_batch, rng)

    def _exact_accuracy_at(self, vec: np.ndarray) -> float:
        # worst-case endpoints need noise-free evaluation: a sampling error
        # on each restart would bias the min of the restarts downward
        param_scatter(self.net, vec)
        return exact_accuracy(self.net, self.x, self.y)

    def _gaussian_sample(self, sigma: float, j: int) -> float:
        cfg = self.config
        # antithetic pairs: consecutive j share the base draw with flipped sign
        z = make_rng(self.seed_root, 11, j // 2).standard_normal(self.w0.size)
        if j % 2:
            z = -z
        if self.mode == "gaussian":
            u = sigma * z
        else:
            u = np.sqrt(sigma**2 * self.w0**2 + cfg.epsilon_mag**2) * z
        return self._accuracy_at(self.w0 + u, make_rng(self.seed_root, 12, j))

    def _ascent_sample(self, sigma: float, j: int) -> float:
        cfg = self.config
        rng = make_rng(self.seed_root, 13, j)
        n_w = self.w0.size
        radius = sigma * self.abs_w if self.mode == "ascent-mag" else None
        init_scale = (radius if radius is not None else sigma) / n_w
        theta = self.w0 + rng.uniform(-1.0, 1.0, n_w) * init_scale
        step_batch = cfg.ascent_batch or cfg.search_batch
        sampler = minibatch_sampler(len(self.x), min(step_batch, len(self.x)), rng)
        for _ in range(cfg.m4):
            idx = next(sampler)
            param_scatter(self.net, theta)
            backward_mean_ce(self.net, self.x[idx], self.y[idx], train=False)
            grad = np.concatenate(
                [self.net.grads_of(l, p).ravel() for l, p in self.net.trainable()]
            ).astype(np.float64)
            if not np.all(np.isfinite(grad)):
                break
            theta = theta + cfg.ascent_lr * grad  # ascent on the loss
            pert = theta - self.w0
            if radius is None:
                nrm = np.linalg.norm(pert)
                if nrm > sigma:
                    pert *= sigma / nrm
            else:
                pert = np.clip(pert, -radius, radius)
            theta = self.w0 + pert
        return self._exact_accuracy_at(theta)

    def samples(self, sigma: float, j_start: int, count: int) -> np.ndarray:
        draw = self._gaussian_sample if self.mode in ("gaussian", "gaussian-mag") else self._ascent_sample
        accs = np.array([draw(sigma, j) for j in range(j_start, j_start + count)])
        self.restore()
        return accs

    def summarize(self, accs: np.ndarray) -> tuple[float, float]:
        """(deviation, stderr proxy) from a batch of sample accuracies."""
        if self.mode in ("gaussian", "gaussian-mag"):
            perturbed = accs.mean()
        else:
            perturbed = accs.min()  # worst case across restarts
        se = float(accs.std(ddof=1) / np.sqrt(len(accs))) if len(accs) > 1 else float("inf")
        return abs(self.reference - perturbed), se

    def deviation(self, sigma: float, base: int | None = None, j_start: int = 0) -> tuple[float, float, int]:
        """Adaptive deviation estimate: (deviation, stderr, samples used).

        Starts from ``base`` samples and doubles while the candidate is
        ambiguous at the tolerance (within the band by 2 stderr but not
        confidently inside it), up to an 8x cap.
        """
        cfg = self.config
        base = cfg.m2 if base is None else base
        base = max(2, base + base % 2)  # antithetic pairs need even counts
        accs = self.samples(sigma, j_start, base)
        while True:
            dev, se = self.summarize(accs)
            gap = abs(dev - cfg.target_deviation)
            ambiguous = (gap - 2 * se <= cfg.eps_d) and (gap + 2 * se > cfg.eps_d)
            if not ambiguous or len(accs) >= 8 * base:
                return dev, se, len(accs)
            extra = self.samples(sigma, j_start + len(accs), len(accs))
            accs = np.concatenate([accs, extra])


def find_sigma(
    net: Network,
    x: np.ndarray,
    y: np.ndarray,
    config,
    seed: int,
    mode: str = "gaussian",
) -> SigmaSearchResult:
    """Bisection for the scale whose deviation matches the target.

    Convergence demands the deviation sit inside ``eps_d`` of the target
    with a two-standard-error margin, so a converged result is stable
    under independent re-estimation.
    """
    if mode not in MODES:
        raise ValueError(f"unknown search mode {mode!r}")
    pert = _Perturbation(net, x, y, config, mode, seed_root=seed)
    target = config.target_deviation
    lo, hi = config.sigma_min, config.sigma_max
    history: list[tuple[float, float]] = []
    ever_above = False
    sigma, dev, se, used = hi, 0.0, float("inf"), 0
    iterations = 0
    converged = False
    for _ in range(config.m1):
        iterations += 1
        sigma = 0.5 * (lo + hi)
        dev, se, used = pert.deviation(sigma)
        history.append((sigma, dev))
        if abs(dev - target) + 2 * se <= config.eps_d:
            converged = True
            break
        if (hi - lo) <= config.eps_sigma:
            break
        if dev > target:
            ever_above = True
            hi = sigma
        else:
            lo = sigma
    if not converged and not ever_above:
        # deviation never reached the target even near sigma_max
        sigma = config.sigma_max
    # a decrease within eps_d is a tie at the search's own resolution
    violations = 0
    by_sigma = sorted(history)
    for (_, d1), (_, d2) in zip(by_sigma, by_sigma[1:]):
        if d2 < d1 - config.eps_d:
            violations += 1
    return SigmaSearchResult(
        mode=mode,
        sigma=float(sigma),
        achieved_deviation=float(dev),
        deviation_stderr=float(se),
        samples_used=used,
        iterations=iterations,
        converged=bool(converged),
        monotonicity_violations=violations,
        reference_accuracy=pert.reference,
    )


def reestimate_deviation(
    net: Network,
    x: np.ndarray,
    y: np.ndarray,
    config,
    result: SigmaSearchResult,
    seed: int,
    budget_factor: int = 10,
) -> tuple[float, float]:
    """(deviation, MC standard error) at the returned scale, fresh draws.

    Gaussian modes average ``budget_factor`` times more perturbations.
    Worst-case modes keep the restart count that defines their statistic
    (endpoints are already evaluated exactly); their budget goes unspent.
    """
    pert = _Perturbation(net, x, y, config, result.mode, seed_root=seed)
    if result.mode in ("gaussian", "gaussian-mag"):
        count = budget_factor * max(2, config.m2)
    else:
        count = max(2, config.m2)
    accs = pert.samples(result.sigma, _REESTIMATE_BASE, count)
    dev, se = pert.summarize(accs)
    return float(dev), float(se)


def run_sigma_searches(net: Network, x, y, config, seed: int) -> dict[str, SigmaSearchResult]:
    """All four searches, each on its own child seed."""
    return {
        mode: find_sigma(net, x, y, config, seed=seed * 4 + i, mode=mode)
        for i, mode in enumerate(MODES)
    }


def flatness_measures(
    net: Network,
    record,
    searches: dict[str, SigmaSearchResult],
    m: int,
    config,
) -> list[tuple[str, float, str | None]]:
    """The twelve flatness-family values from the four search results."""
    from . import basic

    w = param_vecc(net)
    w0 = np.concatenate(
        [np.concatenate([wt.ravel(), bt.ravel()]) for wt, bt in basic.init_conv_tensors(record)]
    ).astype(np.float64)
    omega = w.size
    diff = w - w0
    dist_sq = float(diff @ diff)
    norm_sq = float(w @ w)
    log_md = np.log(m / config.delta)
    log_2om = np.log(2.0 * omega)
    eps_sq = config.epsilon_mag**2

    def mag_sum(coef: float, total_sq: float, sigma_p: float) -> float:
        num = eps_sq + coef * total_sq / omega
        den = eps_sq + sigma_p**2 * diff**2
        return 0.25 * float(np.log(num / den).sum())

    out: list[tuple[str, float, str | None]] = []

    def emit(result: SigmaSearchResult, items):
        if result.converged:
            for key, fn in items:
                out.append((key, fn(result.sigma), None))
        else:
            for key, _ in items:
                out.append((key, float("nan"), "sigma-search-failed"))

    emit(
        searches["gaussian"],
        [
            ("pac-bayes-init", lambda s: dist_sq / (4 * s**2) + log_md + 10.0),
            ("pac-bayes-orig", lambda s: norm_sq / (4 * s**2) + log_md + 10.0),
            ("pac-bayes-flatness", lambda s: 1.0 / s**2),
        ],
    )
    emit(
        searches["ascent"],
        [
            ("sharpness-init", lambda s: dist_sq * log_2om / (4 * s**2) + log_md + 10.0),
            ("sharpness-orig", lambda s: norm_sq * log_2om / (4 * s**2) + log_md + 10.0),
            ("sharpness-flatness", lambda s: 1.0 / s**2),
        ],
    )
    emit(
        searches["gaussian-mag"],
        [
            ("pac-bayes-mag-init", lambda s: mag_sum(s**2 + 1.0, dist_sq, s) + log_md + 10.0),
            ("pac-bayes-mag-orig", lambda s: mag_sum(s**2 + 1.0, norm_sq, s) + log_md + 10.0),
            ("pac-bayes-mag-flatness", lambda s: 1.0 / s**2),
        ],
    )
    alpha_coef = lambda s: s**2 + 4.0 * np.log(2.0 * omega / config.delta)
    emit(
        searches["ascent-mag"],
        [
            ("pac-sharpness-mag-init", lambda s: mag_sum(alpha_coef(s), dist_sq, s) + log_md + 10.0),
            ("pac-sharpness-mag-orig", lambda s: mag_sum(alpha_coef(s), norm_sq, s) + log_md + 10.0),
            ("sharpness-mag-flatness", lambda s: 1.0 / s**2),
        ],
    )
    return out
