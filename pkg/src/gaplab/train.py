"""Train one network to the cross-entropy stopping criterion.

The stopping rule follows the loss-estimate protocol: every ``eval_every``
steps the training cross-entropy is estimated from randomly sampled
minibatches, and training stops at the first checkpoint whose estimate
falls at or below the threshold. Records carry the step counts at which
the 0.1 and final thresholds were crossed plus the epoch-1 gradient noise,
which downstream optimization measures consume.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import ops
from .data import Dataset
from .network import HyperConfig, Network, build_nin, snapshot_params
from .optim import make_optimizer
from .rng import make_rng


class TrainingFailedError(RuntimeError):
    pass


@dataclass
class TrainSettings:
    threshold: float = 0.01
    max_steps: int = 20000
    eval_every: int = 100
    eval_batches: int = 100
    lr_milestones: tuple[int, ...] = ()
    lr_decay: float = 0.1
    grad_noise_samples: int = 256
    lr_scale: dict = field(default_factory=lambda: {"momentum-sgd": 1.0, "adam": 0.01, "rmsprop": 0.01})

    def effective_lr(self, config: HyperConfig) -> float:
        return config.learning_rate * float(self.lr_scale.get(config.optimizer, 1.0))


@dataclass
class TrainingTrace:
    steps_to_01: int | None
    steps_01_to_001: int | None
    grad_noise_epoch1: float
    final_train_ce: float
    final_train_error: float
    converged: bool
    total_steps: int
    achieved_estimate: float

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingTrace":
        return cls(**{name: d[name] for name in cls.__dataclass_fields__})


@dataclass
class ModelRecord:
    config: HyperConfig
    seed: int
    network: Network  # trained, batch norm still in place
    init: list[np.ndarray]
    trace: TrainingTrace
    train_error: float
    test_error: float

    @property
    def gap(self) -> float:
        return self.test_error - self.train_error

    @property
    def converged(self) -> bool:
        return self.trace.converged


def batch_iterator(n: int, batch_size: int, rng: np.random.Generator):
    """Yield (epoch_index, batch_indices), reshuffling every pass.

    Trailing examples that do not fill a batch are dropped; a batch size
    above n degrades to full-dataset batches.
    """
    batch_size = min(batch_size, n)
    epoch = 0
    while True:
        order = rng.permutation(n)
        for start in range(0, n - batch_size + 1, batch_size):
            yield epoch, order[start : start + batch_size]
        epoch += 1


def minibatch_sampler(n: int, batch_size: int, rng: np.random.Generator):
    """Uniform minibatch sampler used by the loss estimator.

    Walks a fresh permutation in batch-size chunks and reshuffles when
    exhausted, so ``ceil(n / batch_size)`` batches tile the dataset.
    """
    while True:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield order[start : start + batch_size]


def mean_ce_and_error(net: Network, x: np.ndarray, y: np.ndarray, batch_size: int = 512) -> tuple[float, float]:
    """Exact mean cross-entropy and 0-1 error over a full split."""
    total, wrong = 0.0, 0
    for start in range(0, len(x), batch_size):
        xb, yb = x[start : start + batch_size], y[start : start + batch_size]
        logits = net.forward(xb, train=False)
        loss, _ = ops.softmax_cross_entropy(logits, yb)
        total += float(loss.sum())
        wrong += int((logits.argmax(axis=1) != yb).sum())
    return total / len(x), wrong / len(x)


def estimate_training_loss(
    net: Network,
    x: np.ndarray,
    y: np.ndarray,
    batch_size: int,
    num_batches: int,
    rng: np.random.Generator,
) -> float:
    """Mean cross-entropy over ``num_batches`` sampled minibatches."""
    sampler = minibatch_sampler(len(x), batch_size, rng)
    total, count = 0.0, 0
    for _ in range(num_batches):
        idx = next(sampler)
        logits = net.forward(x[idx], train=False)
        loss, _ = ops.softmax_cross_entropy(logits, y[idx])
        total += float(loss.sum())
        count += len(idx)
    return total / count


def gradient_noise(
    net: Network,
    x: np.ndarray,
    y: np.ndarray,
    sample_size: int,
    rng: np.random.Generator,
) -> float:
    """Total variance of per-example gradients at the current weights.

    Per-example gradients are taken in eval mode (dropout off, batch norm
    on running statistics; a train-mode batch of one has no batch
    statistics). Returns the trace of the empirical covariance:
    ``mean_i ||g_i - g_bar||^2``.
    """
    n = len(x)
    if sample_size >= n:
        idx = np.arange(n)
    else:
        idx = np.sort(rng.permutation(n)[:sample_size])
    grads = np.empty((len(idx), sum(net.params_of(l, p).size for l, p in net.trainable())))
    for row, i in enumerate(idx):
        net.zero_grad()
        logits = net.forward(x[i : i + 1], train=False)
        _, probs = ops.softmax_cross_entropy(logits, y[i : i + 1])
        d_logits = probs.astype(logits.dtype)
        d_logits[0, y[i]] -= 1.0
        net.backward(d_logits)
        grads[row] = np.concatenate([net.grads_of(l, p).ravel() for l, p in net.trainable()])
    center = grads - grads.mean(axis=0)
    return float((center * center).sum(axis=1).mean())


def backward_mean_ce(net: Network, x: np.ndarray, y: np.ndarray, train: bool = True) -> float:
    """Forward + backward of the mean cross-entropy over a batch.

    Leaves gradients accumulated on the layers and returns the loss.
    """
    net.zero_grad()
    logits = net.forward(x, train=train)
    loss, probs = ops.softmax_cross_entropy(logits, y)
    d_logits = probs.astype(logits.dtype)
    d_logits[np.arange(len(y)), y] -= 1.0
    d_logits /= len(y)
    net.backward(d_logits)
    return float(loss.mean())


def train_model(
    config: HyperConfig,
    dataset: Dataset,
    seed: int,
    settings: TrainSettings,
    num_classes: int | None = None,
) -> ModelRecord:
    """Train one grid point; deterministic in (config, dataset, seed)."""
    kappa = num_classes if num_classes is not None else dataset.num_classes
    net, init = build_nin(config, dataset.image_shape, kappa, make_rng(seed, 0))
    net.set_dropout_rng(make_rng(seed, 1))
    batches = batch_iterator(len(dataset.train_x), config.batch_size, make_rng(seed, 2))
    estimator_rng = make_rng(seed, 3)
    noise_rng = make_rng(seed, 4)

    params = [net.params_of(l, p) for l, p in net.trainable()]
    opt = make_optimizer(config.optimizer, params, settings.effective_lr(config), config.weight_decay)

    steps_to_01 = None
    steps_to_threshold = None
    grad_noise_epoch1 = float("nan")
    achieved = float("inf")
    seen_epoch = 0
    step = 0
    failed = False

    while step < settings.max_steps:
        epoch, idx = next(batches)
        if epoch > seen_epoch:
            if seen_epoch == 0:
                grad_noise_epoch1 = gradient_noise(
                    net, dataset.train_x, dataset.train_y, settings.grad_noise_samples, noise_rng
                )
            seen_epoch = epoch
        loss = backward_mean_ce(net, dataset.train_x[idx], dataset.train_y[idx], train=True)
        if not np.isfinite(loss):
            failed = True
            break
        opt.step([net.grads_of(l, p) for l, p in net.trainable()])
        step += 1
        if step in settings.lr_milestones:
            opt.lr *= settings.lr_decay
        if step % settings.eval_every == 0:
            est = estimate_training_loss(
                net,
                dataset.train_x,
                dataset.train_y,
                config.batch_size,
                settings.eval_batches,
                estimator_rng,
            )
            if not np.isfinite(est):
                failed = True
                break
            if est <= 0.1 and steps_to_01 is None:
                steps_to_01 = step
            if est <= settings.threshold:
                steps_to_threshold = step
                achieved = est
                break

    # epoch-1 noise for runs that stop inside the first epoch
    if seen_epoch == 0 and not failed and np.isnan(grad_noise_epoch1):
        grad_noise_epoch1 = gradient_noise(
            net, dataset.train_x, dataset.train_y, settings.grad_noise_samples, noise_rng
        )

    converged = steps_to_threshold is not None and not failed
    if converged and steps_to_01 is None:
        steps_to_01 = steps_to_threshold  # crossed both thresholds at one checkpoint
    final_ce, final_err = mean_ce_and_error(net, dataset.train_x, dataset.train_y)
    _, test_err = mean_ce_and_error(net, dataset.test_x, dataset.test_y)
    trace = TrainingTrace(
        steps_to_01=steps_to_01 if converged or steps_to_01 is not None else None,
        steps_01_to_001=(steps_to_threshold - steps_to_01) if converged else None,
        grad_noise_epoch1=grad_noise_epoch1,
        final_train_ce=final_ce,
        final_train_error=final_err,
        converged=converged,
        total_steps=step,
        achieved_estimate=achieved if converged else float("inf"),
    )
    return ModelRecord(config, seed, net, init, trace, final_err, test_err)
