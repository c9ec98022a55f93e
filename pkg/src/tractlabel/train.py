"""Training loop: hierarchical epoch draws, summed four-branch loss, Adam."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import Dataset
from .descriptors import DESCRIPTOR_NAMES, noise_substitute
from .ensemble import SUPERVISORS
from .errors import DivergenceError, InvalidInputError
from .evaluation import MetricsReport, metrics_report
from .nn import Adam, StarConfig, StarNetwork
from .sampler import epoch_batches, hierarchical_sample

# stream tags mixed into the master seed so that draws never collide
_TRAIN_DRAW, _VAL_DRAW, _TRAIN_NOISE, _EVAL_NOISE, _INIT = range(5)


@dataclass
class TrainConfig:
    epochs: int = 250
    train_samples: int = 10000
    val_samples: int = 4000
    batch_size: int = 32
    lr: float = 3e-5
    seed: int = 0
    # descriptors replaced by standard-normal noise (training and evaluation)
    ablate: tuple = ()

    def __post_init__(self):
        self.ablate = tuple(sorted(set(self.ablate)))
        unknown = set(self.ablate) - set(DESCRIPTOR_NAMES)
        if unknown:
            raise InvalidInputError(f"unknown descriptors in ablate: {sorted(unknown)}")
        if self.epochs < 1 or self.train_samples < 1 or self.val_samples < 0:
            raise InvalidInputError("epochs and train_samples must be >= 1, val_samples >= 0")
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")
        if not self.lr > 0:
            raise InvalidInputError("lr must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ablate"] = list(self.ablate)
        return d


@dataclass
class TrainResult:
    net: StarNetwork
    history: list = field(default_factory=list)


def _batch_inputs(dataset: Dataset, samples, ablate, seed, dtype):
    ds, targets, codes = dataset.batch(samples, dtype)
    ds = noise_substitute(ds, ablate, seed)
    return ds.as_dict(), targets, codes


def evaluate(
    net: StarNetwork,
    dataset: Dataset,
    samples,
    ablate=(),
    seed=0,
    batch_size: int = 256,
) -> MetricsReport:
    """Eval-mode forward pass over ``samples``; returns the full metrics report."""
    if not samples:
        raise InvalidInputError("nothing to evaluate")
    logits = {s: [] for s in SUPERVISORS}
    truth = []
    base = [int(x) for x in np.atleast_1d(seed)]
    for bi, chunk in enumerate(epoch_batches(samples, batch_size)):
        batch, _, codes = _batch_inputs(dataset, chunk, ablate, [*base, _EVAL_NOISE, bi], net.dtype)
        out = net.forward(batch, train=False)
        for s in SUPERVISORS:
            logits[s].append(out[s])
        truth.extend(codes)
    logits = {s: np.concatenate(v) for s, v in logits.items()}
    return metrics_report(logits, truth)


def train(
    dataset: Dataset,
    net_config: StarConfig,
    config: TrainConfig,
    train_subjects,
    val_subjects=(),
    log=None,
) -> TrainResult:
    """Train a fresh network.

    Each epoch draws ``train_samples`` triples hierarchically from the training
    subjects and ``val_samples`` from the validation subjects. Every random
    stream (init, draws, noise) derives from ``config.seed``, so two runs with
    the same inputs are bit-identical. ``log`` is called with one record per
    epoch.
    """
    if not train_subjects:
        raise InvalidInputError("no training subjects")
    seed = config.seed
    train_idx = dataset.index.restrict(train_subjects)
    val_idx = dataset.index.restrict(val_subjects) if val_subjects else None
    net_seed = int(np.random.SeedSequence([seed, _INIT]).generate_state(1)[0])
    net = StarNetwork(net_config, seed=net_seed, dtype=np.float32)
    opt = Adam(lr=config.lr)
    result = TrainResult(net)
    for epoch in range(config.epochs):
        samples = hierarchical_sample(train_idx, config.train_samples, [seed, epoch, _TRAIN_DRAW])
        losses = []
        for bi, chunk in enumerate(epoch_batches(samples, config.batch_size)):
            batch, targets, _ = _batch_inputs(
                dataset, chunk, config.ablate, [seed, epoch, _TRAIN_NOISE, bi], net.dtype
            )
            net.zero_grad()
            total, per_branch, _ = net.loss_and_backward(batch, targets, train=True)
            if not np.isfinite(total):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, batch {bi}: "
                    + ", ".join(f"{s}={v:.4g}" for s, v in per_branch.items())
                )
            opt.step(net.params(), net.grads())
            losses.append((total, len(chunk)))
        weights = np.array([n for _, n in losses], dtype=np.float64)
        record = {
            "epoch": epoch,
            "train_loss": float(np.dot([t for t, _ in losses], weights) / weights.sum()),
        }
        if val_idx is not None and config.val_samples:
            vs = hierarchical_sample(val_idx, config.val_samples, [seed, epoch, _VAL_DRAW])
            record["val"] = evaluate(net, dataset, vs, config.ablate, [seed, epoch]).summary()
        result.history.append(record)
        if log is not None:
            log(record)
    return result

