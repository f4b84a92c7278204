"""Training protocol: stratified splits with label hiding, Adam, the
semi-supervised loop, and repeated-run summaries.

Each optimization step consumes one labeled batch (supervised cross-entropy)
and, when the smoothness regularizer is on, one unlabeled batch of the same
size drawn from an independently shuffled cycle. All randomness in a run
(parameter init, shuffles, perturbation seeds) comes from one Rng stream
seeded by the config, so a run is reproducible bit for bit. A run without
the regularizer consumes none of the regularizer's random draws, which keeps
it bitwise identical to a plain supervised trainer.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import ops
from .model import ModelSpec, ParameterSet, build_cnn, build_mlp, forward, init_params
from .rng import Rng
from .tensor import Tensor, backward
from .vat import VatConfig, combined_loss, vat_regularizer

MODEL_KINDS = ("mlp", "cnn_small", "cnn_large")

EVAL_CHUNK = 64  # bounds the transient conv unfold buffer during scoring


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 32
    epochs: int = 100
    labeled_ratio: float = 0.2
    repeats: int = 3
    seed: int = 0
    use_vat: bool = True
    vat: VatConfig = field(default_factory=VatConfig)
    model_kind: str = "cnn_small"
    input_channels: int = 1
    vat_on_labeled: bool = False

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be at least 1, got {self.epochs}")
        if not 0.0 < self.labeled_ratio <= 1.0:
            raise ValueError(f"labeled_ratio must lie in (0, 1], got {self.labeled_ratio}")
        if self.repeats < 1:
            raise ValueError(f"repeats must be at least 1, got {self.repeats}")
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"model_kind must be one of {MODEL_KINDS}, got {self.model_kind!r}")


@dataclass(frozen=True)
class SplitSpec:
    train_indices: np.ndarray
    test_indices: np.ndarray
    labeled_indices: np.ndarray
    unlabeled_indices: np.ndarray

    def __post_init__(self):
        train = set(self.train_indices.tolist())
        test = set(self.test_indices.tolist())
        labeled = set(self.labeled_indices.tolist())
        unlabeled = set(self.unlabeled_indices.tolist())
        if train & test:
            raise ValueError("train and test indices overlap")
        if labeled & unlabeled:
            raise ValueError("labeled and unlabeled indices overlap")
        if labeled | unlabeled != train:
            raise ValueError("labeled and unlabeled do not partition train")


@dataclass
class EpochMetrics:
    epoch: int
    ce_loss: float
    vat_loss: float
    train_accuracy: float
    test_accuracy: float

    def __post_init__(self):
        if not 0.0 <= self.train_accuracy <= 1.0 or not 0.0 <= self.test_accuracy <= 1.0:
            raise ValueError("accuracies must lie in [0, 1]")
        if self.ce_loss < 0 or self.vat_loss < -1e-12:
            raise ValueError("losses must be nonnegative")


def make_splits(labels, labeled_ratio: float, rng: Rng, hide_rng: Rng | None = None) -> SplitSpec:
    """Stratified 75/25 train/test split, then hide labels within train.

    Per class: a seeded shuffle sends floor(25%) of the samples to test and
    the rest to train; floor(labeled_ratio * train-count) of the (sorted)
    train samples stay labeled, chosen by `hide_rng`. Passing a separate
    hide_rng lets repeats rehide labels while keeping the outer split fixed.
    """
    if not 0.0 < labeled_ratio <= 1.0:
        raise ValueError(f"labeled_ratio must lie in (0, 1], got {labeled_ratio}")
    y = np.asarray(labels, dtype=np.int64)
    if hide_rng is None:
        hide_rng = rng
    classes = np.unique(y)
    train_parts, test_parts = [], []
    for c in classes:
        idx = np.flatnonzero(y == c)
        if len(idx) < 2:
            raise ValueError(f"class {c} has fewer than 2 samples")
        shuffled = idx[rng.permutation(len(idx))]
        n_test = len(idx) // 4
        test_parts.append(shuffled[:n_test])
        train_parts.append(np.sort(shuffled[n_test:]))
    labeled_parts, unlabeled_parts = [], []
    for part in train_parts:
        n_lab = int(np.floor(labeled_ratio * len(part)))
        order = part[hide_rng.permutation(len(part))]
        labeled_parts.append(order[:n_lab])
        unlabeled_parts.append(order[n_lab:])
    return SplitSpec(
        train_indices=np.sort(np.concatenate(train_parts)),
        test_indices=np.sort(np.concatenate(test_parts)),
        labeled_indices=np.sort(np.concatenate(labeled_parts)),
        unlabeled_indices=np.sort(np.concatenate(unlabeled_parts)),
    )


class AdamState:
    """First and second moment estimates plus the shared step counter."""

    def __init__(self, m: dict[str, np.ndarray], v: dict[str, np.ndarray], t: int = 0):
        self.m = m
        self.v = v
        self.t = t

    @classmethod
    def for_params(cls, pset: ParameterSet) -> "AdamState":
        return cls({k: np.zeros(p.shape) for k, p in pset.params.items()},
                   {k: np.zeros(p.shape) for k, p in pset.params.items()})


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def adam_step(pset: ParameterSet, grads: dict[str, np.ndarray],
              state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place."""
    missing = set(pset.params) - set(grads)
    if missing:
        raise ValueError(f"adam_step missing gradients for {sorted(missing)}")
    state.t += 1
    c1 = 1.0 - ADAM_BETA1 ** state.t
    c2 = 1.0 - ADAM_BETA2 ** state.t
    for name, p in pset.params.items():
        g = np.asarray(grads[name])
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter is {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)


def spec_for(cfg: TrainConfig) -> ModelSpec:
    if cfg.model_kind == "mlp":
        return build_mlp()
    size = "small" if cfg.model_kind == "cnn_small" else "large"
    return build_cnn(input_channels=cfg.input_channels, size=size)


def evaluate(spec: ModelSpec, pset: ParameterSet, x: np.ndarray, y) -> float:
    """Eval-mode accuracy; argmax ties resolve to the lower class index."""
    y = np.asarray(y, dtype=np.int64)
    if len(x) == 0:
        raise ValueError("evaluate needs at least one sample")
    scorer = pset.detached()  # no gradient graph, activations free as we go
    hits = 0
    for start in range(0, len(x), EVAL_CHUNK):
        chunk = x[start:start + EVAL_CHUNK]
        logits = forward(spec, scorer, Tensor(chunk), mode="eval").data
        hits += int((logits.argmax(axis=1) == y[start:start + EVAL_CHUNK]).sum())
    return hits / len(x)


class _Cycler:
    """Endless shuffled index stream; reshuffles whenever it runs dry."""

    def __init__(self, n: int, rng: Rng):
        self.n = n
        self.rng = rng
        self.order = rng.permutation(n)
        self.pos = 0

    def take(self, k: int) -> np.ndarray:
        parts = []
        while k > 0:
            if self.pos == self.n:
                self.order = self.rng.permutation(self.n)
                self.pos = 0
            grab = min(k, self.n - self.pos)
            parts.append(self.order[self.pos:self.pos + grab])
            self.pos += grab
            k -= grab
        return np.concatenate(parts)


@dataclass
class RunResult:
    seed: int
    spec: ModelSpec
    pset: ParameterSet
    metrics: list[EpochMetrics]
    split: SplitSpec


def default_splits(labels, cfg: TrainConfig) -> SplitSpec:
    """The split a standalone train_run uses: outer split and label hiding on
    separate streams jumped off the run seed."""
    return make_splits(labels, cfg.labeled_ratio,
                       Rng(cfg.seed).jumped(1), hide_rng=Rng(cfg.seed).jumped(2))


def train_run(cfg: TrainConfig, dataset, split: SplitSpec | None = None) -> RunResult:
    """One full training run; returns the final model plus per-epoch metrics."""
    x = np.asarray(dataset.x, dtype=np.float64)
    y = np.asarray(dataset.y, dtype=np.int64)
    if len(x) == 0:
        raise ValueError("dataset is empty")
    if split is None:
        split = default_splits(y, cfg)

    rng = Rng(cfg.seed)
    spec = spec_for(cfg)
    pset = init_params(spec, rng)
    adam = AdamState.for_params(pset)

    lx, ly = x[split.labeled_indices], y[split.labeled_indices]
    tx, ty = x[split.test_indices], y[split.test_indices]
    if len(lx) == 0:
        raise ValueError("labeled set is empty; labeled_ratio too small for this dataset")

    vat_pool = x[split.unlabeled_indices]
    if cfg.vat_on_labeled:
        vat_pool = np.concatenate([vat_pool, lx]) if len(vat_pool) else lx
    use_vat = cfg.use_vat
    if use_vat and len(vat_pool) == 0:
        warnings.warn("no unlabeled samples available; falling back to supervised training")
        use_vat = False
    cycler = _Cycler(len(vat_pool), rng) if use_vat else None

    n_labeled = len(lx)
    metrics: list[EpochMetrics] = []
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n_labeled)
        ce_sum = 0.0
        vat_sum = 0.0
        steps = 0
        for start in range(0, n_labeled, cfg.batch_size):
            bidx = perm[start:start + cfg.batch_size]
            logits = forward(spec, pset, Tensor(lx[bidx]), mode="train",
                             update_running_stats=True)
            ce = ops.cross_entropy(logits, ly[bidx])
            if use_vat:
                ub = vat_pool[cycler.take(cfg.batch_size)]
                reg = vat_regularizer(spec, pset, Tensor(ub), cfg.vat, rng)
                loss = combined_loss(ce, reg, cfg.vat.alpha)
                vat_sum += reg.item()
            else:
                loss = ce
            backward(loss)
            adam_step(pset, {k: t.grad for k, t in pset.params.items()}, adam,
                      cfg.learning_rate)
            for t in pset.params.values():
                t.zero_grad()
            ce_sum += ce.item()
            steps += 1
        metrics.append(EpochMetrics(
            epoch=epoch,
            ce_loss=ce_sum / steps,
            vat_loss=(vat_sum / steps) if use_vat else 0.0,
            train_accuracy=evaluate(spec, pset, lx, ly),
            test_accuracy=evaluate(spec, pset, tx, ty),
        ))
    return RunResult(cfg.seed, spec, pset, metrics, split)


@dataclass
class ProtocolSummary:
    mean: float
    std: float
    final_accuracies: list[float]
    runs: list[RunResult]


def run_protocol(cfg: TrainConfig, dataset, offset_seeds: bool = True) -> ProtocolSummary:
    """Repeat training with seeds seed..seed+repeats-1 and summarize.

    The outer 75/25 split is fixed (derived from the base seed); only label
    hiding, init, and shuffling vary across repeats. `offset_seeds=False` is
    a test hook that runs every repeat at the base seed.
    """
    y = np.asarray(dataset.y, dtype=np.int64)
    runs = []
    for r in range(cfg.repeats):
        run_seed = cfg.seed + r if offset_seeds else cfg.seed
        split = make_splits(y, cfg.labeled_ratio,
                            Rng(cfg.seed).jumped(1), hide_rng=Rng(run_seed).jumped(2))
        run_cfg = replace(cfg, seed=run_seed)
        runs.append(train_run(run_cfg, dataset, split=split))
    finals = [run.metrics[-1].test_accuracy for run in runs]
    mean = float(np.mean(finals))
    std = float(np.std(finals, ddof=1)) if len(finals) > 1 else 0.0
    return ProtocolSummary(mean, std, finals, runs)


def write_metrics(path, metrics: list[EpochMetrics]) -> None:
    with open(path, "w") as f:
        f.write("epoch,ce_loss,vat_loss,train_acc,test_acc\n")
        for m in metrics:
            f.write(f"{m.epoch},{m.ce_loss:.6g},{m.vat_loss:.6g},"
                    f"{m.train_accuracy:.6g},{m.test_accuracy:.6g}\n")


def write_summary(path, mean: float, std: float) -> None:
    with open(path, "w") as f:
        f.write(f"final_acc_mean={mean:.6g}\n")
        f.write(f"final_acc_std={std:.6g}\n")
