"""Supervised training loop, Adam optimizer, and the metric suite.

The loop trains one model on a labeled image set with cross-entropy
loss and plain Adam (no schedule). Everything is deterministic given
the config seed: the per-epoch shuffle comes from one seeded generator
and parameter init is owned by the model, so two runs from the same
seed write byte-identical epoch logs.

Metrics follow the one-vs-rest convention per class (accuracy,
precision, recall, F1) plus their macro averages, all derived from a
single confusion matrix with rows indexed by true class. Zero-division
cases (empty predicted or true support) score 0 by definition.

Valence/arousal/dominance ratings binarize at the scale midpoint,
boundary to the low class; categorical emotion labels pass through.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import tensor_autograd as ta
from .esvit_model import forward

__all__ = [
    "TrainConfig", "MetricsReport", "AdamState",
    "adam_init", "adam_step", "cross_entropy",
    "train", "evaluate", "metrics_from_confusion", "binarize_labels",
]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 64
    epochs: int = 100
    seed: int = 0
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    precision: str = "float64"      # "float32" | "float64"
    checkpoint_every: int = 0       # epochs between checkpoints; 0 = never

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("TrainConfig: batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("TrainConfig: epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("TrainConfig: learning_rate must be positive")
        b1, b2 = self.adam_betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ValueError("TrainConfig: betas must lie in [0, 1)")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"TrainConfig: precision must be 'float32' or "
                             f"'float64', got '{self.precision}'")
        if self.checkpoint_every < 0:
            raise ValueError("TrainConfig: checkpoint_every must be >= 0")


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_init(params) -> AdamState:
    state = AdamState()
    for name, p in params.items():
        state.m[name] = np.zeros_like(p.data)
        state.v[name] = np.zeros_like(p.data)
    return state


def adam_step(params, grads, state: AdamState, cfg: TrainConfig) -> AdamState:
    """One Adam update with bias correction; parameters change in place.

    params maps names to tensors, grads maps the same names to arrays
    (missing names are treated as zero gradient: moments still decay).
    """
    b1, b2 = cfg.adam_betas
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        g = np.asarray(g, dtype=p.data.dtype)
        if g.shape != p.data.shape:
            raise ValueError(f"adam_step: gradient shape {g.shape} does not "
                             f"match parameter '{name}' {p.data.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p.data -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return state


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def cross_entropy(logits: ta.Tensor, label: int) -> ta.Tensor:
    """Negative log softmax probability of the true class.

    Computed as logsumexp(z) - z[label] with a detached max shift, so
    the value is finite for any logit magnitude and the gradient is
    softmax(z) minus the one-hot target.
    """
    if logits.data.ndim != 1:
        raise ValueError(f"cross_entropy: logits must be 1-d, got shape "
                         f"{logits.shape}")
    k = logits.shape[0]
    label = int(label)
    if not 0 <= label < k:
        raise ValueError(f"cross_entropy: label {label} outside [0, {k})")
    dtype = logits.data.dtype
    shift = float(logits.data.max())
    row = ta.reshape(logits, (1, k))
    shifted = ta.add(row, ta.constant(np.full(k, -shift, dtype=dtype)))
    lse = ta.log(ta.sum_all(ta.exp(shifted)))
    picked = ta.reshape(ta.gather_rows(row, np.array([label])), ())
    total = ta.add(lse, ta.constant(np.asarray(shift, dtype=dtype)))
    return ta.sub(total, picked)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricsReport:
    confusion_matrix: np.ndarray     # rows = true class, cols = predicted
    accuracy: float                  # overall fraction correct
    per_class_accuracy: tuple
    per_class_precision: tuple
    per_class_recall: tuple
    per_class_f1: tuple
    macro_accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float

    def to_dict(self) -> dict:
        return {
            "confusion_matrix": self.confusion_matrix.tolist(),
            "accuracy": self.accuracy,
            "per_class": {
                "accuracy": list(self.per_class_accuracy),
                "precision": list(self.per_class_precision),
                "recall": list(self.per_class_recall),
                "f1": list(self.per_class_f1),
            },
            "macro": {
                "accuracy": self.macro_accuracy,
                "precision": self.macro_precision,
                "recall": self.macro_recall,
                "f1": self.macro_f1,
            },
        }


def _safe_div(num, den):
    return num / den if den > 0 else 0.0


def metrics_from_confusion(cm: np.ndarray) -> MetricsReport:
    """Derive the full metric suite from a confusion matrix.

    Per class k: precision = C[k,k] / column k, recall = C[k,k] / row k,
    F1 their harmonic mean, accuracy = (TP + TN) / total; empty
    denominators score 0.
    """
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError(f"metrics_from_confusion: matrix must be square, "
                         f"got {cm.shape}")
    if np.any(cm < 0) or not np.issubdtype(cm.dtype, np.integer):
        raise ValueError("metrics_from_confusion: counts must be "
                         "non-negative integers")
    total = int(cm.sum())
    k = cm.shape[0]
    acc, prec, rec, f1 = [], [], [], []
    for i in range(k):
        tp = int(cm[i, i])
        fn = int(cm[i].sum()) - tp
        fp = int(cm[:, i].sum()) - tp
        tn = total - tp - fn - fp
        acc.append(_safe_div(tp + tn, total))
        p = _safe_div(tp, tp + fp)
        r = _safe_div(tp, tp + fn)
        prec.append(p)
        rec.append(r)
        f1.append(_safe_div(2 * p * r, p + r))
    return MetricsReport(
        confusion_matrix=cm.copy(),
        accuracy=_safe_div(int(np.trace(cm)), total),
        per_class_accuracy=tuple(acc),
        per_class_precision=tuple(prec),
        per_class_recall=tuple(rec),
        per_class_f1=tuple(f1),
        macro_accuracy=float(np.mean(acc)),
        macro_precision=float(np.mean(prec)),
        macro_recall=float(np.mean(rec)),
        macro_f1=float(np.mean(f1)),
    )


def _example_pair(example):
    """Accept (image, label) tuples or objects with pixels/label."""
    if isinstance(example, tuple):
        img, label = example
    else:
        img, label = example.pixels, example.label
    return getattr(img, "pixels", img), int(label)


def evaluate(model, dataset, num_classes=None) -> MetricsReport:
    """Confusion matrix and metric suite for argmax predictions."""
    if len(dataset) == 0:
        raise ValueError("evaluate: empty dataset")
    k = num_classes or model.cfg.num_classes
    cm = np.zeros((k, k), dtype=np.int64)
    for example in dataset:
        img, label = _example_pair(example)
        if not 0 <= label < k:
            raise ValueError(f"evaluate: label {label} outside [0, {k})")
        pred = int(np.argmax(forward(img, model).data))
        cm[label, pred] += 1
    return metrics_from_confusion(cm)


# ---------------------------------------------------------------------------
# label preparation
# ---------------------------------------------------------------------------

def binarize_labels(raw_rating, task: str, scale_max: float = 9.0) -> int:
    """Class index for a raw annotation.

    Dimensional ratings (valence/arousal/dominance on a 1..scale_max
    scale) split at the midpoint: strictly above means high (1),
    midpoint and below means low (0). Categorical emotion labels pass
    through unchanged.
    """
    if task == "emotion":
        label = int(raw_rating)
        if label != raw_rating or label < 0:
            raise ValueError(f"binarize_labels: emotion label must be a "
                             f"non-negative integer, got {raw_rating!r}")
        return label
    if task not in ("valence", "arousal", "dominance"):
        raise ValueError(f"binarize_labels: unknown task '{task}'")
    rating = float(raw_rating)
    if not 1.0 <= rating <= scale_max:
        raise ValueError(f"binarize_labels: rating {rating} outside "
                         f"[1, {scale_max}]")
    midpoint = (1.0 + scale_max) / 2.0
    return 1 if rating > midpoint else 0


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

EPOCH_LOG_HEADER = ("epoch", "split", "loss", "accuracy", "precision",
                    "recall", "f1")


@dataclass
class EpochLog:
    rows: list = field(default_factory=list)

    def add(self, epoch, split, loss, report_or_acc, precision=None,
            recall=None, f1=None):
        if isinstance(report_or_acc, MetricsReport):
            r = report_or_acc
            values = (r.accuracy, r.macro_precision, r.macro_recall,
                      r.macro_f1)
        else:
            values = (report_or_acc, precision, recall, f1)
        self.rows.append({
            "epoch": epoch, "split": split, "loss": loss,
            "accuracy": values[0], "precision": values[1],
            "recall": values[2], "f1": values[3],
        })

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(EPOCH_LOG_HEADER)
            for row in self.rows:
                writer.writerow([
                    row["epoch"], row["split"], f"{row['loss']:.6f}",
                    f"{row['accuracy']:.6f}", f"{row['precision']:.6f}",
                    f"{row['recall']:.6f}", f"{row['f1']:.6f}",
                ])

    def column(self, name, split="train"):
        return [row[name] for row in self.rows if row["split"] == split]


def train(model, dataset, cfg: TrainConfig, val_dataset=None,
          checkpoint_dir=None) -> EpochLog:
    """Train in place; returns the per-epoch log.

    Each epoch shuffles with the config-seeded generator, walks the
    set in batches, and records mean loss plus the metric suite over
    the predictions made during the epoch (each made before its
    update). Validation rows are appended when a val set is given.
    """
    if len(dataset) == 0:
        raise ValueError("train: empty dataset")
    if np.dtype(cfg.precision) != model.dtype:
        raise ValueError(f"train: config precision {cfg.precision} does not "
                         f"match model dtype {model.dtype}")
    k = model.cfg.num_classes
    pairs = [_example_pair(e) for e in dataset]
    for _, label in pairs:
        if not 0 <= label < k:
            raise ValueError(f"train: label {label} outside [0, {k})")

    rng = np.random.default_rng(cfg.seed)
    state = adam_init(model.params)
    log = EpochLog()
    n = len(pairs)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        loss_sum = 0.0
        cm = np.zeros((k, k), dtype=np.int64)
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            model.zero_grads()
            batch_loss = None
            for idx in batch:
                img, label = pairs[idx]
                logits = forward(img, model)
                cm[label, int(np.argmax(logits.data))] += 1
                loss = cross_entropy(logits, label)
                batch_loss = loss if batch_loss is None \
                    else ta.add(batch_loss, loss)
            batch_loss = ta.scale(batch_loss, 1.0 / len(batch))
            ta.backward(batch_loss)
            loss_sum += float(batch_loss.data) * len(batch)
            grads = {name: p.grad for name, p in model.params.items()
                     if p.grad is not None}
            state = adam_step(model.params, grads, state, cfg)
        report = metrics_from_confusion(cm)
        log.add(epoch, "train", loss_sum / n, report)
        if val_dataset is not None:
            val_report = evaluate(model, val_dataset)
            val_loss = _mean_loss(model, val_dataset)
            log.add(epoch, "val", val_loss, val_report)
        if checkpoint_dir is not None and cfg.checkpoint_every > 0 \
                and epoch % cfg.checkpoint_every == 0:
            model.save(f"{checkpoint_dir}/checkpoint_epoch_{epoch:04d}.json")
    return log


def _mean_loss(model, dataset):
    total = 0.0
    for example in dataset:
        img, label = _example_pair(example)
        total += float(cross_entropy(forward(img, model), label).data)
    return total / len(dataset)
