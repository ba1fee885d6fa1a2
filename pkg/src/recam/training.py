"""AdamW fine-tuning with periodic validation, metrics and prediction files."""

from __future__ import annotations

import json
import math
from fractions import Fraction
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .data import NUM_OPTIONS, ChunkSet, RecamSample, Vocab, build_chunks
from .model import RecamModel, forward_sample, loss as sample_loss
from .tensor import ContractError, Tape


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"training diverged at update {step}: loss = {value}")
        self.step = step


@dataclass
class TrainConfig:
    batch_size: int = 32
    micro_batch_size: int | None = None
    lr: float = 3e-5
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    weight_decay: float = 0.01
    epochs: int = 15
    validation_interval: int = 250
    warmup_fraction: float = 0.06
    selection: str = "accuracy"
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or (self.micro_batch_size is not None and self.micro_batch_size < 1):
            raise ValueError("batch sizes must be positive")
        if self.lr <= 0 or self.eps <= 0 or self.weight_decay < 0:
            raise ValueError("lr and eps must be positive, weight_decay non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.validation_interval < 1 or self.epochs < 1:
            raise ValueError("validation_interval and epochs must be at least 1")
        if not 0 <= self.warmup_fraction < 1:
            raise ValueError("warmup_fraction must lie in [0, 1)")
        if self.selection not in ("accuracy", "loss"):
            raise ValueError(f"selection must be 'accuracy' or 'loss', got {self.selection!r}")


# ------------------------------------------------------------------ optimizer


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adamw_step(params: dict[str, T.Tensor], grads: dict[str, np.ndarray], state: OptimizerState,
               lr: float, config: TrainConfig) -> None:
    """One bias-corrected Adam update with decoupled weight decay, in place."""
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.shape:
            raise ContractError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + config.eps)
        p.data = p.data - lr * update - lr * config.weight_decay * p.data


def lr_schedule(step: float, total_steps: int, peak: float, warmup_fraction: float) -> float:
    """Linear warmup to ``peak`` then linear decay to zero at ``total_steps``."""
    warmup = int(round(warmup_fraction * total_steps))
    if warmup > 0 and step < warmup:
        return peak * step / warmup
    if total_steps == warmup:
        return peak
    return peak * max(0.0, (total_steps - step) / (total_steps - warmup))


# -------------------------------------------------------------------- metrics


METRICS_SCHEMA = {
    "type": "object",
    "required": ["accuracy", "macro_f1", "weighted_f1", "per_class", "count", "confusion"],
    "properties": {
        "accuracy": {"type": "number", "minimum": 0, "maximum": 1},
        "macro_f1": {"type": "number", "minimum": 0, "maximum": 1},
        "weighted_f1": {"type": "number", "minimum": 0, "maximum": 1},
        "count": {"type": "integer", "minimum": 0},
        "per_class": {
            "type": "array",
            "minItems": NUM_OPTIONS,
            "maxItems": NUM_OPTIONS,
            "items": {
                "type": "object",
                "required": ["label", "precision", "recall", "f1", "support"],
                "properties": {
                    "label": {"type": "integer"},
                    "precision": {"type": "number", "minimum": 0, "maximum": 1},
                    "recall": {"type": "number", "minimum": 0, "maximum": 1},
                    "f1": {"type": "number", "minimum": 0, "maximum": 1},
                    "support": {"type": "integer", "minimum": 0},
                },
            },
        },
        "confusion": {"type": "array", "items": {"type": "array", "items": {"type": "integer"}}},
    },
}


@dataclass
class MetricsReport:
    accuracy: float
    macro_f1: float
    weighted_f1: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    support: list[int]
    count: int
    confusion: list[list[int]]

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "weighted_f1": self.weighted_f1,
            "count": self.count,
            "per_class": [
                {"label": c, "precision": self.precision[c], "recall": self.recall[c],
                 "f1": self.f1[c], "support": self.support[c]}
                for c in range(len(self.f1))
            ],
            "confusion": self.confusion,
        }


def compute_metrics(gold: Sequence[int], pred: Sequence[int], num_classes: int = NUM_OPTIONS) -> MetricsReport:
    """Accuracy plus per-class, macro and support-weighted F1.

    Rows of the confusion matrix are gold labels, columns predictions.  Any
    zero denominator yields 0 for that quantity.
    """
    if len(gold) != len(pred):
        raise ContractError(f"{len(gold)} gold labels vs {len(pred)} predictions")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    for g, p in zip(gold, pred):
        cm[g, p] += 1
    n = len(gold)
    tp = [int(v) for v in np.diag(cm)]
    pred_count = [int(v) for v in cm.sum(axis=0)]
    support = [int(v) for v in cm.sum(axis=1)]
    # exact rational arithmetic on the integer counts, rounded once at the end
    pr = [Fraction(tp[c], pred_count[c]) if pred_count[c] else Fraction(0) for c in range(num_classes)]
    rc = [Fraction(tp[c], support[c]) if support[c] else Fraction(0) for c in range(num_classes)]
    f1 = [2 * p * r / (p + r) if p + r else Fraction(0) for p, r in zip(pr, rc)]
    accuracy = Fraction(sum(tp), n) if n else Fraction(0)
    weighted = sum(Fraction(support[c], n) * f1[c] for c in range(num_classes)) if n else Fraction(0)
    return MetricsReport(
        accuracy=float(accuracy),
        macro_f1=float(sum(f1) / num_classes),
        weighted_f1=float(weighted),
        precision=[float(v) for v in pr],
        recall=[float(v) for v in rc],
        f1=[float(v) for v in f1],
        support=support,
        count=n,
        confusion=cm.tolist(),
    )


# ----------------------------------------------------------------- evaluation


def prepare(samples: Sequence[RecamSample], vocab: Vocab, max_seq_len: int) -> list[ChunkSet]:
    return [build_chunks(s, vocab, max_seq_len) for s in samples]


def _as_chunks(model: RecamModel, data, vocab: Vocab | None) -> list[ChunkSet]:
    if data and isinstance(data[0], ChunkSet):
        return list(data)
    if vocab is None:
        raise ContractError("a vocabulary is required to chunk raw samples")
    return prepare(data, vocab, model.config.max_seq_len)


def run_inference(model: RecamModel, data, vocab: Vocab | None = None) -> list[tuple[np.ndarray, np.ndarray, int]]:
    """``(logits, probabilities, answer)`` per sample, without recording a tape."""
    out = []
    for cs in _as_chunks(model, data, vocab):
        res = forward_sample(model, cs)
        out.append((res.logits.data, res.probabilities, res.answer))
    return out


def _check_labels(chunks: Sequence[ChunkSet]) -> list[int]:
    labels = []
    for i, cs in enumerate(chunks):
        if cs.sample is None or cs.sample.label is None:
            raise ContractError(f"sample {i} is unlabeled")
        labels.append(cs.sample.label)
    return labels


def evaluate(model: RecamModel, data, vocab: Vocab | None = None) -> MetricsReport:
    chunks = _as_chunks(model, data, vocab)
    gold = _check_labels(chunks)
    preds = [answer for _, _, answer in run_inference(model, chunks)]
    return compute_metrics(gold, preds)


def _loss_and_accuracy(model: RecamModel, chunks: Sequence[ChunkSet]) -> tuple[float, float]:
    gold = _check_labels(chunks)
    losses, hits = [], 0
    for (logits, _, answer), g in zip(run_inference(model, chunks), gold):
        m = logits.max()
        losses.append(float(m + np.log(np.exp(logits - m).sum()) - logits[g]))
        hits += answer == g
    return float(np.mean(losses)), hits / len(gold)


def predict_file(model: RecamModel, samples: Sequence[RecamSample], vocab: Vocab, path) -> None:
    """JSONL predictions preceded by one header line."""
    header = {"format": "recam-predictions", "version": 1, "fields": ["index", "prediction", "probabilities"]}
    lines = [json.dumps(header)]
    for i, (_, probs, answer) in enumerate(run_inference(model, samples, vocab)):
        lines.append(json.dumps({"index": i, "prediction": answer, "probabilities": [float(p) for p in probs]}))
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write predictions to {path}: {exc}") from exc


# ------------------------------------------------------------------- training


@dataclass
class HistoryRow:
    step: int
    lr: float
    train_loss: float
    val_loss: float
    val_acc: float


@dataclass
class TrainResult:
    best_arrays: dict[str, np.ndarray]
    best_step: int
    history: list[HistoryRow]
    epoch_losses: list[float]
    final_arrays: dict[str, np.ndarray]

    def history_csv(self) -> str:
        lines = ["step,lr,train_loss,val_loss,val_acc"]
        for r in self.history:
            lines.append(f"{r.step},{r.lr!r},{r.train_loss!r},{r.val_loss!r},{r.val_acc!r}")
        return "\n".join(lines) + "\n"


def batch_gradients(model: RecamModel, batch: Sequence[ChunkSet], micro_batch_size: int | None = None,
                    rng: np.random.Generator | None = None) -> tuple[dict[str, np.ndarray], float]:
    """Mean loss gradient over ``batch``.

    Per-sample gradients are summed in batch order into one accumulator, so
    the micro-batch split changes memory use but not a single bit of the result.
    """
    params = model.params
    names = list(params)
    leaves = [params[n] for n in names]
    total = {n: np.zeros_like(params[n].data) for n in names}
    loss_sum = 0.0
    step = micro_batch_size or len(batch)
    for start in range(0, len(batch), step):
        for cs in batch[start : start + step]:
            with Tape() as tape:
                out = forward_sample(model, cs, rng)
                value = sample_loss(out.logits, cs.sample.label)
            grads = T.backward(value, tape, leaves)
            for n, leaf in zip(names, leaves):
                total[n] += grads[leaf]
            loss_sum += value.item()
    scale = 1.0 / len(batch)
    return {n: g * scale for n, g in total.items()}, loss_sum * scale


def train(model: RecamModel, train_data, val_data, config: TrainConfig, vocab: Vocab | None = None,
          log: Callable[[str], None] | None = None) -> TrainResult:
    """Mini-batch AdamW training with best-checkpoint retention.

    Validation runs every ``validation_interval`` updates and once more after
    the final update if that update was not already a validation point.
    """
    train_chunks = _as_chunks(model, train_data, vocab)
    if not train_chunks:
        raise ContractError("training set is empty")
    _check_labels(train_chunks)
    val_chunks = _as_chunks(model, val_data, vocab) if val_data else train_chunks

    n = len(train_chunks)
    batches_per_epoch = math.ceil(n / config.batch_size)
    total_steps = batches_per_epoch * config.epochs
    shuffle_rng = np.random.default_rng(config.seed)
    dropout_rng = np.random.default_rng([config.seed, 1]) if model.config.dropout > 0 else None
    state = OptimizerState()
    history: list[HistoryRow] = []
    epoch_losses: list[float] = []
    best = (None, -1, None)
    window_losses: list[float] = []

    def validate(step: int, lr: float):
        nonlocal best
        val_loss, val_acc = _loss_and_accuracy(model, val_chunks)
        train_loss = float(np.mean(window_losses)) if window_losses else float("nan")
        window_losses.clear()
        history.append(HistoryRow(step, lr, train_loss, val_loss, val_acc))
        key = val_acc if config.selection == "accuracy" else -val_loss
        if best[0] is None or key > best[0]:
            best = (key, step, model.arrays())
        if log:
            log(f"step {step}: lr={lr:.3g} train_loss={train_loss:.4f} val_loss={val_loss:.4f} val_acc={val_acc:.4f}")

    step = 0
    lr = 0.0
    for _ in range(config.epochs):
        order = shuffle_rng.permutation(n)
        epoch_loss = []
        for b in range(batches_per_epoch):
            batch = [train_chunks[i] for i in order[b * config.batch_size : (b + 1) * config.batch_size]]
            lr = lr_schedule(step, total_steps, config.lr, config.warmup_fraction)
            grads, batch_loss = batch_gradients(model, batch, config.micro_batch_size, dropout_rng)
            if not math.isfinite(batch_loss):
                raise TrainingDiverged(step + 1, batch_loss)
            adamw_step(model.params, grads, state, lr, config)
            step += 1
            window_losses.append(batch_loss)
            epoch_loss.append(batch_loss)
            if step % config.validation_interval == 0:
                validate(step, lr)
        epoch_losses.append(float(np.mean(epoch_loss)))
    if step % config.validation_interval != 0:
        validate(step, lr)
    return TrainResult(best[2], best[1], history, epoch_losses, model.arrays())
