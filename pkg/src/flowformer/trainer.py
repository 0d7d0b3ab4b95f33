"""Model assembly, training protocol, detection metrics, and timing.

A model is the wired pipeline

    encoder -> head.pre_transform_hook -> positional -> stack -> head

trained with Adam on binary cross-entropy, shuffled seeded batches, early
stopping on a held-out slice of the training windows (never the eval split),
and best-epoch weight restoration.  Runs that produce a non-finite loss are
flagged as diverged rather than raised, so hyperparameter sweeps survive
aggressive learning rates.

Throughput instrumentation follows a fixed protocol: training time is the
wall time of full optimization steps divided by batch size and averaged;
inference time is the median of four repeated timings per batch, averaged
over fifty randomly selected batches.  A process-wide lock keeps timed
sections from overlapping other timed work.
"""

from __future__ import annotations

import threading
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from . import nncore
from .encoders import Encoder, EncoderSpec
from .heads import Head, HeadSpec
from .ingest import WindowSet
from .nncore import Adam, Tensor
from .nncore.checkpoint import load_checkpoint, restore, save_checkpoint
from .nncore.tensor import binary_cross_entropy
from .preprocess import PreprocessorState
from .transformer import Positional, Stack, TransformerConfig

_TIMING_LOCK = threading.Lock()


class TrainerError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderSpec
    transformer: TransformerConfig
    head: HeadSpec
    window: int
    learning_rate: float
    batch_size: int = 128
    seed: int = 0


@dataclass(frozen=True)
class TrainProtocol:
    max_epochs: int = 20
    patience: int = 5
    val_fraction: float = 0.10
    restore_best: bool = True


@dataclass
class TrainHistory:
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    batch_times: list[float] = field(default_factory=list)
    best_epoch: int = 0
    epochs_run: int = 0
    status: str = "ok"

    @property
    def best_val_loss(self) -> float | None:
        if not self.val_losses or self.best_epoch == 0:
            return None
        return self.val_losses[self.best_epoch - 1]

    def summary(self) -> dict:
        return {
            "epochs_run": self.epochs_run,
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
            "final_train_loss": self.train_losses[-1] if self.train_losses else None,
            "status": self.status,
        }


@dataclass(frozen=True)
class Metrics:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def f1(self) -> float | None:
        denom = 2 * self.tp + self.fp + self.fn
        return None if denom == 0 else 2 * self.tp / denom

    @property
    def detection_rate(self) -> float | None:
        denom = self.tp + self.fn
        return None if denom == 0 else self.tp / denom

    @property
    def false_alarm_rate(self) -> float | None:
        denom = self.fp + self.tn
        return None if denom == 0 else self.fp / denom


class InferenceThroughput(NamedTuple):
    flows_per_sec: float
    batches_timed: int


@dataclass(frozen=True)
class TimingReport:
    train_flows_per_sec: float
    infer_flows_per_sec: float
    parameter_count: int
    infer_batches_timed: int = 0


class Model(nncore.Module):
    """Encoder + positional + stack + head with a single seeded generator."""

    def __init__(self, cfg: ModelConfig, state: PreprocessorState, *, dtype=np.float32):
        stack_cfg = _resolve_widths(cfg, state)
        self.cfg = cfg
        self.dtype = dtype
        rng = np.random.default_rng(cfg.seed)
        self.rng = rng
        self.encoder = Encoder(cfg.encoder, state, rng=rng, dtype=dtype)
        d_model = stack_cfg.d_model
        seq_length = cfg.head.sequence_length(cfg.window)
        self.positional = Positional(
            stack_cfg.positional, seq_length, d_model, rng=rng, dtype=dtype
        )
        self.stack = Stack(stack_cfg, rng=rng, dtype=dtype)
        self.head = Head(cfg.head, d_model, cfg.window, rng=rng, dtype=dtype)
        names = [name for name, _ in self.named_parameters()]
        if len(names) != len(set(names)):
            raise TrainerError("duplicate parameter names in model")

    def __call__(self, features: np.ndarray) -> Tensor:
        """Probability of the malicious class for each window in the batch."""
        x = Tensor(np.asarray(features, dtype=self.dtype))
        encoded = self.encoder(x)
        hooked = self.head.pre_transform_hook(encoded)
        positioned = self.positional(hooked)
        seq_out = self.stack(positioned)
        return self.head(seq_out)

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_snapshot(self, weights: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            p.data = weights[name].copy()

    def save(self, path) -> None:
        save_checkpoint(list(self.named_parameters()), path)

    def load(self, path) -> None:
        restore(list(self.named_parameters()), load_checkpoint(path))


def _resolve_widths(cfg: ModelConfig, state: PreprocessorState) -> TransformerConfig:
    """Bind the stack width to the encoder output width.

    Record-level encoders own d_model: a conflicting stack width is a
    construction error.  Categorical and passthrough encoders dictate the
    width, which must still honour head divisibility.
    """
    encoder_width = cfg.encoder.resulting_width(state)
    t_cfg = cfg.transformer
    if cfg.encoder.kind.is_record_level:
        if t_cfg.d_model is not None and t_cfg.d_model != encoder_width:
            raise TrainerError(
                f"stack d_model {t_cfg.d_model} != record encoder width {encoder_width}"
            )
    resolved = t_cfg.resolved(encoder_width)
    resolved.validate()
    return resolved


def build_model(cfg: ModelConfig, state: PreprocessorState, *, dtype=np.float32) -> Model:
    return Model(cfg, state, dtype=dtype)


def _epoch_loss(model: Model, window_set: WindowSet, batch_size: int) -> float:
    model.set_training(False)
    total = 0.0
    count = 0
    for batch in window_set.iter_batches(batch_size):
        probs = model(batch.features)
        loss = binary_cross_entropy(probs, batch.labels)
        total += loss.item() * batch.size
        count += batch.size
    return total / count


def train(
    model: Model,
    train_windows: WindowSet,
    protocol: TrainProtocol | None = None,
    *,
    monitor_fn: Callable[[Model, int], float] | None = None,
) -> TrainHistory:
    """Run the training protocol and leave the best-epoch weights in place.

    The early-stopping monitor is the loss on the final `val_fraction` of the
    training windows, unless a monitor_fn overrides it (test hook).  Stops at
    the first of: `patience` epochs without improvement, `max_epochs`.
    """
    protocol = protocol or TrainProtocol()
    cfg = model.cfg
    if len(train_windows) == 0:
        raise TrainerError("no training windows")

    n_val = 0
    fit_part, val_part = train_windows, None
    if monitor_fn is None:
        n_val = max(1, int(round(protocol.val_fraction * len(train_windows))))
        if n_val >= len(train_windows):
            raise TrainerError("training set too small for a validation slice")
        fit_part = train_windows.head(len(train_windows) - n_val)
        val_part = train_windows.tail(n_val)

    optimizer = Adam(model.parameters(), cfg.learning_rate)
    shuffle_rng = np.random.default_rng([cfg.seed, 0x5F0E])
    history = TrainHistory()
    best_monitor = np.inf
    best_weights = model.snapshot() if protocol.restore_best else None

    for epoch in range(1, protocol.max_epochs + 1):
        model.set_training(True)
        epoch_total, epoch_count = 0.0, 0
        diverged = False
        for batch in fit_part.iter_batches(cfg.batch_size, shuffle=True, rng=shuffle_rng):
            started = time.perf_counter()
            probs = model(batch.features)
            loss = binary_cross_entropy(probs, batch.labels)
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                diverged = True
                break
            loss.backward()
            optimizer.step()
            history.batch_times.append(time.perf_counter() - started)
            epoch_total += loss_value * batch.size
            epoch_count += batch.size
        history.epochs_run = epoch
        if diverged:
            history.status = "diverged"
            break
        history.train_losses.append(epoch_total / max(epoch_count, 1))

        if monitor_fn is not None:
            monitor = monitor_fn(model, epoch)
        else:
            monitor = _epoch_loss(model, val_part, cfg.batch_size)
        history.val_losses.append(monitor)
        if not np.isfinite(monitor):
            history.status = "diverged"
            break

        if monitor < best_monitor:
            best_monitor = monitor
            history.best_epoch = epoch
            if protocol.restore_best:
                best_weights = model.snapshot()
        elif epoch - history.best_epoch >= protocol.patience:
            break

    if protocol.restore_best and best_weights is not None and history.best_epoch > 0:
        model.load_snapshot(best_weights)
    model.set_training(False)
    return history


def evaluate(model: Model, eval_windows: WindowSet, threshold: float = 0.5, batch_size: int = 256) -> Metrics:
    """Confusion counts over all eval windows; malicious is the positive class."""
    if len(eval_windows) == 0:
        raise TrainerError("empty evaluation set")
    model.set_training(False)
    tp = tn = fp = fn = 0
    for batch in eval_windows.iter_batches(batch_size):
        probs = model(batch.features).data
        preds = probs > threshold
        actual = batch.labels.astype(bool)
        tp += int((preds & actual).sum())
        tn += int((~preds & ~actual).sum())
        fp += int((preds & ~actual).sum())
        fn += int((~preds & actual).sum())
    return Metrics(tp=tp, tn=tn, fp=fp, fn=fn)


def training_throughput_from_history(history: TrainHistory, batch_size: int) -> float | None:
    """Flows/sec implied by the per-batch times recorded during training."""
    if not history.batch_times:
        return None
    per_flow = np.mean([t / batch_size for t in history.batch_times])
    return float(1.0 / per_flow)


def measure_training_throughput(
    model: Model,
    window_set: WindowSet,
    *,
    n_batches: int = 10,
    batch_hook: Callable[[], None] | None = None,
) -> float:
    """Time full optimization steps and report flows/sec.

    One warm-up step runs untimed first.  Each timed step's wall time is
    divided by its batch size; throughput is the reciprocal of the mean
    per-flow time.  batch_hook (test instrumentation) runs inside the timed
    region.  Mutates the model: measuring training means training.
    """
    cfg = model.cfg
    batches = list(window_set.iter_batches(cfg.batch_size))[: n_batches + 1]
    if len(batches) < 3:
        raise TrainerError("need at least two timed batches plus warm-up")
    optimizer = Adam(model.parameters(), cfg.learning_rate)
    model.set_training(True)

    def step(batch) -> None:
        probs = model(batch.features)
        loss = binary_cross_entropy(probs, batch.labels)
        loss.backward()
        optimizer.step()
        if batch_hook is not None:
            batch_hook()

    with _TIMING_LOCK:
        step(batches[0])  # warm-up, untimed
        per_flow: list[float] = []
        for batch in batches[1:]:
            started = time.perf_counter()
            step(batch)
            per_flow.append((time.perf_counter() - started) / batch.size)
    model.set_training(False)
    return float(1.0 / np.mean(per_flow))


def measure_inference_throughput(
    model: Model,
    window_set: WindowSet,
    *,
    batch_size: int | None = None,
    sample_batches: int = 50,
    repeats: int = 4,
    seed: int = 0,
) -> InferenceThroughput:
    """Median-of-repeats batch timing averaged over randomly chosen batches.

    Each selected batch is timed `repeats` times and the median is kept (this
    defeats caching artefacts); the mean of those medians over the sampled
    batches gives the per-batch time, and flows/sec is batch_size over it.
    Fewer than `sample_batches` available batches is permitted with a warning
    and the actual count is recorded in the result.
    """
    if len(window_set) == 0:
        raise TrainerError("empty window set")
    batch_size = batch_size or model.cfg.batch_size
    model.set_training(False)
    starts = np.arange(0, len(window_set) - batch_size + 1, batch_size)
    if len(starts) == 0:
        starts = np.array([0])
        batch_size = len(window_set)
    n_available = len(starts)
    if n_available < sample_batches:
        warnings.warn(
            f"only {n_available} batches available for inference timing "
            f"(wanted {sample_batches})",
            stacklevel=2,
        )
    rng = np.random.default_rng([seed, 0x71ED])
    chosen = rng.choice(n_available, size=min(sample_batches, n_available), replace=False)

    with _TIMING_LOCK:
        warm = window_set.slice(np.arange(min(batch_size, len(window_set))))
        model(warm.features)  # warm-up, untimed
        batch_times: list[float] = []
        for index in chosen:
            lo = int(starts[index])
            batch = window_set.slice(np.arange(lo, lo + batch_size))
            times = []
            for _ in range(repeats):
                started = time.perf_counter()
                model(batch.features)
                times.append(time.perf_counter() - started)
            batch_times.append(float(np.median(times)))
    mean_time = float(np.mean(batch_times))
    return InferenceThroughput(batch_size / mean_time, len(batch_times))
