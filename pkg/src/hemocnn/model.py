"""Sequential container, the blood-cell CNN builder, and the training loop."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass
from typing import Callable, Iterator, List, Optional, Sequence, TextIO, Tuple

import numpy as np

from .data import CLASS_NAMES, INPUT_SHAPE, LabeledDataset, batches
from .errors import ConfigError, DataError, NumericError, ShapeError
from .layers import (Conv2D, Dense, Dropout, Flatten, Layer, MaxPool2D, ReLU, Rescale,
                     Sigmoid)
from .optimize import RMSProp, accuracy, bce_loss, validate_rmsprop
from .tensor import Precision, check_shape

log = logging.getLogger(__name__)


class SequentialModel:
    """An ordered stack of layers applied to ``[n, *input_shape]`` batches.

    Weights are drawn from ``seed``; dropout layers get their own generators
    spawned from the same seed.
    """

    def __init__(self, layers: Sequence[Layer], input_shape: Sequence[int], seed: int = 42,
                 precision: Precision | str = Precision.STANDARD,
                 class_names: Tuple[str, str] = CLASS_NAMES) -> None:
        self.layers: List[Layer] = list(layers)
        self.input_shape = check_shape(input_shape)
        self.seed = int(seed)
        self.dtype = Precision.of(precision).dtype
        self.class_names = tuple(class_names)

        init_seq, drop_seq = np.random.SeedSequence(self.seed).spawn(2)
        init_rng = np.random.default_rng(init_seq)
        counters: dict = {}
        shape = self.input_shape
        for layer in self.layers:
            try:
                shape = layer.build(shape, init_rng, self.dtype)
            except ShapeError as exc:
                raise ShapeError(f"input {self.input_shape} collapses at {layer!r}: {exc}") from None
            base = layer.label[0]
            counters[base] = counters.get(base, 0) + 1
            layer.name = f"{base}_{counters[base]}"
        self.output_shape = shape
        self.reseed(drop_seq)

    def reseed(self, seed) -> None:
        """Give every stochastic layer a fresh generator derived from ``seed``."""
        stochastic = [l for l in self.layers if hasattr(l, "rng")]
        seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        for layer, child in zip(stochastic, seq.spawn(len(stochastic))):
            layer.rng = np.random.default_rng(child)

    # -- parameters -------------------------------------------------------

    def parameters(self) -> Iterator[Tuple[str, np.ndarray, np.ndarray]]:
        for layer in self.layers:
            for key, p in layer.params.items():
                yield f"{layer.name}/{key}", p, layer.grads[key]

    @property
    def param_count(self) -> int:
        return sum(l.param_count for l in self.layers)

    def zero_grad(self) -> None:
        for layer in self.layers:
            layer.zero_grad()

    def astype(self, precision) -> "SequentialModel":
        self.dtype = Precision.of(precision).dtype
        for layer in self.layers:
            layer.astype(self.dtype)
        return self

    # -- computation ------------------------------------------------------

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        if x.ndim != len(self.input_shape) + 1 or tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(f"expected batch of {self.input_shape}, got {x.shape}")
        x = x.astype(self.dtype, copy=False)
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, g: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def predict(self, x: np.ndarray, batch_size: int = 32) -> np.ndarray:
        """Inference-mode class probabilities, one row per input."""
        if x.ndim == len(self.input_shape):
            x = x[None]
        if x.shape[0] == 0:
            raise ShapeError("predict needs at least one input")
        out = [self.forward(x[i:i + batch_size], training=False)
               for i in range(0, x.shape[0], batch_size)]
        return np.concatenate(out)

    # -- reporting --------------------------------------------------------

    def summary_rows(self) -> List[Tuple[str, Tuple[int, ...], int]]:
        return [(f"{l.name} ({l.label[1]})", l.output_shape, l.param_count)
                for l in self.layers]

    def summary(self) -> str:
        def fmt(shape):
            return "(" + ", ".join(["None", *map(str, shape)]) + ")"

        rule = "=" * 72
        lines = [f"{'Layer (type)':<34}{'Output Shape':<26}{'Param #':>12}", rule]
        for name, shape, count in self.summary_rows():
            lines.append(f"{name:<34}{fmt(shape):<26}{count:>12}")
        lines += [rule, f"Total params: {self.param_count}"]
        return "\n".join(lines)

    def config(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "seed": self.seed,
            "class_names": list(self.class_names),
            "layers": [{"kind": l.kind, "hyper": l.hyper()} for l in self.layers],
        }


def classifier_layers() -> List[Layer]:
    """rescale, three conv32/relu/pool blocks, a conv64 block, then the dense head."""
    layers: List[Layer] = [Rescale(1.0 / 255.0)]
    for filters in (32, 32, 32, 64):
        layers += [Conv2D(filters, 3), ReLU(), MaxPool2D(2)]
    layers += [Flatten(), Dense(64), ReLU(), Dropout(0.5), Dense(2), Sigmoid()]
    return layers


def build_paper_model(input_shape: Sequence[int] = INPUT_SHAPE, seed: int = 42,
                      precision: Precision | str = Precision.STANDARD) -> SequentialModel:
    return SequentialModel(classifier_layers(), input_shape, seed, precision)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    seed: int = 42
    learning_rate: float = 0.001
    rho: float = 0.9
    epsilon: float = 1e-7
    validation_fraction: float = 0.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError(f"validation fraction must be in [0, 1), "
                              f"got {self.validation_fraction}")
        validate_rmsprop(self.learning_rate, self.rho, self.epsilon)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


METRICS_HEADER = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc")


class CsvMetricsSink:
    """Writes one ``epoch,train_loss,train_acc,val_loss,val_acc`` row per record."""

    def __init__(self, stream: TextIO) -> None:
        self.stream = stream
        self.writer = csv.writer(stream, lineterminator="\n")
        self.writer.writerow(METRICS_HEADER)

    def __call__(self, record: EpochRecord) -> None:
        row = asdict(record)
        self.writer.writerow([row["epoch"]] + [f"{row[k]:.6f}" for k in METRICS_HEADER[1:]])
        self.stream.flush()


def evaluate(model: SequentialModel, data: LabeledDataset,
             batch_size: int = 32) -> Tuple[float, float]:
    """Inference-mode ``(loss, accuracy)`` over a whole dataset."""
    if len(data) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    preds = model.predict(data.images, batch_size)
    targets = data.onehot().astype(preds.dtype)
    return bce_loss(preds, targets).value, accuracy(preds, targets)


def fit(model: SequentialModel, train: LabeledDataset, val: LabeledDataset,
        cfg: TrainConfig = TrainConfig(),
        sink: Optional[Callable[[EpochRecord], None]] = None) -> List[EpochRecord]:
    """Minibatch RMSProp training; metrics come from full inference passes after
    each epoch.  Deterministic for a given model seed, data and ``cfg``."""
    for name, d in (("training", train), ("validation", val)):
        if len(d) == 0:
            raise DataError(f"{name} set is empty")
        if tuple(d.shape) != model.input_shape:
            raise ShapeError(f"{name} images are {d.shape}, model expects {model.input_shape}")

    opt = RMSProp(cfg.learning_rate, cfg.rho, cfg.epsilon)
    model.reseed([cfg.seed, 1])
    model.class_names = train.class_names
    history = []
    for epoch in range(1, cfg.epochs + 1):
        for b, (x, t) in enumerate(batches(train, cfg.batch_size, cfg.seed, epoch)):
            model.zero_grad()
            p = model.forward(x, training=True)
            res = bce_loss(p, t.astype(p.dtype))
            if not np.isfinite(res.value):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}")
            model.backward(res.grad)
            opt.step(model.parameters())
        if not all(np.all(np.isfinite(p)) for _, p, _ in model.parameters()):
            raise NumericError(f"non-finite parameters after epoch {epoch}")
        rec = EpochRecord(epoch, *evaluate(model, train, cfg.batch_size),
                          *evaluate(model, val, cfg.batch_size))
        log.info("epoch %d: %s", epoch, rec)
        history.append(rec)
        if sink is not None:
            sink(rec)
    return history
