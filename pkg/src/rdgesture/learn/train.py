"""Training loop with best-of-N selection, evaluation, baselines and cost accounting."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..sim import GESTURES
from .metrics import EvalReport, evaluate_predictions
from .model import CnnGru, CnnGruSpec, cross_entropy
from .optim import Adam

log = logging.getLogger(__name__)

CLASS_NAMES = [g.value for g in GESTURES]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    batch_size: int = 16
    max_epochs: int = 100
    patience: int = 10
    runs: int = 5
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(self.betas))
        if self.learning_rate <= 0 or self.eps <= 0 or self.weight_decay < 0:
            raise ValueError("learning rate and eps must be positive, weight decay >= 0")
        if self.batch_size < 1 or self.max_epochs < 1 or self.runs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs, runs and patience must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train keys: {sorted(unknown)}")
        return cls(**d)


def clips_to_arrays(clips) -> tuple[np.ndarray, np.ndarray]:
    """Stack labelled clips into (X, y); unlabelled clips are dropped."""
    clips = [c for c in clips if c.label is not None]
    if not clips:
        return np.zeros((0, 32, 64, 64), dtype=np.float32), np.zeros(0, dtype=int)
    X = np.stack([c.frames for c in clips]).astype(np.float32, copy=False)
    y = np.array([c.label.label for c in clips], dtype=int)
    return X, y


def _as_xy(data):
    if isinstance(data, tuple) and len(data) == 2:
        X, y = data
        return np.asarray(X), np.asarray(y, dtype=int)
    return clips_to_arrays(data)


# ---------------------------------------------------------------- costs


def conv_cost(in_size: int, c_in: int, c_out: int, k: int, s: int) -> tuple[int, int]:
    """(params, FLOPs per frame) of a padded conv layer; FLOPs = 2 x multiply-adds."""
    out = (in_size + 2 * (k // 2) - k) // s + 1
    return k * k * c_in * c_out + c_out, 2 * out * out * c_out * k * k * c_in


def gru_cost(input_dim: int, hidden: int, steps: int) -> tuple[int, int]:
    """(params, FLOPs) of a GRU over ``steps``: three gates, input and recurrent products."""
    params = 3 * (input_dim * hidden + hidden * hidden + 2 * hidden)
    return params, 2 * steps * 3 * (input_dim + hidden) * hidden


def affine_cost(n_in: int, n_out: int) -> tuple[int, int]:
    return n_in * n_out + n_out, 2 * n_in * n_out


def count_params_flops(spec: CnnGruSpec = CnnGruSpec()) -> tuple[int, float]:
    """(trainable scalars, GFLOPs per clip, forward pass only)."""
    params, flops = 0, 0
    for (size, c_in, _), (c_out, k, s) in zip(spec.conv_shapes(), spec.conv):
        p, f = conv_cost(size, c_in, c_out, k, s)
        params += p
        flops += f * spec.num_frames
    p, f = gru_cost(spec.feature_dim, spec.gru_hidden, spec.num_frames)
    params += p
    flops += f
    p, f = affine_cost(spec.gru_hidden, spec.num_classes)
    params += p
    flops += f
    return params, flops / 1e9


# ---------------------------------------------------------------- training


@dataclass
class RunResult:
    run: int
    params: np.ndarray
    best_epoch: int
    val_accuracy: float
    val_loss: float
    loss_curve: list = field(default_factory=list)


@dataclass
class TrainResult:
    model: CnnGru
    report: Optional[EvalReport]
    runs: list
    selected: int

    @property
    def loss_curve(self) -> list:
        return self.runs[self.selected].loss_curve


def evaluate(model: CnnGru, data, batch_size: int = 64) -> EvalReport:
    """Clip-level metrics of ``model`` on labelled clips or an (X, y) pair."""
    X, y = _as_xy(data)
    pred = model.predict(X, batch_size)
    rep = evaluate_predictions(y, pred, model.spec.num_classes, _names(model.spec.num_classes))
    rep.params, rep.gflops = count_params_flops(model.spec)
    return rep


def _names(n):
    return CLASS_NAMES if n == len(CLASS_NAMES) else [str(i) for i in range(n)]


def _val_metrics(model, X, y, batch_size=64):
    losses, correct = 0.0, 0
    for i in range(0, len(X), batch_size):
        logits, _ = model.forward(X[i : i + batch_size])
        losses += cross_entropy(logits, y[i : i + batch_size]) * len(logits)
        correct += int(np.sum(np.argmax(logits, axis=1) == y[i : i + batch_size]))
    return 100.0 * correct / len(X), losses / len(X)


def train_run(
    spec: CnnGruSpec,
    cfg: TrainConfig,
    run: int,
    Xtr,
    ytr,
    Xva,
    yva,
    dtype=np.float32,
    epoch_callback: Optional[Callable] = None,
) -> RunResult:
    """One seeded training run with early stopping on validation accuracy.

    Stops after ``cfg.patience`` epochs without a strict improvement, or as
    soon as validation accuracy reaches 100 %. Returns the best epoch's
    parameters.
    """
    seeds = np.random.SeedSequence([cfg.rng_seed, run]).generate_state(3)
    model = CnnGru(spec, dtype=dtype).init(int(seeds[0]))
    opt = Adam(model.params, cfg.learning_rate, cfg.betas, cfg.eps, cfg.weight_decay)
    shuffle = np.random.default_rng(int(seeds[1]))
    drop = np.random.default_rng(int(seeds[2]))
    best = None
    curve = []
    stale = 0
    n = len(Xtr)
    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle.permutation(n)
        total = 0.0
        for i in range(0, n, cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            loss, grad = model.loss_and_grad(Xtr[idx], ytr[idx], int(drop.integers(2**63)))
            opt.step(grad)
            model.touch()
            total += loss * len(idx)
        train_loss = total / n
        val_acc, val_loss = _val_metrics(model, Xva, yva)
        curve.append((epoch, train_loss, val_acc))
        log.info("run %d epoch %d loss %.4f val %.2f%%", run, epoch, train_loss, val_acc)
        if epoch_callback is not None:
            epoch_callback(run, epoch, train_loss, val_acc)
        if best is None or val_acc > best.val_accuracy:
            best = RunResult(run, model.params.copy(), epoch, val_acc, val_loss)
            stale = 0
            if val_acc >= 100.0:
                # selection is by validation accuracy, nothing can beat this
                break
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    best.loss_curve = curve
    return best


def train(
    train_data,
    val_data,
    test_data=None,
    spec: CnnGruSpec = CnnGruSpec(),
    cfg: TrainConfig = TrainConfig(),
    dtype=np.float32,
    epoch_callback: Optional[Callable] = None,
) -> TrainResult:
    """``cfg.runs`` seeded trainings; keeps the run with the best validation
    accuracy (earliest run on ties) and reports its test metrics."""
    Xtr, ytr = _as_xy(train_data)
    Xva, yva = _as_xy(val_data)
    if len(Xtr) == 0 or len(Xva) == 0:
        raise ValueError("train and validation splits must be non-empty")
    runs = [
        train_run(spec, cfg, r, Xtr, ytr, Xva, yva, dtype, epoch_callback) for r in range(cfg.runs)
    ]
    selected = max(range(len(runs)), key=lambda r: (runs[r].val_accuracy, -r))
    model = CnnGru(spec, runs[selected].params, dtype=dtype)
    report = None
    if test_data is not None:
        Xte, yte = _as_xy(test_data)
        if len(Xte) == 0:
            raise ValueError("test split is empty")
        report = evaluate(model, (Xte, yte))
        report.loss_curve = [list(row) for row in runs[selected].loss_curve]
    return TrainResult(model, report, runs, selected)


def write_loss_curve(path, curve: Sequence) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_acc"])
        for epoch, loss, acc in curve:
            w.writerow([int(epoch), repr(float(loss)), repr(float(acc))])


# ---------------------------------------------------------------- baseline


def nearest_centroid(train_data, test_data, num_classes: int = 5) -> EvalReport:
    """Classify each clip's mean frame by the closest class-mean (Euclidean)."""
    Xtr, ytr = _as_xy(train_data)
    Xte, yte = _as_xy(test_data)
    missing = sorted(set(range(num_classes)) - set(ytr.tolist()))
    if missing:
        raise ValueError(f"no training clips for classes {missing}")
    ftr = Xtr.mean(axis=1).reshape(len(Xtr), -1).astype(np.float64)
    fte = Xte.mean(axis=1).reshape(len(Xte), -1).astype(np.float64)
    centroids = np.stack([ftr[ytr == k].mean(axis=0) for k in range(num_classes)])
    d = ((fte[:, None, :] - centroids[None]) ** 2).sum(axis=-1)
    pred = np.argmin(d, axis=1)
    return evaluate_predictions(yte, pred, num_classes, _names(num_classes))
