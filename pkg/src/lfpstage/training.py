"""Mini-batch Adam training under focal loss, plus finite-difference checking."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset_io import Segment, SplitKind, SplitSpec, split_segments
from .features import BackendConfig, FeatureBatch, FeatureTensor, extract_many
from .loss import FocalLossConfig, class_weights, focal_loss_batch
from .model import (
    ModelDims,
    ModelParams,
    backward,
    backward_batch,
    canonical_channel_order,
    forward_batch,
    init_params,
)

logger = logging.getLogger(__name__)

TASK_SPLIT = {"Classification": SplitKind.RANDOM, "Prediction": SplitKind.CHRONOLOGICAL}

# 5 ms hop gives 27 frames per 2500-sample segment at 16 kHz, enough for three valid convolutions.
DESK_BACKEND = BackendConfig(frame_len_s=0.025, frame_hop_s=0.005)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    split: SplitSpec = field(default_factory=SplitSpec)
    backend: BackendConfig = DESK_BACKEND
    task: str = "Classification"
    gamma: float = 2.0
    model: dict = field(default_factory=lambda: {"attn_dim": 32, "widths": [32, 32, 32], "padding": "valid"})

    def __post_init__(self):
        if isinstance(self.split, dict):
            object.__setattr__(self, "split", SplitSpec(**self.split))
        if isinstance(self.backend, dict):
            object.__setattr__(self, "backend", BackendConfig.from_dict(self.backend))
        if self.task not in TASK_SPLIT:
            raise ValueError(f"task must be one of {sorted(TASK_SPLIT)}, got {self.task!r}")
        # The task decides the split protocol.
        object.__setattr__(self, "split", replace(self.split, kind=TASK_SPLIT[self.task]))
        if min(self.epochs, self.batch_size) < 1 or self.learning_rate <= 0 or self.eps <= 0:
            raise ValueError("epochs, batch_size, learning_rate and eps must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split"] = self.split.to_dict()
        d["backend"] = self.backend.to_dict()
        return d

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        unknown = set(data) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**data)

    def model_dims(self, n_layers: int, feat_dim: int) -> ModelDims:
        m = dict(self.model)
        return ModelDims(
            n_layers=n_layers,
            feat_dim=feat_dim,
            attn_dim=int(m.get("attn_dim", 32)),
            widths=tuple(m.get("widths", (32, 32, 32))),
            padding=m.get("padding", "valid"),
        )


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    test_acc: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    best_epoch: int = -1

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "train_acc", "test_acc", "seconds"])
            for i in range(len(self.train_loss)):
                w.writerow([i, repr(self.train_loss[i]), repr(self.train_acc[i]), repr(self.test_acc[i]), f"{self.seconds[i]:.3f}"])


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: ModelParams, grads: dict, hyper: AdamHyper) -> tuple[ModelParams, AdamState]:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise ArithmeticError(f"non-finite gradient in tensor {name}")
    t = state.step + 1
    new_m, new_v, tensors = {}, {}, {}
    for name, value in params.tensors.items():
        g = grads[name]
        m = hyper.beta1 * state.m.get(name, 0.0) + (1 - hyper.beta1) * g
        v = hyper.beta2 * state.v.get(name, 0.0) + (1 - hyper.beta2) * g * g
        m_hat = m / (1 - hyper.beta1**t)
        v_hat = v / (1 - hyper.beta2**t)
        tensors[name] = value - hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.eps)
        new_m[name], new_v[name] = m, v
    return ModelParams(params.dims, tensors), AdamState(t, new_m, new_v)


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


def canonicalize(tensors: Sequence[FeatureTensor]):
    orders = [canonical_channel_order(ft) for ft in tensors]
    return [ft.permute_channels(o) for ft, o in zip(tensors, orders)], np.array(orders)


def _batch(canon, orders, idx):
    return FeatureBatch([canon[i] for i in idx]), orders[idx]


def accuracy(params: ModelParams, canon, orders, labels, batch_size: int = 256) -> float:
    if len(labels) == 0:
        return float("nan")
    correct = 0
    for i in range(0, len(labels), batch_size):
        idx = np.arange(i, min(i + batch_size, len(labels)))
        probs = forward_batch(params, _batch(canon, orders, idx))["probs"]
        correct += int(np.sum(np.argmax(probs, axis=1) == labels[idx]))
    return correct / len(labels)


def train_on_features(
    train_feats: Sequence[FeatureTensor],
    train_labels,
    test_feats: Sequence[FeatureTensor],
    test_labels,
    cfg: TrainConfig,
) -> tuple[ModelParams, TrainHistory]:
    train_labels = np.asarray(train_labels)
    test_labels = np.asarray(test_labels)
    if len(train_labels) == 0:
        raise ValueError("empty training set")
    _, n_layers, _, feat_dim = train_feats[0].shape
    params = init_params(cfg.model_dims(n_layers, feat_dim), cfg.seed)
    loss_cfg = FocalLossConfig(cfg.gamma, tuple(class_weights(np.bincount(train_labels, minlength=4))))
    hyper = AdamHyper(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    state = AdamState()

    tr_canon, tr_orders = canonicalize(train_feats)
    te_canon, te_orders = canonicalize(test_feats)
    history = TrainHistory()
    best, best_acc = params.copy(), -1.0
    n = len(train_labels)
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        rng = np.random.Generator(np.random.Philox(key=[cfg.seed, epoch]))
        perm = rng.permutation(n)
        total_loss, correct = 0.0, 0
        for i in range(0, n, cfg.batch_size):
            idx = perm[i : i + cfg.batch_size]
            cache_in = _batch(tr_canon, tr_orders, idx)
            loss, grads, probs = _step_grads(params, cache_in, train_labels[idx], loss_cfg)
            params, state = adam_step(state, params, grads, hyper)
            total_loss += loss * len(idx)
            correct += int(np.sum(np.argmax(probs, axis=1) == train_labels[idx]))
        test_acc = accuracy(params, te_canon, te_orders, test_labels)
        history.train_loss.append(total_loss / n)
        history.train_acc.append(correct / n)
        history.test_acc.append(test_acc)
        history.seconds.append(time.perf_counter() - t0)
        if test_acc > best_acc or (np.isnan(test_acc) and epoch == cfg.epochs - 1):
            best, best_acc, history.best_epoch = params.copy(), test_acc, epoch
        logger.info(
            "epoch %d loss %.4f train_acc %.3f test_acc %.3f", epoch, history.train_loss[-1], correct / n, test_acc
        )
    return best, history


def _step_grads(params, batch_and_orders, labels, loss_cfg):
    cache = forward_batch(params, batch_and_orders)
    losses, dlogits = focal_loss_batch(cache["probs"], labels, loss_cfg)
    grads = backward_batch(params, cache, dlogits / len(labels))
    return float(losses.mean()), grads, cache["probs"]


def split_for(segments: Sequence[Segment], cfg: TrainConfig):
    return split_segments(segments, cfg.split)


def fit(segments: Sequence[Segment], cfg: TrainConfig, workers: int = 1) -> tuple[ModelParams, TrainHistory]:
    """Split per the task, extract features, and train; returns the best-test-accuracy checkpoint."""
    train, test = split_for(segments, cfg)
    if not train:
        raise ValueError("training split is empty")
    train_feats = extract_many(cfg.backend, train, workers)
    test_feats = extract_many(cfg.backend, test, workers)
    return train_on_features(train_feats, [s.label for s in train], test_feats, [s.label for s in test], cfg)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    tensor: str
    index: tuple
    analytic: float
    numeric: float


def relative_error(a: float, n: float, floor: float = 1e-6) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


def grad_check(
    params: ModelParams,
    sample: tuple[FeatureTensor, int],
    loss_cfg: FocalLossConfig = FocalLossConfig(),
    eps: float = 1e-5,
    grads: dict | None = None,
) -> GradCheckReport:
    """Compare analytic gradients with central differences on every parameter element.

    Pass ``grads`` to check a supplied gradient instead of the model's own.
    """
    ft, label = sample
    labels = np.array([label])
    if grads is None:
        grads = backward(params, ft, label, loss_cfg)
    work = params.copy()
    batch = _batch(*canonicalize([ft]), np.array([0]))
    worst = GradCheckReport(0.0, "", (), 0.0, 0.0)

    def loss_at():
        probs = forward_batch(work, batch)["probs"]
        return float(focal_loss_batch(probs, labels, loss_cfg)[0][0])

    for name, tensor in work.tensors.items():
        for idx in np.ndindex(tensor.shape):
            old = tensor[idx]
            tensor[idx] = old + eps
            up = loss_at()
            tensor[idx] = old - eps
            down = loss_at()
            tensor[idx] = old
            numeric = (up - down) / (2 * eps)
            analytic = float(grads[name][idx])
            err = relative_error(analytic, numeric)
            if err > worst.max_rel_error:
                worst = GradCheckReport(err, name, idx, analytic, numeric)
    return worst
