"""Focal loss and inverse-frequency class weights."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

P_MIN = 1e-12


@dataclass(frozen=True)
class FocalLossConfig:
    gamma: float = 2.0
    alpha: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if len(self.alpha) != 4 or min(self.alpha) <= 0:
            raise ValueError(f"alpha must hold 4 positive class weights, got {self.alpha}")


def focal_loss(probs, label: int, cfg: FocalLossConfig) -> float:
    """``-alpha_t (1 - p_t)^gamma log(p_t)`` with ``p_t`` clamped to ``[1e-12, 1]``."""
    if label not in (0, 1, 2, 3):
        raise ValueError(f"label must be in 0..3, got {label}")
    p_t = min(max(float(probs[label]), P_MIN), 1.0)
    if p_t == 1.0:
        return 0.0
    return -cfg.alpha[label] * (1.0 - p_t) ** cfg.gamma * np.log(p_t)


def focal_loss_batch(probs: np.ndarray, labels: np.ndarray, cfg: FocalLossConfig):
    """Per-sample losses and their gradients w.r.t. the logits.

    ``probs`` is ``(B, 4)`` softmax output. Returns ``(losses, dlogits)`` where
    ``dlogits[b]`` is the gradient of ``losses[b]`` alone.
    """
    alpha = np.asarray(cfg.alpha)[labels]
    gamma = cfg.gamma
    rows = np.arange(len(labels))
    raw = probs[rows, labels]
    p = np.clip(raw, P_MIN, 1.0)
    log_p = np.log(p)
    one_minus = 1.0 - p
    mod = one_minus**gamma
    losses = -alpha * mod * log_p

    # d loss / d p_t; the clamp is flat below P_MIN
    if gamma == 0.0:
        dmod = np.zeros_like(p)
    else:
        safe = np.where(one_minus > 0, one_minus, 1.0)
        dmod = np.where(one_minus > 0, -gamma * safe ** (gamma - 1.0), 0.0)
    dp = -alpha * (dmod * log_p + mod / p)
    dp = np.where(raw >= P_MIN, dp, 0.0)

    # d p_t / d z_j = p_t (delta_tj - p_j)
    onehot = np.zeros_like(probs)
    onehot[rows, labels] = 1.0
    dlogits = (dp * raw)[:, None] * (onehot - probs)
    return losses, dlogits


def class_weights(counts) -> np.ndarray:
    """Inverse class frequency, normalized to mean 1. Empty classes count as 1."""
    counts = np.asarray(counts, dtype=np.float64)
    if counts.shape != (4,) or np.any(counts < 0):
        raise ValueError(f"counts must be 4 non-negative numbers, got {counts}")
    if not np.any(counts > 0):
        raise ValueError("all class counts are zero")
    if np.any(counts == 0):
        warnings.warn(f"empty class(es) {np.flatnonzero(counts == 0).tolist()}; using count floor 1", stacklevel=2)
    inv = 1.0 / np.maximum(counts, 1.0)
    return inv / inv.mean()
