"""Confusion matrices, recall/accuracy, epoch voting and weight reports."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset_io import STAGE_NAMES, Segment
from .features import FeatureTensor
from .model import ModelParams, predict


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # rows: true label, columns: predicted

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return int(np.trace(self.counts)) / self.total

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["true\\pred", *STAGE_NAMES])
            for name, row in zip(STAGE_NAMES, self.counts):
                w.writerow([name, *(int(x) for x in row)])


def confusion_matrix(preds, labels) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise ValueError(f"length mismatch: {preds.shape} predictions vs {labels.shape} labels")
    if preds.size == 0:
        raise ValueError("nothing to evaluate")
    for arr in (preds, labels):
        if arr.min() < 0 or arr.max() > 3:
            raise ValueError("labels and predictions must lie in 0..3")
    counts = np.zeros((4, 4), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    return ConfusionMatrix(counts)


@dataclass
class Metrics:
    total_accuracy: float
    per_class_recall: np.ndarray  # NaN where the true-label row is empty
    empty_rows: tuple[int, ...]


def metrics(cm: ConfusionMatrix) -> Metrics:
    rows = cm.counts.sum(axis=1)
    recall = np.full(4, np.nan)
    nonzero = rows > 0
    recall[nonzero] = np.diag(cm.counts)[nonzero] / rows[nonzero]
    empty = tuple(int(i) for i in np.flatnonzero(~nonzero))
    if empty:
        warnings.warn(f"no true samples for class(es) {empty}; recall undefined", stacklevel=2)
    return Metrics(cm.accuracy, recall, empty)


def epoch_vote(preds: Sequence[int], probs=None) -> int:
    """Majority vote over the segments of one epoch.

    Ties go to the tied class with the highest mean predicted probability,
    then to the lowest class index.
    """
    preds = np.asarray(preds, dtype=np.int64)
    if preds.size == 0:
        raise ValueError("an epoch needs at least one segment prediction")
    votes = np.bincount(preds, minlength=4)
    tied = np.flatnonzero(votes == votes.max())
    if len(tied) == 1 or probs is None:
        return int(tied[0])
    mean_p = np.asarray(probs, dtype=np.float64).mean(axis=0)
    return int(tied[np.argmax(mean_p[tied])])


def epoch_predictions(segments: Sequence[Segment], preds, probs):
    """Vote within each (subject, epoch); returns ``[(subject, epoch_index, true, pred)]`` in order."""
    groups: dict[tuple[str, int], list[int]] = {}
    for i, s in enumerate(segments):
        groups.setdefault((s.subject_id, s.epoch_index), []).append(i)
    out = []
    for key in sorted(groups):
        idx = groups[key]
        out.append((key[0], key[1], segments[idx[0]].label, epoch_vote(np.asarray(preds)[idx], np.asarray(probs)[idx])))
    return out


def channel_weight_report(params: ModelParams, tensors: Sequence[FeatureTensor], subjects: Sequence[str]) -> dict[str, np.ndarray]:
    """Mean attention weight per channel for each subject."""
    if len(tensors) != len(subjects):
        raise ValueError("one subject id per feature tensor is required")
    _, alphas = predict(params, tensors)
    report = {}
    for subject in sorted(set(subjects)):
        mask = np.array([s == subject for s in subjects])
        report[subject] = alphas[mask].mean(axis=0)
    return report


def layer_weight_report(params: ModelParams) -> np.ndarray:
    return params.layer_weights


def write_channel_weights(report: dict[str, np.ndarray], path) -> None:
    n = len(next(iter(report.values())))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject_id", *(f"ch{i}" for i in range(n))])
        for subject, row in report.items():
            w.writerow([subject, *(repr(float(x)) for x in row)])


def write_layer_weights(weights: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer", "weight"])
        for i, x in enumerate(weights):
            w.writerow([i, repr(float(x))])


def write_report(directory, cm: ConfusionMatrix, epoch_cm: ConfusionMatrix | None, channel_report, layer_weights, extra=None) -> dict:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    m = metrics(cm)
    cm.to_csv(directory / "confusion.csv")
    summary = {
        "n_segments": cm.total,
        "total_accuracy": m.total_accuracy,
        "per_class_recall": {name: (None if np.isnan(r) else float(r)) for name, r in zip(STAGE_NAMES, m.per_class_recall)},
        "empty_classes": [STAGE_NAMES[i] for i in m.empty_rows],
    }
    if epoch_cm is not None:
        epoch_cm.to_csv(directory / "epoch_confusion.csv")
        summary["epoch_accuracy"] = epoch_cm.accuracy
        summary["n_epochs"] = epoch_cm.total
    if extra:
        summary.update(extra)
    write_channel_weights(channel_report, directory / "channel_weights.csv")
    write_layer_weights(layer_weights, directory / "layer_weights.csv")
    (directory / "summary.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    return summary
