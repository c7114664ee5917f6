"""Recordings, hypnograms, 5 s segments and train/test splits.

On-disk formats
---------------
Recording: ``<name>.json`` header with keys ``subject_id, sample_rate_hz,
n_channels, n_samples, dtype`` plus ``<name>.f32``, little-endian float32,
channel-major (all of channel 0, then all of channel 1, ...).

Hypnogram: CSV with header ``epoch_index,stage``; stages W, N1, N2, N3, R.
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

EPOCH_SECONDS = 30
SEGMENT_SECONDS = 5
SEGMENTS_PER_EPOCH = EPOCH_SECONDS // SEGMENT_SECONDS

STAGE_CODES = ("W", "N1", "N2", "N3", "R")
STAGE_NAMES = ("Wake", "N1", "N2N3", "REM")
MERGE_MAP = {"W": 0, "N1": 1, "N2": 2, "N3": 2, "R": 3}

HEADER_KEYS = ("subject_id", "sample_rate_hz", "n_channels", "n_samples", "dtype")


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class RecordingHeader:
    subject_id: str
    sample_rate_hz: int
    n_channels: int
    n_samples: int
    dtype: str = "f32le"

    def __post_init__(self):
        for name in ("sample_rate_hz", "n_channels", "n_samples"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise DataError(f"header field {name} must be a positive integer, got {value!r}")
        if self.dtype != "f32le":
            raise DataError(f"unsupported dtype {self.dtype!r}; only 'f32le' is allowed")

    def to_dict(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "sample_rate_hz": int(self.sample_rate_hz),
            "n_channels": int(self.n_channels),
            "n_samples": int(self.n_samples),
            "dtype": self.dtype,
        }


@dataclass(frozen=True)
class Recording:
    header: RecordingHeader
    samples: np.ndarray  # (n_channels, n_samples)

    def __post_init__(self):
        shape = (self.header.n_channels, self.header.n_samples)
        if self.samples.shape != shape:
            raise DataError(f"samples shape {self.samples.shape} does not match header {shape}")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("recording contains non-finite samples")

    @property
    def duration_s(self) -> float:
        return self.header.n_samples / self.header.sample_rate_hz


@dataclass(frozen=True)
class Hypnogram:
    epochs: tuple[str, ...]

    def __post_init__(self):
        if len(self.epochs) == 0:
            raise DataError("hypnogram is empty")
        for i, code in enumerate(self.epochs):
            if code not in STAGE_CODES:
                raise DataError(f"unknown stage {code!r} at epoch {i}")


@dataclass
class Segment:
    """A 5 s slice of one scored epoch.

    ``sample_rate_hz`` is the acquisition rate; ``nominal_rate_hz`` is the
    rate the samples are played back at after :func:`lfpstage.dsp.reinterpret_rate`.
    """

    subject_id: str
    start_sample: int
    length_samples: int
    label: int
    epoch_index: int
    samples: np.ndarray  # (n_channels, length_samples)
    sample_rate_hz: int
    nominal_rate_hz: int | None = None

    def __post_init__(self):
        if self.label not in (0, 1, 2, 3):
            raise DataError(f"segment label must be in 0..3, got {self.label}")
        if self.length_samples != SEGMENT_SECONDS * self.sample_rate_hz:
            raise DataError("segment length must equal 5 s at the acquisition rate")
        if self.samples.shape[-1] != self.length_samples:
            raise DataError("segment sample matrix does not match length_samples")

    @property
    def playback_rate_hz(self) -> int:
        return self.nominal_rate_hz if self.nominal_rate_hz is not None else self.sample_rate_hz


class SplitKind(str, Enum):
    RANDOM = "Random"
    CHRONOLOGICAL = "Chronological"


@dataclass(frozen=True)
class SplitSpec:
    kind: SplitKind = SplitKind.RANDOM
    train_fraction: float = 0.9
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", SplitKind(self.kind))
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "train_fraction": self.train_fraction, "seed": self.seed}


# ---------------------------------------------------------------------------
# Recording files
# ---------------------------------------------------------------------------


def _raw_path_for(header_path: Path) -> Path:
    return header_path.with_suffix(".f32")


def load_recording(header_path, raw_path=None) -> Recording:
    header_path = Path(header_path)
    raw_path = Path(raw_path) if raw_path is not None else _raw_path_for(header_path)
    try:
        meta = json.loads(header_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed header {header_path}: {exc}") from exc
    if not isinstance(meta, dict) or set(meta) != set(HEADER_KEYS):
        raise DataError(f"malformed header {header_path}: keys must be exactly {list(HEADER_KEYS)}")
    header = RecordingHeader(**meta)

    expected = header.n_channels * header.n_samples * 4
    actual = raw_path.stat().st_size
    if actual != expected:
        raise DataError(f"size mismatch for {raw_path}: expected {expected} bytes, got {actual}")
    flat = np.fromfile(raw_path, dtype="<f4")
    bad = np.flatnonzero(~np.isfinite(flat))
    if bad.size:
        raise DataError(f"non-finite sample in {raw_path} at byte offset {int(bad[0]) * 4}")
    samples = flat.reshape(header.n_channels, header.n_samples)
    return Recording(header, samples)


def save_recording(recording: Recording, header_path, raw_path=None) -> None:
    header_path = Path(header_path)
    raw_path = Path(raw_path) if raw_path is not None else _raw_path_for(header_path)
    header_path.write_text(json.dumps(recording.header.to_dict(), indent=2), encoding="utf-8")
    np.ascontiguousarray(recording.samples, dtype="<f4").tofile(raw_path)


# ---------------------------------------------------------------------------
# Hypnograms
# ---------------------------------------------------------------------------


def parse_hypnogram(text: str) -> Hypnogram:
    rows = [row for row in csv.reader(io.StringIO(text)) if row and any(cell.strip() for cell in row)]
    if rows and rows[0][0].strip() == "epoch_index":
        rows = rows[1:]
    entries = {}
    for row in rows:
        if len(row) != 2:
            raise DataError(f"hypnogram row must have 2 fields: {row!r}")
        try:
            idx = int(row[0])
        except ValueError as exc:
            raise DataError(f"bad epoch index {row[0]!r}") from exc
        code = row[1].strip()
        if code not in STAGE_CODES:
            raise DataError(f"unknown stage {code!r} at epoch {idx}")
        if idx in entries:
            raise DataError(f"duplicate epoch {idx}")
        entries[idx] = code
    if not entries:
        raise DataError("hypnogram is empty")
    for i in range(max(entries) + 1):
        if i not in entries:
            raise DataError(f"missing epoch {i}")
    return Hypnogram(tuple(entries[i] for i in range(len(entries))))


def load_hypnogram(path) -> Hypnogram:
    return parse_hypnogram(Path(path).read_text(encoding="utf-8"))


def save_hypnogram(hypnogram: Hypnogram, path) -> None:
    lines = ["epoch_index,stage"] + [f"{i},{code}" for i, code in enumerate(hypnogram.epochs)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def merge_stages(hypnogram: Hypnogram) -> list[int]:
    """Map the five scored stages onto four classes, folding N3 into N2."""
    return [MERGE_MAP[code] for code in hypnogram.epochs]


# ---------------------------------------------------------------------------
# Segmentation
# ---------------------------------------------------------------------------


def segment_recording(recording: Recording, labels4: Sequence[int]) -> list[Segment]:
    """Cut every complete 30 s epoch into six non-overlapping 5 s segments.

    Labeled epochs that run past the end of the recording are dropped with a
    warning. Segment samples are views into ``recording.samples``.
    """
    rate = recording.header.sample_rate_hz
    seg_len = SEGMENT_SECONDS * rate
    if seg_len != int(seg_len):
        raise DataError(f"5 s at {rate} Hz is not a whole number of samples")
    epoch_len = EPOCH_SECONDS * rate
    n_full = recording.header.n_samples // epoch_len
    if n_full < len(labels4):
        warnings.warn(
            f"recording {recording.header.subject_id!r} holds {n_full} complete epochs but "
            f"{len(labels4)} labels; dropping {len(labels4) - n_full} incomplete epoch(s)",
            stacklevel=2,
        )
    segments = []
    for epoch_index, label in enumerate(labels4[:n_full]):
        for k in range(SEGMENTS_PER_EPOCH):
            start = epoch_index * epoch_len + k * seg_len
            segments.append(
                Segment(
                    subject_id=recording.header.subject_id,
                    start_sample=start,
                    length_samples=seg_len,
                    label=int(label),
                    epoch_index=epoch_index,
                    samples=recording.samples[:, start : start + seg_len],
                    sample_rate_hz=rate,
                )
            )
    return segments


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------


def n_train(n: int, train_fraction: float) -> int:
    """Train size ``round(frac * n)``, half-to-even, on the decimal value of ``frac``.

    ``0.9 * 15`` must be treated as exactly 13.5, not as the float product.
    """
    return int(round(Fraction(repr(float(train_fraction))) * n))


def split_random(segments: Sequence[Segment], spec: SplitSpec) -> tuple[list[Segment], list[Segment]]:
    """Stratified random split: per label, ``round(frac * n)`` segments go to train.

    The permutation for each label comes from a Philox generator keyed by
    ``(seed, label)``, so the result does not depend on label iteration order.
    """
    if spec.kind is not SplitKind.RANDOM:
        raise ValueError("split_random requires a Random SplitSpec")
    train_idx, test_idx = [], []
    for label in range(4):
        idx = [i for i, s in enumerate(segments) if s.label == label]
        if not idx:
            continue
        rng = np.random.Generator(np.random.Philox(key=[spec.seed & (2**64 - 1), label]))
        order = rng.permutation(len(idx))
        k = n_train(len(idx), spec.train_fraction)
        train_idx.extend(idx[j] for j in order[:k])
        test_idx.extend(idx[j] for j in order[k:])
    train_idx.sort()
    test_idx.sort()
    return [segments[i] for i in train_idx], [segments[i] for i in test_idx]


def split_chronological(segments: Sequence[Segment], spec: SplitSpec) -> tuple[list[Segment], list[Segment]]:
    """Per (subject, label) stream, the earliest ``round(frac * n)`` segments train."""
    if spec.kind is not SplitKind.CHRONOLOGICAL:
        raise ValueError("split_chronological requires a Chronological SplitSpec")
    streams: dict[tuple[str, int], list[int]] = {}
    for i, s in enumerate(segments):
        streams.setdefault((s.subject_id, s.label), []).append(i)
    train_idx, test_idx = [], []
    for key in sorted(streams):
        idx = sorted(streams[key], key=lambda i: segments[i].start_sample)
        k = n_train(len(idx), spec.train_fraction)
        train_idx.extend(idx[:k])
        test_idx.extend(idx[k:])
    train_idx.sort()
    test_idx.sort()
    return [segments[i] for i in train_idx], [segments[i] for i in test_idx]


def split_segments(segments: Sequence[Segment], spec: SplitSpec):
    if spec.kind is SplitKind.RANDOM:
        return split_random(segments, spec)
    return split_chronological(segments, spec)


def label_counts(segments: Sequence[Segment]) -> np.ndarray:
    return np.bincount([s.label for s in segments], minlength=4).astype(np.int64)
