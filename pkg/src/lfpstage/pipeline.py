"""Recording -> filtered, relabeled 5 s segments, and dataset directories."""

from __future__ import annotations

from pathlib import Path

from .dataset_io import (
    DataError,
    Hypnogram,
    Recording,
    Segment,
    load_hypnogram,
    load_recording,
    merge_stages,
    save_hypnogram,
    save_recording,
    segment_recording,
)
from .dsp import SPEECH_RATE_HZ, highpass_recording, reinterpret_rate

HIGHPASS_HZ = 0.5


def preprocess(
    recording: Recording,
    hypnogram: Hypnogram,
    cutoff_hz: float = HIGHPASS_HZ,
    nominal_rate_hz: int = SPEECH_RATE_HZ,
) -> list[Segment]:
    """High-pass each whole channel, cut labeled segments, relabel their rate."""
    filtered = highpass_recording(recording, cutoff_hz)
    segments = segment_recording(filtered, merge_stages(hypnogram))
    return [reinterpret_rate(s, nominal_rate_hz) for s in segments]


def save_night(directory, name: str, recording: Recording, hypnogram: Hypnogram) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_recording(recording, directory / f"{name}.json")
    save_hypnogram(hypnogram, directory / f"{name}.csv")


def load_night(header_path, hypnogram_path=None) -> tuple[Recording, Hypnogram]:
    header_path = Path(header_path)
    hypnogram_path = Path(hypnogram_path) if hypnogram_path else header_path.with_suffix(".csv")
    return load_recording(header_path), load_hypnogram(hypnogram_path)


def load_dataset(directory) -> list[Segment]:
    """Every ``<name>.json`` / ``<name>.f32`` / ``<name>.csv`` triple in ``directory``, preprocessed."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"data directory not found: {directory}")
    headers = sorted(p for p in directory.glob("*.json") if p.with_suffix(".f32").exists())
    if not headers:
        raise DataError(f"no recordings (<name>.json + <name>.f32) in {directory}")
    segments = []
    for header_path in headers:
        recording, hypnogram = load_night(header_path)
        segments.extend(preprocess(recording, hypnogram))
    return segments
