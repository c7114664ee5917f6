"""Seeded synthetic 8-channel LFP nights with stage-dependent spectra.

Informative channels carry stage content on top of a 1/f background:

=========  ====================================================
Wake       20-30 Hz band noise, low amplitude
N1         4-7 Hz theta
N2/N3      0.5-4 Hz delta, high amplitude, plus 12-14 Hz spindle trains
REM        low-amplitude theta plus brief 2-3 Hz burst trains
=========  ====================================================

Other channels carry white noise over the same kind of background. Random
numbers come from numpy's Philox counter-based generator keyed by the seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset_io import EPOCH_SECONDS, Hypnogram, Recording, RecordingHeader

LABEL_CODES = {0: "W", 1: "N1", 3: "R"}


@dataclass(frozen=True)
class SynthConfig:
    n_epochs_per_stage: int = 200
    sample_rate_hz: int = 500
    n_channels: int = 8
    informative_channels: tuple[int, ...] = (3, 4)
    background_amp: float = 1.0
    noise_amp: float = 0.5
    signal_gain: float = 1.0
    drift: float = 0.0  # relative growth of background and noise across the night
    max_bout: int = 8
    seed: int = 7
    subject_id: str = "synth01"

    def __post_init__(self):
        object.__setattr__(self, "informative_channels", tuple(int(c) for c in self.informative_channels))
        if not self.informative_channels:
            raise ValueError("informative_channels must not be empty")
        if any(c < 0 or c >= self.n_channels for c in self.informative_channels):
            raise ValueError(f"informative channels {self.informative_channels} outside 0..{self.n_channels - 1}")
        if self.n_epochs_per_stage < 1 or self.sample_rate_hz < 1 or self.n_channels < 1:
            raise ValueError("epoch count, rate and channel count must be positive")


def band_noise(rng: np.random.Generator, n: int, rate: float, lo: float, hi: float) -> np.ndarray:
    """Unit-RMS Gaussian noise restricted to ``[lo, hi]`` Hz."""
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, d=1.0 / rate)
    spec[(freqs < lo) | (freqs > hi)] = 0.0
    x = np.fft.irfft(spec, n)
    return x / np.sqrt(np.mean(x**2))


def pink_noise(rng: np.random.Generator, n: int, rate: float) -> np.ndarray:
    """Unit-RMS noise with a 1/f power spectrum."""
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, d=1.0 / rate)
    scale = np.zeros_like(freqs)
    scale[1:] = 1.0 / np.sqrt(freqs[1:])
    x = np.fft.irfft(spec * scale, n)
    return x / np.sqrt(np.mean(x**2))


def burst_train(rng, n, rate, lo, hi, n_bursts, burst_s, amp):
    out = np.zeros(n)
    width = int(burst_s * rate)
    envelope = np.hanning(width)
    carrier = band_noise(rng, n, rate, lo, hi)
    for start in rng.integers(0, n - width, size=n_bursts):
        out[start : start + width] += amp * envelope * carrier[start : start + width]
    return out


def stage_signal(rng: np.random.Generator, label: int, n: int, rate: float) -> np.ndarray:
    if label == 0:
        return 0.8 * band_noise(rng, n, rate, 20.0, 30.0)
    if label == 1:
        return 1.5 * band_noise(rng, n, rate, 4.0, 7.0)
    if label == 2:
        delta = 3.0 * band_noise(rng, n, rate, 0.5, 4.0)
        return delta + burst_train(rng, n, rate, 12.0, 14.0, n_bursts=6, burst_s=1.0, amp=2.5)
    theta = 0.6 * band_noise(rng, n, rate, 4.0, 7.0)
    return theta + burst_train(rng, n, rate, 2.0, 3.0, n_bursts=8, burst_s=0.8, amp=1.5)


def stage_sequence(rng: np.random.Generator, n_per_stage: int, max_bout: int) -> list[str]:
    """Shuffle bouts of each class into a night; merged-class bouts alternate N2 and N3."""
    bouts = []
    for label in range(4):
        remaining = n_per_stage
        while remaining > 0:
            size = int(min(remaining, rng.integers(1, max_bout + 1)))
            bouts.append((label, size))
            remaining -= size
    order = rng.permutation(len(bouts))
    codes, deep = [], 0
    for i in order:
        label, size = bouts[i]
        if label == 2:
            code = "N2" if deep % 2 == 0 else "N3"
            deep += 1
        else:
            code = LABEL_CODES[label]
        codes.extend([code] * size)
    return codes


def generate(cfg: SynthConfig = SynthConfig()) -> tuple[Recording, Hypnogram]:
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    rate = cfg.sample_rate_hz
    codes = stage_sequence(rng, cfg.n_epochs_per_stage, cfg.max_bout)
    merge = {"W": 0, "N1": 1, "N2": 2, "N3": 2, "R": 3}
    epoch_len = EPOCH_SECONDS * rate
    n_epochs = len(codes)
    samples = np.empty((cfg.n_channels, n_epochs * epoch_len), dtype=np.float32)
    informative = set(cfg.informative_channels)
    for e, code in enumerate(codes):
        scale = 1.0 + cfg.drift * e / max(n_epochs - 1, 1)
        sl = slice(e * epoch_len, (e + 1) * epoch_len)
        for ch in range(cfg.n_channels):
            x = scale * cfg.background_amp * pink_noise(rng, epoch_len, rate)
            x += scale * cfg.noise_amp * rng.standard_normal(epoch_len)
            if ch in informative:
                x += cfg.signal_gain * stage_signal(rng, merge[code], epoch_len, rate)
            samples[ch, sl] = x
    header = RecordingHeader(
        subject_id=cfg.subject_id,
        sample_rate_hz=rate,
        n_channels=cfg.n_channels,
        n_samples=samples.shape[1],
    )
    return Recording(header, samples), Hypnogram(tuple(codes))
