"""High-pass filtering and sample-rate relabeling."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import signal

from .dataset_io import Recording, Segment

SPEECH_RATE_HZ = 16000


@dataclass(frozen=True)
class BiquadCoeffs:
    b0: float
    b1: float
    b2: float
    a1: float
    a2: float
    cutoff_hz: float
    sample_rate_hz: float

    @property
    def b(self) -> np.ndarray:
        return np.array([self.b0, self.b1, self.b2])

    @property
    def a(self) -> np.ndarray:
        return np.array([1.0, self.a1, self.a2])

    def pole_radius(self) -> float:
        return float(np.max(np.abs(np.roots(self.a))))

    def response(self, freqs_hz) -> np.ndarray:
        """Complex frequency response evaluated at ``freqs_hz``."""
        z = np.exp(-1j * 2 * np.pi * np.asarray(freqs_hz, dtype=float) / self.sample_rate_hz)
        return (self.b0 + self.b1 * z + self.b2 * z**2) / (1.0 + self.a1 * z + self.a2 * z**2)


def design_highpass(cutoff_hz: float, sample_rate_hz: float) -> BiquadCoeffs:
    """Second-order Butterworth high-pass via the prewarped bilinear transform."""
    if cutoff_hz <= 0:
        raise ValueError(f"cutoff must be positive, got {cutoff_hz}")
    if cutoff_hz >= sample_rate_hz / 2:
        raise ValueError(f"cutoff {cutoff_hz} Hz is not below Nyquist ({sample_rate_hz / 2} Hz)")
    k = math.tan(math.pi * cutoff_hz / sample_rate_hz)
    q = math.sqrt(2.0)
    norm = 1.0 / (1.0 + q * k + k * k)
    coeffs = BiquadCoeffs(
        b0=norm,
        b1=-2.0 * norm,
        b2=norm,
        a1=2.0 * (k * k - 1.0) * norm,
        a2=(1.0 - q * k + k * k) * norm,
        cutoff_hz=float(cutoff_hz),
        sample_rate_hz=float(sample_rate_hz),
    )
    if not coeffs.pole_radius() < 1.0:
        raise ArithmeticError(f"designed filter is unstable (pole radius {coeffs.pole_radius()})")
    return coeffs


def filter_channel(coeffs: BiquadCoeffs, x) -> np.ndarray:
    """Causal single-pass filtering, zero initial state.

    ``scipy.signal.lfilter`` runs the transposed direct form II recursion.
    """
    x = np.asarray(x, dtype=np.float64)
    bad = np.flatnonzero(~np.isfinite(x))
    if bad.size:
        raise ValueError(f"non-finite input sample at index {int(bad[0])}")
    return signal.lfilter(coeffs.b, coeffs.a, x)


def highpass_recording(recording: Recording, cutoff_hz: float = 0.5) -> Recording:
    coeffs = design_highpass(cutoff_hz, recording.header.sample_rate_hz)
    out = np.empty(recording.samples.shape, dtype=np.float32)
    for ch in range(recording.header.n_channels):
        out[ch] = filter_channel(coeffs, recording.samples[ch])
    return Recording(recording.header, out)


def reinterpret_rate(obj, new_rate_hz: int = SPEECH_RATE_HZ):
    """Relabel the playback rate without touching samples.

    A recording gets a new header rate; a segment keeps its acquisition rate
    and records the new one as ``nominal_rate_hz``.
    """
    if isinstance(obj, Segment):
        return replace(obj, nominal_rate_hz=int(new_rate_hz))
    if isinstance(obj, Recording):
        header = replace(obj.header, sample_rate_hz=int(new_rate_hz))
        return Recording(header, obj.samples)
    raise TypeError(f"cannot reinterpret the rate of {type(obj).__name__}")
