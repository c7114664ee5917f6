"""Layered per-channel feature tensors and learnable layer weighting.

Three backends produce tensors of shape ``(n_channels, L, T, D)``:

* ``Precomputed``: tensors read from a ``.featjson``/``.feat`` pair, e.g.
  hidden states of a frozen speech encoder computed elsewhere.
* ``SurrogateFilterbank``: log mel-band STFT energies at the relabeled
  playback rate; layer ``l`` is a ``2l+1`` moving average over frames.
* ``Bandpower050``: a single layer with one frame of log band powers in
  equal sub-bands of 0-50 Hz at the acquisition rate.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from enum import Enum
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset_io import DataError, Segment

LOG_FLOOR = 1e-10


class BackendKind(str, Enum):
    PRECOMPUTED = "Precomputed"
    SURROGATE = "SurrogateFilterbank"
    BANDPOWER = "Bandpower050"


@dataclass(frozen=True)
class BackendConfig:
    kind: BackendKind = BackendKind.SURROGATE
    n_layers: int = 25
    dim: int = 64
    frame_len_s: float = 0.025
    frame_hop_s: float = 0.020
    band_lo_hz: float = 0.0
    band_hi_hz: float = 50.0
    path: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", BackendKind(self.kind))
        if self.kind is BackendKind.BANDPOWER and self.n_layers != 1:
            object.__setattr__(self, "n_layers", 1)
        for name in ("n_layers", "dim", "frame_len_s", "frame_hop_s"):
            if getattr(self, name) <= 0:
                raise ValueError(f"backend parameter {name} must be positive")
        if not 0 <= self.band_lo_hz < self.band_hi_hz:
            raise ValueError("band edges must satisfy 0 <= lo < hi")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BackendConfig":
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# Tensors
# ---------------------------------------------------------------------------


@dataclass
class FeatureTensor:
    data: np.ndarray  # (n_channels, L, T, D)
    frame_hop_s: float = 0.0
    frame_len_s: float = 0.0

    def __post_init__(self):
        if self.data.ndim != 4 or min(self.data.shape) < 1:
            raise DataError(f"feature tensor must be (C, L, T, D) with all sizes >= 1, got {self.data.shape}")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return tuple(self.data.shape)

    @property
    def n_channels(self) -> int:
        return self.shape[0]

    @property
    def layers(self) -> int:
        return self.shape[1]

    @property
    def frames(self) -> int:
        return self.shape[2]

    @property
    def dim(self) -> int:
        return self.shape[3]

    def combine(self, weights: np.ndarray) -> np.ndarray:
        return np.einsum("l,cltd->ctd", weights, self.data)

    def layer_inner(self, grad: np.ndarray) -> np.ndarray:
        """``<grad, data[:, l]>`` for every layer ``l``."""
        return np.einsum("cltd,ctd->l", self.data, grad)

    def permute_channels(self, perm) -> "FeatureTensor":
        return FeatureTensor(self.data[list(perm)], self.frame_hop_s, self.frame_len_s)


@lru_cache(maxsize=32)
def smoothing_operators(n_layers: int, n_frames: int) -> np.ndarray:
    """Stack of ``(T, T)`` matrices; layer ``l`` averages ``2l+1`` frames with edge replication."""
    ops = np.zeros((n_layers, n_frames, n_frames))
    for l in range(n_layers):
        width = 2 * l + 1
        for t in range(n_frames):
            for k in range(-l, l + 1):
                ops[l, t, min(max(t + k, 0), n_frames - 1)] += 1.0 / width
    ops.setflags(write=False)
    return ops


class SmoothedFeatureTensor(FeatureTensor):
    """Feature stack whose layers are moving averages of a base map.

    Only the ``(C, T, D)`` base map is stored; ``data`` is built on demand.
    """

    def __init__(self, base: np.ndarray, n_layers: int, frame_hop_s: float = 0.0, frame_len_s: float = 0.0):
        if base.ndim != 3 or min(base.shape) < 1:
            raise DataError(f"base map must be (C, T, D), got {base.shape}")
        self.base = base
        self.n_layers = int(n_layers)
        self.frame_hop_s = frame_hop_s
        self.frame_len_s = frame_len_s

    def __repr__(self):
        return f"SmoothedFeatureTensor(shape={self.shape})"

    @property
    def shape(self):
        c, t, d = self.base.shape
        return (c, self.n_layers, t, d)

    @property
    def operators(self) -> np.ndarray:
        return smoothing_operators(self.n_layers, self.base.shape[1])

    @cached_property
    def data(self) -> np.ndarray:
        return np.einsum("ltu,cud->cltd", self.operators, self.base)

    def combine(self, weights):
        mix = np.einsum("l,ltu->tu", weights, self.operators)
        return np.einsum("tu,cud->ctd", mix, self.base)

    def layer_inner(self, grad):
        cross = np.einsum("ctd,cud->tu", grad, self.base)
        return np.einsum("ltu,tu->l", self.operators, cross)

    def permute_channels(self, perm):
        return SmoothedFeatureTensor(self.base[list(perm)], self.n_layers, self.frame_hop_s, self.frame_len_s)


class FeatureBatch:
    """A batch of same-shape feature tensors with batched layer mixing."""

    def __init__(self, tensors: Sequence[FeatureTensor]):
        if not tensors:
            raise ValueError("empty feature batch")
        shapes = {t.shape for t in tensors}
        if len(shapes) != 1:
            raise DataError(f"feature tensors in a batch must share a shape, got {sorted(shapes)}")
        self.shape = (len(tensors),) + tensors[0].shape
        self._smoothed = all(isinstance(t, SmoothedFeatureTensor) for t in tensors)
        if self._smoothed:
            self.base = np.stack([t.base for t in tensors]).astype(np.float64, copy=False)
            self.operators = tensors[0].operators
        else:
            self.data = np.stack([t.data for t in tensors]).astype(np.float64, copy=False)

    def __len__(self):
        return self.shape[0]

    def combine(self, weights: np.ndarray) -> np.ndarray:
        """``(B, C, T, D)`` layer-weighted sum."""
        if self._smoothed:
            mix = np.einsum("l,ltu->tu", weights, self.operators)
            return np.einsum("tu,bcud->bctd", mix, self.base, optimize=True)
        return np.einsum("l,bcltd->bctd", weights, self.data, optimize=True)

    def layer_inner(self, grad: np.ndarray) -> np.ndarray:
        """Sum over the batch of ``<grad[b], x[b, :, l]>`` per layer."""
        if self._smoothed:
            cross = np.einsum("bctd,bcud->tu", grad, self.base, optimize=True)
            return np.einsum("ltu,tu->l", self.operators, cross)
        return np.einsum("bcltd,bctd->l", self.data, grad, optimize=True)


# ---------------------------------------------------------------------------
# Layer weighting
# ---------------------------------------------------------------------------


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


@dataclass
class LayerCombiner:
    theta: np.ndarray

    @property
    def weights(self) -> np.ndarray:
        return softmax(np.asarray(self.theta, dtype=np.float64))


def combine_layers(lc: LayerCombiner, ft: FeatureTensor) -> np.ndarray:
    if len(lc.theta) != ft.layers:
        raise ValueError(f"theta has {len(lc.theta)} entries but the tensor has {ft.layers} layers")
    return ft.combine(lc.weights)


def combine_layers_grad(lc: LayerCombiner, ft: FeatureTensor, grad_out: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. ``theta`` given the gradient of the combined output."""
    w = lc.weights
    g = ft.layer_inner(grad_out)
    return w * (g - np.dot(w, g))


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


@lru_cache(maxsize=16)
def mel_filterbank(n_bands: int, n_fft: int, rate_hz: float) -> np.ndarray:
    """Triangular mel filters, ``(n_bands, n_fft // 2 + 1)``.

    A filter too narrow to cover any FFT bin falls back to its nearest bin.
    """
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / rate_hz)
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(rate_hz / 2), n_bands + 2))
    fb = np.zeros((n_bands, freqs.size))
    for i in range(n_bands):
        lo, mid, hi = edges[i], edges[i + 1], edges[i + 2]
        rising = (freqs - lo) / (mid - lo)
        falling = (hi - freqs) / (hi - mid)
        fb[i] = np.clip(np.minimum(rising, falling), 0.0, None)
        if not fb[i].any():
            fb[i, np.argmin(np.abs(freqs - mid))] = 1.0
    fb.setflags(write=False)
    return fb


def frame_count(n_samples: int, frame_len: int, hop: int) -> int:
    if n_samples < frame_len:
        return 0
    return (n_samples - frame_len) // hop + 1


def log_mel_map(samples: np.ndarray, rate_hz: float, n_bands: int, frame_len_s: float, hop_s: float) -> np.ndarray:
    """``(C, T, n_bands)`` log mel energies of each channel."""
    frame_len = int(round(frame_len_s * rate_hz))
    hop = int(round(hop_s * rate_hz))
    n_frames = frame_count(samples.shape[-1], frame_len, hop)
    if n_frames < 1:
        raise DataError(
            f"segment of {samples.shape[-1]} samples is shorter than one {frame_len}-sample frame"
        )
    x = np.asarray(samples, dtype=np.float64)
    frames = np.lib.stride_tricks.sliding_window_view(x, frame_len, axis=-1)[:, ::hop][:, :n_frames]
    window = np.hanning(frame_len)
    spec = np.fft.rfft(frames * window, axis=-1)
    power = (spec.real**2 + spec.imag**2) / np.sum(window**2)
    energies = power @ mel_filterbank(n_bands, frame_len, float(rate_hz)).T
    return np.log(np.maximum(energies, LOG_FLOOR))


def log_bandpower(samples: np.ndarray, rate_hz: float, n_bands: int, lo_hz: float, hi_hz: float) -> np.ndarray:
    """``(C, n_bands)`` log mean periodogram power in equal sub-bands of ``[lo, hi)``."""
    x = np.asarray(samples, dtype=np.float64)
    n = x.shape[-1]
    window = np.hanning(n)
    spec = np.fft.rfft(x * window, axis=-1)
    power = (spec.real**2 + spec.imag**2) / (rate_hz * np.sum(window**2))
    freqs = np.fft.rfftfreq(n, d=1.0 / rate_hz)
    edges = np.linspace(lo_hz, hi_hz, n_bands + 1)
    out = np.empty((x.shape[0], n_bands))
    for i in range(n_bands):
        mask = (freqs >= edges[i]) & (freqs < edges[i + 1])
        if not mask.any():
            mask = np.zeros_like(mask)
            mask[np.argmin(np.abs(freqs - 0.5 * (edges[i] + edges[i + 1])))] = True
        out[:, i] = power[:, mask].mean(axis=-1)
    return np.log(np.maximum(out, LOG_FLOOR))


def extract_features(cfg: BackendConfig, seg: Segment) -> FeatureTensor:
    if cfg.kind is BackendKind.SURROGATE:
        if seg.nominal_rate_hz is None:
            raise DataError("surrogate features need a segment with a reinterpreted playback rate")
        base = log_mel_map(seg.samples, seg.nominal_rate_hz, cfg.dim, cfg.frame_len_s, cfg.frame_hop_s)
        return SmoothedFeatureTensor(base, cfg.n_layers, cfg.frame_hop_s, cfg.frame_len_s)
    if cfg.kind is BackendKind.BANDPOWER:
        bp = log_bandpower(seg.samples, seg.sample_rate_hz, cfg.dim, cfg.band_lo_hz, cfg.band_hi_hz)
        duration = seg.length_samples / seg.sample_rate_hz
        return FeatureTensor(bp[:, None, None, :], frame_hop_s=duration, frame_len_s=duration)
    raise ValueError("Precomputed features are read with load_feature_file, not extracted per segment")


def extract_many(cfg: BackendConfig, segments: Sequence[Segment], workers: int = 1) -> list[FeatureTensor]:
    """Extract features for many segments; output order matches input order."""
    if workers <= 1:
        return [extract_features(cfg, s) for s in segments]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda s: extract_features(cfg, s), segments))


# ---------------------------------------------------------------------------
# Feature files
# ---------------------------------------------------------------------------

FEAT_KEYS = ("n_segments", "n_channels", "n_layers", "n_frames", "dim", "dtype", "frame_hop_s", "frame_len_s")


def _payload_path(header_path: Path) -> Path:
    return header_path.with_suffix(".feat")


def save_feature_file(path, tensors: Sequence[FeatureTensor]) -> None:
    header_path = Path(path)
    if not tensors:
        raise ValueError("no tensors to save")
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DataError("all tensors in a feature file must share a shape")
    c, l, t, d = tensors[0].shape
    header = {
        "n_segments": len(tensors),
        "n_channels": c,
        "n_layers": l,
        "n_frames": t,
        "dim": d,
        "dtype": "f32le",
        "frame_hop_s": float(tensors[0].frame_hop_s),
        "frame_len_s": float(tensors[0].frame_len_s),
    }
    header_path.write_text(json.dumps(header, indent=2), encoding="utf-8")
    with open(_payload_path(header_path), "wb") as fh:
        for ft in tensors:
            data = np.asarray(ft.data)
            if not np.all(np.isfinite(data)):
                raise DataError("refusing to write non-finite features")
            fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def load_feature_file(path) -> list[FeatureTensor]:
    header_path = Path(path)
    meta = json.loads(header_path.read_text(encoding="utf-8"))
    if set(meta) != set(FEAT_KEYS):
        raise DataError(f"malformed feature header {header_path}: keys must be exactly {list(FEAT_KEYS)}")
    if meta["dtype"] != "f32le":
        raise DataError(f"unsupported feature dtype {meta['dtype']!r}")
    shape = tuple(int(meta[k]) for k in ("n_segments", "n_channels", "n_layers", "n_frames", "dim"))
    if min(shape) < 1:
        raise DataError(f"feature header sizes must be positive, got {shape}")
    payload = _payload_path(header_path)
    expected = int(np.prod(shape)) * 4
    actual = payload.stat().st_size
    if actual != expected:
        raise DataError(f"feature payload size mismatch: expected {expected} bytes, got {actual}")
    flat = np.fromfile(payload, dtype="<f4")
    if not np.all(np.isfinite(flat)):
        bad = int(np.flatnonzero(~np.isfinite(flat))[0])
        raise DataError(f"non-finite feature value at byte offset {bad * 4}")
    arr = flat.reshape(shape)
    return [FeatureTensor(arr[i], float(meta["frame_hop_s"]), float(meta["frame_len_s"])) for i in range(shape[0])]
