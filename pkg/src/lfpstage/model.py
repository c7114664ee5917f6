"""Channel self-attention + 1-D CNN sleep-stage classifier with exact gradients.

Pipeline for one segment::

    F      = sum_l softmax(theta)_l * features[:, l]            (C, T, D)
    f_i    = mean_t F[i]                                         (C, D)
    alpha  = softmax_i( (W_Q f_i) . (W_K f_i) / sqrt(d) )        (C,)
    H[t]   = sum_i alpha_i W_V F[i, t]                           (T, d)
    O      = relu(conv(relu(conv(relu(conv(H^T))))))             (C3, T')
    w      = softmax_t( w_vec . O[:, t] )                        (T',)
    S      = sum_t w_t O[:, t]                                   (C3,)
    probs  = softmax(W_head S + b_head)                          (4,)

Everything is computed in float64 on batches. Channels of each input are put
into a canonical order before any arithmetic so that permuting the channels
of a segment cannot change a single bit of its class probabilities.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .features import FeatureBatch, FeatureTensor, softmax
from .loss import FocalLossConfig, focal_loss_batch

KERNEL = 5
N_CLASSES = 4
N_CONV = 3


class ShapeError(ValueError):
    """Input dimensions do not fit the network."""


@dataclass(frozen=True)
class ModelDims:
    n_layers: int = 25
    feat_dim: int = 64
    attn_dim: int = 32
    widths: tuple[int, int, int] = (32, 32, 32)
    padding: str = "valid"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) != N_CONV or min(self.widths) < 1:
            raise ValueError(f"need {N_CONV} positive conv widths, got {self.widths}")
        if min(self.n_layers, self.feat_dim, self.attn_dim) < 1:
            raise ValueError("model dimensions must be positive")
        if self.padding not in ("valid", "same"):
            raise ValueError(f"padding must be 'valid' or 'same', got {self.padding!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    def out_frames(self, n_frames: int) -> int:
        if self.padding == "same":
            return n_frames
        return n_frames - N_CONV * (KERNEL - 1)

    def tensor_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {
            "theta": (self.n_layers,),
            "W_Q": (self.attn_dim, self.feat_dim),
            "W_K": (self.attn_dim, self.feat_dim),
            "W_V": (self.attn_dim, self.feat_dim),
        }
        c_in = self.attn_dim
        for k, c_out in enumerate(self.widths):
            shapes[f"conv{k}.kernel"] = (c_out, c_in, KERNEL)
            shapes[f"conv{k}.bias"] = (c_out,)
            c_in = c_out
        shapes["pool.w"] = (c_in,)
        shapes["head.W"] = (N_CLASSES, c_in)
        shapes["head.b"] = (N_CLASSES,)
        return shapes


def _fan_in(name: str, shape: tuple[int, ...], dims: ModelDims) -> int:
    if name.startswith("W_"):
        return shape[1]
    if name.endswith(".kernel"):
        return shape[1] * shape[2]
    if name.startswith("conv"):
        k = int(name[4])
        return (dims.attn_dim if k == 0 else dims.widths[k - 1]) * KERNEL
    if name == "head.W":
        return shape[1]
    return dims.widths[-1]


@dataclass
class ModelParams:
    dims: ModelDims
    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        expected = self.dims.tensor_shapes()
        if list(self.tensors) != list(expected):
            raise ValueError(f"tensor names {list(self.tensors)} do not match {list(expected)}")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ValueError(f"{name} has shape {self.tensors[name].shape}, expected {shape}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    @property
    def layer_weights(self) -> np.ndarray:
        return softmax(self.tensors["theta"])

    def copy(self) -> "ModelParams":
        return ModelParams(self.dims, {k: v.copy() for k, v in self.tensors.items()})

    def n_parameters(self) -> int:
        return sum(v.size for v in self.tensors.values())


def init_params(dims: ModelDims, seed: int = 0) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every tensor; theta starts at zero."""
    rng = np.random.Generator(np.random.Philox(seed))
    tensors = {}
    for name, shape in dims.tensor_shapes().items():
        if name == "theta":
            tensors[name] = np.zeros(shape)
        else:
            bound = np.sqrt(1.0 / _fan_in(name, shape, dims))
            tensors[name] = rng.uniform(-bound, bound, size=shape)
    return ModelParams(dims, tensors)


# ---------------------------------------------------------------------------
# Building blocks (batched: leading axis B)
# ---------------------------------------------------------------------------


def canonical_channel_order(ft: FeatureTensor) -> list[int]:
    """A channel order that depends only on each channel's content."""
    arr = ft.base if hasattr(ft, "base") else ft.data
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    return sorted(range(arr.shape[0]), key=lambda c: arr[c].tobytes())


def _attention(W_Q, W_K, W_V, F):
    """Batched channel attention. ``F`` is ``(B, C, T, D)``."""
    d = W_Q.shape[0]
    fbar = F.mean(axis=2)
    q = fbar @ W_Q.T
    k = fbar @ W_K.T
    scores = np.sum(q * k, axis=-1) / np.sqrt(d)
    alpha = softmax(scores, axis=-1)
    v = F @ W_V.T
    H = np.einsum("bc,bctd->btd", alpha, v)
    return H, alpha, (fbar, q, k, v)


def _conv(X, kernel, bias, padding):
    """Batched width-5 cross-correlation + bias + ReLU. ``X`` is ``(B, C_in, T)``."""
    if padding == "same":
        X = np.pad(X, ((0, 0), (0, 0), (2, 2)))
    if X.shape[-1] < KERNEL:
        raise ShapeError(f"convolution needs at least {KERNEL} frames, got {X.shape[-1]}")
    windows = np.lib.stride_tricks.sliding_window_view(X, KERNEL, axis=2)
    Z = np.einsum("bitk,oik->bot", windows, kernel, optimize=True) + bias[None, :, None]
    return np.maximum(Z, 0.0), Z, X


def _conv_backward(dY, Z, Xp, kernel, padding):
    dZ = dY * (Z > 0)
    db = dZ.sum(axis=(0, 2))
    windows = np.lib.stride_tricks.sliding_window_view(Xp, KERNEL, axis=2)
    dK = np.einsum("bot,bitk->oik", dZ, windows, optimize=True)
    dXp = np.zeros_like(Xp)
    T_out = dZ.shape[-1]
    for j in range(KERNEL):
        dXp[:, :, j : j + T_out] += np.einsum("bot,oi->bit", dZ, kernel[:, :, j], optimize=True)
    if padding == "same":
        dXp = dXp[:, :, 2:-2]
    return dXp, dK, db


def _pool(w_vec, O):
    s = np.einsum("c,bct->bt", w_vec, O)
    fw = softmax(s, axis=-1)
    S = np.einsum("bct,bt->bc", O, fw)
    return S, fw


# ---------------------------------------------------------------------------
# Single-sample operations
# ---------------------------------------------------------------------------


def channel_attention(W_Q, W_K, W_V, F):
    """Attention over the channels of one ``(C, T, D)`` map; returns ``(H, alpha)``."""
    F = np.asarray(F, dtype=np.float64)
    if F.ndim != 3 or F.shape[0] == 0:
        raise ShapeError(f"attention input must be (C>=1, T, D), got {F.shape}")
    H, alpha, _ = _attention(W_Q, W_K, W_V, F[None])
    return H[0], alpha[0]


def conv1d_forward(kernel, bias, X, padding: str = "valid"):
    if kernel.shape[-1] != KERNEL:
        raise ShapeError(f"kernel width must be {KERNEL}")
    if padding == "valid" and X.shape[-1] < KERNEL:
        raise ShapeError(f"convolution needs at least {KERNEL} frames, got {X.shape[-1]}")
    Y, _, _ = _conv(np.asarray(X, dtype=np.float64)[None], kernel, bias, padding)
    return Y[0]


def temporal_pool(w_vec, O):
    """Softmax-over-frames pooling; returns ``(S, frame_weights)``."""
    S, fw = _pool(w_vec, np.asarray(O, dtype=np.float64)[None])
    return S[0], fw[0]


def head_forward(W_head, b_head, S):
    logits = W_head @ S + b_head
    return logits, softmax(logits)


@dataclass
class ForwardResult:
    probs: np.ndarray
    alpha: np.ndarray
    layer_weights: np.ndarray
    frame_weights: np.ndarray


def forward(params: ModelParams, ft: FeatureTensor) -> ForwardResult:
    cache = forward_batch(params, [ft])
    return ForwardResult(
        probs=cache["probs"][0],
        alpha=cache["alpha"][0],
        layer_weights=cache["layer_weights"],
        frame_weights=cache["frame_weights"][0],
    )


def backward(params: ModelParams, ft: FeatureTensor, label: int, loss_cfg: FocalLossConfig) -> dict[str, np.ndarray]:
    _, grads = loss_and_grads(params, [ft], np.array([label]), loss_cfg)
    return grads


# ---------------------------------------------------------------------------
# Batched forward / backward
# ---------------------------------------------------------------------------


def check_input(params: ModelParams, shape: tuple[int, ...]) -> None:
    c, l, t, d = shape
    dims = params.dims
    if c < 1:
        raise ShapeError("input has no channels")
    if l != dims.n_layers:
        raise ShapeError(f"input has {l} layers, model expects {dims.n_layers}")
    if d != dims.feat_dim:
        raise ShapeError(f"input feature dim {d} does not match model feat_dim {dims.feat_dim}")
    if dims.out_frames(t) < 1:
        raise ShapeError(
            f"{t} frames leave {dims.out_frames(t)} after {N_CONV} valid width-{KERNEL} convolutions; "
            f"need at least {N_CONV * (KERNEL - 1) + 1} frames or padding='same'"
        )


def make_batch(tensors: Sequence[FeatureTensor]):
    """Canonically channel-ordered batch plus the per-sample orders used."""
    orders = [canonical_channel_order(ft) for ft in tensors]
    batch = FeatureBatch([ft.permute_channels(o) for ft, o in zip(tensors, orders)])
    return batch, np.array(orders)


def forward_batch(params: ModelParams, tensors) -> dict:
    if isinstance(tensors, tuple):
        batch, orders = tensors
    else:
        batch, orders = make_batch(tensors)
    check_input(params, batch.shape[1:])
    p = params.tensors
    padding = params.dims.padding
    lw = softmax(p["theta"])
    F = batch.combine(lw)
    H, alpha_sorted, att = _attention(p["W_Q"], p["W_K"], p["W_V"], F)
    X = H.transpose(0, 2, 1)
    convs = []
    for k in range(N_CONV):
        Y, Z, Xp = _conv(X, p[f"conv{k}.kernel"], p[f"conv{k}.bias"], padding)
        convs.append((Z, Xp))
        X = Y
    S, fw = _pool(p["pool.w"], X)
    logits = S @ p["head.W"].T + p["head.b"]
    probs = softmax(logits, axis=-1)

    alpha = np.empty_like(alpha_sorted)
    np.put_along_axis(alpha, orders, alpha_sorted, axis=1)
    return {
        "batch": batch,
        "layer_weights": lw,
        "F": F,
        "att": att,
        "alpha_sorted": alpha_sorted,
        "alpha": alpha,
        "convs": convs,
        "O": X,
        "S": S,
        "frame_weights": fw,
        "probs": probs,
    }


def backward_batch(params: ModelParams, cache: dict, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Reverse pass given the gradient of the (already batch-reduced) loss w.r.t. logits."""
    p = params.tensors
    padding = params.dims.padding
    g = {}
    S, O, fw = cache["S"], cache["O"], cache["frame_weights"]

    g["head.W"] = dlogits.T @ S
    g["head.b"] = dlogits.sum(axis=0)
    dS = dlogits @ p["head.W"]

    # S = sum_t fw_t O_t ; fw = softmax(w_vec . O_t)
    dO = dS[:, :, None] * fw[:, None, :]
    dfw = np.einsum("bct,bc->bt", O, dS)
    ds = fw * (dfw - np.sum(fw * dfw, axis=-1, keepdims=True))
    g["pool.w"] = np.einsum("bt,bct->c", ds, O)
    dO += p["pool.w"][None, :, None] * ds[:, None, :]

    dX = dO
    conv_grads = {}
    for k in reversed(range(N_CONV)):
        Z, Xp = cache["convs"][k]
        dX, dK, db = _conv_backward(dX, Z, Xp, p[f"conv{k}.kernel"], padding)
        conv_grads[k] = (dK, db)
    dH = dX.transpose(0, 2, 1)

    F = cache["F"]
    fbar, q, k_, v = cache["att"]
    alpha = cache["alpha_sorted"]
    d = p["W_Q"].shape[0]
    dv = alpha[:, :, None, None] * dH[:, None, :, :]
    dalpha = np.einsum("bctd,btd->bc", v, dH)
    dscore = alpha * (dalpha - np.sum(alpha * dalpha, axis=-1, keepdims=True))
    dq = dscore[:, :, None] * k_ / np.sqrt(d)
    dk = dscore[:, :, None] * q / np.sqrt(d)
    g["W_Q"] = np.einsum("bce,bcf->ef", dq, fbar)
    g["W_K"] = np.einsum("bce,bcf->ef", dk, fbar)
    g["W_V"] = np.einsum("bcte,bctf->ef", dv, F, optimize=True)
    dfbar = dq @ p["W_Q"] + dk @ p["W_K"]
    dF = dv @ p["W_V"] + dfbar[:, :, None, :] / F.shape[2]

    lw = cache["layer_weights"]
    gl = cache["batch"].layer_inner(dF)
    g["theta"] = lw * (gl - np.dot(lw, gl))

    ordered = {}
    for name in params.dims.tensor_shapes():
        if name.startswith("conv"):
            k = int(name[4])
            ordered[name] = conv_grads[k][0] if name.endswith("kernel") else conv_grads[k][1]
        else:
            ordered[name] = g[name]
    return ordered


def loss_and_grads(params: ModelParams, tensors, labels: np.ndarray, loss_cfg: FocalLossConfig):
    """Mean focal loss over the batch and its exact gradient for every tensor."""
    cache = forward_batch(params, tensors)
    labels = np.asarray(labels)
    losses, dlogits = focal_loss_batch(cache["probs"], labels, loss_cfg)
    grads = backward_batch(params, cache, dlogits / len(labels))
    return float(losses.mean()), grads


def predict(params: ModelParams, tensors: Sequence[FeatureTensor], batch_size: int = 256):
    """Class probabilities and channel weights for many tensors, ``(N, 4)`` and ``(N, C)``."""
    probs, alphas = [], []
    for i in range(0, len(tensors), batch_size):
        cache = forward_batch(params, tensors[i : i + batch_size])
        probs.append(cache["probs"])
        alphas.append(cache["alpha"])
    return np.concatenate(probs), np.concatenate(alphas)


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------


def _weights_path(manifest_path: Path) -> Path:
    return manifest_path.with_suffix(".weights")


def save_model(params: ModelParams, path, backend: dict | None = None, backend_hash: str | None = None) -> None:
    """Write ``<name>.modeljson`` and ``<name>.weights`` (f32le, manifest order).

    Weights are stored as float32, so only float32-representable values
    survive the round trip unchanged.
    """
    manifest_path = Path(path)
    manifest = {
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in params.tensors.items()],
        "dims": params.dims.to_dict(),
        "backend": backend,
        "backend_hash": backend_hash,
    }
    manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    with open(_weights_path(manifest_path), "wb") as fh:
        for v in params.tensors.values():
            fh.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


def load_model(path) -> tuple[ModelParams, dict]:
    """Returns the parameters (as float64) and the raw manifest."""
    manifest_path = Path(path)
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    d = dict(manifest["dims"])
    d["widths"] = tuple(d["widths"])
    dims = ModelDims(**d)
    entries = manifest["tensors"]
    total = sum(int(np.prod(e["shape"])) for e in entries)
    weights_path = _weights_path(manifest_path)
    actual = weights_path.stat().st_size
    if actual != total * 4:
        raise ValueError(f"weights size mismatch: expected {total * 4} bytes, got {actual}")
    flat = np.fromfile(weights_path, dtype="<f4")
    if not np.all(np.isfinite(flat)):
        raise ArithmeticError(f"non-finite weights in {weights_path}")
    tensors, offset = {}, 0
    for e in entries:
        n = int(np.prod(e["shape"]))
        tensors[e["name"]] = flat[offset : offset + n].reshape(e["shape"]).astype(np.float64)
        offset += n
    return ModelParams(dims, tensors), manifest
