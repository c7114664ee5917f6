"""Feature tensors, the layer combiner, and one forward pass through the network.

Run: python demos/02_features_and_model.py
"""

import numpy as np

from lfpstage.features import BackendConfig, LayerCombiner, combine_layers, extract_features
from lfpstage.model import ModelDims, forward, init_params
from lfpstage.pipeline import preprocess
from lfpstage.synth import SynthConfig, generate

segments = preprocess(*generate(SynthConfig(n_epochs_per_stage=2)))
seg = segments[0]

# Default surrogate timing (25 ms frames, 20 ms hop at 16 kHz) gives only 7 frames,
# too few for three valid width-5 convolutions. The desk setting uses a 5 ms hop.
for hop in (0.020, 0.005):
    ft = extract_features(BackendConfig(frame_hop_s=hop), seg)
    print(f"hop {hop * 1000:.0f} ms -> tensor (channels, layers, frames, dims) = {ft.shape}")

# Deeper surrogate layers are smoother in time.
print("frame-to-frame variation per layer:",
      np.round([np.abs(np.diff(ft.data[3, l], axis=0)).mean() for l in (0, 1, 4, 12, 24)], 3))

# Layers are fused with softmax weights; equal logits give 1/25 each.
lc = LayerCombiner(np.zeros(25))
print("combined shape:", combine_layers(lc, ft).shape, "weight[0] =", lc.weights[0])

# One forward pass with freshly initialized weights.
params = init_params(ModelDims(n_layers=25, feat_dim=64), seed=0)
out = forward(params, ft)
print("class probabilities:", np.round(out.probs, 3))
print("channel attention:", np.round(out.alpha, 3))
print("frame weights over", out.frame_weights.size, "CNN output frames")

# Band-power ablation features: one layer, one frame. Same padding keeps T = 1.
bp = extract_features(BackendConfig(kind="Bandpower050", dim=25), seg)
bp_params = init_params(ModelDims(n_layers=1, feat_dim=25, attn_dim=16, widths=(16, 16, 16), padding="same"))
print("band-power tensor", bp.shape, "->", np.round(forward(bp_params, bp).probs, 3))
