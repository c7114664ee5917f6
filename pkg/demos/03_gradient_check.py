"""Verify the hand-written reverse pass against central finite differences.

Run: python demos/03_gradient_check.py
"""

import numpy as np

from lfpstage.features import FeatureTensor
from lfpstage.loss import FocalLossConfig
from lfpstage.model import ModelDims, backward, init_params
from lfpstage.training import grad_check

dims = ModelDims(n_layers=4, feat_dim=8, attn_dim=4, widths=(8, 8, 8))
loss_cfg = FocalLossConfig(gamma=2.0, alpha=(1.2, 1.8, 0.3, 0.7))

for seed in range(5):
    rng = np.random.default_rng(seed)
    params = init_params(dims, seed)
    sample = FeatureTensor(rng.standard_normal((8, 4, 16, 8))), int(rng.integers(4))
    report = grad_check(params, sample, loss_cfg)
    print(f"seed {seed}: max relative error {report.max_rel_error:.2e} ({report.tensor}{list(report.index)})")

# A corrupted gradient is caught and located.
grads = backward(params, *sample, loss_cfg)
grads["W_V"][1, 2] += 1.0
bad = grad_check(params, sample, loss_cfg, grads=grads)
print(f"corrupted: error {bad.max_rel_error:.2e} in {bad.tensor}{list(bad.index)}")
