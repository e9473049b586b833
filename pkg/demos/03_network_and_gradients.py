"""
The segmentation network and its gradients
==========================================

The model is a residual encoder with a nested (U-Net++) decoder and
concurrent spatial/channel squeeze-excitation in every decoder node. All
layers are written in numpy with a small tape-based autograd, so the first
thing to show is that the backward pass agrees with finite differences.
"""

# %%
import numpy as np

from cryonet.nn import FULL_SCALE, ModelConfig, cryonet_forward
from cryonet.nn.gradcheck import grad_check
from cryonet.nn.model import init_params, parameter_count

tiny = ModelConfig(in_channels=30, widths=(4, 8, 16), blocks=(1, 1), scse_reduction=2)
params = init_params(tiny, seed=0, dtype=np.float64)
x = np.random.default_rng(0).standard_normal((1, 30, 16, 16))


def forward(t):
    logits, _ = cryonet_forward(t["x"], tiny, params, training=False)
    return logits


# %%
# Central differences on a random projection of the logits, in float64.
res = grad_check(forward, {"x": x}, samples=10)
print(f"max relative error on the input gradient: {res.max_rel_error:.2e} over {res.checked} coordinates")

# %%
# The desk preset trains on a laptop; the full-scale preset is only counted.
print("tiny:", parameter_count(tiny))
print("desk:", parameter_count(ModelConfig()))
print(f"full scale: {parameter_count(FULL_SCALE) / 1e6:.1f}M")
