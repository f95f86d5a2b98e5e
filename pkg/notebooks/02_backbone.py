# %% [markdown]
# # Residual backbone
#
# A 3x3 stem followed by residual stages. Each block computes
# `relu(conv(relu(conv(x))) + shortcut(x))`; the shortcut is a strided 1x1
# projection when the shape changes.

# %%
import numpy as np

from histoswin.backbone import BackboneConfig, backbone_forward, init_backbone
from histoswin.tensor import Tensor

cfg = BackboneConfig.desk()
params = init_backbone(cfg, np.random.default_rng(0))
for name, p in params.items():
    print(f"{name:40s} {p.shape}")

x = np.random.default_rng(1).standard_normal((3, 64, 64)).astype(np.float32)
f = backbone_forward(Tensor(x), params, cfg)
print("feature map", f.shape, "total stride", cfg.total_stride)

# %% [markdown]
# The full-size layout keeps the same code path with wider, deeper stages.

# %%
big = BackboneConfig.imagenet_scale()
print(big.channels, big.blocks, "stride", big.total_stride, "-> 224 px gives", 224 // big.total_stride, "tokens a side")
