# %% [markdown]
# # Hybrid classifier
#
# Backbone features are projected to tokens, passed through windowed
# attention blocks, pooled and classified.

# %%
import numpy as np

from histoswin.model import HybridModelConfig, classify_batch, model_init, param_count, param_shapes

cfg = HybridModelConfig()
print(cfg.to_dict())
print("parameters", param_count(cfg))
for name, shape in list(param_shapes(cfg).items())[-6:]:
    print(f"  {name:24s} {shape}")

# %%
params = model_init(cfg)
xs = list(np.random.default_rng(0).standard_normal((3,) + cfg.input_shape).astype(np.float32))
for p in classify_batch(xs, params, cfg):
    print(p.label, np.round(p.probabilities, 4))
