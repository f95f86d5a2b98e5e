# %% [markdown]
# # Windowed and shifted-window attention
#
# Tokens attend inside non-overlapping windows. The second stage rolls the map
# by half a window so neighbouring windows exchange information, and a mask
# blocks pairs that only became adjacent because of the wrap-around.

# %%
import numpy as np

from histoswin.swin import (AttentionParams, WindowLayout, build_attention_mask, region_labels,
                            swin_block_forward)

layout = WindowLayout(8, 8, 4, 2)
print("region labels of the rolled map\n", region_labels(layout))
mask = build_attention_mask(layout)
print("admissible pairs per window", mask.sum(axis=(1, 2)))

# %%
rng = np.random.default_rng(0)
d, heads = 8, 2
pa, pb = (AttentionParams(*[rng.standard_normal((d, d)).astype(np.float32) * 0.5 for _ in range(4)], heads)
          for _ in range(2))
f = rng.standard_normal((d, 8, 8)).astype(np.float32)
out, w = swin_block_forward(f, (pa, pb), (np.ones(d, np.float32), np.zeros(d, np.float32)), layout,
                            return_weights=True)
blocked = np.broadcast_to(~mask[:, None], w["stage_b"].shape)
print("output", out.shape, "largest masked weight", w["stage_b"].data[blocked].max())
