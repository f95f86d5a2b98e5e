# %% [markdown]
# # Explanations
#
# Occlusion maps and LIME surrogates work on pixels; Kernel SHAP works on the
# principal components of the pooled embedding.

# %%
import numpy as np

from histoswin.data import split_dataset, synth_dataset
from histoswin.explain import (embedding_model, global_importance, kernel_shap, lime_explain, model_predictor,
                               occlusion_map, pca_fit)
from histoswin.model import HybridModelConfig, embed
from histoswin.train import TrainConfig, prepare_batch, prepare_image, train_loop
from histoswin.model import model_init

samples = synth_dataset("blob_vs_stripe", 60, 64, seed=0)
split = split_dataset(samples, seed=0)
cfg = HybridModelConfig()
train, val = split.select(samples, "train"), split.select(samples, "val")
_, params = train_loop(cfg, model_init(cfg), train, val, TrainConfig(epochs=3, lr=1e-3))
predict = model_predictor(params, cfg)
x = prepare_image(split.select(samples, "test")[0].image, cfg)

# %%
occ = occlusion_map(predict, x, target=0, patch=16, stride=16)
print("occlusion drops\n", np.round(occ.drops, 4))
lime = lime_explain(predict, x, target=0, grid=4, num_samples=300, seed=0)
print("LIME weights\n", np.round(lime.weight_map(), 4), "R2", round(lime.r2, 3))

# %%
emb = embed(prepare_batch(train, cfg), params, cfg)
pca = pca_fit(emb, 8)
f = embedding_model(params, pca, target=0)
background = pca.transform(emb[:16])
atts = [kernel_shap(f, z, background) for z in pca.transform(emb[16:26])]
print("efficiency gaps", max(abs(a.efficiency_gap) for a in atts))
for row in global_importance(atts)[:4]:
    print(row)
