# %% [markdown]
# # Contour features
#
# Otsu threshold, largest 8-connected component, Moore boundary trace, then
# eleven shape and intensity descriptors per image.

# %%
from dataclasses import asdict

import numpy as np

from histoswin.contour import features_report, image_features
from histoswin.data import synth_dataset

rect = np.zeros((40, 50))
rect[5:15, 7:27] = 0.8
print(asdict(image_features(np.repeat(rect[None], 3, axis=0))))

# %%
rows = features_report(synth_dataset("shapes", 10, 64, seed=0), ["ellipse", "rectangle"])
for r in rows[-2:]:
    print(r["class"], "mean extent", round(r["extent"], 3), "mean aspect", round(r["aspect_ratio"], 3))
