# %% [markdown]
# # Training and evaluation
#
# Adam on cross-entropy, validation after every epoch, and the best epoch kept.
# A short run on a small corpus keeps this quick; the full 20-epoch setting
# takes about two minutes per run on one core.

# %%
from histoswin.data import split_dataset, synth_dataset
from histoswin.model import HybridModelConfig
from histoswin.train import TrainConfig, multi_run

samples = synth_dataset("blob_vs_stripe", 60, 64, seed=0)
split = split_dataset(samples, seed=0)
report = multi_run(2, 0, HybridModelConfig(), samples, split, TrainConfig(epochs=3, lr=1e-3))
for row in report.rows():
    print(row)

# %%
run = report.runs[0]
for e in run.record.epochs:
    print(e)
print("confusion\n", run.test_report.confusion)
