# %% [markdown]
# # Command line
#
# The same workflow through the `histoswin` entry point. Every command takes
# `--seed` and `--out`; a JSON file passed with `--config` supplies defaults
# that flags override.

# %%
import tempfile
from pathlib import Path

from histoswin.cli import main

work = Path(tempfile.mkdtemp())
main(["synth", "--out", str(work / "data"), "--n", "40", "--size", "64"])
main(["train", "--data", str(work / "data"), "--out", str(work / "run"), "--epochs", "2", "--lr", "1e-3"])
ckpt = work / "run" / "run_0" / "best.ckpt"
main(["evaluate", "--checkpoint", str(ckpt), "--data", str(work / "data"), "--out", str(work / "eval")])
image = sorted((work / "data" / "blob").iterdir())[0]
main(["explain", "--checkpoint", str(ckpt), "--image", str(image), "--method", "occlusion",
      "--data", str(work / "data"), "--out", str(work / "explain")])
main(["features", "--data", str(work / "data"), "--out", str(work / "features")])
print(sorted(p.name for p in work.rglob("*") if p.is_file())[:20])
