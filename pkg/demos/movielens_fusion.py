"""
Aspect fusion on MovieLens-100K
===============================

Runs the prepare / train / evaluate stages for the two fusion modes and a
history-only model, then prints the comparison table. One epoch per model
by default; pass a number to train longer::

    python demos/movielens_fusion.py 10

The data is fetched into ``data/ml-100k`` on first use.
"""

import subprocess
import sys
from pathlib import Path

from neuacf import pipeline
from neuacf.pipeline import RunConfig

root = Path(__file__).resolve().parents[1]
if not (root / "data" / "ml-100k" / "u.data").exists():
    subprocess.run([sys.executable, str(root / "scripts" / "fetch_ml100k.py")], check=True)

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 1
base = RunConfig.load(root / "configs" / "ml100k.json").replace(
    epochs=epochs, output=str(root / "runs" / "demo")
)

# %%
# Similarity matrices are computed once and shared by every model.
pipeline.cmd_prepare(base)

for fusion in ("self_attention", "attention", "single:history"):
    cfg = base.replace(fusion=fusion)
    summary = pipeline.cmd_train(cfg)
    print(fusion, "best epoch", summary["best"])
    pipeline.cmd_evaluate(cfg)

# %%
# ``report`` collects every evaluated run under the output directory.
print(pipeline.cmd_report(base))

# %%
# The learned aspect weights of the attention model.
print((base.replace(fusion="attention").train_dir / "report.txt").read_text())
