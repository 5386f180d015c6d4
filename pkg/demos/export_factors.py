"""
Inspecting aspect-level item factors
====================================

Trains a small model on the synthetic block set through the pipeline,
exports the item factors of the brand aspect and lists each item's nearest
neighbour by cosine similarity.
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from neuacf import pipeline
from neuacf.pipeline import RunConfig

tmp = Path(tempfile.mkdtemp())
rows = [(u, i, t) for u in range(8) for t, i in enumerate(range(4 * (u // 4), 4 * (u // 4) + 4))]
(tmp / "ratings.csv").write_text("".join(f"u{u},i{i},5,{t}\n" for u, i, t in rows))
(tmp / "brand.dat").write_text("".join(f"i{i}\tb{i // 4}\n" for i in range(8)))
(tmp / "config.json").write_text(json.dumps({
    "flavor": "amazon", "ratings": "ratings.csv", "attributes": {"IB": "brand.dat"},
    "min_user_items": 1, "aspects": [["history", "UIU", "IUI"], ["brand", "UIBIU", "IBI"]],
    "latent_dim": 8, "hidden": 32, "attention_hidden": 8, "n_candidates": 4,
    "epochs": 30, "output": "run",
}))

cfg = RunConfig.load(tmp / "config.json")
pipeline.cmd_prepare(cfg)
pipeline.cmd_train(cfg)

# %%
# One line per item: raw id followed by the factor vector.
path = pipeline.cmd_export_factors(cfg, "item", "brand")
lines = [l.split() for l in path.read_text().splitlines()]
ids = [l[0] for l in lines]
f = np.array([[float(x) for x in l[1:]] for l in lines])
f /= np.linalg.norm(f, axis=1, keepdims=True) + 1e-12
cos = f @ f.T
np.fill_diagonal(cos, -np.inf)
for k, name in enumerate(ids):
    print(f"{name}: nearest {ids[int(np.argmax(cos[k]))]}")
