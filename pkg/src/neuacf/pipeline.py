"""Prepare / train / evaluate / export stages driven by a :class:`RunConfig`.

Layout of an output directory::

    prepared/manifest.json        config hash, dataset manifest, file list
    prepared/split.npz            leave-one-out split
    prepared/sim_<side>_<aspect>.txt
    train/<fusion>/train.log      ``epoch loss hr@10 ndcg@10 seconds``
    train/<fusion>/best.npz       checkpoint of the best epoch (by HR@10)
    train/<fusion>/report.txt     human-readable table
    train/<fusion>/records.jsonl  one record per (model, K)
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from neuacf import evaluate as ev
from neuacf.ingest import SCHEMAS, build_hin, load_amazon, load_movielens, to_implicit
from neuacf.model import AspectSet, ModelConfig, NeuACF, TrainConfig, TrainData, parse_fusion, train_epoch
from neuacf.nn import load_checkpoint, save_checkpoint
from neuacf.simpath import SimilarityMatrix, load_similarity, metapath_similarity, save_similarity

log = logging.getLogger(__name__)

DEFAULT_ASPECTS = {
    "movielens": [["history", "UMU", "MUM"], ["director", "UMDMU", "MDM"], ["actor", "UMAMU", "MAM"]],
    "amazon": [
        ["history", "UIU", "IUI"], ["brand", "UIBIU", "IBI"],
        ["category", "UICIU", "ICI"], ["co_view", "UIVIU", "IVI"],
    ],
}

PREPARE_FIELDS = ("flavor", "ratings", "attributes", "min_user_items", "aspects", "seed", "n_candidates")


class StageError(RuntimeError):
    pass


@dataclass
class RunConfig:
    flavor: str = "movielens"
    ratings: str = ""
    attributes: dict[str, str] = field(default_factory=dict)
    min_user_items: int = 10
    aspects: list[list[str]] = field(default_factory=list)
    fusion: str = "attention"
    latent_dim: int = 64
    hidden: int = 600
    layers: int = 3
    attention_hidden: int = 64
    final_activation: str = "linear"
    dtype: str = "float64"
    batch_size: int = 1024
    learning_rate: float = 0.0005
    neg_ratio: int = 10
    epochs: int = 100
    seed: int = 0
    n_candidates: int = 99
    output: str = "runs/default"

    def __post_init__(self):
        if self.flavor not in SCHEMAS:
            raise ValueError(f"unknown dataset flavor {self.flavor!r}")
        if not self.aspects:
            self.aspects = [list(a) for a in DEFAULT_ASPECTS[self.flavor]]
        self.aspects = [list(a) for a in self.aspects]
        AspectSet(self.aspects)
        parse_fusion(self.fusion)
        for name in ("latent_dim", "hidden", "layers", "attention_hidden", "batch_size",
                     "learning_rate", "epochs", "n_candidates"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.neg_ratio < 0 or self.seed < 0:
            raise ValueError("neg_ratio and seed must be non-negative")

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            data = json.load(fh)
        base = Path(path).parent
        for key in ("ratings", "output"):
            if key in data and not Path(data[key]).is_absolute():
                data[key] = str(base / data[key])
        data["attributes"] = {
            k: v if Path(v).is_absolute() else str(base / v) for k, v in data.get("attributes", {}).items()
        }
        return cls(**data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def _hash(self, keys) -> str:
        d = self.to_dict()
        blob = json.dumps({k: d[k] for k in keys}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def prepare_hash(self) -> str:
        return self._hash(PREPARE_FIELDS)

    @property
    def config_hash(self) -> str:
        return self._hash(sorted(k for k in self.to_dict() if k != "output"))

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig(
            self.latent_dim, self.hidden, self.layers, self.attention_hidden,
            self.final_activation, self.fusion, self.dtype,
        )

    @property
    def fusion_tag(self) -> str:
        return self.fusion.replace(":", "-")

    @property
    def out(self) -> Path:
        return Path(self.output)

    @property
    def prepared_dir(self) -> Path:
        return self.out / "prepared"

    @property
    def train_dir(self) -> Path:
        return self.out / "train" / self.fusion_tag


def load_raw(config: RunConfig):
    if config.flavor == "movielens":
        return load_movielens(config.ratings, config.attributes)
    return load_amazon(config.ratings, config.attributes, config.min_user_items)


def _sim_path(config: RunConfig, side: str, label: str) -> Path:
    return config.prepared_dir / f"sim_{side}_{label}.txt"


def cmd_prepare(config: RunConfig) -> dict:
    """Split, build the HIN from training data and write every similarity matrix."""
    try:
        raw = load_raw(config)
    except (OSError, ValueError) as exc:
        raise StageError(f"ingest failed for {config.ratings}: {exc}") from exc
    users, items, times = to_implicit(raw)
    split = ev.leave_one_out_split(
        users, items, times, raw.n_users, raw.n_items,
        np.random.default_rng(config.seed), config.n_candidates,
    )
    graph = build_hin(raw, SCHEMAS[config.flavor], split.train_users, split.train_items)
    config.prepared_dir.mkdir(parents=True, exist_ok=True)

    files = []
    for label, user_path, item_path in config.aspects:
        for side, expr in (("user", user_path), ("item", item_path)):
            try:
                sim = metapath_similarity(graph, expr, label, side)
            except ValueError as exc:
                raise StageError(f"aspect {label!r} ({side} path {expr}): {exc}") from exc
            p = _sim_path(config, side, label)
            save_similarity(sim, p)
            files.append(p.name)

    np.savez(
        config.prepared_dir / "split.npz",
        **{k: v for k, v in dataclasses.asdict(split).items() if isinstance(v, np.ndarray)},
        shape=np.array([split.n_users, split.n_items]),
    )
    manifest = {
        "prepare_hash": config.prepare_hash,
        "dataset": raw.manifest(),
        "files": files,
        "raw_ids": {"user": raw.id_maps["U"], "item": raw.id_maps[raw.item_type]},
        "n_test_users": int(len(split.test_users)),
    }
    with open(config.prepared_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    with open(config.prepared_dir / "config.json", "w") as fh:
        json.dump(config.to_dict(), fh, indent=1, sort_keys=True)
    log.info("prepared %d similarity matrices in %s", len(files), config.prepared_dir)
    return manifest


def load_manifest(config: RunConfig) -> dict:
    path = config.prepared_dir / "manifest.json"
    if not path.exists():
        raise StageError(f"no prepared data at {config.prepared_dir}; run prepare first")
    with open(path) as fh:
        manifest = json.load(fh)
    if manifest["prepare_hash"] != config.prepare_hash:
        raise StageError(
            f"prepared data hash {manifest['prepare_hash']} does not match config hash "
            f"{config.prepare_hash}; rerun prepare"
        )
    return manifest


def load_split(config: RunConfig) -> ev.LooSplit:
    with np.load(config.prepared_dir / "split.npz") as z:
        n_users, n_items = z["shape"].tolist()
        return ev.LooSplit(
            z["train_users"], z["train_items"], z["train_times"],
            z["test_users"], z["test_items"], z["candidates"], n_users, n_items,
        )


def load_similarities(config: RunConfig) -> dict[str, dict[str, SimilarityMatrix]]:
    sims: dict[str, dict[str, SimilarityMatrix]] = {"user": {}, "item": {}}
    for label, _, _ in config.aspects:
        for side in sims:
            sims[side][label] = load_similarity(_sim_path(config, side, label))
    return sims


def build_model(config: RunConfig, sims=None) -> NeuACF:
    sims = sims if sims is not None else load_similarities(config)
    dense = {side: {k: s.dense(config.dtype) for k, s in d.items()} for side, d in sims.items()}
    return NeuACF.create(
        AspectSet(config.aspects), dense, config.model_config,
        np.random.default_rng([config.seed, 1]), config.learning_rate,
    )


def save_model(model: NeuACF, config: RunConfig, path, epoch: int) -> None:
    arrays = dict(model.params())
    for name, m in model.adam.first_moment.items():
        arrays[f"adam_m/{name}"] = m
        arrays[f"adam_v/{name}"] = model.adam.second_moment[name]
    meta = {
        "config": config.to_dict(),
        "config_hash": config.config_hash,
        "prepare_hash": config.prepare_hash,
        "seed": config.seed,
        "epoch": epoch,
        "fusion_mode": config.fusion,
        "aspects": AspectSet(config.aspects).to_list(),
        "layer_sizes": {
            f"{side}/{label}": list(t.layer_sizes) for side in model.towers for label, t in model.towers[side].items()
        },
        "adam": {
            "t": model.adam.t, "learning_rate": model.adam.learning_rate,
            "beta1": model.adam.beta1, "beta2": model.adam.beta2, "epsilon": model.adam.epsilon,
        },
    }
    save_checkpoint(path, arrays, meta)


def load_model(config: RunConfig, checkpoint, sims=None) -> tuple[NeuACF, dict]:
    arrays, meta = load_checkpoint(checkpoint)
    if meta["config_hash"] != config.config_hash:
        raise StageError(
            f"checkpoint {checkpoint} was trained with config {meta['config_hash']}, "
            f"current config is {config.config_hash}"
        )
    model = build_model(config, sims)
    params = model.params()
    for name, p in params.items():
        p[...] = arrays[name]
    for name in params:
        if f"adam_m/{name}" in arrays:
            model.adam.first_moment[name] = arrays[f"adam_m/{name}"].copy()
            model.adam.second_moment[name] = arrays[f"adam_v/{name}"].copy()
    model.adam.t = meta["adam"]["t"]
    return model, meta


def evaluate_model(net: NeuACF, split: ev.LooSplit, ks=ev.DEFAULT_KS, **meta) -> ev.EvalReport:
    return ev.evaluate_ranked(ev.rank_for_model(net, split), split.test_items, ks, **meta)


def cmd_train(config: RunConfig) -> dict:
    """Train for ``config.epochs``, evaluating after every epoch; keep the best by HR@10."""
    manifest = load_manifest(config)
    split = load_split(config)
    model = build_model(config)
    data = TrainData(split.train_users, split.train_items, split.n_users, split.n_items)
    tcfg = TrainConfig(config.batch_size, config.neg_ratio)
    out = config.train_dir
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w") as fh:
        json.dump({**config.to_dict(), "config_hash": config.config_hash}, fh, indent=1, sort_keys=True)

    best = {"epoch": 0, "hr@10": -1.0, "ndcg@10": 0.0}
    history = []
    with open(out / "train.log", "w") as logf:
        logf.write(f"# config_hash {config.config_hash} prepare_hash {manifest['prepare_hash']}\n")
        logf.write("# epoch loss hr@10 ndcg@10 seconds\n")
        for epoch in range(1, config.epochs + 1):
            t0 = time.perf_counter()
            loss = train_epoch(model, data, tcfg, np.random.default_rng([config.seed, 2, epoch]))
            report = evaluate_model(model, split, (10,))
            hr, ndcg = report.metrics[10]
            secs = time.perf_counter() - t0
            line = f"{epoch} {loss:.6f} {hr:.4f} {ndcg:.4f} {secs:.1f}"
            logf.write(line + "\n")
            logf.flush()
            log.info("[%s] %s", config.fusion, line)
            history.append({"epoch": epoch, "loss": loss, "hr@10": hr, "ndcg@10": ndcg})
            if hr > best["hr@10"]:
                best = {"epoch": epoch, "hr@10": hr, "ndcg@10": ndcg}
                save_model(model, config, out / "best.npz", epoch)
    summary = {"best": best, "history": history, "config_hash": config.config_hash}
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=1)
    return summary


def attention_summary(model: NeuACF, split: ev.LooSplit) -> dict[str, dict[str, float]]:
    """Average per-node aspect weights: test users on the user side, all items on the item side."""
    _, wu = model.fused_factors("user", split.test_users)
    _, wi = model.fused_factors("item")
    labels = model.active_aspects
    return {
        "user": dict(zip(labels, wu.mean(axis=0).tolist())),
        "item": dict(zip(labels, wi.mean(axis=0).tolist())),
    }


def model_name(config: RunConfig) -> str:
    names = {"attention": "NeuACF", "self_attention": "NeuACF++", "average": "NeuACF-average"}
    mode, only = parse_fusion(config.fusion)
    return names.get(mode, f"NeuACF-single-{only}")


def cmd_evaluate(config: RunConfig, checkpoint=None) -> list[ev.EvalReport]:
    """HR/NDCG at every K for the checkpoint plus the ItemPop baseline."""
    load_manifest(config)
    checkpoint = checkpoint or config.train_dir / "best.npz"
    model, meta = load_model(config, checkpoint)
    split = load_split(config)
    common = dict(seed=config.seed, config_hash=config.config_hash)
    report = evaluate_model(
        model, split, model=model_name(config), epoch=meta["epoch"],
        run_id=f"{config.config_hash}-{config.fusion_tag}", **common,
    )
    if model.fusion_mode in ("attention", "self_attention"):
        report.extra["attention"] = attention_summary(model, split)
    pop = ev.evaluate_ranked(
        ev.item_pop_ranked(split), split.test_items, model="ItemPop", epoch=0,
        run_id=f"{config.config_hash}-itempop", **common,
    )
    reports = [report, pop]
    out = config.train_dir
    out.mkdir(parents=True, exist_ok=True)
    text = ev.format_table(reports)
    if "attention" in report.extra:
        text += "\n\nmean attention per aspect\n"
        for side, weights in report.extra["attention"].items():
            text += f"  {side:<5}" + "".join(f"  {k}={v:.4f}" for k, v in weights.items()) + "\n"
    (out / "report.txt").write_text(text + "\n")
    with open(out / "records.jsonl", "w") as fh:
        for r in reports:
            for rec in r.records():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return reports


def cmd_export_factors(config: RunConfig, side: str, aspect: str, checkpoint=None, path=None) -> Path:
    """Write ``raw_id f_1 ... f_d`` per node for one tower."""
    manifest = load_manifest(config)
    checkpoint = checkpoint or config.train_dir / "best.npz"
    model, _ = load_model(config, checkpoint)
    if side not in ("user", "item"):
        raise StageError(f"side must be 'user' or 'item', got {side!r}")
    if aspect not in model.towers[side]:
        raise StageError(f"unknown aspect {aspect!r}; model has {model.active_aspects}")
    stack = model.aspect_factors(side, np.arange(model.n_nodes(side)))
    factors = stack[:, model.active_aspects.index(aspect), :]
    path = Path(path) if path else config.train_dir / f"factors_{side}_{aspect}.txt"
    ids = manifest["raw_ids"][side]
    with open(path, "w") as fh:
        for raw_id, row in zip(ids, factors):
            fh.write(raw_id + " " + " ".join(f"{v:.9g}" for v in row) + "\n")
    return path


def cmd_report(config: RunConfig) -> str:
    """Collect every evaluated run under the output directory into one table."""
    seen, rows = set(), []
    for rec_file in sorted((config.out / "train").glob("*/records.jsonl")):
        by_model: dict[str, dict] = {}
        for line in rec_file.read_text().splitlines():
            rec = json.loads(line)
            by_model.setdefault(rec["model"], {})[rec["K"]] = (rec["hr"], rec["ndcg"])
        for name, metrics in by_model.items():
            if name in seen:
                continue
            seen.add(name)
            rows.append(ev.EvalReport(metrics, model=name))
    if not rows:
        raise StageError(f"no evaluated runs under {config.out / 'train'}")
    return ev.format_table(rows)
