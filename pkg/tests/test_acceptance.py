"""Acceptance gate. Each test carries a ``criterion`` marker; the terminal
summary prints one PASS/FAIL/SKIP line per test.

The MovieLens runs (criteria 6, 7) are marked ``slow`` and take roughly
about 1 h 40 min on a single core; ``pytest -m "not slow"`` skips them.
"""

import itertools
import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from neuacf import evaluate as ev
from neuacf import pipeline
from neuacf.hin import Schema, build_graph
from neuacf.ingest import AMAZON_SCHEMA, block_dataset, build_hin, load_amazon, load_movielens, to_implicit
from neuacf.model import (
    AspectSet,
    AttentionNet,
    ModelConfig,
    NeuACF,
    TrainConfig,
    TrainData,
    attention_fuse,
    average_fuse,
    self_attention_coefficients,
    self_attention_fuse,
    train_epoch,
)
from neuacf.pipeline import RunConfig
from neuacf.simpath import commuting_matrix, metapath_similarity, parse_metapath, pathsim
from oracles import central_difference, enumerate_paths, hr_ndcg_reference, pathsim_reference, rel_error

ROOT = Path(__file__).resolve().parents[1]
ML100K = ROOT / "data" / "ml-100k"
AMAZON = ROOT / "data" / "amazon"
ML_CONFIG = ROOT / "configs" / "ml100k.json"

ITEMPOP_HR10 = 0.3998
BANDS = {"self_attention": (0.6915, 0.4092), "attention": (0.6846, None)}


def criterion(number, title):
    return pytest.mark.criterion(number, title)


def note(request, text):
    request.node.acceptance_detail = text
    print(text)


@pytest.fixture(scope="session")
def ml100k():
    if not (ML100K / "u.data").exists():
        subprocess.run([sys.executable, str(ROOT / "scripts" / "fetch_ml100k.py"), str(ML100K)], check=True)
    return ML100K


# -- 1 ---------------------------------------------------------------------------


def _random_hin(rng):
    types = "UIBC"
    n_rel = int(rng.integers(1, 4))
    rels = [(types[k] + types[k + 1], types[k], types[k + 1]) for k in range(n_rel)]
    used = types[: n_rel + 1]
    schema = Schema(used, rels)
    counts = {t: int(rng.integers(1, 31)) for t in used}
    edges = {}
    for label, a, b in rels:
        m = int(rng.integers(0, counts[a] * counts[b] + 1))
        edges[label] = list(zip(rng.integers(0, counts[a], m).tolist(), rng.integers(0, counts[b], m).tolist()))
    exprs = []
    for k in range(1, n_rel + 1):
        exprs.append(used[: k + 1] + used[:k][::-1])
        exprs.append(used[k : n_rel + 1][::-1] + used[k : n_rel + 1][1:])
    return schema, build_graph(schema, edges, counts), edges, [e for e in exprs if len(e) >= 3]


@criterion(1, "PathSim oracle equivalence on 100 random HINs")
def test_criterion_1_pathsim_oracle(request):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    checked = 0
    for _ in range(100):
        schema, g, edges, exprs = _random_hin(rng)
        for expr in exprs:
            path = parse_metapath(expr, schema)
            n = g.count(path.endpoint_type)
            m = commuting_matrix(g, path)
            np.testing.assert_array_equal(m.toarray(), enumerate_paths(edges, path.steps, n, n))
            sim = pathsim(m).matrix.toarray()
            np.testing.assert_allclose(sim, pathsim_reference(m.toarray()), rtol=0, atol=1e-12)
            checked += 1
    secs = time.perf_counter() - t0
    note(request, f"{checked} meta-paths, {secs:.1f}s")
    assert secs < 60


# -- 2 ---------------------------------------------------------------------------


def _toy_model(fusion, L, d=4, n_users=6, n_items=5, seed=0):
    rng = np.random.default_rng(seed)
    labels = [f"a{k}" for k in range(L)]

    def sim(n):
        s = rng.random((n, n)) * (rng.random((n, n)) < 0.6)
        s = (s + s.T) / 2
        np.fill_diagonal(s, 1.0)
        return s

    sims = {"user": {lab: sim(n_users) for lab in labels}, "item": {lab: sim(n_items) for lab in labels}}
    cfg = ModelConfig(latent_dim=d, hidden=6, layers=3, attention_hidden=5, fusion=fusion)
    model = NeuACF.create(AspectSet([(lab, "UIU", "IUI") for lab in labels]), sims, cfg, rng)
    for p in model.params().values():
        if p.ndim == 1:
            p[:] = rng.normal(scale=0.1, size=p.shape)
    return model


@criterion(2, "end-to-end gradients vs central differences")
def test_criterion_2_gradients(request):
    t0 = time.perf_counter()
    worst = 0.0
    for fusion in ("attention", "self_attention"):
        for L in (2, 3):
            model = _toy_model(fusion, L, seed=L)
            rng = np.random.default_rng(L)
            users, items = rng.integers(0, 6, 10), rng.integers(0, 5, 10)
            labels = (rng.random(10) < 0.4).astype(float)
            _, grads = model.loss_and_grads(users, items, labels)
            f = lambda: model.loss_and_grads(users, items, labels)[0]
            for name, p in model.params().items():
                num = central_difference(f, p)
                if not np.any(num) and not np.any(grads[name]):
                    continue
                err = rel_error(grads[name], num)
                worst = max(worst, err)
                assert err < 1e-5, (fusion, L, name, err)
    secs = time.perf_counter() - t0
    note(request, f"max relative error {worst:.2e}, {secs:.1f}s")
    assert secs < 60


# -- 3 ---------------------------------------------------------------------------


@criterion(3, "fusion invariants")
def test_criterion_3_fusion_invariants():
    rng = np.random.default_rng(3)
    for L in (1, 2, 3, 5):
        stack = rng.normal(size=(40, L, 6))
        net = AttentionNet.init(6, 8, rng)
        net.W2[:] = rng.normal(size=net.W2.shape)
        _, w = attention_fuse(stack, net)
        assert np.all(np.abs(w.sum(axis=1) - 1.0) <= 1e-9)
        uniform = AttentionNet.zeros(6, 8)
        fused_att, w0 = attention_fuse(stack, uniform)
        assert np.array_equal(w0, np.full_like(w0, 1.0 / L))
        assert np.array_equal(average_fuse(stack), fused_att)
        if L >= 2:
            coef = self_attention_coefficients(stack)
            assert np.all(np.diagonal(coef, axis1=1, axis2=2) == 0.0)
    stack = rng.normal(size=(40, 2, 6))
    fused, _ = self_attention_fuse(stack)
    assert np.array_equal(fused, stack[:, 1] + stack[:, 0])


# -- 4 ---------------------------------------------------------------------------


@criterion(4, "HR@K and NDCG@K against enumerated references")
def test_criterion_4_metric_oracle():
    for n_users in (1, 2, 3):
        for targets in itertools.product(range(25), repeat=n_users) if n_users < 3 else [(0, 7, 24), (4, 5, 19)]:
            ranked = np.tile(np.arange(25), (n_users, 1))
            held = np.array(targets)
            report = ev.evaluate_ranked(ranked, held)
            prev = (0.0, 0.0)
            for k in ev.DEFAULT_KS:
                ref = hr_ndcg_reference(ranked, held, k)
                assert report.hr(k) == pytest.approx(ref[0], abs=1e-15)
                assert report.ndcg(k) == pytest.approx(ref[1], abs=1e-12)
                assert report.hr(k) >= prev[0] and report.ndcg(k) >= prev[1]
                prev = report.metrics[k]


# -- 5 ---------------------------------------------------------------------------


@criterion(5, "ML100K dataset statistics")
def test_criterion_5_ml100k_stats(request, ml100k):
    raw = load_movielens(ml100k / "u.data", {})
    density = 100.0 * raw.density
    note(request, f"{raw.n_users} users, {raw.n_items} items, {raw.n_ratings} ratings, {density:.3f}%")
    assert (raw.n_users, raw.n_items, raw.n_ratings) == (943, 1682, 100000)
    # the reference figure is printed to three decimals (truncated here, rounded for Amazon)
    assert abs(density - 6.304) < 1e-3


@criterion(5, "Amazon dataset statistics")
def test_criterion_5_amazon_stats(request):
    files = {lab: AMAZON / f"{lab.lower()}.dat" for lab in ("IB", "IC", "IV")}
    ratings = AMAZON / "ratings.csv"
    if not ratings.exists() or not all(p.exists() for p in files.values()):
        pytest.skip(f"Amazon Electronics files not present under {AMAZON}")
    raw = load_amazon(ratings, {k: v for k, v in files.items()})
    density = 100.0 * raw.density
    note(request, f"{raw.n_users} users, {raw.n_items} items, {raw.n_ratings} ratings, {density:.3f}%")
    assert (raw.n_users, raw.n_items, raw.n_ratings) == (3532, 3105, 57104)
    assert abs(density - 0.521) < 1e-3


# -- 6, 7 ------------------------------------------------------------------------


@pytest.fixture(scope="module")
def ml100k_runs(ml100k, tmp_path_factory):
    base = RunConfig.load(ML_CONFIG).replace(output=str(tmp_path_factory.mktemp("ml100k")))
    pipeline.cmd_prepare(base)
    results = {}
    for fusion in ("self_attention", "attention", "single:history"):
        cfg = base.replace(fusion=fusion)
        pipeline.cmd_train(cfg)
        report = pipeline.cmd_evaluate(cfg)[0]
        results[fusion] = report.metrics[10]
        print(fusion, report.metrics[10], flush=True)
    return results


@pytest.mark.slow
@pytest.mark.parametrize("fusion", ["self_attention", "attention"])
@criterion(6, "ML100K desk-scale reproduction (band or ItemPop + 0.20)")
def test_criterion_6_reproduction(request, ml100k_runs, fusion):
    hr, ndcg = ml100k_runs[fusion]
    hr_ref, ndcg_ref = BANDS[fusion]
    in_band = abs(hr - hr_ref) <= 0.03 and (ndcg_ref is None or abs(ndcg - ndcg_ref) <= 0.03)
    floor = ITEMPOP_HR10 + 0.20
    note(request, f"HR@10 {hr:.4f} NDCG@10 {ndcg:.4f}; band {'hit' if in_band else 'missed'}, floor {floor:.4f}")
    assert in_band or hr >= floor


@pytest.mark.slow
@pytest.mark.parametrize("fusion", ["self_attention", "attention"])
@criterion(7, "fused HR@10 >= single-aspect history HR@10 - 0.005")
def test_criterion_7_ablation(request, ml100k_runs, fusion):
    fused, single = ml100k_runs[fusion][0], ml100k_runs["single:history"][0]
    note(request, f"{fusion} {fused:.4f} vs single:history {single:.4f}")
    assert fused >= single - 0.005


# -- 8 ---------------------------------------------------------------------------

BRAND = [("brand", "UIBIU", "IBI")]


def _block_model(train_users, train_items, raw, fusion, seed):
    g = build_hin(raw, AMAZON_SCHEMA, train_users, train_items)
    sims = {
        "user": {lab: metapath_similarity(g, up).dense() for lab, up, _ in BRAND},
        "item": {lab: metapath_similarity(g, ip).dense() for lab, _, ip in BRAND},
    }
    return NeuACF.create(AspectSet(BRAND), sims, ModelConfig(fusion=fusion), np.random.default_rng([seed, 1]))


@pytest.mark.parametrize("fusion", ["self_attention", "attention"])
@criterion(8, "4x4 separable synthetic: loss < 0.1 and HR@1 = 1")
def test_criterion_8_small_instance(request, fusion):
    raw = block_dataset()
    u, i, t = to_implicit(raw)
    seed = 0

    model = _block_model(u, i, raw, fusion, seed)
    data = TrainData(u, i, raw.n_users, raw.n_items)
    reached = None
    for epoch in range(1, 201):
        loss = train_epoch(model, data, TrainConfig(), np.random.default_rng([seed, 2, epoch]))
        if loss < 0.1:
            reached = epoch
            break

    split = ev.leave_one_out_split(u, i, t, raw.n_users, raw.n_items, np.random.default_rng(seed))
    model = _block_model(split.train_users, split.train_items, raw, fusion, seed)
    data = TrainData(split.train_users, split.train_items, raw.n_users, raw.n_items)
    for epoch in range(1, 201):
        train_epoch(model, data, TrainConfig(), np.random.default_rng([seed, 2, epoch]))
    hr1 = ev.evaluate_ranked(ev.rank_for_model(model, split), split.test_items, ks=(1,)).hr(1)
    note(request, f"loss < 0.1 at epoch {reached}; HR@1 {hr1:.3f}")
    assert reached is not None
    assert hr1 == 1.0


# -- 9 ---------------------------------------------------------------------------


@criterion(9, "identical config and seed give identical records")
def test_criterion_9_determinism(request, ml100k, tmp_path):
    base = RunConfig.load(ML_CONFIG).replace(latent_dim=8, hidden=32, attention_hidden=8, epochs=2, seed=5)
    outputs = []
    for run in ("a", "b"):
        cfg = base.replace(output=str(tmp_path / run))
        pipeline.cmd_prepare(cfg)
        pipeline.cmd_train(cfg)
        pipeline.cmd_evaluate(cfg)
        records = (cfg.train_dir / "records.jsonl").read_text()
        log = [l.rsplit(" ", 1)[0] for l in (cfg.train_dir / "train.log").read_text().splitlines()]
        outputs.append((records, log))
    note(request, f"{len(outputs[0][0].splitlines())} records compared")
    assert outputs[0] == outputs[1]
    assert [json.loads(l) for l in outputs[0][0].splitlines()]
