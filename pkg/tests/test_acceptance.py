"""Acceptance gates.  Each test records one verdict line, printed at the end of the session."""
import os
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import spearmanr

from seq2logic import cli
from seq2logic.checks import TOY_SRC, TOY_TGT, gradient_check, toy_parser
from seq2logic.config import TrainConfig
from seq2logic.data import Corpus, read_pairs, preprocess_pairs
from seq2logic.decoder import CACHE_KINDS
from seq2logic.evaluate import evaluate
from seq2logic.influence import (HvpConfig, augment_and_sweep, default_scale, exact_inverse_hvp, from_arrays,
                                 influence_scores, leave_one_out_effects, random_selection, select_influential,
                                 stochastic_hvp)
from seq2logic.numcore import SeededRng, Tensor
from seq2logic.synthetic import two_domain
from seq2logic.training import build_parser, train

from conftest import SAMPLE


def verdict(record, number, ok, text):
    record(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {text}")


def test_criterion_1_gradient_suite(record):
    start = time.perf_counter()
    worst, failures = 0.0, []
    for kind in CACHE_KINDS:
        for seed in range(10):
            # every entry for the first seed, a random 10 per parameter for the rest
            report = gradient_check(kind, seed, d=4, emb=3, max_entries=None if seed == 0 else 10)
            worst = max(worst, report.max_error)
            if not report.passed:
                failures.append(f"{kind}/seed{seed}: {report.failures}")
    elapsed = time.perf_counter() - start
    parser, _ = toy_parser("f1")
    assert (len(TOY_SRC), len(TOY_TGT), len(parser.params["src_emb"].values)) == (7, 5, 7)
    ok = not failures and worst <= 1e-3 and elapsed < 60
    verdict(record, 1, ok, f"gradient suite f1-f6 x 10 seeds: max rel err {worst:.2e} (<= 1e-3), {elapsed:.1f}s (< 60s)")
    assert not failures, failures
    assert elapsed < 60


def test_criterion_2_normalization(record):
    start = time.perf_counter()
    worst = 0.0
    for kind in CACHE_KINDS:
        parser, _ = toy_parser(kind, seed=11)
        rng = np.random.default_rng(CACHE_KINDS.index(kind))
        for _ in range(1000):
            m = int(rng.integers(1, 6))
            B = Tensor(rng.normal(scale=2.0, size=(m, 16)))
            state = (Tensor(rng.normal(scale=2.0, size=4)), Tensor(rng.normal(scale=2.0, size=4)))
            _, dist = parser.step(state, int(rng.integers(len(TOY_TGT))), B)
            p = dist.probs
            assert np.all(p >= 0)
            assert p.size == len(TOY_TGT) + m + len(TOY_SRC)
            worst = max(worst, abs(p.sum() - 1.0))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9
    verdict(record, 2, ok, f"6000 joint distributions: max |sum - 1| = {worst:.1e} (<= 1e-9), {elapsed:.1f}s")
    assert ok


def test_criterion_3_copy_only_reduction(record, geo_pairs):
    corpus = Corpus.from_pairs(geo_pairs[:5])
    mismatches, steps = 0, 0
    for seed in range(5):
        base = TrainConfig(d=6, emb=5, seed=seed)
        with_cache = build_parser(base, corpus.src_vocab, corpus.tgt_vocab)
        stripped = build_parser(base.replace(cache_fn="off"), corpus.src_vocab, corpus.tgt_vocab)
        assert not any(n.startswith("cache.") for n in stripped.params)
        # same tensors, cache segment switched off by configuration
        disabled = type(with_cache)(base.replace(cache_fn="off"), corpus.src_vocab, corpus.tgt_vocab,
                                    with_cache.params)
        for ex in corpus:
            full = with_cache.distributions(ex)
            for a, b, c in zip(full, stripped.distributions(ex), disabled.distributions(ex)):
                n = a.n_write + a.n_copy
                steps += 1
                same = (np.array_equal(a.logits.values[:n], b.logits.values)
                        and np.array_equal(b.logits.values, c.logits.values) and b.n_cache == 0)
                mismatches += not same
    ok = mismatches == 0
    verdict(record, 3, ok, f"write+copy logits bit-identical without cache in {steps - mismatches}/{steps} steps")
    assert ok


def test_criterion_4_overfit(record):
    pairs = preprocess_pairs(read_pairs(SAMPLE))[:20]
    corpus = Corpus.from_pairs(pairs)
    # constant learning rate: under the halving schedule the summed step size is bounded by 2 * lr0
    config = TrainConfig(d=50, emb=50, epochs=200, lr0=0.1, lr_decay=1.0, cache_fn="f1", seed=0)
    start = time.perf_counter()
    parser, report = train(corpus, config)
    acc = evaluate(parser, corpus).seq_accuracy
    elapsed = time.perf_counter() - start
    ok = acc >= 0.95 and elapsed <= 600
    verdict(record, 4, ok, f"20-pair overfit d=50 f1 200 epochs: train SEQ {acc:.3f} (>= 0.95), {elapsed:.0f}s (<= 600s)")
    assert acc >= 0.95
    assert elapsed <= 600


def hvp_problem(seed=0, n=500, p=50, lam=0.01):
    rng = np.random.default_rng(seed)
    X = np.c_[rng.normal(size=(n, p - 1)) * 2 / np.sqrt(p - 1), np.ones(n)]
    y = (rng.uniform(size=n) < 1 / (1 + np.exp(-X @ rng.normal(size=p)))).astype(float)
    return from_arrays(X, y, lam)


def test_criterion_5_hvp_oracle(record):
    clf = hvp_problem()
    assert clf.X.shape == (500, 50)
    v = np.random.default_rng(1).normal(size=clf.dim)
    start = time.perf_counter()
    config = HvpConfig(depth=5000, chains=50, scale=4 * default_scale(clf))
    est = stochastic_hvp(clf, v, config, SeededRng(0))
    elapsed = time.perf_counter() - start
    exact = exact_inverse_hvp(clf, v)
    err = np.linalg.norm(est - exact) / np.linalg.norm(exact)
    ok = err <= 0.05 and elapsed < 60
    verdict(record, 5, ok, f"LiSSA vs exact on 500x50 logistic: rel L2 err {err:.4f} (<= 0.05), {elapsed:.1f}s (< 60s)")
    assert err <= 0.05
    assert elapsed < 60


def test_criterion_6_influence_vs_loo(record):
    rng = np.random.default_rng(5)
    n, p = 100, 8
    X = np.c_[rng.normal(size=(n, p - 1)), np.ones(n)]
    w_true = rng.normal(size=p)
    y = (rng.uniform(size=n) < 1 / (1 + np.exp(-X @ w_true))).astype(float)
    clf = from_arrays(X, y, 0.05)
    X_test = np.c_[rng.normal(size=(30, p - 1)), np.ones(30)]
    y_test = (rng.uniform(size=30) < 1 / (1 + np.exp(-X_test @ w_true))).astype(float)
    start = time.perf_counter()
    scores = influence_scores(clf, np.arange(n), X_test, y_test)
    loo = leave_one_out_effects(clf, X_test, y_test)
    elapsed = time.perf_counter() - start
    rho = spearmanr(scores, loo).statistic
    ok = rho >= 0.8 and elapsed < 300
    verdict(record, 6, ok, f"influence vs leave-one-out on 100 examples: Spearman {rho:.4f} (>= 0.8), {elapsed:.1f}s")
    assert rho >= 0.8


PUBLISHED = {"off": (0.771, 0.883), "f1": (0.775, 0.901)}


def test_criterion_7_full_geoquery(record):
    path = os.environ.get("GEOQUERY_TSV")
    if not path or not Path(path).exists() or len(read_pairs(path)) < 880:
        record("criterion 7: NOT RUN  full GeoQuery (880 pairs) unavailable; set GEOQUERY_TSV and see "
               "scripts/reproduce_geoquery.py (environment-dependent, not a gate)")
        pytest.skip("GEOQUERY_TSV not provided")
    from seq2logic.data import split_corpus
    corpus = Corpus.from_pairs(preprocess_pairs(read_pairs(path)))
    train_c, test_c = split_corpus(corpus, "standard:geoquery")
    results = {}
    for kind in ("off", "f1"):
        results[kind] = []
        for seed in range(3):
            parser, _ = train(train_c, TrainConfig(cache_fn=kind, seed=seed))
            rep = evaluate(parser, test_c)
            results[kind].append((rep.seq_accuracy, rep.tok_accuracy))
    within = all(abs(np.mean([r[0] for r in results[k]]) - PUBLISHED[k][0]) <= 0.05
                 and abs(np.mean([r[1] for r in results[k]]) - PUBLISHED[k][1]) <= 0.03 for k in results)
    majority = sum(c[1] >= o[1] for c, o in zip(results["f1"], results["off"])) >= 2
    ok = within and majority
    verdict(record, 7, ok, f"full GeoQuery {results}")
    assert ok


def test_criterion_8_sweep_dominance(record):
    dom = two_domain(0, n_train=8, n_test=100)
    config = TrainConfig(d=16, emb=16, epochs=20, lr0=0.1, lr_decay=1.0, cache_fn="f1")
    steps, seeds = [0, 10, 20, 40], [0, 1, 2, 3, 4]
    start = time.perf_counter()
    hvp = HvpConfig(repetitions=20, depth=500, top_k=40, sample_size=40)
    chosen = select_influential(dom.source, dom.target_train, hvp, SeededRng(0).child("influence"),
                                target_test=dom.target_test).sampled
    rand = random_selection(len(dom.source), 40, SeededRng(0).child("random"))
    inf_curve = augment_and_sweep(dom.target_train, dom.target_test, [dom.source[i] for i in chosen], steps,
                                  config, seeds=seeds)
    rnd_curve = augment_and_sweep(dom.target_train, dom.target_test, [dom.source[i] for i in rand], steps,
                                  config, seeds=seeds)
    elapsed = time.perf_counter() - start
    dominated = all(
        (a[1] >= b[1] and a[2] >= b[2]) if n == 0 else (a[1] > b[1] and a[2] > b[2])
        for n, a, b in zip(steps, inf_curve, rnd_curve))
    text = " ".join(f"n={a[0]}:{a[1]:.3f}/{b[1]:.3f}" for a, b in zip(inf_curve, rnd_curve))
    verdict(record, 8, dominated, f"influential vs random SEQ {text} (strictly above for n > 0, SEQ and TOK), {elapsed:.0f}s")
    assert dominated


def test_criterion_9_determinism(record, tmp_path):
    argv = ["train", "--d", "6", "--emb", "5", "--epochs", "3", "--lr0", "0.1", "--seed", "7",
            "--data", str(SAMPLE), "--split", "frac:0.7,seed:2", "--debruijn"]
    outs = []
    for name in ("first", "second"):
        assert cli.main(argv + ["--run-dir", str(tmp_path / name)]) == 0
        outs.append((tmp_path / name / "eval" / "metrics.json").read_bytes())
    ok = outs[0] == outs[1]
    verdict(record, 9, ok, f"two identical CLI runs: metrics.json byte-identical ({len(outs[0])} bytes)")
    assert ok
