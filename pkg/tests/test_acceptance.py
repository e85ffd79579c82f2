"""Acceptance suite: one test per criterion.

Each criterion prints a PASS/FAIL line (visible live with `pytest -s`;
always echoed in the terminal summary). Statistical criteria use fixed
seeds throughout.
"""

import itertools
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager

import numpy as np
import pytest

from topicmine.cli import main as cli_main
from topicmine.corpus import Corpus
from topicmine.encoder import (
    EncoderConfig,
    TrainConfig,
    init_params,
    loss_and_grads,
    mask_tokens,
    train,
)
from topicmine.evalmetrics import (
    c_v_score,
    count_cooccurrence,
    npmi,
    perplexity,
    tc_umass,
)
from topicmine.fileio import sha256_file
from topicmine.lda import (
    LdaConfig,
    corpus_subset,
    estimate_phi,
    estimate_theta,
    fit,
    infer_held_out,
    init_assignments,
    gibbs_sweep,
    log_joint,
    select_topic_count,
    top_keywords,
    validate_counts,
)
from topicmine.projection import (
    TsneSettings,
    conditional_affinities,
    joint_affinities,
    low_dim_affinities,
    silhouette,
    tsne,
)
from topicmine.sampledata import generate_planted_corpus, write_sample_corpus

from conftest import make_corpus
from test_evalmetrics import oracle_cv, oracle_umass, oracle_windows


@contextmanager
def report(number: int, description: str):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {number} FAIL: {description}", flush=True)
        raise
    print(f"ACCEPTANCE {number} PASS: {description}", flush=True)


def _warm_gibbs_kernels():
    corpus, _, _ = generate_planted_corpus(M=4, V=10, K=2, doc_len=5, seed=99)
    model = fit(corpus, LdaConfig(K=2, iterations=2, burn_in=0, seed=0))
    infer_held_out(model, corpus, fold_in_iterations=1, seed=0)


def best_permutation_l1(phi: np.ndarray, phi_true: np.ndarray) -> float:
    K = phi.shape[0]
    return min(
        np.abs(phi[list(p), :] - phi_true).sum(axis=1).mean()
        for p in itertools.permutations(range(K))
    )


def test_criterion_1_planted_topic_recovery(planted):
    with report(1, "planted-topic recovery: mean L1 <= 0.15 in < 10 s"):
        corpus, _, phi_true = planted
        _warm_gibbs_kernels()  # JIT compile outside the timed window
        config = LdaConfig(
            K=3, alpha=0.1, beta=0.01, iterations=500, burn_in=100, seed=42
        )
        started = time.perf_counter()
        model = fit(corpus, config)
        elapsed = time.perf_counter() - started
        l1 = best_permutation_l1(estimate_phi(model), phi_true)
        assert l1 <= 0.15, f"best-permutation mean L1 {l1:.4f} > 0.15"
        assert elapsed < 10.0, f"fit took {elapsed:.2f} s"


def test_criterion_2_perplexity_sanity(planted):
    with report(2, "perplexity: uniform=V, perfect=1, longer training helps, two-path 1e-9"):
        corpus = make_corpus([["a", "b", "c"], ["d", "e"]])
        V = corpus.vocab.size
        uniform = perplexity(
            np.full((2, 2), 0.5), np.full((2, V), 1.0 / V), corpus
        )
        # analytically exactly V; float log/exp round-trip leaves ~1 ulp
        assert uniform == pytest.approx(V, rel=1e-12)
        perfect_corpus = make_corpus([["a", "a"], ["a"]])
        assert perplexity(np.ones((2, 1)), np.ones((1, 1)), perfect_corpus) == 1.0

        big, _, _ = planted
        order = np.random.default_rng(5).permutation(big.M)
        train_c = corpus_subset(big, order[:400])
        held = corpus_subset(big, order[400:])
        perp = {}
        for iters in (10, 200):
            cfg = LdaConfig(K=3, alpha=0.1, iterations=iters, burn_in=0, seed=13)
            model = fit(train_c, cfg)
            theta_h = infer_held_out(model, held, fold_in_iterations=30, seed=21)
            perp[iters] = perplexity(theta_h, estimate_phi(model), held)
        assert perp[200] < perp[10], f"{perp[200]:.4f} !< {perp[10]:.4f}"

        model = fit(train_c, LdaConfig(K=3, iterations=30, burn_in=5, seed=4))
        theta, phi = estimate_theta(model), estimate_phi(model)
        fast = perplexity(theta, phi, train_c)
        loglik, total = 0.0, 0
        for m, doc in enumerate(train_c.docs):
            for v in doc:
                loglik += math.log(sum(theta[m, k] * phi[k, int(v)] for k in range(3)))
                total += 1
        slow = math.exp(-loglik / total)
        assert abs(fast - slow) <= 1e-9


def _selection_rep(rep: int) -> int:
    corpus, _, _ = generate_planted_corpus(M=500, V=40, K=3, doc_len=50, seed=1000 + rep)
    template = LdaConfig(K=1, beta=0.5, iterations=100, burn_in=50, seed=2000 + rep)
    result = select_topic_count(
        corpus, 1, 14, template, split_ratio=0.8, fold_in_iterations=30
    )
    return result.k_star


def test_criterion_3_topic_count_selection(planted):
    with report(3, "K sweep 1..14: K* in {2,3,4} in >= 90/100 reps, sweep < 90 s"):
        corpus, _, _ = planted
        _warm_gibbs_kernels()
        started = time.perf_counter()
        template = LdaConfig(K=1, beta=0.5, iterations=100, burn_in=50, seed=2000)
        single = select_topic_count(
            corpus, 1, 14, template, split_ratio=0.8, fold_in_iterations=30
        )
        sweep_seconds = time.perf_counter() - started
        assert sweep_seconds < 90.0, f"one full sweep took {sweep_seconds:.1f} s"
        assert len(single.ks) == 14

        with ProcessPoolExecutor(max_workers=2) as pool:
            k_stars = list(pool.map(_selection_rep, range(100)))
        hits = sum(1 for k in k_stars if k in (2, 3, 4))
        assert hits >= 90, f"K* in range only {hits}/100 (values: {sorted(set(k_stars))})"


def test_criterion_4_coherence_oracle_equivalence():
    with report(4, "coherence matches brute-force recount within 1e-9 on <=50-doc corpora"):
        rng = np.random.default_rng(7)
        corpora = []
        for seed in range(6):
            r = np.random.default_rng(seed)
            docs = [
                [f"w{i}" for i in r.integers(0, 12, size=r.integers(0, 18))]
                for _ in range(int(r.integers(4, 50)))
            ]
            docs.append(["w0", "w1", "w0"])  # repeated tokens exercised
            corpora.append(make_corpus(docs))
        corpora.append(make_corpus([["a", "b"], [], ["b", "c", "a"]]))
        for corpus in corpora:
            assert corpus.M <= 50
            keys = sorted(corpus.vocab.id_of.values())[:8]
            for window in ("doc", "slide:3", "slide:10"):
                stats = count_cooccurrence(corpus, set(keys), window)
                windows = oracle_windows(corpus, stats.window_mode, stats.width)
                got_u = tc_umass(stats, keys)
                want_u = oracle_umass(windows, keys)
                assert abs(got_u[0] - want_u[0]) <= 1e-9
                assert abs(got_u[1] - want_u[1]) <= 1e-9
                got_cv = c_v_score(stats, keys)
                want_cv = oracle_cv(windows, keys)
                assert abs(got_cv[0] - want_cv[0]) <= 1e-9
                assert abs(got_cv[1] - want_cv[1]) <= 1e-9
                usable = [k for k in keys if stats.doc_freq.get(k, 0) >= 1]
                total = 0.0
                for a, b in itertools.combinations(usable, 2):
                    value = npmi(stats, a, b)
                    assert -1.0 <= value <= 1.0
                    total += value
                n = len(usable)
                if n >= 2:
                    cv_paper, cv_mean = got_cv
                    assert cv_paper == cv_mean * (n - 1) / 2  # exact


def test_criterion_5_coherence_discrimination(planted):
    with report(5, "fitted c_v_mean beats shuffled-keyword baseline in >= 95/100 trials"):
        corpus, _, _ = planted
        model = fit(
            corpus, LdaConfig(K=3, alpha=0.1, beta=0.01, iterations=300, burn_in=100, seed=17)
        )
        top_t = 5
        fitted_sets = [
            [corpus.vocab.id_of[w] for w, _ in top_keywords(model, k, top_t)]
            for k in range(3)
        ]
        pool = [w for ks in fitted_sets for w in ks]
        stats = count_cooccurrence(corpus, set(pool), "slide:10")
        fitted_score = float(
            np.mean([c_v_score(stats, ks)[1] for ks in fitted_sets])
        )
        wins = 0
        for trial in range(100):
            rng = np.random.default_rng(31_000 + trial)
            shuffled = list(pool)
            rng.shuffle(shuffled)
            baseline_sets = [shuffled[i * top_t : (i + 1) * top_t] for i in range(3)]
            baseline = float(
                np.mean([c_v_score(stats, ks)[1] for ks in baseline_sets])
            )
            wins += int(fitted_score > baseline)
        assert wins >= 95, f"fitted model beat shuffled baseline only {wins}/100"


def test_criterion_6_mlm_correctness():
    with report(6, "MLM: gradients within 1e-4 of FD, loss halves in 200 steps, masking 3-sigma"):
        rng = np.random.default_rng(0)
        cfg = EncoderConfig(dim=8, n_layers=2, n_heads=2, max_len=12, init_scale=0.5)
        V = 20
        params = init_params(cfg, V, rng)
        seqs = [
            rng.integers(0, V, size=9).astype(np.int32),
            rng.integers(0, V, size=6).astype(np.int32),
        ]
        batch = mask_tokens(seqs, 0.3, "pure-mask", rng, V)
        _, _, grads, _ = loss_and_grads(params, batch)
        h = 1e-5
        checked = 0
        for name, arr in params.arrays():
            flat = arr.reshape(-1)
            grad_flat = grads[name].reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                lp, _, _, _ = loss_and_grads(params, batch)
                flat[i] = orig - h
                lm, _, _, _ = loss_and_grads(params, batch)
                flat[i] = orig
                fd = (lp - lm) / (2 * h)
                denom = max(abs(grad_flat[i]), abs(fd))
                if denom < 1e-7:  # below central-difference resolution at h=1e-5
                    continue
                rel = abs(grad_flat[i] - fd) / denom
                assert rel <= 1e-4, f"{name}[{i}]: rel err {rel:.2e}"
                checked += 1
        assert checked > 1500

        corpus = make_corpus([["good", "phone", "great", "battery", "fast", "ship"]] * 200)
        result = train(corpus, TrainConfig(steps=200, seed=1))
        assert result.loss_history[-1] <= 0.5 * result.loss_history[0], (
            f"loss {result.loss_history[0]:.3f} -> {result.loss_history[-1]:.3f}"
        )

        rng = np.random.default_rng(42)
        stat_batch = mask_tokens(
            [np.zeros(100, dtype=np.int32)] * 100, 0.15, "pure-mask", rng, V
        )
        selected = sum(len(p) for p in stat_batch.mask_positions)
        assert 1393 <= selected <= 1607  # Binomial(10000, 0.15) +- 3 sigma


def test_criterion_7_lda_invariants(small_planted):
    with report(7, "LDA: exact count conservation over 100 sweeps, rows sum to 1, label symmetry"):
        corpus, _, _ = small_planted
        model = init_assignments(corpus, LdaConfig(K=4, iterations=1, burn_in=0, seed=3))
        n_m = corpus.N_m
        total = corpus.total_tokens
        for _ in range(100):
            gibbs_sweep(model)
            assert np.array_equal(model.n_mk.sum(axis=1), n_m)
            assert np.array_equal(model.n_kv.sum(axis=1), model.n_k)
            assert int(model.n_k.sum()) == total
            validate_counts(model)
        theta, phi = estimate_theta(model), estimate_phi(model)
        assert np.abs(theta.sum(axis=1) - 1.0).max() <= 1e-12
        assert np.abs(phi.sum(axis=1) - 1.0).max() <= 1e-12
        base = log_joint(model)
        import copy

        for perm in itertools.permutations(range(4)):
            permuted = copy.deepcopy(model)
            permuted.n_mk = model.n_mk[:, list(perm)]
            permuted.n_kv = model.n_kv[list(perm), :]
            permuted.n_k = model.n_k[list(perm)]
            permuted.z = None
            permuted._tokens = None
            assert abs(log_joint(permuted) - base) <= 1e-9


def test_criterion_8_tsne():
    with report(8, "t-SNE: P/Q invariants, KL descent over 20 seeds, silhouette > 0.3, M=1000 < 60 s"):
        rng = np.random.default_rng(0)
        cloud_a = rng.normal(0.0, 1.0, size=(50, 20))
        cloud_b = rng.normal(0.0, 1.0, size=(50, 20))
        cloud_b[:, 0] += 10.0
        X = np.vstack([cloud_a, cloud_b])
        labels = np.array([0] * 50 + [1] * 50)

        p_cond, unconverged = conditional_affinities(X, perplexity=15)
        assert unconverged == 0
        assert np.abs(p_cond.sum(axis=1) - 1.0).max() <= 1e-6
        target = math.log(15)
        for i in range(p_cond.shape[0]):
            row = p_cond[i][p_cond[i] > 0]
            entropy = float(-(row * np.log(row)).sum())
            assert abs(entropy - target) <= 1e-5
        P = joint_affinities(p_cond)
        assert abs(P.sum() - 1.0) <= 1e-9

        proj = tsne(X, TsneSettings(perplexity=15, iterations=500, seed=3))
        Q, _ = low_dim_affinities(proj.points)
        assert abs(Q.sum() - 1.0) <= 1e-9
        assert silhouette(proj.points, labels) > 0.3

        for seed in range(20):
            run = tsne(X, TsneSettings(perplexity=15, iterations=500, seed=seed))
            assert run.kl_history[-1] < run.kl_history[0]
            assert (run.kl_history >= 0.0).all()

        big = np.vstack([
            rng.normal(0.0, 1.0, size=(500, 20)),
            rng.normal(8.0, 1.0, size=(500, 20)),
        ])
        started = time.perf_counter()
        big_proj = tsne(big, TsneSettings(perplexity=30, iterations=1000, seed=1))
        elapsed = time.perf_counter() - started
        assert elapsed < 60.0, f"M=1000 projection took {elapsed:.1f} s"
        assert np.isfinite(big_proj.points).all()


def test_criterion_9_reproducibility(tmp_path):
    with report(9, "identical config + seed reproduce byte-identical artifacts"):
        sample = tmp_path / "reviews.jsonl"
        write_sample_corpus(sample, n_docs=120, seed=3)
        out = str(tmp_path / "run")
        args = [
            "pipeline", "--input", str(sample), "--out", out, "--seed", "11",
            "--steps", "40", "--iters", "60", "--burn-in", "20",
            "--kmin", "1", "--kmax", "4", "--beta", "0.5", "--tsne-iters", "200",
            "--svg",
        ]
        assert cli_main(args) == 0
        manifest_path = os.path.join(out, "manifest.json")
        first = json.load(open(manifest_path))
        assert first["artifacts"], "pipeline wrote no artifacts"
        snapshots = {
            name: sha256_file(os.path.join(out, name)) for name in first["artifacts"]
        }
        assert cli_main(args) == 0
        second = json.load(open(manifest_path))
        assert first == second, "manifest hashes changed on rerun"
        for name, digest in snapshots.items():
            assert sha256_file(os.path.join(out, name)) == digest, f"{name} changed"
