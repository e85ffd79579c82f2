"""LDA by collapsed Gibbs sampling.

The per-token conditional assigns topic k with probability proportional to

    (n_mk[m,k] + alpha) * (n_kv[k,v] + beta) / (n_k[k] + V*beta)

with the current token excluded from all counts. Sweeps run in document
order, position order, and are strictly sequential within a chain; all
randomness is drawn from a seeded numpy generator so fits are
bit-reproducible. The inner loop is JIT-compiled (numba) and consumes one
pre-generated uniform per token per sweep.
"""

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from numba import njit
from scipy.special import gammaln

from topicmine.corpus import Corpus, Vocabulary
from topicmine.errors import ConfigError, InputError, TopicmineError
from topicmine.fileio import atomic_write_text, read_utf8

log = logging.getLogger(__name__)


@dataclass
class LdaConfig:
    K: int
    alpha: float | None = None  # None -> 50/K
    beta: float = 0.01
    iterations: int = 200
    burn_in: int = 100
    seed: int = 0
    average_after_burn_in: bool = False

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError(f"K must be >= 1, got {self.K}")
        if self.alpha is not None and self.alpha <= 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if self.beta <= 0:
            raise ConfigError(f"beta must be > 0, got {self.beta}")
        if not 0 <= self.burn_in < self.iterations:
            raise ConfigError(
                f"burn_in must satisfy 0 <= burn_in < iterations, "
                f"got burn_in={self.burn_in}, iterations={self.iterations}"
            )

    @property
    def effective_alpha(self) -> float:
        return self.alpha if self.alpha is not None else 50.0 / self.K


@dataclass
class LdaModel:
    config: LdaConfig
    vocab_size: int
    z: np.ndarray | None  # int32, flattened doc-order/position-order
    n_mk: np.ndarray  # (M, K) int64
    n_kv: np.ndarray  # (K, V) int64
    n_k: np.ndarray  # (K,) int64
    vocab: Vocabulary | None = None
    rng: np.random.Generator | None = field(default=None, repr=False)
    sweeps_done: int = 0
    # flattened corpus cache so repeated sweeps skip re-concatenation
    _tokens: np.ndarray | None = field(default=None, repr=False)
    _doc_ptr: np.ndarray | None = field(default=None, repr=False)
    _theta_acc: np.ndarray | None = field(default=None, repr=False)
    _phi_acc: np.ndarray | None = field(default=None, repr=False)
    _n_averaged: int = 0

    @property
    def M(self) -> int:
        return self.n_mk.shape[0]

    @property
    def K(self) -> int:
        return self.n_mk.shape[1]


@njit(cache=True)
def _sweep_kernel(tokens, doc_ptr, z, n_mk, n_kv, n_k, alpha, beta, uniforms):
    M = doc_ptr.shape[0] - 1
    K = n_mk.shape[1]
    V = n_kv.shape[1]
    vbeta = V * beta
    cum = np.empty(K, np.float64)
    for m in range(M):
        for pos in range(doc_ptr[m], doc_ptr[m + 1]):
            v = tokens[pos]
            k_old = z[pos]
            n_mk[m, k_old] -= 1
            n_kv[k_old, v] -= 1
            n_k[k_old] -= 1
            total = 0.0
            for k in range(K):
                total += (n_mk[m, k] + alpha) * (n_kv[k, v] + beta) / (n_k[k] + vbeta)
                cum[k] = total
            r = uniforms[pos] * total
            k_new = 0
            while k_new < K - 1 and cum[k_new] <= r:
                k_new += 1
            z[pos] = k_new
            n_mk[m, k_new] += 1
            n_kv[k_new, v] += 1
            n_k[k_new] += 1


@njit(cache=True)
def _fold_in_kernel(tokens, doc_ptr, z, n_mk, n_kv, n_k, alpha, beta, uniforms):
    # n_kv / n_k are frozen training counts; only per-document counts move.
    M = doc_ptr.shape[0] - 1
    K = n_mk.shape[1]
    V = n_kv.shape[1]
    vbeta = V * beta
    cum = np.empty(K, np.float64)
    for m in range(M):
        for pos in range(doc_ptr[m], doc_ptr[m + 1]):
            v = tokens[pos]
            k_old = z[pos]
            n_mk[m, k_old] -= 1
            total = 0.0
            for k in range(K):
                total += (n_mk[m, k] + alpha) * (n_kv[k, v] + beta) / (n_k[k] + vbeta)
                cum[k] = total
            r = uniforms[pos] * total
            k_new = 0
            while k_new < K - 1 and cum[k_new] <= r:
                k_new += 1
            z[pos] = k_new
            n_mk[m, k_new] += 1


def _counts_from_assignments(tokens, doc_ptr, z, M, K, V):
    n_mk = np.zeros((M, K), dtype=np.int64)
    n_kv = np.zeros((K, V), dtype=np.int64)
    doc_index = np.repeat(np.arange(M), np.diff(doc_ptr))
    np.add.at(n_mk, (doc_index, z), 1)
    np.add.at(n_kv, (z, tokens), 1)
    return n_mk, n_kv, n_kv.sum(axis=1)


def init_assignments(corpus: Corpus, config: LdaConfig) -> LdaModel:
    """Assign every token position a uniformly random topic (seeded)."""
    if corpus.M == 0:
        raise InputError("cannot initialize LDA on an empty corpus")
    tokens, doc_ptr = corpus.flat()
    if len(tokens) and int(tokens.max()) >= corpus.vocab.size:
        raise InputError("corpus contains token ids outside its vocabulary")
    rng = np.random.default_rng(config.seed)
    z = rng.integers(0, config.K, size=len(tokens), dtype=np.int32)
    n_mk, n_kv, n_k = _counts_from_assignments(
        tokens, doc_ptr, z, corpus.M, config.K, corpus.vocab.size
    )
    return LdaModel(
        config=config,
        vocab_size=corpus.vocab.size,
        z=z,
        n_mk=n_mk,
        n_kv=n_kv,
        n_k=n_k,
        vocab=corpus.vocab,
        rng=rng,
        _tokens=tokens,
        _doc_ptr=doc_ptr,
    )


def gibbs_sweep(model: LdaModel, corpus: Corpus | None = None) -> LdaModel:
    """Resample every token position once, in document/position order."""
    if model.z is None or model._tokens is None:
        raise ConfigError(
            "model has no token assignments (loaded models cannot resume sampling)"
        )
    if corpus is not None and corpus.total_tokens != len(model._tokens):
        raise InputError("corpus does not match the model's token stream")
    uniforms = model.rng.random(len(model._tokens))
    _sweep_kernel(
        model._tokens,
        model._doc_ptr,
        model.z,
        model.n_mk,
        model.n_kv,
        model.n_k,
        model.config.effective_alpha,
        model.config.beta,
        uniforms,
    )
    model.sweeps_done += 1
    return model


def fit(corpus: Corpus, config: LdaConfig) -> LdaModel:
    """Initialize then run config.iterations Gibbs sweeps."""
    model = init_assignments(corpus, config)
    for it in range(config.iterations):
        gibbs_sweep(model)
        if config.average_after_burn_in and it >= config.burn_in:
            _accumulate_estimates(model)
    return model


def _accumulate_estimates(model: LdaModel) -> None:
    theta = _theta_from_counts(model)
    phi = _phi_from_counts(model)
    if model._theta_acc is None:
        model._theta_acc = theta
        model._phi_acc = phi
    else:
        model._theta_acc += theta
        model._phi_acc += phi
    model._n_averaged += 1


def _theta_from_counts(model: LdaModel) -> np.ndarray:
    alpha = model.config.effective_alpha
    n_m = model.n_mk.sum(axis=1, keepdims=True)
    return (model.n_mk + alpha) / (n_m + model.K * alpha)


def _phi_from_counts(model: LdaModel) -> np.ndarray:
    beta = model.config.beta
    return (model.n_kv + beta) / (model.n_k[:, None] + model.vocab_size * beta)


def estimate_theta(model: LdaModel) -> np.ndarray:
    """Document-topic rows (n_mk+alpha)/(N_m+K*alpha); empty docs get 1/K."""
    if model._n_averaged:
        return model._theta_acc / model._n_averaged
    return _theta_from_counts(model)


def estimate_phi(model: LdaModel) -> np.ndarray:
    """Topic-word rows (n_kv+beta)/(n_k+V*beta)."""
    if model._n_averaged:
        return model._phi_acc / model._n_averaged
    return _phi_from_counts(model)


def top_keywords(model: LdaModel, topic: int, top_n: int) -> list[tuple[str, float]]:
    """Highest-probability words of one topic; ties broken by ascending id."""
    if not 0 <= topic < model.K:
        raise ConfigError(f"topic {topic} out of range for K={model.K}")
    if model.vocab is None:
        raise ConfigError("model has no vocabulary attached; load one to rank keywords")
    if top_n > model.vocab_size:
        log.warning("top_n=%d exceeds V=%d; truncating", top_n, model.vocab_size)
        top_n = model.vocab_size
    row = estimate_phi(model)[topic]
    order = np.lexsort((np.arange(model.vocab_size), -row))[:top_n]
    return [(model.vocab.surface_of[int(v)], float(row[v])) for v in order]


def topic_report(model: LdaModel, top_t: int = 10) -> list[dict]:
    """JSON-ready report: one entry per topic with ranked keywords."""
    report = []
    for k in range(model.K):
        keywords = top_keywords(model, k, top_t)
        report.append(
            {
                "topic_index": k,
                "label": "",
                "keywords": [{"word": w, "prob": p} for w, p in keywords],
            }
        )
    return report


def infer_held_out(
    model: LdaModel,
    held_out: Corpus,
    fold_in_iterations: int = 50,
    seed: int = 0,
    average_after_burn_in: bool = False,
) -> np.ndarray:
    """Theta for unseen documents, with topic-word counts frozen.

    With averaging enabled, theta is the mean of the per-sweep estimates over
    the second half of the fold-in sweeps instead of the final state only.
    """
    tokens, doc_ptr = held_out.flat()
    if len(tokens) and int(tokens.max()) >= model.vocab_size:
        raise InputError(
            "held-out corpus must be encoded with the training vocabulary"
        )
    rng = np.random.default_rng(seed)
    z = rng.integers(0, model.K, size=len(tokens), dtype=np.int32)
    n_mk = np.zeros((held_out.M, model.K), dtype=np.int64)
    doc_index = np.repeat(np.arange(held_out.M), np.diff(doc_ptr))
    np.add.at(n_mk, (doc_index, z), 1)
    if fold_in_iterations == 0:
        log.warning("fold_in_iterations=0: held-out theta is unconverged (init only)")
    alpha = model.config.effective_alpha

    def theta_now():
        n_m = n_mk.sum(axis=1, keepdims=True)
        return (n_mk + alpha) / (n_m + model.K * alpha)

    burn = fold_in_iterations // 2
    acc = None
    n_acc = 0
    for it in range(fold_in_iterations):
        uniforms = rng.random(len(tokens))
        _fold_in_kernel(
            tokens, doc_ptr, z, n_mk, model.n_kv, model.n_k,
            alpha, model.config.beta, uniforms,
        )
        if average_after_burn_in and it >= burn:
            est = theta_now()
            acc = est if acc is None else acc + est
            n_acc += 1
    if n_acc:
        return acc / n_acc
    return theta_now()


def log_joint(model: LdaModel) -> float:
    """Collapsed log p(w, z | alpha, beta), computed from counts in closed form."""
    alpha = model.config.effective_alpha
    beta = model.config.beta
    K, V, M = model.K, model.vocab_size, model.M
    n_m = model.n_mk.sum(axis=1)
    doc_part = (
        M * gammaln(K * alpha)
        - np.sum(gammaln(n_m + K * alpha))
        + np.sum(gammaln(model.n_mk + alpha))
        - M * K * gammaln(alpha)
    )
    topic_part = (
        K * gammaln(V * beta)
        - np.sum(gammaln(model.n_k + V * beta))
        + np.sum(gammaln(model.n_kv + beta))
        - K * V * gammaln(beta)
    )
    return float(doc_part + topic_part)


def validate_counts(model: LdaModel) -> None:
    """Raise unless the count matrices satisfy their conservation identities."""
    if model.z is not None and model._tokens is not None:
        n_mk, n_kv, n_k = _counts_from_assignments(
            model._tokens, model._doc_ptr, model.z, model.M, model.K, model.vocab_size
        )
        if not (
            np.array_equal(n_mk, model.n_mk)
            and np.array_equal(n_kv, model.n_kv)
            and np.array_equal(n_k, model.n_k)
        ):
            raise TopicmineError("count matrices inconsistent with assignments")
    if (model.n_mk < 0).any() or (model.n_kv < 0).any() or (model.n_k < 0).any():
        raise TopicmineError("negative count encountered")
    if not np.array_equal(model.n_kv.sum(axis=1), model.n_k):
        raise TopicmineError("per-topic totals do not match topic-word counts")
    if model.n_mk.sum() != model.n_k.sum():
        raise TopicmineError("document counts and topic totals disagree")


def corpus_subset(corpus: Corpus, indices: Sequence[int]) -> Corpus:
    """View of selected documents sharing the parent vocabulary."""
    return Corpus(
        [corpus.doc_ids[i] for i in indices],
        [corpus.docs[i] for i in indices],
        corpus.vocab,
    )


@dataclass
class SweepResult:
    ks: list[int]
    perplexities: list[float]
    k_star: int

    def rows(self) -> list[tuple[int, float]]:
        return list(zip(self.ks, self.perplexities))


def _completion_split(held_out: Corpus) -> tuple[Corpus, Corpus]:
    """Alternate token positions into a fold-in half and an evaluation half."""
    fold_docs = [d[0::2] for d in held_out.docs]
    eval_docs = [d[1::2] for d in held_out.docs]
    return (
        Corpus(held_out.doc_ids, fold_docs, held_out.vocab),
        Corpus(held_out.doc_ids, eval_docs, held_out.vocab),
    )


def _evaluate_k(args) -> tuple[int, float]:
    train, ho_fit, ho_eval, template, k, fold_in_iterations = args
    from topicmine.evalmetrics import perplexity  # local import; avoids cycle

    config = replace(template, K=k)
    model = fit(train, config)
    theta_ho = infer_held_out(
        model,
        ho_fit,
        fold_in_iterations=fold_in_iterations,
        seed=template.seed + k,
        average_after_burn_in=config.average_after_burn_in,
    )
    return k, perplexity(theta_ho, estimate_phi(model), ho_eval)


def select_topic_count(
    corpus: Corpus,
    k_min: int,
    k_max: int,
    template: LdaConfig,
    split_ratio: float = 0.8,
    fold_in_iterations: int = 50,
    jobs: int = 1,
) -> SweepResult:
    """Fit each K on a seeded train split and rank by held-out perplexity.

    Held-out documents are scored by completion: theta is folded in on the
    even token positions and perplexity is evaluated on the odd positions,
    so extra topics cannot buy likelihood by overfitting the scored tokens.
    K* is the argmin; ties go to the smaller K. Per-K fits are independent
    chains and may run in parallel workers.
    """
    if not 1 <= k_min <= k_max:
        raise ConfigError(f"need 1 <= k_min <= k_max, got {k_min}..{k_max}")
    if not 0.0 < split_ratio < 1.0:
        raise ConfigError(f"split_ratio must be in (0,1), got {split_ratio}")
    order = np.random.default_rng(template.seed).permutation(corpus.M)
    n_train = int(round(corpus.M * split_ratio))
    train_idx, held_idx = order[:n_train], order[n_train:]
    if len(held_idx) == 0:
        raise InputError("held-out split is empty; lower split_ratio or add documents")
    if len(train_idx) == 0:
        raise InputError("training split is empty; raise split_ratio")
    train = corpus_subset(corpus, train_idx)
    held_out = corpus_subset(corpus, held_idx)
    ho_fit, ho_eval = _completion_split(held_out)
    if ho_eval.total_tokens == 0:
        raise InputError("held-out documents too short to score by completion")
    tasks = [
        (train, ho_fit, ho_eval, template, k, fold_in_iterations)
        for k in range(k_min, k_max + 1)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = dict(pool.map(_evaluate_k, tasks))
    else:
        results = dict(_evaluate_k(t) for t in tasks)
    ks = sorted(results)
    perplexities = [results[k] for k in ks]
    k_star = ks[int(np.argmin(perplexities))]  # argmin takes the first minimum
    return SweepResult(ks=ks, perplexities=perplexities, k_star=k_star)


def _matrix_block(matrix: np.ndarray) -> str:
    return "\n".join(" ".join(str(int(v)) for v in row) for row in matrix)


def save_model(model: LdaModel, path) -> None:
    """JSON header plus row-major count matrices; round-trips counts exactly."""
    n_mk_text = _matrix_block(model.n_mk)
    n_kv_text = _matrix_block(model.n_kv)
    header = {
        "K": model.K,
        "M": model.M,
        "V": model.vocab_size,
        "alpha": model.config.alpha,
        "beta": model.config.beta,
        "burn_in": model.config.burn_in,
        "checksums": {
            "n_kv": hashlib.sha256(n_kv_text.encode()).hexdigest(),
            "n_mk": hashlib.sha256(n_mk_text.encode()).hexdigest(),
        },
        "iterations": model.config.iterations,
        "seed": model.config.seed,
        "sweeps_done": model.sweeps_done,
        "version": 1,
    }
    text = "\n".join(
        [json.dumps(header, sort_keys=True), "[n_mk]", n_mk_text, "[n_kv]", n_kv_text]
    )
    atomic_write_text(path, text + "\n")


def load_model(path, vocab: Vocabulary | None = None) -> LdaModel:
    lines = read_utf8(path).splitlines()
    try:
        header = json.loads(lines[0])
    except (IndexError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: not a valid model file") from exc
    try:
        m_at = lines.index("[n_mk]")
        k_at = lines.index("[n_kv]")
        M, K, V = int(header["M"]), int(header["K"]), int(header["V"])
        n_mk_text = "\n".join(lines[m_at + 1 : m_at + 1 + M])
        n_kv_text = "\n".join(lines[k_at + 1 : k_at + 1 + K])
    except (ValueError, KeyError) as exc:
        raise InputError(f"{path}: model file missing sections") from exc
    sums = header.get("checksums", {})
    if sums.get("n_mk") != hashlib.sha256(n_mk_text.encode()).hexdigest():
        raise InputError(f"{path}: n_mk checksum mismatch")
    if sums.get("n_kv") != hashlib.sha256(n_kv_text.encode()).hexdigest():
        raise InputError(f"{path}: n_kv checksum mismatch")
    n_mk = np.array(
        [[int(v) for v in row.split()] for row in n_mk_text.splitlines()], dtype=np.int64
    ).reshape(M, K)
    n_kv = np.array(
        [[int(v) for v in row.split()] for row in n_kv_text.splitlines()], dtype=np.int64
    ).reshape(K, V)
    config = LdaConfig(
        K=K,
        alpha=header["alpha"],
        beta=header["beta"],
        iterations=int(header["iterations"]),
        burn_in=int(header["burn_in"]),
        seed=int(header["seed"]),
    )
    if vocab is not None and vocab.size != V:
        raise InputError(f"{path}: vocabulary size {vocab.size} != model V={V}")
    return LdaModel(
        config=config,
        vocab_size=V,
        z=None,
        n_mk=n_mk,
        n_kv=n_kv,
        n_k=n_kv.sum(axis=1),
        vocab=vocab,
        sweeps_done=int(header.get("sweeps_done", 0)),
    )
