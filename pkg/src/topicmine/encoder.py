"""Masked-token training of a small contextual encoder, plus embeddings.

The model is a 2-layer post-norm self-attention encoder over the corpus
vocabulary extended with [PAD]/[MASK] ids, output projection tied to the
token embeddings. Training minimizes cross-entropy over masked positions
(history records the raw per-batch sum; updates use the per-position mean)
with plain SGD. Everything runs in float64 so analytic gradients can be
validated against central finite differences and reruns are bit-identical.
"""

import json
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from topicmine.corpus import Corpus, Vocabulary
from topicmine.errors import ConfigError, InputError, NumericalError
from topicmine.fileio import atomic_write_bytes, atomic_write_text, read_utf8

log = logging.getLogger(__name__)

LOSS_PROB_FLOOR = 1e-12
_LN_EPS = 1e-5

STRATEGIES = ("pure-mask", "bert-80-10-10")


def pad_id(vocab_size: int) -> int:
    return vocab_size


def mask_id(vocab_size: int) -> int:
    return vocab_size + 1


@dataclass
class EncoderConfig:
    dim: int = 64
    n_layers: int = 2
    n_heads: int = 4
    max_len: int = 128
    ff_mult: int = 4
    init_scale: float = 0.02

    def __post_init__(self):
        if self.dim % self.n_heads:
            raise ConfigError(
                f"dim {self.dim} must be divisible by n_heads {self.n_heads}"
            )


@dataclass
class LayerParams:
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    w1: np.ndarray
    c1: np.ndarray
    w2: np.ndarray
    c2: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray


_LAYER_FIELDS = [
    "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
    "ln1_g", "ln1_b", "w1", "c1", "w2", "c2", "ln2_g", "ln2_b",
]


@dataclass
class EncoderParams:
    config: EncoderConfig
    vocab_size: int  # real vocabulary; embeddings hold two extra special rows
    tok_emb: np.ndarray  # (V+2, d)
    pos_emb: np.ndarray  # (max_len, d)
    layers: list[LayerParams]

    def arrays(self) -> list[tuple[str, np.ndarray]]:
        """All parameter tensors in a fixed, stable order."""
        out = [("tok_emb", self.tok_emb), ("pos_emb", self.pos_emb)]
        for i, layer in enumerate(self.layers):
            for name in _LAYER_FIELDS:
                out.append((f"layer{i}.{name}", getattr(layer, name)))
        return out

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            config=self.config,
            vocab_size=self.vocab_size,
            tok_emb=self.tok_emb.copy(),
            pos_emb=self.pos_emb.copy(),
            layers=[
                LayerParams(**{f: getattr(l, f).copy() for f in _LAYER_FIELDS})
                for l in self.layers
            ],
        )


def init_params(config: EncoderConfig, vocab_size: int, rng: np.random.Generator) -> EncoderParams:
    d, s = config.dim, config.init_scale
    dff = config.ff_mult * d

    def w(*shape):
        return rng.normal(0.0, s, size=shape)

    layers = []
    for _ in range(config.n_layers):
        layers.append(
            LayerParams(
                wq=w(d, d), bq=np.zeros(d), wk=w(d, d), bk=np.zeros(d),
                wv=w(d, d), bv=np.zeros(d), wo=w(d, d), bo=np.zeros(d),
                ln1_g=np.ones(d), ln1_b=np.zeros(d),
                w1=w(d, dff), c1=np.zeros(dff), w2=w(dff, d), c2=np.zeros(d),
                ln2_g=np.ones(d), ln2_b=np.zeros(d),
            )
        )
    return EncoderParams(
        config=config,
        vocab_size=vocab_size,
        tok_emb=w(vocab_size + 2, d),
        pos_emb=w(config.max_len, d),
        layers=layers,
    )


@dataclass
class MaskedBatch:
    sequences: np.ndarray  # (B, L) int32, padded with pad_id
    lengths: np.ndarray  # (B,) int64 true lengths
    mask_positions: list[np.ndarray]  # per-sequence selected positions
    labels: list[np.ndarray]  # original ids at mask_positions
    replacement_kinds: list[list[str]]  # per position: masked | random | kept


def mask_tokens(
    sequences: Sequence[np.ndarray],
    mask_rate: float,
    strategy: str,
    rng: np.random.Generator,
    vocab_size: int,
) -> MaskedBatch:
    """Independently select each non-padding position with probability mask_rate."""
    if not 0.0 <= mask_rate <= 1.0:
        raise ConfigError(f"mask_rate must be in [0,1], got {mask_rate}")
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown masking strategy {strategy!r}; use one of {STRATEGIES}")
    if any(len(seq) == 0 for seq in sequences):
        raise ConfigError("masking requires at least one non-padding token per sequence")
    B = len(sequences)
    L = max(len(seq) for seq in sequences)
    pad = pad_id(vocab_size)
    mask = mask_id(vocab_size)
    out = np.full((B, L), pad, dtype=np.int32)
    lengths = np.zeros(B, dtype=np.int64)
    mask_positions, labels, kinds = [], [], []
    for b, seq in enumerate(sequences):
        n = len(seq)
        lengths[b] = n
        out[b, :n] = seq
        selected = np.flatnonzero(rng.random(n) < mask_rate)
        seq_kinds = []
        for p in selected:
            if strategy == "pure-mask":
                out[b, p] = mask
                seq_kinds.append("masked")
            else:
                roll = rng.random()
                if roll < 0.8:
                    out[b, p] = mask
                    seq_kinds.append("masked")
                elif roll < 0.9:
                    out[b, p] = rng.integers(0, vocab_size)
                    seq_kinds.append("random")
                else:
                    seq_kinds.append("kept")
        mask_positions.append(selected.astype(np.int64))
        labels.append(np.asarray(seq, dtype=np.int64)[selected])
        kinds.append(seq_kinds)
    return MaskedBatch(out, lengths, mask_positions, labels, kinds)


def _layernorm(r, g, b):
    mu = r.mean(axis=-1, keepdims=True)
    var = r.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (r - mu) * inv
    return g * xhat + b, (xhat, inv)


def _layernorm_backward(dy, g, cache):
    xhat, inv = cache
    dg = np.sum(dy * xhat, axis=tuple(range(dy.ndim - 1)))
    db = np.sum(dy, axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    dr = (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    ) * inv
    return dr, dg, db


def _softmax(x, axis=-1):
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _forward(params: EncoderParams, ids: np.ndarray, lengths: np.ndarray):
    """Run the encoder; returns final hidden states and a backward cache."""
    cfg = params.config
    B, L = ids.shape
    h, d = cfg.n_heads, cfg.dim
    dh = d // h
    x = params.tok_emb[ids] + params.pos_emb[:L]
    key_valid = np.arange(L)[None, :] < lengths[:, None]  # (B, L)
    attn_mask = np.where(key_valid, 0.0, -np.inf)[:, None, None, :]
    caches = []
    for layer in params.layers:
        q = (x @ layer.wq + layer.bq).reshape(B, L, h, dh).transpose(0, 2, 1, 3)
        k = (x @ layer.wk + layer.bk).reshape(B, L, h, dh).transpose(0, 2, 1, 3)
        v = (x @ layer.wv + layer.bv).reshape(B, L, h, dh).transpose(0, 2, 1, 3)
        scores = q @ k.transpose(0, 1, 3, 2) / np.sqrt(dh) + attn_mask
        attn = _softmax(scores, axis=-1)
        ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(B, L, d)
        proj = ctx @ layer.wo + layer.bo
        x1, ln1_cache = _layernorm(x + proj, layer.ln1_g, layer.ln1_b)
        ff_pre = x1 @ layer.w1 + layer.c1
        ff_act = np.maximum(ff_pre, 0.0)
        ff_out = ff_act @ layer.w2 + layer.c2
        x2, ln2_cache = _layernorm(x1 + ff_out, layer.ln2_g, layer.ln2_b)
        caches.append((x, q, k, v, attn, ctx, ln1_cache, x1, ff_pre, ff_act, ln2_cache))
        x = x2
    return x, caches


def _backward(params: EncoderParams, dx: np.ndarray, caches, grads: dict):
    cfg = params.config
    B, L, d = dx.shape
    h = cfg.n_heads
    dh = d // h
    for i in reversed(range(len(params.layers))):
        layer = params.layers[i]
        x_in, q, k, v, attn, ctx, ln1_cache, x1, ff_pre, ff_act, ln2_cache = caches[i]
        g = lambda name: grads[f"layer{i}.{name}"]

        dr2, dg2, db2 = _layernorm_backward(dx, layer.ln2_g, ln2_cache)
        g("ln2_g")[...] += dg2
        g("ln2_b")[...] += db2
        dx1 = dr2.copy()
        dff_out = dr2
        g("w2")[...] += np.einsum("blf,bld->fd", ff_act, dff_out)
        g("c2")[...] += dff_out.sum(axis=(0, 1))
        dff_act = dff_out @ layer.w2.T
        dff_pre = dff_act * (ff_pre > 0.0)
        g("w1")[...] += np.einsum("bld,blf->df", x1, dff_pre)
        g("c1")[...] += dff_pre.sum(axis=(0, 1))
        dx1 += dff_pre @ layer.w1.T

        dr1, dg1, db1 = _layernorm_backward(dx1, layer.ln1_g, ln1_cache)
        g("ln1_g")[...] += dg1
        g("ln1_b")[...] += db1
        dx_in = dr1.copy()
        dproj = dr1
        g("wo")[...] += np.einsum("bld,ble->de", ctx, dproj)
        g("bo")[...] += dproj.sum(axis=(0, 1))
        dctx = (dproj @ layer.wo.T).reshape(B, L, h, dh).transpose(0, 2, 1, 3)

        dattn = dctx @ v.transpose(0, 1, 3, 2)
        dv = attn.transpose(0, 1, 3, 2) @ dctx
        dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
        dscores /= np.sqrt(dh)
        dq = dscores @ k
        dk = dscores.transpose(0, 1, 3, 2) @ q

        for dmat, w_name, b_name, weight in (
            (dq, "wq", "bq", layer.wq),
            (dk, "wk", "bk", layer.wk),
            (dv, "wv", "bv", layer.wv),
        ):
            flat = dmat.transpose(0, 2, 1, 3).reshape(B, L, d)
            g(w_name)[...] += np.einsum("bld,ble->de", x_in, flat)
            g(b_name)[...] += flat.sum(axis=(0, 1))
            dx_in += flat @ weight.T
        dx = dx_in
    return dx


def _zero_grads(params: EncoderParams) -> dict:
    return {name: np.zeros_like(arr) for name, arr in params.arrays()}


def loss_and_grads(
    params: EncoderParams, batch: MaskedBatch
) -> tuple[float, int, dict, int]:
    """Summed masked cross-entropy, masked count, gradients, clamp count."""
    ids = batch.sequences
    B, L = ids.shape
    rows = np.concatenate(
        [np.full(len(p), b, dtype=np.int64) for b, p in enumerate(batch.mask_positions)]
    ) if batch.mask_positions else np.zeros(0, dtype=np.int64)
    cols = (
        np.concatenate(batch.mask_positions)
        if batch.mask_positions
        else np.zeros(0, dtype=np.int64)
    )
    labels = (
        np.concatenate(batch.labels) if batch.labels else np.zeros(0, dtype=np.int64)
    )
    grads = _zero_grads(params)
    n_masked = len(labels)
    if n_masked == 0:
        return 0.0, 0, grads, 0

    x_final, caches = _forward(params, ids, batch.lengths)
    e_vocab = params.tok_emb[: params.vocab_size]
    hidden = x_final[rows, cols]  # (n, d)
    probs = _softmax(hidden @ e_vocab.T, axis=-1)
    p_label = probs[np.arange(n_masked), labels]
    clamped = p_label < LOSS_PROB_FLOOR
    clamp_count = int(clamped.sum())
    if clamp_count:
        log.warning("clamped %d label probabilities at %g", clamp_count, LOSS_PROB_FLOOR)
    loss = float(-np.log(np.maximum(p_label, LOSS_PROB_FLOOR)).sum())

    dlogits = probs.copy()
    dlogits[np.arange(n_masked), labels] -= 1.0
    dlogits[clamped] = 0.0  # clamp makes the loss locally flat for these rows
    grads["tok_emb"][: params.vocab_size] += dlogits.T @ hidden
    dhidden = dlogits @ e_vocab
    dx_final = np.zeros_like(x_final)
    np.add.at(dx_final, (rows, cols), dhidden)
    dx0 = _backward(params, dx_final, caches, grads)
    np.add.at(grads["tok_emb"], ids.reshape(-1), dx0.reshape(-1, params.config.dim))
    grads["pos_emb"][:L] += dx0.sum(axis=0)
    return loss, n_masked, grads, clamp_count


def mlm_loss(
    predictions: np.ndarray, labels: Sequence[int]
) -> float:
    """Cross-entropy summed over masked positions (natural log).

    predictions: (n, V) rows of label probabilities; labels: n token ids.
    Zero probabilities are clamped at 1e-12 (warned).
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape[0] != len(labels):
        raise ConfigError(
            f"need one distribution per label: {predictions.shape[0]} != {len(labels)}"
        )
    if len(labels) == 0:
        return 0.0
    p = predictions[np.arange(len(labels)), labels]
    n_clamped = int((p < LOSS_PROB_FLOOR).sum())
    if n_clamped:
        log.warning("clamped %d label probabilities at %g", n_clamped, LOSS_PROB_FLOOR)
    # fsum keeps the sum exactly additive over singleton positions
    return math.fsum(-np.log(np.maximum(p, LOSS_PROB_FLOOR)))


def encode(
    params: EncoderParams,
    ids: Sequence[int],
    predict_positions: Sequence[int] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Contextual vector per position plus prediction rows over the vocabulary.

    predict_positions defaults to the positions holding the [MASK] id.
    """
    ids = np.asarray(ids, dtype=np.int32)
    d = params.config.dim
    if len(ids) > params.config.max_len:
        raise ConfigError(
            f"sequence length {len(ids)} exceeds max_len {params.config.max_len}"
        )
    if len(ids) == 0:
        return np.zeros((0, d)), np.zeros((0, params.vocab_size))
    x, _ = _forward(params, ids[None, :], np.array([len(ids)], dtype=np.int64))
    vectors = x[0]
    if predict_positions is None:
        predict_positions = np.flatnonzero(ids == mask_id(params.vocab_size))
    predict_positions = np.asarray(predict_positions, dtype=np.int64)
    if len(predict_positions):
        logits = vectors[predict_positions] @ params.tok_emb[: params.vocab_size].T
        probs = _softmax(logits, axis=-1)
    else:
        probs = np.zeros((0, params.vocab_size))
    return vectors, probs


@dataclass
class TrainConfig:
    mask_rate: float = 0.15
    strategy: str = "pure-mask"
    steps: int = 200
    batch_size: int = 16
    learning_rate: float = 0.05
    seed: int = 0


@dataclass
class TrainResult:
    params: EncoderParams
    loss_history: np.ndarray  # raw per-batch sums, one entry per step
    clamp_count: int


def train(
    corpus: Corpus,
    config: TrainConfig,
    encoder_config: EncoderConfig | None = None,
) -> TrainResult:
    """SGD on the masked cross-entropy; bit-reproducible for a fixed seed."""
    encoder_config = encoder_config or EncoderConfig()
    if corpus.M == 0:
        raise InputError("cannot train on an empty corpus")
    if corpus.vocab.size < 2:
        raise ConfigError("training requires a vocabulary of at least 2 tokens")
    rng = np.random.default_rng(config.seed)
    params = init_params(encoder_config, corpus.vocab.size, rng)
    docs = [d[: encoder_config.max_len] for d in corpus.docs if len(d) > 0]
    if not docs:
        raise InputError("corpus has no non-empty documents to train on")
    history = np.zeros(config.steps, dtype=np.float64)
    clamp_total = 0
    lr = config.learning_rate
    arrays = None
    for step in range(config.steps):
        picks = rng.integers(0, len(docs), size=config.batch_size)
        batch = mask_tokens(
            [docs[i] for i in picks],
            config.mask_rate,
            config.strategy,
            rng,
            corpus.vocab.size,
        )
        loss, n_masked, grads, clamped = loss_and_grads(params, batch)
        if not np.isfinite(loss):
            last = history[step - 1] if step else float("nan")
            raise NumericalError(
                f"non-finite loss at step {step}; last finite loss {last}"
            )
        history[step] = loss
        clamp_total += clamped
        if n_masked:
            scale = lr / n_masked  # update uses the per-position mean
            if arrays is None:
                arrays = params.arrays()
            for name, arr in arrays:
                arr -= scale * grads[name]
    return TrainResult(params=params, loss_history=history, clamp_count=clamp_total)


def pool_document(token_vectors: np.ndarray) -> np.ndarray:
    """Mean of a document's token vectors; zero vector when empty."""
    token_vectors = np.asarray(token_vectors, dtype=np.float64)
    if token_vectors.ndim != 2:
        raise ConfigError("token_vectors must be a (n, d) matrix")
    if token_vectors.shape[0] == 0:
        return np.zeros(token_vectors.shape[1])
    return token_vectors.mean(axis=0)


@dataclass
class EmbeddingSet:
    dim: int
    doc_ids: list[str]
    doc_vectors: np.ndarray  # (M, dim)
    token_vectors: list[np.ndarray] | None  # per document, (N_m, dim)
    source: str  # trained-encoder | file

    @property
    def M(self) -> int:
        return len(self.doc_ids)


def embed_corpus(params: EncoderParams, corpus: Corpus) -> EmbeddingSet:
    """Contextual token vectors and mean-pooled document vectors."""
    d = params.config.dim
    token_vectors = []
    doc_vectors = np.zeros((corpus.M, d))
    empty = 0
    for m, doc in enumerate(corpus.docs):
        if len(doc) == 0:
            token_vectors.append(np.zeros((0, d)))
            empty += 1
            continue
        vectors, _ = encode(params, doc)
        token_vectors.append(vectors)
        doc_vectors[m] = pool_document(vectors)
    if empty:
        log.warning("%d empty document(s) embedded as zero vectors", empty)
    return EmbeddingSet(
        dim=d,
        doc_ids=list(corpus.doc_ids),
        doc_vectors=doc_vectors,
        token_vectors=token_vectors,
        source="trained-encoder",
    )


@dataclass
class SenseClustering:
    assignments: list[np.ndarray]  # per document, int32 sense per occurrence
    centers: np.ndarray  # (k, dim)
    sizes: np.ndarray  # (k,) occurrences per sense

    @property
    def k(self) -> int:
        return self.centers.shape[0]


def cluster_tokens(embeddings: EmbeddingSet, target_senses: int, seed: int = 0) -> SenseClustering:
    """k-means (k-means++ seeding) over all contextual token vectors.

    Each token occurrence maps to a sense id; the sense ids form the token
    space for embedding-refined topic modeling.
    """
    if embeddings.token_vectors is None:
        raise ConfigError("embedding set has no token vectors to cluster")
    if target_senses < 1:
        raise ConfigError(f"target_senses must be >= 1, got {target_senses}")
    points = (
        np.vstack([tv for tv in embeddings.token_vectors if len(tv)])
        if any(len(tv) for tv in embeddings.token_vectors)
        else np.zeros((0, embeddings.dim))
    )
    n = points.shape[0]
    if target_senses > n:
        raise ConfigError(f"target_senses {target_senses} exceeds {n} token occurrences")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(points, target_senses, rng)
    assign = np.zeros(n, dtype=np.int64)
    for _ in range(100):
        dist = _sq_distances(points, centers)
        new_assign = dist.argmin(axis=1)
        for k in range(target_senses):
            members = points[new_assign == k]
            if len(members):
                centers[k] = members.mean(axis=0)
            else:
                # re-seed an empty cluster from the farthest point
                far = int(dist.min(axis=1).argmax())
                centers[k] = points[far]
        if np.array_equal(new_assign, assign):
            assign = new_assign
            break
        assign = new_assign
    sizes = np.bincount(assign, minlength=target_senses)
    out, offset = [], 0
    for tv in embeddings.token_vectors:
        out.append(assign[offset : offset + len(tv)].astype(np.int32))
        offset += len(tv)
    return SenseClustering(assignments=out, centers=centers, sizes=sizes)


def _sq_distances(points, centers):
    # (n, k) squared euclidean distances
    return (
        (points**2).sum(axis=1, keepdims=True)
        - 2.0 * points @ centers.T
        + (centers**2).sum(axis=1)
    )


def _kmeans_pp(points, k, rng):
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = _sq_distances(points, centers[:1]).ravel()
    for j in range(1, k):
        d2 = np.maximum(d2, 0.0)
        total = d2.sum()
        if total <= 0.0:
            pick = int(rng.integers(n))
        else:
            pick = int(rng.choice(n, p=d2 / total))
        centers[j] = points[pick]
        d2 = np.minimum(d2, _sq_distances(points, centers[j : j + 1]).ravel())
    return centers


def sense_corpus(corpus: Corpus, clustering: SenseClustering) -> Corpus:
    """Corpus over sense ids; each sense is labeled by its dominant surface."""
    k = clustering.k
    dominant: list[dict[str, int]] = [dict() for _ in range(k)]
    for m, senses in enumerate(clustering.assignments):
        if len(senses) != len(corpus.docs[m]):
            raise InputError(
                f"sense assignments misaligned for document {corpus.doc_ids[m]!r}"
            )
        for v, s in zip(corpus.docs[m], senses):
            surface = corpus.vocab.surface_of[int(v)]
            dominant[int(s)][surface] = dominant[int(s)].get(surface, 0) + 1
    surfaces = []
    for s in range(k):
        if dominant[s]:
            top = sorted(dominant[s].items(), key=lambda kv: (-kv[1], kv[0]))[0][0]
        else:
            top = "unused"
        surfaces.append(f"{top}#{s}")
    vocab = Vocabulary(
        surface_of=surfaces,
        id_of={s: i for i, s in enumerate(surfaces)},
        count_of=np.asarray(clustering.sizes, dtype=np.int64),
        min_count=1,
    )
    return Corpus(list(corpus.doc_ids), [a.copy() for a in clustering.assignments], vocab)


# ---------------------------------------------------------------------------
# embedding exchange files: "dim=<d> count=<n>" header, then one row per key


def _format_vector(key: str, vec: np.ndarray) -> str:
    return key + " " + " ".join(f"{x:.8f}" for x in vec)


def export_embeddings(embeddings: EmbeddingSet, doc_path, token_path=None) -> None:
    lines = [f"dim={embeddings.dim} count={embeddings.M}"]
    for i, doc_id in enumerate(embeddings.doc_ids):
        lines.append(_format_vector(doc_id, embeddings.doc_vectors[i]))
    atomic_write_text(doc_path, "\n".join(lines) + "\n")
    if token_path is not None:
        if embeddings.token_vectors is None:
            raise ConfigError("embedding set has no token vectors to export")
        count = sum(len(tv) for tv in embeddings.token_vectors)
        tlines = [f"dim={embeddings.dim} count={count}"]
        for doc_id, tv in zip(embeddings.doc_ids, embeddings.token_vectors):
            for p in range(len(tv)):
                tlines.append(_format_vector(f"{doc_id}:{p}", tv[p]))
        atomic_write_text(token_path, "\n".join(tlines) + "\n")


def _parse_exchange(path) -> tuple[int, list[tuple[str, np.ndarray]]]:
    lines = read_utf8(path).splitlines()
    if not lines:
        raise InputError(f"{path}: empty embedding file")
    header = lines[0].split()
    try:
        dim = int(header[0].removeprefix("dim="))
        count = int(header[1].removeprefix("count="))
    except (IndexError, ValueError) as exc:
        raise InputError(f"{path}: malformed header {lines[0]!r}") from exc
    rows = []
    body = [ln for ln in lines[1:] if ln.strip()]
    for row_no in range(1, count + 1):
        if row_no > len(body):
            raise InputError(
                f"{path}: parse error at row {row_no}: header promised {count} rows"
            )
        fields = body[row_no - 1].split()
        if len(fields) < dim + 1:
            raise InputError(
                f"{path}: parse error at row {row_no}: expected {dim} components"
            )
        key = " ".join(fields[: len(fields) - dim])
        try:
            vec = np.array([float(x) for x in fields[len(fields) - dim :]])
        except ValueError as exc:
            raise InputError(f"{path}: parse error at row {row_no}: bad float") from exc
        rows.append((key, vec))
    if len(body) > count:
        raise InputError(f"{path}: {len(body)} rows exceed header count {count}")
    return dim, rows


def import_embeddings(
    doc_path, token_path=None, corpus: Corpus | None = None
) -> EmbeddingSet:
    """Read exchange files back; validates alignment when a corpus is given."""
    dim, rows = _parse_exchange(doc_path)
    doc_ids = [key for key, _ in rows]
    doc_vectors = (
        np.vstack([vec for _, vec in rows]) if rows else np.zeros((0, dim))
    )
    if corpus is not None:
        by_id = {key: vec for key, vec in rows}
        missing = [d for d in corpus.doc_ids if d not in by_id]
        if missing:
            raise InputError(f"{doc_path}: no vector for document {missing[0]!r}")
        extra = [d for d in doc_ids if d not in set(corpus.doc_ids)]
        if extra:
            raise InputError(f"{doc_path}: vector for unknown document {extra[0]!r}")
        doc_ids = list(corpus.doc_ids)
        doc_vectors = np.vstack([by_id[d] for d in doc_ids])
    token_vectors = None
    if token_path is not None:
        tdim, trows = _parse_exchange(token_path)
        if tdim != dim:
            raise InputError(
                f"{token_path}: token dim {tdim} != document dim {dim}"
            )
        grouped: dict[str, dict[int, np.ndarray]] = {}
        for key, vec in trows:
            doc_id, _, pos = key.rpartition(":")
            try:
                grouped.setdefault(doc_id, {})[int(pos)] = vec
            except ValueError as exc:
                raise InputError(f"{token_path}: bad token key {key!r}") from exc
        token_vectors = []
        for m, doc_id in enumerate(doc_ids):
            positions = grouped.get(doc_id, {})
            expected = len(corpus.docs[m]) if corpus is not None else len(positions)
            if sorted(positions) != list(range(expected)):
                raise InputError(
                    f"{token_path}: token vectors misaligned for document {doc_id!r}"
                )
            token_vectors.append(
                np.vstack([positions[p] for p in range(expected)])
                if expected
                else np.zeros((0, dim))
            )
    return EmbeddingSet(
        dim=dim,
        doc_ids=doc_ids,
        doc_vectors=doc_vectors,
        token_vectors=token_vectors,
        source="file",
    )


# ---------------------------------------------------------------------------
# encoder parameter persistence: JSON header line + raw float64 blocks


def save_params(params: EncoderParams, path) -> None:
    cfg = params.config
    arrays = params.arrays()
    header = {
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
        "dim": cfg.dim,
        "ff_mult": cfg.ff_mult,
        "init_scale": cfg.init_scale,
        "max_len": cfg.max_len,
        "n_heads": cfg.n_heads,
        "n_layers": cfg.n_layers,
        "version": 1,
        "vocab_size": params.vocab_size,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8") + b"\n"
    blob += b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    atomic_write_bytes(path, blob)


def load_params(path) -> EncoderParams:
    with open(path, "rb") as fh:
        raw = fh.read()
    nl = raw.find(b"\n")
    if nl < 0:
        raise InputError(f"{path}: not an encoder parameter file")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: bad parameter header") from exc
    cfg = EncoderConfig(
        dim=header["dim"],
        n_layers=header["n_layers"],
        n_heads=header["n_heads"],
        max_len=header["max_len"],
        ff_mult=header["ff_mult"],
        init_scale=header["init_scale"],
    )
    params = init_params(cfg, header["vocab_size"], np.random.default_rng(0))
    offset = nl + 1
    by_name = dict(params.arrays())
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        size = int(np.prod(shape)) * 8
        if spec["name"] not in by_name:
            raise InputError(f"{path}: unknown parameter {spec['name']!r}")
        arr = np.frombuffer(raw[offset : offset + size], dtype="<f8").reshape(shape)
        by_name[spec["name"]][...] = arr
        offset += size
    if offset != len(raw):
        raise InputError(f"{path}: trailing bytes in parameter file")
    return params
