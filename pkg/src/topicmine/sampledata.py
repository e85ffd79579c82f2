"""Synthetic corpora: a bundled review sample and planted-topic generators.

The review sample mimics three product aspects (logistics, price, quality)
so pipeline smoke tests and docs have a small, shippable input. The planted
generator draws documents from a known topic model and returns the ground
truth for recovery tests.
"""

import argparse
import json

import numpy as np

from topicmine.corpus import Corpus, Vocabulary
from topicmine.fileio import atomic_write_text

ASPECTS = {
    "logistics": [
        "shipping", "delivery", "courier", "package", "arrived", "tracking",
        "box", "warehouse", "late", "fast", "dispatch", "parcel",
    ],
    "price": [
        "price", "cheap", "expensive", "discount", "deal", "refund",
        "cost", "value", "bargain", "coupon", "overpriced", "sale",
    ],
    "quality": [
        "quality", "fabric", "stitching", "material", "durable", "broke",
        "sturdy", "fit", "defect", "seams", "flimsy", "solid",
    ],
}

_COMMON = ["good", "bad", "item", "product", "order", "store", "really", "again"]
_FILLER = ["the", "a", "is", "was", "and", "it", "very", "my"]


def generate_reviews(n_docs: int = 300, seed: int = 7) -> list[dict]:
    """Generate review-like documents with three planted aspects."""
    rng = np.random.default_rng(seed)
    aspect_names = sorted(ASPECTS)
    docs = []
    for i in range(n_docs):
        mix = rng.dirichlet(np.full(len(aspect_names), 0.4))
        length = int(rng.integers(8, 21))
        words = []
        for _ in range(length):
            roll = rng.random()
            if roll < 0.25:
                words.append(_FILLER[int(rng.integers(len(_FILLER)))])
            elif roll < 0.40:
                words.append(_COMMON[int(rng.integers(len(_COMMON)))])
            else:
                aspect = aspect_names[int(rng.choice(len(aspect_names), p=mix))]
                pool = ASPECTS[aspect]
                words.append(pool[int(rng.integers(len(pool)))])
        docs.append({"id": f"rev-{i + 1:04d}", "text": " ".join(words)})
    return docs


def write_sample_corpus(path, n_docs: int = 300, seed: int = 7) -> None:
    docs = generate_reviews(n_docs=n_docs, seed=seed)
    lines = [json.dumps(d, sort_keys=True) for d in docs]
    atomic_write_text(path, "\n".join(lines) + "\n")


def planted_model(
    K: int = 3,
    V: int = 40,
    in_topic_mass: float = 0.95,
    seed: int = 0,
) -> np.ndarray:
    """Topic-word matrix with one high-mass word block per topic."""
    rng = np.random.default_rng(seed)
    bounds = np.linspace(0, V, K + 1).astype(int)
    phi = np.full((K, V), (1.0 - in_topic_mass), dtype=np.float64)
    for k in range(K):
        lo, hi = bounds[k], bounds[k + 1]
        block = rng.random(hi - lo) + 0.5  # uneven but bounded within-block weights
        phi[k, lo:hi] = in_topic_mass * block / block.sum() * (hi - lo)
    phi /= phi.sum(axis=1, keepdims=True)
    return phi


def generate_planted_corpus(
    M: int = 500,
    V: int = 40,
    K: int = 3,
    doc_len: int = 50,
    seed: int = 0,
    theta_alpha: float = 0.25,
    in_topic_mass: float = 0.95,
) -> tuple[Corpus, np.ndarray, np.ndarray]:
    """Draw a corpus from a known LDA model; returns (corpus, theta, phi)."""
    rng = np.random.default_rng(seed)
    phi = planted_model(K=K, V=V, in_topic_mass=in_topic_mass, seed=seed)
    theta = rng.dirichlet(np.full(K, theta_alpha), size=M)
    docs = []
    for m in range(M):
        topics = rng.choice(K, size=doc_len, p=theta[m])
        words = np.empty(doc_len, dtype=np.int32)
        for k in range(K):
            sel = topics == k
            n = int(sel.sum())
            if n:
                words[sel] = rng.choice(V, size=n, p=phi[k])
        docs.append(words)
    counts = np.zeros(V, dtype=np.int64)
    for doc in docs:
        np.add.at(counts, doc, 1)
    surfaces = [f"w{v:02d}" for v in range(V)]
    vocab = Vocabulary(
        surface_of=surfaces,
        id_of={s: i for i, s in enumerate(surfaces)},
        count_of=counts,
        min_count=1,
    )
    doc_ids = [f"planted-{m + 1:04d}" for m in range(M)]
    return Corpus(doc_ids, docs, vocab), theta, phi


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="Regenerate the bundled synthetic review corpus."
    )
    parser.add_argument("--out", default="data/sample_reviews.jsonl")
    parser.add_argument("--n-docs", type=int, default=300)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args(argv)
    write_sample_corpus(args.out, n_docs=args.n_docs, seed=args.seed)
    print(f"wrote {args.n_docs} documents to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
