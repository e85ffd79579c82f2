"""Held-out perplexity and co-occurrence topic coherence.

Coherence comes in two families here: the smoothed conditional log-ratio
score (u_mass, base-2 logarithm over ordered keyword pairs, denominator the
earlier-ranked word's window frequency) and pairwise NPMI aggregation (c_v).
For c_v both normalizations are reported: `c_v_paper` divides the pair sum
by |W| as published, `c_v_mean` divides by the pair count, so
c_v_paper = c_v_mean * (|W|-1)/2 holds exactly.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from topicmine.corpus import Corpus
from topicmine.errors import ConfigError, InputError
from topicmine.fileio import atomic_write_text

log = logging.getLogger(__name__)


def parse_window_mode(spec: str) -> tuple[str, int]:
    """Accept 'doc'/'document' or 'slide:N'/'sliding:N'."""
    s = spec.strip().lower()
    if s in ("doc", "document"):
        return "document", 0
    for prefix in ("slide:", "sliding:"):
        if s.startswith(prefix):
            try:
                width = int(s[len(prefix):])
            except ValueError as exc:
                raise ConfigError(f"bad sliding window spec {spec!r}") from exc
            if width < 2:
                raise ConfigError(f"sliding window width must be >= 2, got {width}")
            return "sliding", width
    raise ConfigError(f"unknown window mode {spec!r}; use 'doc' or 'slide:N'")


@dataclass
class CooccurrenceStats:
    """Window counts restricted to a keyword set.

    doc_freq[w] is the number of windows containing w; pair_freq[(a, b)]
    (a < b) the number of windows containing both. A token counts at most
    once per window.
    """

    window_mode: str  # document | sliding
    width: int
    n_windows: int
    doc_freq: dict[int, int]
    pair_freq: dict[tuple[int, int], int]
    smoothing: float = 1.0

    def pair(self, a: int, b: int) -> int:
        if a == b:
            return self.doc_freq.get(a, 0)
        key = (a, b) if a < b else (b, a)
        return self.pair_freq.get(key, 0)


def _iter_windows(doc: np.ndarray, mode: str, width: int):
    n = len(doc)
    if mode == "document" or n <= width:
        yield doc
        return
    for start in range(n - width + 1):
        yield doc[start : start + width]


def count_cooccurrence(
    corpus: Corpus,
    keywords: set[int],
    window: str = "doc",
    smoothing: float = 1.0,
) -> CooccurrenceStats:
    """Count keyword window and pair frequencies over the corpus."""
    if not keywords:
        raise ConfigError("keyword restriction must be non-empty")
    mode, width = parse_window_mode(window)
    doc_freq: dict[int, int] = {}
    pair_freq: dict[tuple[int, int], int] = {}
    n_windows = 0
    for doc in corpus.docs:
        for win in _iter_windows(doc, mode, width):
            n_windows += 1
            present = sorted({int(v) for v in win if int(v) in keywords})
            for w in present:
                doc_freq[w] = doc_freq.get(w, 0) + 1
            for a, b in itertools.combinations(present, 2):
                pair_freq[(a, b)] = pair_freq.get((a, b), 0) + 1
    return CooccurrenceStats(
        window_mode=mode,
        width=width,
        n_windows=n_windows,
        doc_freq=doc_freq,
        pair_freq=pair_freq,
        smoothing=smoothing,
    )


def _usable_keywords(stats: CooccurrenceStats, keywords) -> list[int]:
    usable = []
    for w in keywords:
        if stats.doc_freq.get(int(w), 0) >= 1:
            usable.append(int(w))
        else:
            log.warning("keyword id %d never occurs in a window; skipped", int(w))
    return usable


def tc_umass(stats: CooccurrenceStats, keywords: list[int]) -> tuple[float, float]:
    """Smoothed conditional log-ratio coherence over ranked keywords.

    sum over t=2..T, l<t of log2((N(w_t, w_l) + smoothing) / N(w_l));
    mean divides by the pair count T(T-1)/2.
    """
    ranked = _usable_keywords(stats, keywords)
    T = len(ranked)
    if T < 2:
        log.warning("u_mass needs at least 2 usable keywords; reporting 0")
        return 0.0, 0.0
    total = 0.0
    for t in range(1, T):
        for l in range(t):
            joint = stats.pair(ranked[t], ranked[l])
            total += math.log2((joint + stats.smoothing) / stats.doc_freq[ranked[l]])
    return total, total / (T * (T - 1) / 2)


def pmi(stats: CooccurrenceStats, w_i: int, w_j: int) -> float:
    """Pointwise mutual information from window frequencies (natural log)."""
    n_i = stats.doc_freq.get(int(w_i), 0)
    n_j = stats.doc_freq.get(int(w_j), 0)
    if n_i < 1 or n_j < 1:
        raise InputError("pmi requires both words to occur in at least one window")
    joint = stats.pair(int(w_i), int(w_j))
    if joint == 0:
        return float("-inf")
    n = stats.n_windows
    return math.log((joint / n) / ((n_i / n) * (n_j / n)))


def npmi(stats: CooccurrenceStats, w_i: int, w_j: int) -> float:
    """Normalized PMI in [-1, 1]; zero co-occurrence maps to -1."""
    joint = stats.pair(int(w_i), int(w_j))
    if joint == 0:
        # touch the same precondition pmi enforces
        if stats.doc_freq.get(int(w_i), 0) < 1 or stats.doc_freq.get(int(w_j), 0) < 1:
            raise InputError("npmi requires both words to occur in at least one window")
        return -1.0
    p_joint = joint / stats.n_windows
    if p_joint >= 1.0:
        return 1.0  # pair present in every window: limit case
    return pmi(stats, w_i, w_j) / (-math.log(p_joint))


def c_v_score(stats: CooccurrenceStats, keywords: list[int]) -> tuple[float, float]:
    """Pairwise-NPMI coherence, both as published (sum/|W|) and as a mean."""
    usable = _usable_keywords(stats, keywords)
    n = len(usable)
    if n < 2:
        log.warning("c_v needs at least 2 usable keywords; reporting 0")
        return 0.0, 0.0
    total = 0.0
    for a, b in itertools.combinations(usable, 2):
        total += npmi(stats, a, b)
    c_v_mean = total / (n * (n - 1) / 2)
    c_v_paper = c_v_mean * (n - 1) / 2  # == total / n, kept exactly consistent
    return c_v_paper, c_v_mean


def perplexity(theta: np.ndarray, phi: np.ndarray, corpus: Corpus) -> float:
    """exp(-sum_d log p(w_d) / total tokens) with p(w) = theta_d . phi[:, w].

    Uses an exactly-rounded summation so the result is invariant under
    document reordering.
    """
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    if theta.ndim != 2 or phi.ndim != 2 or theta.shape[1] != phi.shape[0]:
        raise ConfigError(
            f"theta {theta.shape} and phi {phi.shape} have incompatible shapes"
        )
    if theta.shape[0] != corpus.M:
        raise ConfigError(
            f"theta rows {theta.shape[0]} != corpus documents {corpus.M}"
        )
    total_tokens = corpus.total_tokens
    if total_tokens == 0:
        raise InputError("empty evaluation corpus")
    logs: list[float] = []
    for m, doc in enumerate(corpus.docs):
        if len(doc) == 0:
            continue
        if int(doc.max()) >= phi.shape[1]:
            raise InputError(f"document {corpus.doc_ids[m]!r} has out-of-range tokens")
        probs = theta[m] @ phi[:, doc]
        logs.extend(np.log(probs))
    return float(math.exp(-math.fsum(logs) / total_tokens))


@dataclass
class TopicCoherence:
    topic_index: int
    keywords: list[str]
    u_mass_sum: float
    u_mass_mean: float
    c_v_paper: float
    c_v_mean: float


@dataclass
class CoherenceReport:
    topics: list[TopicCoherence]
    top_t: int
    umass_window: str
    cv_window: str
    aggregate: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "aggregate": self.aggregate,
            "cv_window": self.cv_window,
            "top_t": self.top_t,
            "topics": [
                {
                    "c_v_mean": t.c_v_mean,
                    "c_v_paper": t.c_v_paper,
                    "keywords": t.keywords,
                    "topic_index": t.topic_index,
                    "u_mass_mean": t.u_mass_mean,
                    "u_mass_sum": t.u_mass_sum,
                }
                for t in self.topics
            ],
            "umass_window": self.umass_window,
        }


def coherence_report(
    model,
    corpus: Corpus,
    top_t: int = 10,
    umass_window: str = "doc",
    cv_window: str = "slide:10",
) -> CoherenceReport:
    """Score every topic's top keywords with u_mass and c_v variants."""
    from topicmine.lda import top_keywords  # local import; avoids cycle

    keyword_ids: list[list[int]] = []
    keyword_surfaces: list[list[str]] = []
    for k in range(model.K):
        ranked = top_keywords(model, k, top_t)
        keyword_surfaces.append([w for w, _ in ranked])
        keyword_ids.append([corpus.vocab.id_of[w] for w, _ in ranked])
    restriction = {w for ids in keyword_ids for w in ids}
    umass_stats = count_cooccurrence(corpus, restriction, window=umass_window)
    cv_stats = count_cooccurrence(corpus, restriction, window=cv_window)
    topics = []
    for k in range(model.K):
        u_sum, u_mean = tc_umass(umass_stats, keyword_ids[k])
        cv_paper, cv_mean = c_v_score(cv_stats, keyword_ids[k])
        topics.append(
            TopicCoherence(
                topic_index=k,
                keywords=keyword_surfaces[k],
                u_mass_sum=u_sum,
                u_mass_mean=u_mean,
                c_v_paper=cv_paper,
                c_v_mean=cv_mean,
            )
        )
    aggregate = {
        "c_v_mean": float(np.mean([t.c_v_mean for t in topics])),
        "c_v_paper": float(np.mean([t.c_v_paper for t in topics])),
        "u_mass_mean": float(np.mean([t.u_mass_mean for t in topics])),
        "u_mass_sum": float(np.mean([t.u_mass_sum for t in topics])),
    }
    return CoherenceReport(
        topics=topics,
        top_t=top_t,
        umass_window=umass_window,
        cv_window=cv_window,
        aggregate=aggregate,
    )


def write_sweep_csv(rows: list[tuple[int, float]], path) -> None:
    """Perplexity-per-K curve as CSV with header 'K,perplexity'."""
    lines = ["K,perplexity"]
    for k, p in rows:
        lines.append(f"{k},{p:.6f}")
    atomic_write_text(path, "\n".join(lines) + "\n")
