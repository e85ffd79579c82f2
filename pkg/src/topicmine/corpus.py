"""Corpus ingestion: tokenization, stopword removal, vocabulary, id encoding.

Documents come in as JSON-lines ({"id", "text"}) or plain text (one document
per line). The built-in tokenizer lowercases, splits on Unicode word
boundaries, drops punctuation-only segments, and falls back to per-character
tokens for CJK codepoints; a custom tokenizer callable may replace it.
"""

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from typing import Callable, Iterable, Sequence

import numpy as np

from topicmine.errors import ConfigError, InputError
from topicmine.fileio import atomic_write_text, read_utf8

log = logging.getLogger(__name__)

Tokenizer = Callable[[str], list[str]]

_WORD_RE = re.compile(r"\w+", re.UNICODE)

# Ranges treated as CJK for the per-character fallback.
_CJK_RANGES = (
    (0x3040, 0x30FF),   # hiragana, katakana
    (0x3400, 0x4DBF),   # CJK extension A
    (0x4E00, 0x9FFF),   # CJK unified ideographs
    (0xAC00, 0xD7AF),   # hangul syllables
    (0xF900, 0xFAFF),   # CJK compatibility ideographs
    (0x20000, 0x2FFFF), # CJK extensions B..F
)


def _is_cjk(ch: str) -> bool:
    cp = ord(ch)
    for lo, hi in _CJK_RANGES:
        if lo <= cp <= hi:
            return True
    return False


def tokenize(text: str, lowercase: bool = True) -> list[str]:
    """Split text into lowercased word tokens; CJK chars become single tokens."""
    if lowercase:
        text = text.lower()
    tokens: list[str] = []
    for run in _WORD_RE.findall(text):
        buf: list[str] = []
        for ch in run:
            if _is_cjk(ch):
                if buf:
                    tokens.append("".join(buf))
                    buf = []
                tokens.append(ch)
            else:
                buf.append(ch)
        if buf:
            tokens.append("".join(buf))
    return tokens


def remove_stopwords(tokens: Sequence[str], stopwords: set[str]) -> list[str]:
    """Drop stopword tokens, preserving the relative order of the rest."""
    if not stopwords:
        return list(tokens)
    return [t for t in tokens if t not in stopwords]


def load_stopwords(path) -> set[str]:
    """One token per line; blank lines and lines starting with '#' ignored."""
    words: set[str] = set()
    for line in read_utf8(path).splitlines():
        entry = line.strip()
        if not entry or entry.startswith("#"):
            continue
        words.add(entry)
    return words


def default_stopwords_path() -> str:
    """Path of the bundled English stopword list."""
    return str(resources.files("topicmine").joinpath("data/stopwords_en.txt"))


@dataclass
class Vocabulary:
    """Dense id <-> surface bijection with corpus frequencies."""

    surface_of: list[str]
    id_of: dict[str, int]
    count_of: np.ndarray  # int64, aligned with surface_of
    min_count: int

    @property
    def size(self) -> int:
        return len(self.surface_of)

    def __len__(self) -> int:
        return len(self.surface_of)

    def __contains__(self, surface: str) -> bool:
        return surface in self.id_of


def build_vocabulary(docs: Iterable[Sequence[str]], min_count: int = 2) -> Vocabulary:
    """Frequency-filtered vocabulary; ids by descending count, ties lexicographic."""
    if min_count < 1:
        raise ConfigError(f"min_count must be >= 1, got {min_count}")
    counts: Counter[str] = Counter()
    for doc in docs:
        counts.update(doc)
    surviving = [(surface, n) for surface, n in counts.items() if n >= min_count]
    if not surviving:
        raise InputError("vocabulary empty after filtering")
    surviving.sort(key=lambda item: (-item[1], item[0]))
    surface_of = [surface for surface, _ in surviving]
    id_of = {surface: i for i, surface in enumerate(surface_of)}
    count_of = np.array([n for _, n in surviving], dtype=np.int64)
    return Vocabulary(surface_of, id_of, count_of, min_count)


@dataclass
class Corpus:
    """Token-id sequences per document plus the shared vocabulary."""

    doc_ids: list[str]
    docs: list[np.ndarray]  # int32 id sequences
    vocab: Vocabulary

    @property
    def M(self) -> int:
        return len(self.docs)

    @property
    def N_m(self) -> np.ndarray:
        return np.array([len(d) for d in self.docs], dtype=np.int64)

    @property
    def total_tokens(self) -> int:
        return int(self.N_m.sum())

    @property
    def empty_doc_ids(self) -> list[str]:
        return [self.doc_ids[m] for m in range(self.M) if len(self.docs[m]) == 0]

    def decode(self, m: int) -> list[str]:
        return [self.vocab.surface_of[int(v)] for v in self.docs[m]]

    def flat(self) -> tuple[np.ndarray, np.ndarray]:
        """Concatenated token ids plus per-document offsets (len M+1)."""
        ptr = np.zeros(self.M + 1, dtype=np.int64)
        np.cumsum(self.N_m, out=ptr[1:])
        if self.M == 0 or ptr[-1] == 0:
            return np.zeros(0, dtype=np.int32), ptr
        return np.concatenate(self.docs).astype(np.int32, copy=False), ptr


def encode_corpus(
    token_docs: Sequence[Sequence[str]],
    vocab: Vocabulary,
    doc_ids: Sequence[str] | None = None,
) -> Corpus:
    """Map surface tokens to ids, dropping out-of-vocabulary tokens.

    Documents that become empty are retained (N_m = 0) so indices stay
    aligned with embeddings; they are reported via a warning.
    """
    if doc_ids is None:
        doc_ids = [f"doc-{i + 1}" for i in range(len(token_docs))]
    if len(doc_ids) != len(token_docs):
        raise InputError(
            f"doc_ids length {len(doc_ids)} != document count {len(token_docs)}"
        )
    id_of = vocab.id_of
    docs = [
        np.array([id_of[t] for t in doc if t in id_of], dtype=np.int32)
        for doc in token_docs
    ]
    corpus = Corpus(list(doc_ids), docs, vocab)
    empty = corpus.empty_doc_ids
    if empty:
        log.warning(
            "%d document(s) empty after encoding (first: %s)", len(empty), empty[0]
        )
    return corpus


def read_documents(path) -> list[tuple[str, str]]:
    """Read (id, text) pairs from a JSONL or plain-text corpus file."""
    text = read_utf8(path)
    name = str(path)
    lower = name.lower()
    is_jsonl = lower.endswith((".jsonl", ".ndjson", ".json"))
    if not is_jsonl:
        stripped = next((ln for ln in text.splitlines() if ln.strip()), "")
        is_jsonl = stripped.lstrip().startswith("{")
    if is_jsonl:
        return _read_jsonl(text, name)
    return [
        (f"doc-{lineno}", line)
        for lineno, line in enumerate(text.splitlines(), start=1)
    ]


def _read_jsonl(text: str, name: str) -> list[tuple[str, str]]:
    pairs: list[tuple[str, str]] = []
    seen: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InputError(f"{name}: malformed JSON on line {lineno}: {exc.msg}") from exc
        if not isinstance(obj, dict) or "id" not in obj or "text" not in obj:
            raise InputError(f"{name}: line {lineno} must be an object with 'id' and 'text'")
        doc_id = str(obj["id"])
        if doc_id in seen:
            raise InputError(f"{name}: duplicate document id {doc_id!r} on line {lineno}")
        seen.add(doc_id)
        pairs.append((doc_id, str(obj["text"])))
    return pairs


def preprocess_documents(
    pairs: Sequence[tuple[str, str]],
    stopwords: set[str] | None = None,
    min_count: int = 2,
    tokenizer: Tokenizer | None = None,
) -> Corpus:
    """Tokenize, remove stopwords, build the vocabulary, and encode."""
    tok = tokenizer if tokenizer is not None else tokenize
    stop = stopwords or set()
    doc_ids = [doc_id for doc_id, _ in pairs]
    token_docs = [remove_stopwords(tok(text), stop) for _, text in pairs]
    vocab = build_vocabulary(token_docs, min_count=min_count)
    return encode_corpus(token_docs, vocab, doc_ids)


def write_vocabulary_tsv(vocab: Vocabulary, path) -> None:
    lines = ["id\tsurface\tcount"]
    for i, surface in enumerate(vocab.surface_of):
        lines.append(f"{i}\t{surface}\t{int(vocab.count_of[i])}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def save_corpus(corpus: Corpus, path) -> None:
    """Serialize the encoded corpus (vocabulary included) as deterministic JSON."""
    payload = {
        "counts": [int(n) for n in corpus.vocab.count_of],
        "doc_ids": corpus.doc_ids,
        "docs": [[int(v) for v in doc] for doc in corpus.docs],
        "min_count": corpus.vocab.min_count,
        "surfaces": corpus.vocab.surface_of,
        "version": 1,
    }
    atomic_write_text(path, json.dumps(payload, sort_keys=True, ensure_ascii=False))


def load_corpus(path) -> Corpus:
    try:
        payload = json.loads(read_utf8(path))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not a valid corpus file: {exc.msg}") from exc
    for key in ("surfaces", "counts", "doc_ids", "docs", "min_count"):
        if key not in payload:
            raise InputError(f"{path}: corpus file missing field {key!r}")
    surfaces = list(payload["surfaces"])
    vocab = Vocabulary(
        surface_of=surfaces,
        id_of={s: i for i, s in enumerate(surfaces)},
        count_of=np.array(payload["counts"], dtype=np.int64),
        min_count=int(payload["min_count"]),
    )
    docs = [np.array(doc, dtype=np.int32) for doc in payload["docs"]]
    for m, doc in enumerate(docs):
        if len(doc) and (doc.min() < 0 or doc.max() >= vocab.size):
            raise InputError(f"{path}: document {payload['doc_ids'][m]!r} has out-of-range token ids")
    return Corpus([str(d) for d in payload["doc_ids"]], docs, vocab)
