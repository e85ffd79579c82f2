import re

import numpy as np
import pytest

from topicmine.corpus import Corpus, Vocabulary
from topicmine.sampledata import generate_planted_corpus


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One visible pass/fail line per acceptance criterion."""
    rows = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(rep, "nodeid", "")
            match = re.search(r"test_acceptance\.py::test_criterion_(\d+)", nodeid)
            if match and getattr(rep, "when", "call") == "call":
                label = "PASS" if outcome == "passed" else "FAIL"
                rows.append((int(match.group(1)), label, nodeid.split("::")[-1]))
    if rows:
        terminalreporter.write_sep("-", "acceptance criteria")
        for number, label, name in sorted(rows):
            terminalreporter.write_line(f"criterion {number}: {label} ({name})")


def make_corpus(docs: list[list[str]], doc_ids=None) -> Corpus:
    """Corpus straight from surface-token documents (min_count=1 vocabulary)."""
    surfaces = sorted({t for doc in docs for t in doc})
    id_of = {s: i for i, s in enumerate(surfaces)}
    counts = np.zeros(len(surfaces), dtype=np.int64)
    encoded = []
    for doc in docs:
        ids = np.array([id_of[t] for t in doc], dtype=np.int32)
        encoded.append(ids)
        for t in doc:
            counts[id_of[t]] += 1
    vocab = Vocabulary(list(surfaces), id_of, counts, 1)
    if doc_ids is None:
        doc_ids = [f"d{i}" for i in range(len(docs))]
    return Corpus(doc_ids, encoded, vocab)


@pytest.fixture(scope="session")
def planted():
    """Planted 3-topic corpus with its generating theta/phi."""
    corpus, theta, phi = generate_planted_corpus(
        M=500, V=40, K=3, doc_len=50, seed=0
    )
    return corpus, theta, phi


@pytest.fixture(scope="session")
def small_planted():
    corpus, theta, phi = generate_planted_corpus(
        M=120, V=30, K=3, doc_len=40, seed=1
    )
    return corpus, theta, phi
