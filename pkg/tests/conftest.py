import os
import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("ci", max_examples=100, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))

from recency_audit.corpus import Passage, RankedList, Topic  # noqa: E402


@pytest.fixture(autouse=True)
def _fixed_clock(monkeypatch):
    # report.md carries a timestamp; pin it so repeated runs compare equal
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1735689600")


def make_passages(n, prefix="p"):
    return {f"{prefix}{i:03d}": Passage(f"{prefix}{i:03d}", f"text of passage {i} about topic words") for i in range(n)}


def make_ranked(passages, topic_id="t1"):
    return RankedList.from_ids(topic_id, sorted(passages))


@pytest.fixture
def topic():
    return Topic("t1", "solar energy storage")


@pytest.fixture
def tiny_collection(tmp_path):
    """Three topics, one unjudged; ten passages each with mixed grades."""
    run, qrels, passages, topics = [], [], [], []
    for t, query in (("101", "alpha beta"), ("102", "gamma delta"), ("103", "unjudged topic")):
        topics.append(f"{t}\t{query}")
        for i in range(12):
            pid = f"d{t}_{i:02d}"
            words = query.split()[0] if i % 3 == 0 else "filler"
            passages.append(f"{pid}\tpassage {i} {words} words here")
            run.append(f"{t} Q0 {pid} {i + 1} {20 - i}.5 bm25")
            if t != "103":
                qrels.append(f"{t} 0 {pid} {i % 4}")
    files = {}
    for name, lines in (("run.trec", run), ("qrels.txt", qrels), ("passages.tsv", passages), ("topics.tsv", topics)):
        path = tmp_path / name
        path.write_text("\n".join(lines) + "\n", "utf-8")
        files[name] = path
    return files
