"""Loading and validation of TREC-style inputs: runs, qrels, passages, topics."""

from __future__ import annotations

import logging
import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

logger = logging.getLogger(__name__)

DEFAULT_MAX_GRADE = 3


class CorpusError(ValueError):
    """Base class for malformed or inconsistent input data."""


class MalformedLine(CorpusError):
    def __init__(self, path, lineno: int, reason: str):
        super().__init__(f"{path}:{lineno}: {reason}")
        self.path = path
        self.lineno = lineno


class DuplicateEntry(CorpusError):
    pass


class DuplicateJudgment(CorpusError):
    pass


class GradeOutOfRange(CorpusError):
    pass


class DuplicatePassage(CorpusError):
    pass


class DuplicateTopic(CorpusError):
    pass


class EmptyInput(CorpusError):
    pass


class EmptyIntersection(CorpusError):
    pass


class MissingPassage(CorpusError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "missing passage"


def _nfc(text: str) -> str:
    return unicodedata.normalize("NFC", text)


@dataclass(frozen=True)
class Topic:
    id: str
    text: str

    def __post_init__(self):
        if not self.id:
            raise ValueError("topic id must be non-empty")
        if not self.text:
            raise ValueError(f"topic {self.id!r} has empty query text")


@dataclass(frozen=True)
class Passage:
    id: str
    text: str

    def __post_init__(self):
        if not self.id:
            raise ValueError("passage id must be non-empty")
        if not self.text.strip():
            raise ValueError(f"passage {self.id!r} has empty text")


@dataclass(frozen=True)
class Entry:
    passage_id: str
    rank: int
    score: float


@dataclass(frozen=True)
class RankedList:
    """An ordered SERP for one topic. Ranks are always exactly 1..N."""

    topic_id: str
    entries: tuple[Entry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        seen = set()
        for expected, e in enumerate(self.entries, start=1):
            if e.rank != expected:
                raise ValueError(
                    f"topic {self.topic_id}: rank {e.rank} at position {expected}; "
                    "ranks must be contiguous from 1"
                )
            if e.passage_id in seen:
                raise DuplicateEntry(f"topic {self.topic_id}: passage {e.passage_id} listed twice")
            seen.add(e.passage_id)

    @classmethod
    def from_ids(cls, topic_id: str, ids: Iterable[str], scores: Iterable[float] | None = None):
        ids = list(ids)
        if scores is None:
            scores = [float(len(ids) - i) for i in range(len(ids))]
        entries = tuple(Entry(pid, i, float(s)) for i, (pid, s) in enumerate(zip(ids, scores), start=1))
        return cls(topic_id, entries)

    @property
    def ids(self) -> list[str]:
        return [e.passage_id for e in self.entries]

    def __len__(self):
        return len(self.entries)

    def rank_of(self) -> dict[str, int]:
        return {e.passage_id: e.rank for e in self.entries}


class Qrels(Mapping):
    """Immutable mapping (topic id, passage id) -> grade."""

    def __init__(self, judgments: Mapping[tuple[str, str], int], max_grade: int = DEFAULT_MAX_GRADE):
        self._data = dict(judgments)
        self.max_grade = max_grade
        for key, grade in self._data.items():
            if not 0 <= grade <= max_grade:
                raise GradeOutOfRange(f"{key}: grade {grade} outside 0..{max_grade}")

    def __getitem__(self, key):
        return self._data[key]

    def __iter__(self):
        return iter(self._data)

    def __len__(self):
        return len(self._data)

    def topics(self) -> set[str]:
        return {qid for qid, _ in self._data}

    def for_topic(self, topic_id: str) -> dict[str, int]:
        return {pid: g for (qid, pid), g in self._data.items() if qid == topic_id}


def _lines(path):
    """Yield (lineno, line) for non-blank lines of a UTF-8 file."""
    path = Path(path)
    try:
        text = path.read_bytes().decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorpusError(f"{path}: invalid UTF-8 ({exc})") from exc
    # only \n ends a record; str.splitlines would also break on \x0c, \u2028 etc.
    for lineno, line in enumerate(text.split("\n"), start=1):
        line = line.removesuffix("\r")
        if line.strip():
            yield lineno, line


def load_run(path) -> dict[str, RankedList]:
    """Read a 6-column TREC run file.

    The input rank column is only validated as an integer; ranks are
    re-derived from scores (descending, docid ascending on ties).
    """
    rows: dict[str, dict[str, float]] = {}
    for lineno, line in _lines(path):
        parts = line.split()
        if len(parts) != 6:
            raise MalformedLine(path, lineno, f"expected 6 fields, got {len(parts)}")
        qid, _q0, docid, rank, score, _tag = parts
        try:
            int(rank)
            score_f = float(score)
        except ValueError:
            raise MalformedLine(path, lineno, f"bad rank/score {rank!r} {score!r}") from None
        qid, docid = _nfc(qid), _nfc(docid)
        per_topic = rows.setdefault(qid, {})
        if docid in per_topic:
            raise DuplicateEntry(f"{path}:{lineno}: duplicate ({qid}, {docid})")
        per_topic[docid] = score_f
    if not rows:
        raise EmptyInput(f"{path}: run file is empty")
    runs = {}
    for qid, scores in rows.items():
        ordered = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
        runs[qid] = RankedList.from_ids(qid, [d for d, _ in ordered], [s for _, s in ordered])
    return runs


def write_run(runs: Mapping[str, RankedList], path, tag: str = "run") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(runs):
            for e in runs[qid].entries:
                fh.write(f"{qid} Q0 {e.passage_id} {e.rank} {e.score!r} {tag}\n")


def load_qrels(path, max_grade: int = DEFAULT_MAX_GRADE) -> Qrels:
    judgments: dict[tuple[str, str], int] = {}
    for lineno, line in _lines(path):
        parts = line.split()
        if len(parts) != 4:
            raise MalformedLine(path, lineno, f"expected 4 fields, got {len(parts)}")
        qid, _iter, docid, grade = parts
        try:
            g = int(grade)
        except ValueError:
            raise MalformedLine(path, lineno, f"grade {grade!r} is not an integer") from None
        if g < 0:
            raise MalformedLine(path, lineno, f"negative grade {g}")
        if g > max_grade:
            raise GradeOutOfRange(f"{path}:{lineno}: grade {g} exceeds maximum {max_grade}")
        key = (_nfc(qid), _nfc(docid))
        if key in judgments:
            raise DuplicateJudgment(f"{path}:{lineno}: duplicate judgment for {key}")
        judgments[key] = g
    if not judgments:
        raise EmptyInput(f"{path}: qrels file is empty")
    return Qrels(judgments, max_grade=max_grade)


def _load_tsv(path, kind: str) -> list[tuple[int, str, str]]:
    out = []
    for lineno, line in _lines(path):
        if "\t" not in line:
            raise MalformedLine(path, lineno, f"{kind} line has no tab separator")
        key, text = line.split("\t", 1)
        out.append((lineno, _nfc(key.strip()), _nfc(text)))
    return out


def load_passages(path) -> dict[str, Passage]:
    store: dict[str, Passage] = {}
    for lineno, docid, text in _load_tsv(path, "passage"):
        if docid in store:
            raise DuplicatePassage(f"{path}:{lineno}: duplicate passage {docid}")
        try:
            store[docid] = Passage(docid, text)
        except ValueError as exc:
            raise MalformedLine(path, lineno, str(exc)) from None
    if not store:
        raise EmptyInput(f"{path}: passage file is empty")
    return store


def load_topics(path) -> dict[str, Topic]:
    topics: dict[str, Topic] = {}
    for lineno, qid, text in _load_tsv(path, "topic"):
        if qid in topics:
            raise DuplicateTopic(f"{path}:{lineno}: duplicate topic {qid}")
        try:
            topics[qid] = Topic(qid, text.strip())
        except ValueError as exc:
            raise MalformedLine(path, lineno, str(exc)) from None
    if not topics:
        raise EmptyInput(f"{path}: topics file is empty")
    return topics


def filter_judged_topics(runs: Mapping[str, RankedList], qrels: Qrels) -> dict[str, RankedList]:
    judged = qrels.topics()
    kept = {qid: lst for qid, lst in runs.items() if qid in judged}
    if not kept:
        raise EmptyIntersection("no run topic has relevance judgments")
    logger.info("retained %d of %d run topics with judgments", len(kept), len(runs))
    return kept


def truncate_top_k(ranked: RankedList, k: int) -> RankedList:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(ranked) < k:
        logger.warning("topic %s has only %d entries (< k=%d)", ranked.topic_id, len(ranked), k)
    return RankedList(ranked.topic_id, ranked.entries[:k])
