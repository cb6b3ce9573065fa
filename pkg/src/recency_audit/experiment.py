"""Listwise and pairwise date-injection protocols, with a resumable response cache."""

from __future__ import annotations

import itertools
import logging
import random
import threading
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .backend import ParseStats, Transcript, prefer, rank_window, stable_hash
from .corpus import MissingPassage, Passage, Qrels, RankedList, Topic
from .injection import DateSchedule, inject_listwise, inject_pairwise, year_map
from .protocol import REPAIR, ParseError, PassageLike, build_listwise_prompt, build_pairwise_prompt, plain_passage

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_LEVEL_MAP = {0: 0, 1: 1, 2: 2}


@dataclass(frozen=True)
class WindowPlan:
    window: int = 10
    stride: int = 5
    direction: str = "bottom_up"
    passes: int = 1

    def __post_init__(self):
        if self.window < 2:
            raise ValueError("window must be >= 2")
        if not 1 <= self.stride <= self.window:
            raise ValueError("stride must satisfy 1 <= stride <= window")
        if self.direction != "bottom_up":
            raise ValueError(f"unsupported direction {self.direction!r}")
        if self.passes < 1:
            raise ValueError("passes must be >= 1")

    def spans(self, n: int) -> list[tuple[int, int]]:
        """0-based half-open window spans for one pass, deepest first.

        The window is clamped to n for short lists; the final span is
        pinned to the top so every rank is covered.
        """
        if n < 2:
            return []
        w = min(self.window, n)
        s = min(self.stride, w)
        out = []
        end = n
        while True:
            start = max(end - w, 0)
            out.append((start, start + w))
            if start == 0:
                return out
            end -= s


@dataclass(frozen=True)
class PairedSerps:
    topic_id: str
    before: RankedList
    after: RankedList
    years: dict[str, int]
    parse_stats: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if set(self.before.ids) != set(self.after.ids):
            raise ValueError(f"topic {self.topic_id}: before/after passage sets differ")

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "topic_id": self.topic_id,
            "before": [[e.passage_id, e.rank, e.score] for e in self.before.entries],
            "after": [[e.passage_id, e.rank, e.score] for e in self.after.entries],
            "years": {pid: self.years[pid] for pid in self.before.ids},
            "parse_stats": self.parse_stats,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PairedSerps":
        _check_schema(d)
        tid = d["topic_id"]
        before = RankedList.from_ids(tid, [r[0] for r in d["before"]], [r[2] for r in d["before"]])
        after = RankedList.from_ids(tid, [r[0] for r in d["after"]], [r[2] for r in d["after"]])
        return cls(tid, before, after, {k: int(v) for k, v in d["years"].items()}, d.get("parse_stats", {}))


@dataclass(frozen=True)
class PairTrial:
    topic_id: str
    level: int
    a_id: str
    b_id: str
    round1: str | None
    round2: str | None
    excluded: bool = False

    @property
    def reversed(self) -> bool:
        return not self.excluded and self.round1 != self.round2

    def to_dict(self) -> dict:
        return {
            "topic_id": self.topic_id,
            "level": self.level,
            "a": self.a_id,
            "b": self.b_id,
            "round1": self.round1,
            "round2": self.round2,
            "reversed": self.reversed,
            "excluded": self.excluded,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PairTrial":
        return cls(d["topic_id"], int(d["level"]), d["a"], d["b"], d["round1"], d["round2"], bool(d["excluded"]))


def _check_schema(d: dict) -> None:
    version = d.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")


def pairs_to_dict(topic_id: str, trials: Sequence[PairTrial], parse_stats: dict | None = None) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "topic_id": topic_id,
        "trials": [t.to_dict() for t in trials],
        "parse_stats": parse_stats or {},
    }


def pairs_from_dict(d: dict) -> list[PairTrial]:
    _check_schema(d)
    return [PairTrial.from_dict(t) for t in d["trials"]]


def slide_rerank(
    backend,
    topic: Topic,
    items: Sequence[PassageLike],
    plan: WindowPlan = WindowPlan(),
    mode: str = REPAIR,
    stats: ParseStats | None = None,
) -> list[PassageLike]:
    """Rerank `items` bottom-up with overlapping windows; returns the new order."""
    order = list(items)
    for _ in range(plan.passes):
        for start, end in plan.spans(len(order)):
            window = order[start:end]
            prompt = build_listwise_prompt(topic, window)
            perm = rank_window(backend, prompt, mode, stats)
            order[start:end] = [window[i - 1] for i in perm]
    return order


def _ranked(topic_id: str, items: Sequence[PassageLike]) -> RankedList:
    return RankedList.from_ids(topic_id, [plain_passage(p).id for p in items])


def run_listwise(
    backend,
    topic: Topic,
    baseline: RankedList,
    passages: Mapping[str, Passage],
    schedule: DateSchedule = DateSchedule(),
    plan: WindowPlan = WindowPlan(),
    mode: str = REPAIR,
) -> PairedSerps:
    """Rerank plain passages, date the resulting SERP, and rerank again."""
    stats = ParseStats()
    try:
        plain = [passages[pid] for pid in baseline.ids]
    except KeyError as exc:
        raise MissingPassage(f"passage {exc.args[0]} not in store") from None
    before = _ranked(topic.id, slide_rerank(backend, topic, plain, plan, mode, stats))
    injected = inject_listwise(before, passages, schedule)
    after = _ranked(topic.id, slide_rerank(backend, topic, injected, plan, mode, stats))
    return PairedSerps(topic.id, before, after, year_map(injected), stats.to_dict())


def check_level_map(level_map: Mapping[int, int]) -> None:
    levels = list(level_map.values())
    if len(set(levels)) != len(levels):
        raise ValueError("level map must be one-to-one; pairs would mix relevance grades")


def enumerate_pairs(
    qrels: Qrels,
    topic_id: str,
    level_map: Mapping[int, int] = DEFAULT_LEVEL_MAP,
    cap: int | None = None,
    seed: int = 0,
    available: Mapping[str, object] | None = None,
) -> list[tuple[int, str, str]]:
    """All unordered same-level pairs for a topic; A is the lexicographically smaller id."""
    check_level_map(level_map)
    by_level: dict[int, list[str]] = {}
    missing = 0
    for pid, grade in qrels.for_topic(topic_id).items():
        if grade not in level_map:
            continue
        if available is not None and pid not in available:
            missing += 1
            continue
        by_level.setdefault(level_map[grade], []).append(pid)
    if missing:
        logger.warning("topic %s: %d judged passages missing from the passage store", topic_id, missing)
    out = []
    for level in sorted(by_level):
        pairs = list(itertools.combinations(sorted(by_level[level]), 2))
        if cap is not None and len(pairs) > cap:
            rng = random.Random(f"{seed}:{topic_id}:{level}")
            pairs = sorted(rng.sample(pairs, cap))
        out.extend((level, a, b) for a, b in pairs)
    return out


def run_pairwise(
    backend,
    topic: Topic,
    pairs: Sequence[tuple[int, str, str]],
    passages: Mapping[str, Passage],
    old_year: int = 1980,
    fresh_year: int = 2025,
    schedule: DateSchedule = DateSchedule(),
    mode: str = REPAIR,
    stats: ParseStats | None = None,
) -> list[PairTrial]:
    stats = stats if stats is not None else ParseStats()
    trials = []
    for level, a_id, b_id in pairs:
        pa, pb = passages[a_id], passages[b_id]
        try:
            first = prefer(backend, build_pairwise_prompt(topic, pa, pb), mode, stats)
        except ParseError:
            trials.append(PairTrial(topic.id, level, a_id, b_id, None, None, excluded=True))
            continue
        winner, loser = (pa, pb) if first == "A" else (pb, pa)
        old, fresh = inject_pairwise(winner, loser, old_year, fresh_year, schedule)
        ia, ib = (old, fresh) if first == "A" else (fresh, old)
        try:
            second = prefer(backend, build_pairwise_prompt(topic, ia, ib), mode, stats)
        except ParseError:
            trials.append(PairTrial(topic.id, level, a_id, b_id, first, None, excluded=True))
            continue
        trials.append(PairTrial(topic.id, level, a_id, b_id, first, second))
    return trials


def cache_key(identity: dict, prompt_text: str) -> str:
    return stable_hash({"backend": identity, "prompt": stable_hash(prompt_text)})


class CachedBackend:
    """Serves responses recorded in a transcript; records and forwards everything else.

    Responses are keyed by (backend identity, prompt text, attempt index) so a
    resumed run replays strict-mode retries exactly as the original did.
    """

    def __init__(self, inner, transcript: Transcript | None = None):
        self.inner = inner
        self.transcript = transcript
        self.config_hash = stable_hash(inner.identity())
        self.calls = 0
        self._cache: dict[tuple[str, int], str] = {}
        self._lock = threading.Lock()
        if transcript is not None:
            self._load(transcript)

    def identity(self) -> dict:
        return self.inner.identity()

    def check_credentials(self) -> None:
        self.inner.check_credentials()

    def _load(self, transcript: Transcript) -> None:
        for rec in transcript.records():
            if rec.get("type") != "response" or rec.get("config_hash") != self.config_hash:
                continue
            try:
                self._cache[(rec["key"], int(rec["attempt"]))] = rec["response"]
            except (KeyError, TypeError, ValueError):
                logger.warning("skipping corrupt cache record %r", rec)

    def __len__(self):
        return len(self._cache)

    def _respond(self, kind: str, prompt, attempt: int) -> str:
        key = cache_key(self.inner.identity(), prompt.text)
        with self._lock:
            hit = self._cache.get((key, attempt))
        if hit is not None:
            return hit
        raw = getattr(self.inner, f"respond_{kind}")(prompt, attempt=attempt)
        with self._lock:
            self.calls += 1
            self._cache[(key, attempt)] = raw
        if self.transcript is not None:
            self.transcript.append({
                "type": "response",
                "kind": kind,
                "topic_id": prompt.topic_id,
                "key": key,
                "config_hash": self.config_hash,
                "prompt_hash": stable_hash(prompt.text),
                "attempt": attempt,
                "response": raw,
            })
        return raw

    def respond_listwise(self, prompt, attempt: int = 0) -> str:
        return self._respond("listwise", prompt, attempt)

    def respond_pairwise(self, prompt, attempt: int = 0) -> str:
        return self._respond("pairwise", prompt, attempt)
