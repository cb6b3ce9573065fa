"""Rank-shift, year-shift, rank-correlation and reversal-rate metrics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .corpus import RankedList
from .stats import TooFewSamples, ZeroVariance, t_test_one_sample

logger = logging.getLogger(__name__)

DEFAULT_KS = (10, 20, 30, 50)
GROUP_SIZE = 10
ALL_LEVELS = "All"


def _ids(x) -> list[str]:
    return x.ids if isinstance(x, RankedList) else list(x)


def _same_ids(before: Sequence[str], after: Sequence[str]) -> None:
    if len(before) != len(after) or set(before) != set(after):
        raise ValueError("before and after must rank the identical passage set")


@dataclass(frozen=True)
class ShiftRecord:
    passage_id: str
    r_before: int
    r_after: int

    @property
    def delta(self) -> int:
        return self.r_after - self.r_before


def rank_shifts(before, after) -> list[ShiftRecord]:
    """One record per passage, in `before` order; delta = r_after - r_before."""
    b, a = _ids(before), _ids(after)
    _same_ids(b, a)
    pos_after = {pid: i for i, pid in enumerate(a, start=1)}
    return [ShiftRecord(pid, i, pos_after[pid]) for i, pid in enumerate(b, start=1)]


def aars(shifts: Sequence[ShiftRecord]) -> float:
    if not shifts:
        raise ValueError("empty shift list")
    return sum(abs(s.delta) for s in shifts) / len(shifts)


def alrs(shifts: Sequence[ShiftRecord]) -> int:
    if not shifts:
        raise ValueError("empty shift list")
    return max(abs(s.delta) for s in shifts)


def alrs_signed(shifts: Sequence[ShiftRecord]) -> int:
    """The delta behind ALRS, keeping its sign (first in `before` order on ties)."""
    if not shifts:
        raise ValueError("empty shift list")
    return max(shifts, key=lambda s: abs(s.delta)).delta


def maars(values: Sequence[float]) -> float:
    if not values:
        raise ValueError("no topics")
    return math.fsum(values) / len(values)


def alrs_all(values: Sequence[int]) -> int:
    if not values:
        raise ValueError("no topics")
    return max(values)


def _year_rows(paired) -> tuple[list[int], list[int]]:
    b, a = paired.before.ids, paired.after.ids
    _same_ids(b, a)
    years = paired.years
    return [years[p] for p in b], [years[p] for p in a]


def year_shift_topk(paired, k: int) -> float:
    """Mean injected-year change over the top-k ranks."""
    yb, ya = _year_rows(paired)
    if not 1 <= k <= len(yb):
        raise ValueError(f"K={k} outside 1..{len(yb)}")
    return sum(ya[i] - yb[i] for i in range(k)) / k


def group_bounds(n: int) -> list[tuple[int, int]]:
    """0-based half-open rank groups of ten, with a trailing partial group."""
    if n < GROUP_SIZE:
        raise ValueError(f"need at least {GROUP_SIZE} ranks for group shifts, got {n}")
    return [(s, min(s + GROUP_SIZE, n)) for s in range(0, n, GROUP_SIZE)]


def year_shift_groups(paired) -> list[float]:
    yb, ya = _year_rows(paired)
    out = []
    for lo, hi in group_bounds(len(yb)):
        # integer sum first: one rounding, so results are exact wherever floats allow
        out.append(sum(ya[i] - yb[i] for i in range(lo, hi)) / (hi - lo))
    return out


def _count_inversions(seq: list[int]) -> int:
    """Bottom-up merge sort; returns the number of pairs i < j with seq[i] > seq[j]."""
    n = len(seq)
    src = list(seq)
    buf = [0] * n
    inversions = 0
    width = 1
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if src[i] <= src[j]:
                    buf[k] = src[i]
                    i += 1
                else:
                    buf[k] = src[j]
                    inversions += mid - i
                    j += 1
                k += 1
            buf[k:hi] = src[i:mid] + src[j:hi]
        src, buf = buf, src
        width *= 2
    return inversions


def kendall_tau(before, after) -> float:
    """Kendall's tau between two strict orderings of the same items."""
    b, a = _ids(before), _ids(after)
    _same_ids(b, a)
    n = len(b)
    if n < 2:
        raise ValueError("Kendall's tau needs at least 2 items")
    pos_after = {pid: i for i, pid in enumerate(a)}
    discordant = _count_inversions([pos_after[pid] for pid in b])
    pairs = n * (n - 1) // 2
    return (pairs - 2 * discordant) / pairs


@dataclass(frozen=True)
class MeanStat:
    """A mean over topics with its one-sample t-test against zero."""

    value: float
    n_topics: int
    t: float | None = None
    p: float | None = None
    df: int | None = None
    note: str | None = None

    @property
    def significant(self) -> bool:
        return self.p is not None and self.p < 0.05

    def to_dict(self) -> dict:
        return {"value": self.value, "t": self.t, "p": self.p, "df": self.df, "n_topics": self.n_topics,
                "note": self.note}

    @classmethod
    def from_dict(cls, d: dict) -> "MeanStat":
        return cls(d["value"], d["n_topics"], d.get("t"), d.get("p"), d.get("df"), d.get("note"))


def mean_stat(values: Sequence[float], mu0: float = 0.0) -> MeanStat:
    if not values:
        raise ValueError("no values to average")
    value = math.fsum(values) / len(values)
    try:
        res = t_test_one_sample(values, mu0)
    except (TooFewSamples, ZeroVariance) as exc:
        return MeanStat(value, len(values), note=type(exc).__name__)
    return MeanStat(value, len(values), res.statistic, res.pvalue, res.df)


@dataclass(frozen=True)
class TopicMetrics:
    topic_id: str
    aars: float | None = None
    alrs: int | None = None
    alrs_signed: int | None = None
    ys_topk: dict[int, float] = field(default_factory=dict)
    ysg: list[float] = field(default_factory=list)
    tau: float | None = None
    rr_by_level: dict[str, tuple[int, int]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "topic_id": self.topic_id,
            "aars": self.aars,
            "alrs": self.alrs,
            "alrs_signed": self.alrs_signed,
            "ys_topk": {str(k): v for k, v in self.ys_topk.items()},
            "ysg": list(self.ysg),
            "tau": self.tau,
            "rr_by_level": {lvl: list(rc) for lvl, rc in self.rr_by_level.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TopicMetrics":
        return cls(
            d["topic_id"], d["aars"], d["alrs"], d.get("alrs_signed"),
            {int(k): v for k, v in d["ys_topk"].items()}, list(d["ysg"]), d["tau"],
            {lvl: tuple(rc) for lvl, rc in d["rr_by_level"].items()},
        )


def listwise_topic_metrics(paired, ks: Iterable[int] = DEFAULT_KS) -> TopicMetrics:
    shifts = rank_shifts(paired.before, paired.after)
    n = len(shifts)
    return TopicMetrics(
        topic_id=paired.topic_id,
        aars=aars(shifts),
        alrs=alrs(shifts),
        alrs_signed=alrs_signed(shifts),
        ys_topk={k: year_shift_topk(paired, k) for k in ks if k <= n},
        ysg=year_shift_groups(paired) if n >= GROUP_SIZE else [],
        tau=kendall_tau(paired.before, paired.after),
    )


def topic_reversal_counts(trials) -> dict[str, dict[str, tuple[int, int]]]:
    """topic -> level -> (reversed, evaluated); excluded trials are left out."""
    out: dict[str, dict[str, list[int]]] = {}
    for t in trials:
        if t.excluded:
            continue
        per = out.setdefault(t.topic_id, {})
        for lvl in (str(t.level), ALL_LEVELS):
            rc = per.setdefault(lvl, [0, 0])
            rc[0] += int(t.reversed)
            rc[1] += 1
    return {tid: {lvl: tuple(rc) for lvl, rc in sorted(per.items(), key=_level_order)} for tid, per in out.items()}


def _level_order(item):
    lvl = item[0]
    return (1, 0) if lvl == ALL_LEVELS else (0, int(lvl))


@dataclass(frozen=True)
class RRSummary:
    mean: MeanStat
    max: float
    n_topics: int

    def to_dict(self) -> dict:
        return {"mean": self.mean.to_dict(), "max": self.max, "n_topics": self.n_topics}

    @classmethod
    def from_dict(cls, d: dict) -> "RRSummary":
        return cls(MeanStat.from_dict(d["mean"]), d["max"], d["n_topics"])


def reversal_rates(trials) -> dict[str, RRSummary]:
    """Per-level and pooled reversal rates: mean and max over topics."""
    counts = topic_reversal_counts(trials)
    per_level: dict[str, list[float]] = {}
    for per in counts.values():
        for lvl, (rev, ev) in per.items():
            if ev:
                per_level.setdefault(lvl, []).append(rev / ev)
    out = {}
    for lvl, rates in sorted(per_level.items(), key=_level_order):
        out[lvl] = RRSummary(mean_stat(rates), max(rates), len(rates))
    return out


@dataclass(frozen=True)
class CollectionMetrics:
    model: str
    collection: str
    n_topics: int
    maars: MeanStat | None = None
    alrs_all: int | None = None
    alrs_all_signed: int | None = None
    m_ys_topk: dict[int, MeanStat] = field(default_factory=dict)
    m_ysg: list[MeanStat] = field(default_factory=list)
    rr: dict[str, RRSummary] = field(default_factory=dict)
    pairs_raw: int = 0
    pairs_evaluated: int = 0
    excluded_topics: dict[str, list[str]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "collection": self.collection,
            "n_topics": self.n_topics,
            "maars": self.maars.to_dict() if self.maars else None,
            "alrs_all": self.alrs_all,
            "alrs_all_signed": self.alrs_all_signed,
            "m_ys_topk": {str(k): v.to_dict() for k, v in self.m_ys_topk.items()},
            "m_ysg": [m.to_dict() for m in self.m_ysg],
            "rr": {lvl: s.to_dict() for lvl, s in self.rr.items()},
            "pairs_raw": self.pairs_raw,
            "pairs_evaluated": self.pairs_evaluated,
            "excluded_topics": {k: list(v) for k, v in self.excluded_topics.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CollectionMetrics":
        return cls(
            model=d["model"],
            collection=d["collection"],
            n_topics=d["n_topics"],
            maars=MeanStat.from_dict(d["maars"]) if d.get("maars") else None,
            alrs_all=d.get("alrs_all"),
            alrs_all_signed=d.get("alrs_all_signed"),
            m_ys_topk={int(k): MeanStat.from_dict(v) for k, v in d.get("m_ys_topk", {}).items()},
            m_ysg=[MeanStat.from_dict(m) for m in d.get("m_ysg", [])],
            rr={lvl: RRSummary.from_dict(s) for lvl, s in d.get("rr", {}).items()},
            pairs_raw=d.get("pairs_raw", 0),
            pairs_evaluated=d.get("pairs_evaluated", 0),
            excluded_topics={k: list(v) for k, v in d.get("excluded_topics", {}).items()},
        )


def collection_metrics(
    model: str,
    collection: str,
    topic_metrics: Mapping[str, TopicMetrics],
    trials: Sequence = (),
    ks: Iterable[int] = DEFAULT_KS,
    excluded_topics: Mapping[str, Sequence[str]] | None = None,
) -> CollectionMetrics:
    """Aggregate per-topic values; topics lacking a metric are left out of that mean."""
    tids = sorted(topic_metrics)
    listwise = [topic_metrics[t] for t in tids if topic_metrics[t].aars is not None]
    kw: dict = {}
    if listwise:
        kw["maars"] = mean_stat([m.aars for m in listwise])
        worst = max(listwise, key=lambda m: m.alrs)
        kw["alrs_all"] = alrs_all([m.alrs for m in listwise])
        kw["alrs_all_signed"] = worst.alrs_signed
        m_ys = {}
        for k in ks:
            vals = [m.ys_topk[k] for m in listwise if k in m.ys_topk]
            if vals:
                m_ys[k] = mean_stat(vals)
        kw["m_ys_topk"] = m_ys
        n_groups = max(len(m.ysg) for m in listwise)
        kw["m_ysg"] = [
            mean_stat([m.ysg[g] for m in listwise if len(m.ysg) > g]) for g in range(n_groups)
        ]
    if trials:
        kw["rr"] = reversal_rates(trials)
        kw["pairs_raw"] = len(trials)
        kw["pairs_evaluated"] = sum(1 for t in trials if not t.excluded)
    n_topics = len(set(tids) | {t.topic_id for t in trials})
    if n_topics < 1:
        raise ValueError("no topics to aggregate")
    return CollectionMetrics(
        model=model,
        collection=collection,
        n_topics=n_topics,
        excluded_topics={k: sorted(v) for k, v in (excluded_topics or {}).items()},
        **kw,
    )
