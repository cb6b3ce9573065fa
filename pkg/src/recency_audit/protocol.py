"""Prompt construction and response parsing for listwise and pairwise reranking."""

from __future__ import annotations

import hashlib
import logging
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Sequence, Union

from .corpus import Passage, Topic
from .injection import InjectedPassage

logger = logging.getLogger(__name__)

TEMPLATE_VERSION = "v1"
STRICT = "strict"
REPAIR = "repair"

PassageLike = Union[Passage, InjectedPassage]


class ParseError(ValueError):
    """Model output could not be turned into a ranking or preference."""


class NoMatch(ParseError):
    pass


class OutOfRange(ParseError):
    pass


class DuplicateId(ParseError):
    pass


class Incomplete(ParseError):
    pass


class NoIdentifiersFound(ParseError):
    pass


class NoPreferenceFound(ParseError):
    pass


class AmbiguousPreference(ParseError):
    pass


@lru_cache(maxsize=None)
def load_template(name: str) -> dict[str, str]:
    """Read a template resource into its ``[system]``/``[user]`` sections."""
    raw = resources.files(__package__).joinpath("templates", f"{name}_{TEMPLATE_VERSION}.txt").read_text("utf-8")
    sections: dict[str, list[str]] = {}
    current = None
    for line in raw.splitlines():
        m = re.fullmatch(r"\[(system|user)\]", line)
        if m:
            current = m.group(1)
            sections[current] = []
        elif current is not None:
            sections[current].append(line)
    return {k: "\n".join(v).strip("\n") for k, v in sections.items()}


def template_digest() -> str:
    h = hashlib.sha256()
    for name in ("listwise", "pairwise"):
        for key, text in sorted(load_template(name).items()):
            h.update(f"{name}:{key}\n{text}\n".encode())
    return f"{TEMPLATE_VERSION}-{h.hexdigest()[:12]}"


def _fill(template: str, values: dict[str, str]) -> str:
    # single pass, so braces inside passage or query text are never re-expanded
    return re.sub(r"\{(\w+)\}", lambda m: values.get(m.group(1), m.group(0)), template)


def passage_text(p: PassageLike) -> str:
    return p.rendered_text if isinstance(p, InjectedPassage) else p.text


def plain_passage(p: PassageLike) -> Passage:
    return p.passage if isinstance(p, InjectedPassage) else p


def passage_year(p: PassageLike) -> int | None:
    return p.year if isinstance(p, InjectedPassage) else None


@dataclass(frozen=True)
class ListwisePrompt:
    system: str
    user: str
    n: int
    topic_id: str
    passage_ids: tuple[str, ...]
    query: str = ""
    # structured copy of the window, used by mock backends only
    items: tuple = field(default=(), compare=False, repr=False)

    def messages(self) -> list[tuple[str, str]]:
        return [("system", self.system), ("user", self.user)]

    @property
    def text(self) -> str:
        return f"{self.system}\n\n{self.user}"


@dataclass(frozen=True)
class PairwisePrompt:
    user: str
    topic_id: str
    a_id: str
    b_id: str
    query: str = ""
    a: object = field(default=None, compare=False, repr=False)
    b: object = field(default=None, compare=False, repr=False)

    def messages(self) -> list[tuple[str, str]]:
        return [("user", self.user)]

    @property
    def text(self) -> str:
        return self.user


def build_listwise_prompt(topic: Topic, window: Sequence[PassageLike], n: int | None = None) -> ListwisePrompt:
    if not window:
        raise ValueError("empty window")
    if n is None:
        n = len(window)
    if n != len(window):
        raise ValueError(f"window has {len(window)} passages but n={n}")
    tpl = load_template("listwise")
    block = "\n".join(f"[{i}] {passage_text(p)}" for i, p in enumerate(window, start=1))
    user = _fill(tpl["user"], {"n": str(n), "query": topic.text, "passages": block})
    return ListwisePrompt(
        system=tpl["system"],
        user=user,
        n=n,
        topic_id=topic.id,
        passage_ids=tuple(plain_passage(p).id for p in window),
        query=topic.text,
        items=tuple(window),
    )


def build_pairwise_prompt(topic: Topic, pa: PassageLike, pb: PassageLike) -> PairwisePrompt:
    a_id, b_id = plain_passage(pa).id, plain_passage(pb).id
    if a_id == b_id:
        raise ValueError(f"passage {a_id} cannot be compared with itself")
    tpl = load_template("pairwise")
    user = _fill(tpl["user"], {"query": topic.text, "passage_a": passage_text(pa), "passage_b": passage_text(pb)})
    return PairwisePrompt(user=user, topic_id=topic.id, a_id=a_id, b_id=b_id, query=topic.text, a=pa, b=pb)


def render_ranking(perm: Sequence[int]) -> str:
    return " > ".join(f"[{i}]" for i in perm)


# ASCII digits only: \d would also accept e.g. Arabic-Indic numerals
_STRICT_RANKING = re.compile(r"\s*\[\s*([0-9]+)\s*\](?:\s*>\s*\[\s*[0-9]+\s*\])*\s*")
_BRACKETED = re.compile(r"\[\s*([0-9]+)\s*\]")


def parse_ranking(text: str, n: int, mode: str = REPAIR) -> tuple[int, ...]:
    """Turn a ``[i] > [j] > ...`` response into a complete permutation of 1..n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if mode == STRICT:
        if not _STRICT_RANKING.fullmatch(text):
            raise NoMatch(f"response does not match the ranking grammar: {text[:80]!r}")
        ids = [int(x) for x in _BRACKETED.findall(text)]
        bad = [i for i in ids if not 1 <= i <= n]
        if bad:
            raise OutOfRange(f"identifiers {bad} outside 1..{n}")
        if len(set(ids)) != len(ids):
            raise DuplicateId(f"repeated identifiers in {ids}")
        if len(ids) != n:
            raise Incomplete(f"{len(ids)} of {n} identifiers present")
        return tuple(ids)
    if mode != REPAIR:
        raise ValueError(f"unknown parse mode {mode!r}")

    seen: dict[int, None] = {}
    for raw in _BRACKETED.findall(text):
        i = int(raw)
        if 1 <= i <= n and i not in seen:
            seen[i] = None
    if not seen:
        raise NoIdentifiersFound(f"no valid identifiers in {text[:80]!r}")
    perm = list(seen) + [i for i in range(1, n + 1) if i not in seen]
    return tuple(perm)


_TOKEN_STRIP = "\"'`.,:;!?()[]{}*<>-_"


def parse_preference(text: str, mode: str = REPAIR) -> str:
    """Return ``"A"`` or ``"B"``."""
    stripped = text.strip()
    tokens = [t.strip(_TOKEN_STRIP) for t in stripped.split()]
    found = [t.upper() for t in tokens if t.upper() in ("A", "B")]
    if mode == STRICT:
        if stripped in ("A", "B"):
            return stripped
        if len(set(found)) > 1:
            raise AmbiguousPreference(f"both A and B in {stripped[:80]!r}")
        raise NoPreferenceFound(f"not a single-letter answer: {stripped[:80]!r}")
    if mode != REPAIR:
        raise ValueError(f"unknown parse mode {mode!r}")
    if not found:
        raise NoPreferenceFound(f"no A/B token in {stripped[:80]!r}")
    return found[0]
