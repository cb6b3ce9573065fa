"""Synthetic publication-date injection for listwise and pairwise audits."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .corpus import MissingPassage, Passage, RankedList

DATE_PLACEHOLDER = "{DATE}"
DEFAULT_TEMPLATE = "Published on {DATE}. "
COLON_TEMPLATE = "Published on: {DATE}. "


class PrefixMismatch(ValueError):
    pass


@dataclass(frozen=True)
class DateSchedule:
    newest_year: int = 2025
    month_day: str = "01/01"
    step_years: int = 1
    template: str = DEFAULT_TEMPLATE

    def __post_init__(self):
        if self.step_years < 1:
            raise ValueError("step_years must be positive")
        if self.template.count(DATE_PLACEHOLDER) != 1:
            raise ValueError(f"template must contain exactly one {DATE_PLACEHOLDER} placeholder")
        month, _, day = self.month_day.partition("/")
        if not (month.isdigit() and day.isdigit() and len(month) == 2 and len(day) == 2):
            raise ValueError(f"month_day must look like MM/DD, got {self.month_day!r}")

    def render_date(self, year: int) -> str:
        return f"{year:04d}/{self.month_day}"

    def render_prefix(self, year: int) -> str:
        return self.template.replace(DATE_PLACEHOLDER, self.render_date(year))


@dataclass(frozen=True)
class InjectedPassage:
    passage: Passage
    year: int
    rendered_text: str

    @property
    def id(self) -> str:
        return self.passage.id


def assigned_year(rank: int, n: int, schedule: DateSchedule = DateSchedule()) -> int:
    """Year for the passage at `rank` of an n-long list; rank n gets the newest year."""
    if not 1 <= rank <= n:
        raise ValueError(f"rank {rank} outside 1..{n}")
    year = schedule.newest_year - (n - rank) * schedule.step_years
    if year <= 0:
        raise ValueError(f"schedule yields non-positive year {year} for rank {rank} of {n}")
    return year


def _inject(passage: Passage, year: int, schedule: DateSchedule) -> InjectedPassage:
    return InjectedPassage(passage, year, schedule.render_prefix(year) + passage.text)


def inject_listwise(
    ranked: RankedList,
    passages: Mapping[str, Passage],
    schedule: DateSchedule = DateSchedule(),
) -> list[InjectedPassage]:
    n = len(ranked)
    out = []
    for e in ranked.entries:
        try:
            p = passages[e.passage_id]
        except KeyError:
            raise MissingPassage(f"passage {e.passage_id} not in store") from None
        out.append(_inject(p, assigned_year(e.rank, n, schedule), schedule))
    return out


def inject_pairwise(
    preferred: Passage,
    other: Passage,
    old_year: int = 1980,
    fresh_year: int = 2025,
    schedule: DateSchedule = DateSchedule(),
) -> tuple[InjectedPassage, InjectedPassage]:
    """Date the preferred passage `old_year` and the other one `fresh_year`."""
    if preferred.id == other.id:
        raise ValueError(f"cannot pair passage {preferred.id} with itself")
    return _inject(preferred, old_year, schedule), _inject(other, fresh_year, schedule)


def strip_prefix(injected: InjectedPassage, schedule: DateSchedule = DateSchedule()) -> Passage:
    # prefix length is computed from the schedule, never searched for
    prefix = schedule.render_prefix(injected.year)
    if not injected.rendered_text.startswith(prefix):
        raise PrefixMismatch(f"passage {injected.id}: rendered text does not start with {prefix!r}")
    return Passage(injected.passage.id, injected.rendered_text[len(prefix):])


def year_map(injected: Sequence[InjectedPassage]) -> dict[str, int]:
    return {ip.id: ip.year for ip in injected}
