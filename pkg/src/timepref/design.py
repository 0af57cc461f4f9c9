"""Experiment grids for the intertemporal-choice survey.

Two designs are supported. The cross-period design offers 1000 reward units
one month from now against a larger amount ``d`` months after that, with the
larger amount grown at a yearly interest rate. The same-period design offers
two amounts delivered at the same month, which isolates sensitivity to reward
size from sensitivity to timing.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence, Union

BASE_REWARD = 1000
SOONER_MONTHS = 1

DELAYS = (1, 2, 3, 4, 6, 12, 18, 24, 36)
INTERESTS = (0.05, 0.10, 0.25, 0.50, 0.75, 1.00, 2.00)

SAME_PERIOD_MONTHS = (2, 3, 4, 5, 7, 13, 25)
SAME_PERIOD_REWARDS = (1041, 1082, 1401, 1781, 3174, 5061, 7376)

UNITS = ("tokens", "USD", "DKK")

GRID_COLUMNS = ("language", "ftr_class", "study", "t1", "r1", "t2", "r2", "d", "interest")


@dataclass(frozen=True)
class RewardOption:
    delivery_months: int
    amount: int

    def __post_init__(self):
        if self.amount <= 0:
            raise ValueError(f"reward amount must be positive, got {self.amount}")
        if self.delivery_months < 1:
            raise ValueError(f"delivery must be at least one month out, got {self.delivery_months}")


@dataclass(frozen=True)
class Language:
    code: str
    display_name: str
    ftr_class: str  # "strong" | "weak"

    def __post_init__(self):
        if self.ftr_class not in ("strong", "weak"):
            raise ValueError(f"unknown FTR class {self.ftr_class!r}")

    @property
    def strong_ftr(self) -> bool:
        return self.ftr_class == "strong"


@dataclass(frozen=True)
class CrossPeriodCell:
    language: Language
    delay: int
    interest: float

    study = "cross_period"

    @property
    def sooner(self) -> RewardOption:
        return RewardOption(SOONER_MONTHS, BASE_REWARD)

    @property
    def later(self) -> RewardOption:
        return RewardOption(
            SOONER_MONTHS + self.delay,
            compute_delayed_reward(BASE_REWARD, self.interest, self.delay),
        )

    @property
    def key(self) -> str:
        return f"{self.language.code}|d={self.delay}|i={self.interest:g}"


@dataclass(frozen=True)
class SamePeriodCell:
    """Both options arrive at month ``t``; ``sooner`` is the 1000-unit option
    and ``later`` the larger one, so "later chosen" means "larger chosen"."""

    language: Language
    t: int
    r2: int

    study = "same_period"

    def __post_init__(self):
        if self.r2 <= BASE_REWARD:
            raise ValueError("same-period alternative must exceed the base reward")

    @property
    def sooner(self) -> RewardOption:
        return RewardOption(self.t, BASE_REWARD)

    @property
    def later(self) -> RewardOption:
        return RewardOption(self.t, self.r2)

    @property
    def delay(self) -> int:
        return 0

    @property
    def interest(self):
        return None

    @property
    def key(self) -> str:
        return f"{self.language.code}|t={self.t}|r2={self.r2}"


Cell = Union[CrossPeriodCell, SamePeriodCell]


@dataclass(frozen=True)
class PresentationOrder:
    sooner_listed_first: bool

    def slot_of_later(self) -> int:
        return 2 if self.sooner_listed_first else 1


def compute_delayed_reward(r1: float, interest: float, months: float) -> int:
    """Grow ``r1`` at yearly ``interest`` for ``months`` and truncate to whole units."""
    if r1 <= 0:
        raise ValueError("r1 must be positive")
    if interest < 0 or months < 0:
        raise ValueError("interest and delay must be non-negative")
    value = r1 * (1.0 + interest) ** (months / 12.0)
    # guard against 1099.9999999 style representation error before truncating
    return math.floor(round(value, 9))


def _load_registry(text: str) -> tuple[Language, ...]:
    return tuple(Language(**row) for row in json.loads(text))


@lru_cache(maxsize=1)
def default_languages() -> tuple[Language, ...]:
    text = resources.files("timepref").joinpath("data", "languages.json").read_text(encoding="utf-8")
    return _load_registry(text)


def load_languages(path: str | Path | None = None) -> tuple[Language, ...]:
    if path is None:
        return default_languages()
    return _load_registry(Path(path).read_text(encoding="utf-8"))


def select_languages(selection: Iterable[str] | None, registry: Sequence[Language] | None = None) -> list[Language]:
    """Pick languages by code or display name (case-insensitive); ``None`` or ``all`` means every language."""
    registry = list(registry if registry is not None else default_languages())
    if selection is None:
        return registry
    wanted = [s.strip().lower() for s in selection if s.strip()]
    if wanted == ["all"]:
        return registry
    lookup = {}
    for lang in registry:
        lookup[lang.code.lower()] = lang
        lookup[lang.display_name.lower()] = lang
    unknown = [w for w in wanted if w not in lookup]
    if unknown:
        raise KeyError(f"unknown language(s): {', '.join(unknown)}")
    picked = {lookup[w].code for w in wanted}
    return [lang for lang in registry if lang.code in picked]


def build_cross_period_grid(languages: Sequence[Language]) -> list[CrossPeriodCell]:
    return [
        CrossPeriodCell(lang, d, i)
        for lang in languages
        for d in DELAYS
        for i in INTERESTS
    ]


def build_same_period_grid(languages: Sequence[Language]) -> list[SamePeriodCell]:
    return [
        SamePeriodCell(lang, t, r2)
        for lang in languages
        for t in SAME_PERIOD_MONTHS
        for r2 in SAME_PERIOD_REWARDS
    ]


def plan_orders(n_samples: int, cell_index: int) -> list[PresentationOrder]:
    """Alternate presentation order within a cell.

    Even counts split exactly in half. For odd counts the cell index parity
    decides which order gets the extra sample, so consecutive cells
    compensate each other.
    """
    if n_samples < 0:
        raise ValueError("n_samples must be non-negative")
    return [PresentationOrder((k + cell_index) % 2 == 0) for k in range(n_samples)]


def cell_row(cell: Cell) -> dict:
    return {
        "language": cell.language.code,
        "ftr_class": cell.language.ftr_class,
        "study": cell.study,
        "t1": cell.sooner.delivery_months,
        "r1": cell.sooner.amount,
        "t2": cell.later.delivery_months,
        "r2": cell.later.amount,
        "d": cell.delay,
        "interest": "" if cell.interest is None else f"{cell.interest:g}",
    }


def grid_to_csv(cells: Sequence[Cell]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=GRID_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for cell in cells:
        writer.writerow(cell_row(cell))
    return buf.getvalue()


def render_reward_table(r1: int = BASE_REWARD) -> str:
    """Plain-text matrix of delayed rewards: interest rows by delay columns."""
    header = ["i (%/yr)"] + [str(d) for d in DELAYS]
    rows = [header]
    for i in INTERESTS:
        rows.append([f"{i * 100:g}"] + [str(compute_delayed_reward(r1, i, d)) for d in DELAYS])
    widths = [max(len(r[c]) for r in rows) for c in range(len(header))]
    lines = ["  ".join(cell.rjust(w) for cell, w in zip(row, widths)) for row in rows]
    lines.insert(1, "-" * len(lines[0]))
    title = f"Delayed reward r2 by interest (rows) and delay in months (columns); r1={r1} at t1={SOONER_MONTHS}"
    return title + "\n" + "\n".join(lines) + "\n"
