"""Simulated respondents with known preferences.

A :class:`RUMAgent` discounts rewards and chooses with Luce/logit noise, so
its data can be fed back through the estimator as a recovery check. A
:class:`LexicographicAgent` ignores reward sizes whenever the two options
arrive at different times, and only trades off amounts when they arrive
together.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np
import pandas as pd
from scipy.special import expit

from .design import Cell, Language, PresentationOrder, RewardOption, plan_orders


class DiscountFamily(str, enum.Enum):
    EXPONENTIAL = "exponential"
    HYPERBOLIC = "hyperbolic"
    QUASI_HYPERBOLIC = "quasi_hyperbolic"


@dataclass(frozen=True)
class DiscountSpec:
    family: DiscountFamily
    delta: float
    beta: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "family", DiscountFamily(self.family))
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        quasi = self.family is DiscountFamily.QUASI_HYPERBOLIC
        if quasi and (self.beta is None or not 0 < self.beta <= 1):
            raise ValueError("quasi-hyperbolic discounting needs beta in (0, 1]")
        if not quasi and self.beta is not None:
            raise ValueError("beta only applies to quasi-hyperbolic discounting")


def present_value(discount: DiscountSpec, r: float, t: float) -> float:
    """Value today of ``r`` delivered ``t`` months from now (``delta`` is yearly)."""
    if r <= 0 or t < 0:
        raise ValueError("need r > 0 and t >= 0")
    years = t / 12.0
    if discount.family is DiscountFamily.EXPONENTIAL:
        return r / (1.0 + discount.delta) ** years
    if discount.family is DiscountFamily.HYPERBOLIC:
        return r / (1.0 + discount.delta * years)
    if t == 0:
        return float(r)
    return discount.beta * r / (1.0 + discount.delta) ** years


def log_present_value(discount: DiscountSpec, r, t):
    r = np.asarray(r, dtype=float)
    years = np.asarray(t, dtype=float) / 12.0
    if discount.family is DiscountFamily.EXPONENTIAL:
        return np.log(r) - years * math.log1p(discount.delta)
    if discount.family is DiscountFamily.HYPERBOLIC:
        return np.log(r) - np.log1p(discount.delta * years)
    shift = np.where(years > 0, math.log(discount.beta), 0.0)
    return np.log(r) + shift - years * math.log1p(discount.delta)


@dataclass(frozen=True)
class RUMAgent:
    discount: DiscountSpec
    mu: float

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("mu must be positive")


@dataclass(frozen=True)
class LexicographicAgent:
    """Cross-period: P(later) = logistic(intercept + slope * d), blind to amounts.
    Same-period: P(larger) = logistic(gamma * (r2 - r1) / 1000)."""

    intercept: float
    slope: float = 0.0
    gamma: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")

    def base_later_share(self, delay: float) -> float:
        return float(expit(self.intercept + self.slope * delay))


Agent = Union[RUMAgent, LexicographicAgent]


def choice_prob_sooner(agent: RUMAgent, sooner: RewardOption, later: RewardOption) -> float:
    """Luce rule EU_s^(1/mu) / (EU_s^(1/mu) + EU_l^(1/mu)), evaluated as a logistic in log space."""
    ln_s = log_present_value(agent.discount, sooner.amount, sooner.delivery_months)
    ln_l = log_present_value(agent.discount, later.amount, later.delivery_months)
    return float(expit((ln_s - ln_l) / agent.mu))


def choice_prob_later(agent: RUMAgent, sooner: RewardOption, later: RewardOption) -> float:
    ln_s = log_present_value(agent.discount, sooner.amount, sooner.delivery_months)
    ln_l = log_present_value(agent.discount, later.amount, later.delivery_months)
    return float(expit((ln_l - ln_s) / agent.mu))


def prob_later(agent: Agent, cell: Cell) -> float:
    if isinstance(agent, RUMAgent):
        return choice_prob_later(agent, cell.sooner, cell.later)
    if cell.sooner.delivery_months == cell.later.delivery_months:
        gap = (cell.later.amount - cell.sooner.amount) / 1000.0
        return float(expit(agent.gamma * gap))
    return agent.base_later_share(cell.later.delivery_months - cell.sooner.delivery_months)


_NOISY_WRAPPERS = (
    "({k})",
    "I would choose option ({k}).",
    "My answer is ({k})",
    "Option ({k}).",
    "After thinking about it, ({k}).",
)


def draw_later(agent: Agent, cell: Cell, rng: np.random.Generator) -> bool:
    return bool(rng.random() < prob_later(agent, cell))


def respond(agent: Agent, cell: Cell, order: PresentationOrder, rng_seed, noisy: bool = False) -> str:
    """Reply string naming the drawn option's slot; deterministic given ``rng_seed``."""
    rng = np.random.default_rng(rng_seed)
    later = draw_later(agent, cell, rng)
    slot = order.slot_of_later() if later else 3 - order.slot_of_later()
    if not noisy:
        return f"({slot})"
    wrapper = _NOISY_WRAPPERS[int(rng.integers(len(_NOISY_WRAPPERS)))]
    return wrapper.format(k=slot)


# -- synthetic chain-of-thought explanations -------------------------------------

THEMES = ("risk", "opportunity", "urgency")

_SENTENCES = {
    "risk": (
        "There is always a risk that the later payment might not arrive as promised.",
        "The future is uncertain and my circumstances could change while I wait.",
        "Waiting longer adds uncertainty about whether the reward will actually be received.",
        "Unexpected events may happen over such a long period, so the delayed option carries risk.",
        "A promise far in the future is less reliable than one that is close.",
        "Uncertainty grows with time, which decreases the value of a distant reward.",
    ),
    "opportunity": (
        "I could invest the money received earlier and potentially earn a better return.",
        "The time value of money matters, since an earlier amount can grow through investment.",
        "The extra amount offered should be compared with alternative investment opportunities.",
        "The opportunity cost of waiting is the return I could earn elsewhere in the meantime.",
        "If the additional amount is worth more than what I could earn by investing, waiting is reasonable.",
        "Money available now could be put to productive use and generate additional value.",
    ),
    "urgency": (
        "I may have immediate needs that require money right now.",
        "Having the reward sooner helps me cover urgent expenses and bills.",
        "Immediate access to funds provides flexibility for unexpected needs today.",
        "Current financial needs can be more pressing than a larger reward later.",
        "If I urgently need the funds, the earlier option is more helpful.",
        "Meeting present needs and obligations is important for my wellbeing.",
    ),
}


@dataclass(frozen=True)
class ExplanationModel:
    """Theme mixture for synthetic explanations as a function of the cell.

    Risk talk grows with delay, urgency grows and investment talk shrinks with
    the interest rate, and strong-FTR languages mention risk less often.
    """

    base: tuple[float, float, float] = (1.0, 1.2, 0.8)
    risk_per_year: float = 0.5
    urgency_per_interest: float = 0.4
    opportunity_per_interest: float = -0.2
    strong_ftr_risk_factor: float = 0.8
    n_sentences: int = 6

    def weights(self, cell: Cell) -> np.ndarray:
        years = cell.delay / 12.0
        interest = cell.interest or 0.0
        w = np.array(self.base, dtype=float)
        w[0] *= 1.0 + self.risk_per_year * years
        w[1] *= max(0.05, 1.0 + self.opportunity_per_interest * interest)
        w[2] *= 1.0 + self.urgency_per_interest * interest
        if cell.language.strong_ftr:
            w[0] *= self.strong_ftr_risk_factor
        return w / w.sum()


def explain(cell: Cell, order: PresentationOrder, rng_seed, model: ExplanationModel | None = None) -> str:
    """Synthetic English step-by-step explanation for one sample."""
    model = model or ExplanationModel()
    rng = np.random.default_rng(rng_seed)
    first, second = (cell.sooner, cell.later) if order.sooner_listed_first else (cell.later, cell.sooner)
    parts = [
        f"Let me compare option (1), {first.amount} tokens in {first.delivery_months} month(s), "
        f"with option (2), {second.amount} tokens in {second.delivery_months} month(s)."
    ]
    themes = rng.choice(len(THEMES), size=model.n_sentences, p=model.weights(cell))
    for theme in themes:
        bank = _SENTENCES[THEMES[theme]]
        parts.append(bank[int(rng.integers(len(bank)))])
    parts.append("Considering these factors, I will make my decision.")
    return " ".join(parts)


# -- populations -------------------------------------------------------------------


def agent_from_dict(spec: Mapping) -> Agent:
    spec = dict(spec)
    kind = spec.pop("kind", "rum")
    if kind == "rum":
        family = spec.pop("family", "exponential")
        discount = DiscountSpec(family, float(spec.pop("delta")), spec.pop("beta", None))
        return RUMAgent(discount, float(spec.pop("mu")))
    if kind == "lexicographic":
        if "later_share" in spec:
            p = float(spec.pop("later_share"))
            spec["intercept"] = math.log(p / (1 - p))
        return LexicographicAgent(float(spec["intercept"]), float(spec.get("slope", 0.0)), float(spec.get("gamma", 1.0)))
    raise ValueError(f"unknown agent kind {kind!r}")


@dataclass
class Population:
    """Per-language respondents: explicit language entries override the FTR-class
    entries, which override ``default``."""

    name: str
    agents: dict[str, Agent]
    languages: dict[str, Agent] = field(default_factory=dict)
    explanation: ExplanationModel = field(default_factory=ExplanationModel)
    noisy: bool = False

    def agent_for(self, language: Language) -> Agent:
        if language.code in self.languages:
            return self.languages[language.code]
        if language.ftr_class in self.agents:
            return self.agents[language.ftr_class]
        if "default" in self.agents:
            return self.agents["default"]
        raise KeyError(f"population {self.name!r} has no agent for {language.code}")

    @classmethod
    def from_dict(cls, data: Mapping) -> "Population":
        return cls(
            name=data.get("name", "population"),
            agents={k: agent_from_dict(v) for k, v in data.get("agents", {}).items()},
            languages={k: agent_from_dict(v) for k, v in data.get("languages", {}).items()},
            explanation=ExplanationModel(**{
                k: tuple(v) if isinstance(v, list) else v for k, v in data.get("explanation", {}).items()
            }),
            noisy=bool(data.get("noisy", False)),
        )


def bundled_populations() -> list[str]:
    folder = resources.files("timepref").joinpath("data", "populations")
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".json"))


def load_population(source: str | Path | Mapping) -> Population:
    """Load from a mapping, a JSON file path, or the name of a bundled population."""
    if isinstance(source, Mapping):
        return Population.from_dict(source)
    path = Path(source)
    if path.is_file():
        return Population.from_dict(json.loads(path.read_text(encoding="utf-8")))
    bundled = resources.files("timepref").joinpath("data", "populations", f"{source}.json")
    if bundled.is_file():
        return Population.from_dict(json.loads(bundled.read_text(encoding="utf-8")))
    raise FileNotFoundError(f"no population file or bundled population named {source!r}")


def simulate_choices(agent: Agent, cells: Sequence[Cell], n_per_cell: int, seed) -> np.ndarray:
    """Vectorized draws: boolean array (cells x n_per_cell), True where the later option was chosen."""
    rng = np.random.default_rng(seed)
    p = np.array([prob_later(agent, c) for c in cells])
    return rng.random((len(cells), n_per_cell)) < p[:, None]


def simulate_frame(population: Population, cells: Sequence[Cell], n_per_cell: int, seed) -> pd.DataFrame:
    """Analysis-shaped rows (one per draw) without going through prompts and logs.

    Each cell draws from its own child seed so adding languages does not
    perturb the draws of existing ones.
    """
    children = np.random.SeedSequence(seed).spawn(len(cells))
    parts = []
    for idx, (cell, child) in enumerate(zip(cells, children)):
        p = prob_later(population.agent_for(cell.language), cell)
        y = np.random.default_rng(child).random(n_per_cell) < p
        parts.append(pd.DataFrame({
            "language": cell.language.code,
            "ftr_strong": int(cell.language.strong_ftr),
            "d": cell.delay,
            "i": cell.interest,
            "t1": cell.sooner.delivery_months,
            "t2": cell.later.delivery_months,
            "r1": cell.sooner.amount,
            "r2": cell.later.amount,
            "order": [int(o.sooner_listed_first) for o in plan_orders(n_per_cell, idx)],
            "y_later": y.astype(int),
            "study": cell.study,
        }))
    return pd.concat(parts, ignore_index=True)
