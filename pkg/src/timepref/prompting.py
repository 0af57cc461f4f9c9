"""Survey conversations and reply parsing.

Every sample is an independent conversation that opens with a fixed user
instruction and a fixed, injected assistant acknowledgment, followed by the
question for one experiment cell. The chain-of-thought variant adds a second
user turn asking the model to state its final option after it has explained
itself.
"""
from __future__ import annotations

import enum
import json
import logging
import re
import string
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Sequence

from .design import Cell, Language, PresentationOrder

log = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")
PLACEHOLDERS = frozenset({"amount_1", "time_1", "amount_2", "time_2", "unit"})

UNIT_WORDS = {"tokens": "tokens", "USD": "US dollars", "DKK": "Danish kroner"}

_STANDARD_PROMPT = (
    "Assuming you are a survey participant and you are paid in {unit}, please wait for my prompt "
    "and tell me whether you prefer option (1) or option (2). There is no need to explain your "
    "choice, simply answer with (1) or (2)."
)
_STANDARD_ACK = "Understood, I assume I am a survey participant and I will choose either option (1) or (2)."
_COT_PROMPT = (
    "Assuming you are a survey participant and you are paid in {unit}, please wait for my prompt "
    "and tell me whether you prefer option (1) or option (2). Think step by step, and explain your decision"
)
_COT_ACK = (
    "Understood, I assume I am a survey participant and I will explain my decision and then "
    "choose either option (1) or (2)."
)
_FOLLOWUP = "Based on your answer above, which option do you choose? Reply with only (1) or (2)."

ENGLISH_PROTOCOL = {
    "standard_prompt": _STANDARD_PROMPT,
    "standard_ack": _STANDARD_ACK,
    "cot_prompt": _COT_PROMPT,
    "cot_ack": _COT_ACK,
    "followup": _FOLLOWUP,
}


class TemplateError(ValueError):
    pass


class ProtocolVariant(str, enum.Enum):
    STANDARD = "standard"
    CHAIN_OF_THOUGHT = "cot"


class ChoiceOutcome(str, enum.Enum):
    SOONER = "sooner"
    LATER = "later"
    REFUSAL = "refusal"
    UNPARSEABLE = "unparseable"

    @property
    def is_choice(self) -> bool:
        return self in (ChoiceOutcome.SOONER, ChoiceOutcome.LATER)


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if not self.content:
            raise ValueError("message content must be non-empty")

    def to_dict(self) -> dict:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class QuestionTemplate:
    language: Language
    study: str
    body: str
    fallback: bool = False

    def __post_init__(self):
        check_template(self.body)


def check_template(body: str) -> None:
    names = [field for _, field, _, _ in string.Formatter().parse(body) if field is not None]
    missing = PLACEHOLDERS - set(names)
    extra = set(names) - PLACEHOLDERS
    if missing:
        raise TemplateError(f"template is missing placeholder(s): {sorted(missing)}")
    if extra:
        raise TemplateError(f"template has unknown placeholder(s): {sorted(extra)}")
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise TemplateError(f"placeholder(s) used more than once: {dupes}")


def _asset(*parts: str):
    return resources.files("timepref").joinpath("data", "templates", *parts)


def load_template(language: Language, study: str, template_dir: str | Path | None = None) -> QuestionTemplate:
    """Question template for ``language``; falls back to the English master when no asset exists."""
    candidates = []
    if template_dir is not None:
        candidates.append(Path(template_dir) / language.code / f"{study}.txt")
    candidates.append(_asset(language.code, f"{study}.txt"))
    for path in candidates:
        if path.is_file():
            return QuestionTemplate(language, study, path.read_text(encoding="utf-8"))
    if language.code != "en":
        log.debug("no %s template for %s, using English master", study, language.code)
    body = _asset("en", f"{study}.txt").read_text(encoding="utf-8")
    return QuestionTemplate(language, study, body, fallback=language.code != "en")


def load_protocol_text(language: Language | None = None, template_dir: str | Path | None = None) -> dict:
    texts = dict(ENGLISH_PROTOCOL)
    if language is None or language.code == "en":
        return texts
    candidates = []
    if template_dir is not None:
        candidates.append(Path(template_dir) / language.code / "protocol.json")
    candidates.append(_asset(language.code, "protocol.json"))
    for path in candidates:
        if path.is_file():
            texts.update(json.loads(path.read_text(encoding="utf-8")))
            break
    return texts


def build_preamble(variant: ProtocolVariant | str, unit: str = "tokens", texts: dict | None = None) -> list[ChatMessage]:
    variant = ProtocolVariant(variant)
    texts = texts or ENGLISH_PROTOCOL
    key = "standard" if variant is ProtocolVariant.STANDARD else "cot"
    prompt = texts[f"{key}_prompt"].replace("{unit}", UNIT_WORDS.get(unit, unit))
    return [ChatMessage("user", prompt), ChatMessage("assistant", texts[f"{key}_ack"])]


def render_question(cell: Cell, order: PresentationOrder, template: QuestionTemplate, unit: str = "tokens") -> ChatMessage:
    if template.language.code != cell.language.code:
        raise TemplateError(
            f"template language {template.language.code!r} does not match cell language {cell.language.code!r}"
        )
    first, second = (cell.sooner, cell.later) if order.sooner_listed_first else (cell.later, cell.sooner)
    try:
        body = template.body.format(
            amount_1=first.amount,
            time_1=first.delivery_months,
            amount_2=second.amount,
            time_2=second.delivery_months,
            unit=UNIT_WORDS.get(unit, unit),
        )
    except (KeyError, IndexError) as exc:
        raise TemplateError(f"cannot render template: {exc}") from exc
    return ChatMessage("user", body.strip())


def build_extraction_followup(texts: dict | None = None) -> ChatMessage:
    return ChatMessage("user", (texts or ENGLISH_PROTOCOL)["followup"])


def build_conversation(
    variant: ProtocolVariant | str,
    cell: Cell,
    order: PresentationOrder,
    template: QuestionTemplate,
    unit: str = "tokens",
    texts: dict | None = None,
) -> list[ChatMessage]:
    return build_preamble(variant, unit, texts) + [render_question(cell, order, template, unit)]


# -- reply parsing -----------------------------------------------------------

_FULLWIDTH = str.maketrans("（）１２", "()12")
_PAREN = re.compile(r"\(\s*([12])\s*\)")
_LABELED = re.compile(r"\b(?:option|choice|answer|alternative)\s*(?:number|no\.?)?\s*[:#]?\s*([12])(?!\d)", re.I)
_LEADING = re.compile(r"^\W*([12])(?!\d|[.,]\d)")
_TRAILING = re.compile(r"(?<!\d)(?<!\d[.,])([12])\W*$")


@lru_cache(maxsize=1)
def default_refusal_phrases() -> tuple[str, ...]:
    text = resources.files("timepref").joinpath("data", "refusals.txt").read_text(encoding="utf-8")
    return load_refusal_phrases_text(text)


def load_refusal_phrases_text(text: str) -> tuple[str, ...]:
    lines = (line.strip().lower() for line in text.splitlines())
    return tuple(line for line in lines if line and not line.startswith("#"))


def extract_option_index(raw: str) -> int | None:
    """Option number named in ``raw``, or ``None`` if absent or ambiguous.

    Parenthesized indices win over labeled phrases ("option 2"), which win
    over a bare digit at the start or end of the reply. The first level that
    finds anything decides; if it finds both indices the reply is ambiguous.
    """
    text = raw.translate(_FULLWIDTH).strip()
    levels = (
        [m.group(1) for m in _PAREN.finditer(text)],
        [m.group(1) for m in _LABELED.finditer(text)],
        [m.group(1) for m in (_LEADING.search(text), _TRAILING.search(text)) if m],
    )
    for found in levels:
        distinct = set(found)
        if len(distinct) == 1:
            return int(distinct.pop())
        if len(distinct) > 1:
            return None
    return None


def is_refusal(raw: str, phrases: Sequence[str] | None = None) -> bool:
    lowered = raw.lower().replace("’", "'")
    return any(p in lowered for p in (phrases if phrases is not None else default_refusal_phrases()))


def parse_choice(raw: str, order: PresentationOrder, refusal_phrases: Sequence[str] | None = None) -> ChoiceOutcome:
    index = extract_option_index(raw or "")
    if index is not None:
        later = index == order.slot_of_later()
        return ChoiceOutcome.LATER if later else ChoiceOutcome.SOONER
    if raw and is_refusal(raw, refusal_phrases):
        return ChoiceOutcome.REFUSAL
    return ChoiceOutcome.UNPARSEABLE
