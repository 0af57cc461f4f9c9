"""Execute a study plan against a respondent and log every sample.

A respondent is either a simulated population or a live chat model behind
:class:`~timepref.client.ChatClient`. Both go through the same prompt
construction and reply parsing. Each sample's randomness comes from a seed
derived from (run seed, cell index, slot, attempt), so the outcome of a
slot does not depend on scheduling, on which other slots ran before it, or
on whether the run was interrupted and resumed.
"""
from __future__ import annotations

import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .agents import Population, explain, respond
from .client import BudgetExceeded, ChatClient, CompletionRequest
from .design import (
    Cell,
    Language,
    PresentationOrder,
    build_cross_period_grid,
    build_same_period_grid,
    select_languages,
)
from .prompting import (
    ChatMessage,
    ProtocolVariant,
    build_conversation,
    build_extraction_followup,
    load_protocol_text,
    load_template,
    parse_choice,
)
from .storage import (
    RunManifest,
    SampleLog,
    SampleRecord,
    StorageError,
    WorkItem,
    export_documents,
    grid_hash,
    remaining_work,
    write_exports,
)

log = logging.getLogger(__name__)

DOCUMENTS = "documents.csv"
ENGLISH = Language("en", "English", "strong")


class RunError(Exception):
    pass


class ConfigMismatch(RunError):
    pass


def sample_seed(run_seed: int, item: WorkItem) -> int:
    return int(np.random.SeedSequence([run_seed, item.cell_index, item.slot, item.attempt]).generate_state(1)[0])


def build_cells(design: str, languages: Sequence[Language]) -> list[Cell]:
    if design == "same_period":
        return build_same_period_grid(languages)
    if design == "cross_period":
        return build_cross_period_grid(languages)
    raise ValueError(f"unknown design {design!r}")


def manifest_cells(manifest: RunManifest) -> list[Cell]:
    """Rebuild the grid a manifest was planned on and check it against the stored hash."""
    cells = build_cells(manifest.design, select_languages(manifest.languages))
    if grid_hash(cells) != manifest.grid_hash:
        raise StorageError("the grid rebuilt from the manifest does not match its hash")
    return cells


@dataclass
class Reply:
    text: str
    input_tokens: int = 0
    output_tokens: int = 0


class SimulatedRespondent:
    """Replies drawn from a population's agents; explanations are written in English."""

    def __init__(self, population: Population):
        self.population = population

    def choose(self, messages, cell: Cell, order: PresentationOrder, seed: int) -> Reply:
        agent = self.population.agent_for(cell.language)
        return Reply(respond(agent, cell, order, seed, noisy=self.population.noisy))

    def explain(self, messages, cell: Cell, order: PresentationOrder, seed: int) -> Reply:
        return Reply(explain(cell, order, [seed, 1], self.population.explanation))

    def translate(self, text: str, language: Language) -> Reply | None:
        return None


class LiveRespondent:
    def __init__(self, client: ChatClient, model_id: str, temperature: float = 1.0):
        self.client = client
        self.model_id = model_id
        self.temperature = temperature

    def _ask(self, messages) -> Reply:
        r = self.client.complete(CompletionRequest(self.model_id, tuple(messages), self.temperature))
        return Reply(r.content, r.input_tokens, r.output_tokens)

    def choose(self, messages, cell, order, seed) -> Reply:
        return self._ask(messages)

    def explain(self, messages, cell, order, seed) -> Reply:
        return self._ask(messages)

    def translate(self, text: str, language: Language) -> Reply | None:
        if language.code == "en" or not text:
            return None
        r = self.client.translate_response(text, ENGLISH, self.model_id, language.display_name)
        return Reply(r.content, r.input_tokens, r.output_tokens)


@dataclass
class RunPlan:
    manifest: RunManifest
    cells: list[Cell]
    template_dir: str | None = None
    _templates: dict = field(default_factory=dict, repr=False)

    def prompt_assets(self, language: Language):
        if language.code not in self._templates:
            study = "same_period" if self.manifest.design == "same_period" else "cross_period"
            self._templates[language.code] = (
                load_template(language, study, self.template_dir),
                load_protocol_text(language, self.template_dir),
            )
        return self._templates[language.code]


def elicit(plan: RunPlan, respondent, item: WorkItem) -> SampleRecord:
    """One independent conversation for one planned slot."""
    m = plan.manifest
    cell = plan.cells[item.cell_index]
    order = PresentationOrder(item.sooner_first)
    seed = sample_seed(m.seed, item)
    template, texts = plan.prompt_assets(cell.language)
    messages = build_conversation(m.protocol, cell, order, template, m.unit, texts)
    tokens_in = tokens_out = 0
    explanation = translation = None
    if ProtocolVariant(m.protocol) is ProtocolVariant.CHAIN_OF_THOUGHT:
        first = respondent.explain(messages, cell, order, seed)
        explanation = first.text
        tokens_in, tokens_out = first.input_tokens, first.output_tokens
        messages = messages + [ChatMessage("assistant", explanation), build_extraction_followup(texts)]
    reply = respondent.choose(messages, cell, order, seed)
    tokens_in += reply.input_tokens
    tokens_out += reply.output_tokens
    outcome = parse_choice(reply.text, order)
    if explanation is not None and outcome.is_choice:
        tr = respondent.translate(explanation, cell.language)
        if tr is not None:
            translation = tr.text
            tokens_in += tr.input_tokens
            tokens_out += tr.output_tokens
    return SampleRecord(
        m.run_id, cell.key, item.cell_index, item.slot, item.sooner_first, reply.text, outcome.value,
        attempt=item.attempt, cot_explanation=explanation, english_translation=translation, seed=seed,
        input_tokens=tokens_in, output_tokens=tokens_out,
    )


@dataclass
class RunResult:
    planned: int
    appended: int
    complete: bool
    stopped: str = ""  # "", "max_samples" or "budget"
    summary: dict = field(default_factory=dict)
    tokens: tuple[int, int] = (0, 0)


def _progress(done: int, total: int, tokens_in: int, tokens_out: int, stream) -> None:
    pct = 100.0 * done / total if total else 100.0
    print(f"[run] {done}/{total} slots settled ({pct:.0f}%), usage tokens in={tokens_in} out={tokens_out}",
          file=stream, flush=True)


def execute(
    run_dir: str | Path,
    plan: RunPlan,
    respondent,
    workers: int = 1,
    max_samples: int | None = None,
    progress_stream=sys.stderr,
    chunk: int = 256,
) -> RunResult:
    """Run every unsettled slot, retrying refused ones up to the manifest's attempt cap.

    Records are appended in plan order whatever the worker count. The
    analysis exports are rewritten at the end, also after an early stop.
    """
    run_dir = Path(run_dir)
    m = plan.manifest
    planned = len(plan.cells) * m.samples_per_cell
    appended = 0
    stopped = ""
    tokens = [0, 0]
    log_ = SampleLog(run_dir, m.run_id)
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    mapper: Callable = pool.map if pool else map
    try:
        while not stopped:
            todo = remaining_work(m, log_.records, plan.cells)
            if not todo:
                break
            settled = planned - len(todo)
            step = max(1, planned // 10)
            next_report = (settled // step + 1) * step
            for start in range(0, len(todo), chunk):
                batch = todo[start:start + chunk]
                if max_samples is not None:
                    batch = batch[: max(0, max_samples - appended)]
                    if not batch:
                        stopped = "max_samples"
                        break
                try:
                    for rec in mapper(lambda it: elicit(plan, respondent, it), batch):
                        log_.append(rec)
                        appended += 1
                        tokens[0] += rec.input_tokens
                        tokens[1] += rec.output_tokens
                        settled += 1
                except BudgetExceeded as exc:
                    log.warning("%s", exc)
                    stopped = "budget"
                    break
                if settled >= next_report:
                    _progress(settled, planned, tokens[0], tokens[1], progress_stream)
                    next_report = (settled // step + 1) * step
    finally:
        if pool:
            pool.shutdown(wait=True, cancel_futures=True)
        log_.close()
    records = log_.records
    summary = write_exports(run_dir, records, plan.cells)
    if m.protocol == ProtocolVariant.CHAIN_OF_THOUGHT.value:
        export_documents(records, plan.cells).to_csv(run_dir / DOCUMENTS, index=False, lineterminator="\n")
    complete = not remaining_work(m, records, plan.cells)
    return RunResult(planned, appended, complete, stopped, summary, tuple(tokens))
