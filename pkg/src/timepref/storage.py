"""Run directories: manifest, append-only sample log and analysis exports.

A run directory holds ``manifest.json`` (what was planned), ``samples.jsonl``
(one JSON object per elicited sample, appended as they complete) and the
derived ``analysis.csv`` / ``summary.json``. The manifest pins the exact grid
through a hash of its canonical CSV, so a resumed run cannot silently drift
onto a different design.
"""
from __future__ import annotations

import hashlib
import json
import os
import uuid
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import pandas as pd

from .design import Cell, grid_to_csv, plan_orders
from .prompting import ChoiceOutcome

MANIFEST = "manifest.json"
SAMPLES = "samples.jsonl"
ANALYSIS = "analysis.csv"
SUMMARY = "summary.json"

STUDIES = ("standard_gpt35", "standard_gpt4", "cot_gpt4", "same_period", "simulated")

ANALYSIS_COLUMNS = ["language", "ftr_strong", "d", "i", "t1", "t2", "r1", "r2", "order", "y_later", "study"]


class StorageError(Exception):
    pass


class GridMismatch(StorageError):
    pass


def grid_hash(cells: Sequence[Cell]) -> str:
    return hashlib.sha256(grid_to_csv(cells).encode("utf-8")).hexdigest()


@dataclass
class RunManifest:
    study: str
    grid_hash: str
    samples_per_cell: int
    model_id: str
    protocol: str = "standard"
    design: str = "cross_period"
    languages: list[str] = field(default_factory=list)
    unit: str = "tokens"
    seed: int = 0
    respondent: str = "simulated"
    max_attempts: int = 3
    run_id: str = field(default_factory=lambda: uuid.uuid4().hex)
    created_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))

    def __post_init__(self):
        if self.study not in STUDIES:
            raise ValueError(f"unknown study {self.study!r}; expected one of {STUDIES}")
        if self.samples_per_cell <= 0:
            raise ValueError("samples_per_cell must be positive")

    def save(self, run_dir: str | Path) -> Path:
        path = Path(run_dir) / MANIFEST
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, run_dir: str | Path) -> "RunManifest":
        path = Path(run_dir) / MANIFEST
        if not path.is_file():
            raise StorageError(f"no manifest in {run_dir}")
        return cls(**json.loads(path.read_text(encoding="utf-8")))


@dataclass
class SampleRecord:
    run_id: str
    cell_key: str
    cell_index: int
    slot: int
    sooner_first: bool
    raw_reply: str
    outcome: str
    attempt: int = 1
    cot_explanation: str | None = None
    english_translation: str | None = None
    seed: int | None = None
    input_tokens: int = 0
    output_tokens: int = 0
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))

    def __post_init__(self):
        self.outcome = ChoiceOutcome(self.outcome).value

    @property
    def sample_ref(self) -> str:
        return f"{self.cell_key}#{self.slot}"

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, ensure_ascii=False)


def read_samples(path: str | Path) -> list[SampleRecord]:
    """All complete records; an unterminated or undecodable final line is ignored."""
    path = Path(path)
    if not path.exists():
        return []
    records, _ = _read_with_offset(path)
    return records


def _read_with_offset(path: Path) -> tuple[list[SampleRecord], int]:
    data = path.read_bytes()
    records = []
    offset = 0
    lines = data.split(b"\n")
    for n, line in enumerate(lines):
        last = n == len(lines) - 1
        if last:
            # text after the final newline is a torn write (or nothing)
            break
        try:
            records.append(SampleRecord(**json.loads(line)))
        except (ValueError, TypeError) as exc:
            if n == len(lines) - 2 and not lines[-1]:
                break  # garbled but newline-terminated final line: still a torn tail
            raise StorageError(f"{path}: corrupt record on line {n + 1}: {exc}") from exc
        offset += len(line) + 1
    return records, offset


class SampleLog:
    """Single-writer append-only JSON Lines log bound to one run."""

    def __init__(self, run_dir: str | Path, run_id: str, sync_every: int = 500):
        self.path = Path(run_dir) / SAMPLES
        self.run_id = run_id
        self.sync_every = sync_every
        self._pending = 0
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if self.path.exists():
            records, offset = _read_with_offset(self.path)
            if offset != self.path.stat().st_size:
                with open(self.path, "r+b") as fh:
                    fh.truncate(offset)
            self.records = records
        else:
            self.records = []
        self._fh = open(self.path, "a", encoding="utf-8")

    def append(self, record: SampleRecord) -> None:
        if record.run_id != self.run_id:
            raise StorageError(f"record belongs to run {record.run_id}, log is for {self.run_id}")
        self._fh.write(record.to_json() + "\n")
        self._fh.flush()
        self.records.append(record)
        self._pending += 1
        if self._pending >= self.sync_every:
            self.sync()

    def sync(self) -> None:
        self._fh.flush()
        os.fsync(self._fh.fileno())
        self._pending = 0

    def close(self) -> None:
        if not self._fh.closed:
            self.sync()
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass(frozen=True)
class WorkItem:
    cell_index: int
    cell_key: str
    slot: int
    sooner_first: bool
    attempt: int = 1


def planned_slots(cells: Sequence[Cell], samples_per_cell: int) -> Iterable[WorkItem]:
    for idx, cell in enumerate(cells):
        for slot, order in enumerate(plan_orders(samples_per_cell, idx)):
            yield WorkItem(idx, cell.key, slot, order.sooner_listed_first)


def remaining_work(manifest: RunManifest, records: Sequence[SampleRecord], cells: Sequence[Cell]) -> list[WorkItem]:
    """Planned slots not yet settled, in grid order.

    A slot is settled once it has a non-refusal record, or once it has been
    refused ``manifest.max_attempts`` times.
    """
    if grid_hash(cells) != manifest.grid_hash:
        raise GridMismatch("grid does not match the manifest; refusing to resume")
    answered = set()
    refusals: Counter = Counter()
    for rec in records:
        key = (rec.cell_key, rec.slot)
        if rec.outcome == ChoiceOutcome.REFUSAL.value:
            refusals[key] += 1
        else:
            answered.add(key)
    todo = []
    for item in planned_slots(cells, manifest.samples_per_cell):
        key = (item.cell_key, item.slot)
        if key in answered or refusals[key] >= manifest.max_attempts:
            continue
        todo.append(WorkItem(item.cell_index, item.cell_key, item.slot, item.sooner_first, refusals[key] + 1))
    return todo


def _cell_columns(cell: Cell) -> dict:
    return {
        "language": cell.language.code,
        "ftr_strong": int(cell.language.strong_ftr),
        "d": cell.delay,
        "i": cell.interest,
        "t1": cell.sooner.delivery_months,
        "t2": cell.later.delivery_months,
        "r1": cell.sooner.amount,
        "r2": cell.later.amount,
        "study": cell.study,
    }


def _ordered(records: Sequence[SampleRecord], cells: Sequence[Cell]):
    index = {c.key: i for i, c in enumerate(cells)}
    unknown = {r.cell_key for r in records} - set(index)
    if unknown:
        raise StorageError(f"log contains cells outside the grid: {sorted(unknown)[:3]}")
    return sorted(records, key=lambda r: (index[r.cell_key], r.slot, r.attempt)), index


def export_analysis(records: Sequence[SampleRecord], cells: Sequence[Cell]) -> tuple[pd.DataFrame, dict]:
    """One row per parsed choice, ordered by grid position and slot, plus a count summary."""
    ordered, index = _ordered(records, cells)
    counts = Counter(r.outcome for r in ordered)
    rows = []
    for rec in ordered:
        if rec.outcome not in (ChoiceOutcome.SOONER.value, ChoiceOutcome.LATER.value):
            continue
        row = _cell_columns(cells[index[rec.cell_key]])
        row["order"] = int(rec.sooner_first)
        row["y_later"] = int(rec.outcome == ChoiceOutcome.LATER.value)
        rows.append(row)
    frame = pd.DataFrame(rows, columns=ANALYSIS_COLUMNS)
    if not frame.empty:
        frame = frame.astype({"ftr_strong": int, "d": int, "t1": int, "t2": int, "r1": int, "r2": int, "order": int, "y_later": int})
    summary = {
        "records": len(ordered),
        "rows": len(frame),
        "refusals": counts.get(ChoiceOutcome.REFUSAL.value, 0),
        "unparseable": counts.get(ChoiceOutcome.UNPARSEABLE.value, 0),
        "later": counts.get(ChoiceOutcome.LATER.value, 0),
        "sooner": counts.get(ChoiceOutcome.SOONER.value, 0),
    }
    return frame, summary


def export_documents(records: Sequence[SampleRecord], cells: Sequence[Cell]) -> pd.DataFrame:
    """English explanation text per chain-of-thought sample, joined to its cell."""
    ordered, index = _ordered(records, cells)
    rows = []
    for rec in ordered:
        text = rec.english_translation or rec.cot_explanation
        if not text or rec.outcome == ChoiceOutcome.REFUSAL.value:
            continue
        row = {"sample_ref": rec.sample_ref}
        row.update(_cell_columns(cells[index[rec.cell_key]]))
        row["text"] = text
        rows.append(row)
    return pd.DataFrame(rows, columns=["sample_ref"] + list(ANALYSIS_COLUMNS[:8]) + ["study", "text"])


def write_exports(run_dir: str | Path, records: Sequence[SampleRecord], cells: Sequence[Cell]) -> dict:
    frame, summary = export_analysis(records, cells)
    run_dir = Path(run_dir)
    frame.to_csv(run_dir / ANALYSIS, index=False, lineterminator="\n")
    (run_dir / SUMMARY).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return summary


def per_cell_counts(records: Sequence[SampleRecord]) -> dict[str, Counter]:
    out: dict[str, Counter] = defaultdict(Counter)
    for rec in records:
        if rec.outcome != ChoiceOutcome.REFUSAL.value:
            out[rec.cell_key][rec.sooner_first] += 1
    return out
