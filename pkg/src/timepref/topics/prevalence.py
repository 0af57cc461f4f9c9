"""Topic labels, merged and normalized prevalences, and per-condition aggregates."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
import yaml

from ..econometrics import CELL_KEY, clustered_group_means

LABELS = ("risk", "opportunity", "urgency")
LABEL_NAMES = {"risk": "Risk & Uncertainty", "opportunity": "Opportunity cost", "urgency": "Urgency"}

# stems that identify each theme when labels are assigned automatically
SEED_STEMS = {
    "risk": ("risk", "uncertainti", "uncertain", "unexpect", "reliabl", "promis"),
    "opportunity": ("invest", "opportun", "return", "earn", "growth", "product"),
    "urgency": ("urgent", "urgentli", "immedi", "need", "expens", "bill", "press"),
}


@dataclass(frozen=True)
class TopicLabeling:
    """``merge_map[k]`` is the label of raw topic ``k`` (0-based)."""

    merge_map: tuple[str, ...]
    labels: tuple[str, ...] = LABELS

    def __post_init__(self):
        object.__setattr__(self, "merge_map", tuple(self.merge_map))
        unknown = set(self.merge_map) - set(self.labels)
        if unknown:
            raise ValueError(f"merge map uses unknown labels {sorted(unknown)}")

    @property
    def K(self) -> int:
        return len(self.merge_map)

    @classmethod
    def default(cls) -> "TopicLabeling":
        """Four raw topics: 1 is risk, 2 and 4 are opportunity cost, 3 is urgency."""
        return cls(("risk", "opportunity", "urgency", "opportunity"))

    @classmethod
    def from_mapping(cls, mapping: Mapping, labels: Sequence[str] = LABELS) -> "TopicLabeling":
        """From ``{raw topic (1-based): label}``; every raw topic must be listed."""
        keys = sorted(int(k) for k in mapping)
        if keys != list(range(1, len(keys) + 1)):
            raise ValueError("merge map must cover raw topics 1..K exactly")
        by_int = {int(k): v for k, v in mapping.items()}
        return cls(tuple(by_int[k] for k in keys), tuple(labels))

    @classmethod
    def load(cls, path: str | Path) -> "TopicLabeling":
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        return cls.from_mapping(data["merge"], data.get("labels", LABELS))

    def to_dict(self) -> dict:
        return {"merge": {str(k + 1): lab for k, lab in enumerate(self.merge_map)}, "labels": list(self.labels)}

    def merge(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape[1] != self.K:
            raise ValueError(f"theta has {theta.shape[1]} topics, labeling expects {self.K}")
        out = np.zeros((theta.shape[0], len(self.labels)))
        for k, lab in enumerate(self.merge_map):
            out[:, self.labels.index(lab)] += theta[:, k]
        return out


def auto_label(phi: np.ndarray, vocab: Sequence[str], seeds: Mapping[str, Sequence[str]] = SEED_STEMS) -> TopicLabeling:
    """Label each raw topic by which seed-stem set carries the most of its probability mass."""
    index = {t: i for i, t in enumerate(vocab)}
    labels = tuple(seeds)
    scores = np.zeros((phi.shape[0], len(labels)))
    for j, lab in enumerate(labels):
        ids = [index[s] for s in seeds[lab] if s in index]
        if ids:
            scores[:, j] = phi[:, ids].sum(axis=1)
    return TopicLabeling(tuple(labels[j] for j in scores.argmax(axis=1)), labels)


@dataclass
class PrevalenceResult:
    labels: tuple[str, ...]
    frame: pd.DataFrame  # conditions + raw merged prevalence + normalized columns
    by_interest: pd.DataFrame
    by_delay: pd.DataFrame
    by_language: pd.DataFrame

    def regression_frame(self) -> pd.DataFrame:
        """Conditions plus one normalized-prevalence column per label, the input of the topic regression."""
        cols = [c for c in self.frame.columns if not c.startswith("raw_")]
        return self.frame[cols]


def normalize_prevalence(merged: np.ndarray) -> np.ndarray:
    return merged / merged.mean(axis=0, keepdims=True)


def _aggregate(frame: pd.DataFrame, labels, by: str, clusters) -> pd.DataFrame:
    parts = []
    for lab in labels:
        g = clustered_group_means(frame[f"raw_{lab}"].to_numpy(), frame[by].to_numpy(), clusters)
        g.insert(0, "topic", lab)
        parts.append(g)
    return pd.concat(parts, ignore_index=True)


def prevalence_analytics(theta: np.ndarray, labeling: TopicLabeling, conditions: pd.DataFrame) -> PrevalenceResult:
    """Merge raw topics, normalize by corpus means, and aggregate by interest, delay and language.

    ``conditions`` holds one row per document with at least language,
    ftr_strong, d, i, t1, t2 and r2. Intervals are 95% and clustered at the
    experimental cell.
    """
    if len(theta) != len(conditions):
        raise ValueError("one row of conditions per document")
    merged = labeling.merge(theta)
    norm = normalize_prevalence(merged)
    frame = conditions.reset_index(drop=True).copy()
    for j, lab in enumerate(labeling.labels):
        frame[f"raw_{lab}"] = merged[:, j]
        frame[lab] = norm[:, j]
    clusters = frame[CELL_KEY]
    by_lang = _aggregate(frame, labeling.labels, "language", clusters)
    ftr = frame.drop_duplicates("language").set_index("language").ftr_strong
    by_lang["ftr_class"] = by_lang.group.map(lambda g: "strong" if ftr[g] else "weak")
    order = {code: j for j, code in enumerate(frame.drop_duplicates("language").language)}
    by_lang = by_lang.sort_values(
        ["topic", "ftr_class", "group"],
        key=lambda s: s.map({lab: j for j, lab in enumerate(labeling.labels)}) if s.name == "topic"
        else s.map({"strong": 0, "weak": 1}) if s.name == "ftr_class" else s.map(order),
    ).reset_index(drop=True)
    return PrevalenceResult(
        tuple(labeling.labels),
        frame,
        _aggregate(frame, labeling.labels, "i", clusters),
        _aggregate(frame, labeling.labels, "d", clusters),
        by_lang,
    )


def save_labeling(labeling: TopicLabeling, path: str | Path) -> None:
    Path(path).write_text(json.dumps(labeling.to_dict(), indent=2) + "\n", encoding="utf-8")
