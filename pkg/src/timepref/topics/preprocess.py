"""Text to bag-of-words: tokenize, filter, stem."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from .porter import porter_stem

# runs of letters; digits, underscores and punctuation all split tokens
_TOKEN = re.compile(r"[^\W\d_]+")
MIN_LENGTH = 3


def _read_word_list(text: str) -> frozenset[str]:
    words = []
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            words.extend(line.lower().split())
    return frozenset(words)


@lru_cache(maxsize=None)
def default_stopwords() -> frozenset[str]:
    return _read_word_list(resources.files("timepref").joinpath("data", "stopwords_en.txt").read_text(encoding="utf-8"))


@lru_cache(maxsize=None)
def default_context_stopwords() -> frozenset[str]:
    return _read_word_list(resources.files("timepref").joinpath("data", "context_stopwords.txt").read_text(encoding="utf-8"))


def load_word_list(path: str | Path) -> frozenset[str]:
    return _read_word_list(Path(path).read_text(encoding="utf-8"))


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def preprocess(text: str, stopwords: Iterable[str] | None = None, context_stopwords: Iterable[str] | None = None) -> list[str]:
    """Lowercase, split on non-letters, drop stopwords and short words, then stem.

    Stems that come out shorter than three letters or equal to a stopword are
    dropped as well, so every vocabulary term satisfies the same filters.
    """
    stop = default_stopwords() if stopwords is None else frozenset(stopwords)
    context = default_context_stopwords() if context_stopwords is None else frozenset(context_stopwords)
    blocked = stop | context
    out = []
    for tok in tokenize(text):
        if len(tok) < MIN_LENGTH or tok in blocked:
            continue
        stem = porter_stem(tok)
        if len(stem) >= MIN_LENGTH and stem not in blocked:
            out.append(stem)
    return out


@dataclass
class Corpus:
    """Documents as term-id sequences over a sorted vocabulary.

    ``excluded`` lists the references of documents that were empty after
    preprocessing; they are not part of ``docs``.
    """

    vocab: list[str]
    docs: list[np.ndarray]
    refs: list[str]
    excluded: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.docs) != len(self.refs):
            raise ValueError("one reference per document")
        self.index = {t: i for i, t in enumerate(self.vocab)}

    @property
    def n_docs(self) -> int:
        return len(self.docs)

    @property
    def n_tokens(self) -> int:
        return int(sum(len(d) for d in self.docs))

    def doc_term_counts(self) -> sparse.csr_matrix:
        rows = np.repeat(np.arange(len(self.docs)), [len(d) for d in self.docs])
        cols = np.concatenate(self.docs) if self.docs else np.zeros(0, dtype=np.int64)
        data = np.ones(len(cols), dtype=np.int64)
        return sparse.csr_matrix((data, (rows, cols)), shape=(len(self.docs), len(self.vocab)))

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        """Term ids of ``tokens``; out-of-vocabulary tokens are skipped."""
        return np.array([self.index[t] for t in tokens if t in self.index], dtype=np.int64)

    @classmethod
    def from_tokens(cls, token_lists: Sequence[Sequence[str]], refs: Sequence[str] | None = None) -> "Corpus":
        refs = list(refs) if refs is not None else [str(i) for i in range(len(token_lists))]
        keep = [(r, toks) for r, toks in zip(refs, token_lists) if len(toks)]
        excluded = [r for r, toks in zip(refs, token_lists) if not len(toks)]
        vocab = sorted({t for _, toks in keep for t in toks})
        index = {t: i for i, t in enumerate(vocab)}
        docs = [np.array([index[t] for t in toks], dtype=np.int64) for _, toks in keep]
        return cls(vocab, docs, [r for r, _ in keep], excluded)

    @classmethod
    def from_texts(cls, texts: Sequence[str], refs: Sequence[str] | None = None, stopwords=None, context_stopwords=None) -> "Corpus":
        return cls.from_tokens([preprocess(t, stopwords, context_stopwords) for t in texts], refs)
