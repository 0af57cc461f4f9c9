"""Corpora drawn from known topics, for recovery checks."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

# consonant-only words are fixed points of the stemmer and never stopwords
_LETTERS = "bcdfghkmnprtvz"


def planted_vocab(size: int, length: int = 5) -> list[str]:
    words = ("".join(p) for p in itertools.product(_LETTERS, repeat=length))
    return list(itertools.islice(words, size))


@dataclass
class PlantedCorpus:
    vocab: list[str]
    phi: np.ndarray  # K x V
    theta: np.ndarray  # D x K
    tokens: list[list[str]]

    def top_terms(self, n: int = 10) -> list[set[str]]:
        return [{self.vocab[j] for j in np.argsort(-row, kind="stable")[:n]} for row in self.phi]


def planted_phi(K: int, vocab_size: int, separation: float = 0.95, zipf: float = 1.2) -> np.ndarray:
    """Each topic owns a contiguous block of the vocabulary with Zipf-shaped weights;
    ``1 - separation`` of its mass is spread uniformly over all terms."""
    phi = np.full((K, vocab_size), (1.0 - separation) / vocab_size)
    blocks = np.array_split(np.arange(vocab_size), K)
    for k, block in enumerate(blocks):
        w = 1.0 / np.arange(1, len(block) + 1) ** zipf
        phi[k, block] += separation * w / w.sum()
    return phi


def planted_corpus(
    n_docs: int = 500,
    vocab_size: int = 300,
    K: int = 3,
    doc_length: int = 80,
    doc_alpha: float = 0.3,
    separation: float = 0.95,
    seed: int = 0,
    theta: np.ndarray | None = None,
) -> PlantedCorpus:
    """Draw documents from planted topics; pass ``theta`` to fix each document's mixture."""
    rng = np.random.default_rng(seed)
    vocab = planted_vocab(vocab_size)
    phi = planted_phi(K, vocab_size, separation)
    if theta is None:
        theta = rng.dirichlet(np.full(K, doc_alpha), size=n_docs)
    cdf = np.cumsum(phi, axis=1)
    cdf[:, -1] = 1.0
    tokens = []
    for row in theta:
        z = rng.choice(K, size=doc_length, p=row)
        words = np.minimum((rng.random(doc_length)[:, None] > cdf[z]).sum(axis=1), vocab_size - 1)
        tokens.append([vocab[j] for j in words])
    return PlantedCorpus(vocab, phi, np.asarray(theta), tokens)
