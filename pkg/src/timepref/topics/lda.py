"""Latent Dirichlet allocation by collapsed Gibbs sampling.

The sweep kernel is compiled with numba. Its uniforms are drawn up front from
a numpy Generator for every sweep, so a fit is reproducible from its seed
regardless of how numba schedules anything.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit
from scipy.special import gammaln

from .preprocess import Corpus

log = logging.getLogger(__name__)


class LDAError(Exception):
    pass


class CountMismatch(LDAError):
    pass


@njit(cache=True)
def _gibbs_sweep(w, d, z, ndk, nkw, nk, alpha, beta, vbeta, u):
    K = nk.shape[0]
    cum = np.empty(K)
    for n in range(w.shape[0]):
        wi = w[n]
        di = d[n]
        k = z[n]
        ndk[di, k] -= 1
        nkw[k, wi] -= 1
        nk[k] -= 1
        total = 0.0
        for t in range(K):
            total += (ndk[di, t] + alpha) * (nkw[t, wi] + beta) / (nk[t] + vbeta)
            cum[t] = total
        r = u[n] * total
        k = 0
        while k < K - 1 and cum[k] <= r:
            k += 1
        z[n] = k
        ndk[di, k] += 1
        nkw[k, wi] += 1
        nk[k] += 1


@njit(cache=True)
def _infer_sweep(w, d, z, ndk, phi, alpha, u):
    K = phi.shape[0]
    cum = np.empty(K)
    for n in range(w.shape[0]):
        wi = w[n]
        di = d[n]
        ndk[di, z[n]] -= 1
        total = 0.0
        for t in range(K):
            total += (ndk[di, t] + alpha) * phi[t, wi]
            cum[t] = total
        r = u[n] * total
        k = 0
        while k < K - 1 and cum[k] <= r:
            k += 1
        z[n] = k
        ndk[di, k] += 1


def _flatten(docs: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(x) for x in docs], dtype=np.int64)
    w = np.concatenate(docs).astype(np.int64) if len(docs) else np.zeros(0, np.int64)
    return w, np.repeat(np.arange(len(docs), dtype=np.int64), lengths)


@dataclass
class LDAModel:
    K: int
    alpha: float
    beta: float
    vocab: list[str]
    topic_term_counts: np.ndarray  # K x V
    doc_topic_counts: np.ndarray  # D x K
    assignments: np.ndarray  # one topic per token, corpus order
    seed: int
    iters: int
    loglik_trace: list[float] = field(default_factory=list)

    @property
    def topic_totals(self) -> np.ndarray:
        return self.topic_term_counts.sum(axis=1)

    def phi(self) -> np.ndarray:
        V = len(self.vocab)
        return (self.topic_term_counts + self.beta) / (self.topic_totals[:, None] + V * self.beta)

    def theta(self) -> np.ndarray:
        """Smoothed topic proportions of the training documents."""
        nd = self.doc_topic_counts.sum(axis=1, keepdims=True)
        return (self.doc_topic_counts + self.alpha) / (nd + self.K * self.alpha)


def check_counts(w, d, z, ndk, nkw, nk, doc_lengths) -> None:
    """Recount from the assignments and compare with the running matrices."""
    K, V = nkw.shape
    flat_kw = np.bincount(z * V + w, minlength=K * V).reshape(K, V)
    flat_dk = np.bincount(d * K + z, minlength=ndk.size).reshape(ndk.shape)
    if not (np.array_equal(flat_kw, nkw) and np.array_equal(flat_dk, ndk)):
        raise CountMismatch("count matrices disagree with token assignments")
    if not (np.array_equal(nk, nkw.sum(axis=1)) and np.array_equal(ndk.sum(axis=1), doc_lengths) and nk.sum() == len(w)):
        raise CountMismatch("count marginals disagree with token totals")


def word_log_likelihood(nkw: np.ndarray, beta: float) -> float:
    """log p(w | z) with the topic-word distributions integrated out."""
    K, V = nkw.shape
    nk = nkw.sum(axis=1)
    return float(K * (gammaln(V * beta) - V * gammaln(beta)) + gammaln(nkw + beta).sum() - gammaln(nk + V * beta).sum())


def fit_lda(
    corpus: Corpus,
    K: int = 4,
    alpha: float | None = None,
    beta: float = 0.01,
    iters: int = 1000,
    seed: int = 0,
    check_every: int = 1,
    callback=None,
) -> LDAModel:
    """Collapsed Gibbs sampling from a seeded random initialisation.

    ``alpha`` defaults to 50/K. Count consistency is verified every
    ``check_every`` sweeps (0 disables it); ``callback(sweep, z, ndk, nkw, nk)``
    runs after each sweep.
    """
    if corpus.n_docs == 0 or corpus.n_tokens == 0:
        raise LDAError("empty corpus")
    if K < 1:
        raise LDAError("K must be positive")
    alpha = 50.0 / K if alpha is None else float(alpha)
    V, D = len(corpus.vocab), corpus.n_docs
    w, d = _flatten(corpus.docs)
    lengths = np.array([len(x) for x in corpus.docs], dtype=np.int64)
    rng = np.random.default_rng(seed)
    z = rng.integers(0, K, size=len(w)).astype(np.int64)
    nkw = np.bincount(z * V + w, minlength=K * V).reshape(K, V).astype(np.int64)
    ndk = np.bincount(d * K + z, minlength=D * K).reshape(D, K).astype(np.int64)
    nk = nkw.sum(axis=1)
    trace = []
    for sweep in range(iters):
        u = rng.random(len(w))
        _gibbs_sweep(w, d, z, ndk, nkw, nk, alpha, beta, V * beta, u)
        if check_every and (sweep + 1) % check_every == 0:
            check_counts(w, d, z, ndk, nkw, nk, lengths)
        trace.append(word_log_likelihood(nkw, beta))
        if callback is not None:
            callback(sweep, z, ndk, nkw, nk)
    log.info("LDA: %d sweeps over %d tokens, final log p(w|z) = %.1f", iters, len(w), trace[-1] if trace else float("nan"))
    return LDAModel(K, alpha, beta, list(corpus.vocab), nkw, ndk, z, seed, iters, trace)


def infer_doc_topics(
    model: LDAModel,
    docs: Sequence[np.ndarray],
    iters: int = 50,
    burn_in: int = 10,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior-mean topic proportions for new documents with the model frozen.

    Returns ``(theta, empty)``: each theta row is the average over post-burn-in
    sweeps of (n_dk + alpha) / (n_d + K alpha). Empty documents get the
    uniform distribution and ``empty[j] = True``.
    """
    K = model.K
    D = len(docs)
    theta = np.full((D, K), 1.0 / K)
    empty = np.array([len(x) == 0 for x in docs], dtype=bool)
    live = [i for i in range(D) if not empty[i]]
    if not live:
        return theta, empty
    w, d = _flatten([np.asarray(docs[i], dtype=np.int64) for i in live])
    phi = model.phi()
    rng = np.random.default_rng(seed)
    # start from the most likely topic of each word under the frozen model
    z = np.argmax(phi[:, w], axis=0).astype(np.int64)
    ndk = np.bincount(d * K + z, minlength=len(live) * K).reshape(len(live), K).astype(np.int64)
    nd = ndk.sum(axis=1, keepdims=True)
    acc = np.zeros((len(live), K))
    kept = 0
    for sweep in range(iters):
        _infer_sweep(w, d, z, ndk, phi, model.alpha, rng.random(len(w)))
        if sweep >= burn_in:
            acc += (ndk + model.alpha) / (nd + K * model.alpha)
            kept += 1
    if kept == 0:
        acc = (ndk + model.alpha) / (nd + K * model.alpha)
        kept = 1
    est = acc / kept
    theta[live] = est / est.sum(axis=1, keepdims=True)
    return theta, empty


def top_words(model: LDAModel, n: int = 20) -> list[list[tuple[str, float]]]:
    """Per topic, the ``n`` most probable terms (ties broken alphabetically)."""
    phi = model.phi()
    vocab = np.array(model.vocab)
    out = []
    for k in range(model.K):
        order = np.lexsort((vocab, -phi[k]))[: min(n, len(vocab))]
        out.append([(str(vocab[j]), float(phi[k, j])) for j in order])
    return out


def render_top_words(words: list[list[tuple[str, float]]], per_row: int = 2) -> str:
    """Text table with ``per_row`` words per topic on each line, ranks running left to right."""
    K = len(words)
    rows = -(-max(len(t) for t in words) // per_row)
    col_w = max([8] + [len(w) for t in words for w, _ in t])
    group_w = per_row * col_w + per_row - 1
    sep = " || "
    lines = [sep.join(f"Topic {k + 1}".center(group_w) for k in range(K)).rstrip(), "-" * (K * group_w + len(sep) * (K - 1))]
    for r in range(rows):
        groups = []
        for t in words:
            chunk = [w for w, _ in t[r * per_row:(r + 1) * per_row]]
            groups.append(" ".join(x.ljust(col_w) for x in chunk + [""] * (per_row - len(chunk))))
        lines.append(sep.join(groups).rstrip())
    return "\n".join(lines) + "\n"
