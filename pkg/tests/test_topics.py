import itertools

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from timepref.design import build_cross_period_grid, default_languages
from timepref.econometrics import spec_topic_ftr
from timepref.topics import (
    Corpus,
    TopicLabeling,
    auto_label,
    fit_lda,
    infer_doc_topics,
    porter_stem,
    preprocess,
    prevalence_analytics,
    render_top_words,
    tokenize,
    top_words,
)
from timepref.topics.lda import LDAModel, check_counts
from timepref.topics.preprocess import default_stopwords
from timepref.topics.synthetic import planted_corpus

from conftest import DATA


def test_porter_reference_vocabulary():
    words = (DATA / "porter_voc.txt").read_text().split()
    stems = (DATA / "porter_output.txt").read_text().split()
    assert len(words) == len(stems) > 23_000
    mismatches = [(w, s, porter_stem(w)) for w, s in zip(words, stems) if porter_stem(w) != s]
    assert mismatches == []


@pytest.mark.parametrize("word, stem", [
    ("value", "valu"), ("immediate", "immedi"), ("uncertainty", "uncertainti"), ("sky", "sky"),
    ("caresses", "caress"), ("ponies", "poni"), ("relational", "relat"), ("generalization", "gener"),
    ("opportunity", "opportun"), ("urgent", "urgent"), ("hopping", "hop"), ("is", "is"),
])
def test_porter_examples(word, stem):
    assert porter_stem(word) == stem


def test_preprocess_examples():
    assert preprocess("uncertainty") == ["uncertainti"]
    assert preprocess("the of and") == []
    assert preprocess("immediate value") == ["immedi", "valu"]
    assert preprocess("Option (2): 1153 tokens in 18 months!") == ["option", "token", "month"]
    assert tokenize("don't 12abc x_y") == ["don", "t", "abc", "x", "y"]


def test_preprocess_custom_lists():
    assert preprocess("waiting option", stopwords=[], context_stopwords=["option"]) == ["wait"]


def test_idempotence_fails_off_fixed_points():
    # the stemmer is not idempotent in general, so neither is preprocessing
    once = preprocess("agreed")
    assert once == ["agre"]
    assert preprocess(" ".join(once)) == ["agr"]


def _fixed_point(w):
    return porter_stem(w) == w or porter_stem(porter_stem(w)) == porter_stem(w)


WORDS = [w for w in (DATA / "porter_voc.txt").read_text().split()[::37] if w.isalpha() and _fixed_point(w)]


@settings(max_examples=200)
@given(st.lists(st.sampled_from(WORDS), max_size=30), st.lists(st.sampled_from(list(" .,;!?-\n")), min_size=1, max_size=5))
def test_preprocess_idempotent_on_stable_stems(words, seps):
    text = "".join(w + seps[j % len(seps)] for j, w in enumerate(words))
    once = preprocess(text)
    assert sorted(preprocess(" ".join(once))) == sorted(once)


def test_corpus_invariants():
    texts = ["I will wait for the larger reward, 1153 tokens.", "the of and", "Uncertainty about the future matters."]
    c = Corpus.from_texts(texts, ["a", "b", "c"])
    assert c.refs == ["a", "c"] and c.excluded == ["b"]
    stop = default_stopwords()
    for term in c.vocab:
        assert len(term) >= 3 and term == term.lower() and term.isalpha() and term not in stop
    assert c.vocab == sorted(c.vocab)
    assert c.doc_term_counts().sum() == c.n_tokens


@pytest.fixture(scope="module")
def planted():
    pc = planted_corpus(n_docs=500, vocab_size=300, K=3, seed=1)
    return pc, Corpus.from_tokens(pc.tokens)


def best_overlap(recovered, planted_sets):
    K = len(planted_sets)
    best = max(itertools.permutations(range(K)), key=lambda p: sum(len(recovered[p[k]] & planted_sets[k]) for k in range(K)))
    return [len(recovered[best[k]] & planted_sets[k]) for k in range(K)]


def test_lda_recovers_planted_topics(planted):
    pc, corpus = planted
    sweeps = []
    model = fit_lda(corpus, K=3, iters=150, seed=3, check_every=1, callback=lambda s, *a: sweeps.append(s))
    assert sweeps == list(range(150))
    overlap = best_overlap([{w for w, _ in t} for t in top_words(model, 10)], pc.top_terms(10))
    assert min(overlap) >= 8


def test_lda_count_consistency_each_sweep(planted):
    _, corpus = planted
    seen = []

    def audit(sweep, z, ndk, nkw, nk):
        w = np.concatenate(corpus.docs)
        d = np.repeat(np.arange(corpus.n_docs), [len(x) for x in corpus.docs])
        check_counts(w, d, z, ndk, nkw, nk, np.array([len(x) for x in corpus.docs]))
        assert nkw.sum() == ndk.sum() == nk.sum() == corpus.n_tokens
        seen.append(sweep)

    fit_lda(corpus, K=3, iters=20, seed=0, callback=audit)
    assert len(seen) == 20


def test_lda_deterministic(planted):
    _, corpus = planted
    a = fit_lda(corpus, K=3, iters=15, seed=42)
    b = fit_lda(corpus, K=3, iters=15, seed=42)
    assert np.array_equal(a.assignments, b.assignments)
    c = fit_lda(corpus, K=3, iters=15, seed=43)
    assert not np.array_equal(a.assignments, c.assignments)


def test_lda_loglik_trend(planted):
    _, corpus = planted
    trace = np.array(fit_lda(corpus, K=3, iters=50, seed=5).loglik_trace)
    blocks = trace.reshape(10, 5).mean(axis=1)
    rise = blocks[-1] - blocks[0]
    assert rise > 0
    # non-decreasing block means, allowing plateau noise of 1% of the total climb
    assert np.all(np.diff(blocks) >= -0.01 * rise)


def test_lda_single_topic():
    corpus = Corpus.from_tokens([["alpha", "beta", "beta"], ["beta", "gamma"]])
    m = fit_lda(corpus, K=1, iters=5)
    assert np.all(m.assignments == 0)
    assert np.allclose(m.theta(), 1.0)
    assert top_words(m, 1)[0][0][0] == "beta"
    assert [w for w, _ in top_words(m, 10)[0]] == ["beta", "alpha", "gamma"]


def test_lda_errors():
    with pytest.raises(Exception):
        fit_lda(Corpus.from_tokens([[]]), K=2)


def degenerate_model():
    vocab = ["aaa", "bbb", "ccc", "ddd"]
    nkw = np.array([[50, 50, 0, 0], [0, 0, 50, 50]])
    return LDAModel(2, 0.1, 0.01, vocab, nkw, np.zeros((1, 2), int), np.zeros(0, int), 0, 0)


def test_inference_on_exclusive_terms():
    m = degenerate_model()
    theta, empty = infer_doc_topics(m, [np.array([2, 3, 3, 2, 2]), np.array([], dtype=int), np.array([0, 1, 2])], seed=1)
    assert theta[0, 1] > 0.9
    assert empty.tolist() == [False, True, False]
    assert np.allclose(theta[1], 0.5)
    assert np.all(np.abs(theta.sum(axis=1) - 1) < 1e-12)


def test_top_words_table_layout(planted):
    _, corpus = planted
    m = fit_lda(corpus, K=4, iters=10, seed=0)
    words = top_words(m, 20)
    assert all(len(t) == 20 for t in words)
    text = render_top_words(words)
    lines = text.splitlines()
    assert "Topic 1" in lines[0] and "Topic 4" in lines[0]
    assert len(lines) == 2 + 10
    assert lines[2].split()[0] == words[0][0][0] and lines[2].split()[1] == words[0][1][0]
    assert len(top_words(m, 10_000)[0]) == len(corpus.vocab)


# -- labeling and prevalence -------------------------------------------------------

CROSS = build_cross_period_grid(default_languages())


def conditions(n_per_cell=10):
    rows = []
    for c in CROSS:
        for _ in range(n_per_cell):
            rows.append({"language": c.language.code, "ftr_strong": int(c.language.strong_ftr), "d": c.delay,
                         "i": c.interest, "t1": 1, "t2": c.later.delivery_months, "r1": 1000, "r2": c.later.amount})
    return pd.DataFrame(rows)


def test_labeling_default_and_validation(tmp_path):
    lab = TopicLabeling.default()
    assert lab.merge_map == ("risk", "opportunity", "urgency", "opportunity")
    theta = np.array([[0.1, 0.2, 0.3, 0.4]])
    assert np.allclose(lab.merge(theta), [[0.1, 0.6, 0.3]])
    with pytest.raises(ValueError):
        TopicLabeling.from_mapping({1: "risk", 3: "urgency"})
    with pytest.raises(ValueError):
        TopicLabeling(("risk", "boredom"))
    path = tmp_path / "labels.yaml"
    path.write_text("merge:\n  1: urgency\n  2: risk\n  3: opportunity\n")
    assert TopicLabeling.load(path).merge_map == ("urgency", "risk", "opportunity")


def test_auto_label():
    vocab = ["invest", "risk", "urgent", "wait"]
    phi = np.array([[0.1, 0.1, 0.7, 0.1], [0.7, 0.1, 0.1, 0.1], [0.1, 0.7, 0.1, 0.1]])
    assert auto_label(phi, vocab).merge_map == ("urgency", "opportunity", "risk")


def test_prevalence_normalization_and_delay_trend():
    cond = conditions()
    rng = np.random.default_rng(0)
    risk = 0.1 + 0.01 * cond.d.to_numpy() + rng.normal(0, 0.02, len(cond))
    rest = (1 - risk) / 3
    theta = np.column_stack([risk, rest, rest, rest])
    res = prevalence_analytics(theta, TopicLabeling.default(), cond)
    reg = res.regression_frame()
    assert np.all(np.abs(reg[["risk", "opportunity", "urgency"]].mean() - 1) < 1e-12)
    assert np.allclose(res.frame.raw_opportunity, theta[:, 1] + theta[:, 3])
    delay = res.by_delay[res.by_delay.topic == "risk"].sort_values("group")
    assert np.all(np.diff(delay["mean"]) > 0)
    assert set(res.by_language.columns) >= {"topic", "group", "mean", "ci_lo", "ci_hi", "ftr_class"}
    langs = res.by_language[res.by_language.topic == "risk"]
    assert langs.ftr_class.tolist() == ["strong"] * 12 + ["weak"] * 10


def test_planted_strong_ftr_effect_on_theta():
    cond = conditions()
    rng = np.random.default_rng(1)
    w = 0.30
    s = w * 20 / 24.4  # strong mean such that (s - w) / overall mean = -0.2 with 12 strong, 10 weak languages
    base = np.where(cond.ftr_strong == 1, s, w)
    risk = np.clip(base + rng.normal(0, 0.05, len(cond)), 0.01, 0.98)
    rest = (1 - risk) / 2
    theta = np.column_stack([risk, rest, rest])
    lab = TopicLabeling(("risk", "opportunity", "urgency"))
    reg = prevalence_analytics(theta, lab, cond).regression_frame()
    table = spec_topic_ftr(reg, ["risk", "opportunity", "urgency"])
    coef, se = table.columns[0][1]["Strong FTR"]
    assert abs(coef - (-0.2)) < 0.05
