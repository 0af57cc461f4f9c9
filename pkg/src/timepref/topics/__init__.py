"""Topic modelling of chain-of-thought explanations."""
from .lda import LDAModel, fit_lda, infer_doc_topics, render_top_words, top_words
from .porter import porter_stem
from .preprocess import Corpus, preprocess, tokenize
from .prevalence import TopicLabeling, auto_label, prevalence_analytics

__all__ = [
    "Corpus",
    "LDAModel",
    "TopicLabeling",
    "auto_label",
    "fit_lda",
    "infer_doc_topics",
    "porter_stem",
    "preprocess",
    "prevalence_analytics",
    "render_top_words",
    "tokenize",
    "top_words",
]
