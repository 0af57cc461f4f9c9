"""Analysis artifacts built from one or more run directories.

Every figure is written as an SVG plus the CSV it was drawn from. Groups of
strong-FTR languages come first and are drawn in bold.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .design import default_languages
from .econometrics import (
    CELL_KEY,
    RegressionTable,
    clustered_group_means,
    render_table,
    spec_ftr_share,
    spec_proper_test,
    spec_topic_ftr,
    table_to_frame,
)
from .estimation import fit_by_group, fits_table, plot_data
from .plots import point_range_svg
from .storage import ANALYSIS, MANIFEST, RunManifest, read_samples, SAMPLES
from .topics import Corpus, TopicLabeling, auto_label, fit_lda, infer_doc_topics, render_top_words, top_words
from .topics.preprocess import default_context_stopwords, default_stopwords, load_word_list, preprocess
from .topics.prevalence import LABEL_NAMES, prevalence_analytics, save_labeling

FLOAT_FORMAT = "%.10g"


class MissingInput(Exception):
    pass


@dataclass
class RunData:
    run_dir: Path
    manifest: RunManifest
    frame: pd.DataFrame


def load_run(run_dir: str | Path) -> RunData:
    run_dir = Path(run_dir)
    if not (run_dir / MANIFEST).is_file():
        raise MissingInput(f"{run_dir}: no {MANIFEST}; not a run directory")
    manifest = RunManifest.load(run_dir)
    path = run_dir / ANALYSIS
    if not path.is_file():
        raise MissingInput(f"{run_dir}: no {ANALYSIS}; run or resume the study first")
    frame = pd.read_csv(path, dtype={"language": str, "study": str})
    return RunData(run_dir, manifest, frame)


def load_runs(run_dirs: Sequence[str | Path]) -> tuple[list[RunData], pd.DataFrame]:
    """Pool the analysis rows of several runs; each row keeps a ``run`` column."""
    runs = [load_run(d) for d in run_dirs]
    parts = []
    for r in runs:
        f = r.frame.copy()
        f["run"] = r.manifest.study if len(runs) == 1 else f"{r.manifest.study}:{r.run_dir.name}"
        parts.append(f)
    frame = pd.concat(parts, ignore_index=True) if parts else pd.DataFrame()
    if frame.empty:
        raise MissingInput("the run logs hold no parsed choices yet")
    return runs, frame


def write_csv(frame: pd.DataFrame, path: Path) -> Path:
    frame.to_csv(path, index=False, lineterminator="\n", float_format=FLOAT_FORMAT)
    return path


def write_figure(frame: pd.DataFrame, out: Path, stem: str, title: str, ylabel: str, **kw) -> list[Path]:
    csv = write_csv(frame, out / f"{stem}.csv")
    svg = out / f"{stem}.svg"
    svg.write_text(point_range_svg(frame, title, ylabel, **kw), encoding="utf-8")
    return [csv, svg]


def _display_names() -> dict[str, str]:
    return {lang.code: lang.display_name for lang in default_languages()}


def _cross(frame: pd.DataFrame) -> pd.DataFrame:
    return frame[frame.t2 > frame.t1]


def _same(frame: pd.DataFrame) -> pd.DataFrame:
    return frame[frame.t2 == frame.t1]


def _strong_first(frame: pd.DataFrame, languages: pd.DataFrame) -> pd.DataFrame:
    cls = dict(zip(languages.language, np.where(languages.ftr_strong == 1, "strong", "weak")))
    order = {code: j for j, code in enumerate(languages.language)}
    out = frame.copy()
    out["ftr_class"] = out.group.map(cls)
    out["_k"] = [(0 if cls[g] == "strong" else 1, order[g]) for g in out.group]
    return out.sort_values("_k", kind="stable").drop(columns="_k").reset_index(drop=True)


# -- shares --------------------------------------------------------------------------


def share_by_language(frame: pd.DataFrame) -> pd.DataFrame:
    df = _cross(frame)
    g = clustered_group_means(df.y_later.to_numpy(), df.language.to_numpy(), df[CELL_KEY])
    langs = df[["language", "ftr_strong"]].drop_duplicates()
    out = _strong_first(g, langs)
    out.insert(1, "name", out.group.map(_display_names()).fillna(out.group))
    return out


def share_by_interest(frame: pd.DataFrame) -> pd.DataFrame:
    """Later-choice share per interest rate, for all languages and per FTR class."""
    df = _cross(frame)
    parts = []
    for label, sub in (("all", df), ("strong", df[df.ftr_strong == 1]), ("weak", df[df.ftr_strong == 0])):
        if sub[CELL_KEY].drop_duplicates().shape[0] < 2:
            continue
        g = clustered_group_means(sub.y_later.to_numpy(), sub.i.to_numpy(), sub[CELL_KEY])
        g.insert(0, "ftr_class", label)
        parts.append(g)
    return pd.concat(parts, ignore_index=True)


def share_by_delay_same_period(frame: pd.DataFrame) -> pd.DataFrame:
    """Share choosing the larger amount per common delivery month."""
    df = _same(frame)
    return clustered_group_means(df.y_later.to_numpy(), df.t2.to_numpy(), df[CELL_KEY])


# -- outputs -----------------------------------------------------------------------------


def estimate_outputs(frame: pd.DataFrame, out: Path, groupings: Sequence[str] = ("ftr", "language")) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    df = _cross(frame)
    if df.empty:
        raise MissingInput("no cross-period choices to estimate from")
    results = {}
    names = _display_names()
    for grouping in groupings:
        fits = fit_by_group(df, grouping)
        write_csv(fits_table(fits), out / f"delta_by_{grouping}.csv")
        pdata = plot_data(fits)
        bold = pdata.group[pdata.ftr_class == "strong"].tolist()
        write_figure(pdata, out, f"delta_by_{grouping}_plot", "Estimated yearly discount rate (95% CI)", "delta",
                     bold=bold, labels=names)
        results[grouping] = fits
    return results


def _write_table(table: RegressionTable, out: Path, stem: str) -> None:
    (out / f"{stem}.txt").write_text(render_table(table), encoding="utf-8")
    write_csv(table_to_frame(table), out / f"{stem}.csv")


def regress_outputs(frame: pd.DataFrame, out: Path) -> dict[str, RegressionTable]:
    out.mkdir(parents=True, exist_ok=True)
    tables = {}
    if not _cross(frame).empty:
        tables["table_ftr_share"] = spec_ftr_share(frame)
        tables["table_proper_test"] = spec_proper_test(frame)
    if not _same(frame).empty:
        tables["table_same_period"] = spec_proper_test(frame, same_period=True)
    if not tables:
        raise MissingInput("no rows to regress")
    for stem, table in tables.items():
        _write_table(table, out, stem)
    return tables


def share_outputs(frame: pd.DataFrame, out: Path) -> dict[str, pd.DataFrame]:
    out.mkdir(parents=True, exist_ok=True)
    res = {}
    if not _cross(frame).empty:
        lang = share_by_language(frame)
        write_figure(lang.rename(columns={"mean": "estimate"}), out, "share_later_by_language",
                     "Share of delayed reward choices (95% CI, clustered by cell)", "share choosing later",
                     bold=lang.group[lang.ftr_class == "strong"].tolist(), labels=_display_names())
        inter = share_by_interest(frame)
        inter = inter.assign(interest=inter.group.map(lambda v: f"{100 * v:g}%"))
        write_figure(inter.rename(columns={"mean": "estimate"}), out, "share_later_by_interest",
                     "Share of delayed reward choices by interest rate (95% CI)", "share choosing later",
                     group="interest", series="ftr_class")
        res["by_language"], res["by_interest"] = lang, inter
    if not _same(frame).empty:
        same = share_by_delay_same_period(frame)
        write_figure(same.rename(columns={"mean": "estimate"}), out, "share_larger_same_period",
                     "Share choosing the larger amount, both paid in month t (95% CI)", "share choosing larger")
        res["same_period"] = same
    return res


# -- topics ------------------------------------------------------------------------------


@dataclass
class TopicSettings:
    K: int = 4
    iters: int = 1000
    alpha: float | None = None
    beta: float = 0.01
    seed: int = 0
    infer_iters: int = 50
    burn_in: int = 10
    labeling: str = "default"  # "default", "auto" or a YAML path
    stopwords: str | None = None
    context_stopwords: str | None = None


def topic_outputs(documents: pd.DataFrame, out: Path, settings: TopicSettings) -> dict:
    """Fit LDA on the explanation texts and write terms, per-document topics and prevalence outputs."""
    out.mkdir(parents=True, exist_ok=True)
    if documents.empty:
        raise MissingInput("no chain-of-thought explanations to model")
    stop = load_word_list(settings.stopwords) if settings.stopwords else default_stopwords()
    ctx = load_word_list(settings.context_stopwords) if settings.context_stopwords else default_context_stopwords()
    tokens = [preprocess(t, stop, ctx) for t in documents.text]
    corpus = Corpus.from_tokens(tokens, documents.sample_ref.tolist())
    model = fit_lda(corpus, K=settings.K, alpha=settings.alpha, beta=settings.beta, iters=settings.iters, seed=settings.seed)
    docs = [corpus.encode(t) for t in tokens]
    theta, empty = infer_doc_topics(model, docs, settings.infer_iters, settings.burn_in, settings.seed)

    if settings.labeling == "auto":
        labeling = auto_label(model.phi(), model.vocab)
    elif settings.labeling == "default":
        labeling = TopicLabeling.default()
    else:
        labeling = TopicLabeling.load(settings.labeling)
    if labeling.K != settings.K:
        raise ValueError(f"labeling covers {labeling.K} topics but K={settings.K}")
    save_labeling(labeling, out / "labeling.json")

    words = top_words(model, 20)
    (out / "top_words.txt").write_text(render_top_words(words), encoding="utf-8")
    write_csv(pd.DataFrame([(k + 1, r + 1, w, p) for k, t in enumerate(words) for r, (w, p) in enumerate(t)],
                           columns=["topic", "rank", "term", "prob"]), out / "topic_terms.csv")
    theta_frame = pd.DataFrame(theta, columns=[f"topic_{k + 1}" for k in range(model.K)])
    theta_frame.insert(0, "sample_ref", documents.sample_ref.to_numpy())
    theta_frame["empty"] = empty.astype(int)
    write_csv(theta_frame, out / "doc_topics.csv")
    write_csv(pd.DataFrame({"sweep": np.arange(1, len(model.loglik_trace) + 1), "log_p_w_given_z": model.loglik_trace}),
              out / "lda_trace.csv")

    keep = ~empty
    conditions = documents.loc[keep, ["language", "ftr_strong", "d", "i", "t1", "t2", "r1", "r2"]]
    prev = prevalence_analytics(theta[keep], labeling, conditions)
    names = _display_names()
    for by, frame, group in (("interest", prev.by_interest, "group"), ("delay", prev.by_delay, "group"),
                             ("language", prev.by_language, "group")):
        kw = {"series": "topic", "group": group}
        if by == "language":
            kw.update(bold=frame.group[frame.ftr_class == "strong"].unique().tolist(), labels=names)
        write_figure(frame.rename(columns={"mean": "estimate"}), out, f"topic_prevalence_by_{by}",
                     f"Topic probability by {by} (95% CI, clustered by cell)", "mean topic probability", **kw)
    table = spec_topic_ftr(prev.regression_frame(), list(labeling.labels), [LABEL_NAMES.get(l, l) for l in labeling.labels])
    _write_table(table, out, "table_topic_ftr")
    return {"model": model, "theta": theta, "labeling": labeling, "prevalence": prev, "table": table, "corpus": corpus}


def load_documents(run_dir: str | Path) -> pd.DataFrame:
    from .runner import DOCUMENTS, manifest_cells
    from .storage import export_documents

    run_dir = Path(run_dir)
    if not (run_dir / MANIFEST).is_file():
        raise MissingInput(f"{run_dir}: no {MANIFEST}; not a run directory")
    if (run_dir / DOCUMENTS).is_file():
        return pd.read_csv(run_dir / DOCUMENTS, dtype={"language": str, "text": str, "sample_ref": str})
    manifest = RunManifest.load(run_dir)
    return export_documents(read_samples(run_dir / SAMPLES), manifest_cells(manifest))


# -- reference fixture --------------------------------------------------------------------


def reference_values() -> dict:
    return json.loads(resources.files("timepref").joinpath("data", "reference_values.json").read_text(encoding="utf-8"))


def reference_study(manifest: RunManifest) -> str:
    if manifest.design == "same_period":
        return "same_period"
    if manifest.protocol == "cot":
        return "cot_gpt4"
    return "standard_gpt35" if "3.5" in manifest.model_id else "standard_gpt4"


def reference_comparison(runs: Sequence[RunData], frame: pd.DataFrame, fits: dict | None, tables: dict) -> pd.DataFrame:
    """Published figures next to the values reproduced from these runs (blank where not comparable)."""
    ref = reference_values()
    rows = []
    for r in runs:
        key = reference_study(r.manifest)
        f = r.frame
        if key == "same_period":
            f = _same(f)
            rows.append(("share choosing larger, same period", key, ref["share"][key], f.y_later.mean() if len(f) else np.nan))
        else:
            f = _cross(f)
            rows.append(("share choosing later", key, ref["share"][key], f.y_later.mean() if len(f) else np.nan))
    delta_ref = ref["delta_ci95"].get("cot" if any(r.manifest.protocol == "cot" for r in runs) else "standard")
    if fits and "ftr" in fits:
        for g in fits["ftr"]:
            lo, hi = delta_ref[g.group]
            got = g.fit.delta_hat if g.fit is not None else np.nan
            rows.append((f"pooled delta, {g.group} FTR (published 95% CI {lo}-{hi})", "delta", (lo + hi) / 2, got))
    if "table_ftr_share" in tables:
        fit = tables["table_ftr_share"].columns[2][1]
        rows.append(("strong FTR coefficient, delay-interest FE", "ftr_share", ref["coefficients"]["ftr_share"], fit.coef[0]))
    if "table_proper_test" in tables:
        fit = tables["table_proper_test"].columns[2][1]
        rows.append(("reward gap coefficient, language-delay FE", "proper_test", ref["coefficients"]["proper_test"], fit.coef[0]))
    return pd.DataFrame(rows, columns=["metric", "source", "published", "reproduced"])


def report_outputs(run_dirs: Sequence[str | Path], out: Path) -> dict:
    runs, frame = load_runs(run_dirs)
    out.mkdir(parents=True, exist_ok=True)
    shares = share_outputs(frame, out)
    fits = estimate_outputs(frame, out) if not _cross(frame).empty else None
    tables = regress_outputs(frame, out)
    comp = reference_comparison(runs, frame, fits, tables)
    table_file = out / "table_topic_ftr.csv"
    if table_file.is_file():
        topic = pd.read_csv(table_file)
        rows = topic[topic.term == "Strong FTR"]
        ref = reference_values()["coefficients"]["topic"]
        extra = [(f"strong FTR effect on {c} prevalence", "topic", ref[k], float(v))
                 for (c, v), k in zip(zip(rows.variant, rows.coef), ("risk", "opportunity", "urgency"))]
        comp = pd.concat([comp, pd.DataFrame(extra, columns=comp.columns)], ignore_index=True)
    write_csv(comp, out / "reference_comparison.csv")
    (out / "report.md").write_text(render_index(runs, frame, shares, fits, tables, comp, out), encoding="utf-8")
    return {"shares": shares, "fits": fits, "tables": tables, "comparison": comp}


def render_index(runs, frame, shares, fits, tables, comp, out: Path) -> str:
    lines = ["# Study report", "", "## Runs", ""]
    for r in runs:
        m = r.manifest
        lines.append(f"- {r.run_dir.name}: study {m.study}, protocol {m.protocol}, design {m.design}, "
                     f"{len(m.languages)} languages, {m.samples_per_cell} samples per cell, "
                     f"respondent {m.respondent} ({m.model_id}), {len(r.frame)} parsed choices")
    lines += ["", "## Reference comparison", "", "| metric | published | reproduced |", "|---|---|---|"]
    for row in comp.itertuples():
        lines.append(f"| {row.metric} | {row.published:.4g} | {row.reproduced:.4g} |")
    if fits and "ftr" in fits:
        lines += ["", "## Pooled discount rates", ""]
        for g in fits["ftr"]:
            if g.fit is None:
                lines.append(f"- {g.group} FTR: {g.error}")
            else:
                lo, hi = g.fit.ci95_delta
                lines.append(f"- {g.group} FTR: delta = {g.fit.delta_hat:.3f} [{lo:.3f}, {hi:.3f}], mu = {g.fit.mu_hat:.3f}")
    for stem, table in tables.items():
        lines += ["", f"## {table.title}", "", "```", render_table(table).rstrip(), "```"]
    lines += ["", "## Files", ""]
    lines += [f"- {p.name}" for p in sorted(out.iterdir()) if p.name != "report.md"]
    return "\n".join(lines) + "\n"
