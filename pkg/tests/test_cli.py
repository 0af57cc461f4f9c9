import json
import xml.etree.ElementTree as ET

import pandas as pd
import pytest

from timepref import cli
from timepref.client import MockTransport
from timepref.storage import SAMPLES, read_samples

REFUSAL = "As an AI language model, I do not have preferences."


def run(*argv):
    return cli.main([str(a) for a in argv])


def files(folder):
    return {p.name: p.read_bytes() for p in sorted(folder.iterdir()) if p.is_file()}


# -- grid ---------------------------------------------------------------------------


@pytest.mark.parametrize("extra, rows", [((), 1386), (("--same-period",), 1078), (("--languages", "english"), 63)])
def test_grid_row_counts(tmp_path, extra, rows):
    assert run("grid", "--out", tmp_path, *extra) == 0
    (csv,) = tmp_path.glob("grid_*.csv")
    assert len(pd.read_csv(csv)) == rows
    table = (tmp_path / "reward_table.txt").read_text()
    assert "1153" in table and "1397" in table


def test_grid_unknown_language_is_usage_error(tmp_path):
    assert run("grid", "--out", tmp_path, "--languages", "klingon") == 2


def test_bad_flag_is_usage_error():
    assert run("run", "--samples-per-cell", "many") == 2
    assert run("nonsense") == 2


# -- configuration -----------------------------------------------------------------------


def test_config_precedence(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("study: cot\nsamples_per_cell: 3\nseed: 5\nlanguages: english\n")
    cfg = cli.resolve_config(cli.load_config_file(path), {"seed": 7, "unit": None})
    assert (cfg.study, cfg.samples_per_cell, cfg.seed, cfg.unit) == ("cot", 3, 7, "tokens")
    assert cfg.languages == ["english"] and cfg.population == "calibrated_cot"
    assert cli.resolve_config({}, {}).samples_per_cell == 100
    assert cli.resolve_config({"study": "cot"}, {}).samples_per_cell == 10


@pytest.mark.parametrize("text", ["bogus_key: 1\n", "samples_per_cell: 0\n", "study: weekly\n", "- a\n- b\n", "a: [\n"])
def test_bad_config_exits_2(tmp_path, text):
    path = tmp_path / "bad.yaml"
    path.write_text(text)
    assert run("run", "--config", path, "--out", tmp_path / "r") == 2


def test_live_without_key_exits_2(tmp_path, monkeypatch):
    monkeypatch.delenv("OPENAI_API_KEY", raising=False)
    assert run("run", "--live", "--languages", "english", "--out", tmp_path / "r") == 2
    assert not (tmp_path / "r" / SAMPLES).exists()


def test_unknown_population_exits_2(tmp_path):
    assert run("run", "--simulated", "nobody", "--out", tmp_path / "r") == 2


# -- simulated runs ------------------------------------------------------------------------


def sim_run(out, *extra):
    return run("run", "--simulated", "calibrated_standard", "--languages", "english,german", "--samples-per-cell", 4,
               "--seed", 3, "--out", out, *extra)


def test_simulated_run_counts_and_determinism(tmp_path):
    assert sim_run(tmp_path / "a") == 0
    assert sim_run(tmp_path / "b") == 0
    a, b = pd.read_csv(tmp_path / "a/analysis.csv"), pd.read_csv(tmp_path / "b/analysis.csv")
    assert len(a) == 126 * 4
    assert a.equals(b)
    assert (tmp_path / "a/summary.json").read_bytes() == (tmp_path / "b/summary.json").read_bytes()
    # presentation order is balanced within every cell
    assert (a.groupby(["language", "d", "i"]).order.sum() == 2).all()


def test_resume_after_kill_matches_uninterrupted(tmp_path):
    assert sim_run(tmp_path / "full") == 0
    assert sim_run(tmp_path / "part", "--max-samples", 200) == 0
    assert len(read_samples(tmp_path / "part" / SAMPLES)) == 200
    # a write torn by the kill
    with open(tmp_path / "part" / SAMPLES, "a") as fh:
        fh.write('{"run_id": "tor')
    assert sim_run(tmp_path / "part") == 0
    assert (tmp_path / "part/analysis.csv").read_bytes() == (tmp_path / "full/analysis.csv").read_bytes()
    # a finished run has nothing left to do
    before = (tmp_path / "part" / SAMPLES).read_bytes()
    assert sim_run(tmp_path / "part") == 0
    assert (tmp_path / "part" / SAMPLES).read_bytes() == before


def test_resume_with_different_settings_is_refused(tmp_path):
    assert sim_run(tmp_path / "r", "--max-samples", 10) == 0
    assert run("run", "--simulated", "calibrated_standard", "--languages", "english,german", "--samples-per-cell", 5,
               "--seed", 3, "--out", tmp_path / "r") == 2
    assert run("run", "--simulated", "calibrated_standard", "--languages", "english", "--samples-per-cell", 4,
               "--seed", 3, "--out", tmp_path / "r") == 2
    assert len(read_samples(tmp_path / "r" / SAMPLES)) == 10


def test_same_period_and_cot_runs(tmp_path):
    assert run("run", "--study", "same-period", "--simulated", "lexicographic", "--languages", "english",
               "--samples-per-cell", 2, "--out", tmp_path / "sp") == 0
    assert len(pd.read_csv(tmp_path / "sp/analysis.csv")) == 49 * 2
    assert run("run", "--study", "cot", "--simulated", "calibrated_cot", "--languages", "english",
               "--samples-per-cell", 2, "--out", tmp_path / "cot") == 0
    docs = pd.read_csv(tmp_path / "cot/documents.csv")
    assert len(docs) == 126 and docs.text.str.startswith("Let me compare").all()
    recs = read_samples(tmp_path / "cot" / SAMPLES)
    assert all(r.cot_explanation and r.raw_reply in ("(1)", "(2)") for r in recs)


# -- live runs against a scripted transport ---------------------------------------------------


@pytest.fixture
def live(monkeypatch):
    monkeypatch.setenv("OPENAI_API_KEY", "test-key")
    state = {}

    def factory(endpoint, key):
        assert key == "test-key"
        return state["transport"]

    monkeypatch.setattr(cli, "make_transport", factory)
    return state


def live_run(out, *extra):
    return run("run", "--live", "--model", "gpt-4", "--languages", "english", "--samples-per-cell", 2, "--out", out, *extra)


def test_live_run_with_worker_pool(tmp_path, live):
    live["transport"] = MockTransport("(2)", delay=0.002)
    assert live_run(tmp_path / "a", "--max-in-flight", 3) == 0
    assert 1 < live["transport"].max_seen_in_flight <= 3
    live["transport"] = MockTransport("(2)")
    assert live_run(tmp_path / "b", "--max-in-flight", 1) == 0
    assert (tmp_path / "a/analysis.csv").read_bytes() == (tmp_path / "b/analysis.csv").read_bytes()
    recs = read_samples(tmp_path / "a" / SAMPLES)
    assert [(r.cell_index, r.slot) for r in recs] == sorted((r.cell_index, r.slot) for r in recs)
    assert all(r.input_tokens > 0 for r in recs)
    manifest = json.loads((tmp_path / "a/manifest.json").read_text())
    assert manifest["study"] == "standard_gpt4" and manifest["respondent"] == "live"
    assert "test-key" not in (tmp_path / "a/manifest.json").read_text()


def test_live_budget_abort_is_resumable(tmp_path, live):
    live["transport"] = MockTransport("(1)")
    assert live_run(tmp_path / "r", "--budget-tokens", 3000) == 1
    done = len(read_samples(tmp_path / "r" / SAMPLES))
    assert 0 < done < 126
    live["transport"] = MockTransport("(1)")
    assert live_run(tmp_path / "r") == 0
    assert len(pd.read_csv(tmp_path / "r/analysis.csv")) == 126


def test_refusals_retried_up_to_cap(tmp_path, live):
    live["transport"] = MockTransport(REFUSAL)
    assert live_run(tmp_path / "r", "--max-attempts", 2) == 0
    recs = read_samples(tmp_path / "r" / SAMPLES)
    assert len(recs) == 126 * 2 and {r.attempt for r in recs} == {1, 2}
    summary = json.loads((tmp_path / "r/summary.json").read_text())
    assert summary["refusals"] == 252 and summary["rows"] == 0


def test_live_cot_records_explanation_and_followup(tmp_path, live):
    live["transport"] = MockTransport([(r"Based on your answer", "(1)"), (r".", "I think waiting is risky. So (1).")])
    assert run("run", "--live", "--study", "cot", "--languages", "english", "--samples-per-cell", 1,
               "--out", tmp_path / "r") == 0
    recs = read_samples(tmp_path / "r" / SAMPLES)
    assert len(recs) == 63
    assert recs[0].cot_explanation.startswith("I think") and recs[0].raw_reply == "(1)"
    assert recs[0].english_translation is None  # English needs no translation


def test_translate_templates(tmp_path, live):
    def reply(payload):
        text = payload["messages"][-1]["content"].split("\n\n", 1)[1]
        # break the placeholders of the same-period template only
        return "BROKEN" if "months from now" in text else "[de] " + text

    live["transport"] = MockTransport(reply)
    assert run("translate-templates", "--languages", "german", "--out", tmp_path) == 0
    assert (tmp_path / "de/cross_period.txt").read_text().startswith("[de]")
    assert (tmp_path / "de/same_period.txt").read_text().startswith("Which do you prefer?")
    assert "protocol.json" in files(tmp_path / "de")


# -- analysis commands -------------------------------------------------------------------------


def test_empty_run_dir_exits_2(tmp_path):
    (tmp_path / "empty").mkdir()
    for cmd in ("estimate", "regress", "report", "topics"):
        assert run(cmd, tmp_path / "empty") == 2


def test_partial_run_without_choices_exits_2(tmp_path):
    assert sim_run(tmp_path / "r", "--max-samples", 0) == 0
    assert run("report", tmp_path / "r") == 2


def test_report_deterministic_and_shaped(tmp_path):
    assert run("run", "--simulated", "ftr_gap", "--languages", "english,german,french,japanese",
               "--samples-per-cell", 30, "--out", tmp_path / "r") == 0
    assert run("report", tmp_path / "r", "--out", tmp_path / "a") == 0
    assert run("report", tmp_path / "r", "--out", tmp_path / "b") == 0
    assert files(tmp_path / "a") == files(tmp_path / "b")
    lang = pd.read_csv(tmp_path / "a/share_later_by_language.csv")
    assert lang.ftr_class.tolist() == ["strong", "strong", "weak", "weak"]
    svg = ET.fromstring((tmp_path / "a/share_later_by_language.svg").read_text())
    bold = [t.text for t in svg.iter("{http://www.w3.org/2000/svg}text") if t.get("font-weight") == "bold"]
    assert bold == ["English", "French"]
    for name in ("delta_by_ftr_plot", "delta_by_language_plot", "share_later_by_interest"):
        assert (tmp_path / "a" / f"{name}.csv").exists()
        ET.fromstring((tmp_path / "a" / f"{name}.svg").read_text())
    ftr = pd.read_csv(tmp_path / "a/delta_by_ftr.csv").set_index("group")
    assert ftr.delta["weak"] < ftr.delta["strong"]
    assert "Observations" in (tmp_path / "a/table_ftr_share.txt").read_text()
    assert len(pd.read_csv(tmp_path / "a/reference_comparison.csv")) >= 3


def test_estimate_default_output_and_groupings(tmp_path):
    assert sim_run(tmp_path / "r") == 0
    assert run("estimate", tmp_path / "r", "--grouping", "ftr") == 0
    out = tmp_path / "r/analysis"
    assert (out / "delta_by_ftr.csv").exists() and not (out / "delta_by_language.csv").exists()


def test_topics_command(tmp_path):
    assert run("run", "--study", "cot", "--simulated", "calibrated_cot", "--languages", "english,german",
               "--samples-per-cell", 3, "--out", tmp_path / "cot") == 0
    assert run("topics", tmp_path / "cot", "--out", tmp_path / "t", "--iters", 20, "--labeling", "auto") == 0
    out = tmp_path / "t"
    for name in ("topic_terms.csv", "doc_topics.csv", "top_words.txt", "labeling.json", "table_topic_ftr.txt",
                 "topic_prevalence_by_delay.svg", "topic_prevalence_by_language.csv", "lda_trace.csv"):
        assert (out / name).exists(), name
    theta = pd.read_csv(out / "doc_topics.csv")
    assert len(theta) == 126 * 3
    assert run("topics", tmp_path / "cot", "--out", tmp_path / "t2", "--iters", 5, "--labeling", tmp_path / "nope.yaml") == 2
    assert run("topics", tmp_path / "cot", "--out", tmp_path / "t3", "--iters", 5, "--k", 3) == 1  # default map has 4 topics
