"""Command-line entry point.

Subcommands: grid, run, estimate, regress, topics, report, translate-templates.
Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

``run`` settings come from built-in defaults, then an optional YAML config
file, then command-line flags, each overriding the one before.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import pandas as pd
import yaml

from .agents import bundled_populations, load_population
from .client import DEFAULT_ENDPOINT, DEFAULT_KEY_ENV, ChatClient, HttpTransport, TransportPolicy
from .design import UNITS, grid_to_csv, render_reward_table, select_languages
from .prompting import ENGLISH_PROTOCOL, TemplateError, _asset, check_template
from .report import (
    MissingInput,
    TopicSettings,
    estimate_outputs,
    load_documents,
    load_runs,
    regress_outputs,
    report_outputs,
    topic_outputs,
)
from .runner import LiveRespondent, RunPlan, SimulatedRespondent, build_cells, execute
from .storage import MANIFEST, GridMismatch, RunManifest, grid_hash

log = logging.getLogger("timepref")

STUDY_KINDS = ("standard", "cot", "same-period")
DEFAULT_POPULATION = {"standard": "calibrated_standard", "cot": "calibrated_cot", "same-period": "lexicographic"}
DEFAULT_SAMPLES = {"standard": 100, "cot": 10, "same-period": 100}


class UsageError(Exception):
    """Bad flags, config or inputs: exit code 2."""


@dataclass
class RunConfig:
    study: str = "standard"
    languages: list[str] | None = None
    samples_per_cell: int | None = None
    respondent: str = "simulated"  # simulated | live
    population: str | None = None
    model_id: str = "gpt-4"
    unit: str = "tokens"
    seed: int = 0
    budget_tokens: int | None = None
    max_in_flight: int = 4
    retry_max: int = 3
    timeout: float = 60.0
    max_attempts: int = 3
    temperature: float = 1.0
    template_dir: str | None = None
    endpoint: str = DEFAULT_ENDPOINT
    key_env: str = DEFAULT_KEY_ENV
    out: str | None = None

    def __post_init__(self):
        if self.study not in STUDY_KINDS:
            raise UsageError(f"study must be one of {STUDY_KINDS}, got {self.study!r}")
        if self.respondent not in ("simulated", "live"):
            raise UsageError(f"respondent must be 'simulated' or 'live', got {self.respondent!r}")
        if self.samples_per_cell is None:
            self.samples_per_cell = DEFAULT_SAMPLES[self.study]
        if int(self.samples_per_cell) <= 0:
            raise UsageError("samples_per_cell must be positive")
        if self.respondent == "simulated" and self.population is None:
            self.population = DEFAULT_POPULATION[self.study]
        if self.unit not in UNITS:
            raise UsageError(f"unit must be one of {UNITS}")
        if isinstance(self.languages, str):
            self.languages = [s.strip() for s in self.languages.split(",")]
        if self.max_in_flight < 1 or self.max_attempts < 1:
            raise UsageError("max_in_flight and max_attempts must be at least 1")

    @property
    def protocol(self) -> str:
        return "cot" if self.study == "cot" else "standard"

    @property
    def design(self) -> str:
        return "same_period" if self.study == "same-period" else "cross_period"

    @property
    def manifest_study(self) -> str:
        if self.respondent == "simulated":
            return "simulated"
        if self.study == "cot":
            return "cot_gpt4"
        if self.study == "same-period":
            return "same_period"
        return "standard_gpt35" if "3.5" in self.model_id else "standard_gpt4"

    @property
    def respondent_id(self) -> str:
        return f"simulated:{self.population}" if self.respondent == "simulated" else self.model_id


CONFIG_KEYS = {f.name for f in fields(RunConfig)}


def load_config_file(path: str | Path) -> dict:
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must be a mapping of settings")
    data = {str(k).replace("-", "_"): v for k, v in data.items()}
    unknown = sorted(set(data) - CONFIG_KEYS)
    if unknown:
        raise UsageError(f"unknown config keys in {path}: {', '.join(unknown)}")
    return data


def resolve_config(file_values: dict, flag_values: dict) -> RunConfig:
    """Defaults, then file values, then flags that were given explicitly."""
    merged = dict(file_values)
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    try:
        return RunConfig(**merged)
    except TypeError as exc:
        raise UsageError(str(exc)) from exc


def _languages(selection):
    try:
        return select_languages(selection)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from exc


# -- commands ------------------------------------------------------------------------------


def cmd_grid(args) -> int:
    langs = _languages(args.languages)
    cells = build_cells("same_period" if args.same_period else "cross_period", langs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    name = "grid_same_period" if args.same_period else "grid_cross_period"
    (out / f"{name}.csv").write_text(grid_to_csv(cells), encoding="utf-8")
    (out / "reward_table.txt").write_text(render_reward_table(), encoding="utf-8")
    print(f"{len(cells)} cells for {len(langs)} language(s) -> {out / (name + '.csv')}")
    return 0


def _make_client(cfg: RunConfig) -> ChatClient:
    key = os.environ.get(cfg.key_env)
    if not key:
        raise UsageError(f"live runs need an API key in the {cfg.key_env} environment variable")
    transport = make_transport(cfg.endpoint, key)
    policy = TransportPolicy(max_in_flight=cfg.max_in_flight, retry_max=cfg.retry_max, timeout=cfg.timeout)
    return ChatClient(transport, policy, budget_tokens=cfg.budget_tokens)


def make_transport(endpoint: str, key: str):
    return HttpTransport(endpoint, key)


def _open_manifest(cfg: RunConfig, run_dir: Path, cells) -> RunManifest:
    if (run_dir / MANIFEST).is_file():
        m = RunManifest.load(run_dir)
        if m.grid_hash != grid_hash(cells):
            raise GridMismatch(f"{run_dir} was planned on a different grid; use a new output directory")
        expected = {
            "samples_per_cell": cfg.samples_per_cell, "protocol": cfg.protocol, "design": cfg.design,
            "model_id": cfg.respondent_id, "seed": cfg.seed, "unit": cfg.unit, "max_attempts": cfg.max_attempts,
        }
        diff = [f"{k}: run has {getattr(m, k)!r}, config has {v!r}" for k, v in expected.items() if getattr(m, k) != v]
        if diff:
            raise UsageError("config does not match the existing run:\n  " + "\n  ".join(diff))
        return m
    m = RunManifest(
        study=cfg.manifest_study, grid_hash=grid_hash(cells), samples_per_cell=cfg.samples_per_cell,
        model_id=cfg.respondent_id, protocol=cfg.protocol, design=cfg.design,
        languages=sorted({c.language.code for c in cells}), unit=cfg.unit, seed=cfg.seed,
        respondent=cfg.respondent, max_attempts=cfg.max_attempts,
    )
    m.save(run_dir)
    return m


def cmd_run(args) -> int:
    file_values = load_config_file(args.config) if args.config else {}
    flags = {
        "study": args.study, "languages": args.languages, "samples_per_cell": args.samples_per_cell,
        "model_id": args.model, "unit": args.unit, "seed": args.seed, "budget_tokens": args.budget_tokens,
        "max_in_flight": args.max_in_flight, "max_attempts": args.max_attempts, "template_dir": args.template_dir,
        "out": args.out,
    }
    if args.simulated:
        flags.update(respondent="simulated", population=args.simulated)
    if args.live:
        flags["respondent"] = "live"
    cfg = resolve_config(file_values, flags)
    if not cfg.out:
        raise UsageError("no output directory: pass --out or set 'out' in the config")
    cells = build_cells(cfg.design, _languages(cfg.languages))
    if cfg.respondent == "live":
        client = _make_client(cfg)
        respondent = LiveRespondent(client, cfg.model_id, cfg.temperature)
        workers = cfg.max_in_flight
    else:
        try:
            respondent = SimulatedRespondent(load_population(cfg.population))
        except FileNotFoundError as exc:
            raise UsageError(f"{exc}; bundled populations: {', '.join(bundled_populations())}") from exc
        workers = 1
    run_dir = Path(cfg.out)
    manifest = _open_manifest(cfg, run_dir, cells)
    plan = RunPlan(manifest, cells, cfg.template_dir)
    result = execute(run_dir, plan, respondent, workers=workers, max_samples=args.max_samples)
    s = result.summary
    print(f"{run_dir}: {s['records']} records, {s['rows']} parsed choices "
          f"({s['later']} later, {s['sooner']} sooner, {s['refusals']} refusals, {s['unparseable']} unparseable); "
          f"usage tokens in={result.tokens[0]} out={result.tokens[1]}")
    if result.stopped == "budget":
        print("token budget exhausted; rerun the same command to resume", file=sys.stderr)
        return 1
    if not result.complete:
        print(f"run incomplete ({result.stopped or 'stopped'}); rerun the same command to resume", file=sys.stderr)
    return 0


def _out_dir(args) -> Path:
    return Path(args.out) if args.out else Path(args.run_dirs[0]) / "analysis"


def cmd_estimate(args) -> int:
    _, frame = load_runs(args.run_dirs)
    groupings = ("ftr", "language") if args.grouping == "both" else (args.grouping,)
    out = _out_dir(args)
    results = estimate_outputs(frame, out, groupings)
    for grouping, fits in results.items():
        for g in fits:
            if g.fit is None:
                print(f"{grouping:8s} {g.group:8s} failed: {g.error}")
            else:
                lo, hi = g.fit.ci95_delta
                print(f"{grouping:8s} {g.group:8s} delta={g.fit.delta_hat:.3f} [{lo:.3f}, {hi:.3f}] mu={g.fit.mu_hat:.3f}")
    return 0


def cmd_regress(args) -> int:
    _, frame = load_runs(args.run_dirs)
    out = _out_dir(args)
    tables = regress_outputs(frame, out)
    print(f"wrote {', '.join(sorted(tables))} to {out}")
    return 0


def cmd_topics(args) -> int:
    docs = pd.concat([load_documents(d) for d in args.run_dirs], ignore_index=True)
    labeling = args.labeling
    if labeling not in ("default", "auto") and not Path(labeling).is_file():
        raise UsageError(f"labeling must be 'default', 'auto' or a YAML file; {labeling} not found")
    settings = TopicSettings(K=args.k, iters=args.iters, alpha=args.alpha, beta=args.beta, seed=args.seed,
                             infer_iters=args.infer_iters, burn_in=args.burn_in, labeling=labeling,
                             stopwords=args.stopwords, context_stopwords=args.context_stopwords)
    out = _out_dir(args)
    res = topic_outputs(docs, out, settings)
    coef = res["table"].columns
    print(f"LDA K={settings.K} over {res['corpus'].n_docs} documents, {res['corpus'].n_tokens} tokens; "
          + ", ".join(f"{lab}: strong FTR {fit.coef[0]:+.3f}" for lab, fit in coef))
    return 0


def cmd_report(args) -> int:
    out = _out_dir(args)
    res = report_outputs(args.run_dirs, out)
    print(res["comparison"].to_string(index=False))
    print(f"report written to {out / 'report.md'}")
    return 0


def cmd_translate_templates(args) -> int:
    """Translate the English question templates and protocol texts into other languages."""
    cfg = resolve_config(load_config_file(args.config) if args.config else {},
                         {"respondent": "live", "model_id": args.model, "budget_tokens": args.budget_tokens})
    langs = [lang for lang in _languages(args.languages) if lang.code != "en"]
    client = _make_client(cfg)
    out = Path(args.out)
    for lang in langs:
        folder = out / lang.code
        folder.mkdir(parents=True, exist_ok=True)
        for study in ("cross_period", "same_period"):
            body = _asset("en", f"{study}.txt").read_text(encoding="utf-8")
            translated = client.translate(body, lang, cfg.model_id).strip() + "\n"
            try:
                check_template(translated)
            except TemplateError as exc:
                print(f"{lang.code}/{study}: translation broke the placeholders ({exc}); keeping English", file=sys.stderr)
                translated = body
            (folder / f"{study}.txt").write_text(translated, encoding="utf-8")
        texts = {k: client.translate(v, lang, cfg.model_id).strip() for k, v in ENGLISH_PROTOCOL.items()}
        (folder / "protocol.json").write_text(json.dumps(texts, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
        print(f"{lang.code}: templates written to {folder}")
    print(f"usage: {client.usage.as_dict()}")
    return 0


# -- parser ----------------------------------------------------------------------------------


def _langs_arg(value: str) -> list[str]:
    return [s for s in value.split(",") if s.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="timepref", description="Intertemporal-choice survey harness for chat models.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("grid", help="write the experiment grid and the delayed-reward table")
    g.add_argument("--same-period", action="store_true")
    g.add_argument("--languages", type=_langs_arg, help="comma-separated codes or names (default: all)")
    g.add_argument("--out", default=".")
    g.set_defaults(func=cmd_grid)

    r = sub.add_parser("run", help="execute or resume a study")
    r.add_argument("--config", help="YAML file with run settings")
    r.add_argument("--out", help="run directory")
    r.add_argument("--study", choices=STUDY_KINDS)
    r.add_argument("--languages", type=_langs_arg)
    r.add_argument("--samples-per-cell", type=int)
    who = r.add_mutually_exclusive_group()
    who.add_argument("--simulated", metavar="POPULATION", help=f"bundled population ({', '.join(bundled_populations())}) or JSON path")
    who.add_argument("--live", action="store_true", help="query the chat model (needs the API key variable)")
    r.add_argument("--model")
    r.add_argument("--unit", choices=UNITS)
    r.add_argument("--seed", type=int)
    r.add_argument("--budget-tokens", type=int)
    r.add_argument("--max-in-flight", type=int)
    r.add_argument("--max-attempts", type=int)
    r.add_argument("--template-dir")
    r.add_argument("--max-samples", type=int, help="stop after this many new samples (resume later)")
    r.set_defaults(func=cmd_run)

    for name, func, helptext in (("estimate", cmd_estimate, "fit discount rates per FTR pool and language"),
                                 ("regress", cmd_regress, "regression tables"),
                                 ("report", cmd_report, "figures, tables and the reference comparison")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("run_dirs", nargs="+")
        s.add_argument("--out", help="output directory (default: <first run>/analysis)")
        if name == "estimate":
            s.add_argument("--grouping", choices=("ftr", "language", "both"), default="both")
        s.set_defaults(func=func)

    t = sub.add_parser("topics", help="topic model of chain-of-thought explanations")
    t.add_argument("run_dirs", nargs="+")
    t.add_argument("--out")
    t.add_argument("--k", type=int, default=4)
    t.add_argument("--iters", type=int, default=1000)
    t.add_argument("--alpha", type=float, help="document-topic prior (default 50/K)")
    t.add_argument("--beta", type=float, default=0.01)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--infer-iters", type=int, default=50)
    t.add_argument("--burn-in", type=int, default=10)
    t.add_argument("--labeling", default="default", help="'default', 'auto' or a YAML merge map")
    t.add_argument("--stopwords")
    t.add_argument("--context-stopwords")
    t.set_defaults(func=cmd_topics)

    tr = sub.add_parser("translate-templates", help="machine-translate templates for the other languages")
    tr.add_argument("--config")
    tr.add_argument("--languages", type=_langs_arg)
    tr.add_argument("--model", default="gpt-4")
    tr.add_argument("--budget-tokens", type=int)
    tr.add_argument("--out", required=True)
    tr.set_defaults(func=cmd_translate_templates)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, MissingInput, GridMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # any other failure is a runtime error
        log.debug("command failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
