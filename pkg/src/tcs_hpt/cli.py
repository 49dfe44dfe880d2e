"""Command-line front end: run, summarize, probe, export.

Exit codes: 0 success, 2 invalid input (experiment file, log, arguments),
3 runtime abort (backend unavailable, fallback abort, no completed trials).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema

from .agents import (
    AnalysisReport,
    bootstrap_analysis,
    build_optimizer_prompt,
    probe_attempts,
)
from .backend import DEFAULT_MAX_TOKENS, DEFAULT_TEMPERATURE, DEFAULT_TIMEOUT_S, make_backend
from .core import (
    Direction,
    Goal,
    HPTError,
    InvalidSearchSpace,
    LogFormatError,
    SearchSpace,
    best_so_far,
    read_log,
)
from .executor import Objective, ObjectiveKind, get_builtin
from .orchestrator import Fallback, Mode, OnExhaust, RunConfig, aggregate, repeat_runs
from .tcs import render_report, summarize

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_ABORT = 3

log = logging.getLogger("tcs_hpt")


class InvalidInput(Exception):
    pass


def load_schema() -> dict:
    text = resources.files("tcs_hpt").joinpath("schema", "experiment.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def read_experiment(path: str | Path) -> dict:
    """Parse and schema-validate an experiment file; raises InvalidInput."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise InvalidInput(f"{path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{path}: schema validation failed:"]
        for e in errors:
            where = "/".join(map(str, e.absolute_path)) or "(root)"
            lines.append(f"  {where}: {e.message}")
        raise InvalidInput("\n".join(lines))
    return doc


def _backend_from(agent: dict):
    return make_backend(agent["backend"], agent.get("base_url"), agent.get("api_key_env"), agent.get("policy"))


def build_run_config(doc: dict, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Experiment document plus CLI overrides -> RunConfig; raises InvalidInput."""
    o = {k: v for k, v in (overrides or {}).items() if v is not None}
    try:
        goal = Goal(doc["goal"]["metric_name"], Direction(doc["goal"]["direction"]),
                    float(doc["goal"]["target_value"]))
        space = SearchSpace.from_list(doc["space"])
        objective = Objective.from_dict(doc["objective"])
        if objective.kind is ObjectiveKind.BUILTIN:
            get_builtin(objective.builtin_name)
    except (InvalidSearchSpace, ValueError, HPTError) as exc:
        raise InvalidInput(str(exc)) from None
    agents = doc.get("agents", {})
    budget = doc.get("budget", {})
    fallback = doc.get("fallback", {})
    mode = Mode(o.get("mode", doc.get("mode", "tcs")))
    specs = {}
    for role in ("optimizer", "analysis"):
        spec = dict(agents.get(role, {}))
        if "backend" in o:
            spec["backend"] = o["backend"]
        if "model" in o:
            spec["model"] = o["model"]
        specs[role] = spec
    backends = {}
    if mode is not Mode.RANDOM:
        for role, spec in specs.items():
            if "backend" not in spec:
                raise InvalidInput(f"mode {mode.value} needs agents.{role}.backend (or --backend)")
            backends[role] = _backend_from(spec)
    out = o.get("out", doc.get("output_dir"))
    try:
        return RunConfig(
            goal=goal,
            space=space,
            objective=objective,
            optimizer_backend=backends.get("optimizer"),
            analysis_backend=backends.get("analysis"),
            optimizer_model=specs["optimizer"].get("model", ""),
            analysis_model=specs["analysis"].get("model", ""),
            trials=int(o.get("trials", budget.get("trials", 10))),
            runs=int(o.get("runs", budget.get("runs", 5))),
            seed=int(o.get("seed", doc.get("seed", 0))),
            mode=mode,
            fallback=Fallback(int(fallback.get("max_retries", 2)),
                              OnExhaust(fallback.get("on_exhaust", "random_sample"))),
            temperature=float(agents.get("temperature", DEFAULT_TEMPERATURE)),
            max_tokens=agents.get("max_tokens", DEFAULT_MAX_TOKENS),
            timeout_s=float(agents.get("timeout_s", DEFAULT_TIMEOUT_S)),
            output_dir=Path(out) if out else None,
        )
    except ValueError as exc:
        raise InvalidInput(str(exc)) from None


def cmd_run(args) -> int:
    doc = read_experiment(args.experiment)
    cfg = build_run_config(doc, {
        "trials": args.trials, "runs": args.runs, "seed": args.seed, "mode": args.mode,
        "backend": args.backend, "model": args.model, "out": args.out,
    })
    if cfg.output_dir is None:
        cfg.output_dir = Path("runs") / Path(args.experiment).stem
    metric = cfg.goal.metric_name
    try:
        agg = repeat_runs(cfg, workers=args.workers)
    except HPTError as exc:
        partial = getattr(exc, "partial", [])
        for o in partial:
            print(f"run {o.log.run_id} (seed {o.log.seed}): best {metric} = {o.best_value!r} "
                  f"at trial {o.best.index}")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ABORT
    for o in agg.outcomes:
        print(f"run {o.log.run_id} (seed {o.log.seed}): best {metric} = {o.best_value!r} at trial {o.best.index}")
    note = " (single run; std undefined)" if agg.degenerate else ""
    print(f"mode {cfg.mode.name}: {metric} mean ± std = {agg.mean_best!r} ± {agg.std_best!r} "
          f"over {len(agg.outcomes)} runs{note}")
    print(f"logs and manifest written to {cfg.output_dir}")
    return EXIT_OK


def cmd_summarize(args) -> int:
    try:
        run_log = read_log(args.log)
    except OSError as exc:
        raise InvalidInput(f"{args.log}: {exc.strerror or exc}") from None
    except LogFormatError as exc:
        raise InvalidInput(f"{args.log}: {exc}") from None
    if not run_log.trials:
        raise InvalidInput(f"{args.log}: log has no trials")
    report = summarize(run_log, budget=args.budget)
    sys.stdout.write(render_report(report))
    return EXIT_OK


def _probe_param(space: SearchSpace, name: str | None):
    if name is not None:
        if name not in space:
            raise InvalidInput(f"unknown parameter {name!r}")
        return space[name]
    free = [p for p in space if not p.fixed]
    for p in free:
        if p.name.lower() in ("lr", "learning_rate"):
            return p
    return free[0]


def cmd_probe(args) -> int:
    doc = read_experiment(args.experiment)
    cfg = build_run_config(doc, {"backend": args.backend, "model": args.model, "mode": "tcs"})
    param = _probe_param(cfg.space, args.param)
    if args.log:
        try:
            history = read_log(args.log)
        except (OSError, LogFormatError) as exc:
            raise InvalidInput(f"{args.log}: {exc}") from None
        report = summarize(history, cfg.space, cfg.goal)
        analysis = AnalysisReport(raw=render_report(report), structured=False)
    else:
        report, analysis = None, bootstrap_analysis(cfg.space, cfg.goal)
    prompt = build_optimizer_prompt(report, analysis, cfg.space, cfg.goal)
    attempts = probe_attempts(cfg.optimizer_backend, prompt, args.n, param, model=cfg.optimizer_model,
                              temperature=cfg.temperature, max_tokens=cfg.max_tokens, timeout_s=cfg.timeout_s)
    for a in attempts:
        shown = repr(a.value) if a.value is not None else "invalid"
        print(f"attempt {a.attempt}: {param.name} = {shown}" + (f"  ({a.error})" if a.error else ""))
    valid = sum(a.value is not None for a in attempts)
    print(f"valid responses: n={valid} of {len(attempts)}")
    out = Path(args.csv) if args.csv else (cfg.output_dir or Path(".")) / f"probe_{param.name}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["attempt", "param", "value", "valid", "error"])
        for a in attempts:
            w.writerow([a.attempt, param.name, "" if a.value is None else a.value,
                        int(a.value is not None), a.error])
    print(f"csv written to {out}")
    return EXIT_OK


EXPORT_COLUMNS = ["row_type", "group", "run_id", "seed", "trial", "status", "metric",
                  "best_so_far", "mean_best", "std_best", "n_runs"]


def export_rows(paths: list[str]) -> list[dict]:
    """Best-so-far rows per trial per run, then one summary row per group (parent directory)."""
    groups: dict[str, list] = {}
    for p in paths:
        try:
            groups.setdefault(Path(p).resolve().parent.name, []).append(read_log(p))
        except (OSError, LogFormatError) as exc:
            raise InvalidInput(f"{p}: {exc}") from None
    rows = []
    for group, logs in groups.items():
        bests = []
        for lg in logs:
            name = lg.goal.metric_name
            values = [t.result.metric(name) for t in lg.trials]
            curve = best_so_far(values, lg.goal.direction)
            for t, v, b in zip(lg.trials, values, curve):
                rows.append({"row_type": "trial", "group": group, "run_id": lg.run_id, "seed": lg.seed,
                             "trial": t.index, "status": t.result.status.value,
                             "metric": "" if v is None else repr(v), "best_so_far": "" if b is None else repr(b)})
            if curve and curve[-1] is not None:
                bests.append(curve[-1])
        if bests:
            mean, std, _ = aggregate(bests)
            rows.append({"row_type": "summary", "group": group, "mean_best": repr(mean),
                         "std_best": repr(std), "n_runs": len(bests)})
    return rows


def cmd_export(args) -> int:
    rows = export_rows(args.logs)
    f = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.DictWriter(f, EXPORT_COLUMNS, restval="", lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    finally:
        if args.out:
            f.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tcs-hpt", description="LLM-driven hyperparameter tuning")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment file (repeated independent runs)")
    p.add_argument("experiment", help="experiment JSON file")
    p.add_argument("--trials", type=int, help="trials per run")
    p.add_argument("--runs", type=int, help="number of independent runs")
    p.add_argument("--seed", type=int, help="base seed; run k uses seed + k")
    p.add_argument("--mode", choices=[m.value for m in Mode])
    p.add_argument("--backend", choices=["openai", "ollama", "scripted"], help="backend for both agents")
    p.add_argument("--model", help="model name for both agents")
    p.add_argument("--out", help="output directory for logs and manifest")
    p.add_argument("--workers", type=int, default=1, help="runs executed concurrently")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("summarize", help="print the trajectory summary of a run log")
    p.add_argument("log", help="JSONL run log")
    p.add_argument("--budget", type=int, help="trial budget (default: from the log header)")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("probe", help="send one optimizer prompt repeatedly and record the proposed values")
    p.add_argument("experiment", help="experiment JSON file (agents.optimizer is used)")
    p.add_argument("--n", type=int, default=10, help="number of repeats")
    p.add_argument("--param", help="parameter to extract (default: lr/learning_rate or first optimizable)")
    p.add_argument("--log", help="run log whose trajectory summary is included in the prompt")
    p.add_argument("--backend", choices=["openai", "ollama", "scripted"])
    p.add_argument("--model")
    p.add_argument("--csv", help="CSV output path")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("export", help="export best-so-far curves and mean ± std as CSV")
    p.add_argument("logs", nargs="+", help="JSONL run logs; grouped by parent directory")
    p.add_argument("--format", choices=["csv"], default="csv")
    p.add_argument("--out", help="output file (default: stdout)")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "n", 1) is not None and getattr(args, "n", 1) < 1:
        print("error: --n must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except InvalidInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except HPTError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
