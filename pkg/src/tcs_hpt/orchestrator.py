"""The tuning loop, its no-summarizer ablation, random search, and multi-run aggregation."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import random
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any

from .agents import (
    CORRECTIVE_INSTRUCTION,
    AnalysisReport,
    ParseFailure,
    build_analysis_prompts,
    build_optimizer_prompt,
    bootstrap_analysis,
    parse_analysis_response,
    parse_optimizer_response,
)
from .backend import (
    DEFAULT_MAX_TOKENS,
    DEFAULT_TEMPERATURE,
    DEFAULT_TIMEOUT_S,
    Backend,
    BackendError,
    ChatMessage,
    ChatRequest,
    Role,
)
from .core import (
    ConfigError,
    Configuration,
    ExperimentLog,
    Goal,
    HPTError,
    Kind,
    ParamDef,
    Proposer,
    Scale,
    SearchSpace,
    TrialRecord,
    best_so_far,
    best_trial,
    round_half_away,
    write_log,
)
from .executor import Objective, run_trial
from .tcs import fmt_real, summarize

log = logging.getLogger(__name__)


class Abort(HPTError):
    pass


class BackendUnavailable(HPTError):
    pass


class Mode(str, Enum):
    TCS = "tcs"
    NO_TCS = "no-tcs"
    RANDOM = "random"


class OnExhaust(str, Enum):
    RANDOM_SAMPLE = "random_sample"
    ABORT = "abort"


@dataclass(frozen=True)
class Fallback:
    max_retries: int = 2
    on_exhaust: OnExhaust = OnExhaust.RANDOM_SAMPLE


@dataclass
class RunConfig:
    goal: Goal
    space: SearchSpace
    objective: Objective
    optimizer_backend: Backend | None = None
    analysis_backend: Backend | None = None
    optimizer_model: str = ""
    analysis_model: str = ""
    trials: int = 10
    runs: int = 5
    seed: int = 0
    mode: Mode = Mode.TCS
    fallback: Fallback = field(default_factory=Fallback)
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int | None = DEFAULT_MAX_TOKENS
    timeout_s: float = DEFAULT_TIMEOUT_S
    output_dir: Path | None = None

    def __post_init__(self):
        self.mode = Mode(self.mode)
        if self.trials < 1 or self.runs < 1:
            raise ValueError("trials and runs must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.mode is not Mode.RANDOM and (self.optimizer_backend is None or self.analysis_backend is None):
            raise ValueError(f"mode {self.mode.value} needs optimizer and analysis backends")

    def fingerprint(self) -> dict:
        """Everything that determines a run's outcome, in JSON form."""
        return {
            "goal": self.goal.to_dict(),
            "space": self.space.to_list(),
            "objective": self.objective.to_dict(),
            "optimizer_model": self.optimizer_model,
            "analysis_model": self.analysis_model,
            "trials": self.trials,
            "runs": self.runs,
            "seed": self.seed,
            "mode": self.mode.value,
            "fallback": {"max_retries": self.fallback.max_retries,
                         "on_exhaust": self.fallback.on_exhaust.value},
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.fingerprint(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class RunOutcome:
    log: ExperimentLog
    best: TrialRecord
    per_trial_best_so_far: list[float | None]
    backend_calls: int = 0
    log_path: Path | None = None

    @property
    def best_value(self) -> float:
        return self.best.result.final_metrics[self.log.goal.metric_name]


@dataclass
class RepeatOutcome:
    outcomes: list[RunOutcome]
    mean_best: float
    std_best: float
    degenerate: bool  # True when std is undefined (single run)
    manifest_path: Path | None = None


class RepeatAborted(HPTError):
    def __init__(self, message: str, partial: list[RunOutcome]):
        super().__init__(message)
        self.partial = partial


def sample_param(p: ParamDef, rng: random.Random):
    if p.fixed:
        return p.fixed_value
    if p.kind is Kind.CHOICE:
        return p.values[rng.randrange(len(p.values))]
    if p.kind is Kind.INT:
        if p.scale is Scale.LOG:
            x = math.exp(rng.uniform(math.log(p.low), math.log(p.high)))
            return min(max(round_half_away(x), p.low), p.high)
        return rng.randint(p.low, p.high)
    if p.scale is Scale.LOG:
        return math.exp(rng.uniform(math.log(p.low), math.log(p.high)))
    return rng.uniform(p.low, p.high)


def sample_config(space: SearchSpace, rng: random.Random) -> Configuration:
    """Independent uniform draw: log-uniform on LOG scales, fixed parameters pinned."""
    return Configuration({p.name: sample_param(p, rng) for p in space})


def _finish(log: ExperimentLog, calls: int = 0) -> RunOutcome:
    best = best_trial(log)
    curve = best_so_far([t.result.metric(log.goal.metric_name) for t in log.trials], log.goal.direction)
    return RunOutcome(log, best, curve, calls)


def _new_log(cfg: RunConfig, run_index: int) -> ExperimentLog:
    return ExperimentLog(
        run_id=f"{cfg.mode.value}-s{cfg.seed}-r{run_index}",
        seed=cfg.seed,
        goal=cfg.goal,
        space=cfg.space,
        meta={"budget": cfg.trials, "mode": cfg.mode.value},
    )


def random_search(cfg: RunConfig, run_index: int = 0) -> RunOutcome:
    rng = random.Random(cfg.seed)
    log = _new_log(replace(cfg, mode=Mode.RANDOM), run_index)
    try:
        for t in range(1, cfg.trials + 1):
            config = sample_config(cfg.space, rng)
            result = run_trial(cfg.objective, config, cfg.goal)
            log.append(TrialRecord(t, config, result, "random search sample", Proposer.SCRIPTED))
    finally:
        path = _persist(cfg, log, run_index)
    outcome = _finish(log)
    outcome.log_path = path
    return outcome


def _persist(cfg: RunConfig, log: ExperimentLog, run_index: int) -> Path | None:
    if cfg.output_dir is None:
        return None
    return write_log(log, Path(cfg.output_dir) / f"run_{run_index:02d}_seed{cfg.seed}.jsonl")


class _Loop:
    """State of one tuning run: counts backend calls and owns the seeded generator."""

    def __init__(self, cfg: RunConfig, run_index: int):
        self.cfg = cfg
        self.rng = random.Random(cfg.seed)
        self.log = _new_log(cfg, run_index)
        self.calls = 0

    def _ask(self, backend: Backend, request: ChatRequest, role: str) -> str:
        self.calls += 1
        try:
            return backend.complete(request).content
        except BackendError as exc:
            raise BackendUnavailable(f"{role} backend failed: {exc}") from exc

    def _request(self, prompt, model: str) -> ChatRequest:
        c = self.cfg
        return ChatRequest.from_prompt(prompt, model, temperature=c.temperature,
                                       max_tokens=c.max_tokens, timeout_s=c.timeout_s)

    def propose(self, prompt) -> tuple[Configuration, str, Proposer]:
        c = self.cfg
        previous = self.log.trials[-1].config if self.log.trials else None
        request = self._request(prompt, c.optimizer_model)
        proposer = Proposer.SCRIPTED if getattr(c.optimizer_backend, "is_scripted", False) else Proposer.LLM
        for attempt in range(c.fallback.max_retries + 1):
            text = self._ask(c.optimizer_backend, request, "optimizer")
            try:
                proposal = parse_optimizer_response(text, c.space, previous)
            except (ParseFailure, ConfigError, ValueError) as exc:
                log.info("optimizer reply unusable (attempt %d): %s", attempt + 1, exc)
                request = request.extended(
                    ChatMessage(Role.ASSISTANT, text or "(empty)"),
                    ChatMessage(Role.USER, CORRECTIVE_INSTRUCTION.format(error=exc)),
                )
                continue
            for w in proposal.warnings:
                log.info("config warning: %s %s", w.param, w.message)
            return proposal.config, proposal.reasoning, proposer
        if c.fallback.on_exhaust is OnExhaust.ABORT:
            raise Abort(f"optimizer gave no usable reply after {c.fallback.max_retries} retries")
        return sample_config(c.space, self.rng), "fallback: random sample after unusable replies", \
            Proposer.FALLBACK_RANDOM

    def analyze(self, report) -> AnalysisReport:
        c = self.cfg
        if c.mode is Mode.NO_TCS:
            context = "\n".join(json.dumps(t.to_dict(), sort_keys=True) for t in self.log.trials)
        else:
            context = report
        prompt = build_analysis_prompts(context, c.space, c.goal)
        return parse_analysis_response(self._ask(c.analysis_backend, self._request(prompt, c.analysis_model),
                                                 "analysis"))

    def raw_performance(self) -> str:
        # context-blind stand-in for the summarizer-derived performance block
        last = self.log.trials[-1]
        v = last.result.metric(self.cfg.goal.metric_name)
        return f"latest trial #{last.index}: {self.cfg.goal.metric_name} = " + \
            (fmt_real(v) if v is not None else "failed")

    def run(self) -> RunOutcome:
        c = self.cfg
        analysis = bootstrap_analysis(c.space, c.goal)
        report = None
        for t in range(1, c.trials + 1):
            performance = None
            if c.mode is Mode.NO_TCS and self.log.trials:
                performance = self.raw_performance()
            prompt = build_optimizer_prompt(report, analysis, c.space, c.goal, performance=performance)
            config, justification, proposer = self.propose(prompt)
            result = run_trial(c.objective, config, c.goal)
            self.log.append(TrialRecord(t, config, result, justification, proposer))
            report = summarize(self.log, c.space, c.goal, c.trials)
            analysis = self.analyze(report)
        return _finish(self.log, self.calls)


def run_hpt(cfg: RunConfig, run_index: int = 0) -> RunOutcome:
    """One tuning run of ``cfg.trials`` trials (random search when mode is RANDOM)."""
    if cfg.mode is Mode.RANDOM:
        return random_search(cfg, run_index)
    loop = _Loop(cfg, run_index)
    try:
        outcome = loop.run()
    finally:
        path = _persist(cfg, loop.log, run_index)
    outcome.log_path = path
    return outcome


def aggregate(values: list[float]) -> tuple[float, float, bool]:
    """Sample mean and n-1 standard deviation; std is 0 and flagged degenerate for n == 1."""
    mean = statistics.fmean(values)
    if len(values) < 2:
        return mean, 0.0, True
    return mean, statistics.stdev(values), False


def repeat_runs(cfg: RunConfig, workers: int = 1) -> RepeatOutcome:
    """``cfg.runs`` independent runs with seeds seed, seed+1, ..."""
    configs = [replace(cfg, seed=cfg.seed + k) for k in range(cfg.runs)]
    outcomes: list[RunOutcome] = []
    error: Exception | None = None
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            futures = [pool.submit(run_hpt, c, k) for k, c in enumerate(configs)]
            for f in futures:
                try:
                    outcomes.append(f.result())
                except HPTError as exc:
                    error = error or exc
    else:
        for k, c in enumerate(configs):
            try:
                outcomes.append(run_hpt(c, k))
            except HPTError as exc:
                error = exc
                break
    if error is not None:
        if cfg.output_dir is not None:
            write_manifest(cfg, outcomes, None, aborted=str(error))
        raise RepeatAborted(f"run aborted: {error}", outcomes) from error
    mean, std, degenerate = aggregate([o.best_value for o in outcomes])
    out = RepeatOutcome(outcomes, mean, std, degenerate)
    if cfg.output_dir is not None:
        out.manifest_path = write_manifest(cfg, outcomes, out)
    return out


def write_manifest(cfg: RunConfig, outcomes: list[RunOutcome], agg: RepeatOutcome | None,
                   aborted: str | None = None) -> Path:
    manifest: dict[str, Any] = {
        "config_hash": cfg.config_hash(),
        "config": cfg.fingerprint(),
        "mode": cfg.mode.name,
        "seeds": [cfg.seed + k for k in range(cfg.runs)],
        "outcomes": [
            {
                "run_id": o.log.run_id,
                "seed": o.log.seed,
                "best_trial": o.best.index,
                "best_value": o.best_value,
                "best_config": o.best.config.to_dict(),
                "best_so_far": o.per_trial_best_so_far,
                "proposers": [t.proposer.value for t in o.log.trials],
                "log": o.log_path.name if o.log_path else None,
            }
            for o in outcomes
        ],
    }
    if agg is not None:
        manifest.update(mean_best=agg.mean_best, std_best=agg.std_best, degenerate=agg.degenerate)
    if aborted:
        manifest["aborted"] = aborted
    path = Path(cfg.output_dir) / "manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return path
