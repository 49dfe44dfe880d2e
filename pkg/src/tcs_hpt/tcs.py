"""Trajectory Context Summarizer.

Deterministic reduction of an experiment log to a four-section state report
and its canonical text rendering. Nothing here reads the clock or draws
random numbers, so equal inputs always give byte-identical text.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum

from .core import (
    Configuration,
    Direction,
    ExperimentLog,
    Goal,
    HPTError,
    Kind,
    ParamDef,
    Scale,
    SearchSpace,
    Value,
)

TREND_WINDOW = 3
TREND_REL_EPS = 0.005
LINEAR_BINS = 4

SECTION_HEADERS = (
    "CURRENT SITUATION",
    "LATEST EXPERIMENT",
    "HYPERPARAMETER ANALYSIS",
    "PREVIOUS EXPERIMENT COMPARISON",
)


class EmptyLog(HPTError):
    pass


class Trend(str, Enum):
    IMPROVING = "IMPROVING"
    STAGNATING = "STAGNATING"
    DECLINING = "DECLINING"
    INSUFFICIENT_DATA = "INSUFFICIENT_DATA"


class Verdict(str, Enum):
    IMPROVED = "IMPROVED"
    WORSENED = "WORSENED"
    NO_CHANGE = "NO_CHANGE"


@dataclass(frozen=True)
class CurrentSituation:
    goal: Goal
    current_metric: float | None
    best_metric: float | None
    best_trial: int | None
    gap_to_target: float | None
    trend: Trend
    trials_used: int
    trials_budget: int


@dataclass(frozen=True)
class EpochSummary:
    first: float
    last: float
    min: float
    max: float


@dataclass(frozen=True)
class LatestExperiment:
    trial_index: int
    status: str
    config: Configuration
    final_metrics: dict[str, float]
    epoch_summary: EpochSummary | None


@dataclass(frozen=True)
class HistoryEntry:
    trial_index: int
    value: Value
    metric: float | None  # None for FAILED trials


@dataclass(frozen=True)
class ParamAnalysis:
    name: str
    definition: ParamDef
    current_value: Value
    history: tuple[HistoryEntry, ...]
    best_value_so_far: Value | None
    unexplored: tuple  # (low, high) pairs for numerics, values for CHOICE


@dataclass(frozen=True)
class PreviousComparison:
    previous_trial: int
    latest_trial: int
    changed: dict[str, tuple[Value, Value]]
    unchanged: tuple[str, ...]
    metric_delta: float
    verdict: Verdict


@dataclass(frozen=True)
class StateReport:
    current_situation: CurrentSituation
    latest_experiment: LatestExperiment
    param_analysis: tuple[ParamAnalysis, ...]
    previous_comparison: PreviousComparison | None


def classify_trend(finals: Sequence[float], direction: Direction) -> Trend:
    """Label recent movement of completed-trial metrics toward the goal.

    Uses the mean of the last ``min(3, n - 1)`` deltas, sign-flipped for
    minimization, against a threshold of 0.005 times the magnitude of the
    best value seen.
    """
    n = len(finals)
    if n < 2:
        return Trend.INSUFFICIENT_DATA
    sign = 1.0 if direction is Direction.MAXIMIZE else -1.0
    deltas = [sign * (b - a) for a, b in zip(finals, finals[1:])]
    window = deltas[-min(TREND_WINDOW, n - 1):]
    mean = sum(window) / len(window)
    best = max(finals) if direction is Direction.MAXIMIZE else min(finals)
    eps = TREND_REL_EPS * abs(best)
    if mean > eps:
        return Trend.IMPROVING
    if mean < -eps:
        return Trend.DECLINING
    return Trend.STAGNATING


def _decade(k: int) -> float:
    return float(f"1e{k}")


def bin_edges(p: ParamDef) -> list[float]:
    """Bin boundaries for a numeric parameter, ascending, from low to high."""
    low, high = p.low, p.high
    if p.scale is Scale.LOG:
        lo_k = math.floor(math.log10(low)) - 1
        hi_k = math.ceil(math.log10(high)) + 1
        inner = [_decade(k) for k in range(lo_k, hi_k + 1) if low < _decade(k) < high]
        return [low, *inner, high]
    width = (high - low) / LINEAR_BINS
    return [low + i * width for i in range(LINEAR_BINS)] + [high]


def bin_index(edges: Sequence[float], value: float) -> int:
    """Index of the bin holding ``value``; a boundary value belongs to the lower bin."""
    for i in range(len(edges) - 1):
        if value <= edges[i + 1]:
            return i
    return len(edges) - 2


def unexplored_regions(p: ParamDef, tried: Sequence[Value]) -> list:
    """Bins (or choices) of ``p`` that no tried value falls into."""
    if p.kind is Kind.CHOICE:
        seen = set(map(str, tried))
        return [v for v in p.values if str(v) not in seen]
    edges = bin_edges(p)
    hit = {bin_index(edges, float(v)) for v in tried}
    return [(edges[i], edges[i + 1]) for i in range(len(edges) - 1) if i not in hit]


def summarize(log: ExperimentLog, space: SearchSpace | None = None,
              goal: Goal | None = None, budget: int | None = None) -> StateReport:
    space = space or log.space
    goal = goal or log.goal
    if not log.trials:
        raise EmptyLog("cannot summarize a log with no trials")
    if budget is None:
        budget = int(log.meta.get("budget", len(log.trials)))
    name = goal.metric_name
    direction = goal.direction

    completed = [(t, t.result.metric(name)) for t in log.trials]
    completed = [(t, v) for t, v in completed if v is not None]
    finals = [v for _, v in completed]

    best_t, best_v = None, None
    for t, v in completed:
        if best_v is None or direction.better(v, best_v):
            best_t, best_v = t, v
    if best_v is None:
        gap = None
    elif direction is Direction.MAXIMIZE:
        gap = goal.target_value - best_v
    else:
        gap = best_v - goal.target_value
    situation = CurrentSituation(
        goal=goal,
        current_metric=finals[-1] if finals else None,
        best_metric=best_v,
        best_trial=best_t.index if best_t else None,
        gap_to_target=gap,
        trend=classify_trend(finals, direction),
        trials_used=len(log.trials),
        trials_budget=budget,
    )

    last = log.trials[-1]
    curve = [e.metrics[name] for e in last.result.epochs if name in e.metrics]
    latest = LatestExperiment(
        trial_index=last.index,
        status=last.result.status.value,
        config=last.config,
        final_metrics=dict(last.result.final_metrics),
        epoch_summary=EpochSummary(curve[0], curve[-1], min(curve), max(curve)) if curve else None,
    )

    analyses = []
    for p in space:
        history = tuple(
            HistoryEntry(t.index, t.config[p.name], t.result.metric(name))
            for t in log.trials
            if p.name in t.config
        )
        tried = [h.value for h in history]
        analyses.append(ParamAnalysis(
            name=p.name,
            definition=p,
            current_value=last.config.get(p.name, p.fixed_value),
            history=history,
            best_value_so_far=best_t.config.get(p.name) if best_t else None,
            unexplored=() if p.fixed else tuple(unexplored_regions(p, tried)),
        ))

    comparison = None
    if len(completed) >= 2:
        (prev, pv), (cur, cv) = completed[-2], completed[-1]
        changed = {}
        unchanged = []
        for p in space:
            a, b = prev.config.get(p.name), cur.config.get(p.name)
            if a == b:
                unchanged.append(p.name)
            else:
                changed[p.name] = (a, b)
        delta = cv - pv
        if math.isclose(cv, pv, rel_tol=1e-12, abs_tol=1e-15):
            verdict = Verdict.NO_CHANGE
        elif direction.better(cv, pv):
            verdict = Verdict.IMPROVED
        else:
            verdict = Verdict.WORSENED
        comparison = PreviousComparison(prev.index, cur.index, changed, tuple(unchanged), delta, verdict)

    return StateReport(situation, latest, tuple(analyses), comparison)


def fmt_real(x: float | None) -> str:
    if x is None:
        return "n/a"
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return format(float(x), "#.6g")


def fmt_value(v: Value | None) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return fmt_real(v)
    return str(v)


def _fmt_metrics(metrics: dict[str, float], first: str) -> str:
    keys = sorted(metrics, key=lambda k: (k != first, k))
    return ", ".join(f"{k}={fmt_real(metrics[k])}" for k in keys) or "none"


def _fmt_def(p: ParamDef) -> str:
    if p.kind is Kind.CHOICE:
        desc = "choice {" + ", ".join(fmt_value(v) for v in p.values) + "}"
    else:
        desc = f"{p.kind.value} {p.scale.value} [{fmt_value(p.low)}, {fmt_value(p.high)}]"
    if p.fixed:
        desc += f" fixed={fmt_value(p.fixed_value)}"
    return desc


def _fmt_region(p: ParamDef, r) -> str:
    if p.kind is Kind.CHOICE:
        return fmt_value(r)
    return f"[{fmt_real(r[0])}, {fmt_real(r[1])}]"


def render_report(report: StateReport) -> str:
    """Canonical plain-text rendering, reals with 6 significant digits."""
    cs = report.current_situation
    g = cs.goal
    lines = [
        SECTION_HEADERS[0],
        f"goal: {g.direction.value} {g.metric_name} toward target {fmt_real(g.target_value)}",
        f"current_metric: {fmt_real(cs.current_metric)}",
        f"best_metric: {fmt_real(cs.best_metric)}"
        + (f" (trial {cs.best_trial})" if cs.best_trial is not None else ""),
        f"gap_to_target: {fmt_real(cs.gap_to_target)}",
        f"trend: {cs.trend.value}",
        f"trials_used: {cs.trials_used} of {cs.trials_budget}",
        "",
        SECTION_HEADERS[1],
    ]
    le = report.latest_experiment
    lines.append(f"trial: {le.trial_index} ({le.status})")
    lines.append("config: " + ", ".join(f"{k}={fmt_value(v)}" for k, v in le.config.items()))
    lines.append("final_metrics: " + _fmt_metrics(le.final_metrics, g.metric_name))
    es = le.epoch_summary
    if es is None:
        lines.append(f"epoch_summary({g.metric_name}): n/a")
    else:
        lines.append(
            f"epoch_summary({g.metric_name}): first={fmt_real(es.first)} last={fmt_real(es.last)} "
            f"min={fmt_real(es.min)} max={fmt_real(es.max)}"
        )
    lines += ["", SECTION_HEADERS[2]]
    for pa in report.param_analysis:
        lines.append(f"- {pa.name}: {_fmt_def(pa.definition)}")
        lines.append(f"  current: {fmt_value(pa.current_value)}")
        lines.append(f"  best_so_far: {fmt_value(pa.best_value_so_far)}")
        hist = "; ".join(
            f"#{h.trial_index} {fmt_value(h.value)} -> "
            + (fmt_real(h.metric) if h.metric is not None else "failed")
            for h in pa.history
        )
        lines.append(f"  history: {hist or 'none'}")
        if pa.definition.fixed:
            lines.append("  unexplored: n/a (fixed)")
        else:
            regions = "; ".join(_fmt_region(pa.definition, r) for r in pa.unexplored)
            lines.append(f"  unexplored: {regions or 'none'}")
    lines += ["", SECTION_HEADERS[3]]
    pc = report.previous_comparison
    if pc is None:
        lines.append("no previous experiment")
    else:
        lines.append(f"compared: trial {pc.previous_trial} -> trial {pc.latest_trial}")
        changed = "; ".join(f"{k} {fmt_value(a)} -> {fmt_value(b)}" for k, (a, b) in pc.changed.items())
        lines.append(f"changed: {changed or 'none'}")
        lines.append(f"unchanged: {', '.join(pc.unchanged) or 'none'}")
        lines.append(f"metric_delta: {'+' if pc.metric_delta >= 0 else ''}{fmt_real(pc.metric_delta)}")
        lines.append(f"verdict: {pc.verdict.value}")
    return "\n".join(lines) + "\n"
