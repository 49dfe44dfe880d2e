"""Prompt construction and response parsing for the optimizer and analysis roles.

Prompt wording lives in ``templates/*.txt`` with ``{{placeholder}}`` slots;
the code here only fills slots and parses replies, so wording can change
without touching the parsing contracts.

Placeholders:
    optimizer_system / analysis_system: metric_name, direction, target_value
    optimizer_user: metric_name, direction, target_value, performance,
        analysis, fixed_params, optimizable_params, response_format
    analysis_user: context_title, context, section_headers, metric_name
"""

from __future__ import annotations

import re
from collections.abc import Mapping
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import TYPE_CHECKING, Any

from .core import (
    ConfigError,
    ConfigWarning,
    Configuration,
    Goal,
    HPTError,
    Kind,
    ParamDef,
    Scale,
    SearchSpace,
    Value,
    _coerce,
    validate_config,
)
from .tcs import StateReport, fmt_real, render_report

if TYPE_CHECKING:
    from .backend import Backend

ANALYSIS_SECTIONS = (
    ("problem_diagnosis", "Problem Diagnosis"),
    ("impact_assessment", "Hyperparameter Impact Assessment"),
    ("primary_action", "Primary Action"),
    ("specific_recommendation", "Specific Recommendation"),
    ("reasoning", "Reasoning"),
    ("expected_outcome", "Expected Outcome"),
)

OPTIMIZER_HEADERS = (
    "Optimization Goal",
    "Current Performance",
    "Latest Analysis",
    "Hyperparameter Configuration",
    "Your Task",
)

NO_EXPERIMENTS = "no experiments yet"

CORRECTIVE_INSTRUCTION = (
    "Your previous reply could not be used: {error}. "
    "Reply again using exactly the required format: a line starting with 'reasoning:' "
    "and then one line starting with 'hyperparameters:' containing comma-separated "
    "name=value pairs, using only the listed parameters and allowed values."
)


class ParseFailure(HPTError, ValueError):
    pass


@dataclass(frozen=True)
class PromptPair:
    system: str
    user: str

    def __post_init__(self):
        if not self.system or not self.user:
            raise ValueError("system and user prompts must be non-empty")


@dataclass(frozen=True)
class AnalysisReport:
    problem_diagnosis: str = ""
    impact_assessment: str = ""
    primary_action: str = ""
    specific_recommendation: str = ""
    reasoning: str = ""
    expected_outcome: str = ""
    raw: str = ""
    structured: bool = False

    def render(self) -> str:
        """Six ``Header: text`` blocks when structured, else the raw reply."""
        if not self.structured:
            return self.raw.strip()
        return "\n".join(f"{title}: {getattr(self, attr)}" for attr, title in ANALYSIS_SECTIONS)


@dataclass(frozen=True)
class Proposal:
    reasoning: str
    config: Configuration
    warnings: list[ConfigWarning] = field(default_factory=list)
    raw: dict[str, Value] = field(default_factory=dict)


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    return resources.files("tcs_hpt").joinpath("templates", f"{name}.txt").read_text(encoding="utf-8")


_SLOT = re.compile(r"\{\{(\w+)\}\}")


def fill_template(template: str, values: Mapping[str, Any]) -> str:
    def sub(m: re.Match) -> str:
        key = m.group(1)
        if key not in values:
            raise KeyError(f"template placeholder {{{{{key}}}}} has no value")
        return str(values[key])

    return _SLOT.sub(sub, template)


def format_number(x: Value) -> str:
    """Shortest text for a value that parses back to the same value."""
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, float):
        if x.is_integer() and abs(x) < 1e16:
            return str(int(x))
        return repr(x)
    return str(x)


def _format_log_bound(x: float) -> str:
    for digits in range(0, 17):
        s = f"{x:.{digits}e}"
        if float(s) == x:
            return s
    return repr(x)


def describe_param(p: ParamDef) -> str:
    if p.fixed:
        return f"{p.name} = {format_number(p.fixed_value)} (fixed)"
    if p.kind is Kind.CHOICE:
        return f"{p.name} ∈ {{{', '.join(format_number(v) for v in p.values)}}}"
    if p.scale is Scale.LOG:
        lo, hi = _format_log_bound(p.low), _format_log_bound(p.high)
    else:
        lo, hi = format_number(p.low), format_number(p.high)
    return f"{p.name} ∈ [{lo}, {hi}] ({p.kind.value}, {p.scale.value} scale)"


def _goal_slots(goal: Goal) -> dict[str, str]:
    return {
        "metric_name": goal.metric_name,
        "direction": goal.direction.value,
        "target_value": format_number(goal.target_value),
    }


def response_format(space: SearchSpace) -> str:
    pairs = ", ".join(f"{p.name}=<value>" for p in space if not p.fixed)
    return (
        "reasoning: <one short paragraph justifying your choice from the analysis>\n"
        f"hyperparameters: {pairs}"
    )


def performance_block(report: StateReport | None) -> str:
    if report is None:
        return f"{NO_EXPERIMENTS}; this is the first trial."
    cs = report.current_situation
    best = fmt_real(cs.best_metric)
    if cs.best_trial is not None:
        best += f" (trial {cs.best_trial})"
    return "\n".join([
        f"current {cs.goal.metric_name}: {fmt_real(cs.current_metric)}",
        f"best {cs.goal.metric_name}: {best}",
        f"gap to target: {fmt_real(cs.gap_to_target)}",
        f"performance trend: {cs.trend.value}",
        f"trials used: {cs.trials_used} of {cs.trials_budget}",
    ])


def build_optimizer_prompt(
    report: StateReport | None,
    analysis: AnalysisReport,
    space: SearchSpace,
    goal: Goal,
    performance: str | None = None,
) -> PromptPair:
    """Five-part optimizer prompt. ``performance`` overrides the report-derived block."""
    slots = _goal_slots(goal)
    fixed = [describe_param(p) for p in space if p.fixed]
    free = [describe_param(p) for p in space if not p.fixed]
    slots.update(
        performance=performance if performance is not None else performance_block(report),
        analysis=analysis.render() or "(no analysis available)",
        fixed_params="\n".join(f"- {s}" for s in fixed) or "- none",
        optimizable_params="\n".join(f"- {s}" for s in free),
        response_format=response_format(space),
    )
    return PromptPair(
        fill_template(load_template("optimizer_system"), slots),
        fill_template(load_template("optimizer_user"), slots),
    )


def build_analysis_prompts(report: StateReport | str, space: SearchSpace, goal: Goal) -> PromptPair:
    """Analysis prompt around a TCS report, or around raw log text (the no-TCS ablation)."""
    slots = _goal_slots(goal)
    if isinstance(report, StateReport):
        slots.update(context_title="Trajectory Summary", context=render_report(report).rstrip("\n"))
    else:
        slots.update(context_title="Raw Experiment Log (JSON)", context=report.rstrip("\n"))
    slots["section_headers"] = "\n".join(f"{i}. {t}" for i, (_, t) in enumerate(ANALYSIS_SECTIONS, 1))
    return PromptPair(
        fill_template(load_template("analysis_system"), slots),
        fill_template(load_template("analysis_user"), slots),
    )


def bootstrap_analysis(space: SearchSpace, goal: Goal) -> AnalysisReport:
    """Synthetic pre-trial analysis recommending the middle of every range."""
    start = ", ".join(f"{p.name} = {format_number(p.fixed_value if p.fixed else p.midpoint())}" for p in space)
    action = "propose a reasonable starting configuration from the middle of each range"
    return AnalysisReport(
        problem_diagnosis=NO_EXPERIMENTS,
        impact_assessment="every optimizable parameter is unexplored; no evidence yet on which matters most",
        primary_action=action,
        specific_recommendation=f"{action}: {start}",
        reasoning="a central starting point gives the most informative first measurement of "
                  f"{goal.metric_name} before any direction of change is known",
        expected_outcome=f"a baseline value of {goal.metric_name} to compare later trials against",
        raw="",
        structured=True,
    )


# -- response parsing ---------------------------------------------------------

_HP_LINE = re.compile(r"^[\s>*_`#-]*hyperparameters[\s*_`]*:[\s*_`]*(.*)$", re.I)
_REASONING_LABEL = re.compile(r"^[\s>*_`#-]*reasoning[\s*_`]*:[\s*_`]*", re.I)
_QUOTES = "\"'`*"


def parse_scalar(text: str) -> Value:
    s = text.strip().strip(_QUOTES).strip()
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def extract_hyperparameters(text: str) -> tuple[str, dict[str, Value]]:
    """Split a reply into (reasoning, raw name->value map) using the last hyperparameters line."""
    lines = text.splitlines()
    idx = None
    for i, line in enumerate(lines):
        if _HP_LINE.match(line):
            idx = i
    if idx is None:
        raise ParseFailure("no 'hyperparameters:' line in response")
    body = _HP_LINE.match(lines[idx]).group(1).strip()
    if not body.strip(_QUOTES):
        follow = []
        for line in lines[idx + 1:]:
            if not line.strip():
                if follow:
                    break
                continue
            follow.append(line.strip())
        body = ", ".join(follow)
    body = body.strip().strip("`")
    raw: dict[str, Value] = {}
    for chunk in re.split(r"[,;]", body):
        chunk = chunk.strip().lstrip("-*").strip()
        if "=" not in chunk:
            continue
        name, _, value = chunk.partition("=")
        name = name.strip().strip(_QUOTES).strip()
        if not name or not value.strip():
            continue
        raw[name] = parse_scalar(value)
    if not raw:
        raise ParseFailure("hyperparameters line has no name=value pairs")
    reasoning = "\n".join(lines[:idx]).strip()
    reasoning = _REASONING_LABEL.sub("", reasoning, count=1).strip()
    return reasoning, raw


def parse_optimizer_response(
    text: str, space: SearchSpace, previous: Mapping[str, Value] | None = None
) -> Proposal:
    if not text or not text.strip():
        raise ParseFailure("empty response")
    reasoning, raw = extract_hyperparameters(text)
    config, warnings = validate_config(space, raw, previous)
    return Proposal(reasoning, config, warnings, raw)


def render_hyperparameters_line(config: Mapping[str, Value]) -> str:
    return "hyperparameters: " + ", ".join(f"{k}={format_number(v)}" for k, v in config.items())


_SECTION_NAMES = {
    "problem diagnosis": "problem_diagnosis",
    "hyperparameter impact assessment": "impact_assessment",
    "impact assessment": "impact_assessment",
    "primary action": "primary_action",
    "specific recommendation": "specific_recommendation",
    "reasoning": "reasoning",
    "expected outcome": "expected_outcome",
}
_SECTION_LINE = re.compile(
    r"^\s*(?:#{1,6}\s*)?(?:[*_]{1,3}\s*)?(?:\(?\d+[.)]\s*)?(?:[*_]{1,3}\s*)?"
    r"(problem diagnosis|(?:hyperparameter\s+)?impact assessment|primary action|"
    r"specific recommendation|reasoning|expected outcome)"
    r"\s*(?:[*_]{1,3})?\s*(?::|$)\s*(?:[*_]{1,3}\s*)?(.*)$",
    re.I,
)


def parse_analysis_response(text: str) -> AnalysisReport:
    """Lenient six-section extraction; never raises."""
    sections: dict[str, list[str]] = {}
    current: str | None = None
    for line in (text or "").splitlines():
        m = _SECTION_LINE.match(line)
        if m:
            current = _SECTION_NAMES[re.sub(r"\s+", " ", m.group(1).lower())]
            sections.setdefault(current, [])
            rest = m.group(2).strip().strip("*_").strip()
            if rest:
                sections[current].append(rest)
        elif current is not None:
            sections[current].append(line.rstrip())
    fields = {attr: "\n".join(sections.get(attr, [])).strip() for attr, _ in ANALYSIS_SECTIONS}
    structured = all(attr in sections for attr, _ in ANALYSIS_SECTIONS)
    if not structured:
        fields = {attr: "" for attr in fields}
    return AnalysisReport(**fields, raw=text or "", structured=structured)


# -- variability probe ------------------------------------------------------

@dataclass(frozen=True)
class ProbeAttempt:
    attempt: int
    value: Value | None
    response: str = ""
    error: str = ""


def extract_param_value(text: str, param: ParamDef) -> Value:
    """Value proposed for ``param``; raises ParseFailure/ConfigError when missing or invalid.

    Unlike full validation nothing is clamped or filled in: an out-of-range
    proposal counts as invalid.
    """
    _, raw = extract_hyperparameters(text)
    if param.name not in raw:
        raise ParseFailure(f"response does not propose {param.name}")
    value, warns = _coerce(param, raw[param.name])
    if any(w.kind == "clamped" for w in warns):
        raise ParseFailure(f"{param.name}={raw[param.name]!r} is outside the allowed range")
    return value


def probe_attempts(
    backend: Backend,
    prompt: PromptPair,
    n: int,
    param: ParamDef,
    model: str = "",
    temperature: float = 0.2,
    max_tokens: int | None = 1024,
    timeout_s: float = 120.0,
    workers: int = 1,
) -> list[ProbeAttempt]:
    """Send the identical prompt ``n`` times and extract ``param`` from each reply."""
    from .backend import BackendError, ChatRequest

    if n < 1:
        raise ValueError("n must be >= 1")
    request = ChatRequest.from_prompt(prompt, model, temperature=temperature,
                                      max_tokens=max_tokens, timeout_s=timeout_s)

    def one(i: int) -> ProbeAttempt:
        try:
            text = backend.complete(request).content
        except BackendError as exc:
            return ProbeAttempt(i, None, "", f"{type(exc).__name__}: {exc}")
        try:
            return ProbeAttempt(i, extract_param_value(text, param), text)
        except (ParseFailure, ConfigError) as exc:
            return ProbeAttempt(i, None, text, str(exc))

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(one, range(1, n + 1)))
    return [one(i) for i in range(1, n + 1)]


def probe_variability(backend: Backend, prompt: PromptPair, n: int, param: ParamDef, **kw) -> list[Value | None]:
    return [a.value for a in probe_attempts(backend, prompt, n, param, **kw)]
