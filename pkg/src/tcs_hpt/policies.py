"""Deterministic text-in/text-out policies that stand in for an LLM.

A policy receives the latest user message and must answer whichever role
asked: analysis prompts get a six-part analysis, optimizer prompts get a
``reasoning:`` / ``hyperparameters:`` reply. Both policies read only the
prompt text, the same information a model would see.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

from .agents import ANALYSIS_SECTIONS, format_number, parse_scalar
from .core import round_half_away

_PAIR = re.compile(r"([A-Za-z_][\w.\-]*)\s*=\s*([^,;\s]+)")
_RANGE = re.compile(r"^-\s*(\S+)\s*∈\s*\[([^,\]]+),\s*([^\]]+)\]\s*\((\w+),\s*(\w+) scale\)")
_CHOICES = re.compile(r"^-\s*(\S+)\s*∈\s*\{(.*)\}\s*$")
_PARAM_HEAD = re.compile(r"^- (\S+): (float|int) (linear|log) \[([^,]+), ([^\]]+)\]( fixed=\S+)?$")
_CHOICE_HEAD = re.compile(r"^- (\S+): choice \{(.*)\}( fixed=\S+)?$")
_HIST = re.compile(r"#(\d+) ([^;\s]+) -> ([^;\s]+)")
_REGION = re.compile(r"\[([^,\]]+), ([^\]]+)\]")


def _is_optimizer_prompt(text: str) -> bool:
    return "## Latest Analysis" in text


def _six_part(diagnosis: str, assessment: str, action: str, recommendation: str,
              reasoning: str, outcome: str) -> str:
    parts = (diagnosis, assessment, action, recommendation, reasoning, outcome)
    return "\n".join(f"{title}: {text}" for (_, title), text in zip(ANALYSIS_SECTIONS, parts))


def _assignments(config: dict) -> str:
    return ", ".join(f"{k} = {format_number(v)}" for k, v in config.items())


def _optimizer_reply(reasoning: str, config: dict) -> str:
    pairs = ", ".join(f"{k}={format_number(v)}" for k, v in config.items())
    return f"reasoning: {reasoning}\nhyperparameters: {pairs}"


def _section(text: str, header: str) -> str:
    m = re.search(rf"^## {re.escape(header)}\n(.*?)(?=^## |\Z)", text, re.S | re.M)
    return m.group(1) if m else ""


def _prompt_ranges(text: str) -> dict:
    """Midpoint of every optimizable parameter listed in an optimizer prompt."""
    out = {}
    body = _section(text, "Hyperparameter Configuration")
    for line in body.split("Parameters to optimize:")[-1].splitlines():
        line = line.strip()
        if m := _RANGE.match(line):
            name, lo, hi, kind, scale = m.groups()
            lo, hi = float(lo), float(hi)
            mid = math.sqrt(lo * hi) if scale == "log" else (lo + hi) / 2
            out[name] = round_half_away(mid) if kind == "int" else mid
        elif m := _CHOICES.match(line):
            out[m.group(1)] = parse_scalar(m.group(2).split(",")[0])
    return out


def _recommended_config(text: str) -> dict:
    analysis = _section(text, "Latest Analysis")
    for line in analysis.splitlines():
        if line.lower().startswith("specific recommendation:"):
            return {k: parse_scalar(v) for k, v in _PAIR.findall(line.split(":", 1)[1])}
    return {}


def optimizer_follow_analysis(text: str) -> str:
    """Optimizer role: apply the assignments named in the analysis, else range midpoints."""
    config = _prompt_ranges(text)
    recommended = _recommended_config(text)
    config.update({k: v for k, v in recommended.items() if k in config})
    why = "applying the specific recommendation from the latest analysis" if recommended \
        else "no usable recommendation; starting from the middle of each range"
    return _optimizer_reply(why, config)


def midpoint(text: str) -> str:
    """Context-blind policy: always proposes the middle of every range."""
    if _is_optimizer_prompt(text):
        return _optimizer_reply("the middle of each range is a safe choice", _prompt_ranges(text))
    return _six_part(
        "unclear", "all parameters may matter", "none",
        "keep the middle of each range", "no basis for a change", "similar performance",
    )


# -- coordinate search ---------------------------------------------------------

@dataclass
class _Param:
    name: str
    kind: str
    scale: str = "linear"
    low: float = 0.0
    high: float = 0.0
    fixed: bool = False
    choices: list = field(default_factory=list)
    history: list = field(default_factory=list)  # (trial, value, metric | None)
    unexplored: list = field(default_factory=list)


def _num(s: str) -> float | None:
    try:
        return float(s)
    except ValueError:
        return None


def _parse_report(text: str) -> tuple[str, list[_Param]]:
    goal = re.search(r"^goal: (maximize|minimize) ", text, re.M)
    direction = goal.group(1) if goal else "maximize"
    params: list[_Param] = []
    body = text.split("HYPERPARAMETER ANALYSIS", 1)[1].split("PREVIOUS EXPERIMENT COMPARISON", 1)[0]
    for line in body.splitlines():
        if m := _PARAM_HEAD.match(line):
            name, kind, scale, lo, hi, fixed = m.groups()
            params.append(_Param(name, kind, scale, float(lo), float(hi), bool(fixed)))
        elif m := _CHOICE_HEAD.match(line):
            name, choices, fixed = m.groups()
            params.append(_Param(name, "choice", choices=[parse_scalar(c) for c in choices.split(", ")],
                                 fixed=bool(fixed)))
        elif not params:
            continue
        elif line.startswith("  history: "):
            p = params[-1]
            for trial, value, metric in _HIST.findall(line):
                v = parse_scalar(value) if p.kind == "choice" else float(value)
                p.history.append((int(trial), v, _num(metric)))
        elif line.startswith("  unexplored: "):
            p = params[-1]
            rest = line[len("  unexplored: "):]
            if rest in ("none", "n/a (fixed)"):
                continue
            if p.kind == "choice":
                p.unexplored = [parse_scalar(v) for v in rest.split("; ")]
            else:
                p.unexplored = [(float(a), float(b)) for a, b in _REGION.findall(rest)]
    return direction, params


def _same(a, b) -> bool:
    if isinstance(a, str) or isinstance(b, str):
        return str(a) == str(b)
    return format(float(a), "#.6g") == format(float(b), "#.6g")


def _cast(p: _Param, v: float):
    v = min(max(v, p.low), p.high)
    return round_half_away(v) if p.kind == "int" else v


def _vertex(a, fa, b, fb, c, fc) -> float | None:
    num = (b - a) ** 2 * (fb - fc) - (b - c) ** 2 * (fb - fa)
    den = (b - a) * (fb - fc) - (b - c) * (fb - fa)
    if den == 0:
        return None
    return b - 0.5 * num / den


class _Search:
    def __init__(self, direction: str, params: list[_Param]):
        self.maximize = direction == "maximize"
        self.params = params
        self.free = [p for p in params if not p.fixed]
        self.trials: dict[int, dict] = {}
        self.metric: dict[int, float | None] = {}
        for p in params:
            for t, v, m in p.history:
                self.trials.setdefault(t, {})[p.name] = v
                self.metric[t] = m
        self.order = sorted(self.trials)
        self.best: int | None = None
        self.improvements: list[tuple[int, int | None]] = []  # (new best, previous best)
        for t in self.order:
            m = self.metric[t]
            if m is None:
                continue
            if self.best is None or self._better(m, self.metric[self.best]):
                self.improvements.append((t, self.best))
                self.best = t

    def _better(self, a: float, b: float) -> bool:
        return a > b if self.maximize else a < b

    def base(self) -> dict:
        if self.best is not None:
            return dict(self.trials[self.best])
        return dict(self.trials[self.order[-1]]) if self.order else {}

    def tried(self, config: dict) -> bool:
        return any(
            all(_same(cfg.get(k), v) for k, v in config.items())
            for cfg in self.trials.values()
        )

    def explore(self) -> tuple[_Param, dict] | None:
        for p in self.free:
            if not p.unexplored:
                continue
            region = p.unexplored[0]
            if p.kind == "choice":
                value = region
            else:
                lo, hi = region
                mid = math.sqrt(lo * hi) if p.scale == "log" else (lo + hi) / 2
                value = _cast(p, mid)
            config = self.base()
            config[p.name] = value
            return p, config
        return None

    def _changed_param(self) -> tuple[_Param | None, float]:
        """Parameter changed by the latest improving trial, and the sign of that change."""
        for new, old in reversed(self.improvements):
            if old is None:
                continue
            for p in self.free:
                if p.kind == "choice":
                    continue
                a, b = self.trials[old].get(p.name), self.trials[new].get(p.name)
                if a is not None and b is not None and not _same(a, b):
                    return p, math.copysign(1.0, b - a)
        numeric = [p for p in self.free if p.kind != "choice"]
        return (numeric[0] if numeric else None), 1.0

    def _slice_vertex(self, p: _Param) -> float | None:
        """Parabola vertex along ``p`` through the best point of a one-coordinate slice and its neighbours."""
        base = self.base()
        groups: dict[tuple, list[tuple[float, float, int]]] = {}
        for t in self.order:
            m = self.metric[t]
            if m is None or p.name not in self.trials[t]:
                continue
            others = tuple((k, str(v)) for k, v in sorted(self.trials[t].items()) if k != p.name)
            groups.setdefault(others, []).append((float(self.trials[t][p.name]), m, t))
        own = tuple((k, str(v)) for k, v in sorted(base.items()) if k != p.name)
        ranked = sorted(groups, key=lambda g: (g != own, -len(groups[g]), groups[g][0][2]))
        for g in ranked:
            pts = sorted(groups[g])
            if len(pts) < 3:
                continue
            i = 0
            for j in range(1, len(pts)):
                if self._better(pts[j][1], pts[i][1]):
                    i = j
            if 0 < i < len(pts) - 1:
                (a, fa, _), (b, fb, _), (c, fc, _) = pts[i - 1], pts[i], pts[i + 1]
                v = _vertex(a, fa, b, fb, c, fc)
                if v is not None and math.isfinite(v):
                    return v
        return None

    def refine(self) -> tuple[_Param, dict] | None:
        p0, sign = self._changed_param()
        if p0 is None:
            return None
        numeric = [p for p in self.free if p.kind != "choice"]
        k = numeric.index(p0)
        for p in numeric[k:] + numeric[:k]:
            v = self._slice_vertex(p)
            if v is None:
                continue
            config = self.base()
            config[p.name] = _cast(p, v)
            if not self.tried(config):
                return p, config
        # step halving around the best value of p0
        base = self.base()
        b = float(base[p0.name])
        others = [float(cfg[p0.name]) for cfg in self.trials.values()
                  if p0.name in cfg and not _same(cfg[p0.name], b)]
        step = min((abs(x - b) for x in others), default=(p0.high - p0.low) / 4) / 2
        for _ in range(30):
            for direction in (sign, -sign):
                config = dict(base)
                config[p0.name] = _cast(p0, b + direction * step)
                if not self.tried(config):
                    return p0, config
            step /= 2
        return None


def coordinate_search(text: str) -> str:
    """Explore unexplored bins one parameter at a time, then refine around the best trial.

    Exploration takes the first optimizable parameter that still has an
    unexplored bin and proposes that bin's midpoint, other parameters held at
    the best trial's values. Refinement works on the parameter most recently
    associated with an improvement: a parabola through the best point of a
    one-coordinate slice and its two neighbours gives the next value; when no
    such bracket exists the step around the best value is halved.
    """
    if _is_optimizer_prompt(text):
        return optimizer_follow_analysis(text)
    if "HYPERPARAMETER ANALYSIS" not in text:
        return midpoint(text)
    direction, params = _parse_report(text)
    search = _Search(direction, params)
    step = search.explore()
    phase = "exploration"
    if step is None:
        step = search.refine()
        phase = "refinement"
    if step is None:
        config = search.base()
        return _six_part(
            "search converged; no untried neighbouring values remain",
            "all bins explored", "none", f"repeat the best configuration: {_assignments(config)}",
            "no further informative move", "no change",
        )
    p, config = step
    return _six_part(
        f"{phase} phase; best trial so far is #{search.best}",
        f"{p.name} has the most informative next measurement",
        p.name,
        f"set {_assignments(config)}",
        f"{phase} of {p.name} while holding the other parameters at the best trial's values",
        "a better or equally informative metric value",
    )


POLICIES = {
    "coordinate-search": coordinate_search,
    "midpoint": midpoint,
}
