"""Domain types, search-space validation and best-trial selection."""

from __future__ import annotations

import json
import math
from collections.abc import Iterator, Mapping
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Union

Value = Union[int, float, str]

LOG_FORMAT_VERSION = 1


class HPTError(Exception):
    """Base class for all errors raised by this package."""


class InvalidSearchSpace(HPTError, ValueError):
    pass


class ConfigError(HPTError, ValueError):
    """A raw configuration could not be turned into a valid one."""

    def __init__(self, param: str, message: str):
        super().__init__(f"{param}: {message}")
        self.param = param


class UnknownParameter(ConfigError):
    pass


class InvalidChoice(ConfigError):
    pass


class MalformedValue(ConfigError):
    pass


class NoCompletedTrials(HPTError):
    pass


class LogFormatError(HPTError, ValueError):
    pass


class Direction(str, Enum):
    MAXIMIZE = "maximize"
    MINIMIZE = "minimize"

    def better(self, a: float, b: float) -> bool:
        """True if ``a`` is strictly better than ``b``."""
        return a > b if self is Direction.MAXIMIZE else a < b


class Kind(str, Enum):
    FLOAT = "float"
    INT = "int"
    CHOICE = "choice"


class Scale(str, Enum):
    LINEAR = "linear"
    LOG = "log"


class Status(str, Enum):
    COMPLETED = "COMPLETED"
    FAILED = "FAILED"


class Proposer(str, Enum):
    LLM = "LLM"
    FALLBACK_RANDOM = "FALLBACK_RANDOM"
    SCRIPTED = "SCRIPTED"


def round_half_away(x: float) -> int:
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


@dataclass(frozen=True)
class Goal:
    metric_name: str
    direction: Direction
    target_value: float

    def __post_init__(self):
        if not self.metric_name:
            raise ValueError("metric_name must be non-empty")
        if not math.isfinite(self.target_value):
            raise ValueError("target_value must be finite")
        object.__setattr__(self, "direction", Direction(self.direction))

    def to_dict(self) -> dict:
        return {
            "metric_name": self.metric_name,
            "direction": self.direction.value,
            "target_value": self.target_value,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> Goal:
        return cls(d["metric_name"], Direction(d["direction"]), float(d["target_value"]))


@dataclass(frozen=True)
class ParamDef:
    """One hyperparameter: numeric range or ordered choice list, optionally pinned."""

    name: str
    kind: Kind
    low: float | None = None
    high: float | None = None
    values: tuple = ()
    scale: Scale = Scale.LINEAR
    fixed: bool = False
    fixed_value: Value | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "scale", Scale(self.scale))
        object.__setattr__(self, "values", tuple(self.values))
        if not self.name:
            raise InvalidSearchSpace("parameter name must be non-empty")
        if self.kind is Kind.CHOICE:
            if not self.values:
                raise InvalidSearchSpace(f"{self.name}: choice list is empty")
            if len(set(map(_choice_key, self.values))) != len(self.values):
                raise InvalidSearchSpace(f"{self.name}: duplicate choices")
        else:
            if self.low is None or self.high is None:
                raise InvalidSearchSpace(f"{self.name}: numeric parameter needs a range")
            low, high = self.low, self.high
            if self.kind is Kind.INT:
                if low != int(low) or high != int(high):
                    raise InvalidSearchSpace(f"{self.name}: int range bounds must be integers")
                low, high = int(low), int(high)
            else:
                low, high = float(low), float(high)
            if not (math.isfinite(low) and math.isfinite(high)) or not low < high:
                raise InvalidSearchSpace(f"{self.name}: need finite low < high")
            if self.scale is Scale.LOG and low <= 0:
                raise InvalidSearchSpace(f"{self.name}: log scale needs low > 0")
            object.__setattr__(self, "low", low)
            object.__setattr__(self, "high", high)
        if self.fixed:
            if self.fixed_value is None:
                raise InvalidSearchSpace(f"{self.name}: fixed parameter needs a value")
            try:
                v, warns = _coerce(self, self.fixed_value)
            except ConfigError as exc:
                raise InvalidSearchSpace(str(exc)) from None
            if warns:
                raise InvalidSearchSpace(f"{self.name}: fixed value outside range")
            object.__setattr__(self, "fixed_value", v)

    @property
    def is_numeric(self) -> bool:
        return self.kind is not Kind.CHOICE

    def midpoint(self) -> Value:
        """Geometric midpoint for LOG, arithmetic for LINEAR, first value for CHOICE."""
        if self.kind is Kind.CHOICE:
            return self.values[0]
        if self.scale is Scale.LOG:
            # exact for decade bounds, unlike sqrt(low * high)
            mid = 10 ** ((math.log10(self.low) + math.log10(self.high)) / 2)
        else:
            mid = (self.low + self.high) / 2
        if self.kind is Kind.INT:
            return min(max(round_half_away(mid), self.low), self.high)
        return mid

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"name": self.name, "type": self.kind.value}
        if self.kind is Kind.CHOICE:
            d["values"] = list(self.values)
        else:
            d["range"] = [self.low, self.high]
            d["scale"] = self.scale.value
        if self.fixed:
            d["fixed"] = True
            d["value"] = self.fixed_value
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> ParamDef:
        kind = Kind(d["type"])
        kwargs: dict[str, Any] = {}
        if kind is Kind.CHOICE:
            kwargs["values"] = tuple(d["values"])
        else:
            rng = d["range"]
            if len(rng) != 2:
                raise InvalidSearchSpace(f"{d['name']}: range must be [low, high]")
            kwargs["low"], kwargs["high"] = rng
            kwargs["scale"] = Scale(d.get("scale", "linear"))
        fixed = bool(d.get("fixed", False))
        return cls(d["name"], kind, fixed=fixed, fixed_value=d.get("value"), **kwargs)


@dataclass(frozen=True)
class SearchSpace:
    params: tuple[ParamDef, ...]

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(self.params))
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise InvalidSearchSpace("parameter names must be unique")
        if not any(not p.fixed for p in self.params):
            raise InvalidSearchSpace("search space needs at least one optimizable parameter")

    def __iter__(self) -> Iterator[ParamDef]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def __getitem__(self, name: str) -> ParamDef:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)

    def __contains__(self, name: object) -> bool:
        return any(p.name == name for p in self.params)

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    def to_list(self) -> list[dict]:
        return [p.to_dict() for p in self.params]

    @classmethod
    def from_list(cls, items: list) -> SearchSpace:
        return cls(tuple(ParamDef.from_dict(d) for d in items))


class Configuration(Mapping):
    """Immutable ordered mapping of parameter name to value."""

    __slots__ = ("_items",)

    def __init__(self, assignments: Mapping[str, Value] | None = None, **kw: Value):
        items = dict(assignments or {})
        items.update(kw)
        self._items = items

    def __getitem__(self, key: str) -> Value:
        return self._items[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, Mapping):
            return dict(self._items) == dict(other)
        return NotImplemented

    def __hash__(self) -> int:
        return hash(tuple(self._items.items()))

    def __repr__(self) -> str:
        return f"Configuration({self._items!r})"

    def to_dict(self) -> dict[str, Value]:
        return dict(self._items)


@dataclass(frozen=True)
class ConfigWarning:
    param: str
    kind: str  # clamped | rounded | filled | fixed
    message: str


def _choice_key(v: Value) -> str:
    if isinstance(v, str):
        return v.strip().lower()
    if isinstance(v, float) and v.is_integer():
        return str(int(v))
    return str(v)


def _parse_number(p: ParamDef, v: Any) -> float:
    if isinstance(v, bool):
        raise MalformedValue(p.name, f"expected a number, got {v!r}")
    if isinstance(v, (int, float)):
        x = float(v) if isinstance(v, float) else v
    elif isinstance(v, str):
        try:
            x = float(v.strip())
        except ValueError:
            raise MalformedValue(p.name, f"expected a number, got {v!r}") from None
        if x.is_integer() and abs(x) < 2**53 and "." not in v and "e" not in v.lower():
            x = int(x)
    else:
        raise MalformedValue(p.name, f"expected a number, got {v!r}")
    if isinstance(x, float) and math.isnan(x):
        raise MalformedValue(p.name, "NaN is not a valid value")
    return x


def _coerce(p: ParamDef, v: Any) -> tuple[Value, list[ConfigWarning]]:
    warns: list[ConfigWarning] = []
    if p.kind is Kind.CHOICE:
        key = _choice_key(v) if isinstance(v, (str, int, float)) and not isinstance(v, bool) else None
        for c in p.values:
            if key is not None and _choice_key(c) == key:
                return c, warns
        raise InvalidChoice(p.name, f"{v!r} not in {list(p.values)}")
    x = _parse_number(p, v)
    if p.kind is Kind.INT and math.isfinite(x):
        r = round_half_away(x)
        if r != x:
            warns.append(ConfigWarning(p.name, "rounded", f"{x!r} rounded to {r}"))
        x = r
    if x < p.low or x > p.high:
        clamped = p.low if x < p.low else p.high
        warns.append(ConfigWarning(p.name, "clamped", f"{x!r} clamped to {clamped!r}"))
        x = clamped
    if p.kind is Kind.INT:
        return int(x), warns
    return float(x), warns


def validate_config(
    space: SearchSpace,
    raw: Mapping[str, Any],
    previous: Mapping[str, Value] | None = None,
) -> tuple[Configuration, list[ConfigWarning]]:
    """Turn a raw name->value map into a valid Configuration.

    Out-of-range numbers are clamped, INT values are rounded half away from
    zero before clamping, fixed parameters are forced to their pinned value,
    and missing parameters are filled from ``previous`` (the latest trial's
    configuration) or the parameter midpoint. Each adjustment yields a warning.
    """
    if not raw:
        raise ValueError("raw configuration is empty")
    for name in raw:
        if name not in space:
            raise UnknownParameter(name, "not in search space")
    out: dict[str, Value] = {}
    warns: list[ConfigWarning] = []
    for p in space:
        if p.fixed:
            if p.name in raw:
                try:
                    same = _coerce(p, raw[p.name])[0] == p.fixed_value
                except ConfigError:
                    same = False
                if not same:
                    warns.append(ConfigWarning(p.name, "fixed", f"forced to {p.fixed_value!r}"))
            out[p.name] = p.fixed_value
        elif p.name in raw:
            out[p.name], w = _coerce(p, raw[p.name])
            warns.extend(w)
        else:
            if previous is not None and p.name in previous:
                v, _ = _coerce(p, previous[p.name])
                src = "previous trial"
            else:
                v, src = p.midpoint(), "midpoint"
            out[p.name] = v
            warns.append(ConfigWarning(p.name, "filled", f"missing; filled from {src} ({v!r})"))
    return Configuration(out), warns


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    metrics: dict[str, float]


@dataclass(frozen=True)
class TrialResult:
    epochs: tuple[EpochRecord, ...] = ()
    final_metrics: dict[str, float] = field(default_factory=dict)
    wall_time_s: float = 0.0
    status: Status = Status.COMPLETED
    diagnostics: str = ""

    def __post_init__(self):
        object.__setattr__(self, "epochs", tuple(self.epochs))
        object.__setattr__(self, "status", Status(self.status))
        prev = 0
        for e in self.epochs:
            if e.epoch <= prev or (prev == 0 and e.epoch != 1):
                raise ValueError("epoch indices must increase strictly from 1")
            prev = e.epoch
        if self.wall_time_s < 0:
            raise ValueError("wall_time_s must be non-negative")

    @property
    def completed(self) -> bool:
        return self.status is Status.COMPLETED

    def metric(self, name: str) -> float | None:
        """Final value of ``name`` for a completed trial, else None."""
        if not self.completed:
            return None
        v = self.final_metrics.get(name)
        return v if v is not None and math.isfinite(v) else None

    def to_dict(self) -> dict:
        d = {
            "status": self.status.value,
            "epochs": [{"epoch": e.epoch, "metrics": e.metrics} for e in self.epochs],
            "final_metrics": self.final_metrics,
            "wall_time_s": self.wall_time_s,
        }
        if self.diagnostics:
            d["diagnostics"] = self.diagnostics
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> TrialResult:
        return cls(
            epochs=tuple(EpochRecord(int(e["epoch"]), dict(e["metrics"])) for e in d.get("epochs", [])),
            final_metrics=dict(d.get("final_metrics", {})),
            wall_time_s=float(d.get("wall_time_s", 0.0)),
            status=Status(d["status"]),
            diagnostics=d.get("diagnostics", ""),
        )


@dataclass(frozen=True)
class TrialRecord:
    index: int
    config: Configuration
    result: TrialResult
    justification: str = ""
    proposer: Proposer = Proposer.LLM

    def __post_init__(self):
        if self.index < 1:
            raise ValueError("trial index starts at 1")
        object.__setattr__(self, "proposer", Proposer(self.proposer))

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "config": self.config.to_dict(),
            "justification": self.justification,
            "proposer": self.proposer.value,
            "result": self.result.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> TrialRecord:
        return cls(
            index=int(d["index"]),
            config=Configuration(d["config"]),
            result=TrialResult.from_dict(d["result"]),
            justification=d.get("justification", ""),
            proposer=Proposer(d.get("proposer", "LLM")),
        )


@dataclass
class ExperimentLog:
    """Append-only trial history of one run.

    ``meta`` holds optional extra header fields (e.g. ``budget``, ``mode``)
    that round-trip through the JSONL header unchanged.
    """

    run_id: str
    seed: int
    goal: Goal
    space: SearchSpace
    trials: list[TrialRecord] = field(default_factory=list)
    created_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    meta: dict[str, Any] = field(default_factory=dict)

    def append(self, record: TrialRecord) -> None:
        if record.index != len(self.trials) + 1:
            raise ValueError(f"expected trial index {len(self.trials) + 1}, got {record.index}")
        self.trials.append(record)

    def __len__(self) -> int:
        return len(self.trials)

    @property
    def completed(self) -> list[TrialRecord]:
        return [t for t in self.trials if t.result.metric(self.goal.metric_name) is not None]

    def header(self) -> dict:
        h = {
            "run_id": self.run_id,
            "seed": self.seed,
            "goal": self.goal.to_dict(),
            "space": self.space.to_list(),
            "created_at": self.created_at,
            "format_version": LOG_FORMAT_VERSION,
        }
        h.update(self.meta)
        return h

    def dumps(self) -> str:
        lines = [_dumps(self.header())]
        lines.extend(_dumps(t.to_dict()) for t in self.trials)
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> ExperimentLog:
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise LogFormatError("log is empty")
        try:
            header = json.loads(lines[0])
            if header.get("format_version") != LOG_FORMAT_VERSION:
                raise LogFormatError(f"unsupported format_version {header.get('format_version')!r}")
            known = {"run_id", "seed", "goal", "space", "created_at", "format_version"}
            log = cls(
                run_id=header["run_id"],
                seed=int(header["seed"]),
                goal=Goal.from_dict(header["goal"]),
                space=SearchSpace.from_list(header["space"]),
                created_at=header["created_at"],
                meta={k: v for k, v in header.items() if k not in known},
            )
            for ln in lines[1:]:
                log.append(TrialRecord.from_dict(json.loads(ln)))
        except LogFormatError:
            raise
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise LogFormatError(f"invalid log: {exc}") from exc
        return log


def _dumps(obj: Any) -> str:
    # float repr is the shortest round-trip form
    return json.dumps(obj, ensure_ascii=False, separators=(", ", ": "))


def write_log(log: ExperimentLog, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(log.dumps(), encoding="utf-8")
    return path


def read_log(path: str | Path) -> ExperimentLog:
    return ExperimentLog.loads(Path(path).read_text(encoding="utf-8"))


def best_trial(log: ExperimentLog, goal: Goal | None = None) -> TrialRecord:
    """Best COMPLETED trial by final goal metric; earliest index wins ties."""
    goal = goal or log.goal
    best: TrialRecord | None = None
    best_v = 0.0
    for t in log.trials:
        v = t.result.metric(goal.metric_name)
        if v is None:
            continue
        if best is None or goal.direction.better(v, best_v):
            best, best_v = t, v
    if best is None:
        raise NoCompletedTrials(f"run {log.run_id} has no completed trials")
    return best


def best_so_far(values: list[float | None], direction: Direction) -> list[float | None]:
    """Prefix extremum of final metrics; None until the first completed trial."""
    out: list[float | None] = []
    cur: float | None = None
    for v in values:
        if v is not None and (cur is None or direction.better(v, cur)):
            cur = v
        out.append(cur)
    return out
