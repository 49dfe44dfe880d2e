"""Trial execution: built-in analytic objectives or an external training command.

External commands speak a JSON-lines protocol. The configuration arrives as
one JSON object on stdin; stdout carries one JSON object per line::

    {"epoch": 1, "metrics": {"accuracy": 0.71, "loss": 0.93}}
    {"epoch": 2, "metrics": {"accuracy": 0.78, "loss": 0.64}}
    {"final": true, "metrics": {"accuracy": 0.78}}

Epoch numbers start at 1 and increase strictly; the final record comes
last. stderr is forwarded to this package's logger.
"""

from __future__ import annotations

import json
import logging
import math
import os
import signal
import subprocess
import time
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from enum import Enum

from .core import (
    Configuration,
    EpochRecord,
    Goal,
    HPTError,
    SearchSpace,
    Status,
    TrialResult,
)

log = logging.getLogger(__name__)

DEFAULT_COMMAND_TIMEOUT_S = 3600.0
KILL_GRACE_S = 1.0


class ObjectiveNotFound(HPTError):
    pass


class CommandTimeout(HPTError):
    pass


class ProtocolViolation(HPTError):
    pass


class ObjectiveKind(str, Enum):
    BUILTIN = "builtin"
    COMMAND = "command"


@dataclass(frozen=True)
class CommandSpec:
    argv: tuple[str, ...]
    workdir: str | None = None
    timeout_s: float = DEFAULT_COMMAND_TIMEOUT_S
    env: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "argv", tuple(self.argv))
        if not self.argv:
            raise ValueError("command argv must be non-empty")
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be positive")


@dataclass(frozen=True)
class Objective:
    kind: ObjectiveKind
    builtin_name: str | None = None
    command: CommandSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ObjectiveKind(self.kind))
        if (self.kind is ObjectiveKind.BUILTIN) != (self.builtin_name is not None) or \
                (self.kind is ObjectiveKind.COMMAND) != (self.command is not None):
            raise ValueError("objective needs exactly one of builtin_name / command, matching kind")

    @classmethod
    def builtin(cls, name: str) -> Objective:
        return cls(ObjectiveKind.BUILTIN, builtin_name=name)

    @classmethod
    def from_dict(cls, d: Mapping) -> Objective:
        if "builtin" in d:
            return cls.builtin(d["builtin"])
        c = d["command"]
        return cls(ObjectiveKind.COMMAND, command=CommandSpec(
            argv=tuple(c["argv"]),
            workdir=c.get("workdir"),
            timeout_s=float(c.get("timeout_s", DEFAULT_COMMAND_TIMEOUT_S)),
            env=dict(c.get("env", {})),
        ))

    def to_dict(self) -> dict:
        if self.kind is ObjectiveKind.BUILTIN:
            return {"builtin": self.builtin_name}
        c = self.command
        return {"command": {"argv": list(c.argv), "workdir": c.workdir, "timeout_s": c.timeout_s, "env": c.env}}


@dataclass(frozen=True)
class Builtin:
    name: str
    fn: Callable[[Mapping], float]
    space_template: list[dict]
    description: str = ""

    def space(self) -> SearchSpace:
        return SearchSpace.from_list(self.space_template)


def quadratic_2_3(config: Mapping) -> float:
    x, y = float(config["x"]), float(config["y"])
    return (x - 2) ** 2 + (y - 3) ** 2


BUILTINS: dict[str, Builtin] = {
    "quadratic_2_3": Builtin(
        "quadratic_2_3",
        quadratic_2_3,
        [
            {"name": "x", "type": "float", "range": [-10.0, 10.0], "scale": "linear"},
            {"name": "y", "type": "float", "range": [-10.0, 10.0], "scale": "linear"},
        ],
        "(x - 2)^2 + (y - 3)^2, minimum 0 at (2, 3)",
    ),
}


def list_builtins() -> list[Builtin]:
    return list(BUILTINS.values())


def get_builtin(name: str) -> Builtin:
    try:
        return BUILTINS[name]
    except KeyError:
        raise ObjectiveNotFound(f"no built-in objective named {name!r}") from None


def run_trial(objective: Objective, config: Configuration, goal: Goal) -> TrialResult:
    if objective.kind is ObjectiveKind.BUILTIN:
        return _run_builtin(get_builtin(objective.builtin_name), config, goal)
    return _run_command(objective.command, config, goal)


def _run_builtin(b: Builtin, config: Configuration, goal: Goal) -> TrialResult:
    t0 = time.perf_counter()
    value = float(b.fn(config))
    metrics = {goal.metric_name: value}
    return TrialResult(
        epochs=(EpochRecord(1, dict(metrics)),),
        final_metrics=metrics,
        wall_time_s=time.perf_counter() - t0,
        status=Status.COMPLETED,
    )


def _failed(epochs, final: dict, goal: Goal, t0: float, why: str) -> TrialResult:
    final = {k: v for k, v in final.items() if k != goal.metric_name}
    return TrialResult(tuple(epochs), final, time.perf_counter() - t0, Status.FAILED, why)


def parse_protocol(stdout: str) -> tuple[list[EpochRecord], dict[str, float]]:
    """Parse a command's stdout into epoch records and final metrics."""
    epochs: list[EpochRecord] = []
    final: dict[str, float] | None = None
    for n, line in enumerate(stdout.splitlines(), 1):
        if not line.strip():
            continue
        if final is not None:
            raise ProtocolViolation(f"line {n}: output after the final record")
        try:
            rec = json.loads(line)
        except ValueError:
            raise ProtocolViolation(f"line {n}: not JSON: {line[:120]!r}") from None
        if not isinstance(rec, dict) or not isinstance(rec.get("metrics"), dict):
            raise ProtocolViolation(f"line {n}: expected an object with a 'metrics' object")
        metrics = rec["metrics"]
        if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in metrics.values()):
            raise ProtocolViolation(f"line {n}: metric values must be numbers")
        metrics = {k: float(v) for k, v in metrics.items()}
        if rec.get("final") is True:
            final = metrics
        elif "epoch" in rec:
            k = rec["epoch"]
            expected = epochs[-1].epoch + 1 if epochs else 1
            if isinstance(k, bool) or not isinstance(k, int) or k < expected or (not epochs and k != 1):
                raise ProtocolViolation(f"line {n}: epoch {k!r} out of order")
            epochs.append(EpochRecord(k, metrics))
        else:
            raise ProtocolViolation(f"line {n}: record is neither an epoch nor final")
    if final is None:
        raise ProtocolViolation("no final record")
    return epochs, final


def _kill(proc: subprocess.Popen) -> None:
    try:
        os.killpg(proc.pid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError, AttributeError):
        proc.kill()


def _run_command(cmd: CommandSpec, config: Configuration, goal: Goal) -> TrialResult:
    t0 = time.perf_counter()
    env = {**os.environ, **cmd.env}
    try:
        proc = subprocess.Popen(
            list(cmd.argv), cwd=cmd.workdir, env=env, text=True, encoding="utf-8",
            stdin=subprocess.PIPE, stdout=subprocess.PIPE, stderr=subprocess.PIPE,
            start_new_session=True,
        )
    except (FileNotFoundError, PermissionError, NotADirectoryError) as exc:
        raise ObjectiveNotFound(f"cannot start {cmd.argv[0]!r}: {exc}") from exc
    payload = json.dumps(config.to_dict()) + "\n"
    try:
        stdout, stderr = proc.communicate(payload, timeout=cmd.timeout_s)
    except subprocess.TimeoutExpired:
        _kill(proc)
        try:
            stdout, stderr = proc.communicate(timeout=KILL_GRACE_S)
        except subprocess.TimeoutExpired:
            stdout, stderr = "", ""
        err = CommandTimeout(f"command exceeded {cmd.timeout_s}s and was terminated")
        epochs = []
        try:
            epochs, _ = parse_protocol(stdout or "")
        except ProtocolViolation:
            pass
        return _failed(epochs, {}, goal, t0, str(err))
    for line in (stderr or "").splitlines():
        log.info("[trial stderr] %s", line)
    tail = "\n".join((stderr or "").splitlines()[-20:])
    if proc.returncode != 0:
        return _failed([], {}, goal, t0, f"exit code {proc.returncode}\n{tail}".strip())
    try:
        epochs, final = parse_protocol(stdout)
    except ProtocolViolation as exc:
        return _failed([], {}, goal, t0, f"protocol violation: {exc}")
    v = final.get(goal.metric_name)
    if v is None or not math.isfinite(v):
        return _failed(epochs, final, goal, t0,
                       f"protocol violation: final record lacks a finite {goal.metric_name!r}")
    return TrialResult(tuple(epochs), final, time.perf_counter() - t0, Status.COMPLETED)
