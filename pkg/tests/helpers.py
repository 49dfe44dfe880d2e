"""Shared builders for the test suite and the golden-file generator."""

from __future__ import annotations

import random
from pathlib import Path

from tcs_hpt.backend import scripted_from_policy
from tcs_hpt.core import (
    Configuration,
    Direction,
    EpochRecord,
    ExperimentLog,
    Goal,
    Proposer,
    SearchSpace,
    Status,
    TrialRecord,
    TrialResult,
)
from tcs_hpt.executor import Objective, get_builtin
from tcs_hpt.orchestrator import Mode, RunConfig

GOLDEN = Path(__file__).parent / "golden"
CREATED_AT = "2025-01-01T00:00:00+00:00"

MIXED_SPACE = SearchSpace.from_list([
    {"name": "lr", "type": "float", "range": [1e-5, 1e-1], "scale": "log"},
    {"name": "optimizer", "type": "choice", "values": ["adam", "sgd"]},
    {"name": "batch_size", "type": "choice", "values": [32, 64, 128, 256]},
    {"name": "dropout", "type": "float", "range": [0, 0.5], "scale": "linear"},
    {"name": "layers", "type": "int", "range": [1, 5], "scale": "linear"},
    {"name": "epochs", "type": "int", "range": [1, 200], "scale": "linear", "fixed": True, "value": 50},
])
ACCURACY = Goal("accuracy", Direction.MAXIMIZE, 0.85)

# lr, optimizer, batch_size, dropout, layers, final accuracy (None = FAILED)
_GOLDEN_TRIALS = [
    (1e-3, "adam", 64, 0.25, 3, 0.781),
    (1e-2, "adam", 64, 0.25, 3, 0.802),
    (3e-2, "adam", 128, 0.25, 3, 0.795),
    (5e-3, "sgd", 64, 0.1, 2, 0.8115),
    (5e-3, "sgd", 64, 0.1, 4, 0.8225),
    (2e-4, "sgd", 32, 0.4, 4, None),
    (5e-3, "sgd", 128, 0.1, 4, 0.8475),
    (5e-3, "sgd", 128, 0.05, 5, 0.8432),
    (4e-3, "sgd", 128, 0.05, 4, 0.8468),
    (4e-3, "sgd", 256, 0.1, 4, 0.8471),
]


def _epochs(final: float) -> tuple[EpochRecord, ...]:
    accs = [round(final - 0.12, 6), round(final - 0.04, 6), final]
    return tuple(EpochRecord(k, {"accuracy": a, "loss": round(1.5 - a, 6)}) for k, a in enumerate(accs, 1))


def golden_log() -> ExperimentLog:
    """Fixed 10-trial log over a mixed space, with one FAILED trial."""
    log = ExperimentLog("golden", 0, ACCURACY, MIXED_SPACE, created_at=CREATED_AT, meta={"budget": 12})
    for i, (lr, opt, bs, do, layers, acc) in enumerate(_GOLDEN_TRIALS, 1):
        config = Configuration(lr=lr, optimizer=opt, batch_size=bs, dropout=do, layers=layers, epochs=50)
        if acc is None:
            result = TrialResult((EpochRecord(1, {"loss": 2.9}),), {"loss": 2.9}, 12.5, Status.FAILED,
                                 "exit code 1\nloss diverged")
        else:
            result = TrialResult(_epochs(acc), {"accuracy": acc, "loss": round(1.5 - acc, 6)}, 60.0 + i)
        log.append(TrialRecord(i, config, result, f"step {i}", Proposer.SCRIPTED))
    return log


def quadratic_config(mode: Mode = Mode.TCS, policy: str = "coordinate-search", **kw) -> RunConfig:
    b = get_builtin("quadratic_2_3")
    backend = scripted_from_policy(policy) if mode is not Mode.RANDOM else None
    kw.setdefault("trials", 10)
    kw.setdefault("runs", 1)
    return RunConfig(
        goal=Goal("f", Direction.MINIMIZE, 0.0),
        space=b.space(),
        objective=Objective.builtin(b.name),
        optimizer_backend=backend,
        analysis_backend=backend,
        mode=mode,
        **kw,
    )


def random_log(rng: random.Random, n: int, direction: Direction) -> ExperimentLog:
    """Random log over one metric, about a third of the trials FAILED, with frequent ties."""
    goal = Goal("m", direction, 0.0)
    space = SearchSpace.from_list([{"name": "x", "type": "float", "range": [0, 1]}])
    log = ExperimentLog("rand", 0, goal, space, created_at=CREATED_AT)
    for i in range(1, n + 1):
        if rng.random() < 0.33:
            result = TrialResult(final_metrics={"other": 1.0}, status=Status.FAILED)
        else:
            result = TrialResult(final_metrics={"m": float(rng.choice([rng.randint(0, 5), rng.uniform(-3, 3)]))})
        log.append(TrialRecord(i, Configuration(x=rng.random()), result))
    return log
