import json
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import MIXED_SPACE, random_log
from tcs_hpt.core import (
    ConfigError,
    Configuration,
    Direction,
    ExperimentLog,
    Goal,
    InvalidChoice,
    InvalidSearchSpace,
    LogFormatError,
    MalformedValue,
    NoCompletedTrials,
    SearchSpace,
    Status,
    TrialRecord,
    TrialResult,
    UnknownParameter,
    best_so_far,
    best_trial,
    read_log,
    round_half_away,
    validate_config,
    write_log,
)

LR_SPACE = SearchSpace.from_list([{"name": "lr", "type": "float", "range": [1e-5, 1e-1], "scale": "log"}])
OPT_SPACE = SearchSpace.from_list([{"name": "optimizer", "type": "choice", "values": ["adam", "sgd"]}])


def make_log(finals, direction=Direction.MAXIMIZE, metric="accuracy"):
    goal = Goal(metric, direction, 1.0)
    space = SearchSpace.from_list([{"name": "x", "type": "float", "range": [0, 1]}])
    log = ExperimentLog("t", 0, goal, space)
    for i, v in enumerate(finals, 1):
        if v is None:
            result = TrialResult(status=Status.FAILED)
        else:
            result = TrialResult(final_metrics={metric: v})
        log.append(TrialRecord(i, Configuration(x=0.5), result))
    return log


# -- search space ---------------------------------------------------------------

@pytest.mark.parametrize("bad", [
    [],
    [{"name": "a", "type": "float", "range": [1, 0]}],
    [{"name": "a", "type": "float", "range": [0, 1], "scale": "log"}],
    [{"name": "a", "type": "choice", "values": []}],
    [{"name": "a", "type": "choice", "values": ["x", "x"]}],
    [{"name": "a", "type": "int", "range": [0.5, 3]}],
    [{"name": "a", "type": "float", "range": [0, 1]}, {"name": "a", "type": "float", "range": [0, 1]}],
    [{"name": "a", "type": "int", "range": [1, 9], "fixed": True, "value": 5}],
    [{"name": "a", "type": "int", "range": [1, 9], "fixed": True, "value": 12},
     {"name": "b", "type": "float", "range": [0, 1]}],
])
def test_invalid_spaces_rejected(bad):
    with pytest.raises(InvalidSearchSpace):
        SearchSpace.from_list(bad)


def test_space_round_trip():
    assert SearchSpace.from_list(MIXED_SPACE.to_list()) == MIXED_SPACE
    assert MIXED_SPACE["epochs"].fixed_value == 50
    assert MIXED_SPACE.names == ["lr", "optimizer", "batch_size", "dropout", "layers", "epochs"]


def test_midpoints():
    assert MIXED_SPACE["lr"].midpoint() == pytest.approx(1e-3)
    assert MIXED_SPACE["optimizer"].midpoint() == "adam"
    assert MIXED_SPACE["dropout"].midpoint() == 0.25
    assert MIXED_SPACE["layers"].midpoint() == 3
    assert MIXED_SPACE["epochs"].midpoint() == 101  # range midpoint; pinning is separate


def test_round_half_away():
    assert [round_half_away(x) for x in (0.5, 1.5, 2.5, -0.5, -2.5, 2.4)] == [1, 2, 3, -1, -3, 2]


# -- validate_config ------------------------------------------------------------

def test_validate_in_range():
    config, warnings = validate_config(LR_SPACE, {"lr": 0.005})
    assert config == Configuration(lr=0.005)
    assert warnings == []


def test_validate_clamps():
    config, warnings = validate_config(LR_SPACE, {"lr": 0.5})
    assert config["lr"] == 0.1
    assert [w.kind for w in warnings] == ["clamped"]


def test_validate_invalid_choice():
    with pytest.raises(InvalidChoice):
        validate_config(OPT_SPACE, {"optimizer": "rmsprop"})


def test_validate_unknown_and_malformed():
    with pytest.raises(UnknownParameter):
        validate_config(LR_SPACE, {"lr": 0.01, "momentum": 0.9})
    with pytest.raises(MalformedValue):
        validate_config(LR_SPACE, {"lr": "fast"})
    with pytest.raises(MalformedValue):
        validate_config(LR_SPACE, {"lr": float("nan")})


def test_validate_int_rounding_and_fixed_pinning():
    config, warnings = validate_config(MIXED_SPACE, {
        "lr": "1e-3", "optimizer": "sgd", "batch_size": "64", "dropout": 0.1, "layers": 2.5, "epochs": 80,
    })
    assert config["layers"] == 3 and isinstance(config["layers"], int)
    assert config["batch_size"] == 64
    assert config["epochs"] == 50
    kinds = {w.param: w.kind for w in warnings}
    assert kinds["layers"] == "rounded" and kinds["epochs"] == "fixed"


def test_validate_fills_missing():
    previous = Configuration(lr=0.01, optimizer="sgd", batch_size=128, dropout=0.3, layers=2, epochs=50)
    config, warnings = validate_config(MIXED_SPACE, {"lr": 0.02}, previous)
    assert config["optimizer"] == "sgd" and config["layers"] == 2
    config, _ = validate_config(MIXED_SPACE, {"lr": 0.02})
    assert config["optimizer"] == "adam" and config["dropout"] == 0.25
    assert all(w.kind == "filled" for w in warnings)


def test_config_error_carries_param():
    with pytest.raises(ConfigError) as exc:
        validate_config(OPT_SPACE, {"optimizer": "rmsprop"})
    assert exc.value.param == "optimizer"


@st.composite
def raw_configs(draw):
    raw = {}
    for p in MIXED_SPACE:
        if p.kind.value == "choice":
            raw[p.name] = draw(st.sampled_from(p.values))
        else:
            raw[p.name] = draw(st.floats(-1e3, 1e3, allow_nan=False))
    return raw


@given(raw_configs())
def test_validate_is_idempotent_and_in_range(raw):
    config, _ = validate_config(MIXED_SPACE, raw)
    again, warnings = validate_config(MIXED_SPACE, config)
    assert again == config
    assert warnings == []
    for p in MIXED_SPACE:
        v = config[p.name]
        if p.kind.value == "choice":
            assert v in p.values
        else:
            assert p.low <= v <= p.high


# -- best_trial -----------------------------------------------------------------

def test_best_trial_examples():
    assert best_trial(make_log([0.81, 0.85, 0.84])).index == 2
    assert best_trial(make_log([5.2, 1.1, 1.1], Direction.MINIMIZE, "loss")).index == 2
    with pytest.raises(NoCompletedTrials):
        best_trial(make_log([None, None]))


def test_best_trial_ignores_failed_and_nonfinite():
    log = make_log([0.5, None, float("inf"), 0.6])
    assert best_trial(log).index == 4


def brute_force_best(log):
    name, direction = log.goal.metric_name, log.goal.direction
    scored = [(t.index, t.result.final_metrics[name]) for t in log.trials
              if t.result.status is Status.COMPLETED and name in t.result.final_metrics
              and math.isfinite(t.result.final_metrics[name])]
    if not scored:
        return None
    sign = 1 if direction is Direction.MAXIMIZE else -1
    top = max(sign * v for _, v in scored)
    return min(i for i, v in scored if sign * v == top)


def test_best_trial_matches_brute_force():
    rng = random.Random(1234)
    for case in range(1000):
        log = random_log(rng, rng.randint(1, 15), rng.choice(list(Direction)))
        expected = brute_force_best(log)
        if expected is None:
            with pytest.raises(NoCompletedTrials):
                best_trial(log)
        else:
            assert best_trial(log).index == expected, case


@given(st.lists(st.one_of(st.none(), st.floats(-100, 100)), max_size=30), st.sampled_from(list(Direction)))
def test_best_so_far_is_monotone(values, direction):
    curve = best_so_far(values, direction)
    assert len(curve) == len(values)
    seen = [v for v in curve if v is not None]
    for a, b in zip(seen, seen[1:]):
        assert (b >= a) if direction is Direction.MAXIMIZE else (b <= a)
    first = next((i for i, v in enumerate(values) if v is not None), len(values))
    assert all(v is None for v in curve[:first])


# -- log serialization ----------------------------------------------------------

def test_log_round_trip(glog, tmp_path):
    path = write_log(glog, tmp_path / "run.jsonl")
    back = read_log(path)
    assert back.dumps() == glog.dumps()
    assert back.meta == {"budget": 12}
    header = json.loads(path.read_text().splitlines()[0])
    assert header["format_version"] == 1
    assert set(header) >= {"run_id", "seed", "goal", "space", "created_at"}


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=8))
@settings(max_examples=50)
def test_floats_survive_serialization(values):
    log = make_log(values)
    back = ExperimentLog.loads(log.dumps())
    assert [t.result.final_metrics["accuracy"] for t in back.trials] == values


def test_log_rejects_bad_input():
    with pytest.raises(LogFormatError):
        ExperimentLog.loads("")
    with pytest.raises(LogFormatError):
        ExperimentLog.loads('{"format_version": 2}\n')
    with pytest.raises(LogFormatError):
        ExperimentLog.loads("not json\n")


def test_append_requires_contiguous_indices():
    log = make_log([0.5])
    with pytest.raises(ValueError):
        log.append(TrialRecord(3, Configuration(x=0.1), TrialResult(final_metrics={"accuracy": 0.1})))
