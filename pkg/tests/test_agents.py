import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import ACCURACY, GOLDEN, MIXED_SPACE, golden_log
from tcs_hpt.agents import (
    ANALYSIS_SECTIONS,
    OPTIMIZER_HEADERS,
    AnalysisReport,
    ParseFailure,
    bootstrap_analysis,
    build_analysis_prompts,
    build_optimizer_prompt,
    parse_analysis_response,
    parse_optimizer_response,
    probe_attempts,
    probe_variability,
    render_hyperparameters_line,
)
from tcs_hpt.backend import ScriptedBackend
from tcs_hpt.core import (
    Configuration,
    Direction,
    Goal,
    InvalidChoice,
    ParamDef,
    SearchSpace,
    validate_config,
)
from tcs_hpt.tcs import render_report, summarize

LR = {"name": "learning_rate", "type": "float", "range": [1e-5, 1e-1], "scale": "log"}
BS = {"name": "batch_size", "type": "choice", "values": [32, 64, 128, 256]}
LR_BS = SearchSpace.from_list([LR, BS])

SIX_PART = """Problem Diagnosis: validation accuracy plateaued
Hyperparameter Impact Assessment: learning rate dominates
Primary Action: learning_rate
Specific Recommendation: lower learning_rate to 0.002
Reasoning: the loss oscillates late in training
Expected Outcome: accuracy above 0.85"""


def user_headers(text):
    return [line[3:] for line in text.splitlines() if line.startswith("## ")]


# -- optimizer prompt -----------------------------------------------------------

def test_optimizer_prompt_has_five_headers_in_order(glog):
    report = summarize(glog)
    for r in (None, report):
        prompt = build_optimizer_prompt(r, bootstrap_analysis(MIXED_SPACE, ACCURACY), MIXED_SPACE, ACCURACY)
        assert user_headers(prompt.user) == list(OPTIMIZER_HEADERS)


def test_fixed_and_optimizable_split():
    space = SearchSpace.from_list([
        {"name": "lr", "type": "float", "range": [1e-5, 1e-1], "scale": "log"},
        {"name": "epochs", "type": "int", "range": [1, 200], "fixed": True, "value": 50},
    ])
    user = build_optimizer_prompt(None, bootstrap_analysis(space, ACCURACY), space, ACCURACY).user
    fixed, free = user.split("Parameters to optimize:")
    assert "epochs = 50 (fixed)" in fixed.split("Fixed parameters")[1]
    assert "lr ∈ [1e-05, 1e-01]" in free
    assert "epochs=" not in user.split("## Your Task")[1]


def test_goal_substituted_into_system_text():
    goal = Goal("accuracy", Direction.MAXIMIZE, 0.85)
    system = build_optimizer_prompt(None, bootstrap_analysis(LR_BS, goal), LR_BS, goal).system
    for s in ("accuracy", "maximize", "0.85"):
        assert s in system


def test_latest_analysis_is_embedded():
    analysis = parse_analysis_response(SIX_PART)
    user = build_optimizer_prompt(None, analysis, LR_BS, ACCURACY).user
    section = user.split("## Latest Analysis")[1].split("## Hyperparameter Configuration")[0]
    assert "Specific Recommendation: lower learning_rate to 0.002" in section


def test_performance_override_replaces_report_block(glog):
    report = summarize(glog)
    user = build_optimizer_prompt(report, AnalysisReport(raw="x"), MIXED_SPACE, ACCURACY,
                                  performance="latest trial #10: accuracy = 0.847100").user
    block = user.split("## Current Performance")[1].split("## Latest Analysis")[0]
    assert block.strip() == "latest trial #10: accuracy = 0.847100"


# -- analysis prompt ------------------------------------------------------------

def test_analysis_prompt_embeds_report_and_headers(glog):
    report = summarize(glog)
    pair = build_analysis_prompts(report, MIXED_SPACE, ACCURACY)
    assert render_report(report).rstrip("\n") in pair.user
    required = pair.user.split("## Required Response")[1]
    positions = [required.index(f"{i}. {title}") for i, (_, title) in enumerate(ANALYSIS_SECTIONS, 1)]
    assert positions == sorted(positions)


def test_analysis_system_lists_four_steps_in_order():
    system = build_analysis_prompts(summarize(golden_log()), MIXED_SPACE, ACCURACY).system
    steps = [system.index(f"{k}. ") for k in (1, 2, 3, 4)]
    assert steps == sorted(steps)
    assert "Identify the primary problem" in system
    assert "single most impactful hyperparameter" in system


def test_analysis_prompt_raw_context():
    pair = build_analysis_prompts('{"index": 1}', MIXED_SPACE, ACCURACY)
    assert "## Raw Experiment Log (JSON)" in pair.user and '{"index": 1}' in pair.user


def test_prompts_match_golden(glog):
    report = summarize(glog)
    boot = bootstrap_analysis(MIXED_SPACE, ACCURACY)
    cases = {
        "optimizer_prompt_first.txt": build_optimizer_prompt(None, boot, MIXED_SPACE, ACCURACY),
        "optimizer_prompt_later.txt": build_optimizer_prompt(report, boot, MIXED_SPACE, ACCURACY),
        "analysis_prompt.txt": build_analysis_prompts(report, MIXED_SPACE, ACCURACY),
    }
    for name, pair in cases.items():
        assert pair.system + "\n=====\n" + pair.user == (GOLDEN / name).read_text(encoding="utf-8"), name


# -- bootstrap ------------------------------------------------------------------

def test_bootstrap_recommends_midpoints():
    space = SearchSpace.from_list([
        {"name": "lr", "type": "float", "range": [1e-5, 1e-1], "scale": "log"},
        {"name": "optimizer", "type": "choice", "values": ["adam", "sgd"]},
        {"name": "dropout", "type": "float", "range": [0, 0.5]},
    ])
    rec = bootstrap_analysis(space, ACCURACY).specific_recommendation
    assert "lr = 0.001" in rec and "optimizer = adam" in rec and "dropout = 0.25" in rec


# -- optimizer response parsing -------------------------------------------------

def test_parse_reference_example():
    text = "reasoning: lower lr to stabilize\nhyperparameters: learning_rate=0.005, batch_size=64"
    p = parse_optimizer_response(text, LR_BS)
    assert p.reasoning == "lower lr to stabilize"
    assert p.config == Configuration(learning_rate=0.005, batch_size=64)
    assert p.warnings == []


def test_parse_without_hyperparameters_line_fails():
    with pytest.raises(ParseFailure):
        parse_optimizer_response("I suggest trying a smaller learning rate.", LR_BS)
    with pytest.raises(ParseFailure):
        parse_optimizer_response("   ", LR_BS)


def test_parse_clamps_out_of_range():
    p = parse_optimizer_response("hyperparameters: learning_rate=2e-1", LR_BS)
    assert p.config["learning_rate"] == 0.1
    assert [w.kind for w in p.warnings if w.param == "learning_rate"] == ["clamped"]


def test_parse_invalid_choice_propagates():
    with pytest.raises(InvalidChoice):
        parse_optimizer_response("hyperparameters: learning_rate=0.01, batch_size=48", LR_BS)


@pytest.mark.parametrize("text", [
    "reasoning: see below\n**hyperparameters:** `learning_rate=0.005, batch_size=64`",
    "Reasoning: e.g. hyperparameters: learning_rate=0.1\n\nhyperparameters: learning_rate=0.005; batch_size=64",
    "reasoning: x\nhyperparameters:\n- learning_rate=0.005\n- batch_size=64\n",
    "reasoning: x\nHyperparameters: learning_rate = '0.005', batch_size = \"64\"",
])
def test_parse_is_lenient_and_last_line_wins(text):
    p = parse_optimizer_response(text, LR_BS)
    assert p.config == Configuration(learning_rate=0.005, batch_size=64)


names = st.from_regex(r"[a-z][a-z0-9_]{0,11}", fullmatch=True)
words = st.from_regex(r"[a-z][a-z0-9]{0,7}", fullmatch=True)


@st.composite
def space_and_config(draw):
    params, config = [], {}
    for name in draw(st.lists(names, min_size=1, max_size=6, unique=True)):
        kind = draw(st.sampled_from(["float_lin", "float_log", "int", "choice_str", "choice_int"]))
        if kind == "float_lin":
            lo = draw(st.floats(-1e6, 1e6))
            hi = lo + draw(st.floats(1e-6, 1e6))
            params.append({"name": name, "type": "float", "range": [lo, hi]})
            config[name] = draw(st.floats(lo, hi))
        elif kind == "float_log":
            lo = draw(st.floats(1e-9, 1e3))
            hi = lo * draw(st.floats(1.01, 1e6))
            params.append({"name": name, "type": "float", "range": [lo, hi], "scale": "log"})
            config[name] = draw(st.floats(lo, hi))
        elif kind == "int":
            lo = draw(st.integers(-1000, 1000))
            hi = draw(st.integers(lo + 1, lo + 10000))
            params.append({"name": name, "type": "int", "range": [lo, hi]})
            config[name] = draw(st.integers(lo, hi))
        else:
            pool = words if kind == "choice_str" else st.integers(-512, 512)
            values = draw(st.lists(pool, min_size=1, max_size=5, unique=True))
            params.append({"name": name, "type": "choice", "values": values})
            config[name] = draw(st.sampled_from(values))
    return SearchSpace.from_list(params), config


def hyperparameters_round_trip(space, raw):
    config, _ = validate_config(space, raw)
    line = render_hyperparameters_line(config)
    return config, parse_optimizer_response("reasoning: r\n" + line, space).config


@given(space_and_config())
@settings(max_examples=200)
def test_hyperparameters_round_trip(case):
    config, back = hyperparameters_round_trip(*case)
    assert back == config


# -- analysis response parsing --------------------------------------------------

def test_analysis_all_headers():
    a = parse_analysis_response(SIX_PART)
    assert a.structured
    assert a.primary_action == "learning_rate"
    assert a.expected_outcome == "accuracy above 0.85"


def test_analysis_free_form():
    text = "The model seems fine; maybe lower the learning rate a little."
    a = parse_analysis_response(text)
    assert not a.structured and a.raw == text
    assert all(getattr(a, attr) == "" for attr, _ in ANALYSIS_SECTIONS)
    assert a.render() == text


def test_analysis_reordered_and_markdown_headers():
    text = """## 6. Expected Outcome
higher accuracy
**1. Problem Diagnosis:** underfitting
### Primary Action
layers
4) Specific Recommendation: layers = 5
**Reasoning**: more capacity
Hyperparameter Impact Assessment: capacity matters most"""
    a = parse_analysis_response(text)
    assert a.structured
    assert a.problem_diagnosis == "underfitting"
    assert a.primary_action == "layers"
    assert a.specific_recommendation == "layers = 5"
    assert a.expected_outcome == "higher accuracy"


def test_analysis_missing_section_is_unstructured():
    text = SIX_PART.rsplit("\n", 1)[0]
    a = parse_analysis_response(text)
    assert not a.structured and a.raw == text


# -- variability probe ----------------------------------------------------------

def _lr_prompt():
    return build_optimizer_prompt(None, bootstrap_analysis(LR_BS, ACCURACY), LR_BS, ACCURACY)


def test_probe_identical_values():
    backend = ScriptedBackend(["hyperparameters: learning_rate=0.01"] * 10)
    values = probe_variability(backend, _lr_prompt(), 10, LR_BS["learning_rate"])
    assert values == [0.01] * 10


def test_probe_alternating_prose():
    replies = ["hyperparameters: learning_rate=0.01", "I would lower it."] * 5
    attempts = probe_attempts(ScriptedBackend(replies), _lr_prompt(), 10, LR_BS["learning_rate"])
    assert sum(a.value is not None for a in attempts) == 5
    assert [a.attempt for a in attempts] == list(range(1, 11))


def test_probe_out_of_range_counts_as_invalid():
    backend = ScriptedBackend(["hyperparameters: learning_rate=0.5"])
    (attempt,) = probe_attempts(backend, _lr_prompt(), 1, LR_BS["learning_rate"])
    assert attempt.value is None and "outside" in attempt.error


def test_probe_records_exhausted_backend():
    attempts = probe_attempts(ScriptedBackend([]), _lr_prompt(), 2, ParamDef.from_dict(LR))
    assert [a.value for a in attempts] == [None, None]
    assert all("ScriptExhausted" in a.error for a in attempts)
