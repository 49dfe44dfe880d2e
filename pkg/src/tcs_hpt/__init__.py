"""LLM-driven hyperparameter tuning with a deterministic trajectory summarizer."""

from .agents import (
    AnalysisReport,
    ParseFailure,
    PromptPair,
    Proposal,
    bootstrap_analysis,
    build_analysis_prompts,
    build_optimizer_prompt,
    parse_analysis_response,
    parse_optimizer_response,
    probe_variability,
)
from .backend import OllamaBackend, OpenAIBackend, ScriptedBackend, scripted_from_policy
from .core import (
    Configuration,
    Direction,
    ExperimentLog,
    Goal,
    Kind,
    NoCompletedTrials,
    ParamDef,
    Scale,
    SearchSpace,
    TrialRecord,
    TrialResult,
    best_trial,
    read_log,
    validate_config,
    write_log,
)
from .executor import Objective, list_builtins, run_trial
from .orchestrator import Mode, RunConfig, RunOutcome, random_search, repeat_runs, run_hpt
from .tcs import StateReport, Trend, classify_trend, render_report, summarize, unexplored_regions

__version__ = "0.1.0"

__all__ = [
    "AnalysisReport",
    "best_trial",
    "bootstrap_analysis",
    "build_analysis_prompts",
    "build_optimizer_prompt",
    "classify_trend",
    "Configuration",
    "Direction",
    "ExperimentLog",
    "Goal",
    "Kind",
    "list_builtins",
    "Mode",
    "NoCompletedTrials",
    "Objective",
    "OllamaBackend",
    "OpenAIBackend",
    "ParamDef",
    "parse_analysis_response",
    "parse_optimizer_response",
    "ParseFailure",
    "probe_variability",
    "PromptPair",
    "Proposal",
    "random_search",
    "read_log",
    "render_report",
    "repeat_runs",
    "run_hpt",
    "run_trial",
    "RunConfig",
    "RunOutcome",
    "Scale",
    "scripted_from_policy",
    "ScriptedBackend",
    "SearchSpace",
    "StateReport",
    "summarize",
    "Trend",
    "TrialRecord",
    "TrialResult",
    "unexplored_regions",
    "validate_config",
    "write_log",
]
