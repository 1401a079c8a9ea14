"""Experiment orchestration: configuration, stages, summary and outputs."""

from .config import (STAGES, Bounds, EvalConfig, ExperimentConfig, default_config, default_config_text,
                     derive_seed, describe_config, load_config, parse_config)
from .experiment import ExperimentOutcome, load_reports, recompute_summary, run_experiment
from .stages import (StageResult, Workspace, run_stage1, run_stage2, run_stage3, run_stage4, run_technique1,
                     run_technique2, split_hygiene)
from .summary import UNAVAILABLE, UNBOUNDED, BiasSummary, bias_gap, mean_ratio, mitigation_ratio, summarize
