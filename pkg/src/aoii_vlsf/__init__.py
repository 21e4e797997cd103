"""Feedback scheduling for VLSF codes under the age of incorrect information."""

__version__ = "0.1.0"

from .aoii_dynamics import build_chain, feedback_penalty
from .baseline import best_periodic
from .channel import (
    DecodePmf,
    FeedbackSequence,
    estimate_pmf,
    expected_delay,
    load_pmf,
    load_sequence,
    save_pmf,
    save_sequence,
)
from .mdp import (
    build_aoii_mdp,
    build_delay_mdp,
    extract_feedback_sequence,
    policy_average_cost,
    rvi_solve,
    solve,
    solve_exact,
)
from .simulator import SimConfig, SimReport, simulate, sweep
from .source import SourceModel, new_source, p_same

__all__ = [
    "DecodePmf", "FeedbackSequence", "SimConfig", "SimReport", "SourceModel",
    "best_periodic", "build_aoii_mdp", "build_chain", "build_delay_mdp", "estimate_pmf",
    "expected_delay", "extract_feedback_sequence", "feedback_penalty", "load_pmf",
    "load_sequence", "new_source", "p_same", "policy_average_cost", "rvi_solve",
    "save_pmf", "save_sequence", "simulate", "solve", "solve_exact", "sweep",
]
