"""Group-relative policy optimisation with cross-view rewards, and ego/exo
consistency metrics for temporal verification and grounding."""

from ._kernels import BACKEND
from .codec import ParsedResponse, ParseStatus, TaskKind, format_reward, parse_response, render_response
from .grpo import (
    CandidateGroup,
    GrpoConfig,
    TabularPolicy,
    gradient_check,
    grpo_step,
    kl_divergence,
    standardize_group,
    surrogate_objective,
    train,
)
from .judge import JudgeScore, ReasoningJudge, batch_judge, judge_similarity
from .metrics import MetricReport, compute_report, gap_analysis, random_baseline
from .records import PairAnnotation, PredictionRecord, QueryRecord, View
from .rewards import ReferenceTarget, RewardBreakdown, accuracy_reward, batch_rewards, total_reward
from .temporal import TimeInterval, VideoTimeline, clamp_to_timeline, interval_length, tiou

__version__ = "0.1.0"
