"""Per-candidate rewards: format + accuracy + reasoning similarity."""

from dataclasses import dataclass
from typing import Optional

from .codec import ParsedResponse, TaskKind, format_reward
from .judge import BatchJudgeError, JudgeError, ReasoningJudge, batch_judge, judge_similarity
from .temporal import TimeInterval, tiou


class TaskMismatchError(ValueError):
    pass


class RewardJudgeError(RuntimeError):
    """Judge failure while scoring; retryable, names the failing candidates."""

    retryable = True

    def __init__(self, message, candidate_ids, errors=None):
        super().__init__(message)
        self.candidate_ids = list(candidate_ids)
        self.errors = errors or {}


@dataclass(frozen=True)
class ReferenceTarget:
    task: TaskKind
    gt_span: Optional[TimeInterval] = None
    gt_answer: Optional[bool] = None
    reference_reasoning: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "task", TaskKind(self.task))
        if self.task is TaskKind.GROUNDING:
            if self.gt_span is None or self.gt_answer is not None:
                raise ValueError("grounding reference needs gt_span and no gt_answer")
        elif self.gt_answer is None or self.gt_span is not None:
            raise ValueError("verification reference needs gt_answer and no gt_span")


@dataclass(frozen=True)
class RewardWeights:
    form: float = 1.0
    acc: float = 1.0
    sim: float = 1.0


@dataclass(frozen=True)
class RewardBreakdown:
    r_form: float
    r_acc: float
    r_sim: float
    total: float
    judge_skipped: bool = False


def accuracy_reward(p: ParsedResponse, ref: ReferenceTarget) -> float:
    if p.task is not ref.task:
        raise TaskMismatchError(f"response parsed as {p.task.value}, reference is {ref.task.value}")
    if ref.task is TaskKind.GROUNDING:
        if p.grounding_span is None:
            return 0.0
        return tiou(ref.gt_span, p.grounding_span)
    if p.verification_answer is None:
        return 0.0
    return 1.0 if p.verification_answer == ref.gt_answer else 0.0


def _assemble(p, ref, r_sim, skipped, weights):
    r_form = float(format_reward(p))
    r_acc = accuracy_reward(p, ref)
    if weights == RewardWeights():
        total = r_form + r_acc + r_sim
    else:
        total = weights.form * r_form + weights.acc * r_acc + weights.sim * r_sim
    return RewardBreakdown(r_form=r_form, r_acc=r_acc, r_sim=r_sim, total=total, judge_skipped=skipped)


def _needs_judge(p, ref):
    return bool(ref.reference_reasoning) and bool(p.think)


def total_reward(p, ref, judge: ReasoningJudge, candidate_id=None, weights=RewardWeights()):
    """Reward breakdown for one candidate.

    Without reference reasoning, r_sim is 0 and the breakdown is flagged
    judge-skipped. A candidate with no think block scores r_sim = 0 without
    calling the judge.
    """
    if p.task is not ref.task:
        raise TaskMismatchError(f"response parsed as {p.task.value}, reference is {ref.task.value}")
    if not ref.reference_reasoning:
        return _assemble(p, ref, 0.0, True, weights)
    r_sim = 0.0
    if _needs_judge(p, ref):
        try:
            r_sim = judge_similarity(judge, p.think, ref.reference_reasoning).value
        except JudgeError as exc:
            exc.candidate_id = candidate_id
            raise RewardJudgeError(f"judge failed for candidate {candidate_id}: {exc}", [candidate_id]) from exc
    return _assemble(p, ref, r_sim, False, weights)


def batch_rewards(candidates, ref, judge: ReasoningJudge, weights=RewardWeights(), candidate_ids=None):
    candidates = list(candidates)
    if not candidates:
        raise ValueError("batch_rewards needs at least one candidate")
    ids = list(candidate_ids) if candidate_ids is not None else list(range(len(candidates)))
    for p in candidates:
        if p.task is not ref.task:
            raise TaskMismatchError(f"response parsed as {p.task.value}, reference is {ref.task.value}")
    if not ref.reference_reasoning:
        return [_assemble(p, ref, 0.0, True, weights) for p in candidates]

    sims = [0.0] * len(candidates)
    todo = [i for i, p in enumerate(candidates) if _needs_judge(p, ref)]
    if todo:
        try:
            scores = batch_judge(judge, [(candidates[i].think, ref.reference_reasoning) for i in todo])
        except BatchJudgeError as exc:
            failed = [ids[todo[k]] for k in sorted(exc.errors)]
            errors = {ids[todo[k]]: e for k, e in exc.errors.items()}
            raise RewardJudgeError(f"judge failed for candidates {failed}", failed, errors) from exc
        for i, s in zip(todo, scores):
            sims[i] = s.value
    return [_assemble(p, ref, s, False, weights) for p, s in zip(candidates, sims)]
