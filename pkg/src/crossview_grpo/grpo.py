"""Group-relative policy optimisation over tabular softmax policies.

The objective for a batch of groups is the mean over groups of

    sum_i  pi(o_i) / pi_old(o_i) * A_i   -   beta * KL(pi || pi_ref)

evaluated at each group's context, with A_i the group-standardised rewards.
Ratios are not clipped unless ``GrpoConfig.clip_epsilon`` is set.
"""

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Optional

import numpy as np

from . import _kernels


class NumericError(ArithmeticError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class KLDivergenceError(NumericError):
    pass


class TrainingError(RuntimeError):
    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


def _log_softmax(x):
    m = np.max(x)
    z = x - m
    return z - math.log(np.exp(z).sum())


@dataclass
class TabularPolicy:
    """Softmax policy with one row of logits per context."""

    logits: np.ndarray

    def __post_init__(self):
        self.logits = np.array(self.logits, dtype=np.float64)
        if self.logits.ndim != 2:
            raise ValueError("logits must be a (contexts, actions) table")

    @classmethod
    def uniform(cls, contexts, actions):
        return cls(np.zeros((contexts, actions)))

    @classmethod
    def random(cls, contexts, actions, rng, scale=1.0):
        return cls(rng.normal(scale=scale, size=(contexts, actions)))

    @property
    def contexts(self):
        return self.logits.shape[0]

    @property
    def actions(self):
        return self.logits.shape[1]

    @property
    def n_params(self):
        return self.logits.size

    def log_probs(self, context):
        return _log_softmax(self.logits[context])

    def probs(self, context):
        return np.exp(self.log_probs(context))

    def copy(self):
        return TabularPolicy(self.logits.copy())

    def sample(self, context, n, rng):
        cdf = np.cumsum(self.probs(context))
        u = rng.random(n) * cdf[-1]
        return np.minimum(np.searchsorted(cdf, u, side="right"), self.actions - 1)

    def greedy(self, context):
        return int(np.argmax(self.logits[context]))


@dataclass
class GrpoConfig:
    group_size: int = 8
    beta: float = 0.04
    advantage_epsilon: float = 1e-6
    learning_rate: float = 0.05
    iterations: int = 500
    seed: int = 0
    prompts_per_step: int = 1
    clip_epsilon: Optional[float] = None

    def __post_init__(self):
        if self.group_size < 1:
            raise ValueError("group_size must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.advantage_epsilon <= 0:
            raise ValueError("advantage_epsilon must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.prompts_per_step < 1:
            raise ValueError("prompts_per_step must be >= 1")
        if self.clip_epsilon is not None and self.clip_epsilon <= 0:
            raise ValueError("clip_epsilon must be positive when set")


@dataclass
class CandidateGroup:
    prompt_id: object
    context: int
    outcomes: List[int]
    rewards: List[float]
    old_logprobs: List[float]
    new_logprobs: Optional[List[float]] = None
    advantages: Optional[List[float]] = None

    def __post_init__(self):
        n = len(self.outcomes)
        if n < 1:
            raise ValueError("a candidate group needs at least one outcome")
        if self.new_logprobs is None:
            self.new_logprobs = list(self.old_logprobs)
        for name in ("rewards", "old_logprobs", "new_logprobs"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has length {len(getattr(self, name))}, expected {n}")
        if self.advantages is not None and len(self.advantages) != n:
            raise ValueError("advantages length mismatch")

    @property
    def size(self):
        return len(self.outcomes)

    def standardize(self, epsilon):
        self.advantages = standardize_group(self.rewards, epsilon)
        return self


def standardize_group(rewards, epsilon=1e-6):
    """(r - mean) / std with the population std; all zeros when std < epsilon.

    Moments are accumulated in exact rational arithmetic, so an exact shift
    or positive rescaling of the inputs gives bit-identical advantages.
    """
    if len(rewards) == 0:
        raise ValueError("cannot standardise an empty group")
    try:
        r = [Fraction(float(x)) for x in rewards]
    except (OverflowError, ValueError) as exc:
        raise NumericError(f"non-finite reward in group: {rewards}") from exc
    g = len(r)
    s = sum(r)
    centred = [g * x - s for x in r]  # g * (r_i - mean)
    ss = sum(c * c for c in centred)  # g**3 * population variance
    if ss == 0 or math.sqrt(float(ss / g**3)) < epsilon:
        return [0.0] * g
    return [math.copysign(math.sqrt(float(g * c * c / ss)), c) if c else 0.0 for c in centred]


def surrogate_objective(g: CandidateGroup) -> float:
    if g.advantages is None:
        raise ValueError("advantages not filled; call standardize first")
    new = np.asarray(g.new_logprobs, dtype=np.float64)
    old = np.asarray(g.old_logprobs, dtype=np.float64)
    if not (np.all(np.isfinite(new)) and np.all(np.isfinite(old))):
        raise NumericError("non-finite log-probability in candidate group")
    ratios = np.exp(new - old)
    total = 0.0
    for ratio, adv in zip(ratios, g.advantages):
        total += float(ratio) * adv
    return total


def kl_divergence(p: TabularPolicy, ref: TabularPolicy, context) -> float:
    """Exact KL(p || ref) at one context."""
    if p.actions != ref.actions:
        raise ValueError("policies have different action spaces")
    lp = p.log_probs(context)
    lr = ref.log_probs(context)
    probs = np.exp(lp)
    if np.any((np.exp(lr) == 0) & (probs > 0)):
        raise KLDivergenceError("reference assigns zero probability to a supported action")
    return max(float(np.sum(probs * (lp - lr))), 0.0)


def kl_divergence_probs(p, q):
    """KL between two explicit probability vectors."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    mask = p > 0
    if np.any(q[mask] == 0):
        raise KLDivergenceError("reference assigns zero probability to a supported action")
    return max(float(np.sum(p[mask] * np.log(p[mask] / q[mask]))), 0.0)


def objective_value(policy: TabularPolicy, ref: TabularPolicy, groups, beta, clip_epsilon=None):
    """Mean over groups of surrogate - beta * KL, composed from the scalar ops.

    Kept separate from the fused gradient kernel so it can serve as the
    finite-difference oracle.
    """
    total = 0.0
    for g in groups:
        lp = policy.log_probs(g.context)
        new = [float(lp[a]) for a in g.outcomes]
        if clip_epsilon:
            surr = 0.0
            for n, o, adv in zip(new, g.old_logprobs, g.advantages):
                ratio = math.exp(n - o)
                clipped = min(max(ratio, 1 - clip_epsilon), 1 + clip_epsilon)
                surr += min(ratio * adv, clipped * adv)
        else:
            view = CandidateGroup(g.prompt_id, g.context, g.outcomes, g.rewards, g.old_logprobs, new, g.advantages)
            surr = surrogate_objective(view)
        total += surr - beta * kl_divergence(policy, ref, g.context)
    return total / len(groups)


def _pack(groups, policy):
    g_size = groups[0].size
    if any(g.size != g_size for g in groups):
        # ragged groups: pad with zero-advantage copies of the first outcome
        g_size = max(g.size for g in groups)
    n = len(groups)
    ctx = np.empty(n, dtype=np.int64)
    actions = np.zeros((n, g_size), dtype=np.int64)
    old = np.zeros((n, g_size))
    adv = np.zeros((n, g_size))
    for k, g in enumerate(groups):
        if g.advantages is None:
            raise ValueError(f"group {g.prompt_id!r} has no advantages")
        if not 0 <= g.context < policy.contexts:
            raise ValueError(f"group {g.prompt_id!r} context {g.context} outside the policy table")
        acts = np.asarray(g.outcomes, dtype=np.int64)
        if np.any(acts < 0) or np.any(acts >= policy.actions):
            raise ValueError(f"group {g.prompt_id!r} has an action outside the policy table")
        m = g.size
        ctx[k] = g.context
        actions[k, :m] = acts
        actions[k, m:] = acts[0]
        old[k, :m] = g.old_logprobs
        old[k, m:] = g.old_logprobs[0]
        adv[k, :m] = g.advantages
    if not np.all(np.isfinite(old)):
        raise NumericError("non-finite old log-probability")
    return ctx, actions, old, adv


def objective_and_gradient(policy, ref, groups, beta, clip_epsilon=None):
    """(objective, grad, mean_kl, mean_surrogate) via the active kernel backend."""
    ctx, actions, old, adv = _pack(groups, policy)
    return _kernels.grpo_objective_grad(
        policy.logits, ref.logits, ctx, actions, old, adv, beta, clip_epsilon or 0.0
    )


@dataclass
class StepDiagnostics:
    objective: float
    surrogate: float
    mean_kl: float
    mean_reward: float
    grad_norm: float


def grpo_step(policy, old, ref, groups, cfg: GrpoConfig):
    """One gradient-ascent step. Returns ``(new_policy, StepDiagnostics)``.

    ``old`` is the sampling policy; the groups already carry its
    log-probabilities, so it is only checked for shape.
    """
    if not groups:
        raise ValueError("grpo_step needs at least one group")
    for p in (old, ref):
        if p.logits.shape != policy.logits.shape:
            raise ValueError("policy, old and ref must share one (contexts, actions) shape")
    for g in groups:
        if g.advantages is None:
            g.standardize(cfg.advantage_epsilon)
    obj, grad, kl, surr = objective_and_gradient(policy, ref, groups, cfg.beta, cfg.clip_epsilon)
    mean_reward = float(np.mean([r for g in groups for r in g.rewards]))
    grad_norm = float(np.linalg.norm(grad))
    diag = StepDiagnostics(objective=obj, surrogate=surr, mean_kl=kl, mean_reward=mean_reward, grad_norm=grad_norm)
    if not (np.all(np.isfinite(grad)) and math.isfinite(obj)):
        raise NumericError("non-finite gradient in grpo_step", diag)
    return TabularPolicy(policy.logits + cfg.learning_rate * grad), diag


@dataclass
class GradientCheckResult:
    max_rel_error: float
    worst_index: tuple
    analytic: np.ndarray = field(repr=False)
    numeric: np.ndarray = field(repr=False)


def gradient_check(policy, old, ref, groups, cfg: GrpoConfig, h=1e-6, max_params=10_000):
    """Compare the analytic gradient with central finite differences."""
    if policy.n_params > max_params:
        raise ValueError(f"gradient_check limited to {max_params} parameters, got {policy.n_params}")
    for g in groups:
        if g.advantages is None:
            g.standardize(cfg.advantage_epsilon)
    _, analytic, _, _ = objective_and_gradient(policy, ref, groups, cfg.beta, cfg.clip_epsilon)
    numeric = np.zeros_like(policy.logits)
    probe = policy.copy()
    for idx in np.ndindex(policy.logits.shape):
        x0 = probe.logits[idx]
        probe.logits[idx] = x0 + h
        f_plus = objective_value(probe, ref, groups, cfg.beta, cfg.clip_epsilon)
        probe.logits[idx] = x0 - h
        f_minus = objective_value(probe, ref, groups, cfg.beta, cfg.clip_epsilon)
        probe.logits[idx] = x0
        numeric[idx] = (f_plus - f_minus) / (2 * h)
    rel = np.abs(analytic - numeric) / (np.abs(numeric) + 1e-8)
    worst = np.unravel_index(int(np.argmax(rel)), rel.shape)
    return GradientCheckResult(float(rel[worst]), tuple(int(i) for i in worst), analytic, numeric)


def random_instance(rng, contexts=2, actions=5, group_size=4, n_groups=3):
    """Random (policy, old, ref, groups) tuple for gradient checks."""
    policy = TabularPolicy.random(contexts, actions, rng)
    old = TabularPolicy.random(contexts, actions, rng)
    ref = TabularPolicy.random(contexts, actions, rng)
    groups = []
    for k in range(n_groups):
        c = int(rng.integers(contexts))
        outcomes = [int(a) for a in rng.integers(actions, size=group_size)]
        lp_old = old.log_probs(c)
        groups.append(
            CandidateGroup(
                prompt_id=k,
                context=c,
                outcomes=outcomes,
                rewards=[float(x) for x in rng.uniform(0, 3, size=group_size)],
                old_logprobs=[float(lp_old[a]) for a in outcomes],
            )
        )
    return policy, old, ref, groups


CURVE_COLUMNS = ("step", "r_form_mean", "r_acc_mean", "r_sim_mean", "total_mean", "kl_mean", "objective")


@dataclass
class RewardCurves:
    rows: list = field(default_factory=list)

    def append(self, step, r_form, r_acc, r_sim, total, kl, objective):
        self.rows.append((step, r_form, r_acc, r_sim, total, kl, objective))

    def column(self, name):
        k = CURVE_COLUMNS.index(name)
        return np.array([r[k] for r in self.rows], dtype=np.float64)

    def window_means(self, name="total_mean", frac=0.1):
        """Mean of a column over the first and last ``frac`` of steps."""
        col = self.column(name)
        k = max(1, int(round(len(col) * frac)))
        return float(col[:k].mean()), float(col[-k:].mean())

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for row in self.rows:
            w.writerow([row[0]] + [repr(float(x)) for x in row[1:]])
        return buf.getvalue()


def train(env, policy, cfg: GrpoConfig, reward_fn, ref=None):
    """Run the GRPO loop.

    ``env.sample_prompts(rng, n)`` returns prompts with ``prompt_id`` and
    ``context`` attributes; ``reward_fn(prompt, actions)`` returns one
    RewardBreakdown per sampled action. The old policy is refreshed every
    iteration. Returns ``(policy, RewardCurves)``.
    """
    ref = policy.copy() if ref is None else ref
    prompt_rng, sample_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(2))
    curves = RewardCurves()
    for step in range(cfg.iterations):
        old = policy.copy()
        groups, breakdowns = [], []
        try:
            for prompt in env.sample_prompts(prompt_rng, cfg.prompts_per_step):
                actions = old.sample(prompt.context, cfg.group_size, sample_rng)
                scored = reward_fn(prompt, actions)
                lp = old.log_probs(prompt.context)
                groups.append(
                    CandidateGroup(
                        prompt_id=prompt.prompt_id,
                        context=prompt.context,
                        outcomes=[int(a) for a in actions],
                        rewards=[b.total for b in scored],
                        old_logprobs=[float(lp[a]) for a in actions],
                    ).standardize(cfg.advantage_epsilon)
                )
                breakdowns.extend(scored)
            policy, diag = grpo_step(policy, old, ref, groups, cfg)
        except NumericError:
            raise
        except Exception as exc:
            raise TrainingError(f"training failed at step {step}: {exc}", step) from exc
        curves.append(
            step,
            float(np.mean([b.r_form for b in breakdowns])),
            float(np.mean([b.r_acc for b in breakdowns])),
            float(np.mean([b.r_sim for b in breakdowns])),
            float(np.mean([b.total for b in breakdowns])),
            diag.mean_kl,
            diag.objective,
        )
    return policy, curves
