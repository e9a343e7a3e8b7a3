"""A seeded two-view environment for desk-scale method comparisons.

Each episode is one latent event: a span drawn from a fixed vocabulary of
bin-aligned spans on a ``T``-second timeline. The ego and exo views each see
a discrete cue derived from the span's start bin (the exo cue is shifted by a
fixed offset) that is independently replaced by a random cue with the view's
noise probability. The policy context is the cue index; an action picks a
reasoning template and a span. Each view has exactly one correct template
per event, so reference reasoning differs across views while the answer
(the span) is shared.

No video frames are modelled.
"""

import csv
import io
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import _kernels
from .codec import TaskKind, format_span, parse_response, render_response
from .grpo import GrpoConfig, TabularPolicy, train
from .judge import ReasoningJudge
from .metrics import compute_report
from .records import PairAnnotation, PredictionRecord, QueryRecord, QueryType, Subset, View
from .rewards import ReferenceTarget, batch_rewards
from .temporal import TimeInterval, tiou

EGO_WORDS = (
    "hands", "fingers", "grip", "close", "tabletop", "reach", "held", "object",
    "wrist", "below", "chest", "level", "pick", "touch", "near", "lens",
)
EXO_WORDS = (
    "body", "room", "posture", "walks", "stands", "wide", "corner", "doorway",
    "shelf", "floor", "side", "turns", "across", "distance", "frame", "figure",
)


def default_span_vocabulary(bins):
    """One span per start bin, lengths cycling through 2, 3, 4 bins."""
    lengths = (2, 3, 4)
    return [(b, min(b + lengths[b % 3], bins)) for b in range(bins)]


@dataclass(frozen=True)
class EnvConfig:
    T: float = 100.0
    bins: int = 20
    span_vocabulary: Optional[Tuple[Tuple[int, int], ...]] = None
    ego_noise: float = 0.1
    exo_noise: float = 0.25
    reasoning_vocab: int = 8
    episodes: int = 2000
    eval_episodes: int = 500
    exo_cue_shift: int = 7
    seed: int = 0

    def __post_init__(self):
        if self.T <= 0 or self.bins < 1:
            raise ValueError("T must be positive and bins >= 1")
        if self.span_vocabulary is None:
            object.__setattr__(self, "span_vocabulary", tuple(default_span_vocabulary(self.bins)))
        else:
            object.__setattr__(self, "span_vocabulary", tuple(tuple(int(x) for x in s) for s in self.span_vocabulary))
        if not self.span_vocabulary:
            raise ValueError("span_vocabulary must be non-empty")
        for s, e in self.span_vocabulary:
            if not 0 <= s < e <= self.bins:
                raise ValueError(f"span ({s}, {e}) is not a bin-aligned span with s < e")
        for name in ("ego_noise", "exo_noise"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {p}")
        if self.reasoning_vocab < 2 or self.reasoning_vocab % 2:
            raise ValueError("reasoning_vocab must be an even number >= 2")
        if self.episodes < 1 or self.eval_episodes < 0:
            raise ValueError("episode counts must be positive")

    @property
    def n_spans(self):
        return len(self.span_vocabulary)

    @property
    def contexts(self):
        return 2 * self.bins

    @property
    def actions(self):
        return self.reasoning_vocab * self.n_spans

    def span_seconds(self, j) -> TimeInterval:
        s, e = self.span_vocabulary[j]
        w = self.T / self.bins
        return TimeInterval(s * w, e * w)

    def noise(self, view):
        return self.ego_noise if View(view) is View.EGO else self.exo_noise


@dataclass(frozen=True)
class LatentEvent:
    span_index: int
    true_span: TimeInterval
    reference_reasoning: Dict[View, str]
    T: float


@dataclass(frozen=True)
class ViewObservation:
    view: View
    cue_index: int


@dataclass(frozen=True)
class Episode:
    index: int
    event: LatentEvent
    ego: ViewObservation
    exo: ViewObservation
    refined: QueryRecord
    misaligned: QueryRecord

    def observation(self, view):
        return self.ego if View(view) is View.EGO else self.exo

    def annotation(self) -> PairAnnotation:
        return PairAnnotation(
            pair_id=self.refined.pair_id,
            subset=Subset.SYNTHETIC,
            video_ids={View.EGO: f"{self.refined.pair_id}-ego", View.EXO: f"{self.refined.pair_id}-exo"},
            durations={View.EGO: self.event.T, View.EXO: self.event.T},
            queries=(self.refined, self.misaligned),
        )


# --- text rendering -----------------------------------------------------------


def template_text(cfg: EnvConfig, k: int) -> str:
    half = cfg.reasoning_vocab // 2
    words = EGO_WORDS if k < half else EXO_WORDS
    i = k % half
    picks = [words[(i * 3 + m) % len(words)] for m in range(4)]
    view_word = "wearer" if k < half else "observer"
    return f"the {view_word} sees {' '.join(picks)}"


def _zone(b, bins):
    return ("early", "middle", "late")[min(3 * b // bins, 2)]


def span_description(cfg: EnvConfig, j: int) -> str:
    s, e = cfg.span_vocabulary[j]
    return f"action starts {_zone(s, cfg.bins)} near bin {s} and ends {_zone(e - 1, cfg.bins)} near bin {e}"


def correct_template(cfg: EnvConfig, view, j: int) -> int:
    half = cfg.reasoning_vocab // 2
    if View(view) is View.EGO:
        return j % half
    return half + (3 * j + 1) % half


def reference_reasoning(cfg: EnvConfig, view, j: int) -> str:
    return f"{template_text(cfg, correct_template(cfg, view, j))} ; {span_description(cfg, j)}"


def decode_action(cfg: EnvConfig, action: int):
    """Action index -> (template index, span index)."""
    return divmod(int(action), cfg.n_spans)


def encode_action(cfg: EnvConfig, template: int, span_index: int) -> int:
    return template * cfg.n_spans + span_index


def render_action(cfg: EnvConfig, action: int) -> str:
    k, j = decode_action(cfg, action)
    think = f"{template_text(cfg, k)} ; {span_description(cfg, j)}"
    return render_response(think, format_span(cfg.span_seconds(j)))


# --- episodes -----------------------------------------------------------------


def canonical_cue(cfg: EnvConfig, view, j: int) -> int:
    start_bin = cfg.span_vocabulary[j][0]
    if View(view) is View.EGO:
        return start_bin
    return cfg.bins + (start_bin + cfg.exo_cue_shift) % cfg.bins


def _observe(cfg, view, j, rng):
    cue = canonical_cue(cfg, view, j)
    if rng.random() < cfg.noise(view):
        offset = 0 if View(view) is View.EGO else cfg.bins
        cue = offset + int(rng.integers(cfg.bins))
    return ViewObservation(View(view), cue)


def generate_episode(cfg: EnvConfig, rng, index=0) -> Episode:
    j = int(rng.integers(cfg.n_spans))
    span = cfg.span_seconds(j)
    event = LatentEvent(
        span_index=j,
        true_span=span,
        reference_reasoning={v: reference_reasoning(cfg, v, j) for v in View},
        T=cfg.T,
    )
    ego = _observe(cfg, View.EGO, j, rng)
    exo = _observe(cfg, View.EXO, j, rng)
    others = [m for m in range(cfg.n_spans) if tiou(span, cfg.span_seconds(m)) <= 0.5]
    m = others[int(rng.integers(len(others)))] if others else j
    pair_id = f"ep{index:06d}"
    refined = QueryRecord(pair_id, "q0", Subset.SYNTHETIC, f"event {j}", QueryType.REFINED, span, True)
    misaligned = QueryRecord(
        pair_id, "q1", Subset.SYNTHETIC, f"event {m} instead of {j}", QueryType.MISALIGNED, cfg.span_seconds(m), False
    )
    return Episode(index, event, ego, exo, refined, misaligned)


def episode_at(cfg: EnvConfig, index: int) -> Episode:
    """Episode ``index`` as a pure function of (config, seed, index)."""
    return generate_episode(cfg, np.random.default_rng([cfg.seed, index]), index)


def make_episodes(cfg: EnvConfig, start, count):
    return [episode_at(cfg, i) for i in range(start, start + count)]


@dataclass(frozen=True)
class Prompt:
    prompt_id: str
    context: int
    view: View
    episode: Episode


class SyntheticEnv:
    """Samples (episode, view) prompts from a fixed training set."""

    def __init__(self, cfg: EnvConfig, episodes=None):
        self.cfg = cfg
        self.episodes = episodes if episodes is not None else make_episodes(cfg, 0, cfg.episodes)

    def sample_prompts(self, rng, n):
        """Draws ceil(n / 2) episodes and returns both views of each, truncated to n."""
        idx = rng.integers(len(self.episodes), size=(n + 1) // 2)
        out = []
        for i in idx:
            ep = self.episodes[int(i)]
            for view in (View.EGO, View.EXO):
                out.append(Prompt(f"{ep.refined.pair_id}/{view.value}", ep.observation(view).cue_index, view, ep))
        return out[:n]


def make_reward_fn(cfg: EnvConfig, judge: ReasoningJudge, use_reasoning: bool):
    """Reward function for train(); ``use_reasoning`` adds the similarity term."""
    texts = {}

    def reward_fn(prompt, actions):
        parsed = []
        for a in actions:
            a = int(a)
            if a not in texts:
                texts[a] = render_action(cfg, a)
            parsed.append(parse_response(texts[a], TaskKind.GROUNDING))
        ref = ReferenceTarget(
            TaskKind.GROUNDING,
            gt_span=prompt.episode.event.true_span,
            reference_reasoning=prompt.episode.event.reference_reasoning[prompt.view] if use_reasoning else None,
        )
        return batch_rewards(parsed, ref, judge)

    return reward_fn


def policy_rollout(policy: TabularPolicy, obs: ViewObservation, cfg: EnvConfig, rng=None, greedy=False) -> str:
    if policy.actions != cfg.actions:
        raise ValueError(f"policy has {policy.actions} actions, environment needs {cfg.actions}")
    if greedy:
        a = policy.greedy(obs.cue_index)
    else:
        a = int(policy.sample(obs.cue_index, 1, rng)[0])
    return render_action(cfg, a)


def sft_targets(cfg: EnvConfig, episodes):
    ctx, tgt = [], []
    for ep in episodes:
        for view in (View.EGO, View.EXO):
            ctx.append(ep.observation(view).cue_index)
            tgt.append(encode_action(cfg, correct_template(cfg, view, ep.event.span_index), ep.event.span_index))
    return np.array(ctx, dtype=np.int64), np.array(tgt, dtype=np.int64)


def sft_baseline(cfg: EnvConfig, episodes, policy: TabularPolicy, epochs=20, lr=5.0, batch_size=64, seed=0):
    """Maximum-likelihood fit of the correct (template, span) action per cue.

    Minibatch gradient ascent on log pi(correct action | cue). Returns
    ``(policy, losses)`` with the mean pre-step NLL of each epoch.
    """
    ctx, tgt = sft_targets(cfg, episodes)
    rng = np.random.default_rng(seed)
    logits = policy.logits.copy()
    losses = []
    for _ in range(epochs):
        order = rng.permutation(len(ctx))
        total = 0.0
        for b in range(0, len(order), batch_size):
            sel = order[b : b + batch_size]
            nll, grad = _kernels.sft_objective_grad(logits, ctx[sel], tgt[sel])
            total += nll * len(sel)
            logits += lr * grad
        losses.append(total / len(ctx))
    return TabularPolicy(logits), losses


def greedy_accuracy(policy, cfg, episodes):
    """Fraction of (episode, view) prompts whose greedy span is the true span."""
    hits = n = 0
    for ep in episodes:
        for view in (View.EGO, View.EXO):
            _, j = decode_action(cfg, policy.greedy(ep.observation(view).cue_index))
            hits += j == ep.event.span_index
            n += 1
    return hits / n


def evaluation_predictions(policy, cfg: EnvConfig, episodes):
    """Greedy grounding answers plus verification answers derived from them.

    A verification query is answered "yes" iff the greedy span overlaps the
    queried span with IoU > 0.5.
    """
    preds = []
    for ep in episodes:
        for view in (View.EGO, View.EXO):
            a = policy.greedy(ep.observation(view).cue_index)
            k, j = decode_action(cfg, a)
            text = render_action(cfg, a)
            preds.append(PredictionRecord(ep.refined.pair_id, "q0", view, TaskKind.GROUNDING, text))
            think = f"{template_text(cfg, k)} ; {span_description(cfg, j)}"
            pred_span = cfg.span_seconds(j)
            for q in (ep.refined, ep.misaligned):
                verdict = "yes" if tiou(pred_span, q.gt_span) > 0.5 else "no"
                preds.append(PredictionRecord(ep.refined.pair_id, q.query_id, view, TaskKind.VERIFICATION, render_response(think, verdict)))
    return preds


def evaluate_policy(policy, cfg: EnvConfig, episodes):
    return compute_report([ep.annotation() for ep in episodes], evaluation_predictions(policy, cfg, episodes))


METHODS = ("SFT", "GRPO", "ViewGRPO")
COMPARISON_COLUMNS = ("method", "seed", "v_ego", "v_exo", "v_egoexo", "g_ego", "g_exo", "g_egoexo")


def default_demo_grpo_config(seed=0, iterations=500):
    return GrpoConfig(group_size=8, beta=0.04, learning_rate=1.0, iterations=iterations, seed=seed, prompts_per_step=32)


@dataclass
class ComparisonResult:
    rows: List[tuple] = field(default_factory=list)
    curves: Dict[tuple, object] = field(default_factory=dict)
    sft_losses: Dict[int, list] = field(default_factory=dict)
    reports: Dict[tuple, object] = field(default_factory=dict)

    def row(self, method, seed):
        for r in self.rows:
            if r[0] == method and r[1] == seed:
                return dict(zip(COMPARISON_COLUMNS, r))
        raise KeyError((method, seed))

    def mean(self, method, column):
        vals = [dict(zip(COMPARISON_COLUMNS, r))[column] for r in self.rows if r[0] == method]
        return float(np.mean(vals))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COMPARISON_COLUMNS)
        for r in self.rows:
            w.writerow([r[0], r[1]] + [repr(float(x)) for x in r[2:]])
        return buf.getvalue()


def run_comparison(cfg: EnvConfig, methods=METHODS, seeds=(0,), grpo_cfg: Optional[GrpoConfig] = None,
                   sft_epochs=20, sft_lr=5.0, judge: Optional[ReasoningJudge] = None):
    """Train each method per seed on the same episode stream and evaluate on held-out episodes."""
    judge = judge or ReasoningJudge.lexical()
    base_grpo = grpo_cfg or default_demo_grpo_config()
    result = ComparisonResult()
    for seed in seeds:
        env_cfg = replace(cfg, seed=seed)
        train_eps = make_episodes(env_cfg, 0, env_cfg.episodes)
        eval_eps = make_episodes(env_cfg, env_cfg.episodes, env_cfg.eval_episodes)
        env = SyntheticEnv(env_cfg, train_eps)
        for method in methods:
            start = TabularPolicy.uniform(env_cfg.contexts, env_cfg.actions)
            if method == "SFT":
                policy, losses = sft_baseline(env_cfg, train_eps, start, epochs=sft_epochs, lr=sft_lr, seed=seed)
                result.sft_losses[seed] = losses
            elif method in ("GRPO", "ViewGRPO"):
                reward_fn = make_reward_fn(env_cfg, judge, use_reasoning=method == "ViewGRPO")
                policy, curves = train(env, start, replace(base_grpo, seed=seed), reward_fn)
                result.curves[(method, seed)] = curves
            else:
                raise ValueError(f"unknown method {method!r}")
            report = evaluate_policy(policy, env_cfg, eval_eps)
            result.reports[(method, seed)] = report
            result.rows.append(
                (method, seed, report.v_ego, report.v_exo, report.v_egoexo, report.g_ego, report.g_exo, report.g_egoexo)
            )
    return result
