"""Per-view scores, cross-view consistency and ego-exo gaps.

A query counts toward the consistency score only if it is answered correctly
in both synchronized views; answers that agree but are wrong count for
nothing. Grounding is correct when the IoU with the ground truth is strictly
greater than 0.5.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List

from .codec import ParsedResponse, TaskKind, format_seconds, parse_response
from .records import PredictionRecord, QueryRecord, Subset, View
from .temporal import VideoTimeline, clamp_to_timeline, tiou

logger = logging.getLogger(__name__)

GROUNDING_IOU_THRESHOLD = 0.5
TABLE_COLUMNS = ("V-Exo", "V-Ego", "V-EgoExo", "G-Exo", "G-Ego", "G-EgoExo")


class IngestionError(ValueError):
    pass


class DuplicatePredictionError(IngestionError):
    pass


class EmptyEvaluationError(IngestionError):
    pass


def score_verification(q: QueryRecord, p: ParsedResponse) -> bool:
    if p.verification_answer is None:
        return False
    return p.verification_answer == q.expected_answer


def score_grounding(q: QueryRecord, p: ParsedResponse, t: VideoTimeline):
    """Returns ``(correct, iou)``; a missing span scores (False, 0.0)."""
    if p.grounding_span is None:
        return False, 0.0
    iou = tiou(q.gt_span, clamp_to_timeline(p.grounding_span, t))
    return iou > GROUNDING_IOU_THRESHOLD, iou


@dataclass(frozen=True)
class TaskScores:
    ego: float
    exo: float
    egoexo: float
    n_queries: int
    n_ego_correct: int
    n_exo_correct: int
    n_both_correct: int

    def to_dict(self):
        return {
            "ego": self.ego,
            "exo": self.exo,
            "egoexo": self.egoexo,
            "n_queries": self.n_queries,
            "n_ego_correct": self.n_ego_correct,
            "n_exo_correct": self.n_exo_correct,
            "n_both_correct": self.n_both_correct,
        }


def scores_from_outcomes(outcomes) -> TaskScores:
    """Aggregate ``(ego_correct, exo_correct)`` pairs into percentages."""
    outcomes = list(outcomes)
    n = len(outcomes)
    ego = sum(1 for e, _ in outcomes if e)
    exo = sum(1 for _, x in outcomes if x)
    both = sum(1 for e, x in outcomes if e and x)
    if n == 0:
        return TaskScores(0.0, 0.0, 0.0, 0, 0, 0, 0)
    return TaskScores(100.0 * ego / n, 100.0 * exo / n, 100.0 * both / n, n, ego, exo, both)


@dataclass
class MetricReport:
    overall: Dict[TaskKind, TaskScores]
    per_subset: Dict[Subset, Dict[TaskKind, TaskScores]]
    parse_failure_rate: float
    counts: Dict[str, int]
    orphans: List[tuple] = field(default_factory=list)
    mean_iou: Dict[View, float] = field(default_factory=dict)

    def _get(self, task, attr):
        s = self.overall.get(task)
        return None if s is None else getattr(s, attr)

    v_ego = property(lambda self: self._get(TaskKind.VERIFICATION, "ego"))
    v_exo = property(lambda self: self._get(TaskKind.VERIFICATION, "exo"))
    v_egoexo = property(lambda self: self._get(TaskKind.VERIFICATION, "egoexo"))
    g_ego = property(lambda self: self._get(TaskKind.GROUNDING, "ego"))
    g_exo = property(lambda self: self._get(TaskKind.GROUNDING, "exo"))
    g_egoexo = property(lambda self: self._get(TaskKind.GROUNDING, "egoexo"))

    def _gaps(self, task):
        return {
            subset: scores[task].ego - scores[task].exo
            for subset, scores in self.per_subset.items()
            if task in scores
        }

    @property
    def gap_v(self):
        return self._gaps(TaskKind.VERIFICATION)

    @property
    def gap_g(self):
        return self._gaps(TaskKind.GROUNDING)

    def to_dict(self):
        def task_block(d):
            return {t.value: s.to_dict() for t, s in sorted(d.items(), key=lambda kv: kv[0].value)}

        return {
            "schema_version": 1,
            "overall": task_block(self.overall),
            "per_subset": {s.value: task_block(d) for s, d in sorted(self.per_subset.items(), key=lambda kv: kv[0].value)},
            "gaps": {
                "verification": {s.value: g for s, g in sorted(self.gap_v.items(), key=lambda kv: kv[0].value)},
                "grounding": {s.value: g for s, g in sorted(self.gap_g.items(), key=lambda kv: kv[0].value)},
            },
            "mean_iou": {v.value: x for v, x in sorted(self.mean_iou.items(), key=lambda kv: kv[0].value)},
            "parse_failure_rate": self.parse_failure_rate,
            "counts": dict(sorted(self.counts.items())),
            "orphans": [list(o) for o in self.orphans],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_table(self):
        """Plain-text table, columns V-Exo, V-Ego, V-EgoExo, G-Exo, G-Ego, G-EgoExo."""

        def cells(d):
            out = []
            for task in (TaskKind.VERIFICATION, TaskKind.GROUNDING):
                s = d.get(task)
                if s is None:
                    out += ["-"] * 3
                else:
                    out += [f"{s.exo:.1f}", f"{s.ego:.1f}", f"{s.egoexo:.1f}"]
            return out

        rows = [("Overall", cells(self.overall))]
        for subset in Subset:
            if subset in self.per_subset:
                rows.append((subset.value, cells(self.per_subset[subset])))
        width = max(len(r[0]) for r in rows + [("Subset", None)])
        lines = ["Subset".ljust(width) + "".join(c.rjust(10) for c in TABLE_COLUMNS)]
        for name, vals in rows:
            lines.append(name.ljust(width) + "".join(v.rjust(10) for v in vals))
        lines.append("")
        lines.append(
            f"queries={self.counts.get('queries', 0)} pairs={self.counts.get('pairs', 0)} "
            f"missing={self.counts.get('missing_predictions', 0)} orphans={self.counts.get('orphan_predictions', 0)} "
            f"parse_failure_rate={self.parse_failure_rate:.1f}%"
        )
        return "\n".join(lines) + "\n"


def _index_predictions(annotations, predictions):
    known = {(a.pair_id, q.query_id) for a in annotations for q in a.queries}
    index, orphans = {}, []
    for p in predictions:
        if p.key in index:
            raise DuplicatePredictionError(
                f"duplicate prediction for pair={p.pair_id} query={p.query_id} view={p.view.value} task={p.task.value}"
            )
        index[p.key] = p
        if (p.pair_id, p.query_id) not in known:
            orphans.append((p.pair_id, p.query_id, p.view.value, p.task.value))
    return index, sorted(set(orphans))


def compute_report(annotations, predictions, task=None) -> MetricReport:
    """Score predictions against annotations.

    ``task`` selects one TaskKind or, when None, every task that has at
    least one prediction. Missing predictions count as incorrect.
    """
    annotations = list(annotations)
    index, orphans = _index_predictions(annotations, predictions)
    if orphans:
        logger.warning("%d orphan predictions excluded", len(orphans))

    present_tasks = {k[3] for k in index}
    if task is None:
        tasks = [t for t in TaskKind if t in present_tasks]
    else:
        tasks = [TaskKind(task)]
    orphan_keys = {(o[0], o[1]) for o in orphans}
    if not any(k[3] in tasks and (k[0], k[1]) not in orphan_keys for k in index):
        raise EmptyEvaluationError(
            "no predictions for the requested task(s): " + ", ".join(t.value for t in (tasks or TaskKind))
        )

    outcomes = {t: [] for t in tasks}  # (subset, ego_ok, exo_ok)
    ious = {View.EGO: [], View.EXO: []}
    missing = parse_failures = scored = 0
    queries_seen = set()
    pairs_seen = set()
    for ann in annotations:
        for q in ann.queries:
            for t in tasks:
                if not q.eligible(t):
                    continue
                queries_seen.add((ann.pair_id, q.query_id))
                pairs_seen.add(ann.pair_id)
                ok = {}
                for view in (View.EGO, View.EXO):
                    pred = index.get((ann.pair_id, q.query_id, view, t))
                    if pred is None:
                        missing += 1
                        ok[view] = False
                        continue
                    parsed = parse_response(pred.raw_response, t)
                    scored += 1
                    if not parsed.has_answer:
                        parse_failures += 1
                    if t is TaskKind.VERIFICATION:
                        ok[view] = score_verification(q, parsed)
                    else:
                        ok[view], iou = score_grounding(q, parsed, ann.timeline(view))
                        ious[view].append(iou)
                outcomes[t].append((ann.subset, ok[View.EGO], ok[View.EXO]))

    overall = {t: scores_from_outcomes((e, x) for _, e, x in outcomes[t]) for t in tasks}
    per_subset = {}
    for t in tasks:
        for subset in Subset:
            rows = [(e, x) for s, e, x in outcomes[t] if s is subset]
            if rows:
                per_subset.setdefault(subset, {})[t] = scores_from_outcomes(rows)

    counts = {
        "queries": len(queries_seen),
        "pairs": len(pairs_seen),
        "scored_predictions": scored,
        "missing_predictions": missing,
        "orphan_predictions": len(orphans),
        "parse_failures": parse_failures,
    }
    # fsum is exactly rounded, so the mean does not depend on record order
    mean_iou = {v: math.fsum(x) / len(x) for v, x in ious.items() if x}
    return MetricReport(
        overall=overall,
        per_subset=per_subset,
        parse_failure_rate=100.0 * parse_failures / scored if scored else 0.0,
        counts=counts,
        orphans=orphans,
        mean_iou=mean_iou,
    )


def random_baseline(annotations, task) -> List[PredictionRecord]:
    """Always "yes" for verification; the entire video for grounding."""
    task = TaskKind(task)
    out = []
    for ann in annotations:
        for q in ann.queries:
            if not q.eligible(task):
                continue
            for view in (View.EGO, View.EXO):
                if task is TaskKind.VERIFICATION:
                    text = "yes"
                else:
                    d = ann.durations[view]
                    text = f"0 - {format_seconds(d)} seconds"
                out.append(PredictionRecord(ann.pair_id, q.query_id, view, task, text))
    return out


@dataclass(frozen=True)
class GapRow:
    subset: str
    metric: str
    ego_minus_exo: float


def gap_analysis(report: MetricReport) -> List[GapRow]:
    """Signed ego-minus-exo differences in percentage points, per subset and task."""
    rows = []
    for subset in Subset:
        scores = report.per_subset.get(subset)
        if not scores:
            continue
        for task, label in ((TaskKind.VERIFICATION, "V"), (TaskKind.GROUNDING, "G")):
            if task in scores:
                rows.append(GapRow(subset.value, label, scores[task].ego - scores[task].exo))
    return rows


def consistency_invariant_holds(report: MetricReport) -> bool:
    for scores in [report.overall] + list(report.per_subset.values()):
        for s in scores.values():
            if s.egoexo > min(s.ego, s.exo):
                return False
    return True
