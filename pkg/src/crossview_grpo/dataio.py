"""Annotation / prediction files, QA templates and the reasoning-sample filter.

Files are UTF-8, one JSON object per line, each carrying ``schema_version``.
See ``docs/file_formats.md`` for the field-by-field schemas.
"""

import json
import math
import os
import tempfile
from collections import Counter
from dataclasses import dataclass
from typing import List, Optional, Tuple

from .codec import TaskKind
from .metrics import IngestionError
from .records import (
    PairAnnotation,
    PredictionRecord,
    QueryRecord,
    QueryType,
    Subset,
    TemplatePolarity,
    View,
    expected_answer_for,
)
from .temporal import TimeInterval, tiou

SCHEMA_VERSION = 1
FILTER_TIOU_THRESHOLD = 0.7
DEFAULT_FAILURE_PHRASES = ("cannot", "unable", "not sure")


class AnnotationSchemaError(IngestionError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid annotation file:\n" + "\n".join(f"  line {n}: {msg}" for n, msg in self.problems))


class PairingError(IngestionError):
    def __init__(self, pair_ids, detail=""):
        self.pair_ids = sorted(pair_ids)
        super().__init__(f"unpaired or inconsistent views for pair_ids {self.pair_ids}{detail}")


class PredictionSchemaError(IngestionError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid prediction file:\n" + "\n".join(f"  line {n}: {msg}" for n, msg in self.problems))


def atomic_write(path, text):
    """Write ``text`` to ``path`` via a temp file and rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _iter_json_lines(path):
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                yield n, json.loads(line), None
            except json.JSONDecodeError as exc:
                yield n, None, f"not valid JSON ({exc.msg})"


def _num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


@dataclass(frozen=True)
class AnnotationSet:
    pairs: Tuple[PairAnnotation, ...]

    def __iter__(self):
        return iter(self.pairs)

    def __len__(self):
        return len(self.pairs)

    @property
    def n_records(self):
        return 2 * len(self.pairs)

    @property
    def queries(self):
        return [q for p in self.pairs for q in p.queries]

    def subset_counts(self):
        pairs = Counter(p.subset for p in self.pairs)
        queries = Counter(p.subset for p in self.pairs for _ in p.queries)
        return {s: (pairs[s], queries[s]) for s in Subset if pairs[s]}


def _parse_query(pair_id, subset, duration, raw, problems, n):
    try:
        qid = raw["query_id"]
        text = raw["text"]
        qtype = QueryType(raw["type"])
        polarity = TemplatePolarity(raw.get("template_polarity", "affirmative"))
        span = raw["span"]
        expected = raw["expected_answer"]
    except KeyError as exc:
        problems.append((n, f"query missing field {exc.args[0]!r}"))
        return None
    except ValueError as exc:
        problems.append((n, f"query {raw.get('query_id')!r}: {exc}"))
        return None
    if not isinstance(qid, str) or not isinstance(text, str):
        problems.append((n, "query_id and text must be strings"))
        return None
    if not isinstance(expected, bool):
        problems.append((n, f"query {qid!r}: expected_answer must be a boolean"))
        return None
    if not (isinstance(span, list) and len(span) == 2 and all(_num(x) for x in span)):
        problems.append((n, f"query {qid!r}: span must be [start, end] numbers"))
        return None
    s, e = float(span[0]), float(span[1])
    if not (0 <= s <= e <= duration):
        problems.append((n, f"query {qid!r}: span [{s}, {e}] outside [0, {duration}] or reversed"))
        return None
    if expected != expected_answer_for(qtype, polarity):
        problems.append((n, f"query {qid!r}: expected_answer contradicts {qtype.value}/{polarity.value}"))
        return None
    return QueryRecord(pair_id, qid, subset, text, qtype, TimeInterval(s, e), expected, polarity)


def _query_key(q):
    return (q.query_id, q.text, q.query_type, q.gt_span, q.expected_answer, q.template_polarity)


def load_annotations(path) -> AnnotationSet:
    """Load and validate an annotation file.

    Raises AnnotationSchemaError listing every offending line, or
    PairingError naming pair_ids lacking exactly one ego and one exo record.
    """
    problems = []
    records = {}  # pair_id -> {view: (video_id, duration, subset, queries)}
    order = []
    for n, obj, err in _iter_json_lines(path):
        if err:
            problems.append((n, err))
            continue
        if not isinstance(obj, dict):
            problems.append((n, "record must be a JSON object"))
            continue
        missing = [k for k in ("pair_id", "subset", "view", "video_id", "duration_s", "queries") if k not in obj]
        if missing:
            problems.append((n, f"missing fields {missing}"))
            continue
        version = obj.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            problems.append((n, f"unsupported schema_version {version}"))
            continue
        try:
            subset = Subset(obj["subset"])
            view = View(obj["view"])
        except ValueError as exc:
            problems.append((n, str(exc)))
            continue
        duration = obj["duration_s"]
        if not _num(duration) or duration <= 0:
            problems.append((n, f"duration_s must be a positive number, got {duration!r}"))
            continue
        if not isinstance(obj["queries"], list):
            problems.append((n, "queries must be a list"))
            continue
        pair_id = str(obj["pair_id"])
        n_before = len(problems)
        queries = [_parse_query(pair_id, subset, float(duration), q, problems, n) for q in obj["queries"]]
        if len(problems) > n_before:
            continue
        ids = [q.query_id for q in queries]
        if len(set(ids)) != len(ids):
            problems.append((n, "duplicate query_id within record"))
            continue
        views = records.setdefault(pair_id, {})
        if pair_id not in order:
            order.append(pair_id)
        views.setdefault(view, []).append((str(obj["video_id"]), float(duration), subset, tuple(queries), n))
    if problems:
        raise AnnotationSchemaError(problems)

    bad = []
    pairs = []
    for pair_id in order:
        views = records[pair_id]
        if len(views.get(View.EGO, [])) != 1 or len(views.get(View.EXO, [])) != 1:
            bad.append(pair_id)
            continue
        ego, exo = views[View.EGO][0], views[View.EXO][0]
        if ego[2] != exo[2] or sorted(map(_query_key, ego[3])) != sorted(map(_query_key, exo[3])):
            bad.append(pair_id)
            continue
        pairs.append(
            PairAnnotation(
                pair_id=pair_id,
                subset=ego[2],
                video_ids={View.EGO: ego[0], View.EXO: exo[0]},
                durations={View.EGO: ego[1], View.EXO: exo[1]},
                queries=ego[3],
            )
        )
    if bad:
        raise PairingError(bad)
    return AnnotationSet(tuple(pairs))


def annotations_to_jsonl(annotations) -> str:
    lines = []
    for pair in annotations:
        for view in (View.EGO, View.EXO):
            lines.append(
                json.dumps(
                    {
                        "schema_version": SCHEMA_VERSION,
                        "pair_id": pair.pair_id,
                        "subset": pair.subset.value,
                        "view": view.value,
                        "video_id": pair.video_ids[view],
                        "duration_s": pair.durations[view],
                        "queries": [
                            {
                                "query_id": q.query_id,
                                "text": q.text,
                                "type": q.query_type.value,
                                "span": q.gt_span.as_list(),
                                "expected_answer": q.expected_answer,
                                "template_polarity": q.template_polarity.value,
                            }
                            for q in pair.queries
                        ],
                    },
                    sort_keys=True,
                    ensure_ascii=False,
                )
            )
    return "\n".join(lines) + "\n"


def write_annotations(path, annotations):
    atomic_write(path, annotations_to_jsonl(annotations))


def load_predictions(path) -> List[PredictionRecord]:
    problems, out = [], []
    for n, obj, err in _iter_json_lines(path):
        if err:
            problems.append((n, err))
            continue
        if not isinstance(obj, dict):
            problems.append((n, "record must be a JSON object"))
            continue
        missing = [k for k in ("pair_id", "query_id", "view", "task", "response") if k not in obj]
        if missing:
            problems.append((n, f"missing fields {missing}"))
            continue
        if not isinstance(obj["response"], str):
            problems.append((n, "response must be a string"))
            continue
        try:
            out.append(PredictionRecord(str(obj["pair_id"]), str(obj["query_id"]), obj["view"], obj["task"], obj["response"]))
        except ValueError as exc:
            problems.append((n, str(exc)))
    if problems:
        raise PredictionSchemaError(problems)
    return out


def predictions_to_jsonl(predictions) -> str:
    lines = [
        json.dumps(
            {
                "schema_version": SCHEMA_VERSION,
                "pair_id": p.pair_id,
                "query_id": p.query_id,
                "view": p.view.value,
                "task": p.task.value,
                "response": p.raw_response,
            },
            sort_keys=True,
            ensure_ascii=False,
        )
        for p in predictions
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def write_predictions(path, predictions):
    atomic_write(path, predictions_to_jsonl(predictions))


# --- QA templates -----------------------------------------------------------

GROUNDING_EVAL_PROMPT = (
    "Query: {event}. At what time does this happen in the video? "
    "Answer with its start and end time in the form 'start - end seconds'."
)


@dataclass(frozen=True)
class QATemplates:
    verification: str
    negated_verification: str
    grounding: str
    affirmative_answer: bool
    negated_answer: bool


def _ts(x):
    return f"{x:.1f}"


def generate_qa_templates(q: QueryRecord) -> QATemplates:
    event, st, ed = q.text, _ts(q.gt_span.start), _ts(q.gt_span.end)
    base = expected_answer_for(q.query_type, TemplatePolarity.AFFIRMATIVE)
    return QATemplates(
        verification=f"Does {event} happen from {st} to {ed} in the video?",
        negated_verification=f"Does {event} not happen from {st} to {ed} in the video?",
        grounding=f"Localize the {event} in the video and return its start and end times.",
        affirmative_answer=base,
        negated_answer=not base,
    )


def verification_records(q: QueryRecord):
    """Affirmative and negated verification records for one query."""
    t = generate_qa_templates(q)
    out = []
    for polarity, answer, suffix in (
        (TemplatePolarity.AFFIRMATIVE, t.affirmative_answer, ""),
        (TemplatePolarity.NEGATED, t.negated_answer, "-neg"),
    ):
        out.append(
            QueryRecord(q.pair_id, q.query_id + suffix, q.subset, q.text, q.query_type, q.gt_span, answer, polarity)
        )
    return out


# --- reasoning-sample filter ------------------------------------------------


@dataclass(frozen=True)
class ReasoningSample:
    sample_id: str
    task: TaskKind
    candidate_reasoning: str
    predicted_span: Optional[TimeInterval] = None
    gt_span: Optional[TimeInterval] = None
    failure_statement: bool = False

    def __post_init__(self):
        object.__setattr__(self, "task", TaskKind(self.task))
        if self.task is TaskKind.GROUNDING and (self.predicted_span is None or self.gt_span is None):
            raise ValueError(f"grounding sample {self.sample_id} needs both spans")


def filter_reasoning_samples(samples, failure_phrases=None, threshold=FILTER_TIOU_THRESHOLD):
    """Split samples into ``(kept, discarded)``; discarded items are ``(sample, reason)``.

    A sample is dropped if it states failure, or for grounding if its tIoU
    with the ground truth is below ``threshold`` (a tIoU equal to the
    threshold is kept). ``failure_phrases`` turns on an extra phrase check
    over the reasoning text; pass DEFAULT_FAILURE_PHRASES to use the stock
    list.
    """
    kept, discarded = [], []
    phrases = [p.lower() for p in failure_phrases or ()]
    for s in samples:
        text = s.candidate_reasoning.lower()
        if s.failure_statement or any(p in text for p in phrases):
            discarded.append((s, "failure_statement"))
        elif s.task is TaskKind.GROUNDING and tiou(s.gt_span, s.predicted_span) < threshold:
            discarded.append((s, "low_tiou"))
        else:
            kept.append(s)
    return kept, discarded
