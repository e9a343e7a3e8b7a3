"""Annotation and prediction records shared by metrics, data-io and the CLI."""

import enum
from dataclasses import dataclass
from typing import Dict, Tuple

from .codec import TaskKind
from .temporal import TimeInterval, VideoTimeline


class View(str, enum.Enum):
    EGO = "ego"
    EXO = "exo"


class Subset(str, enum.Enum):
    CHARADES_EGO = "CharadesEgo"
    EGO_EXO_4D = "EgoExo4D"
    LEMMA = "LEMMA"
    SYNTHETIC = "Synthetic"


class QueryType(str, enum.Enum):
    REFINED = "refined"
    MISALIGNED = "misaligned"


class TemplatePolarity(str, enum.Enum):
    AFFIRMATIVE = "affirmative"
    NEGATED = "negated"


def expected_answer_for(query_type, polarity) -> bool:
    """Refined queries answer yes, misaligned no; a negated template flips it."""
    base = QueryType(query_type) is QueryType.REFINED
    if TemplatePolarity(polarity) is TemplatePolarity.NEGATED:
        return not base
    return base


@dataclass(frozen=True)
class QueryRecord:
    pair_id: str
    query_id: str
    subset: Subset
    text: str
    query_type: QueryType
    gt_span: TimeInterval
    expected_answer: bool
    template_polarity: TemplatePolarity = TemplatePolarity.AFFIRMATIVE

    def __post_init__(self):
        object.__setattr__(self, "subset", Subset(self.subset))
        object.__setattr__(self, "query_type", QueryType(self.query_type))
        object.__setattr__(self, "template_polarity", TemplatePolarity(self.template_polarity))
        if self.expected_answer != expected_answer_for(self.query_type, self.template_polarity):
            raise ValueError(
                f"query {self.pair_id}/{self.query_id}: expected_answer {self.expected_answer} contradicts "
                f"{self.query_type.value}/{self.template_polarity.value}"
            )

    def eligible(self, task) -> bool:
        # misaligned queries are verification-only
        return TaskKind(task) is TaskKind.VERIFICATION or self.query_type is QueryType.REFINED


@dataclass(frozen=True)
class PairAnnotation:
    """One synchronized ego/exo pair with its shared queries."""

    pair_id: str
    subset: Subset
    video_ids: Dict[View, str]
    durations: Dict[View, float]
    queries: Tuple[QueryRecord, ...]

    def timeline(self, view) -> VideoTimeline:
        return VideoTimeline(self.durations[View(view)])


@dataclass(frozen=True)
class PredictionRecord:
    pair_id: str
    query_id: str
    view: View
    task: TaskKind
    raw_response: str

    def __post_init__(self):
        object.__setattr__(self, "view", View(self.view))
        object.__setattr__(self, "task", TaskKind(self.task))

    @property
    def key(self):
        return (self.pair_id, self.query_id, self.view, self.task)
