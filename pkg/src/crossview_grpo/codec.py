"""Parsing and rendering of tagged model responses.

A well-formed response is ``<think>...</think><answer>...</answer>``: each of
the four tags appears exactly once and in that order. Tags are matched
byte-for-byte and case-sensitively.
"""

import enum
import re
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .temporal import TimeInterval

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"
ANSWER_OPEN = "<answer>"
ANSWER_CLOSE = "</answer>"
TAGS = (THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE)


class TaskKind(str, enum.Enum):
    VERIFICATION = "verification"
    GROUNDING = "grounding"


class ParseStatus(str, enum.Enum):
    WELL_FORMED = "WellFormed"
    ANSWER_ONLY = "AnswerOnly"
    MALFORMED = "Malformed"


class DelimiterCollisionError(ValueError):
    pass


@dataclass(frozen=True)
class ParsedResponse:
    task: TaskKind
    parse_status: ParseStatus
    think: Optional[str] = None
    answer: Optional[str] = None
    grounding_span: Optional[TimeInterval] = None
    verification_answer: Optional[bool] = None
    repaired: bool = False

    @property
    def has_answer(self):
        if self.task is TaskKind.GROUNDING:
            return self.grounding_span is not None
        return self.verification_answer is not None


_NUM = r"(\d+(?:\.\d+)?|\.\d+)"
_DASH = r"\s*[-\u2013\u2014]\s*"
# priority order; the first pattern with any match wins, earliest match within it
_SPAN_PATTERNS = (
    re.compile(_NUM + _DASH + _NUM + r"\s*(?:seconds?|secs?)\b", re.IGNORECASE),
    re.compile(_NUM + r"\s+to\s+" + _NUM + r"\s*(?:seconds?|secs?)\b", re.IGNORECASE),
    re.compile(r"\bfrom\s+" + _NUM + r"\s*(?:seconds?|secs?|s)?\s+to\s+" + _NUM, re.IGNORECASE),
    re.compile(_NUM + _DASH + _NUM),
)
_YES_NO = re.compile(r"\b(yes|no)\b", re.IGNORECASE)


def _block(text, open_tag, close_tag):
    """Return (content, start, end) for a block whose tags each occur exactly once."""
    if text.count(open_tag) != 1 or text.count(close_tag) != 1:
        return None
    i = text.index(open_tag)
    j = text.index(close_tag)
    if j < i + len(open_tag):
        return None
    return text[i + len(open_tag) : j], i, j + len(close_tag)


def extract_span(text):
    """First timestamp pair in ``text`` by pattern priority.

    Returns ``(TimeInterval, repaired)`` or ``None``. A reversed pair is
    swapped and reported as repaired.
    """
    for pattern in _SPAN_PATTERNS:
        m = pattern.search(text)
        if m is None:
            continue
        a, b = float(m.group(1)), float(m.group(2))
        if a > b:
            return TimeInterval(b, a), True
        return TimeInterval(a, b), False
    return None


def extract_yes_no(text):
    m = _YES_NO.search(text)
    if m is None:
        return None
    return m.group(1).lower() == "yes"


def parse_response(text: str, task: TaskKind) -> ParsedResponse:
    task = TaskKind(task)
    think = _block(text, THINK_OPEN, THINK_CLOSE)
    answer = _block(text, ANSWER_OPEN, ANSWER_CLOSE)
    well_formed = think is not None and answer is not None and think[2] <= answer[1]

    region = answer[0] if answer is not None else text
    span, repaired, verdict = None, False, None
    if task is TaskKind.GROUNDING:
        found = extract_span(region)
        if found is not None:
            span, repaired = found
        extracted = span is not None
    else:
        verdict = extract_yes_no(region)
        extracted = verdict is not None

    if well_formed:
        status = ParseStatus.WELL_FORMED
    elif extracted:
        status = ParseStatus.ANSWER_ONLY
    else:
        status = ParseStatus.MALFORMED
    return ParsedResponse(
        task=task,
        parse_status=status,
        think=think[0] if think is not None else None,
        answer=answer[0] if answer is not None else None,
        grounding_span=span,
        verification_answer=verdict,
        repaired=repaired,
    )


def format_reward(p: ParsedResponse) -> int:
    return 1 if p.parse_status is ParseStatus.WELL_FORMED else 0


def render_response(think: str, answer: str) -> str:
    for name, block in (("think", think), ("answer", answer)):
        for tag in TAGS:
            if tag in block:
                raise DelimiterCollisionError(f"{name} block contains delimiter {tag!r}")
    return f"{THINK_OPEN}{think}{THINK_CLOSE}{ANSWER_OPEN}{answer}{ANSWER_CLOSE}"


def format_seconds(x: float) -> str:
    return np.format_float_positional(float(x), trim="-")


def format_span(span: TimeInterval) -> str:
    """Render a span in the ``start - end seconds`` answer form."""
    return f"{format_seconds(span.start)} - {format_seconds(span.end)} seconds"
