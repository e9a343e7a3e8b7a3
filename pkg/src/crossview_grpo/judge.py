"""Reasoning-similarity judges.

Two kinds share one surface: a remote LLM judge reached over an HTTP
chat-completions endpoint, and an offline lexical judge (unigram F1) that is
deterministic and used as the test oracle. The lexical judge is not a
substitute for LLM judgment quality.
"""

import enum
import logging
import os
import re
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import httpx

logger = logging.getLogger(__name__)

DEFAULT_PROMPT_TEMPLATE = (
    "You are grading the reasoning of a video assistant.\n"
    "Compare the candidate reasoning with the reference reasoning and rate how "
    "closely the candidate follows the same temporal evidence and reaches the "
    "same conclusion.\n"
    "Reply with a single number between 0 and 1 (1 = equivalent reasoning, "
    "0 = unrelated). Do not explain.\n\n"
    "Reference reasoning:\n{reference}\n\n"
    "Candidate reasoning:\n{candidate}\n\n"
    "Score:"
)

_NUMBER = re.compile(r"(?<![\w.])(\d+(?:\.\d+)?|\.\d+)")


class JudgeKind(str, enum.Enum):
    REMOTE = "remote"
    LEXICAL = "lexical"


class JudgeError(RuntimeError):
    """A judge call failed. ``retryable`` is true for transport failures."""

    def __init__(self, message, raw_reply=None, retryable=True, candidate_id=None):
        super().__init__(message)
        self.raw_reply = raw_reply
        self.retryable = retryable
        self.candidate_id = candidate_id


class JudgeConfigError(ValueError):
    pass


class BatchJudgeError(RuntimeError):
    """Some pairs in a batch failed.

    ``scores`` holds a JudgeScore or None per input index; ``errors`` maps
    failed indices to their JudgeError.
    """

    def __init__(self, scores, errors):
        idx = ", ".join(str(i) for i in sorted(errors))
        super().__init__(f"judge failed for {len(errors)} of {len(scores)} pairs (indices: {idx})")
        self.scores = scores
        self.errors = errors


@dataclass(frozen=True)
class JudgeScore:
    value: float
    source: JudgeKind
    raw_reply: Optional[str] = None
    rescaled: bool = False


@dataclass
class ReasoningJudge:
    kind: JudgeKind = JudgeKind.LEXICAL
    endpoint: Optional[str] = None
    model_name: Optional[str] = None
    prompt_template: str = DEFAULT_PROMPT_TEMPLATE
    timeout: float = 30.0
    max_retries: int = 2
    concurrency: int = 4
    api_key: Optional[str] = field(default=None, repr=False)
    backoff: float = 0.5

    def __post_init__(self):
        self.kind = JudgeKind(self.kind)
        if self.kind is JudgeKind.REMOTE and (not self.endpoint or not self.model_name):
            raise JudgeConfigError("remote judge needs both an endpoint and a model name")
        if self.concurrency < 1:
            raise JudgeConfigError("concurrency must be >= 1")
        if self.max_retries < 0:
            raise JudgeConfigError("max_retries must be >= 0")

    @classmethod
    def lexical(cls):
        return cls(kind=JudgeKind.LEXICAL)

    @classmethod
    def remote_from_env(cls, endpoint=None, model_name=None, api_key=None, **kwargs):
        """Build a remote judge; explicit arguments win over JUDGE_* variables."""
        return cls(
            kind=JudgeKind.REMOTE,
            endpoint=endpoint or os.environ.get("JUDGE_ENDPOINT"),
            model_name=model_name or os.environ.get("JUDGE_MODEL"),
            api_key=api_key or os.environ.get("JUDGE_API_KEY"),
            **kwargs,
        )

    @property
    def deterministic(self):
        return self.kind is JudgeKind.LEXICAL


def lexical_f1(candidate: str, reference: str) -> float:
    """Unigram F1 between lower-cased whitespace token multisets."""
    c = Counter(candidate.lower().split())
    r = Counter(reference.lower().split())
    n_c, n_r = sum(c.values()), sum(r.values())
    if n_c == 0 or n_r == 0:
        return 0.0
    overlap = sum((c & r).values())
    return 2.0 * overlap / (n_c + n_r)


def extract_score(reply: str):
    """First number in a free-text reply, mapped onto [0, 1].

    Returns ``(value, rescaled)``. Numbers in (1, 100] are read as a
    percentage scale. Anything else is unparseable.
    """
    m = _NUMBER.search(reply or "")
    if m is None:
        raise JudgeError("no numeric score in judge reply", raw_reply=reply, retryable=False)
    value = float(m.group(1))
    if value <= 1.0:
        return value, False
    if value <= 100.0:
        return value / 100.0, True
    raise JudgeError(f"judge score {value} out of range", raw_reply=reply, retryable=False)


def render_prompt(template: str, candidate: str, reference: str) -> str:
    return template.replace("{candidate}", candidate).replace("{reference}", reference)


def _redacted(headers):
    return {k: ("<redacted>" if k.lower() == "authorization" else v) for k, v in headers.items()}


_local = threading.local()


def _default_client(timeout):
    client = getattr(_local, "client", None)
    if client is None:
        client = httpx.Client(timeout=timeout)
        _local.client = client
    return client


def _remote_call(j: ReasoningJudge, candidate, reference, client=None):
    body = {
        "model": j.model_name,
        "messages": [{"role": "user", "content": render_prompt(j.prompt_template, candidate, reference)}],
        "temperature": 0,
    }
    headers = {"Content-Type": "application/json"}
    if j.api_key:
        headers["Authorization"] = f"Bearer {j.api_key}"
    client = client or _default_client(j.timeout)

    last_exc = None
    for attempt in range(j.max_retries + 1):
        if attempt:
            time.sleep(j.backoff * 2 ** (attempt - 1))
        logger.debug("judge request to %s headers=%s body=%s", j.endpoint, _redacted(headers), body)
        try:
            resp = client.post(j.endpoint, json=body, headers=headers, timeout=j.timeout)
        except httpx.HTTPError as exc:
            last_exc = exc
            logger.debug("judge transport error (attempt %d): %s", attempt + 1, exc)
            continue
        if resp.status_code >= 500 or resp.status_code == 429:
            last_exc = JudgeError(f"judge endpoint returned HTTP {resp.status_code}", raw_reply=resp.text)
            continue
        if resp.status_code >= 400:
            raise JudgeError(
                f"judge endpoint returned HTTP {resp.status_code}", raw_reply=resp.text, retryable=False
            )
        logger.debug("judge response: %s", resp.text)
        try:
            reply = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            raise JudgeError("malformed chat-completion response", raw_reply=resp.text, retryable=False)
        value, rescaled = extract_score(reply)
        return JudgeScore(value=value, source=JudgeKind.REMOTE, raw_reply=reply, rescaled=rescaled)
    raise JudgeError(
        f"judge endpoint {j.endpoint} failed after {j.max_retries + 1} attempts: {last_exc}",
        raw_reply=getattr(last_exc, "raw_reply", None),
    )


def judge_similarity(j: ReasoningJudge, candidate: str, reference: str, client=None) -> JudgeScore:
    if not reference:
        raise ValueError("reference reasoning must be non-empty")
    if j.kind is JudgeKind.LEXICAL:
        return JudgeScore(value=lexical_f1(candidate, reference), source=JudgeKind.LEXICAL)
    return _remote_call(j, candidate, reference, client=client)


def batch_judge(j: ReasoningJudge, pairs, client=None, max_workers=None):
    """Score ``(candidate, reference)`` pairs, preserving input order.

    Raises BatchJudgeError if any pair fails; the exception carries the
    partial results so the caller can skip or abort.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("batch_judge needs at least one pair")
    scores = [None] * len(pairs)
    errors = {}

    def run(i):
        cand, ref = pairs[i]
        try:
            scores[i] = judge_similarity(j, cand, ref, client=client)
        except JudgeError as exc:
            exc.candidate_id = i
            errors[i] = exc

    workers = min(max_workers or j.concurrency, j.concurrency)
    if j.kind is JudgeKind.LEXICAL or workers == 1 or len(pairs) == 1:
        for i in range(len(pairs)):
            run(i)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, range(len(pairs))))
    if errors:
        raise BatchJudgeError(scores, errors)
    return scores
