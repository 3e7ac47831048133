"""Coordination metrics computed from summary numbers or from episode traces."""

from __future__ import annotations

import enum
import itertools
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import httpx

from .core import ActionKind, GroundTruth
from .topology import EpisodeTrace

logger = logging.getLogger(__name__)

Similarity = Callable[[str, str], float]

NUMERIC_DRIFT_THRESHOLD = 0.05
CONTRADICTION_THRESHOLD = 0.3


# -- scalar metrics -----------------------------------------------------------


def coordination_overhead(t_mas: float, t_sas: float) -> float:
    """Percent increase in turns over the single-agent baseline."""
    if t_sas <= 0:
        raise ValueError("t_sas must be positive")
    return (t_mas - t_sas) / t_sas * 100.0


def coordination_efficiency(s: float, t: float, t_sas: float) -> float:
    """Success divided by relative turn count."""
    if t <= 0 or t_sas <= 0:
        raise ValueError("turn counts must be positive")
    return s / (t / t_sas)


def error_amplification(e_mas: float, e_sas: float) -> float:
    if e_sas <= 0:
        raise ValueError("error amplification undefined for a zero baseline error rate")
    return e_mas / e_sas


def error_absorption(e_sas: float, e_mas: float) -> float:
    if e_sas <= 0:
        raise ValueError("error absorption undefined for a zero baseline error rate")
    return (e_sas - e_mas) / e_sas


def success_per_kilotoken(successes: float, total_tokens: float) -> float:
    if total_tokens <= 0:
        raise ValueError("total_tokens must be positive")
    return successes / (total_tokens / 1000.0)


def agentic_advantage(best_interactive: float, best_single_shot: float) -> float:
    """Relative gap between the best interactive and best single-shot scores."""
    if best_interactive <= 0:
        raise ValueError("best_interactive must be positive")
    return (best_interactive - best_single_shot) / best_interactive


def message_density(trace: EpisodeTrace) -> float:
    if not trace.turns:
        return 0.0
    return len(trace.messages) / len(trace.turns)


def information_gain(pre_success_probs: Sequence[float], post_success_probs: Sequence[float]) -> float:
    """Bits of uncertainty removed, from Bernoulli variances of the mean success probability.

    Returns +inf (posterior collapsed) or -inf (prior was certain) with a
    warning when exactly one variance is zero.
    """
    for name, probs in (("pre", pre_success_probs), ("post", post_success_probs)):
        if len(probs) == 0:
            raise ValueError(f"{name}_success_probs must be nonempty")
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValueError(f"{name}_success_probs must lie in [0, 1]")
    p_pre = sum(pre_success_probs) / len(pre_success_probs)
    p_post = sum(post_success_probs) / len(post_success_probs)
    var_pre = p_pre * (1.0 - p_pre)
    var_post = p_post * (1.0 - p_post)
    if var_pre == var_post:
        return 0.0
    if var_post == 0.0:
        logger.warning("information gain: degenerate posterior (zero variance)")
        return math.inf
    if var_pre == 0.0:
        logger.warning("information gain: degenerate prior (zero variance)")
        return -math.inf
    return 0.5 * math.log2(var_pre / var_post)


# -- similarity ---------------------------------------------------------------

_PUNCT = re.compile(r"^[^\w]+|[^\w]+$")


def tokenize(text: str) -> list[str]:
    tokens = (_PUNCT.sub("", t.lower()) for t in text.split())
    return [t for t in tokens if t]


def tf_cosine(a: str, b: str) -> float:
    """Cosine similarity of term-frequency vectors (lowercased whitespace tokens)."""
    ca, cb = Counter(tokenize(a)), Counter(tokenize(b))
    if not ca or not cb:
        return 0.0
    dot = sum(v * cb[k] for k, v in ca.items())
    norm = math.sqrt(sum(v * v for v in ca.values())) * math.sqrt(sum(v * v for v in cb.values()))
    return min(1.0, dot / norm)


class ServiceSimilarity:
    """Similarity from an HTTP service: POST {"a", "b"} -> {"similarity": float}."""

    def __init__(self, url: str, *, transport: httpx.BaseTransport | None = None, timeout: float = 30.0):
        self.url = url
        self._client = httpx.Client(transport=transport, timeout=timeout)

    def __call__(self, a: str, b: str) -> float:
        response = self._client.post(self.url, json={"a": a, "b": b})
        response.raise_for_status()
        value = float(response.json()["similarity"])
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"similarity service returned {value}, outside [0, 1]")
        return value


def redundancy(rationales: Sequence[str], similarity: Similarity = tf_cosine) -> float:
    """Mean pairwise similarity over all unordered pairs."""
    if len(rationales) < 2:
        raise ValueError("redundancy needs at least two rationales")
    sims = [similarity(a, b) for a, b in itertools.combinations(rationales, 2)]
    return sum(sims) / len(sims)


# -- token overlap --------------------------------------------------------------


@dataclass(frozen=True)
class TokenOverlapReport:
    unique_mass: float
    shared_mass: float
    contradictory_mass: float
    shared_token_entropy_bits: float
    unique_tokens: frozenset[str] = frozenset()
    shared_tokens: frozenset[str] = frozenset()


_SENTENCE = re.compile(r"(?<=[.!?;])\s+|\n+")


def split_assertions(text: str) -> list[str]:
    return [s.strip() for s in _SENTENCE.split(text) if s.strip()]


def classify_token_overlap(
    rationales: Mapping[int, str],
    similarity: Similarity = tf_cosine,
    contradiction_threshold: float = CONTRADICTION_THRESHOLD,
) -> TokenOverlapReport:
    """Split token occurrences into unique, shared and contradictory mass.

    A token type is shared if at least two agents use it, unique otherwise.
    Each sentence is one assertion; an assertion whose best similarity to any
    other agent's assertion falls below the threshold is contradictory, and
    its tokens count toward contradictory mass instead.
    """
    if len(rationales) < 2:
        raise ValueError("token overlap needs at least two rationales")
    assertions = {aid: split_assertions(text) for aid, text in rationales.items()}
    owners: dict[str, set[int]] = {}
    for aid, text in rationales.items():
        for tok in tokenize(text):
            owners.setdefault(tok, set()).add(aid)
    shared_types = {t for t, who in owners.items() if len(who) >= 2}

    unique = shared = contradictory = 0
    shared_counts: Counter[str] = Counter()
    for aid, sentences in assertions.items():
        others = [s for other, ss in assertions.items() if other != aid for s in ss]
        for sentence in sentences:
            tokens = tokenize(sentence)
            best = max((similarity(sentence, o) for o in others), default=0.0)
            opposed = best < contradiction_threshold
            for tok in tokens:
                if tok in shared_types:
                    shared_counts[tok] += 1
                if opposed:
                    contradictory += 1
                elif tok in shared_types:
                    shared += 1
                else:
                    unique += 1
    total = unique + shared + contradictory
    if total == 0:
        return TokenOverlapReport(1.0, 0.0, 0.0, 0.0)
    n_shared = sum(shared_counts.values())
    entropy = 0.0
    for count in shared_counts.values():
        p = count / n_shared
        entropy -= p * math.log2(p)
    return TokenOverlapReport(
        unique / total,
        shared / total,
        contradictory / total,
        max(entropy, 0.0),
        frozenset(owners) - frozenset(shared_types),
        frozenset(shared_types),
    )


# -- error taxonomy -------------------------------------------------------------


class ErrorCategory(str, enum.Enum):
    LOGICAL_CONTRADICTION = "logical_contradiction"
    NUMERICAL_DRIFT = "numerical_drift"
    CONTEXT_OMISSION = "context_omission"
    COORDINATION_FAILURE = "coordination_failure"


@dataclass(frozen=True)
class ErrorCandidate:
    """Something an agent said or did that might be an error.

    ``check_omission`` limits context-omission checks to outputs that are
    expected to carry the required entities (final answers).
    """

    agent_id: int
    turn_index: int
    text: str = ""
    numeric_value: float | None = None
    misrouted: bool = False
    allocation_conflict: bool = False
    in_mas: bool = True
    check_omission: bool = True


@dataclass(frozen=True)
class ErrorRecord:
    category: ErrorCategory
    agent_id: int
    turn_index: int
    detail: str


_CLAIM = re.compile(r"^(?P<subject>.+?)\s+(?:is|are)\s+(?P<neg>not\s+)?(?P<predicate>.+?)$", re.IGNORECASE)
_NUMBER = re.compile(r"-?\d+(?:\.\d+)?(?:[eE]-?\d+)?")


def _claims(text: str) -> set[tuple[str, str, bool]]:
    claims = set()
    for sentence in split_assertions(text):
        for clause in re.split(r"\s*(?:,|\bbut\b|\band\b|\.\.\.)\s*", sentence.rstrip(".!?;")):
            m = _CLAIM.match(clause.strip())
            if not m:
                continue
            subject = " ".join(tokenize(m.group("subject")))
            predicate = " ".join(tokenize(m.group("predicate")))
            positive = m.group("neg") is None
            if predicate == "false":
                predicate, positive = "true", not positive
            claims.add((subject, predicate, positive))
    return claims


def find_contradiction(text: str) -> str | None:
    claims = _claims(text)
    for subject, predicate, positive in sorted(claims):
        if positive and (subject, predicate, False) in claims:
            return f"{subject!r} asserted both '{predicate}' and its negation"
    return None


def _relative_error(value: float, truth: float) -> float:
    if truth == 0:
        return abs(value)
    return abs(value - truth) / abs(truth)


def classify_error(candidate: ErrorCandidate, ground_truth: GroundTruth | None) -> ErrorRecord | None:
    """Assign one category, or None when no rule applies.

    Rules are checked in order: coordination failure (MAS only), logical
    contradiction, numerical drift (relative error strictly above 5%),
    context omission.
    """
    c = candidate
    if c.in_mas and (c.misrouted or c.allocation_conflict):
        what = "misrouted message" if c.misrouted else "allocation conflict"
        return ErrorRecord(ErrorCategory.COORDINATION_FAILURE, c.agent_id, c.turn_index, what)
    if detail := find_contradiction(c.text):
        return ErrorRecord(ErrorCategory.LOGICAL_CONTRADICTION, c.agent_id, c.turn_index, detail)
    if ground_truth is None:
        return None
    if ground_truth.numeric is not None:
        value = c.numeric_value
        if value is None and (found := _NUMBER.findall(c.text)):
            value = float(found[-1])
        if value is not None:
            rel = _relative_error(value, ground_truth.numeric)
            if rel > NUMERIC_DRIFT_THRESHOLD + 1e-12:
                return ErrorRecord(
                    ErrorCategory.NUMERICAL_DRIFT, c.agent_id, c.turn_index, f"relative error {rel:.4f}"
                )
    if c.check_omission and ground_truth.required_entities:
        said = set(tokenize(c.text))
        missing = [e for e in ground_truth.required_entities if not set(tokenize(e)) <= said]
        if missing:
            return ErrorRecord(
                ErrorCategory.CONTEXT_OMISSION, c.agent_id, c.turn_index, f"missing {', '.join(missing)}"
            )
    return None


def classify_errors(
    candidates: Iterable[ErrorCandidate], ground_truth: GroundTruth | None
) -> tuple[list[ErrorRecord], int]:
    """Classify many candidates; returns the records and how many were dropped."""
    records, dropped = [], 0
    for c in candidates:
        rec = classify_error(c, ground_truth)
        if rec is None:
            dropped += 1
        else:
            records.append(rec)
    return records, dropped


def trace_error_candidates(trace: EpisodeTrace) -> list[ErrorCandidate]:
    in_mas = len([a for a in trace.agent_ids]) > 1
    out = []
    for t in trace.turns:
        out.append(
            ErrorCandidate(
                t.agent_id,
                t.index,
                t.action.payload,
                in_mas=in_mas,
                check_omission=t.action.kind is ActionKind.FINAL_ANSWER,
            )
        )
    for e in trace.errors:
        if e.get("category") == "coordination_failure":
            out.append(ErrorCandidate(e["agent_id"], e["turn_index"], misrouted=True, in_mas=in_mas))
    return out


def turn_error_rate(trace: EpisodeTrace, ground_truth: GroundTruth | None = None) -> float:
    """Fraction of turns with at least one classified error."""
    if not trace.turns:
        return 0.0
    records, _ = classify_errors(trace_error_candidates(trace), ground_truth)
    flagged = {r.turn_index for r in records}
    return len(flagged & {t.index for t in trace.turns}) / len(trace.turns)


# -- per-configuration summary ------------------------------------------------


@dataclass(frozen=True)
class CoordinationMetrics:
    """Per-configuration metrics. ``error_rate`` is the turn-level error rate;
    ``failure_rate`` (1 - S) is what error amplification compares."""

    success_rate: float
    mean_turns: float
    overhead_pct: float
    message_density: float
    redundancy: float
    efficiency: float
    error_amplification: float
    success_per_kilotoken: float
    error_rate: float
    failure_rate: float
    n_traces: int


def summarize(
    traces: Sequence[EpisodeTrace],
    sas_mean_turns: float,
    sas_failure_rate: float,
    similarity: Similarity = tf_cosine,
    ground_truth: GroundTruth | None = None,
) -> CoordinationMetrics:
    if not traces:
        raise ValueError("summarize needs at least one trace")
    n = len(traces)
    s = sum(t.success for t in traces) / n
    turns = sum(t.n_turns for t in traces) / n
    density = sum(message_density(t) for t in traces) / n
    reds = [
        redundancy(list(t.per_agent_rationales.values()), similarity)
        for t in traces
        if len(t.per_agent_rationales) >= 2
    ]
    tokens = sum(t.total_tokens for t in traces)
    failure = 1.0 - s
    amp = error_amplification(failure, sas_failure_rate) if sas_failure_rate > 0 else math.nan
    return CoordinationMetrics(
        success_rate=s,
        mean_turns=turns,
        overhead_pct=coordination_overhead(turns, sas_mean_turns),
        message_density=density,
        redundancy=sum(reds) / len(reds) if reds else 0.0,
        efficiency=coordination_efficiency(s, turns, sas_mean_turns) if turns > 0 else 0.0,
        error_amplification=amp,
        success_per_kilotoken=success_per_kilotoken(s * n, tokens) if tokens > 0 else 0.0,
        error_rate=sum(turn_error_rate(t, ground_truth) for t in traces) / n,
        failure_rate=failure,
        n_traces=n,
    )
