"""Aggregation of traces into per-architecture metrics, regimes and ranking stability."""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass
from typing import Hashable, Mapping, Sequence

from ..core import Topology
from ..estimator import DataError
from ..metrics import CoordinationMetrics, Similarity, summarize, tf_cosine
from ..topology import EpisodeTrace

UNDER, OPTIMAL, OVER, UNCLASSIFIED = "under_coordination", "optimal_band", "over_coordination", "unclassified"


def coordination_regime(overhead_pct: float) -> str:
    """O < 100 under; 200 < O < 300 optimal; O > 400 over; anything else unclassified."""
    if overhead_pct < 100:
        return UNDER
    if 200 < overhead_pct < 300:
        return OPTIMAL
    if overhead_pct > 400:
        return OVER
    return UNCLASSIFIED


def kendall_tau(ranking_a: Sequence[Hashable], ranking_b: Sequence[Hashable]) -> float:
    """Rank correlation of two orderings of the same items (no ties, so tau-a = tau-b)."""
    if len(set(ranking_a)) != len(ranking_a) or len(set(ranking_b)) != len(ranking_b):
        raise ValueError("rankings must not repeat items")
    if set(ranking_a) != set(ranking_b):
        raise ValueError("rankings must cover the same items")
    n = len(ranking_a)
    if n < 2:
        raise ValueError("need at least two items")
    pos_b = {item: i for i, item in enumerate(ranking_b)}
    concordant = discordant = 0
    for i, j in itertools.combinations(range(n), 2):
        if pos_b[ranking_a[i]] < pos_b[ranking_a[j]]:
            concordant += 1
        else:
            discordant += 1
    return (concordant - discordant) / (n * (n - 1) / 2)


@dataclass(frozen=True)
class SasReference:
    mean_turns: float
    failure_rate: float


def sas_reference_from(traces: Sequence[EpisodeTrace]) -> dict[str, SasReference]:
    """Per-benchmark single-agent mean turns and failure rate, from the SAS traces given."""
    groups: dict[str, list[EpisodeTrace]] = {}
    for t in traces:
        if t.topology is Topology.SAS:
            groups.setdefault(t.benchmark, []).append(t)
    return {
        bench: SasReference(
            sum(t.n_turns for t in ts) / len(ts),
            1.0 - sum(t.success for t in ts) / len(ts),
        )
        for bench, ts in sorted(groups.items())
    }


@dataclass(frozen=True)
class GroupReport:
    architecture: Topology
    benchmark: str
    metrics: CoordinationMetrics
    regime: str


@dataclass(frozen=True)
class AggregateReport:
    groups: tuple[GroupReport, ...]
    rankings: Mapping[str, tuple[Topology, ...]]
    kendall_tau_matrix: Mapping[tuple[str, str], float]

    def group(self, architecture: Topology | str, benchmark: str) -> GroupReport:
        architecture = Topology.parse(architecture)
        for g in self.groups:
            if g.architecture is architecture and g.benchmark == benchmark:
                return g
        raise KeyError((architecture, benchmark))

    def to_dict(self) -> dict:
        def clean(v: float) -> float | None:
            return None if isinstance(v, float) and math.isnan(v) else v

        return {
            "groups": [
                {
                    "architecture": g.architecture.value,
                    "benchmark": g.benchmark,
                    "regime": g.regime,
                    "metrics": {k: clean(v) for k, v in asdict(g.metrics).items()},
                }
                for g in self.groups
            ],
            "rankings": {b: [t.value for t in r] for b, r in self.rankings.items()},
            "kendall_tau": [
                {"a": a, "b": b, "tau": clean(tau)} for (a, b), tau in sorted(self.kendall_tau_matrix.items())
            ],
        }


def _order_key(t: EpisodeTrace) -> tuple:
    return (t.topology.value, t.benchmark, t.system_id, t.task_id, t.seed)


def aggregate(
    traces: Sequence[EpisodeTrace],
    sas_reference: Mapping[str, SasReference] | None = None,
    similarity: Similarity = tf_cosine,
) -> AggregateReport:
    """Group traces by (architecture, benchmark) and compute the metric table.

    ``sas_reference`` defaults to the SAS traces present in the input. The
    result does not depend on input order.
    """
    if not traces:
        raise DataError("aggregate needs at least one trace")
    ordered = sorted(traces, key=_order_key)
    reference = dict(sas_reference) if sas_reference is not None else sas_reference_from(ordered)
    groups: dict[tuple[Topology, str], list[EpisodeTrace]] = {}
    for t in ordered:
        groups.setdefault((t.topology, t.benchmark), []).append(t)
    missing = sorted({b for _, b in groups} - set(reference))
    if missing:
        raise DataError(f"no single-agent reference for benchmark(s): {', '.join(missing)}")

    reports = []
    for (top, bench), ts in sorted(groups.items(), key=lambda kv: (kv[0][1], list(Topology).index(kv[0][0]))):
        ref = reference[bench]
        m = summarize(ts, ref.mean_turns, ref.failure_rate, similarity)
        reports.append(GroupReport(top, bench, m, coordination_regime(m.overhead_pct)))

    rankings: dict[str, tuple[Topology, ...]] = {}
    for bench in sorted({b for _, b in groups}):
        rows = [g for g in reports if g.benchmark == bench]
        rows.sort(key=lambda g: (-g.metrics.success_rate, list(Topology).index(g.architecture)))
        rankings[bench] = tuple(g.architecture for g in rows)

    taus: dict[tuple[str, str], float] = {}
    for a, b in itertools.combinations(sorted(rankings), 2):
        common = set(rankings[a]) & set(rankings[b])
        ra = [t for t in rankings[a] if t in common]
        rb = [t for t in rankings[b] if t in common]
        taus[(a, b)] = kendall_tau(ra, rb) if len(common) >= 2 else math.nan
    return AggregateReport(tuple(reports), rankings, taus)


def render_report(data: Mapping) -> str:
    """Markdown table from ``AggregateReport.to_dict()`` output."""

    def fmt(v: float | None, digits: int = 3) -> str:
        return "n/a" if v is None else f"{v:.{digits}f}"

    lines = [
        "| benchmark | architecture | S | turns | O% | c | R | E_c | A_e | regime |",
        "|---|---|---|---|---|---|---|---|---|---|",
    ]
    for g in data["groups"]:
        m = g["metrics"]
        lines.append(
            f"| {g['benchmark']} | {g['architecture']} | {fmt(m['success_rate'])} | {fmt(m['mean_turns'], 1)} "
            f"| {fmt(m['overhead_pct'], 0)} | {fmt(m['message_density'], 2)} | {fmt(m['redundancy'], 2)} "
            f"| {fmt(m['efficiency'])} | {fmt(m['error_amplification'], 2)} | {g['regime']} |"
        )
    lines.append("")
    lines.append("Rankings by mean success:")
    for bench, order in data["rankings"].items():
        lines.append(f"- {bench}: {' > '.join(order)}")
    if data["kendall_tau"]:
        lines.append("")
        lines.append("Kendall tau between benchmark rankings:")
        for row in data["kendall_tau"]:
            lines.append(f"- {row['a']} vs {row['b']}: {fmt(row['tau'])}")
    return "\n".join(lines) + "\n"
