from __future__ import annotations

import itertools
import math
from collections import Counter

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from agentcoord.core import ActionRecord, GroundTruth, ObservationRecord, Topology
from agentcoord.metrics import (
    ErrorCandidate,
    ErrorCategory,
    ServiceSimilarity,
    agentic_advantage,
    classify_error,
    classify_errors,
    classify_token_overlap,
    coordination_efficiency,
    coordination_overhead,
    error_absorption,
    error_amplification,
    information_gain,
    message_density,
    redundancy,
    success_per_kilotoken,
    summarize,
    tf_cosine,
)
from agentcoord.topology import EpisodeTrace, MessageRecord, TurnRecord

probs = st.floats(0.0, 1.0, allow_nan=False)
positive = st.floats(1e-3, 1e3, allow_nan=False)


def fixture_trace(n_messages: int, n_turns: int, agents: int = 3) -> EpisodeTrace:
    turns = tuple(
        TurnRecord(i, i % agents, 0, ActionRecord.final("x"), ObservationRecord(""))
        for i in range(n_turns)
    )
    messages = tuple(MessageRecord(i % agents, ((i + 1) % agents,), i, "m") for i in range(n_messages))
    return EpisodeTrace(
        "sys", "task", 0, Topology.DECENTRALIZED, "bench", turns, messages, 10, "success", "x",
        agent_ids=tuple(range(agents)),
    )


class TestScalars:
    def test_overhead(self):
        assert coordination_overhead(7.2, 7.2) == 0
        assert coordination_overhead(11.4, 7.2) == pytest.approx(58.33, abs=0.01)
        assert coordination_overhead(44.3, 7.2) == pytest.approx(515.3, abs=0.05)
        with pytest.raises(ValueError):
            coordination_overhead(1, 0)

    def test_efficiency(self):
        assert coordination_efficiency(0.466, 7.2, 7.2) == pytest.approx(0.466)
        assert coordination_efficiency(0.370, 11.4, 7.2) == pytest.approx(0.2337, abs=1e-4)
        assert coordination_efficiency(0.452, 44.3, 7.2) == pytest.approx(0.0735, abs=1e-4)
        with pytest.raises(ValueError):
            coordination_efficiency(0.5, 0, 7.2)

    def test_amplification(self):
        assert error_amplification(0.3, 0.3) == 1.0
        assert error_amplification(0.488, 0.2) == pytest.approx(2.44)
        assert error_amplification(0.172, 0.01) == pytest.approx(17.2)
        with pytest.raises(ValueError):
            error_amplification(0.1, 0.0)

    def test_absorption(self):
        assert error_absorption(0.2, 0.2) == 0
        assert error_absorption(0.2, 0.1546) == pytest.approx(0.227, abs=1e-3)
        assert error_absorption(0.2, 0.2092) == pytest.approx(-0.046, abs=1e-3)

    def test_any_error_enumeration(self):
        # exhaustive 2^3 oracle for three independent agents at rate 0.2
        p = 0.2
        fail = sum(
            math.prod(p if e else 1 - p for e in outcome)
            for outcome in itertools.product((0, 1), repeat=3)
            if any(outcome)
        )
        assert fail == pytest.approx(0.488)
        assert error_amplification(fail, p) == pytest.approx(2.44)

    @given(positive, st.floats(0, 1e3, allow_nan=False))
    def test_absorption_is_one_minus_amplification(self, e_sas, e_mas):
        assert error_absorption(e_sas, e_mas) == pytest.approx(1 - error_amplification(e_mas, e_sas), abs=1e-9)

    def test_success_per_kilotoken(self):
        assert success_per_kilotoken(1, 1000) == 1.0
        assert success_per_kilotoken(0, 5000) == 0
        assert success_per_kilotoken(3, 12000) == 0.25
        with pytest.raises(ValueError):
            success_per_kilotoken(1, 0)

    def test_agentic_advantage(self):
        assert agentic_advantage(0.8, 0.8) == 0
        assert agentic_advantage(0.8, 0.2) == pytest.approx(0.75)
        assert agentic_advantage(0.5, 0.6) == pytest.approx(-0.2)
        with pytest.raises(ValueError):
            agentic_advantage(0.0, 0.1)

    def test_message_density(self):
        assert message_density(fixture_trace(0, 5, agents=1)) == 0
        assert message_density(fixture_trace(9, 22)) == pytest.approx(0.409, abs=5e-4)


class TestInformationGain:
    def test_identity(self):
        assert information_gain([0.3, 0.7], [0.3, 0.7]) == 0

    def test_closed_form(self):
        assert information_gain([0.5], [0.9]) == pytest.approx(0.5 * math.log2(0.25 / 0.09), abs=1e-12)
        assert information_gain([0.5], [0.9]) == pytest.approx(0.737, abs=5e-4)
        assert information_gain([0.9], [0.5]) == pytest.approx(-0.737, abs=5e-4)

    def test_degenerate_posterior(self, caplog):
        assert information_gain([0.5], [1.0]) == math.inf
        assert "degenerate" in caplog.text
        assert information_gain([1.0], [0.0]) == 0

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            information_gain([], [0.5])
        with pytest.raises(ValueError):
            information_gain([1.2], [0.5])

    @given(probs, probs)
    def test_sign_follows_variance(self, a, b):
        gain = information_gain([a], [b])
        va, vb = a * (1 - a), b * (1 - b)
        if va > vb:
            assert gain > 0
        elif va < vb:
            assert gain < 0
        else:
            assert gain == 0


class TestRedundancy:
    def test_examples(self):
        assert redundancy(["the cat sat", "the cat sat"]) == pytest.approx(1.0)
        assert redundancy(["alpha beta", "gamma delta"]) == 0.0

    def test_pairwise_mean(self):
        sims = {frozenset({"a", "b"}): 0.5, frozenset({"a", "c"}): 0.3, frozenset({"b", "c"}): 0.4}
        assert redundancy(["a", "b", "c"], lambda x, y: sims[frozenset({x, y})]) == pytest.approx(0.4)

    def test_needs_two(self):
        with pytest.raises(ValueError):
            redundancy(["only"])

    @given(st.lists(st.text(alphabet="abc ", max_size=12), min_size=2, max_size=5), st.randoms())
    def test_permutation_invariant_and_bounded(self, texts, rnd):
        shuffled = texts[:]
        rnd.shuffle(shuffled)
        r = redundancy(texts)
        assert 0.0 <= r <= 1.0
        assert redundancy(shuffled) == pytest.approx(r, abs=1e-12)

    def test_service_similarity(self):
        transport = httpx.MockTransport(lambda req: httpx.Response(200, json={"similarity": 0.25}))
        assert redundancy(["a", "b"], ServiceSimilarity("http://sim.test", transport=transport)) == 0.25

    def test_service_out_of_range(self):
        transport = httpx.MockTransport(lambda req: httpx.Response(200, json={"similarity": 2.0}))
        with pytest.raises(ValueError):
            ServiceSimilarity("http://sim.test", transport=transport)("a", "b")


class TestTokenOverlap:
    def test_unique_and_shared(self):
        report = classify_token_overlap({0: "a b", 1: "a c"})
        assert report.unique_tokens == {"b", "c"}
        assert report.shared_tokens == {"a"}
        assert report.shared_token_entropy_bits == 0.0

    def test_identical(self):
        report = classify_token_overlap({0: "the sky is blue", 1: "the sky is blue"})
        assert report.unique_mass == 0 and report.contradictory_mass == 0

    def test_four_shared_tokens(self):
        report = classify_token_overlap({0: "w x y z", 1: "w x y z q"})
        counts = Counter({"w": 2, "x": 2, "y": 2, "z": 2})
        oracle = -sum(c / 8 * math.log2(c / 8) for c in counts.values())
        assert report.shared_token_entropy_bits == pytest.approx(oracle) == pytest.approx(2.0)

    def test_opposed_assertions(self):
        report = classify_token_overlap({0: "revenue grew strongly", 1: "costs collapsed entirely"})
        assert report.contradictory_mass == 1.0

    @given(st.dictionaries(st.integers(0, 5), st.text(alphabet="abcd .", max_size=20), min_size=2, max_size=4))
    def test_masses_sum_to_one(self, rationales):
        r = classify_token_overlap(rationales)
        assert r.unique_mass + r.shared_mass + r.contradictory_mass == pytest.approx(1.0, abs=1e-9)
        assert r.shared_token_entropy_bits >= 0


class TestErrorTaxonomy:
    truth = GroundTruth(numeric=100.0)

    @pytest.mark.parametrize("answer,drift", [(105, False), (95, False), (106, True), (94, True)])
    def test_drift_boundary(self, answer, drift):
        rec = classify_error(ErrorCandidate(0, 1, numeric_value=answer), self.truth)
        assert (rec is not None and rec.category is ErrorCategory.NUMERICAL_DRIFT) is drift

    def test_drift_from_text(self):
        rec = classify_error(ErrorCandidate(0, 1, "the total is 120"), self.truth)
        assert rec.category is ErrorCategory.NUMERICAL_DRIFT

    def test_contradiction(self):
        rec = classify_error(ErrorCandidate(0, 2, "X is true ... X is false"), None)
        assert rec.category is ErrorCategory.LOGICAL_CONTRADICTION

    def test_contradiction_with_negation(self):
        rec = classify_error(ErrorCandidate(0, 2, "The door is open. The door is not open."), None)
        assert rec.category is ErrorCategory.LOGICAL_CONTRADICTION

    def test_omission(self):
        truth = GroundTruth(required_entities=("Acme Corp",))
        rec = classify_error(ErrorCandidate(1, 3, "revenue rose"), truth)
        assert rec.category is ErrorCategory.CONTEXT_OMISSION
        assert classify_error(ErrorCandidate(1, 3, "acme corp revenue rose"), truth) is None

    def test_misrouting_only_in_mas(self):
        rec = classify_error(ErrorCandidate(0, 4, misrouted=True), None)
        assert rec.category is ErrorCategory.COORDINATION_FAILURE
        assert classify_error(ErrorCandidate(0, 4, misrouted=True, in_mas=False), None) is None

    def test_unclassifiable_dropped_with_count(self):
        records, dropped = classify_errors(
            [ErrorCandidate(0, 0, "fine"), ErrorCandidate(0, 1, numeric_value=150)], self.truth
        )
        assert dropped == 1 and len(records) == 1


def test_summarize_sas_self_reference():
    traces = [fixture_trace(0, 4, agents=1), fixture_trace(0, 6, agents=1)]
    m = summarize(traces, sas_mean_turns=5.0, sas_failure_rate=0.0)
    assert m.overhead_pct == 0 and m.efficiency == m.success_rate
    assert math.isnan(m.error_amplification)
