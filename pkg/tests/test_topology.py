from __future__ import annotations

import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agentcoord.agents import AllLinesJudge, ExactJudge, FailingAgent, ScriptedAgent, toy_toolset
from agentcoord.core import (
    ActionRecord,
    Aggregation,
    AgentSystem,
    BudgetConfig,
    ConfigurationError,
    OrchestrationPolicy,
    TaskSpec,
    Topology,
)
from agentcoord.topology import (
    MessageRecord,
    aggregate_outputs,
    directed_pair_count,
    expected_message_count,
    peer_round_slots,
    run_episode,
    sequential_depth,
    trace_from_dict,
    trace_to_dict,
)

from conftest import ACCOUNTING_BUDGET, scripted_system


def test_sas_four_tools_then_answer(toy_task):
    system = AgentSystem.build(Topology.SAS, [ScriptedAgent.answering("42", tool_calls=4)], budget=BudgetConfig(n_agents=1))
    trace = run_episode(system, toy_task, seed=0)
    assert trace.n_turns == 5
    assert trace.messages == ()
    assert trace.success and trace.final_answer == "42"


def test_independent_concatenates_in_id_order(toy_task):
    workers = [ScriptedAgent.answering(a) for a in ("alpha", "beta", "gamma")]
    system = AgentSystem.build(Topology.INDEPENDENT, workers, budget=BudgetConfig(k_max_iterations=3, n_agents=3))
    trace = run_episode(system, toy_task, seed=0)
    assert len(trace.messages) == 3
    aggregator = system.aggregator.id
    assert all(m.receivers == (aggregator,) for m in trace.messages)
    assert trace.final_answer == "alpha\nbeta\ngamma"


def test_decentralized_schedule_enumeration():
    trace = run_episode(scripted_system(Topology.DECENTRALIZED), TaskSpec("t", "p", toy_toolset(), ExactJudge("x")), 1)
    b = ACCOUNTING_BUDGET
    # enumerate the broadcast schedule: every agent to every other agent, every round
    schedule = [
        (rnd, s, r) for rnd in range(b.d_debate_rounds) for s in range(b.n_agents) for r in range(b.n_agents) if s != r
    ]
    delivered = [(m.round, m.sender, r) for m in trace.messages for r in m.receivers]
    assert sorted(delivered) == sorted(schedule)
    assert len(delivered) == directed_pair_count(Topology.DECENTRALIZED, b) == 3 * 3 * 2
    assert len(trace.messages) == expected_message_count(Topology.DECENTRALIZED, b)


@pytest.mark.parametrize("topology", list(Topology))
def test_message_counts_without_early_stop(topology, toy_task):
    system = scripted_system(topology)
    trace = run_episode(system, toy_task, seed=3)
    assert len(trace.messages) == expected_message_count(topology, system.budget)


@pytest.mark.parametrize("topology", list(Topology))
def test_depth_matches_rounds(topology, toy_task):
    system = scripted_system(topology)
    trace = run_episode(system, toy_task, seed=3)
    if topology in (Topology.SAS, Topology.INDEPENDENT):
        per_agent = max(sum(1 for t in trace.turns if t.agent_id == a) for a in trace.agent_ids if any(t.agent_id == a for t in trace.turns))
        assert per_agent == sequential_depth(topology, system.budget, k=per_agent)
        assert trace.rounds_completed == 1
    else:
        assert trace.rounds_completed == sequential_depth(topology, system.budget)


def test_expected_counts_table():
    b = ACCOUNTING_BUDGET
    assert [expected_message_count(t, b) for t in Topology] == [0, 3, 9, 15, 17]


def test_hybrid_peer_messages_are_worker_to_worker(toy_task):
    trace = run_episode(scripted_system(Topology.HYBRID), toy_task, seed=5)
    peers = [m for m in trace.messages if m.channel == "peer"]
    assert len(peers) == ACCOUNTING_BUDGET.p_peer_rounds * ACCOUNTING_BUDGET.m_peer_requests_per_round
    workers = {0, 1, 2}
    assert all(m.sender in workers and set(m.receivers) <= workers for m in peers)


def test_independent_has_no_worker_edges(toy_task):
    trace = run_episode(scripted_system(Topology.INDEPENDENT), toy_task, seed=0)
    workers = {0, 1, 2}
    assert not any(set(m.receivers) & workers for m in trace.messages)


def test_orchestrator_final_answer_stops_early(toy_task):
    orch = ScriptedAgent((ActionRecord.final("42"),))
    workers = [ScriptedAgent.answering("42") for _ in range(3)]
    system = AgentSystem.build(Topology.CENTRALIZED, workers, orchestrator=orch, budget=ACCOUNTING_BUDGET)
    trace = run_episode(system, toy_task, seed=0)
    assert trace.rounds_completed == 1
    assert len(trace.messages) == 3 < expected_message_count(Topology.CENTRALIZED, ACCOUNTING_BUDGET)
    assert trace.success


def test_debate_consensus_stops_early(toy_task):
    workers = [ScriptedAgent.answering("42") for _ in range(3)]
    system = AgentSystem.build(Topology.DECENTRALIZED, workers, budget=ACCOUNTING_BUDGET)
    trace = run_episode(system, toy_task, seed=0)
    assert trace.rounds_completed == 1 and len(trace.messages) == 3
    assert trace.final_answer == "42"


def test_backend_failure_gives_failed_trace(toy_task):
    system = AgentSystem.build(Topology.DECENTRALIZED, [FailingAgent()] * 3, budget=ACCOUNTING_BUDGET)
    trace = run_episode(system, toy_task, seed=0)
    assert trace.outcome == "failure"
    assert trace.errors[0]["category"] == "backend_failure"


def test_token_budget_exhaustion(toy_task):
    budget = BudgetConfig(k_max_iterations=10, n_agents=1, total_token_budget=5)
    system = AgentSystem.build(Topology.SAS, [ScriptedAgent.answering("42", tool_calls=8)], budget=budget)
    trace = run_episode(system, toy_task, seed=0)
    assert trace.outcome == "failure"
    assert "token budget exhausted" in trace.annotations


def test_misrouted_message_is_recorded(toy_task):
    bad = ScriptedAgent((ActionRecord.send(99, "hello"), ActionRecord.final("42")))
    system = AgentSystem.build(Topology.DECENTRALIZED, [bad, bad, bad], budget=ACCOUNTING_BUDGET)
    trace = run_episode(system, toy_task, seed=0)
    assert any(e["category"] == "coordination_failure" for e in trace.errors)
    trace.check()  # no message references agent 99


def test_mismatched_system_rejected_before_execution(toy_task):
    w = ScriptedAgent.answering("x")
    with pytest.raises(ConfigurationError):
        AgentSystem.build(Topology.INDEPENDENT, [w, w], budget=BudgetConfig(n_agents=3))


def test_all_lines_judge_with_synthesis():
    task = TaskSpec("t", "p", toy_toolset(), AllLinesJudge("42"))
    workers = [ScriptedAgent.answering(a) for a in ("42", "41", "42")]
    system = AgentSystem.build(Topology.INDEPENDENT, workers, budget=BudgetConfig(k_max_iterations=3, n_agents=3))
    assert run_episode(system, task, 0).outcome == "failure"


class TestAggregation:
    def test_synthesis_order(self):
        policy = OrchestrationPolicy(Aggregation.SYNTHESIS_ONLY)
        assert aggregate_outputs(policy, [(2, "B"), (1, "A")]) == "A\nB"

    def test_consensus_majority(self):
        policy = OrchestrationPolicy(Aggregation.CONSENSUS)
        assert aggregate_outputs(policy, [(0, "X"), (1, "X"), (2, "Y")]) == "X"

    def test_consensus_tie_lowest_id(self):
        policy = OrchestrationPolicy(Aggregation.CONSENSUS)
        assert aggregate_outputs(policy, [(1, "Y"), (0, "X")]) == "X"

    def test_empty(self):
        with pytest.raises(ValueError):
            aggregate_outputs(OrchestrationPolicy(Aggregation.CONSENSUS), [])

    def test_hierarchical_uses_synthesizer(self):
        policy = OrchestrationPolicy(Aggregation.HIERARCHICAL)
        assert aggregate_outputs(policy, [(0, "a"), (1, "b")], lambda outs: "override") == "override"

    @given(st.lists(st.sampled_from(["x", "y", "z"]), min_size=1, max_size=9))
    def test_consensus_matches_count_oracle(self, answers):
        outputs = list(enumerate(answers))
        got = aggregate_outputs(OrchestrationPolicy(Aggregation.CONSENSUS), outputs)
        best = max(answers.count(a) for a in answers)
        expected = next(a for a in answers if answers.count(a) == best)
        assert got == expected


def test_self_message_rejected():
    with pytest.raises(ConfigurationError):
        MessageRecord(1, (1,), 0, "x")


def test_peer_slots_in_range():
    for r, p in itertools.product(range(1, 8), range(0, 5)):
        slots = peer_round_slots(r, p)
        assert len(slots) == p and all(0 <= s < r for s in slots)


@settings(max_examples=40, deadline=None)
@given(
    st.sampled_from(list(Topology)),
    st.integers(2, 4),
    st.integers(1, 3),
    st.integers(1, 3),
    st.integers(0, 2),
    st.integers(0, 3),
    st.integers(0, 10**6),
)
def test_message_bound_and_replay(top, n, r, d, p, m, seed):
    rounds = {Topology.DECENTRALIZED: d, Topology.CENTRALIZED: r, Topology.HYBRID: r}.get(top, 1)
    budget = BudgetConfig(
        k_max_iterations=n * rounds * 2, n_agents=n, r_orchestrator_rounds=r, d_debate_rounds=d,
        p_peer_rounds=p, m_peer_requests_per_round=m,
    )
    system = scripted_system(top, budget)
    task = TaskSpec("t", "p", toy_toolset(), ExactJudge("x"))
    a = run_episode(system, task, seed)
    b = run_episode(system, task, seed)
    assert trace_to_dict(a) == trace_to_dict(b)
    assert len(a.messages) <= expected_message_count(top, system.budget)
    assert trace_from_dict(trace_to_dict(a)) == a
