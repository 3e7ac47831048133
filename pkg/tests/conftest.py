from __future__ import annotations

import pytest

from agentcoord.agents import ExactJudge, ScriptedAgent, toy_toolset
from agentcoord.core import ActionRecord, AgentSystem, BudgetConfig, TaskSpec, Topology

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


ACCOUNTING_BUDGET = BudgetConfig(
    k_max_iterations=45,
    n_agents=3,
    r_orchestrator_rounds=5,
    d_debate_rounds=3,
    p_peer_rounds=1,
    m_peer_requests_per_round=2,
)


def looping_worker(tag: str) -> ScriptedAgent:
    return ScriptedAgent((ActionRecord.tool("echo", text=tag),), cycle=True)


def steering_orchestrator() -> ScriptedAgent:
    return ScriptedAgent((ActionRecord.send(0, "keep going"),), cycle=True)


def scripted_system(topology: Topology, budget: BudgetConfig = ACCOUNTING_BUDGET) -> AgentSystem:
    """A system that never terminates early: distinct worker outputs, orchestrator never finalizes."""
    if topology is Topology.SAS:
        return AgentSystem.build(topology, [looping_worker("solo")], budget=BudgetConfig(k_max_iterations=10, n_agents=1))
    workers = [looping_worker(f"worker-{i}") for i in range(budget.n_agents)]
    orchestrator = steering_orchestrator() if topology in (Topology.CENTRALIZED, Topology.HYBRID) else None
    return AgentSystem.build(topology, workers, orchestrator=orchestrator, budget=budget)


@pytest.fixture
def toy_task() -> TaskSpec:
    return TaskSpec("toy", "What is 6 times 7?", toy_toolset(), ExactJudge("42"), domain_label="arith")
