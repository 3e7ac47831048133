"""Executors for the five coordination topologies.

Each executor produces an :class:`EpisodeTrace` whose message and turn counts
follow the topology's accounting exactly:

=============  ===================  ==================
topology       LLM calls            messages
=============  ===================  ==================
SAS            k                    0
Independent    n*k (+ synthesis)    n
Decentralized  d*n*k + 1            d*n
Centralized    r*n*k + r            r*n
Hybrid         r*n*k + r + p        r*n + p*m
=============  ===================  ==================

A turn is one backend call. Messages are recorded at round barriers only, in
agent-id order, so traces are deterministic for deterministic backends.
"""

from __future__ import annotations

import logging
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from .core import (
    ActionKind,
    ActionRecord,
    AgentSpec,
    AgentSystem,
    Aggregation,
    BudgetConfig,
    BudgetError,
    ConfigurationError,
    NOOP_TOOL,
    History,
    ObservationRecord,
    OrchestrationPolicy,
    PerAgentBudget,
    TaskSpec,
    Topology,
    append_step,
    derive_seed,
    match_budget,
    whitespace_tokens,
)

logger = logging.getLogger(__name__)

TRACE_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class MessageRecord:
    """One inter-agent message.

    ``receivers`` holds a single id for point-to-point messages and all other
    agents for a debate broadcast. ``reply`` carries the response of a
    request/response exchange (orchestrator directive -> worker report, or a
    peer request -> peer answer); it is part of the same message record.
    """

    sender: int
    receivers: tuple[int, ...]
    round: int
    payload: str
    reply: str = ""
    channel: str = "direct"
    token_cost: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "receivers", tuple(self.receivers))
        if not self.receivers:
            raise ConfigurationError("message needs at least one receiver")
        if self.sender in self.receivers:
            raise ConfigurationError("message sender cannot be its own receiver")
        if self.token_cost is None:
            object.__setattr__(
                self, "token_cost", whitespace_tokens(self.payload) + whitespace_tokens(self.reply)
            )

    @property
    def receiver(self) -> int:
        return self.receivers[0]

    def directed_pairs(self) -> int:
        return len(self.receivers)


@dataclass(frozen=True)
class TurnRecord:
    """One LLM call: the agent's action and the observation it produced."""

    index: int
    agent_id: int
    round: int
    action: ActionRecord
    observation: ObservationRecord

    @property
    def token_cost(self) -> int:
        return self.action.token_cost + self.observation.token_cost


@dataclass(frozen=True)
class EpisodeTrace:
    system_id: str
    task_id: str
    seed: int
    topology: Topology
    benchmark: str
    turns: tuple[TurnRecord, ...]
    messages: tuple[MessageRecord, ...]
    total_tokens: int
    outcome: str
    final_answer: str
    per_agent_rationales: Mapping[int, str] = field(default_factory=dict)
    errors: tuple[Mapping[str, Any], ...] = ()
    annotations: tuple[str, ...] = ()
    agent_ids: tuple[int, ...] = ()
    rounds_completed: int = 0

    @property
    def success(self) -> bool:
        return self.outcome == "success"

    @property
    def n_turns(self) -> int:
        return len(self.turns)

    def check(self) -> EpisodeTrace:
        """Verify structural invariants; raises ConfigurationError on violation."""
        expected = sum(t.token_cost for t in self.turns) + sum(m.token_cost for m in self.messages)
        if expected != self.total_tokens:
            raise ConfigurationError(f"total_tokens {self.total_tokens} != {expected}")
        known = set(self.agent_ids)
        for m in self.messages:
            if m.sender not in known or not set(m.receivers) <= known:
                raise ConfigurationError(f"message references unknown agent: {m}")
        if self.outcome not in ("success", "failure"):
            raise ConfigurationError(f"bad outcome {self.outcome!r}")
        return self


# -- accounting -------------------------------------------------------------


def expected_message_count(topology: Topology | str, budget: BudgetConfig) -> int:
    """Communication-overhead count for a topology with no early termination."""
    topology = Topology.parse(topology)
    n, r, d = budget.n_agents, budget.r_orchestrator_rounds, budget.d_debate_rounds
    if topology is Topology.SAS:
        return 0
    if topology is Topology.INDEPENDENT:
        return n
    if topology is Topology.DECENTRALIZED:
        return d * n
    if topology is Topology.CENTRALIZED:
        return r * n
    return r * n + budget.p_peer_rounds * budget.m_peer_requests_per_round


def directed_pair_count(topology: Topology | str, budget: BudgetConfig) -> int:
    """Point-to-point deliveries implied by the message schedule.

    Equal to the message count except for debate broadcasts, where one
    statement reaches n-1 peers: d*n*(n-1).
    """
    topology = Topology.parse(topology)
    if topology is Topology.DECENTRALIZED:
        n = budget.n_agents
        return budget.d_debate_rounds * n * (n - 1)
    return expected_message_count(topology, budget)


def sequential_depth(topology: Topology | str, budget: BudgetConfig, k: int | None = None) -> int:
    """Dependent rounds on the critical path: k, k, d, r, r."""
    topology = Topology.parse(topology)
    if topology in (Topology.SAS, Topology.INDEPENDENT):
        return budget.k_max_iterations if k is None else k
    if topology is Topology.DECENTRALIZED:
        return budget.d_debate_rounds
    return budget.r_orchestrator_rounds


def peer_round_slots(r: int, p: int) -> tuple[int, ...]:
    """Orchestrator rounds after which Hybrid peer rounds run (spread evenly)."""
    return tuple(max(0, min(r - 1, ((i + 1) * r) // (p + 1) - 1)) for i in range(p))


# -- aggregation ------------------------------------------------------------


def normalize_answer(text: str) -> str:
    return " ".join(text.lower().split()).rstrip(".")


def aggregate_outputs(
    policy: OrchestrationPolicy,
    outputs: Sequence[tuple[int, str]],
    synthesizer: Any = None,
) -> str:
    """Combine worker outputs into one answer.

    ``synthesizer`` is required for hierarchical aggregation: a callable taking
    the id-ordered outputs and returning the orchestrator's answer.
    """
    if not outputs:
        raise ValueError("aggregate_outputs needs at least one output")
    ordered = sorted(outputs, key=lambda item: item[0])
    if policy.aggregation is Aggregation.SYNTHESIS_ONLY:
        return "\n".join(answer for _, answer in ordered)
    if policy.aggregation is Aggregation.CONSENSUS:
        counts = Counter(normalize_answer(a) for _, a in ordered)
        best = max(counts.values())
        for _, answer in ordered:
            if counts[normalize_answer(answer)] == best:
                return answer
    if synthesizer is None:
        raise ConfigurationError("hierarchical aggregation needs an orchestrator synthesizer")
    return synthesizer(ordered)


# -- execution --------------------------------------------------------------


class _Halt(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass
class _AgentState:
    spec: AgentSpec
    history: History
    calls: int = 0
    output: str = ""
    payloads: list[str] = field(default_factory=list)


class _Episode:
    """Mutable scratch state for one run; frozen into an EpisodeTrace at the end."""

    def __init__(self, system: AgentSystem, task: TaskSpec, seed: int):
        self.system = system
        self.task = task
        self.seed = seed
        self.budget = system.budget
        self.turns: list[TurnRecord] = []
        self.messages: list[MessageRecord] = []
        self.errors: list[dict[str, Any]] = []
        self.annotations: list[str] = []
        self.tokens = 0
        self.rounds_completed = 0
        self.tools_used: list[str] = []
        self.states = {
            a.id: _AgentState(a, History.start(task.prompt, system.budget.max_context_tokens))
            for a in system.agents
        }

    # bookkeeping

    def _charge(self, cost: int) -> None:
        self.tokens += cost
        if self.tokens > self.budget.total_token_budget:
            raise _Halt("token budget exhausted")

    def post(self, message: MessageRecord) -> None:
        self.messages.append(message)
        self._charge(message.token_cost)

    def _observe(self, agent_id: int, action: ActionRecord) -> ObservationRecord:
        if action.kind is ActionKind.TOOL_CALL:
            if action.tool_name == NOOP_TOOL:
                return ObservationRecord("no-op: output not understood")
            tool = self.task.tool(action.tool_name or "")
            if tool is None:
                return ObservationRecord(f"error: unknown tool {action.tool_name}", is_error=True)
            self.tools_used.append(tool.name)
            try:
                return ObservationRecord(str(tool(action.parameters)))
            except Exception as exc:  # tool bugs are observations, not crashes
                return ObservationRecord(f"error: {exc}", is_error=True)
        if action.kind is ActionKind.MESSAGE_SEND:
            if action.recipient not in self.system.agent_ids or action.recipient == agent_id:
                self.errors.append(
                    {
                        "category": "coordination_failure",
                        "agent_id": agent_id,
                        "turn_index": len(self.turns),
                        "detail": f"message to unknown agent {action.recipient}",
                    }
                )
                return ObservationRecord("error: no such recipient", is_error=True)
            return ObservationRecord("queued")
        return ObservationRecord("")

    def call(self, agent_id: int, round_index: int, inbox: Sequence[MessageRecord]) -> ActionRecord:
        """One LLM call by ``agent_id``; records the turn and updates its history."""
        state = self.states[agent_id]
        step_seed = derive_seed(self.seed, agent_id, state.calls)
        try:
            action = state.spec.backend.step(state.history, tuple(inbox), step_seed)
        except Exception as exc:
            self.errors.append(
                {
                    "category": "backend_failure",
                    "agent_id": agent_id,
                    "turn_index": len(self.turns),
                    "detail": f"{type(exc).__name__}: {exc}",
                }
            )
            raise _Halt(f"backend failure in agent {agent_id}") from exc
        if not isinstance(action, ActionRecord):
            raise _Halt(f"agent {agent_id} returned {type(action).__name__}, not an action")
        observation = self._observe(agent_id, action)
        try:
            state.history = append_step(state.history, action, observation)
        except BudgetError as exc:
            raise _Halt(f"context budget: {exc}") from exc
        state.calls += 1
        turn = TurnRecord(len(self.turns), agent_id, round_index, action, observation)
        self.turns.append(turn)
        self._charge(turn.token_cost)
        return action

    def segment(self, agent_id: int, round_index: int, cap: int, inbox: Sequence[MessageRecord]) -> str:
        """Run one worker for up to ``cap`` calls; returns its round output.

        A final_answer or message_send ends the segment with its payload.
        Otherwise the output is the last observation seen.
        """
        state = self.states[agent_id]
        if not self.system.orchestration.persist_memory and round_index > 0:
            state.history = History.start(self.task.prompt, self.budget.max_context_tokens)
        output = state.output
        for _ in range(cap):
            action = self.call(agent_id, round_index, inbox)
            last = self.turns[-1].observation
            if action.kind in (ActionKind.FINAL_ANSWER, ActionKind.MESSAGE_SEND):
                output = action.payload
                break
            output = last.content or action.payload
        state.output = output
        if output:
            state.payloads.append(output)
        return output

    def finish(self, answer: str, halted: str | None) -> EpisodeTrace:
        if halted:
            self.annotations.append(halted)
        success = False
        if halted is None:
            success = bool(self.task.success_judge(answer, tuple(self.tools_used)))
        rationales = {
            aid: "\n".join(st.payloads)
            for aid, st in sorted(self.states.items())
            if st.payloads
        }
        trace = EpisodeTrace(
            system_id=self.system.system_id,
            task_id=self.task.id,
            seed=self.seed,
            topology=self.system.topology,
            benchmark=self.task.domain_label,
            turns=tuple(self.turns),
            messages=tuple(self.messages),
            total_tokens=self.tokens,
            outcome="success" if success else "failure",
            final_answer=answer,
            per_agent_rationales=rationales,
            errors=tuple(self.errors),
            annotations=tuple(self.annotations),
            agent_ids=tuple(sorted(self.system.agent_ids)),
            rounds_completed=self.rounds_completed,
        )
        return trace.check()


def _run_sas(ep: _Episode, plan: PerAgentBudget) -> str:
    worker = ep.system.workers[0].id
    answer = ep.segment(worker, 0, plan.cap(0, 0), ())
    ep.rounds_completed = 1
    return answer


def _run_independent(ep: _Episode, plan: PerAgentBudget) -> str:
    workers = ep.system.workers
    aggregator = ep.system.aggregator
    outputs = []
    for i, w in enumerate(workers):
        outputs.append((w.id, ep.segment(w.id, 0, plan.cap(i, 0), ())))
    for wid, out in outputs:
        ep.post(MessageRecord(wid, (aggregator.id,), 0, out, channel="upload"))
    ep.rounds_completed = 1
    return aggregate_outputs(ep.system.orchestration, outputs)


def _run_decentralized(ep: _Episode, plan: PerAgentBudget) -> str:
    workers = ep.system.workers
    ids = [w.id for w in workers]
    previous: list[MessageRecord] = []
    statements: list[tuple[int, str]] = []
    for rnd in range(plan.rounds):
        statements = []
        for i, wid in enumerate(ids):
            inbox = [m for m in previous if m.sender != wid]
            statements.append((wid, ep.segment(wid, rnd, plan.cap(i, rnd), inbox)))
        previous = []
        for wid, text in statements:
            msg = MessageRecord(wid, tuple(x for x in ids if x != wid), rnd, text, channel="broadcast")
            ep.post(msg)
            previous.append(msg)
        ep.rounds_completed = rnd + 1
        if ep.system.orchestration.terminate_on_consensus and rnd < plan.rounds - 1:
            if len({normalize_answer(t) for _, t in statements}) == 1:
                ep.annotations.append(f"consensus reached after round {rnd}")
                break
    return aggregate_outputs(ep.system.orchestration, statements)


def _peer_round(ep: _Episode, rnd: int, outputs: dict[int, str], peer_index: int) -> list[MessageRecord]:
    ids = [w.id for w in ep.system.workers]
    rng = random.Random(derive_seed(ep.seed, "peer", peer_index))
    exchanged = []
    for _ in range(ep.budget.m_peer_requests_per_round):
        sender, receiver = rng.sample(ids, 2)
        msg = MessageRecord(sender, (receiver,), rnd, outputs.get(sender, ""), outputs.get(receiver, ""), "peer")
        ep.post(msg)
        exchanged.append(msg)
    if exchanged:
        # one peer-synthesis call per peer round, by the round's first requester
        integrator = exchanged[0].sender
        ep.segment(integrator, rnd, 1, exchanged)
        outputs[integrator] = ep.states[integrator].output
    return exchanged


def _run_orchestrated(ep: _Episode, plan: PerAgentBudget, hybrid: bool) -> str:
    system = ep.system
    orch = system.orchestrator.id
    workers = system.workers
    slots = peer_round_slots(plan.rounds, ep.budget.p_peer_rounds) if hybrid else ()
    directive = ep.task.prompt
    outputs: dict[int, str] = {}
    peer_inbox: list[MessageRecord] = []
    answer = ""
    peer_index = 0
    for rnd in range(plan.rounds):
        exchanges = []
        for i, w in enumerate(workers):
            order = MessageRecord(orch, (w.id,), rnd, directive, channel="directive")
            inbox = [order] + [m for m in peer_inbox if w.id in m.receivers or m.sender == w.id]
            report = ep.segment(w.id, rnd, plan.cap(i, rnd), inbox)
            outputs[w.id] = report
            exchanges.append(MessageRecord(orch, (w.id,), rnd, directive, report, "directive"))
        for msg in exchanges:
            ep.post(msg)
        peer_inbox = []
        action = ep.call(orch, rnd, exchanges)
        if action.payload:
            ep.states[orch].payloads.append(action.payload)
        ep.rounds_completed = rnd + 1
        answer = action.payload
        if action.kind is ActionKind.FINAL_ANSWER and system.orchestration.orchestrator_may_stop:
            if rnd < plan.rounds - 1:
                ep.annotations.append(f"orchestrator stopped after round {rnd}")
            return answer
        if not system.orchestration.allow_override:
            answer = aggregate_outputs(OrchestrationPolicy(Aggregation.SYNTHESIS_ONLY), list(outputs.items()))
        directive = action.payload or directive
        while peer_index < len(slots) and slots[peer_index] == rnd:
            peer_inbox += _peer_round(ep, rnd, outputs, peer_index)
            peer_index += 1
    return answer


def run_episode(system: AgentSystem, task: TaskSpec, seed: int) -> EpisodeTrace:
    """Execute one episode. Backend failures yield a failed trace, never an exception.

    Configuration problems (invalid system, budget too small) raise before
    any backend is called.
    """
    system.validate()
    plan = match_budget(system.topology, system.budget)
    ep = _Episode(system, task, seed)
    runners = {
        Topology.SAS: lambda: _run_sas(ep, plan),
        Topology.INDEPENDENT: lambda: _run_independent(ep, plan),
        Topology.DECENTRALIZED: lambda: _run_decentralized(ep, plan),
        Topology.CENTRALIZED: lambda: _run_orchestrated(ep, plan, hybrid=False),
        Topology.HYBRID: lambda: _run_orchestrated(ep, plan, hybrid=True),
    }
    try:
        answer = runners[system.topology]()
    except _Halt as stop:
        logger.warning("episode %s/%s seed=%d halted: %s", system.system_id, task.id, seed, stop.reason)
        return ep.finish("", stop.reason)
    return ep.finish(answer, None)


# -- serialization ----------------------------------------------------------


def _action_to_dict(a: ActionRecord) -> dict[str, Any]:
    return {
        "kind": a.kind.value,
        "payload": a.payload,
        "tool_name": a.tool_name,
        "parameters": dict(a.parameters),
        "recipient": a.recipient,
        "token_cost": a.token_cost,
    }


def trace_to_dict(trace: EpisodeTrace) -> dict[str, Any]:
    return {
        "schema": TRACE_SCHEMA_VERSION,
        "system_id": trace.system_id,
        "task_id": trace.task_id,
        "seed": trace.seed,
        "topology": trace.topology.value,
        "benchmark": trace.benchmark,
        "outcome": trace.outcome,
        "final_answer": trace.final_answer,
        "total_tokens": trace.total_tokens,
        "rounds_completed": trace.rounds_completed,
        "agent_ids": list(trace.agent_ids),
        "turns": [
            {
                "index": t.index,
                "agent_id": t.agent_id,
                "round": t.round,
                "action": _action_to_dict(t.action),
                "observation": {
                    "content": t.observation.content,
                    "token_cost": t.observation.token_cost,
                    "is_error": t.observation.is_error,
                },
            }
            for t in trace.turns
        ],
        "messages": [
            {
                "sender": m.sender,
                "receivers": list(m.receivers),
                "round": m.round,
                "payload": m.payload,
                "reply": m.reply,
                "channel": m.channel,
                "token_cost": m.token_cost,
            }
            for m in trace.messages
        ],
        "per_agent_rationales": {str(k): v for k, v in sorted(trace.per_agent_rationales.items())},
        "errors": [dict(e) for e in trace.errors],
        "annotations": list(trace.annotations),
    }


def trace_from_dict(data: Mapping[str, Any]) -> EpisodeTrace:
    if data.get("schema") != TRACE_SCHEMA_VERSION:
        raise ValueError(f"unsupported trace schema {data.get('schema')!r}")
    turns = tuple(
        TurnRecord(
            t["index"],
            t["agent_id"],
            t["round"],
            ActionRecord(
                ActionKind(t["action"]["kind"]),
                payload=t["action"]["payload"],
                tool_name=t["action"]["tool_name"],
                parameters=t["action"]["parameters"],
                recipient=t["action"]["recipient"],
                token_cost=t["action"]["token_cost"],
            ),
            ObservationRecord(**t["observation"]),
        )
        for t in data["turns"]
    )
    messages = tuple(
        MessageRecord(
            m["sender"], tuple(m["receivers"]), m["round"], m["payload"], m["reply"], m["channel"], m["token_cost"]
        )
        for m in data["messages"]
    )
    return EpisodeTrace(
        system_id=data["system_id"],
        task_id=data["task_id"],
        seed=data["seed"],
        topology=Topology(data["topology"]),
        benchmark=data["benchmark"],
        turns=turns,
        messages=messages,
        total_tokens=data["total_tokens"],
        outcome=data["outcome"],
        final_answer=data["final_answer"],
        per_agent_rationales={int(k): v for k, v in data["per_agent_rationales"].items()},
        errors=tuple(data["errors"]),
        annotations=tuple(data["annotations"]),
        agent_ids=tuple(data["agent_ids"]),
        rounds_completed=data["rounds_completed"],
    ).check()
