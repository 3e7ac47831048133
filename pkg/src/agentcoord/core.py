"""Domain types shared across the package, plus history and budget primitives.

Everything here is an immutable value. Operations return new objects and
never mutate their inputs, so values can be shared freely between threads.
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Mapping, Protocol, Sequence


class ConfigurationError(ValueError):
    """An agent system, task or budget violates its structural invariants."""


class BudgetError(ValueError):
    """A budget cannot accommodate the requested work."""


class BackendError(RuntimeError):
    """An agent backend could not produce an action (transport, quota, parse)."""


class Topology(str, enum.Enum):
    SAS = "sas"
    INDEPENDENT = "independent"
    DECENTRALIZED = "decentralized"
    CENTRALIZED = "centralized"
    HYBRID = "hybrid"

    @property
    def label(self) -> str:
        return "SAS" if self is Topology.SAS else self.value.capitalize()

    @classmethod
    def parse(cls, value: str | Topology) -> Topology:
        if isinstance(value, Topology):
            return value
        try:
            return cls(value.strip().lower())
        except ValueError:
            raise ConfigurationError(f"unknown topology {value!r}") from None


class Role(str, enum.Enum):
    WORKER = "worker"
    ORCHESTRATOR = "orchestrator"
    AGGREGATOR = "aggregator"


class ActionKind(str, enum.Enum):
    TOOL_CALL = "tool_call"
    MESSAGE_SEND = "message_send"
    FINAL_ANSWER = "final_answer"


class Aggregation(str, enum.Enum):
    SYNTHESIS_ONLY = "synthesis_only"
    HIERARCHICAL = "hierarchical"
    CONSENSUS = "consensus"


# Tool name used for model output that could not be parsed into an action.
NOOP_TOOL = "__noop__"


# -- tokenization ----------------------------------------------------------

Tokenizer = Callable[[str], int]


def whitespace_tokens(text: str) -> int:
    """Default token counter: number of whitespace-delimited tokens."""
    return len(text.split())


def derive_seed(*parts: Any) -> int:
    """Stable 63-bit seed from arbitrary parts (independent of PYTHONHASHSEED)."""
    digest = hashlib.blake2b(repr(parts).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1


# -- actions and observations ----------------------------------------------


@dataclass(frozen=True)
class ActionRecord:
    kind: ActionKind
    payload: str = ""
    tool_name: str | None = None
    parameters: Mapping[str, str] = field(default_factory=dict)
    recipient: int | None = None
    token_cost: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ActionKind(self.kind))
        object.__setattr__(self, "parameters", dict(self.parameters))
        if self.kind is ActionKind.TOOL_CALL and not self.tool_name:
            raise ConfigurationError("tool_call action requires a tool_name")
        if self.kind is ActionKind.MESSAGE_SEND and self.recipient is None:
            raise ConfigurationError("message_send action requires a recipient id")
        if self.token_cost is None:
            object.__setattr__(self, "token_cost", whitespace_tokens(self.render()))
        elif self.token_cost < 0:
            raise ConfigurationError("token_cost must be nonnegative")

    def render(self) -> str:
        if self.kind is ActionKind.TOOL_CALL:
            args = ", ".join(f"{k}={v}" for k, v in sorted(self.parameters.items()))
            text = f"{self.tool_name}({args})"
            return f"{text} {self.payload}".strip()
        if self.kind is ActionKind.MESSAGE_SEND:
            return f"SEND {self.recipient}: {self.payload}"
        return f"FINAL: {self.payload}"

    def with_tokenizer(self, tokenizer: Tokenizer) -> ActionRecord:
        return replace(self, token_cost=tokenizer(self.render()))

    @classmethod
    def tool(cls, name: str, payload: str = "", **parameters: str) -> ActionRecord:
        return cls(ActionKind.TOOL_CALL, payload=payload, tool_name=name, parameters=parameters)

    @classmethod
    def send(cls, recipient: int, payload: str) -> ActionRecord:
        return cls(ActionKind.MESSAGE_SEND, payload=payload, recipient=recipient)

    @classmethod
    def final(cls, payload: str) -> ActionRecord:
        return cls(ActionKind.FINAL_ANSWER, payload=payload)


@dataclass(frozen=True)
class ObservationRecord:
    content: str = ""
    token_cost: int | None = None
    is_error: bool = False

    def __post_init__(self) -> None:
        if self.token_cost is None:
            object.__setattr__(self, "token_cost", whitespace_tokens(self.content))
        elif self.token_cost < 0:
            raise ConfigurationError("token_cost must be nonnegative")


@dataclass(frozen=True)
class Step:
    action: ActionRecord
    observation: ObservationRecord

    @property
    def token_cost(self) -> int:
        return self.action.token_cost + self.observation.token_cost


class AgentBackend(Protocol):
    """The per-agent decision function: history and inbox in, one action out."""

    def step(self, history: "History", inbox: Sequence[Any], seed: int) -> ActionRecord: ...


# -- history ----------------------------------------------------------------


@dataclass(frozen=True)
class History:
    """An agent's action/observation history under a context-window cap.

    ``seed`` is the initial task specification; it is never evicted.
    ``appended`` counts every step ever appended, including evicted ones, so
    replay backends can index their scripts even after truncation.
    """

    max_tokens: int
    seed: ObservationRecord | None = None
    steps: tuple[Step, ...] = ()
    token_count: int = 0
    appended: int = 0

    def __post_init__(self) -> None:
        if self.max_tokens <= 0:
            raise ConfigurationError("max_tokens must be positive")
        expected = (self.seed.token_cost if self.seed else 0) + sum(s.token_cost for s in self.steps)
        if self.token_count != expected:
            raise ConfigurationError("token_count does not match step costs")
        if self.token_count > self.max_tokens:
            raise BudgetError("history exceeds max_tokens")

    @classmethod
    def empty(cls, max_tokens: int) -> History:
        return cls(max_tokens=max_tokens)

    @classmethod
    def start(cls, task_prompt: str, max_tokens: int, tokenizer: Tokenizer = whitespace_tokens) -> History:
        seed = ObservationRecord(task_prompt, token_cost=tokenizer(task_prompt))
        if seed.token_cost > max_tokens:
            raise BudgetError("task specification exceeds max_tokens")
        return cls(max_tokens=max_tokens, seed=seed, token_count=seed.token_cost)

    def __len__(self) -> int:
        return len(self.steps)


def append_step(history: History, action: ActionRecord, observation: ObservationRecord) -> History:
    """Return ``history`` with one more step, evicting the oldest steps if needed.

    Whole steps are evicted oldest-first; the seed step always survives.
    Raises BudgetError when the new step can never fit.
    """
    step = Step(action, observation)
    seed_cost = history.seed.token_cost if history.seed else 0
    if step.token_cost > history.max_tokens or seed_cost + step.token_cost > history.max_tokens:
        raise BudgetError(
            f"step exceeds budget: {step.token_cost} tokens vs max_tokens={history.max_tokens}"
        )
    steps = list(history.steps) + [step]
    total = history.token_count + step.token_cost
    drop = 0
    while total > history.max_tokens:
        total -= steps[drop].token_cost
        drop += 1
    return History(
        max_tokens=history.max_tokens,
        seed=history.seed,
        steps=tuple(steps[drop:]),
        token_count=total,
        appended=history.appended + 1,
    )


# -- budgets ----------------------------------------------------------------


@dataclass(frozen=True)
class BudgetConfig:
    """Iteration, round and token budgets for one agent system.

    ``k_max_iterations`` is the total worker-iteration budget matched across
    topologies: a single agent receives all of it, multi-agent teams split it
    over agents and rounds (see :func:`match_budget`).
    """

    k_max_iterations: int = 10
    n_agents: int = 3
    r_orchestrator_rounds: int = 5
    d_debate_rounds: int = 3
    p_peer_rounds: int = 1
    m_peer_requests_per_round: int = 2
    total_token_budget: int = 1_000_000
    max_context_tokens: int = 8192

    def __post_init__(self) -> None:
        positive = {
            "k_max_iterations": self.k_max_iterations,
            "n_agents": self.n_agents,
            "r_orchestrator_rounds": self.r_orchestrator_rounds,
            "d_debate_rounds": self.d_debate_rounds,
            "total_token_budget": self.total_token_budget,
            "max_context_tokens": self.max_context_tokens,
        }
        for name, value in positive.items():
            if int(value) != value or value < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")
        for name, value in {
            "p_peer_rounds": self.p_peer_rounds,
            "m_peer_requests_per_round": self.m_peer_requests_per_round,
        }.items():
            if int(value) != value or value < 0:
                raise ConfigurationError(f"{name} must be a nonnegative integer, got {value!r}")


def coordination_rounds(topology: Topology, budget: BudgetConfig) -> int:
    """Number of sequential coordination rounds the topology runs."""
    if topology is Topology.DECENTRALIZED:
        return budget.d_debate_rounds
    if topology in (Topology.CENTRALIZED, Topology.HYBRID):
        return budget.r_orchestrator_rounds
    return 1


def llm_call_formula(topology: Topology, budget: BudgetConfig, k: int) -> int:
    """Scheduled LLM calls for ``k`` iterations per agent (per round).

    SAS k; Independent n*k + 1; Decentralized d*n*k + 1;
    Centralized r*n*k + r; Hybrid r*n*k + r + p.
    """
    n, r, d, p = budget.n_agents, budget.r_orchestrator_rounds, budget.d_debate_rounds, budget.p_peer_rounds
    if topology is Topology.SAS:
        return k
    if topology is Topology.INDEPENDENT:
        return n * k + 1
    if topology is Topology.DECENTRALIZED:
        return d * n * k + 1
    if topology is Topology.CENTRALIZED:
        return r * n * k + r
    return r * n * k + r + p


@dataclass(frozen=True)
class PerAgentBudget:
    """Per-worker iteration caps produced by :func:`match_budget`.

    Each worker may take ``iterations_per_round`` steps in every round, plus
    ``bonus[i]`` extra steps in the final round (the integer remainder of the
    matched total, spread over workers in id order).
    """

    topology: Topology
    n_workers: int
    rounds: int
    iterations_per_round: int
    bonus: tuple[int, ...]

    def cap(self, worker_index: int, round_index: int) -> int:
        extra = self.bonus[worker_index] if round_index == self.rounds - 1 else 0
        return self.iterations_per_round + extra

    def worker_calls(self) -> int:
        return self.rounds * self.n_workers * self.iterations_per_round + sum(self.bonus)

    def coordination_calls(self, budget: BudgetConfig) -> int:
        return llm_call_formula(self.topology, budget, 0)

    def scheduled_calls(self, budget: BudgetConfig) -> int:
        return self.worker_calls() + self.coordination_calls(budget)


def match_budget(topology: Topology, budget: BudgetConfig) -> PerAgentBudget:
    """Split the matched iteration total over the topology's agents and rounds.

    Worker calls sum to exactly ``budget.k_max_iterations`` for every topology;
    the remaining difference between topologies is the coordination-call term
    of the call formula (aggregator, orchestrator or peer calls).
    """
    topology = Topology.parse(topology)
    n = 1 if topology is Topology.SAS else budget.n_agents
    rounds = coordination_rounds(topology, budget)
    total = budget.k_max_iterations
    base = total // (n * rounds)
    if base < 1:
        raise BudgetError(
            f"iteration budget {total} too small for {n} agents x {rounds} rounds ({topology.label})"
        )
    remainder = total - base * n * rounds
    bonus = tuple(remainder // n + (1 if i < remainder % n else 0) for i in range(n))
    return PerAgentBudget(topology, n, rounds, base, bonus)


# -- tasks ------------------------------------------------------------------


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str = ""
    run: Callable[[Mapping[str, str]], str] | None = field(default=None, compare=False)

    def __call__(self, parameters: Mapping[str, str]) -> str:
        if self.run is None:
            return f"{self.name} ok"
        return self.run(parameters)


class Judge(Protocol):
    required_tools: tuple[str, ...]

    def __call__(self, answer: str, trace_tools: Sequence[str] = ()) -> bool: ...


@dataclass(frozen=True)
class GroundTruth:
    """Reference data used to classify errors in agent outputs."""

    numeric: float | None = None
    required_entities: tuple[str, ...] = ()


@dataclass(frozen=True)
class TaskSpec:
    id: str
    prompt: str
    tools: tuple[ToolSpec, ...]
    success_judge: Any
    domain_label: str = "default"
    tool_count: int | None = None
    ground_truth: GroundTruth | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "tools", tuple(self.tools))
        if self.tool_count is None:
            object.__setattr__(self, "tool_count", len(self.tools))
        if self.tool_count != len(self.tools) or self.tool_count < 1:
            raise ConfigurationError(
                f"task {self.id}: tool_count must equal the number of tools and be >= 1"
            )
        names = {t.name for t in self.tools}
        if len(names) != len(self.tools):
            raise ConfigurationError(f"task {self.id}: duplicate tool names")
        missing = [t for t in getattr(self.success_judge, "required_tools", ()) if t not in names]
        if missing:
            raise ConfigurationError(f"task {self.id}: judge references unknown tools {missing}")

    def tool(self, name: str) -> ToolSpec | None:
        for t in self.tools:
            if t.name == name:
                return t
        return None


# -- agent systems ----------------------------------------------------------


@dataclass(frozen=True)
class OrchestrationPolicy:
    aggregation: Aggregation
    allow_override: bool = True
    persist_memory: bool = True
    terminate_on_consensus: bool = True
    orchestrator_may_stop: bool = True

    @classmethod
    def default_for(cls, topology: Topology) -> OrchestrationPolicy:
        topology = Topology.parse(topology)
        if topology is Topology.DECENTRALIZED:
            return cls(Aggregation.CONSENSUS)
        if topology in (Topology.CENTRALIZED, Topology.HYBRID):
            return cls(Aggregation.HIERARCHICAL)
        return cls(Aggregation.SYNTHESIS_ONLY, allow_override=False)


@dataclass(frozen=True)
class AgentSpec:
    id: int
    role: Role
    backend: Any = field(default=None, compare=False)
    model_label: str = "scripted"
    intelligence_index: float = 50.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "role", Role(self.role))
        if not math.isfinite(self.intelligence_index) or not 0 <= self.intelligence_index <= 100:
            raise ConfigurationError(f"agent {self.id}: intelligence_index must be in [0, 100]")


@dataclass(frozen=True)
class AgentSystem:
    """An agent set, its communication topology, orchestration policy and budget."""

    agents: tuple[AgentSpec, ...]
    topology: Topology
    orchestration: OrchestrationPolicy | None = None
    budget: BudgetConfig = field(default_factory=BudgetConfig)
    system_id: str = "system"

    def __post_init__(self) -> None:
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "topology", Topology.parse(self.topology))
        if self.orchestration is None:
            object.__setattr__(self, "orchestration", OrchestrationPolicy.default_for(self.topology))

    @property
    def workers(self) -> tuple[AgentSpec, ...]:
        return tuple(sorted((a for a in self.agents if a.role is Role.WORKER), key=lambda a: a.id))

    def _single(self, role: Role) -> AgentSpec | None:
        found = [a for a in self.agents if a.role is role]
        return found[0] if found else None

    @property
    def orchestrator(self) -> AgentSpec | None:
        return self._single(Role.ORCHESTRATOR)

    @property
    def aggregator(self) -> AgentSpec | None:
        return self._single(Role.AGGREGATOR)

    @property
    def agent_ids(self) -> frozenset[int]:
        return frozenset(a.id for a in self.agents)

    def validate(self) -> AgentSystem:
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ConfigurationError(f"{self.system_id}: agent ids must be unique")
        roles = [a.role for a in self.agents]
        n_workers = roles.count(Role.WORKER)
        n_orch = roles.count(Role.ORCHESTRATOR)
        n_agg = roles.count(Role.AGGREGATOR)
        top = self.topology
        if top is Topology.SAS:
            if len(self.agents) != 1 or n_workers != 1:
                raise ConfigurationError(f"{self.system_id}: SAS requires exactly one worker agent")
        else:
            if n_workers < 2:
                raise ConfigurationError(f"{self.system_id}: {top.label} requires at least 2 workers")
            if n_workers != self.budget.n_agents:
                raise ConfigurationError(
                    f"{self.system_id}: budget.n_agents={self.budget.n_agents} but {n_workers} workers"
                )
        wants_orch = top in (Topology.CENTRALIZED, Topology.HYBRID)
        if wants_orch and n_orch != 1:
            raise ConfigurationError(f"{self.system_id}: {top.label} requires exactly one orchestrator")
        if not wants_orch and n_orch:
            raise ConfigurationError(f"{self.system_id}: {top.label} must not have an orchestrator")
        if top is Topology.INDEPENDENT and n_agg != 1:
            raise ConfigurationError(f"{self.system_id}: Independent requires exactly one aggregator")
        if top is not Topology.INDEPENDENT and n_agg:
            raise ConfigurationError(f"{self.system_id}: only Independent systems use an aggregator")
        for a in self.agents:
            if a.role is not Role.AGGREGATOR and a.backend is None:
                raise ConfigurationError(f"{self.system_id}: agent {a.id} has no backend")
        return self

    @classmethod
    def build(
        cls,
        topology: Topology | str,
        workers: Sequence[Any],
        *,
        orchestrator: Any = None,
        budget: BudgetConfig | None = None,
        orchestration: OrchestrationPolicy | None = None,
        system_id: str | None = None,
        model_label: str = "scripted",
        intelligence_index: float = 50.0,
    ) -> AgentSystem:
        """Assemble a system from worker backends; ids are assigned 0..n-1.

        Orchestrators and aggregators get the next free id.
        """
        topology = Topology.parse(topology)
        agents = [
            AgentSpec(i, Role.WORKER, b, model_label, intelligence_index) for i, b in enumerate(workers)
        ]
        if orchestrator is not None:
            agents.append(AgentSpec(len(workers), Role.ORCHESTRATOR, orchestrator, model_label, intelligence_index))
        elif topology is Topology.INDEPENDENT:
            agents.append(AgentSpec(len(workers), Role.AGGREGATOR, None, "synthesis", intelligence_index))
        if budget is None:
            budget = BudgetConfig(n_agents=max(len(workers), 1))
        return cls(
            tuple(agents), topology, orchestration, budget, system_id or topology.value
        ).validate()
