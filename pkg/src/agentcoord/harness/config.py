"""Campaign configuration schema (YAML or JSON) and construction of runnable objects."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..agents import (
    AllLinesJudge,
    ContainsJudge,
    ExactJudge,
    FailingAgent,
    LlmAgent,
    LlmAgentConfig,
    NumericJudge,
    ScriptedAgent,
    StochasticAgent,
    parse_response,
    toy_toolset,
)
from ..core import (
    AgentSystem,
    BudgetConfig,
    ConfigurationError,
    GroundTruth,
    OrchestrationPolicy,
    TaskSpec,
    Topology,
)


class ConfigError(ConfigurationError):
    """Schema violation in a configuration file; ``fields`` lists offending paths."""

    def __init__(self, message: str, fields: list[str] | None = None):
        super().__init__(message)
        self.fields = fields or []


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class AgentConfig(_Strict):
    backend: Literal["scripted", "stochastic", "llm", "failing"]
    model_label: str = "scripted"
    intelligence_index: float = Field(50.0, ge=0, le=100)
    # scripted: each entry uses the response grammar, e.g. "echo(text=hi)" or "FINAL: 4"
    script: list[str] = Field(default_factory=list)
    error_injections: dict[int, str] = Field(default_factory=dict)
    cycle: bool = False
    # stochastic
    error_rate: float = Field(0.0, ge=0, le=1)
    answer_pool: list[str] = Field(default_factory=list)
    seed: int = 0
    # llm
    endpoint: str | None = None
    temperature: float = Field(0.0, ge=0)
    request_timeout: float = Field(60.0, gt=0)
    max_retries: int = Field(3, ge=0)
    key_env: str = "AGENTCOORD_API_KEYS"

    @model_validator(mode="after")
    def _backend_fields(self) -> AgentConfig:
        if self.backend == "scripted" and not self.script:
            raise ValueError("scripted backend needs a nonempty script")
        if self.backend == "stochastic" and not self.answer_pool:
            raise ValueError("stochastic backend needs an answer_pool")
        if self.backend == "llm" and not self.endpoint:
            raise ValueError("llm backend needs an endpoint")
        return self

    def build(self) -> Any:
        if self.backend == "scripted":
            return ScriptedAgent(tuple(parse_response(s) for s in self.script), self.error_injections, self.cycle)
        if self.backend == "stochastic":
            return StochasticAgent(self.error_rate, tuple(self.answer_pool), self.seed)
        if self.backend == "failing":
            return FailingAgent()
        return LlmAgent(
            LlmAgentConfig(
                endpoint=self.endpoint or "",
                model_label=self.model_label,
                temperature=self.temperature,
                request_timeout=self.request_timeout,
                max_retries=self.max_retries,
                key_env=self.key_env,
            )
        )


class BudgetModel(_Strict):
    k_max_iterations: int = Field(10, ge=1)
    n_agents: int | None = Field(None, ge=1)
    r_orchestrator_rounds: int = Field(5, ge=1)
    d_debate_rounds: int = Field(3, ge=1)
    p_peer_rounds: int = Field(1, ge=0)
    m_peer_requests_per_round: int = Field(2, ge=0)
    total_token_budget: int = Field(1_000_000, ge=1)
    max_context_tokens: int = Field(8192, ge=1)


class PolicyModel(_Strict):
    allow_override: bool | None = None
    persist_memory: bool | None = None
    terminate_on_consensus: bool | None = None
    orchestrator_may_stop: bool | None = None


class SystemConfig(_Strict):
    id: str = Field(min_length=1)
    topology: Topology
    workers: list[AgentConfig] = Field(min_length=1)
    orchestrator: AgentConfig | None = None
    budget: BudgetModel = BudgetModel()
    policy: PolicyModel = PolicyModel()

    @field_validator("topology", mode="before")
    @classmethod
    def _lower(cls, v: Any) -> Any:
        return v.strip().lower() if isinstance(v, str) else v

    def build(self) -> AgentSystem:
        budget = BudgetConfig(**{**self.budget.model_dump(), "n_agents": self.budget.n_agents or len(self.workers)})
        policy = OrchestrationPolicy.default_for(self.topology)
        overrides = {k: v for k, v in self.policy.model_dump().items() if v is not None}
        if overrides:
            policy = OrchestrationPolicy(**{**policy.__dict__, **overrides})
        label = self.workers[0].model_label
        system = AgentSystem.build(
            self.topology,
            [w.build() for w in self.workers],
            orchestrator=self.orchestrator.build() if self.orchestrator else None,
            budget=budget,
            orchestration=policy,
            system_id=self.id,
            model_label=label,
            intelligence_index=self.workers[0].intelligence_index,
        )
        return system


class JudgeModel(_Strict):
    kind: Literal["exact", "contains", "numeric", "all_lines"]
    expected: str
    rel_tol: float = Field(0.05, ge=0)
    required_tools: list[str] = Field(default_factory=list)

    def build(self) -> Any:
        tools = tuple(self.required_tools)
        if self.kind == "exact":
            return ExactJudge(self.expected, tools)
        if self.kind == "contains":
            return ContainsJudge(self.expected, tools)
        if self.kind == "all_lines":
            return AllLinesJudge(self.expected, tools)
        return NumericJudge(float(self.expected), self.rel_tol, tools)


class TaskConfig(_Strict):
    id: str = Field(min_length=1)
    prompt: str
    tools: list[str] = Field(default_factory=lambda: ["echo", "calculator"], min_length=1)
    judge: JudgeModel
    benchmark: str = "default"
    truth_numeric: float | None = None
    required_entities: list[str] = Field(default_factory=list)

    def build(self) -> TaskSpec:
        available = {t.name: t for t in toy_toolset()}
        unknown = [t for t in self.tools if t not in available]
        if unknown:
            raise ConfigError(f"task {self.id}: unknown tools {unknown}", [f"tasks.{self.id}.tools"])
        truth = None
        if self.truth_numeric is not None or self.required_entities:
            truth = GroundTruth(self.truth_numeric, tuple(self.required_entities))
        return TaskSpec(
            id=self.id,
            prompt=self.prompt,
            tools=tuple(available[t] for t in self.tools),
            success_judge=self.judge.build(),
            domain_label=self.benchmark,
            ground_truth=truth,
        )


class CampaignConfig(_Strict):
    systems: list[SystemConfig] = Field(min_length=1)
    tasks: list[TaskConfig] = Field(min_length=1)
    seeds: list[int] = Field(min_length=1)
    output_dir: str = "runs"
    parallelism: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _unique(self) -> CampaignConfig:
        for name, values in (
            ("systems", [s.id for s in self.systems]),
            ("tasks", [t.id for t in self.tasks]),
            ("seeds", self.seeds),
        ):
            dupes = sorted({str(v) for v in values if values.count(v) > 1})
            if dupes:
                raise ValueError(f"duplicate run key component in {name}: {', '.join(dupes)}")
        return self

    def grid(self) -> list[tuple[SystemConfig, TaskConfig, int]]:
        return [(s, t, seed) for s in self.systems for t in self.tasks for seed in self.seeds]


def parse_config(data: Any) -> CampaignConfig:
    try:
        return CampaignConfig.model_validate(data)
    except ValidationError as exc:
        fields = [".".join(str(p) for p in err["loc"]) or "<root>" for err in exc.errors()]
        details = "; ".join(f"{f}: {err['msg']}" for f, err in zip(fields, exc.errors()))
        raise ConfigError(f"invalid campaign config: {details}", fields) from None


def load_config(path: str | Path) -> CampaignConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return parse_config(data)


def demo_config(output_dir: str = "runs") -> CampaignConfig:
    """Scripted demo: every topology on two toy tasks, three seeds each."""
    solve = ["calculator(expression=6*7)", "echo(text=checking)", "FINAL: 42"]
    worker = {"backend": "scripted", "script": solve}
    orch = {"backend": "scripted", "script": ["SEND 0: refine the result", "SEND 0: confirm 42", "FINAL: 42"]}
    budget = {"k_max_iterations": 9, "r_orchestrator_rounds": 3, "d_debate_rounds": 3}
    systems = [{"id": "sas", "topology": "sas", "workers": [worker], "budget": budget}]
    for top in ("independent", "decentralized", "centralized", "hybrid"):
        system = {"id": top, "topology": top, "workers": [worker] * 3, "budget": budget}
        if top in ("centralized", "hybrid"):
            system["orchestrator"] = orch
        systems.append(system)
    tasks = [
        {"id": "multiply", "prompt": "What is 6 times 7?", "judge": {"kind": "contains", "expected": "42"},
         "benchmark": "arithmetic", "truth_numeric": 42},
        {"id": "exact", "prompt": "Answer with the number 42.", "judge": {"kind": "exact", "expected": "42"},
         "benchmark": "recall"},
    ]
    return parse_config(
        {"systems": systems, "tasks": tasks, "seeds": [0, 1, 2], "output_dir": output_dir, "parallelism": 2}
    )
