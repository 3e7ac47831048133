"""Agent backends: scripted replay, seeded stochastic answerers, and an HTTP LLM adapter."""

from __future__ import annotations

import ast
import logging
import operator
import os
import random
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import httpx

from .core import (
    ActionKind,
    ActionRecord,
    AgentBackend,
    BackendError,
    ConfigurationError,
    NOOP_TOOL,
    History,
    ToolSpec,
    derive_seed,
)

logger = logging.getLogger(__name__)


def agent_step(backend: AgentBackend, history: History, inbox: Sequence[Any], seed: int) -> ActionRecord:
    return backend.step(history, inbox, seed)


# -- deterministic backends -------------------------------------------------


@dataclass(frozen=True)
class ScriptedAgent:
    """Replays a fixed action list, indexed by how many steps the agent has taken.

    ``error_injections`` maps a turn index to a replacement payload. Once the
    script runs out the agent answers with an empty final_answer, unless
    ``cycle`` is set.
    """

    script: tuple[ActionRecord, ...]
    error_injections: Mapping[int, str] = field(default_factory=dict)
    cycle: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "script", tuple(self.script))
        object.__setattr__(self, "error_injections", dict(self.error_injections))
        if not self.script:
            raise ConfigurationError("script must be nonempty")

    def step(self, history: History, inbox: Sequence[Any], seed: int) -> ActionRecord:
        idx = history.appended
        if idx >= len(self.script) and not self.cycle:
            return ActionRecord.final("")
        action = self.script[idx % len(self.script)]
        if idx in self.error_injections:
            action = ActionRecord(
                action.kind,
                payload=self.error_injections[idx],
                tool_name=action.tool_name,
                parameters=action.parameters,
                recipient=action.recipient,
            )
        return action

    @classmethod
    def answering(cls, answer: str, tool_calls: int = 0, tool: str = "echo") -> ScriptedAgent:
        """A script of ``tool_calls`` echo calls followed by a final answer."""
        steps = [ActionRecord.tool(tool, text=f"step {i}") for i in range(tool_calls)]
        return cls(tuple(steps) + (ActionRecord.final(answer),))


@dataclass(frozen=True)
class StochasticAgent:
    """Answers ``answer_pool[0]`` (the correct answer) or, with probability
    ``base_error_rate``, a corruption drawn from the rest of the pool."""

    base_error_rate: float
    answer_pool: tuple[str, ...]
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "answer_pool", tuple(self.answer_pool))
        if not 0.0 <= self.base_error_rate <= 1.0:
            raise ConfigurationError("base_error_rate must lie in [0, 1]")
        if not self.answer_pool:
            raise ConfigurationError("answer_pool must be nonempty")

    def draw(self, seed: int, turn: int) -> tuple[str, bool]:
        rng = random.Random(derive_seed(self.seed, seed, turn))
        if rng.random() < self.base_error_rate:
            wrong = self.answer_pool[1:] or (f"not {self.answer_pool[0]}",)
            return rng.choice(wrong), True
        return self.answer_pool[0], False

    def step(self, history: History, inbox: Sequence[Any], seed: int) -> ActionRecord:
        answer, _ = self.draw(seed, history.appended)
        return ActionRecord.final(answer)


@dataclass(frozen=True)
class FailingAgent:
    """Always raises; used to exercise failure isolation."""

    message: str = "backend unavailable"

    def step(self, history: History, inbox: Sequence[Any], seed: int) -> ActionRecord:
        raise BackendError(self.message)


# -- response parsing -------------------------------------------------------

_SEND = re.compile(r"^SEND\s+(-?\d+)\s*:\s*(.*)$", re.IGNORECASE | re.DOTALL)
_FINAL = re.compile(r"^FINAL\s*:\s*(.*)$", re.IGNORECASE | re.DOTALL)
_CALL = re.compile(r"^([A-Za-z_][\w.-]*)\((.*)\)\s*$", re.DOTALL)


def parse_response(text: str) -> ActionRecord:
    """Translate model text into an action.

    ``FINAL: answer``, ``SEND 2: text`` and ``tool(key=value, ...)`` are
    recognised; anything else becomes a no-op tool call carrying the raw text.
    """
    text = text.strip()
    if m := _FINAL.match(text):
        return ActionRecord.final(m.group(1).strip())
    if m := _SEND.match(text):
        return ActionRecord.send(int(m.group(1)), m.group(2).strip())
    if m := _CALL.match(text):
        params = {}
        for part in filter(None, (p.strip() for p in m.group(2).split(","))):
            key, sep, value = part.partition("=")
            if not sep or not key.strip().isidentifier():
                break
            params[key.strip()] = value.strip().strip("'\"")
        else:
            return ActionRecord.tool(m.group(1), **params)
    return ActionRecord(ActionKind.TOOL_CALL, payload=text, tool_name=NOOP_TOOL)


# -- LLM service adapter ----------------------------------------------------


@dataclass(frozen=True)
class LlmAgentConfig:
    endpoint: str
    model_label: str
    temperature: float = 0.0
    request_timeout: float = 60.0
    max_retries: int = 3
    api_key_ring: tuple[str, ...] = ()
    key_env: str = "AGENTCOORD_API_KEYS"
    backoff_seconds: float = 0.5
    system_prompt: str = (
        "Respond with exactly one action: tool(key=value, ...) to call a tool, "
        "SEND <agent id>: <text> to message an agent, or FINAL: <answer>."
    )

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ConfigurationError("temperature must be >= 0")
        if self.max_retries < 0:
            raise ConfigurationError("max_retries must be >= 0")
        if not self.endpoint.startswith(("http://", "https://")):
            raise ConfigurationError(f"endpoint must be an http(s) URL: {self.endpoint!r}")

    def keys(self) -> tuple[str, ...]:
        if self.api_key_ring:
            return self.api_key_ring
        raw = os.environ.get(self.key_env, "")
        return tuple(k.strip() for k in raw.split(",") if k.strip())


class KeyRing:
    """Round-robin API keys; each key has a lock so one key serves one request at a time."""

    def __init__(self, keys: Sequence[str]):
        self._keys = list(keys) or [""]
        self._locks = [threading.Lock() for _ in self._keys]
        self._cursor = 0
        self._guard = threading.Lock()

    def __len__(self) -> int:
        return len(self._keys)

    def current(self) -> int:
        with self._guard:
            return self._cursor

    def rotate(self, failed: int) -> int:
        """Advance past ``failed`` (no-op if another thread already rotated)."""
        with self._guard:
            if self._cursor == failed:
                self._cursor = (failed + 1) % len(self._keys)
            return self._cursor

    def key(self, index: int) -> str:
        return self._keys[index]

    def lock(self, index: int) -> threading.Lock:
        return self._locks[index]


def _is_quota_error(response: httpx.Response) -> bool:
    if response.status_code == 429:
        return True
    return response.status_code in (402, 403) and "quota" in response.text.lower()


class LlmAgent:
    """Chat-completion backend. The provider format is the common
    ``{"model", "messages", "temperature"}`` request with the reply text at
    ``choices[0].message.content``."""

    def __init__(
        self,
        config: LlmAgentConfig,
        *,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config
        self.ring = KeyRing(config.keys())
        self._client = httpx.Client(transport=transport, timeout=config.request_timeout)
        self._sleep = sleep

    def close(self) -> None:
        self._client.close()

    def render_messages(self, history: History, inbox: Sequence[Any]) -> list[dict[str, str]]:
        messages = [{"role": "system", "content": self.config.system_prompt}]
        if history.seed is not None:
            messages.append({"role": "user", "content": history.seed.content})
        for s in history.steps:
            messages.append({"role": "assistant", "content": s.action.render()})
            messages.append({"role": "user", "content": f"Observation: {s.observation.content}"})
        for m in inbox:
            text = f"Message from agent {m.sender}: {m.payload}"
            if m.reply:
                text += f"\nReply: {m.reply}"
            messages.append({"role": "user", "content": text})
        return messages

    def complete(self, messages: list[dict[str, str]], seed: int) -> str:
        body = {
            "model": self.config.model_label,
            "messages": messages,
            "temperature": self.config.temperature,
            "seed": seed % (2**31),
        }
        last_error = "no attempt made"
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                self._sleep(self.config.backoff_seconds * 2 ** (attempt - 1))
            idx = self.ring.current()
            headers = {}
            if self.ring.key(idx):
                headers["Authorization"] = f"Bearer {self.ring.key(idx)}"
            try:
                with self.ring.lock(idx):
                    response = self._client.post(self.config.endpoint, json=body, headers=headers)
            except httpx.HTTPError as exc:
                last_error = f"transport: {exc}"
                continue
            if _is_quota_error(response):
                last_error = f"quota exhausted on key {idx}"
                self.ring.rotate(idx)
                logger.info("rotating API key after %d response", response.status_code)
                continue
            if response.status_code >= 500:
                last_error = f"server error {response.status_code}"
                continue
            if response.status_code >= 400:
                raise BackendError(f"request rejected ({response.status_code}): {response.text[:200]}")
            try:
                return response.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise BackendError(f"malformed provider response: {exc}") from exc
        raise BackendError(f"LLM call failed after {self.config.max_retries + 1} attempts: {last_error}")

    def step(self, history: History, inbox: Sequence[Any], seed: int) -> ActionRecord:
        return parse_response(self.complete(self.render_messages(history, inbox), seed))


# -- toy tools --------------------------------------------------------------

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
    ast.Mod: operator.mod,
}
_UNARY = {ast.USub: operator.neg, ast.UAdd: operator.pos}


def safe_arithmetic(expression: str) -> float:
    """Evaluate +, -, *, /, %, ** over numeric literals without eval()."""

    def walk(node: ast.AST) -> float:
        if isinstance(node, ast.Expression):
            return walk(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return node.value
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            left, right = walk(node.left), walk(node.right)
            if isinstance(node.op, ast.Pow) and abs(right) > 64:
                raise ValueError("exponent too large")
            return _BINOPS[type(node.op)](left, right)
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            return _UNARY[type(node.op)](walk(node.operand))
        raise ValueError(f"unsupported expression element {type(node).__name__}")

    return walk(ast.parse(expression, mode="eval"))


def _calculate(params: Mapping[str, str]) -> str:
    value = safe_arithmetic(params.get("expression", ""))
    return f"{value:g}"


def _echo(params: Mapping[str, str]) -> str:
    return params.get("text", "")


ECHO = ToolSpec("echo", "Return the text argument unchanged.", _echo)
CALCULATOR = ToolSpec("calculator", "Evaluate an arithmetic expression.", _calculate)


def toy_toolset() -> tuple[ToolSpec, ...]:
    return (ECHO, CALCULATOR)


# -- judges -----------------------------------------------------------------


def _norm(text: str) -> str:
    return " ".join(text.lower().split()).rstrip(".")


@dataclass(frozen=True)
class ExactJudge:
    expected: str
    required_tools: tuple[str, ...] = ()

    def __call__(self, answer: str, trace_tools: Sequence[str] = ()) -> bool:
        return _norm(answer) == _norm(self.expected) and all(t in trace_tools for t in self.required_tools)


@dataclass(frozen=True)
class ContainsJudge:
    needle: str
    required_tools: tuple[str, ...] = ()

    def __call__(self, answer: str, trace_tools: Sequence[str] = ()) -> bool:
        return _norm(self.needle) in _norm(answer) and all(t in trace_tools for t in self.required_tools)


@dataclass(frozen=True)
class NumericJudge:
    expected: float
    rel_tol: float = 0.05
    required_tools: tuple[str, ...] = ()

    def __call__(self, answer: str, trace_tools: Sequence[str] = ()) -> bool:
        found = re.findall(r"-?\d+(?:\.\d+)?(?:e-?\d+)?", answer)
        if not found:
            return False
        value = float(found[-1])
        scale = abs(self.expected) or 1.0
        return abs(value - self.expected) / scale <= self.rel_tol and all(t in trace_tools for t in self.required_tools)


@dataclass(frozen=True)
class AllLinesJudge:
    """Success only if every nonempty answer line equals ``expected``.

    Paired with synthesis-only aggregation this makes a single wrong worker
    fail the whole episode.
    """

    expected: str
    required_tools: tuple[str, ...] = ()

    def __call__(self, answer: str, trace_tools: Sequence[str] = ()) -> bool:
        lines = [line for line in answer.splitlines() if line.strip()]
        return bool(lines) and all(_norm(line) == _norm(self.expected) for line in lines)
