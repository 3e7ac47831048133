"""Campaign execution and trace persistence."""

from __future__ import annotations

import json
import logging
import os
import re
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Iterable

from ..core import BudgetError, ConfigurationError, match_budget
from ..topology import EpisodeTrace, run_episode, trace_from_dict, trace_to_dict
from .config import CampaignConfig, ConfigError, SystemConfig, TaskConfig

logger = logging.getLogger(__name__)

INDEX_NAME = "index.jsonl"


def dumps(obj: object) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def write_trace(trace: EpisodeTrace, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(dumps(trace_to_dict(trace)) + "\n", encoding="utf-8")
    return path


def read_trace(path: str | Path) -> EpisodeTrace:
    lines = [line for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
    if len(lines) != 1:
        raise ValueError(f"{path}: expected exactly one trace record, found {len(lines)}")
    return trace_from_dict(json.loads(lines[0]))


def read_traces(directory_or_index: str | Path) -> list[EpisodeTrace]:
    """Load every trace listed in a campaign index (or in ``<dir>/index.jsonl``)."""
    index = Path(directory_or_index)
    if index.is_dir():
        index = index / INDEX_NAME
    traces = []
    for line in index.read_text(encoding="utf-8").splitlines():
        if line.strip():
            entry = json.loads(line)
            traces.append(read_trace(index.parent / entry["path"]))
    return traces


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _slug(text: str) -> str:
    return re.sub(r"[^\w.-]+", "_", text)


def run_key(system_id: str, task_id: str, seed: int) -> str:
    return f"{_slug(system_id)}__{_slug(task_id)}__{seed}"


def _check_writable(out: Path) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "traces").mkdir(exist_ok=True)
        probe = out / ".write-probe"
        probe.write_text("", encoding="utf-8")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc}", ["output_dir"]) from exc


def run_campaign(config: CampaignConfig, output_dir: str | Path | None = None) -> list[Path]:
    """Run the systems x tasks x seeds grid; returns trace paths in grid order.

    Backend failures become failed traces and the campaign carries on. The
    index is rewritten atomically once all runs finish.
    """
    out = Path(output_dir or config.output_dir)
    _check_writable(out)
    grid = config.grid()
    keys = [run_key(s.id, t.id, seed) for s, t, seed in grid]
    if len(set(keys)) != len(keys):
        raise ConfigError("duplicate run key after normalizing ids", ["systems", "tasks"])
    # Build everything once up front so configuration errors abort before any run.
    try:
        for s in config.systems:
            system = s.build()
            match_budget(system.topology, system.budget)
        for t in config.tasks:
            t.build()
    except ConfigError:
        raise
    except (ConfigurationError, BudgetError) as exc:
        raise ConfigError(str(exc)) from exc

    def execute(item: tuple[SystemConfig, TaskConfig, int], key: str) -> dict:
        system_cfg, task_cfg, seed = item
        # fresh backends per run: no state shared between runs
        trace = run_episode(system_cfg.build(), task_cfg.build(), seed)
        rel = Path("traces") / f"{key}.jsonl"
        write_trace(trace, out / rel)
        return {
            "key": key,
            "system_id": trace.system_id,
            "task_id": trace.task_id,
            "seed": seed,
            "topology": trace.topology.value,
            "benchmark": trace.benchmark,
            "outcome": trace.outcome,
            "status": "failed" if any(e.get("category") == "backend_failure" for e in trace.errors) else "ok",
            "turns": trace.n_turns,
            "messages": len(trace.messages),
            "total_tokens": trace.total_tokens,
            "path": rel.as_posix(),
        }

    with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
        entries = list(pool.map(execute, grid, keys))
    failed = [e["key"] for e in entries if e["status"] == "failed"]
    if failed:
        logger.warning("%d of %d runs failed: %s", len(failed), len(entries), ", ".join(failed[:5]))
    _atomic_write(out / INDEX_NAME, "".join(dumps(e) + "\n" for e in entries))
    return [out / e["path"] for e in entries]


def load_index(directory: str | Path) -> list[dict]:
    path = Path(directory) / INDEX_NAME
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def failed_runs(entries: Iterable[dict]) -> list[str]:
    return [e["key"] for e in entries if e["status"] == "failed"]
