"""Replay a request workload through the full pipeline and account bytes.

Every request is reconstructed on a simulated client and checked against the
interpreter before its bytes are counted; a mismatch aborts the simulation.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from pathlib import Path
from typing import Literal as TLiteral, Union

from pydantic import BaseModel, Field

from .assembler import MemoryCache, fetch_list, generate_list, plug
from .bindinggen import generate_binding
from .branchstats import compute_stats
from .docmodel import TemplateId, escape_reserved, serialize
from .fragmentor import fragment
from .miniscript import interpret, load_env, parse_script, trace_run
from .registry import FragmentConfig, Registry

log = logging.getLogger(__name__)

EnvSpec = Union[str, dict[str, Union[str, list[str]]]]


class SimulationError(Exception):
    def __init__(self, index: int, reason: str) -> None:
        super().__init__(f"request {index}: {reason}")
        self.index = index


class Workload(BaseModel):
    script: str
    """Path to the ``.ms`` script, relative to the workload file."""
    doc: str | None = None
    requests: list[EnvSpec] = Field(min_length=1)
    """Env file paths (relative to the workload file) or inline env objects."""
    mode: TLiteral["brute", "specialized", "pruned"] = "pruned"
    config: FragmentConfig = FragmentConfig()
    header_bytes: int = Field(0, ge=0)


class Row(BaseModel):
    index: int
    baseline_bytes: int
    binding_bytes: int
    template_bytes_fetched: int
    templates_fetched: int
    cache_hits: int
    vcache_bytes: int


class Report(BaseModel):
    doc: str
    mode: str
    requests: int
    templates_stored: int
    specialized_templates: int
    baseline_total: int
    vcache_total: int
    savings_ratio: float
    steady_state_ratio: float
    """vcache/baseline bytes over the second half of the request sequence."""
    rows: list[Row]

    def rows_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(Row.model_fields))
        writer.writeheader()
        for row in self.rows:
            writer.writerow(row.model_dump())
        return buf.getvalue()


class _RegistryFetcher:
    """Serves template bytes straight from a registry and counts transfers."""

    def __init__(self, registry: Registry) -> None:
        self.registry = registry
        self.calls = 0
        self.bytes = 0

    def fetch(self, url: str) -> bytes:
        data = serialize(self.registry.templates[TemplateId.from_url(url)])
        self.calls += 1
        self.bytes += len(data)
        return data


def load_workload(path: str | Path) -> tuple[Workload, Path]:
    path = Path(path)
    return Workload.model_validate_json(path.read_bytes()), path.parent


def resolve_envs(workload: Workload, base: Path) -> list[dict]:
    envs = []
    for spec in workload.requests:
        if isinstance(spec, str):
            spec = json.loads((base / spec).read_text(encoding="utf-8"))
        envs.append(load_env(spec))
    return envs


def simulate(workload: Workload, base: str | Path = ".") -> Report:
    base = Path(base)
    script_path = base / workload.script
    program = parse_script(script_path.read_text(encoding="utf-8"))
    doc = workload.doc or script_path.stem
    envs = resolve_envs(workload, base)
    config = workload.config

    stats = None
    if workload.mode != "brute":
        # the fragmentor learns from the same request stream it then serves
        traces = []
        for i, env in enumerate(envs):
            try:
                traces.append(trace_run(program, env, doc)[1])
            except Exception as exc:
                raise SimulationError(i, f"{type(exc).__name__}: {exc}") from exc
        stats = {doc: compute_stats(traces, program)}
    registry = fragment({doc: program}, config, stats, mode=workload.mode)

    cache = MemoryCache()
    rows: list[Row] = []
    for i, env in enumerate(envs):
        try:
            expected = escape_reserved(interpret(program, env))
            result = generate_binding(program, env, registry, doc)
            urls = generate_list(result.binding)
            hits = sum(1 for u in urls if cache.has(u))
            fetcher = _RegistryFetcher(registry)
            templates = fetch_list(urls, cache, fetcher)
            html = plug(result.binding, templates)
        except SimulationError:
            raise
        except Exception as exc:
            raise SimulationError(i, f"{type(exc).__name__}: {exc}") from exc
        if html != expected:
            raise SimulationError(i, "reconstructed document differs from direct output")
        h = workload.header_bytes
        rows.append(
            Row(
                index=i,
                baseline_bytes=len(expected) + h,
                binding_bytes=result.binding_bytes,
                template_bytes_fetched=fetcher.bytes,
                templates_fetched=fetcher.calls,
                cache_hits=hits,
                vcache_bytes=result.binding_bytes + fetcher.bytes + h * (1 + fetcher.calls),
            )
        )

    baseline_total = sum(r.baseline_bytes for r in rows)
    vcache_total = sum(r.vcache_bytes for r in rows)
    tail = rows[len(rows) // 2 :]
    tail_base = sum(r.baseline_bytes for r in tail)
    return Report(
        doc=doc,
        mode=workload.mode,
        requests=len(rows),
        templates_stored=len(registry.templates),
        specialized_templates=len(registry.docs[doc].specialized),
        baseline_total=baseline_total,
        vcache_total=vcache_total,
        savings_ratio=1 - vcache_total / baseline_total if baseline_total else 0.0,
        steady_state_ratio=(
            sum(r.vcache_bytes for r in tail) / tail_base if tail_base else 0.0
        ),
        rows=rows,
    )


def simulate_file(path: str | Path, **overrides) -> Report:
    workload, base = load_workload(path)
    if overrides:
        workload = workload.model_copy(update=overrides)
    return simulate(workload, base)
