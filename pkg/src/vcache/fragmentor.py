"""Decompose MiniScript programs into a hierarchy of cacheable templates.

Brute force: the root template has a gap for every printed variable and
every branch, and each branch arm becomes its own template, recursively.
Loop bodies stay inline inside a ``<loop>`` region.

Optimized: with branch-flow statistics, dominant path signatures get merged
templates with their arms inlined, and arm templates that are too small or
too rarely used are dropped in favour of shipping the arm's rendered bytes
inside the binding.
"""

from __future__ import annotations

import logging
from typing import Mapping

from .branchstats import PathStats, dominant_signatures
from .docmodel import GAP, Literal, Loop, TemplateDoc
from .miniscript import For, If, Lit, Print, Program
from .registry import DispatchEntry, FragmentConfig, Registry, Signature

log = logging.getLogger(__name__)

MODES = ("brute", "specialized", "pruned")


class InsufficientRuns(Exception):
    pass


def template_nodes(stmts, inline: Mapping[int, int]) -> list:
    """Template skeleton of ``stmts``.

    Branch sites listed in ``inline`` have the chosen arm spliced in place;
    every other branch is a gap.
    """
    nodes: list = []
    for st in stmts:
        if isinstance(st, Print):
            if isinstance(st.expr, Lit):
                nodes.append(Literal(st.expr.value.encode("utf-8")))
            else:
                nodes.append(GAP)
        elif isinstance(st, If):
            arm = inline.get(st.site)
            if arm is None:
                nodes.append(GAP)
            else:
                nodes.extend(template_nodes(st.arm(arm), inline))
        elif isinstance(st, For):
            nodes.append(Loop(tuple(template_nodes(st.body, inline))))
    return nodes


def fragment_brute(program: Program, config: FragmentConfig | None = None, doc: str = "main") -> Registry:
    registry = Registry(config=config or FragmentConfig())
    root = registry.add(TemplateDoc(tuple(template_nodes(program.stmts, {}))))
    arms = {}
    for site, info in program.sites.items():
        if isinstance(info.stmt, If):
            for arm in (0, 1):
                body = TemplateDoc(tuple(template_nodes(info.stmt.arm(arm), {})))
                arms[(site, arm)] = registry.add(body)
    registry.docs[doc] = DispatchEntry(root=root, arms=arms)
    return registry


def specialize(
    program: Program, stats: PathStats, config: FragmentConfig | None = None
) -> list[tuple[Signature, TemplateDoc]]:
    config = config or FragmentConfig()
    if stats.run_count < config.min_runs:
        raise InsufficientRuns(f"{stats.run_count} runs recorded, {config.min_runs} required")
    out = []
    for sig in dominant_signatures(stats, program, config.theta):
        out.append((sig, TemplateDoc(tuple(template_nodes(program.stmts, dict(sig))))))
    return out


def add_specialized(registry: Registry, doc: str, merged: list[tuple[Signature, TemplateDoc]]) -> None:
    entry = registry.docs[doc]
    have = {sig for sig, _ in entry.specialized}
    for sig, template in merged:
        if sig in have:
            continue
        entry.specialized.append((sig, registry.add(template)))
        have.add(sig)
    entry.sort_specialized()


def prune_and_dedup(registry: Registry, config: FragmentConfig | None = None) -> Registry:
    """Drop small and rarely used non-root templates, then garbage-collect.

    Templates are keyed by content hash, so byte-identical templates from
    different documents already share one entry; pruning only has to keep
    every dispatch reference pointing at a surviving template.
    """
    config = config or registry.config
    limit = config.min_template_bytes
    out = Registry(config=config)
    for name, entry in registry.docs.items():
        arms = {}
        for key, tid in entry.arms.items():
            if tid is not None:
                small = registry.templates[tid].literal_bytes < limit
                rare = entry.arm_freq is not None and entry.arm_freq.get(key, 0.0) < config.phi
                if small or rare:
                    tid = None
            arms[key] = tid
        specialized = [
            (sig, tid)
            for sig, tid in entry.specialized
            if registry.templates[tid].literal_bytes >= limit
        ]
        new = DispatchEntry(
            root=entry.root,
            arms=arms,
            specialized=specialized,
            arm_freq=dict(entry.arm_freq) if entry.arm_freq is not None else None,
        )
        new.sort_specialized()
        out.docs[name] = new
        for tid in new.referenced():
            out.templates[tid] = registry.templates[tid]
    return out


def fragment(
    programs: Mapping[str, Program],
    config: FragmentConfig | None = None,
    stats: Mapping[str, PathStats] | None = None,
    mode: str = "pruned",
) -> Registry:
    """Build a registry for several documents.

    ``mode`` is one of ``brute`` (hierarchical templates only),
    ``specialized`` (plus merged templates for dominant paths) or ``pruned``
    (plus size/rarity pruning). Documents without enough recorded runs are
    not specialized.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    config = config or FragmentConfig()
    registry = Registry(config=config)
    for name, program in programs.items():
        part = fragment_brute(program, config, doc=name)
        registry.merge(part)
        doc_stats = (stats or {}).get(name)
        if mode == "brute" or doc_stats is None:
            continue
        if doc_stats.run_count < config.min_runs:
            log.warning("%s: only %d runs recorded, skipping specialization", name, doc_stats.run_count)
            continue
        registry.docs[name].arm_freq = dict(doc_stats.arm_freq)
        add_specialized(registry, name, specialize(program, doc_stats, config))
    if mode == "pruned":
        registry = prune_and_dedup(registry, config)
    return registry
