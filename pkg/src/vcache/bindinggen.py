"""Server-side binding generation: run the script, pick a template, emit fills."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from .assembler import generate_list
from .docmodel import BindingDoc, Fill, Literal, Runs, TemplateId, escape_reserved, serialize
from .miniscript import (
    Env,
    For,
    If,
    Lit,
    Print,
    Program,
    RunTrace,
    bind,
    lookup_list,
    lookup_str,
    render,
    take_arm,
    trace_run,
)
from .registry import DispatchEntry, Registry, Signature


class UnregisteredDoc(LookupError):
    pass


@dataclass(frozen=True)
class BindingResult:
    binding: BindingDoc
    referenced: list
    binding_bytes: int
    trace: RunTrace
    template: TemplateId


def select_template(entry: DispatchEntry, trace: RunTrace) -> TemplateId:
    return _select(entry, trace)[0]


def _select(entry: DispatchEntry, trace: RunTrace) -> tuple[TemplateId, Signature]:
    taken = set(trace.events)
    # specialized is pre-sorted by (-size, id): first consistent entry wins
    for sig, tid in entry.specialized:
        if taken.issuperset(sig):
            return tid, sig
    return entry.root, ()


def binding_items(stmts, inline: Mapping[int, int], env: Env, entry: DispatchEntry) -> list:
    """Binding items for ``stmts`` against the skeleton ``template_nodes(stmts, inline)``."""
    items: list = []
    for st in stmts:
        if isinstance(st, Print):
            if not isinstance(st.expr, Lit):
                value = lookup_str(env, st.expr.name).encode("utf-8")
                items.append(Fill((Literal(escape_reserved(value)),)))
        elif isinstance(st, If):
            arm = take_arm(st, env)
            fixed = inline.get(st.site)
            if fixed is not None:
                if fixed != arm:
                    raise AssertionError(f"site {st.site} took arm {arm}, template fixes {fixed}")
                items.extend(binding_items(st.arm(arm), inline, env, entry))
                continue
            tid = entry.arms.get((st.site, arm))
            if tid is None:
                rendered = render(st.arm(arm), env).encode("utf-8")
                items.append(Fill((Literal(escape_reserved(rendered)),)))
            else:
                nested = BindingDoc(tid.url, tuple(binding_items(st.arm(arm), {}, env, entry)))
                items.append(Fill((nested,)))
        elif isinstance(st, For):
            runs = [
                tuple(binding_items(st.body, inline, bind(env, st.var, value), entry))
                for value in lookup_list(env, st.list_var)
            ]
            items.append(Runs(tuple(runs)))
    return items


def generate_binding(
    program: Program,
    env: Env,
    registry: Registry,
    doc: str,
    *,
    force_root: bool = False,
) -> BindingResult:
    entry = registry.docs.get(doc)
    if entry is None:
        raise UnregisteredDoc(doc)
    _, trace = trace_run(program, env, doc)
    if force_root:
        tid, sig = entry.root, ()
    else:
        tid, sig = _select(entry, trace)
    items = binding_items(program.stmts, dict(sig), env, entry)
    binding = BindingDoc(tid.url, tuple(items))
    referenced = [TemplateId.from_url(u) for u in generate_list(binding)]
    return BindingResult(binding, referenced, len(serialize(binding)), trace, tid)
