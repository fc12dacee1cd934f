"""Caching of dynamic documents through template/binding decomposition."""

from .assembler import fetch_list, generate_list, plug
from .bindinggen import generate_binding, select_template
from .branchstats import PathStats, TraceStore, compute_stats, record_run
from .docmodel import (
    BindingDoc,
    TemplateDoc,
    TemplateId,
    escape_reserved,
    parse_binding,
    parse_template,
    serialize,
)
from .fragmentor import fragment, fragment_brute, prune_and_dedup, specialize
from .miniscript import interpret, parse_script, trace_run
from .registry import FragmentConfig, Registry, load_registry, save_registry

__version__ = "0.1.0"
