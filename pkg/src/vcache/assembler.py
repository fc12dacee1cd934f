"""Client-side operators: template discovery, cache-aware fetching, and Plug."""

from __future__ import annotations

import threading
from typing import Mapping, Protocol

from .docmodel import (
    BindingDoc,
    Fill,
    Gap,
    Literal,
    Loop,
    Runs,
    TemplateDoc,
    TemplateId,
    WireFormatError,
    escape_reserved,
    parse_template,
)

MAX_BINDING_DEPTH = 64


class AssemblyError(Exception):
    """Base class for failures while reconstructing a document."""


class ArityMismatch(AssemblyError):
    pass


class KindMismatch(AssemblyError):
    pass


class MissingTemplate(AssemblyError):
    def __init__(self, url: str) -> None:
        super().__init__(url)
        self.url = url


class CycleSuspected(AssemblyError):
    pass


class FetchFailed(AssemblyError):
    def __init__(self, url: str, reason: str = "") -> None:
        super().__init__(f"{url}: {reason}" if reason else url)
        self.url = url


class ParseFailed(AssemblyError):
    def __init__(self, url: str, reason: str = "") -> None:
        super().__init__(f"{url}: {reason}" if reason else url)
        self.url = url


class TemplateCache(Protocol):
    def has(self, url: str) -> bool: ...

    def get(self, url: str) -> TemplateDoc: ...

    def put(self, url: str, doc: TemplateDoc) -> None: ...


class TemplateFetcher(Protocol):
    def fetch(self, url: str) -> bytes: ...


class MemoryCache:
    """In-process :class:`TemplateCache`."""

    def __init__(self) -> None:
        self._entries: dict[str, TemplateDoc] = {}
        self._lock = threading.Lock()

    def has(self, url: str) -> bool:
        with self._lock:
            return url in self._entries

    def get(self, url: str) -> TemplateDoc:
        with self._lock:
            return self._entries[url]

    def put(self, url: str, doc: TemplateDoc) -> None:
        with self._lock:
            self._entries.setdefault(url, doc)

    def __len__(self) -> int:
        return len(self._entries)


def generate_list(binding: BindingDoc) -> list[str]:
    """Every template URL the binding needs, in first-occurrence order."""
    seen: dict[str, None] = {}

    def walk(b: BindingDoc) -> None:
        seen.setdefault(b.ref, None)
        walk_items(b.items)

    def walk_items(items) -> None:
        for item in items:
            if isinstance(item, Fill):
                for node in item.content:
                    if isinstance(node, BindingDoc):
                        walk(node)
            else:
                for run in item.runs:
                    walk_items(run)

    walk(binding)
    return list(seen)


def fetch_list(
    urls: list[str], cache: TemplateCache, fetcher: TemplateFetcher
) -> dict[str, TemplateDoc]:
    missing = [u for u in urls if not cache.has(u)]
    for url in missing:
        try:
            wire = fetcher.fetch(url)
        except Exception as exc:
            raise FetchFailed(url, str(exc)) from exc
        try:
            doc = parse_template(wire)
        except (WireFormatError, UnicodeDecodeError) as exc:
            raise ParseFailed(url, str(exc)) from exc
        _check_address(url, doc)
        cache.put(url, doc)
    return {u: cache.get(u) for u in urls}


def _check_address(url: str, doc: TemplateDoc) -> None:
    try:
        expected = TemplateId.from_url(url)
    except ValueError:
        return
    if doc.id != expected:
        raise ParseFailed(url, f"content hash {doc.id} does not match url")


def plug(
    binding: BindingDoc,
    templates: Mapping[str, TemplateDoc],
    *,
    normalize: bool = True,
) -> bytes:
    """Reconstruct the document described by ``binding``.

    Markers pair with binding items level by level: the i-th Gap or Loop of a
    node list consumes the i-th item, and a Loop body is expanded once per run
    against that run's items.

    With ``normalize`` (the default) the assembled bytes get a final
    :func:`escape_reserved` pass. Each piece is already escaped on the wire,
    so this only touches reserved tokens that straddle a piece boundary,
    e.g. a template literal ending in ``<ga`` followed by a fill ``p>``.
    """
    out: list[bytes] = []
    _plug_binding(binding, templates, out, 1)
    data = b"".join(out)
    return escape_reserved(data) if normalize else data


def _plug_binding(binding: BindingDoc, templates, out: list[bytes], depth: int) -> None:
    if depth > MAX_BINDING_DEPTH:
        raise CycleSuspected(f"bindings nested deeper than {MAX_BINDING_DEPTH}")
    template = templates.get(binding.ref)
    if template is None:
        raise MissingTemplate(binding.ref)
    _expand(template.nodes, binding.items, templates, out, depth)


def _expand(nodes, items, templates, out: list[bytes], depth: int) -> None:
    markers = sum(1 for n in nodes if not isinstance(n, Literal))
    if markers != len(items):
        raise ArityMismatch(f"{markers} markers but {len(items)} binding items")
    it = iter(items)
    for node in nodes:
        if isinstance(node, Literal):
            out.append(node.data)
            continue
        item = next(it)
        if isinstance(node, Gap):
            if not isinstance(item, Fill):
                raise KindMismatch("gap paired with loop runs")
            for part in item.content:
                if isinstance(part, Literal):
                    out.append(part.data)
                else:
                    _plug_binding(part, templates, out, depth + 1)
        elif isinstance(node, Loop):
            if not isinstance(item, Runs):
                raise KindMismatch("loop paired with gap fill")
            for run in item.runs:
                _expand(node.body, run, templates, out, depth)
