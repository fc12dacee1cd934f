"""Template and binding document trees and their wire format.

A template is cacheable HTML punctuated by two kinds of markers: a void
``<gap>`` and a ``<loop>...</loop>`` region. A binding is the per-request
material that fills those markers, wrapped in ``<temp ref="...">...</temp>``.

All payloads are handled as ``bytes``; reserved tokens are matched
case-sensitively and byte-exactly.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from typing import Union

__all__ = [
    "BareGapMarker",
    "BindingDoc",
    "Fill",
    "Gap",
    "GAP",
    "Literal",
    "Loop",
    "MissingOuterTemp",
    "NonConsecutiveRuns",
    "Runs",
    "StrayBindingToken",
    "TemplateDoc",
    "TemplateId",
    "UnbalancedLoop",
    "UnbalancedTag",
    "UnexpectedContent",
    "WireFormatError",
    "escape_reserved",
    "parse_binding",
    "parse_template",
    "serialize",
]

TPL_PREFIX = "/tpl/"
TPL_SUFFIX = ".vct"

_RESERVED_AHEAD = rb"gap>|/gap>|loop>|/loop>|/temp>|temp |/?[1-9][0-9]*>"
_ESCAPE_RE = re.compile(rb"<(?=" + _RESERVED_AHEAD + rb")")
_TOKEN_RE = re.compile(
    rb'<gap>|</gap>|<loop>|</loop>|</temp>|<temp ref="([^"]+)">|<temp |<(/?)([1-9][0-9]*)>'
)
_HASH_RE = re.compile(r"[0-9a-f]{16}")
_URL_RE = re.compile(r"/tpl/([0-9a-f]{16})\.vct")


class WireFormatError(ValueError):
    """Raised when template or binding bytes are not well formed."""


class UnbalancedLoop(WireFormatError):
    pass


class StrayBindingToken(WireFormatError):
    pass


class MissingOuterTemp(WireFormatError):
    pass


class NonConsecutiveRuns(WireFormatError):
    pass


class UnbalancedTag(WireFormatError):
    pass


class BareGapMarker(WireFormatError):
    pass


class UnexpectedContent(WireFormatError):
    pass


def escape_reserved(text: bytes) -> bytes:
    """Neutralize reserved tokens by rewriting their leading ``<`` as ``&lt;``.

    Every reserved token contains exactly one ``<``, so the rewrite can never
    create a new token and the function is idempotent.
    """
    if b"<" not in text:
        return text
    return _ESCAPE_RE.sub(b"&lt;", text)


# -- tree types -------------------------------------------------------------


@dataclass(frozen=True)
class Literal:
    data: bytes

    def __repr__(self) -> str:
        return f"Literal({self.data!r})"


@dataclass(frozen=True)
class Gap:
    def __repr__(self) -> str:
        return "Gap"


GAP = Gap()


@dataclass(frozen=True)
class Loop:
    body: tuple = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "body", _normalize(self.body))


TNode = Union[Literal, Gap, Loop]


@dataclass(frozen=True, order=True)
class TemplateId:
    hash: str

    def __post_init__(self) -> None:
        if not _HASH_RE.fullmatch(self.hash):
            raise ValueError(f"bad template hash {self.hash!r}")

    @property
    def url(self) -> str:
        return f"{TPL_PREFIX}{self.hash}{TPL_SUFFIX}"

    @classmethod
    def from_url(cls, url: str) -> TemplateId:
        m = _URL_RE.fullmatch(url)
        if m is None:
            raise ValueError(f"not a template url: {url!r}")
        return cls(m.group(1))

    def __str__(self) -> str:
        return self.hash


@dataclass(frozen=True)
class TemplateDoc:
    nodes: tuple = ()
    literal_bytes: int = field(init=False, compare=False)

    def __post_init__(self) -> None:
        nodes = _normalize(self.nodes)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "literal_bytes", _count_literal_bytes(nodes))

    @property
    def id(self) -> TemplateId:
        digest = hashlib.sha256(serialize(self)).hexdigest()
        return TemplateId(digest[:16])

    def marker_count(self) -> int:
        return sum(1 for n in self.nodes if not isinstance(n, Literal))


@dataclass(frozen=True)
class BindingDoc:
    ref: str
    items: tuple = ()

    def __post_init__(self) -> None:
        if not self.ref or '"' in self.ref:
            raise ValueError(f"invalid binding ref {self.ref!r}")
        object.__setattr__(self, "items", tuple(self.items))


@dataclass(frozen=True)
class Fill:
    content: tuple = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "content", _normalize(self.content))


@dataclass(frozen=True)
class Runs:
    runs: tuple = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "runs", tuple(tuple(r) for r in self.runs))


BNode = Union[Literal, BindingDoc]
BItem = Union[Fill, Runs]


def _normalize(nodes) -> tuple:
    # Merge adjacent literals and re-escape the merged payload: two escaped
    # halves can still meet to form a reserved token.
    out: list = []
    pending: list[bytes] = []
    for node in nodes:
        if isinstance(node, Literal):
            pending.append(node.data)
            continue
        if pending:
            data = escape_reserved(b"".join(pending))
            if data:
                out.append(Literal(data))
            pending = []
        out.append(node)
    if pending:
        data = escape_reserved(b"".join(pending))
        if data:
            out.append(Literal(data))
    return tuple(out)


def _count_literal_bytes(nodes) -> int:
    total = 0
    for node in nodes:
        if isinstance(node, Literal):
            total += len(node.data)
        elif isinstance(node, Loop):
            total += _count_literal_bytes(node.body)
    return total


# -- serialization ------------------------------------------------------------


def serialize(doc: TemplateDoc | BindingDoc) -> bytes:
    out: list[bytes] = []
    if isinstance(doc, TemplateDoc):
        _emit_tnodes(doc.nodes, out)
    elif isinstance(doc, BindingDoc):
        _emit_binding(doc, out)
    else:
        raise TypeError(f"cannot serialize {type(doc).__name__}")
    return b"".join(out)


def _emit_tnodes(nodes, out: list[bytes]) -> None:
    for node in nodes:
        if isinstance(node, Literal):
            out.append(node.data)
        elif isinstance(node, Gap):
            out.append(b"<gap>")
        else:
            out.append(b"<loop>")
            _emit_tnodes(node.body, out)
            out.append(b"</loop>")


def _emit_binding(doc: BindingDoc, out: list[bytes]) -> None:
    out.append(b'<temp ref="' + doc.ref.encode("utf-8") + b'">')
    _emit_items(doc.items, out)
    out.append(b"</temp>")


def _emit_items(items, out: list[bytes]) -> None:
    for item in items:
        if isinstance(item, Fill):
            out.append(b"<gap>")
            for node in item.content:
                if isinstance(node, Literal):
                    out.append(node.data)
                else:
                    _emit_binding(node, out)
            out.append(b"</gap>")
        else:
            out.append(b"<loop>")
            for k, run in enumerate(item.runs, start=1):
                tag = str(k).encode()
                out.append(b"<" + tag + b">")
                _emit_items(run, out)
                out.append(b"</" + tag + b">")
            out.append(b"</loop>")


# -- parsing --------------------------------------------------------------------


def _tokens(wire: bytes):
    """Yield ``(kind, payload, start)`` for literal stretches and reserved tokens."""
    pos = 0
    for m in _TOKEN_RE.finditer(wire):
        if m.start() > pos:
            yield "text", wire[pos : m.start()], pos
        tok = m.group(0)
        if m.group(1) is not None:
            yield "temp", m.group(1).decode("utf-8"), m.start()
        elif m.group(3) is not None:
            kind = "run_close" if m.group(2) else "run_open"
            yield kind, int(m.group(3)), m.start()
        else:
            yield tok.decode("ascii"), None, m.start()
        pos = m.end()
    if pos < len(wire):
        yield "text", wire[pos:], pos


def parse_template(wire: bytes) -> TemplateDoc:
    if isinstance(wire, str):
        wire = wire.encode("utf-8")
    wire.decode("utf-8")
    stack: list[list] = [[]]
    for kind, payload, at in _tokens(wire):
        if kind == "text":
            stack[-1].append(Literal(payload))
        elif kind == "<gap>":
            stack[-1].append(GAP)
        elif kind == "<loop>":
            stack.append([])
        elif kind == "</loop>":
            if len(stack) == 1:
                raise UnbalancedLoop(f"unmatched </loop> at byte {at}")
            body = stack.pop()
            stack[-1].append(Loop(tuple(body)))
        else:
            raise StrayBindingToken(f"binding-only token at byte {at}")
    if len(stack) != 1:
        raise UnbalancedLoop("unmatched <loop>")
    return TemplateDoc(tuple(stack[0]))


class _BindingParser:
    def __init__(self, wire: bytes) -> None:
        self.toks = list(_tokens(wire))
        self.i = 0

    def peek(self):
        if self.i < len(self.toks):
            return self.toks[self.i]
        return None, None, -1

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def binding(self, ref: str) -> BindingDoc:
        # assumes the opening <temp ref="..."> was consumed
        items = self.items(closer="</temp>")
        kind, _, at = self.take()
        if kind != "</temp>":
            raise UnbalancedTag(f"missing </temp> for {ref!r}")
        return BindingDoc(ref, tuple(items))

    def items(self, closer) -> list:
        items: list = []
        while True:
            kind, payload, at = self.peek()
            if kind is None or kind == closer:
                return items
            if kind == "<gap>":
                self.take()
                items.append(self.fill())
            elif kind == "<loop>":
                self.take()
                items.append(self.runs())
            elif kind == "text":
                raise UnexpectedContent(f"text outside <gap> at byte {at}")
            else:
                raise UnbalancedTag(f"unexpected {kind} at byte {at}")

    def fill(self) -> Fill:
        content: list = []
        while True:
            kind, payload, at = self.take()
            if kind == "</gap>":
                return Fill(tuple(content))
            if kind == "text":
                content.append(Literal(payload))
            elif kind == "temp":
                content.append(self.binding(payload))
            elif kind == "<gap>" or kind is None or kind == "</temp>":
                raise BareGapMarker(f"<gap> without </gap> near byte {at}")
            else:
                raise UnbalancedTag(f"unexpected {kind} inside fill at byte {at}")

    def runs(self) -> Runs:
        runs: list = []
        while True:
            kind, payload, at = self.take()
            if kind == "</loop>":
                return Runs(tuple(runs))
            if kind == "run_open":
                if payload != len(runs) + 1:
                    raise NonConsecutiveRuns(
                        f"run <{payload}> where <{len(runs) + 1}> expected at byte {at}"
                    )
                run = self._run_items(payload)
                runs.append(tuple(run))
            elif kind == "text":
                raise UnexpectedContent(f"text between runs at byte {at}")
            else:
                raise UnbalancedTag(f"unexpected {kind} inside <loop> at byte {at}")

    def _run_items(self, n: int) -> list:
        items: list = []
        while True:
            kind, payload, at = self.peek()
            if kind == "run_close":
                self.take()
                if payload != n:
                    raise UnbalancedTag(f"</{payload}> closes <{n}> at byte {at}")
                return items
            if kind == "<gap>":
                self.take()
                items.append(self.fill())
            elif kind == "<loop>":
                self.take()
                items.append(self.runs())
            elif kind == "text":
                raise UnexpectedContent(f"text outside <gap> at byte {at}")
            else:
                raise UnbalancedTag(f"unexpected {kind} inside run <{n}> at byte {at}")


def parse_binding(wire: bytes) -> BindingDoc:
    if isinstance(wire, str):
        wire = wire.encode("utf-8")
    wire.decode("utf-8")
    p = _BindingParser(wire)
    kind, payload, at = p.take()
    if kind != "temp":
        raise MissingOuterTemp("binding must start with <temp ref=\"...\">")
    doc = p.binding(payload)
    kind, _, at = p.peek()
    if kind is not None:
        raise UnexpectedContent(f"trailing content after outer </temp> at byte {at}")
    return doc
