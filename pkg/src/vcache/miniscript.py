"""MiniScript: a tiny print-oriented scripting language and its interpreter.

Grammar::

    program := stmt*
    stmt    := "print" (STRING | IDENT) ";"
             | "if" IDENT "==" STRING block ("else" block)?
             | "for" IDENT "in" IDENT block
    block   := "{" stmt* "}"

Strings are double-quoted with ``\\"`` and ``\\\\`` escapes. ``#`` starts a
comment that runs to the end of the line.

If and For statements are numbered 0, 1, 2, ... in pre-order; those numbers
are the branch/loop *sites* recorded in run traces.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Union

Value = Union[str, list]
Env = Mapping[str, Value]

_IDENT_RE = re.compile(r"[a-zA-Z_][a-zA-Z0-9_]*")
KEYWORDS = frozenset({"print", "if", "else", "for", "in"})


class ScriptError(Exception):
    """Base class for MiniScript failures."""


class ScriptSyntaxError(ScriptError):
    def __init__(self, msg: str, line: int, col: int) -> None:
        super().__init__(f"{msg} at line {line}, column {col}")
        self.line = line
        self.col = col


class UndefinedVar(ScriptError):
    def __init__(self, name: str) -> None:
        super().__init__(name)
        self.name = name


class ScriptTypeError(ScriptError):
    pass


# -- AST ------------------------------------------------------------------------


@dataclass(frozen=True)
class Lit:
    value: str


@dataclass(frozen=True)
class Var:
    name: str


StrExpr = Union[Lit, Var]


@dataclass(frozen=True)
class Print:
    expr: StrExpr


@dataclass(frozen=True)
class If:
    var: str
    lit: str
    then: tuple
    else_: tuple | None
    site: int

    def arm(self, index: int) -> tuple:
        if index == 0:
            return self.then
        return self.else_ or ()


@dataclass(frozen=True)
class For:
    var: str
    list_var: str
    body: tuple
    site: int


Stmt = Union[Print, If, For]


@dataclass(frozen=True)
class SiteInfo:
    stmt: If | For
    parent: tuple[int, int] | None
    """Innermost enclosing If as ``(site, arm)``, or None at top level."""
    in_loop: bool

    @property
    def specializable(self) -> bool:
        return isinstance(self.stmt, If) and not self.in_loop


@dataclass(frozen=True)
class Program:
    stmts: tuple
    sites: dict = field(init=False, compare=False, repr=False)

    def __post_init__(self) -> None:
        sites: dict[int, SiteInfo] = {}
        _collect_sites(self.stmts, None, False, sites)
        object.__setattr__(self, "sites", sites)

    def specializable_sites(self) -> list[int]:
        return [s for s, info in self.sites.items() if info.specializable]

    def list_vars(self) -> set[str]:
        return {i.stmt.list_var for i in self.sites.values() if isinstance(i.stmt, For)}


def _collect_sites(stmts, parent, in_loop, sites) -> None:
    for st in stmts:
        if isinstance(st, If):
            if st.site in sites:
                raise ValueError(f"duplicate site {st.site}")
            sites[st.site] = SiteInfo(st, parent, in_loop)
            _collect_sites(st.then, (st.site, 0), in_loop, sites)
            _collect_sites(st.else_ or (), (st.site, 1), in_loop, sites)
        elif isinstance(st, For):
            if st.site in sites:
                raise ValueError(f"duplicate site {st.site}")
            sites[st.site] = SiteInfo(st, parent, in_loop)
            _collect_sites(st.body, parent, True, sites)


def number_sites(stmts) -> tuple:
    """Reassign site ids in pre-order, e.g. for programs built by hand."""
    counter = iter(range(1 << 30))

    def walk(block):
        out = []
        for st in block:
            if isinstance(st, If):
                site = next(counter)
                then = walk(st.then)
                else_ = walk(st.else_) if st.else_ is not None else None
                out.append(If(st.var, st.lit, then, else_, site))
            elif isinstance(st, For):
                site = next(counter)
                out.append(For(st.var, st.list_var, walk(st.body), site))
            else:
                out.append(st)
        return tuple(out)

    return walk(stmts)


# -- lexing and parsing -------------------------------------------------------


@dataclass
class _Tok:
    kind: str  # "ident", "kw", "string", "op", "eof"
    text: str
    line: int
    col: int


def _lex(source: str) -> list[_Tok]:
    toks: list[_Tok] = []
    i, line, col = 0, 1, 1
    n = len(source)
    while i < n:
        c = source[i]
        if c == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if c.isspace():
            i += 1
            col += 1
            continue
        if c == "#":
            while i < n and source[i] != "\n":
                i += 1
            continue
        start_line, start_col = line, col
        if c == '"':
            i += 1
            col += 1
            buf = []
            while True:
                if i >= n:
                    raise ScriptSyntaxError("unterminated string", start_line, start_col)
                c = source[i]
                if c == '"':
                    i += 1
                    col += 1
                    break
                if c == "\\":
                    nxt = source[i + 1] if i + 1 < n else ""
                    if nxt not in ('"', "\\"):
                        raise ScriptSyntaxError("bad escape in string", line, col)
                    buf.append(nxt)
                    i += 2
                    col += 2
                    continue
                buf.append(c)
                i += 1
                if c == "\n":
                    line += 1
                    col = 1
                else:
                    col += 1
            toks.append(_Tok("string", "".join(buf), start_line, start_col))
            continue
        m = _IDENT_RE.match(source, i)
        if m:
            word = m.group(0)
            toks.append(_Tok("kw" if word in KEYWORDS else "ident", word, line, col))
            i = m.end()
            col += len(word)
            continue
        if source.startswith("==", i):
            toks.append(_Tok("op", "==", line, col))
            i += 2
            col += 2
            continue
        if c in "{};":
            toks.append(_Tok("op", c, line, col))
            i += 1
            col += 1
            continue
        raise ScriptSyntaxError(f"unexpected character {c!r}", line, col)
    toks.append(_Tok("eof", "", line, col))
    return toks


class _Parser:
    def __init__(self, source: str) -> None:
        self.toks = _lex(source)
        self.pos = 0
        self.next_site = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.pos]

    def expect(self, kind: str, text: str | None = None) -> _Tok:
        tok = self.tok
        if tok.kind != kind or (text is not None and tok.text != text):
            want = repr(text) if text else kind
            got = repr(tok.text) if tok.kind != "eof" else "end of input"
            raise ScriptSyntaxError(f"expected {want}, got {got}", tok.line, tok.col)
        self.pos += 1
        return tok

    def program(self) -> Program:
        stmts = []
        while self.tok.kind != "eof":
            stmts.append(self.stmt())
        return Program(tuple(stmts))

    def block(self) -> tuple:
        self.expect("op", "{")
        stmts = []
        while not (self.tok.kind == "op" and self.tok.text == "}"):
            if self.tok.kind == "eof":
                raise ScriptSyntaxError("unterminated block", self.tok.line, self.tok.col)
            stmts.append(self.stmt())
        self.expect("op", "}")
        return tuple(stmts)

    def stmt(self) -> Stmt:
        tok = self.tok
        if tok.kind == "kw" and tok.text == "print":
            self.pos += 1
            if self.tok.kind == "string":
                expr: StrExpr = Lit(self.tok.text)
            elif self.tok.kind == "ident":
                expr = Var(self.tok.text)
            else:
                raise ScriptSyntaxError(
                    "print needs a string or a variable", self.tok.line, self.tok.col
                )
            self.pos += 1
            self.expect("op", ";")
            return Print(expr)
        if tok.kind == "kw" and tok.text == "if":
            self.pos += 1
            site = self.next_site
            self.next_site += 1
            var = self.expect("ident").text
            self.expect("op", "==")
            lit = self.expect("string").text
            then = self.block()
            else_ = None
            if self.tok.kind == "kw" and self.tok.text == "else":
                self.pos += 1
                else_ = self.block()
            return If(var, lit, then, else_, site)
        if tok.kind == "kw" and tok.text == "for":
            self.pos += 1
            site = self.next_site
            self.next_site += 1
            var = self.expect("ident").text
            self.expect("kw", "in")
            list_var = self.expect("ident").text
            return For(var, list_var, self.block(), site)
        got = repr(tok.text) if tok.kind != "eof" else "end of input"
        raise ScriptSyntaxError(f"expected a statement, got {got}", tok.line, tok.col)


def parse_script(source: str) -> Program:
    return _Parser(source).program()


def _quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def format_program(program: Program | tuple, indent: str = "  ") -> str:
    """Pretty-print a program back to MiniScript source."""
    stmts = program.stmts if isinstance(program, Program) else program
    lines: list[str] = []

    def emit(block, depth):
        pad = indent * depth
        for st in block:
            if isinstance(st, Print):
                arg = _quote(st.expr.value) if isinstance(st.expr, Lit) else st.expr.name
                lines.append(f"{pad}print {arg};")
            elif isinstance(st, If):
                lines.append(f"{pad}if {st.var} == {_quote(st.lit)} {{")
                emit(st.then, depth + 1)
                if st.else_ is not None:
                    lines.append(f"{pad}}} else {{")
                    emit(st.else_, depth + 1)
                lines.append(f"{pad}}}")
            else:
                lines.append(f"{pad}for {st.var} in {st.list_var} {{")
                emit(st.body, depth + 1)
                lines.append(f"{pad}}}")

    emit(stmts, 0)
    return "\n".join(lines) + "\n"


# -- execution ------------------------------------------------------------------


@dataclass(frozen=True)
class RunTrace:
    doc: str
    events: tuple = ()
    """``(site, arm)`` per executed If, in execution order."""
    loop_counts: tuple = ()
    """``(site, iterations)`` per executed For, in execution order."""
    env_digest: str = ""


def env_digest(env: Env) -> str:
    blob = json.dumps(env, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def lookup(env: Env, name: str) -> Value:
    try:
        return env[name]
    except KeyError:
        raise UndefinedVar(name) from None


def lookup_str(env: Env, name: str) -> str:
    value = lookup(env, name)
    if not isinstance(value, str):
        raise ScriptTypeError(f"{name} is a list, expected a string")
    return value


def lookup_list(env: Env, name: str) -> list:
    value = lookup(env, name)
    if isinstance(value, str):
        raise ScriptTypeError(f"cannot iterate over string {name}")
    return value


def take_arm(st: If, env: Env) -> int:
    return 0 if lookup_str(env, st.var) == st.lit else 1


def bind(env: Env, name: str, value: str) -> dict:
    scope = dict(env)
    scope[name] = value
    return scope


def run_chunks(stmts, env: Env, events: list | None = None, loops: list | None = None
               ) -> Iterator[tuple[bool, str]]:
    """Yield ``(is_literal, text)`` for every print, in execution order."""
    for st in stmts:
        if isinstance(st, Print):
            if isinstance(st.expr, Lit):
                yield True, st.expr.value
            else:
                yield False, lookup_str(env, st.expr.name)
        elif isinstance(st, If):
            arm = take_arm(st, env)
            if events is not None:
                events.append((st.site, arm))
            yield from run_chunks(st.arm(arm), env, events, loops)
        else:
            items = lookup_list(env, st.list_var)
            if loops is not None:
                loops.append((st.site, len(items)))
            for value in items:
                yield from run_chunks(st.body, bind(env, st.var, value), events, loops)


def render(stmts, env: Env) -> str:
    return "".join(text for _, text in run_chunks(stmts, env))


def interpret(program: Program, env: Env) -> bytes:
    return render(program.stmts, env).encode("utf-8")


def trace_run(program: Program, env: Env, doc: str = "") -> tuple[bytes, RunTrace]:
    events: list = []
    loops: list = []
    out = "".join(text for _, text in run_chunks(program.stmts, env, events, loops))
    trace = RunTrace(doc, tuple(events), tuple(loops), env_digest(env))
    return out.encode("utf-8"), trace


def static_fraction(program: Program, env: Env) -> float:
    """Share of output bytes that came from literal prints."""
    static = dynamic = 0
    for is_lit, text in run_chunks(program.stmts, env):
        n = len(text.encode("utf-8"))
        if is_lit:
            static += n
        else:
            dynamic += n
    total = static + dynamic
    return static / total if total else 1.0


def load_env(data: Mapping) -> dict:
    """Validate a decoded JSON environment object."""
    if not isinstance(data, Mapping):
        raise ValueError("environment must be a JSON object")
    env: dict = {}
    for name, value in data.items():
        if not _IDENT_RE.fullmatch(name):
            raise ValueError(f"bad variable name {name!r}")
        if isinstance(value, str):
            env[name] = value
        elif isinstance(value, list) and all(isinstance(v, str) for v in value):
            env[name] = list(value)
        else:
            raise ValueError(f"{name}: values must be strings or lists of strings")
    return env
