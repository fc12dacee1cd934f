"""Random program/env generators and independent oracles for property checks."""

from __future__ import annotations

import random
from dataclasses import dataclass

from .docmodel import BindingDoc, Fill, Gap, Literal, Loop, Runs, TemplateDoc
from .miniscript import (
    For,
    If,
    Lit,
    Print,
    Program,
    RunTrace,
    Var,
    format_program,
    interpret,
    number_sites,
    parse_script,
    trace_run,
)

STRING_VARS = ("s0", "s1", "s2", "s3")
LIST_VARS = ("l0", "l1", "l2")
CHOICES = ("a", "b", "c")
RESERVED_SAMPLES = (
    "<gap>", "</gap>", "<loop>", "</loop>", "<temp ", '<temp ref="/x">', "</temp>",
    "<1>", "</2>", "<10>",
)
# pieces that can combine across print boundaries into reserved tokens
_ALPHABET = list("abcxyz <>/\"\\=&;é") + ["<ga", "p>", "<lo", "op>", "</", "<1", "1>", "<te", "mp ", "\n"]


@dataclass(frozen=True)
class GenConfig:
    max_depth: int = 4
    max_sites: int = 6
    max_loop_len: int = 8
    max_literal_len: int = 32
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("max_depth", "max_sites", "max_loop_len", "max_literal_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


def _text(rng: random.Random, max_len: int, reserved_p: float = 0.1) -> str:
    parts: list[str] = []
    n = rng.randint(0, max_len)
    while sum(len(p) for p in parts) < n:
        if rng.random() < reserved_p:
            parts.append(rng.choice(RESERVED_SAMPLES))
        else:
            parts.append(rng.choice(_ALPHABET))
    # truncation may cut a token in half, which is wanted
    return "".join(parts)[:n]


class _ProgramGen:
    def __init__(self, rng: random.Random, cfg: GenConfig) -> None:
        self.rng = rng
        self.cfg = cfg
        self.sites_left = rng.randint(0, cfg.max_sites)

    def literal(self) -> str:
        return _text(self.rng, self.cfg.max_literal_len)

    def block(self, depth: int, scope: tuple[str, ...], top: bool = False) -> tuple:
        rng = self.rng
        n = rng.randint(1, 6) if top else rng.randint(0, 4)
        out = []
        for _ in range(n):
            kinds = ["lit"] * 4 + ["var"] * 3
            if self.sites_left and depth < self.cfg.max_depth:
                kinds += ["if"] * 3 + ["for"] * 2
            kind = rng.choice(kinds)
            if kind == "lit":
                out.append(Print(Lit(self.literal())))
            elif kind == "var":
                out.append(Print(Var(rng.choice(scope))))
            elif kind == "if":
                self.sites_left -= 1
                lit = rng.choice(CHOICES)
                then = self.block(depth + 1, scope)
                else_ = self.block(depth + 1, scope) if rng.random() < 0.6 else None
                out.append(If(rng.choice(scope), lit, then, else_, -1))
            else:
                self.sites_left -= 1
                var = f"i{depth}"
                body = self.block(depth + 1, scope + (var,))
                out.append(For(var, rng.choice(LIST_VARS), body, -1))
        return tuple(out)


def generate_program(rng: random.Random, cfg: GenConfig, force_reserved: bool = False) -> Program:
    stmts = _ProgramGen(rng, cfg).block(0, STRING_VARS, top=True)
    if force_reserved:
        stmts = (Print(Lit("x" + rng.choice(RESERVED_SAMPLES) + "y")),) + stmts
    ast = Program(number_sites(stmts))
    program = parse_script(format_program(ast))
    if program != ast:
        raise AssertionError("printer/parser round trip changed the program")
    return program


def generate_env(rng: random.Random, cfg: GenConfig) -> dict:
    env: dict = {}
    for name in STRING_VARS:
        env[name] = rng.choice(CHOICES) if rng.random() < 0.7 else _text(rng, 12, 0.2)
    for name in LIST_VARS:
        length = rng.randint(0, cfg.max_loop_len)
        env[name] = [
            rng.choice(CHOICES) if rng.random() < 0.6 else _text(rng, 8, 0.2)
            for _ in range(length)
        ]
    return env


def has_reserved_literal(program: Program) -> bool:
    def walk(stmts) -> bool:
        for st in stmts:
            if isinstance(st, Print) and isinstance(st.expr, Lit):
                if any(tok in st.expr.value for tok in RESERVED_SAMPLES):
                    return True
            elif isinstance(st, If):
                if walk(st.then) or walk(st.else_ or ()):
                    return True
            elif isinstance(st, For) and walk(st.body):
                return True
        return False

    return walk(program.stmts)


def generate_corpus(cfg: GenConfig, count: int, envs_per_program: int = 5) -> list[tuple[Program, list[dict]]]:
    """Deterministic corpus of programs, each with envs it runs cleanly under."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = random.Random(cfg.seed)
    corpus = []
    for k in range(count):
        program = generate_program(rng, cfg, force_reserved=(k == 0))
        envs = []
        while len(envs) < envs_per_program:
            env = generate_env(rng, cfg)
            interpret(program, env)  # generator never yields an invalid pair
            envs.append(env)
        corpus.append((program, envs))
    return corpus


def synthetic_traces(program: Program, envs: list[dict], doc: str, total: int = 100) -> list[RunTrace]:
    """Traces where the first env dominates: it gets ``total - 5 * (len(envs) - 1)`` runs."""
    traces = [trace_run(program, env, doc)[1] for env in envs]
    rest = len(envs) - 1
    head = max(total - 5 * rest, 1)
    return [traces[0]] * head + [t for t in traces[1:] for _ in range(5)]


# -- independent oracles ----------------------------------------------------------

_TOKENS = ("gap>", "/gap>", "loop>", "/loop>", "/temp>", "temp ")


def naive_escape(data: bytes) -> bytes:
    """Character-scanning escape, written separately from the regex version."""
    text = data.decode("utf-8", "surrogateescape")
    out = []
    i = 0
    while i < len(text):
        c = text[i]
        if c == "<" and _token_follows(text, i + 1):
            out.append("&lt;")
        else:
            out.append(c)
        i += 1
    return "".join(out).encode("utf-8", "surrogateescape")


def _token_follows(text: str, j: int) -> bool:
    for tok in _TOKENS:
        if text.startswith(tok, j):
            return True
    if j < len(text) and text[j] == "/":
        j += 1
    if j < len(text) and text[j] in "123456789":
        j += 1
        while j < len(text) and text[j] in "0123456789":
            j += 1
        return j < len(text) and text[j] == ">"
    return False


def naive_plug(binding: BindingDoc, templates: dict[str, TemplateDoc]) -> bytes:
    """Work-stack evaluator for Plug, independent of the assembler's recursion."""
    out = bytearray()
    work: list = [("binding", binding)]
    while work:
        task = work.pop()
        kind = task[0]
        if kind == "emit":
            out += task[1]
        elif kind == "binding":
            tpl = templates[task[1].ref]
            work.append(("frame", tpl.nodes, task[1].items))
        else:
            _, nodes, items = task
            expanded: list = []
            queue = list(items)
            for node in nodes:
                if isinstance(node, Literal):
                    expanded.append(("emit", node.data))
                    continue
                if not queue:
                    raise ValueError("binding has too few items")
                item = queue.pop(0)
                if isinstance(node, Gap) and isinstance(item, Fill):
                    for part in item.content:
                        if isinstance(part, Literal):
                            expanded.append(("emit", part.data))
                        else:
                            expanded.append(("binding", part))
                elif isinstance(node, Loop) and isinstance(item, Runs):
                    expanded.extend(("frame", node.body, run) for run in item.runs)
                else:
                    raise ValueError("marker kind does not match item kind")
            if queue:
                raise ValueError("binding has too many items")
            work.extend(reversed(expanded))
    return naive_escape(bytes(out))


def oracle_output(program: Program, env: dict) -> bytes:
    return naive_escape(interpret(program, env))


# -- random document trees ----------------------------------------------------------


def _lit(rng: random.Random, max_len: int = 12) -> Literal:
    return Literal(_text(rng, max_len, 0.15).encode("utf-8"))


def random_template(rng: random.Random, depth: int = 3) -> TemplateDoc:
    return TemplateDoc(tuple(_random_tnodes(rng, depth)))


def _random_tnodes(rng: random.Random, depth: int) -> list:
    nodes = []
    for _ in range(rng.randint(0, 5)):
        r = rng.random()
        if r < 0.45:
            nodes.append(_lit(rng))
        elif r < 0.8 or depth == 0:
            nodes.append(Gap())
        else:
            nodes.append(Loop(tuple(_random_tnodes(rng, depth - 1))))
    return nodes


def random_binding_for(
    rng: random.Random,
    template: TemplateDoc,
    templates: dict[str, TemplateDoc],
    depth: int = 3,
) -> BindingDoc:
    """A binding whose shape matches ``template``.

    Nested bindings point at freshly generated templates, which are added to
    ``templates`` under their content URL.
    """
    url = template.id.url
    templates[url] = template
    return BindingDoc(url, tuple(_items_for(rng, template.nodes, templates, depth)))


def _items_for(rng, nodes, templates, depth) -> list:
    items = []
    for node in nodes:
        if isinstance(node, Literal):
            continue
        if isinstance(node, Gap):
            content = []
            for _ in range(rng.randint(0, 3)):
                if depth > 0 and rng.random() < 0.25:
                    sub = random_template(rng, 2)
                    content.append(random_binding_for(rng, sub, templates, depth - 1))
                else:
                    content.append(_lit(rng))
            items.append(Fill(tuple(content)))
        else:
            runs = [
                tuple(_items_for(rng, node.body, templates, depth))
                for _ in range(rng.randint(0, 3))
            ]
            items.append(Runs(tuple(runs)))
    return items


def random_binding(rng: random.Random, depth: int = 3) -> BindingDoc:
    """A free-standing binding tree (no template needed), for wire round trips."""
    return random_binding_for(rng, random_template(rng, depth), {}, depth)
