"""Acceptance suite: one test per criterion, summarized at the end of the run."""

import itertools
import random
import time
from pathlib import Path

import pytest

import vcache
from vcache.assembler import plug
from vcache.bindinggen import generate_binding
from vcache.branchstats import compute_stats
from vcache.docmodel import escape_reserved, parse_binding, parse_template, serialize
from vcache.fragmentor import fragment, fragment_brute
from vcache.harness import load_workload, simulate_file
from vcache.miniscript import interpret, parse_script, static_fraction, trace_run
from vcache.registry import FragmentConfig, save_registry
from vcache.service import AccessLog, create_app
from vcache.testing import (
    GenConfig,
    generate_corpus,
    naive_plug,
    random_binding,
    random_template,
    synthetic_traces,
)
from vcache.transport import ServerThread, fetch_render

DEMO = Path(vcache.__file__).parent / "demo"
SEED = 42
MODES = {
    "brute": FragmentConfig(),
    "specialized": FragmentConfig(),
    "pruned": FragmentConfig(min_template_bytes=50),
}


@pytest.fixture(scope="module")
def corpus_runs():
    """Bindings for every (program, env, mode) of the fixed corpus, plus timing."""
    start = time.perf_counter()
    corpus = generate_corpus(GenConfig(seed=SEED), 1000, envs_per_program=5)
    runs = []
    for k, (program, envs) in enumerate(corpus):
        doc = f"p{k}"
        stats = {doc: compute_stats(synthetic_traces(program, envs, doc), program)}
        for mode, config in MODES.items():
            registry = fragment({doc: program}, config, stats, mode=mode)
            templates = registry.by_url()
            for env in envs:
                binding = generate_binding(program, env, registry, doc).binding
                runs.append((mode, program, env, binding, templates))
    return runs, time.perf_counter() - start


@pytest.mark.criterion(1, "end-to-end identity, 1000 programs x 5 envs x 3 modes")
def test_criterion_1_end_to_end_identity(corpus_runs):
    runs, elapsed = corpus_runs
    assert len(runs) == 1000 * 5 * 3
    failures = [
        (mode, env)
        for mode, program, env, binding, templates in runs
        if plug(binding, templates) != escape_reserved(interpret(program, env))
    ]
    assert failures == []
    assert elapsed < 60


@pytest.mark.criterion(2, "assembler plug equals the naive evaluator on the corpus")
def test_criterion_2_plug_oracle(corpus_runs):
    runs, _ = corpus_runs
    mismatches = sum(
        1 for _, _, _, binding, templates in runs
        if plug(binding, templates) != naive_plug(binding, templates)
    )
    assert mismatches == 0


def _independent_ifs(k):
    return parse_script(
        " ".join(
            f'if v{i} == "on" {{ print "site {i} on"; }} else {{ print "site {i} off"; }}'
            for i in range(k)
        )
    )


@pytest.mark.criterion(3, "1 + 2k templates and 2^k path signatures for k <= 6")
@pytest.mark.parametrize("k", range(1, 7))
def test_criterion_3_branch_flow_counting(k):
    program = _independent_ifs(k)
    registry = fragment_brute(program)
    assert len(registry.templates) == 1 + 2 * k
    signatures = set()
    for combo in itertools.product(["on", "off"], repeat=k):
        env = {f"v{i}": v for i, v in enumerate(combo)}
        _, trace = trace_run(program, env)
        signatures.add(trace.events)
        result = generate_binding(program, env, registry, "main")
        assert plug(result.binding, registry.by_url()) == interpret(program, env)
    assert len(signatures) == 2**k


@pytest.mark.criterion(4, "arm of 49 literal bytes pruned, 50 kept, identity preserved")
@pytest.mark.parametrize("size,kept", [(49, False), (50, True)])
def test_criterion_4_size_pruning_boundary(size, kept):
    body = "b" * size
    program = parse_script(
        f'if v == "x" {{ print "{body}"; }} else {{ print "{"e" * 80}"; }} print v;'
    )
    registry = fragment({"main": program}, FragmentConfig(), mode="pruned")
    arm = registry.docs["main"].arms[(0, 0)]
    if kept:
        assert arm is not None
        assert registry.templates[arm].literal_bytes == 50
    else:
        assert arm is None
    for v in ("x", "y", "<gap>"):
        env = {"v": v}
        result = generate_binding(program, env, registry, "main")
        assert plug(result.binding, registry.by_url()) == escape_reserved(interpret(program, env))


@pytest.mark.criterion(5, "documents sharing an arm store one template")
def test_criterion_5_inter_document_dedup(tmp_path):
    shared = "<section>" + "s" * 60 + "</section>"
    a = parse_script(f'print "doc A"; if u == "1" {{ print "{shared}"; }}')
    b = parse_script(f'print "doc B"; if w == "2" {{ print "x"; }} else {{ print "{shared}"; }}')
    registry = fragment({"a": a, "b": b}, FragmentConfig(), mode="pruned")
    ta = registry.docs["a"].arms[(0, 0)]
    tb = registry.docs["b"].arms[(0, 1)]
    assert ta is not None and ta == tb
    save_registry(registry, tmp_path)
    stored = [parse_template(p.read_bytes()) for p in (tmp_path / "tpl").iterdir()]
    assert sum(1 for t in stored if serialize(t) == shared.encode()) == 1


@pytest.mark.criterion(6, "dominant path merged; its bindings strictly smaller")
def test_criterion_6_dominant_path_merging():
    program = parse_script(
        'print "<header>"; print user;'
        ' if plan == "free" { print "<p>Upgrade to premium for more storage.</p>"; }'
        ' else { print "<p>Thanks for subscribing.</p>"; }'
        ' if beta == "on" { print "<p>Beta features enabled.</p>"; } print "</body>";'
    )
    dominant = {"user": "ann", "plan": "free", "beta": "off"}
    other = {"user": "bob", "plan": "paid", "beta": "on"}
    traces = [trace_run(program, dominant, "main")[1]] * 90 + [
        trace_run(program, other, "main")[1]
    ] * 10
    stats = compute_stats(traces, program)
    signature = ((0, 0), (1, 1))
    assert stats.signature_freq[signature] == pytest.approx(0.9)
    registry = fragment({"main": program}, FragmentConfig(), {"main": stats}, mode="specialized")
    entry = registry.docs["main"]
    (merged,) = [tid for sig, tid in entry.specialized if sig == signature]
    assert b"Upgrade to premium" in serialize(registry.templates[merged])
    for user in ("ann", "carol", "<gap>"):
        env = {**dominant, "user": user}
        spec = generate_binding(program, env, registry, "main")
        root = generate_binding(program, env, registry, "main", force_root=True)
        assert spec.template == merged
        assert spec.binding_bytes < root.binding_bytes
        assert plug(spec.binding, registry.by_url()) == plug(root.binding, registry.by_url())


@pytest.mark.criterion(7, "demo workload: warm repeats fetch 0 bytes, steady state <= 0.5")
def test_criterion_7_cache_simulation():
    start = time.perf_counter()
    path = DEMO / "workload.json"
    workload, base = load_workload(path)
    program = parse_script((base / workload.script).read_text(encoding="utf-8"))
    assert len(workload.requests) == 100
    assert all(static_fraction(program, env) >= 0.7 for env in workload.requests)
    report = simulate_file(path)
    seen = []
    repeats = 0
    for env, row in zip(workload.requests, report.rows):
        if env in seen:
            repeats += 1
            assert row.template_bytes_fetched == 0
        seen.append(env)
    assert repeats > 0
    assert report.steady_state_ratio <= 0.5
    assert time.perf_counter() - start < 10


@pytest.mark.criterion(8, "fetch_render matches offline output; warm run skips /tpl/")
def test_criterion_8_transport(tmp_path):
    program = parse_script((DEMO / "catalog.ms").read_text(encoding="utf-8"))
    registry = fragment({"catalog": program}, FragmentConfig(), mode="pruned")
    env = {
        "member": "yes", "user": "dana", "promo": "on", "code": "SPRING",
        "category": "garden", "products": ["rake", "hoe", "<loop>"], "status": "ok",
    }
    offline = plug(generate_binding(program, env, registry, "catalog").binding, registry.by_url())
    log = AccessLog(tmp_path / "access.jsonl")
    query = "&".join(
        f"{k}={v}" for k, vals in env.items() for v in (vals if isinstance(vals, list) else [vals])
    ).replace("<", "%3C").replace(">", "%3E")
    with ServerThread(create_app(registry, {"catalog": program}, access_log=log)) as srv:
        url = f"{srv.base_url}/doc/catalog?{query}"
        cold = fetch_render(url, tmp_path / "cache")
        n_cold = len(log.entries())
        warm = fetch_render(url, tmp_path / "cache")
    assert cold == offline
    assert warm == offline
    warm_entries = log.entries()[n_cold:]
    assert sum(1 for e in warm_entries if e["path"].startswith("/tpl/")) == 0
    assert any(e["path"].startswith("/tpl/") for e in log.entries()[:n_cold])


_PIECES = ["<", ">", "/", "gap", "loop", "temp", " ", "1", "0", "12", "x", "é", "&lt;", "\n"]


@pytest.mark.criterion(9, "wire round trips on 1000 trees, escape idempotence on 1000 strings")
def test_criterion_9_wire_round_trips():
    rng = random.Random(SEED)
    for _ in range(1000):
        template = random_template(rng)
        assert parse_template(serialize(template)) == template
        binding = random_binding(rng)
        assert parse_binding(serialize(binding)) == binding
    for _ in range(1000):
        data = "".join(rng.choice(_PIECES) for _ in range(rng.randint(0, 30))).encode()
        once = escape_reserved(data)
        assert escape_reserved(once) == once
