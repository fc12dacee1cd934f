import json
import threading
from itertools import combinations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vcache.branchstats import (
    EmptyStore,
    TraceStore,
    UnknownSite,
    compute_stats,
    dominant_signatures,
    record_run,
)
from vcache.miniscript import RunTrace, parse_script, trace_run

TWO_SITES = parse_script('if a == "x" { print "A"; } if b == "y" { print "B"; }')
NESTED = parse_script(
    'if a == "x" { if b == "y" { print "1"; } } for i in xs { if i == "k" { print "K"; } }'
)


def trace(events, doc="d", loops=()):
    return RunTrace(doc, tuple(events), tuple(loops), "")


def test_record_and_count(tmp_path):
    store = TraceStore(tmp_path / "traces.jsonl")
    record_run(store, trace([(0, 0)]))
    assert store.run_count() == 1
    for i in range(99):
        record_run(store, trace([(0, i % 2)]))
    assert store.run_count() == 100


def test_store_reads_back_in_order(tmp_path):
    store = TraceStore(tmp_path / "t.jsonl")
    written = [trace([(0, i % 2), (1, 0)], loops=[(2, i)]) for i in range(20)]
    for t in written:
        store.append(t)
    assert store.read() == written
    line = json.loads((tmp_path / "t.jsonl").read_text().splitlines()[0])
    assert set(line) == {"doc", "events", "loops", "env"}


def test_store_ignores_partial_tail(tmp_path):
    path = tmp_path / "t.jsonl"
    store = TraceStore(path)
    store.append(trace([(0, 0)]))
    with open(path, "ab") as fh:
        fh.write(b'{"doc": "d", "ev')
    assert len(store.read()) == 1


def test_store_filters_by_doc(tmp_path):
    store = TraceStore(tmp_path / "t.jsonl")
    store.append(trace([(0, 0)], doc="a"))
    store.append(trace([(0, 1)], doc="b"))
    assert [t.doc for t in store.read("b")] == ["b"]


def test_unknown_site_rejected(tmp_path):
    store = TraceStore(tmp_path / "t.jsonl", {"d": TWO_SITES})
    with pytest.raises(UnknownSite):
        store.append(trace([(7, 0)]))
    with pytest.raises(UnknownSite):
        store.append(trace([(0, 2)]))
    with pytest.raises(UnknownSite):
        store.append(trace([(0, 0)], doc="other"))
    with pytest.raises(UnknownSite):
        store.append(trace([], loops=[(0, 1)]))
    store.append(trace([(0, 0), (1, 1)]))
    assert store.run_count() == 1


def test_concurrent_appends(tmp_path):
    store = TraceStore(tmp_path / "t.jsonl")

    def worker(k):
        for i in range(50):
            store.append(trace([(0, (k + i) % 2)]))

    threads = [threading.Thread(target=worker, args=(k,)) for k in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert store.run_count() == 200


def test_stats_single_dominant():
    stats = compute_stats([trace([(0, 0)])] * 10, parse_script('if a == "x" { }'))
    assert stats.arm_freq[(0, 0)] == 1.0
    assert stats.signature_freq[((0, 0),)] == 1.0


def test_stats_hand_enumerated():
    runs = [trace([(0, 0), (1, 1)])] * 6 + [trace([(0, 1), (1, 1)])] * 4
    stats = compute_stats(runs, TWO_SITES)
    assert stats.run_count == 10
    assert stats.signature_freq[((0, 0), (1, 1))] == 0.6
    assert stats.signature_freq[((0, 1), (1, 1))] == 0.4
    assert stats.support(((1, 1),)) == 1.0
    assert stats.support(((0, 0),)) == 0.6
    assert stats.arm_freq == {(0, 0): 0.6, (0, 1): 0.4, (1, 1): 1.0}


def test_loop_sites_excluded_from_signatures():
    _, t = trace_run(NESTED, {"a": "x", "b": "y", "xs": ["k", "m"]}, "d")
    stats = compute_stats([t], NESTED)
    assert list(stats.signature_freq) == [((0, 0), (1, 0))]
    # a loop site's arms share the run's weight
    assert stats.arm_freq[(3, 0)] == 0.5
    assert stats.arm_freq[(3, 1)] == 0.5


def test_stats_from_store(tmp_path):
    store = TraceStore(tmp_path / "t.jsonl")
    for t in [trace([(0, 0), (1, 1)])] * 3:
        store.append(t)
    store.append(trace([(0, 0)], doc="other"))
    assert compute_stats(store, TWO_SITES, doc="d").run_count == 3
    assert compute_stats(store, TWO_SITES, doc="d") == compute_stats(store, TWO_SITES, doc="d")


def test_empty_store(tmp_path):
    with pytest.raises(EmptyStore):
        compute_stats(TraceStore(tmp_path / "none.jsonl"), TWO_SITES)


def test_dominant_full_signature():
    runs = [trace([(0, 0), (1, 1)])] * 9 + [trace([(0, 1), (1, 0)])]
    assert dominant_signatures(compute_stats(runs, TWO_SITES), TWO_SITES, 0.6) == [((0, 0), (1, 1))]


def test_dominant_falls_back_to_restriction():
    runs = [trace([(0, 0), (1, 1)])] * 5 + [trace([(0, 1), (1, 1)])] * 5
    sigs = dominant_signatures(compute_stats(runs, TWO_SITES), TWO_SITES, 0.6)
    assert sigs == [((1, 1),)]


def test_dominant_nothing_passes():
    runs = [trace([(0, 0), (1, 0)])] * 5 + [trace([(0, 1), (1, 1)])] * 5
    assert dominant_signatures(compute_stats(runs, TWO_SITES), TWO_SITES, 0.6) == []


def test_restriction_per_signature():
    prog = parse_script('if a == "x" { } if b == "x" { } if c == "x" { }')
    # (0,0), (1,0), (2,0) each hold in 7/10 runs; no pair reaches 0.6
    runs = (
        [trace([(0, 0), (1, 0), (2, 1)])] * 3
        + [trace([(0, 0), (1, 1), (2, 0)])] * 2
        + [trace([(0, 1), (1, 0), (2, 0)])] * 2
        + [trace([(0, 0), (1, 0), (2, 0)])] * 2
        + [trace([(0, 1), (1, 1), (2, 0)])] * 1
    )
    stats = compute_stats(runs, prog)
    assert stats.support(((0, 0), (1, 0))) == 0.5
    assert max(
        stats.support(pair)
        for pair in [((0, 0), (1, 0)), ((0, 0), (2, 0)), ((1, 0), (2, 0))]
    ) == 0.5
    sigs = dominant_signatures(stats, prog, 0.6)
    # (0,0,2,1) and (0,0,1,0,2,0) tie between singles and take the lowest site;
    # (0,1,1,0,2,0) can only keep (1,0); (0,1,1,1,2,0) only (2,0)
    assert sorted(sigs) == [((0, 0),), ((1, 0),), ((2, 0),)]


def test_restriction_must_be_nesting_closed():
    # site 1 lives inside arm 0 of site 0
    runs = [trace([(0, 0), (1, 0)])] * 7 + [trace([(0, 1)])] * 3
    sigs = dominant_signatures(compute_stats(runs, NESTED), NESTED, 0.6)
    assert sigs == [((0, 0), (1, 0))]
    runs = [trace([(0, 0), (1, 0)])] * 5 + [trace([(0, 0), (1, 1)])] * 5
    sigs = dominant_signatures(compute_stats(runs, NESTED), NESTED, 0.6)
    assert sigs == [((0, 0),)]


signatures = st.lists(
    st.tuples(st.sampled_from([0, 1]), st.sampled_from([0, 1]), st.sampled_from([0, 1])),
    min_size=1,
    max_size=20,
)
THREE_SITES = parse_script('if a == "x" { } if b == "x" { } if c == "x" { }')


@settings(max_examples=200)
@given(signatures)
def test_support_monotone_under_restriction(rows):
    runs = [trace([(0, a), (1, b), (2, c)]) for a, b, c in rows]
    stats = compute_stats(runs, THREE_SITES)
    full_sigs = {((0, a), (1, b), (2, c)) for a, b, c in rows}
    for full in full_sigs:
        for size in range(len(full) + 1):
            for sub in combinations(full, size):
                # brute-force count straight from the run list
                brute = sum(1 for t in runs if set(sub) <= set(t.events)) / len(runs)
                assert stats.support(sub) == pytest.approx(brute)
                for extra in full:
                    if extra not in sub:
                        ext = tuple(sorted(sub + (extra,)))
                        assert stats.support(sub) >= stats.support(ext)
    for site in range(3):
        assert sum(stats.arm_freq.get((site, a), 0.0) for a in (0, 1)) == pytest.approx(1.0)
