"""Branch-flow statistics gathered from run traces.

Traces are appended to a JSON Lines store, one object per executed request::

    {"doc": "catalog", "events": [[0, 1], [2, 0]], "loops": [[1, 3]], "env": "<sha256>"}
"""

from __future__ import annotations

import json
import os
import threading
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping

from .miniscript import If, Program, RunTrace
from .registry import Signature


class StatsError(Exception):
    pass


class UnknownSite(StatsError):
    pass


class EmptyStore(StatsError):
    pass


class TraceStore:
    """Append-only JSON Lines trace file.

    ``programs`` (doc name -> Program), when given, is used to reject traces
    that mention sites the document does not have.
    """

    def __init__(self, path: str | Path, programs: Mapping[str, Program] | None = None) -> None:
        self.path = Path(path)
        self.programs = programs
        self._lock = threading.Lock()

    def append(self, trace: RunTrace) -> None:
        if self.programs is not None:
            _validate(trace, self.programs)
        line = json.dumps(
            {
                "doc": trace.doc,
                "events": [list(e) for e in trace.events],
                "loops": [list(c) for c in trace.loop_counts],
                "env": trace.env_digest,
            },
            separators=(",", ":"),
        )
        data = (line + "\n").encode("utf-8")
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            fd = os.open(self.path, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
            try:
                os.write(fd, data)
            finally:
                os.close(fd)

    def read(self, doc: str | None = None) -> list[RunTrace]:
        """Snapshot read: only bytes present when the read started are parsed."""
        if not self.path.exists():
            return []
        size = self.path.stat().st_size
        with open(self.path, "rb") as fh:
            blob = fh.read(size)
        # a concurrent append may have left a partial final line
        blob = blob[: blob.rfind(b"\n") + 1]
        traces = []
        for raw in blob.splitlines():
            if not raw.strip():
                continue
            obj = json.loads(raw)
            if doc is not None and obj["doc"] != doc:
                continue
            traces.append(
                RunTrace(
                    obj["doc"],
                    tuple((s, a) for s, a in obj["events"]),
                    tuple((s, c) for s, c in obj["loops"]),
                    obj.get("env", ""),
                )
            )
        return traces

    def run_count(self, doc: str | None = None) -> int:
        return len(self.read(doc))


def _validate(trace: RunTrace, programs: Mapping[str, Program]) -> None:
    program = programs.get(trace.doc)
    if program is None:
        raise UnknownSite(f"unknown document {trace.doc!r}")
    for site, arm in trace.events:
        info = program.sites.get(site)
        if info is None or not isinstance(info.stmt, If) or arm not in (0, 1):
            raise UnknownSite(f"{trace.doc}: no branch site {site} arm {arm}")
    for site, count in trace.loop_counts:
        info = program.sites.get(site)
        if info is None or isinstance(info.stmt, If) or count < 0:
            raise UnknownSite(f"{trace.doc}: no loop site {site}")


def record_run(store: TraceStore, trace: RunTrace) -> None:
    store.append(trace)


@dataclass
class PathStats:
    run_count: int
    arm_freq: dict = field(default_factory=dict)
    """``(site, arm) -> fraction of runs``; loop-nested sites split a run's weight."""
    signature_counts: dict = field(default_factory=dict)
    """Full per-run signature over specializable sites -> number of runs."""

    @property
    def signature_freq(self) -> dict:
        return {sig: n / self.run_count for sig, n in self.signature_counts.items()}

    def support(self, sig: Signature) -> float:
        """Fraction of all runs whose signature contains every pair of ``sig``."""
        want = set(sig)
        hits = sum(n for full, n in self.signature_counts.items() if want.issubset(full))
        return hits / self.run_count


def compute_stats(
    traces: TraceStore | Iterable[RunTrace], program: Program, doc: str | None = None
) -> PathStats:
    if isinstance(traces, TraceStore):
        traces = traces.read(doc)
    elif doc is not None:
        traces = [t for t in traces if t.doc == doc]
    else:
        traces = list(traces)
    if not traces:
        raise EmptyStore("no traces to compute statistics from")
    specializable = set(program.specializable_sites())
    weight: dict = defaultdict(float)
    sigs: Counter = Counter()
    for trace in traces:
        per_site: dict = defaultdict(Counter)
        for site, arm in trace.events:
            per_site[site][arm] += 1
        for site, arms in per_site.items():
            total = sum(arms.values())
            for arm, n in arms.items():
                weight[(site, arm)] += n / total
        sig = tuple(sorted((s, a) for s, a in trace.events if s in specializable))
        sigs[sig] += 1
    n = len(traces)
    return PathStats(
        run_count=n,
        arm_freq={k: w / n for k, w in sorted(weight.items())},
        signature_counts=dict(sigs),
    )


def _closed(sig: Signature, program: Program) -> bool:
    chosen = dict(sig)
    for site in chosen:
        parent = program.sites[site].parent
        if parent is not None and chosen.get(parent[0]) != parent[1]:
            return False
    return True


def dominant_signatures(stats: PathStats, program: Program, theta: float) -> list[Signature]:
    """Signatures worth a merged template.

    Each observed full signature is kept when its frequency reaches ``theta``;
    otherwise its largest restriction that does is kept instead, ties going to
    the lexicographically lowest site set. A restriction must be closed under
    nesting (a fixed site's enclosing branch is fixed to the arm containing
    it), since otherwise the site's content never appears in the merged
    template.
    """
    chosen: dict[Signature, None] = {}
    for full in sorted(stats.signature_counts):
        if not full:
            continue
        if stats.support(full) >= theta:
            chosen.setdefault(full, None)
            continue
        items = [p for p in full if stats.support((p,)) >= theta]
        best = None
        for size in range(len(items), 0, -1):
            for cand in combinations(items, size):
                if _closed(cand, program) and stats.support(cand) >= theta:
                    best = cand
                    break
            if best is not None:
                break
        if best is not None:
            chosen.setdefault(best, None)
    return list(chosen)
