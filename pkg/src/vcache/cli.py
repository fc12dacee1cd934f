"""``vcache`` command line."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .assembler import fetch_list, generate_list, plug
from .bindinggen import generate_binding
from .branchstats import TraceStore, compute_stats, dominant_signatures
from .docmodel import parse_binding, serialize
from .fragmentor import MODES, fragment
from .harness import simulate_file
from .miniscript import load_env, parse_script
from .registry import FragmentConfig, load_registry, save_registry
from .service import AccessLog
from .transport import DiskCache, fetch_render, serve


class _DirFetcher:
    def __init__(self, directory: Path) -> None:
        self.cache = DiskCache(directory)

    def fetch(self, url: str) -> bytes:
        return serialize(self.cache.get(url))


def _config(args) -> FragmentConfig:
    values = {
        "min_template_bytes": args.min_bytes,
        "dominant_path_threshold": args.theta,
        "rare_arm_threshold": args.phi,
        "min_runs": args.min_runs,
    }
    return FragmentConfig(**{k: v for k, v in values.items() if v is not None})


def _programs(registry_dir: str):
    registry, sources = load_registry(registry_dir)
    programs = {name: parse_script(src) for name, src in sources.items()}
    return registry, programs


def cmd_fragment(args) -> int:
    config = _config(args)
    sources = {Path(s).stem: Path(s).read_text(encoding="utf-8") for s in args.scripts}
    programs = {name: parse_script(src) for name, src in sources.items()}
    stats = None
    if args.traces:
        store = TraceStore(args.traces)
        stats = {}
        for name, program in programs.items():
            traces = store.read(name)
            if traces:
                stats[name] = compute_stats(traces, program)
    registry = fragment(programs, config, stats, mode=args.mode)
    save_registry(registry, args.out, sources)
    for name, entry in registry.docs.items():
        inline = sum(1 for t in entry.arms.values() if t is None)
        print(
            f"{name}: root {entry.root} arms {len(entry.arms)} "
            f"(inline {inline}) specialized {len(entry.specialized)}"
        )
    print(f"{len(registry.templates)} templates written to {args.out}")
    return 0


def cmd_stats(args) -> int:
    registry, programs = _programs(args.registry)
    store = TraceStore(args.traces)
    out = {}
    for name, program in programs.items():
        traces = store.read(name)
        if not traces:
            continue
        stats = compute_stats(traces, program)
        out[name] = {
            "run_count": stats.run_count,
            "arm_freq": [[s, a, f] for (s, a), f in stats.arm_freq.items()],
            "signature_freq": [
                {"signature": [list(p) for p in sig], "freq": f}
                for sig, f in sorted(stats.signature_freq.items(), key=lambda kv: -kv[1])
            ],
            "dominant": [
                [list(p) for p in sig]
                for sig in dominant_signatures(stats, program, registry.config.theta)
            ],
        }
    print(json.dumps(out, indent=2))
    return 0


def cmd_bindgen(args) -> int:
    registry, programs = _programs(args.registry)
    if args.doc not in programs:
        raise LookupError(f"no script stored for document {args.doc!r}")
    env = load_env(json.loads(Path(args.env).read_text(encoding="utf-8")))
    result = generate_binding(programs[args.doc], env, registry, args.doc)
    if args.record:
        TraceStore(args.record, programs).append(result.trace)
    data = serialize(result.binding)
    if args.out:
        Path(args.out).write_bytes(data)
    else:
        sys.stdout.buffer.write(data)
    return 0


def cmd_plug(args) -> int:
    binding = parse_binding(Path(args.binding).read_bytes())
    urls = generate_list(binding)
    cache = DiskCache(args.cache)
    if args.registry:
        templates = fetch_list(urls, cache, _DirFetcher(Path(args.registry) / "tpl"))
    else:
        templates = {u: cache.get(u) for u in urls if cache.has(u)}
    sys.stdout.buffer.write(plug(binding, templates))
    return 0


def cmd_simulate(args) -> int:
    overrides = {"mode": args.mode} if args.mode else {}
    report = simulate_file(args.workload, **overrides)
    blob = report.model_dump_json(indent=2)
    if args.report:
        Path(args.report).write_text(blob, encoding="utf-8")
    if args.csv:
        Path(args.csv).write_text(report.rows_csv(), encoding="utf-8")
    if not args.report:
        print(blob)
    else:
        print(
            f"{report.requests} requests, baseline {report.baseline_total} B, "
            f"vcache {report.vcache_total} B, savings {report.savings_ratio:.3f}, "
            f"steady-state ratio {report.steady_state_ratio:.3f}"
        )
    return 0


def cmd_serve(args) -> int:
    registry, programs = _programs(args.registry)
    log = AccessLog(args.access_log) if args.access_log else None
    traces = TraceStore(args.traces, programs) if args.traces else None
    serve(registry, programs, args.addr, access_log=log, traces=traces)
    return 0


def cmd_fetch(args) -> int:
    sys.stdout.buffer.write(fetch_render(args.url, args.cache))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vcache", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fragment", help="decompose scripts into a template registry")
    p.add_argument("scripts", nargs="+")
    p.add_argument("--out", default="registry")
    p.add_argument("--min-bytes", type=int)
    p.add_argument("--theta", type=float)
    p.add_argument("--phi", type=float)
    p.add_argument("--min-runs", type=int)
    p.add_argument("--traces", help="JSON Lines trace store used for specialization")
    p.add_argument("--mode", choices=MODES, default="pruned")
    p.set_defaults(func=cmd_fragment)

    p = sub.add_parser("stats", help="branch-flow statistics from a trace store")
    p.add_argument("registry")
    p.add_argument("--traces", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("bindgen", help="generate the binding for one request")
    p.add_argument("registry")
    p.add_argument("doc")
    p.add_argument("--env", required=True)
    p.add_argument("--out")
    p.add_argument("--record", help="append the run trace to this store")
    p.set_defaults(func=cmd_bindgen)

    p = sub.add_parser("plug", help="assemble a binding with cached templates")
    p.add_argument("binding")
    p.add_argument("--cache", required=True)
    p.add_argument("--registry", help="fill cache misses from this registry")
    p.set_defaults(func=cmd_plug)

    p = sub.add_parser("simulate", help="replay a workload and report byte savings")
    p.add_argument("workload")
    p.add_argument("--report")
    p.add_argument("--csv")
    p.add_argument("--mode", choices=MODES)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("serve", help="serve templates and bindings over HTTP")
    p.add_argument("registry")
    p.add_argument("--addr", default="127.0.0.1:8000")
    p.add_argument("--access-log")
    p.add_argument("--traces")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("fetch", help="fetch a document, cache templates, print HTML")
    p.add_argument("url")
    p.add_argument("--cache", required=True)
    p.set_defaults(func=cmd_fetch)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
