"""Command line entry point: ``pointflow run|bench|serve|dag``.

Every config field can be overridden with a flag of the same dotted name,
e.g. ``--capacities.compute 4`` or ``--backend.seed 7``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .bench import MODES, emit_reports, run_ablation
from .config import Config, leaves, load_config
from .dag import build_point_dag, expand_to_stage_graph, topological_wavefronts
from .errors import BackendError, ConfigError, ParseError, PointflowError
from .expansion import DEPEXP, EXPANSION_MODES, NORMAL
from .keypoints import parse_keypoints, to_domain
from .pipeline import PipelineScheduler, run_query
from .workloads import FAMILIES, Workload, load_workload, synthetic_workload
from .wiring import build_backend, build_capacities, scheduler_options

log = logging.getLogger("pointflow")

EXIT_OK, EXIT_CONFIG, EXIT_BACKEND, EXIT_PARSE, EXIT_OTHER = 0, 2, 3, 4, 1
RUN_MODES = (NORMAL, *EXPANSION_MODES)

# convenience flag -> dotted config field
_SHORTCUTS = {
    "backend": "backend.kind",
    "mode": "scheduler.mode",
    "seed": "backend.seed",
    "scripts": "backend.scripts",
    "out": "output.dir",
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("-v", "--verbose", action="store_true")
    group = p.add_argument_group("config overrides")
    for dotted, default in leaves(Config()):
        group.add_argument(f"--{dotted}", dest=f"cfg:{dotted}", default=None, metavar="VALUE",
                           help=f"(default: {default!r})")
    p.add_argument("--backend", dest="short:backend", choices=("sim", "remote"), default=None)
    p.add_argument("--seed", dest="short:seed", default=None, metavar="N")
    p.add_argument("--scripts", dest="short:scripts", default=None, metavar="FILE", help="sim script book JSON")
    p.add_argument("--out", dest="short:out", default=None, metavar="DIR", help="output directory")


def _modes_arg(text: str) -> list[str]:
    modes = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in modes if m not in MODES]
    if bad or not modes:
        raise argparse.ArgumentTypeError(f"unknown mode(s) {', '.join(bad) or text!r}; choose from {', '.join(MODES)}")
    return modes


def _synthetic_arg(text: str) -> tuple[str, int]:
    family, _, n = text.partition(":")
    if family not in FAMILIES:
        raise argparse.ArgumentTypeError(f"family must be one of {', '.join(FAMILIES)}")
    try:
        count = int(n) if n else 4
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad query count {n!r}") from None
    return family, count


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pointflow", allow_abbrev=False,
                                     description="Dependency-aware key point expansion with pipelined scheduling.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="answer one query", allow_abbrev=False)
    _add_config_flags(run)
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--query")
    src.add_argument("--query-file")
    run.add_argument("--mode", dest="short:mode", choices=RUN_MODES, default=None, metavar="MODE")
    run.add_argument("--workload", help="JSONL workload whose scripts are loaded into the sim backend")

    bench = sub.add_parser("bench", help="run the mode ablation over a workload", allow_abbrev=False)
    _add_config_flags(bench)
    wl = bench.add_mutually_exclusive_group(required=True)
    wl.add_argument("--workload", help="JSONL workload file")
    wl.add_argument("--synthetic", type=_synthetic_arg, metavar="FAMILY[:N]",
                    help=f"generated workload, FAMILY in {', '.join(FAMILIES)}")
    bench.add_argument("--points", type=int, default=4, help="points per synthetic query")
    bench.add_argument("--tokens", type=int, default=100, help="tokens per synthetic point")
    bench.add_argument("--modes", type=_modes_arg, default=list(MODES), help="comma-separated modes")

    serve = sub.add_parser("serve", help="start the HTTP service", allow_abbrev=False)
    _add_config_flags(serve)
    serve.add_argument("--mode", dest="short:mode", choices=(*RUN_MODES, "pipsch"), default=None, metavar="MODE")
    serve.add_argument("--workload", help="JSONL workload whose scripts are loaded into the sim backend")

    dag = sub.add_parser("dag", help="inspect a key point file", allow_abbrev=False)
    dag.add_argument("file", help="key point JSON array")
    dag.add_argument("-v", "--verbose", action="store_true")
    return parser


def config_from_args(args: argparse.Namespace) -> Config:
    overrides = {}
    for key, value in vars(args).items():
        if value is None:
            continue
        if key.startswith("cfg:"):
            overrides[key[4:]] = value
        elif key.startswith("short:"):
            overrides[_SHORTCUTS[key[6:]]] = value
    return load_config(args.config, overrides)


def _workload_scripts(path: str | None):
    return load_workload(path).scripts() if path else None


def _write_timeline(out_dir: str, name: str, text: str) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text, encoding="utf-8")
    return path


def cmd_run(args, cfg: Config) -> int:
    if args.query is not None:
        query = args.query
    else:
        try:
            query = Path(args.query_file).read_text(encoding="utf-8").strip()
        except OSError as exc:
            raise ConfigError(f"cannot read query file: {exc}") from exc
    mode = cfg.scheduler.mode if cfg.scheduler.mode != "pipsch" else DEPEXP
    if mode not in RUN_MODES:
        raise ConfigError(f"scheduler.mode must be one of {', '.join(RUN_MODES)}")
    backend = build_backend(cfg, _workload_scripts(args.workload))
    job = run_query(query, backend, build_capacities(cfg), mode=mode, pipelined=False,
                    **scheduler_options(cfg))
    for w in job.warnings:
        print(f"warning: {w}", file=sys.stderr)
    path = _write_timeline(cfg.output.dir, "timeline.jsonl", job.timeline.to_jsonl())
    log.info("timeline written to %s", path)
    if job.error is not None:
        raise job.error
    sys.stdout.write(job.answer if job.answer.endswith("\n") else job.answer + "\n")
    return EXIT_OK


def _bench_workload(args) -> Workload:
    if args.workload:
        return load_workload(args.workload)
    family, n = args.synthetic
    return synthetic_workload(family, n, args.points, args.tokens, seed=0)


def cmd_bench(args, cfg: Config) -> int:
    workload = _bench_workload(args)
    scripts = workload.scripts()
    options = scheduler_options(cfg)
    reports = run_ablation(args.modes, workload.texts, lambda: build_backend(cfg, scripts),
                           build_capacities(cfg), workload.name, **options)
    written = emit_reports(reports, cfg.output.dir)
    for r in reports:
        speed = "" if r.speedup_vs_normal is None else f" speedup={r.speedup_vs_normal:.3f}"
        print(f"{r.mode:7s} tokens={r.tokens} makespan={r.makespan:.3f}{speed}")
    print(f"wrote {len(written)} files to {cfg.output.dir}")
    return EXIT_OK


def cmd_serve(args, cfg: Config) -> int:
    import uvicorn

    from .service import QueryService, create_app

    mode = cfg.scheduler.mode
    pipelined = cfg.scheduler.pipelined
    if mode == "pipsch":
        mode, pipelined = DEPEXP, True
    backend = build_backend(cfg, _workload_scripts(args.workload))
    scheduler = PipelineScheduler(backend, build_capacities(cfg), mode=mode, pipelined=pipelined,
                                  queue_limit=cfg.scheduler.queue_limit, **scheduler_options(cfg))
    s = cfg.service
    service = QueryService(scheduler, s.lru_size, s.spill_dir or None, s.gather_window)
    uvicorn.run(create_app(service), host=s.host, port=s.port, log_level="info")
    return EXIT_OK


def describe_dag(text: str) -> str:
    points, relations = to_domain(parse_keypoints(text))
    dag = build_point_dag(points, relations)
    graph = expand_to_stage_graph(dag)
    lines = ["points:"]
    lines += [f"  {p.id}: {p.instruction}" for p in dag.points.values()]
    lines.append("relations:")
    lines += [f"  {s} -> {t} ({k.value})" for s, t, k in sorted(dag.edges, key=lambda e: (e[0], e[1], e[2].value))]
    lines.append("stage edges:")
    lines += [f"  {a} -> {b}" for a, b in sorted(graph.edges)]
    lines.append("wavefronts:")
    for depth, front in enumerate(topological_wavefronts(graph)):
        lines.append(f"  {depth}: " + " ".join(str(s) for s in sorted(front)))
    return "\n".join(lines) + "\n"


def cmd_dag(args) -> int:
    try:
        text = Path(args.file).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {args.file}: {exc}") from exc
    sys.stdout.write(describe_dag(text))
    return EXIT_OK


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, BackendError):
        return EXIT_BACKEND
    if isinstance(exc, ParseError):
        return EXIT_PARSE
    cause = getattr(exc, "cause", None)
    if cause is not None and cause is not exc:
        return exit_code_for(cause)
    return EXIT_OTHER


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "dag":
            return cmd_dag(args)
        cfg = config_from_args(args)
        handler = {"run": cmd_run, "bench": cmd_bench, "serve": cmd_serve}[args.command]
        return handler(args, cfg)
    except PointflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except json.JSONDecodeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
