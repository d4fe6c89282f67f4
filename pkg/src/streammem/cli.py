"""Command-line harness.

Subcommands: ingest a frame stream into a run directory, replay timestamped
questions against it, compare segmentation policies, generate synthetic
streams, summarize run stats, and run the advantage/objective batch kernel.

Exit codes: 0 ok, 1 config error, 2 data error, 3 backend error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

from .backends import (
    BACKEND_URL_ENV,
    HttpBackend,
    MockCaptioner,
    MockDetector,
    MockEmbedder,
    MockOcr,
    PerceptionFixtures,
    ScriptedPolicy,
)
from .errors import BackendError, ConfigError, DataFormatError, StreamMemError, StreamOrderError
from .grpo import process_groups_file
from .replay import load_questions, replay_run
from .runstate import IngestConfig, RunState, run_ingest
from .synthetic import StreamSpec, write_stream

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_BACKEND = 3


@dataclass
class Backends:
    captioner: object
    embedder: object
    ocr: object
    detector: object


def _find_fixtures(*candidates: Path | None) -> PerceptionFixtures:
    for path in candidates:
        if path is not None and path.is_file():
            return PerceptionFixtures.load(path)
    return PerceptionFixtures()


def _make_backends(args, *fixture_candidates: Path | None) -> Backends:
    if args.backend == "http":
        http = HttpBackend(base_url=args.backend_url, timeout_s=args.backend_timeout)
        return Backends(captioner=http, embedder=http, ocr=http, detector=http)
    fixtures = _find_fixtures(
        Path(args.fixtures) if getattr(args, "fixtures", None) else None,
        *fixture_candidates,
    )
    return Backends(
        captioner=MockCaptioner(),
        embedder=MockEmbedder(),
        ocr=MockOcr(fixtures),
        detector=MockDetector(fixtures),
    )


def _make_policy(spec: str, args):
    if spec == "http":
        return HttpBackend(base_url=args.backend_url, timeout_s=args.backend_timeout)
    if spec.startswith("scripted:"):
        return ScriptedPolicy.from_file(spec.split(":", 1)[1])
    raise ConfigError(f"--policy must be scripted:FILE or http, got {spec!r}")


def _config_from_args(args, policy: str = "event") -> IngestConfig:
    return IngestConfig(
        k=args.k,
        delta=args.delta,
        min_len=args.min_len,
        bins=args.bins,
        seed=args.seed,
        fps=args.fps,
        policy=policy,
        archive_on_boundary=args.archive_on_boundary,
        checkpoint_every=args.checkpoint_every,
    )


def _resolve_frames_dir(args, run_dir: Path) -> Path:
    if args.frames and args.synthetic:
        raise ConfigError("give --frames or --synthetic, not both")
    if args.synthetic:
        spec = StreamSpec.from_file(args.synthetic)
        return write_stream(spec, run_dir)["frames_dir"]
    if not args.frames:
        raise ConfigError("one of --frames or --synthetic is required")
    frames_dir = Path(args.frames)
    if not frames_dir.is_dir():
        raise DataFormatError(f"frames directory not found: {frames_dir}")
    return frames_dir


def cmd_ingest(args) -> int:
    run_dir = Path(args.out)
    run_dir.mkdir(parents=True, exist_ok=True)
    config = _config_from_args(args, policy=args.policy)
    config.validate()
    frames_dir = _resolve_frames_dir(args, run_dir)
    backends = _make_backends(args, run_dir / "fixtures" / "perception.json",
                              frames_dir.parent / "fixtures" / "perception.json")
    state = run_ingest(frames_dir, run_dir, config, backends.captioner, backends.embedder)
    print(f"ingested {state.frame_count} frames into {run_dir}")
    print(f"boundaries at stream indices: {state.boundaries}")
    return EXIT_OK


def cmd_replay(args) -> int:
    run_state = RunState.open(Path(args.run))
    questions = load_questions(args.questions)
    backends = _make_backends(
        args,
        run_state.run_dir / "fixtures" / "perception.json",
        run_state.frames_dir.parent / "fixtures" / "perception.json",
    )
    policy = _make_policy(args.policy, args)

    reports_dir = Path(args.report_dir) if args.report_dir else run_state.run_dir / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    trajectories_path = reports_dir / "trajectories.jsonl"
    with trajectories_path.open("w") as traj_fh:
        report = replay_run(
            run_state,
            questions,
            policy,
            backends.captioner,
            backends.embedder,
            backends.ocr,
            backends.detector,
            max_turns=args.max_turns,
            attach_images=(args.policy == "http"),
            trajectory_sink=lambda t: traj_fh.write(
                json.dumps(t.to_record(), sort_keys=True) + "\n"
            ),
        )
    report.policy = args.policy
    (reports_dir / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    (reports_dir / "report.txt").write_text(report.to_table() + "\n")
    (reports_dir / "series.csv").write_text(report.series_csv())
    print(report.to_table())
    return EXIT_OK


def cmd_compare(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    policies = [p.strip() for p in args.policies.split(",") if p.strip()]
    if not policies:
        raise ConfigError("--policies must name at least one segmentation policy")

    comparison: dict[str, dict] = {}
    for policy_name in policies:
        config = _config_from_args(args, policy=policy_name)
        config.validate()
        slug = policy_name.replace(":", "_").replace(".", "_")
        run_dir = out_dir / slug
        run_dir.mkdir(parents=True, exist_ok=True)
        frames_dir = _resolve_frames_dir(args, run_dir)
        backends = _make_backends(args, run_dir / "fixtures" / "perception.json",
                                  frames_dir.parent / "fixtures" / "perception.json")
        state = run_ingest(frames_dir, run_dir, config, backends.captioner, backends.embedder)
        stats = json.loads((run_dir / "stats.json").read_text())
        entry = {"stats": stats}
        if args.questions:
            questions = load_questions(args.questions)
            policy = _make_policy(args.policy, args)
            report = replay_run(
                state,
                questions,
                policy,
                backends.captioner,
                backends.embedder,
                backends.ocr,
                backends.detector,
                max_turns=args.max_turns,
            )
            report.policy = args.policy
            entry["accuracy"] = report.accuracy
            entry["report"] = report.to_dict()
        comparison[policy_name] = entry

    (out_dir / "comparison.json").write_text(json.dumps(comparison, indent=2) + "\n")
    header = f"{'policy':<12} {'events':>7} {'evictions':>9} {'accept_rate':>11}" + (
        f" {'accuracy':>9}" if args.questions else ""
    )
    print(header)
    print("-" * len(header))
    for name, entry in comparison.items():
        stats = entry["stats"]
        row = (
            f"{name:<12} {stats['events_created']:>7d} {stats['evictions']:>9d} "
            f"{stats['reservoir_accept_rate']:>11.3f}"
        )
        if args.questions:
            row += f" {entry['accuracy']:>9.4f}"
        print(row)
    return EXIT_OK


def cmd_synthetic(args) -> int:
    spec = StreamSpec.from_file(args.spec)
    paths = write_stream(spec, Path(args.out))
    print(f"wrote {spec.total_frames()} frames to {paths['frames_dir']}")
    print(f"fixtures: {paths['fixtures']}")
    print(f"boundaries: {paths['boundaries']}")
    return EXIT_OK


def cmd_stats(args) -> int:
    run_dir = Path(args.run)
    stats_path = run_dir / "stats.json"
    if not stats_path.is_file():
        raise DataFormatError(f"no stats.json under {run_dir}")
    stats = json.loads(stats_path.read_text())
    if args.json:
        print(json.dumps(stats, indent=2))
        return EXIT_OK
    width = max(len(k) for k in stats)
    for key, value in stats.items():
        if isinstance(value, float):
            print(f"{key:<{width}}  {value:.4f}")
        else:
            print(f"{key:<{width}}  {value}")
    return EXIT_OK


def cmd_grpo(args) -> int:
    count = process_groups_file(args.infile, args.outfile)
    print(f"processed {count} group(s) -> {args.outfile}")
    return EXIT_OK


def _add_backend_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", choices=["mock", "http"], default="mock")
    p.add_argument("--backend-url", default=None,
                   help=f"HTTP backend base URL (default ${BACKEND_URL_ENV})")
    p.add_argument("--backend-timeout", type=float, default=30.0)
    p.add_argument("--fixtures", default=None, help="perception fixtures JSON for mock backends")


def _add_ingest_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--frames", default=None, help="frame directory with meta.jsonl sidecar")
    p.add_argument("--synthetic", default=None, help="synthetic stream spec JSON")
    p.add_argument("--k", type=int, default=32)
    p.add_argument("--delta", type=float, default=0.2)
    p.add_argument("--min-len", dest="min_len", type=int, default=8)
    p.add_argument("--bins", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fps", type=float, default=1.0)
    p.add_argument("--archive-on-boundary", action="store_true")
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int, default=100)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="streammem", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="ingest a stream into a run directory")
    _add_ingest_flags(p)
    p.add_argument("--policy", default="event", help="segmentation policy: event or fixed:SECONDS")
    p.add_argument("--out", required=True, help="run directory to create")
    _add_backend_flags(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("replay", help="answer timestamped questions against a run")
    p.add_argument("--run", required=True)
    p.add_argument("--questions", required=True)
    p.add_argument("--policy", required=True, help="scripted:FILE or http")
    p.add_argument("--max-turns", dest="max_turns", type=int, default=8)
    p.add_argument("--report-dir", default=None)
    _add_backend_flags(p)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("compare", help="compare segmentation policies on one stream")
    _add_ingest_flags(p)
    p.add_argument("--policies", default="event,fixed:30")
    p.add_argument("--questions", default=None)
    p.add_argument("--policy", default="scripted:/dev/null", help="answer policy when --questions given")
    p.add_argument("--max-turns", dest="max_turns", type=int, default=8)
    p.add_argument("--out", required=True)
    _add_backend_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("synthetic", help="generate a synthetic frame stream")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synthetic)

    p = sub.add_parser("stats", help="print memory stats for a run")
    p.add_argument("--run", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("grpo", help="batch advantage/objective computation over groups.jsonl")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", dest="outfile", required=True)
    p.set_defaults(func=cmd_grpo)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, StreamOrderError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except StreamMemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
