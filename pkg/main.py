import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from slugify import slugify

from data.csv_writer import write_csv
from data.report_writer import plain, write_session_report
from data.stream_writer import write_prototypes, write_stream
from src.config import (
    DEFAULTS,
    LOG_LEVEL,
    OUTPUT_DIR,
    PARAM_SYMBOLS,
    load_config,
    parse_override,
    parse_values,
)
from src.engine import run_session
from src.errors import CplncError, DimensionMismatchError
from src.harness import (
    SWEEPABLE,
    SyntheticSpec,
    generate_stream,
    run_ablation,
    run_sweep,
)
from src.parsing import file_digest, load_prototypes, load_report, load_stream
from src.report_helpers import SEPARATOR, build_cache_table, build_run_summary

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


# --------------------------------------------------
# HELPERS
# --------------------------------------------------


def _overrides(pairs: list[str] | None) -> dict:
    return dict(parse_override(text) for text in pairs or [])


def _file_echo(path: str) -> dict:
    return {"file": Path(path).name, "sha256": file_digest(path)}


def _synthetic_spec(args) -> SyntheticSpec:
    return SyntheticSpec(
        n_classes=args.classes,
        dim=args.dim,
        zipf_exponent=args.zipf,
        intra_class_noise=args.noise,
        view_jitter=args.jitter,
        n_samples=args.samples,
        textual_offset_noise=args.textual_noise,
        n_views=args.views,
        min_angle_deg=args.min_angle,
        seed=args.seed,
    ).validate()


def _write_json(path: Path, body: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(plain(body), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    logger.info("wrote %s", path)


# --------------------------------------------------
# COMMANDS
# --------------------------------------------------


def cmd_run(args):
    records, header = load_stream(args.stream)
    protos = load_prototypes(args.prototypes)

    if header["d"] != protos.shape[1]:
        raise DimensionMismatchError(
            f"stream has d={header['d']}, prototypes have d={protos.shape[1]}"
        )
    if header["C"] != protos.shape[0]:
        raise DimensionMismatchError(
            f"stream header says C={header['C']}, prototype file has {protos.shape[0]} classes"
        )

    params = load_config(args.config, _overrides(args.set))

    echo = {
        "stream": _file_echo(args.stream),
        "prototypes": _file_echo(args.prototypes),
    }
    if args.config is not None:
        echo["config_file"] = _file_echo(args.config)

    report = run_session(
        records,
        params,
        protos,
        trace_loss=args.trace_loss,
        trace_cache=args.trace_cache,
        config_echo=echo,
    )

    out = Path(args.out) if args.out else OUTPUT_DIR / f"report-{slugify(Path(args.stream).stem)}.jsonl"
    write_session_report(out, report, include_samples=not args.no_samples)

    print(SEPARATOR)
    print(build_run_summary(report.summary))
    print(f"\nReport written to {out}")


def cmd_generate(args):
    spec = _synthetic_spec(args)
    stream = generate_stream(spec)

    name = slugify(args.name or f"synthetic-c{spec.n_classes}-d{spec.dim}-seed{spec.seed}")
    out_dir = Path(args.out_dir) if args.out_dir else OUTPUT_DIR
    stream_path = out_dir / f"{name}-stream.jsonl"
    protos_path = out_dir / f"{name}-prototypes.jsonl"

    write_stream(
        stream_path,
        stream.records,
        n_classes=spec.n_classes,
        dim=spec.dim,
        n_views=spec.n_views,
    )
    write_prototypes(protos_path, stream.textual)

    print(f"Stream: {stream_path} ({len(stream.records)} samples)")
    print(f"Prototypes: {protos_path} ({spec.n_classes} classes)")


def cmd_ablate(args):
    spec = _synthetic_spec(args)
    base = load_config(args.config, _overrides(args.set)).with_overrides(
        n_views=spec.n_views
    )
    report = run_ablation(spec, n_seeds=args.seeds, base=base, progress=not args.no_progress)

    out_dir = Path(args.out_dir) if args.out_dir else OUTPUT_DIR
    write_csv(report.runs, out_dir / "ablation-runs.csv")
    write_csv(report.summary, out_dir / "ablation-summary.csv")
    _write_json(
        out_dir / "ablation.json",
        {
            "spec": asdict(spec),
            "base": base.to_dict(),
            "n_seeds": args.seeds,
            "summary": report.summary.to_dict(orient="records"),
            "runs": report.runs.to_dict(orient="records"),
        },
    )

    print(SEPARATOR)
    print(report.summary.to_string(index=False, float_format=lambda x: f"{x:.4f}"))
    print(f"\nAblation written to {out_dir}")


def cmd_sweep(args):
    spec = _synthetic_spec(args)
    base = load_config(args.config, _overrides(args.set)).with_overrides(
        n_views=spec.n_views
    )
    table = run_sweep(
        spec,
        base,
        args.knob,
        parse_values(args.values),
        args.seeds,
        progress=not args.no_progress,
    )

    out_dir = Path(args.out_dir) if args.out_dir else OUTPUT_DIR
    out = out_dir / f"sweep-{slugify(args.knob)}.csv"
    write_csv(table, out)

    print(SEPARATOR)
    print(table.to_string(index=False, float_format=lambda x: f"{x:.4f}"))
    print(f"\nSweep written to {out}")


def cmd_inspect_cache(args):
    print(build_cache_table(load_report(args.report)))


def cmd_params(args):
    for key, value in DEFAULTS.to_dict().items():
        print(f"{key:<24} {str(value):<10} {PARAM_SYMBOLS[key]}")


# --------------------------------------------------
# ENTRYPOINT
# --------------------------------------------------


def _add_config_flags(parser):
    parser.add_argument("--config", help="YAML file of hyperparameters")
    parser.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override one hyperparameter (repeatable, wins over --config)",
    )


def _add_synthetic_flags(parser):
    d = SyntheticSpec()
    parser.add_argument("--classes", type=int, default=d.n_classes)
    parser.add_argument("--dim", type=int, default=d.dim)
    parser.add_argument("--zipf", type=float, default=d.zipf_exponent)
    parser.add_argument("--noise", type=float, default=d.intra_class_noise)
    parser.add_argument("--jitter", type=float, default=d.view_jitter)
    parser.add_argument("--samples", type=int, default=d.n_samples)
    parser.add_argument("--textual-noise", type=float, default=d.textual_offset_noise)
    parser.add_argument("--views", type=int, default=d.n_views)
    parser.add_argument("--min-angle", type=float, default=d.min_angle_deg)
    parser.add_argument("--seed", type=int, default=d.seed)
    parser.add_argument("--out-dir", help=f"output directory (default {OUTPUT_DIR})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="main.py",
        description="Streaming test-time adaptation with a class-aware prototype cache.",
    )
    parser.add_argument(
        "--log-level",
        default=LOG_LEVEL,
        type=str.upper,
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="adapt over a stream and write a session report")
    run.add_argument("--stream", required=True)
    run.add_argument("--prototypes", required=True)
    _add_config_flags(run)
    run.add_argument("--out", help="report path (default out/report-<stream>.jsonl)")
    run.add_argument("--no-samples", action="store_true", help="omit per-sample records")
    run.add_argument("--trace-loss", action="store_true")
    run.add_argument("--trace-cache", action="store_true")
    run.set_defaults(handler=cmd_run)

    generate = sub.add_parser("generate", help="write a synthetic stream and prototypes")
    _add_synthetic_flags(generate)
    generate.add_argument("--name", help="file name prefix")
    generate.set_defaults(handler=cmd_generate)

    ablate = sub.add_parser("ablate", help="four-way module ablation over paired seeds")
    _add_synthetic_flags(ablate)
    _add_config_flags(ablate)
    ablate.add_argument("--seeds", type=int, default=5)
    ablate.add_argument("--no-progress", action="store_true")
    ablate.set_defaults(handler=cmd_ablate)

    sweep = sub.add_parser("sweep", help="sensitivity of the metrics to one knob")
    _add_synthetic_flags(sweep)
    _add_config_flags(sweep)
    sweep.add_argument("--knob", required=True, choices=SWEEPABLE)
    sweep.add_argument("--values", required=True, help="comma-separated, e.g. 0,0.5,1")
    sweep.add_argument("--seeds", type=int, default=3)
    sweep.add_argument("--no-progress", action="store_true")
    sweep.set_defaults(handler=cmd_sweep)

    inspect = sub.add_parser("inspect-cache", help="capacity and dead-class table of a report")
    inspect.add_argument("report")
    inspect.set_defaults(handler=cmd_inspect_cache)

    params = sub.add_parser("params", help="list hyperparameters and their defaults")
    params.set_defaults(handler=cmd_params)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format=LOG_FORMAT)

    try:
        args.handler(args)
    except CplncError as exc:
        print(f"error {exc.code}: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error FileNotFound: {exc.filename}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
