"""Command-line front end.

Thin by design: flags are parsed here, everything else happens in
:mod:`oxdr.ops`, and typed errors map onto a fixed exit-code taxonomy
so shell pipelines get stable failure semantics:

    0  success
    1  usage or configuration problem
    2  I/O failure
    3  invalid data (decode errors, validation violations)

Relative output paths resolve against ``$OXDR_OUT_DIR`` when it is set.
"""

from __future__ import annotations

import argparse
import json
import os
import signal
import sys
import threading
from dataclasses import asdict
from typing import Optional, Sequence

from . import ops
from .errors import (
    AnalysisError,
    ConfigError,
    DecodeError,
    EmptySelectionError,
    OxdrError,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_DATA = 3

OUT_DIR_ENV = "OXDR_OUT_DIR"


class _UsageError(Exception):
    def __init__(self, message: str = ""):
        super().__init__(message)
        self.message = message


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; this toolkit reserves 2
    # for I/O, so usage problems are remapped to 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _out_path(path: str) -> str:
    base = os.environ.get(OUT_DIR_ENV)
    if base and not os.path.isabs(path):
        return os.path.join(base, path)
    return path


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="oxdr",
                     description="Record, inspect, convert, and export "
                                 "multimodal device telemetry.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("record-sim", parents=[], help="record a simulated session",
                       description="Run the simulated device rig through the "
                                   "fixed-rate recorder into a new file.")
    p.add_argument("--spec", required=True, help="sim session config (.simspec)")
    p.add_argument("--rate", type=float, required=True, help="polling rate in Hz")
    p.add_argument("--duration", type=float, default=None,
                   help="session length in seconds (realtime default: until Ctrl-C)")
    p.add_argument("-o", "--output", required=True, help="output recording path")
    p.add_argument("--encoding", choices=["ndjson", "binary"], default=None,
                   help="output encoding (default: inferred from suffix)")
    p.add_argument("--realtime", action="store_true",
                   help="pace the loop on the wall clock instead of simulated time")

    p = sub.add_parser("validate", help="check a recording against all format rules")
    p.add_argument("input", help="recording path")

    p = sub.add_parser("info", help="print a session summary")
    p.add_argument("input", help="recording path")
    p.add_argument("--json", action="store_true", help="machine-readable output")

    p = sub.add_parser("convert", help="transcode between the two encodings")
    p.add_argument("input", help="source recording")
    p.add_argument("output", help="destination recording")
    p.add_argument("--from", dest="from_encoding", choices=["ndjson", "binary"],
                   default=None, help="source encoding (default: from suffix)")
    p.add_argument("--to", dest="to_encoding", choices=["ndjson", "binary"],
                   default=None, help="destination encoding (default: from suffix)")

    p = sub.add_parser("export", help="resample selected features to CSV")
    p.add_argument("input", help="recording path")
    p.add_argument("-o", "--output", required=True, help="CSV destination")
    p.add_argument("--select", action="append", default=[],
                   metavar="DEVICE:FEATURE",
                   help="feature selector ('*' wildcards; repeatable; "
                        "default: everything)")
    p.add_argument("--rate", type=float, required=True,
                   help="target grid rate in Hz")
    p.add_argument("--horizon", type=float, default=None, metavar="MS",
                   help="staleness horizon in ms (default: two polling periods)")
    p.add_argument("--method", choices=["interpolate", "nearest"],
                   default="interpolate", help="grid fill method")
    p.add_argument("--responses", default=None,
                   help="questionnaire sidecar (.responses.ndjson) to join")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8330)

    return parser


def _cmd_record_sim(args) -> int:
    if not args.realtime and args.duration is None:
        raise ConfigError("--duration is required unless --realtime is given")
    out = _out_path(args.output)
    stop = threading.Event()
    previous = None
    if args.realtime:
        # First Ctrl-C stops the loop cleanly so the file still finalizes.
        previous = signal.signal(signal.SIGINT, lambda *_: stop.set())
    try:
        result = ops.record_simulated(
            spec_path=args.spec, output_path=out,
            polling_rate_hz=args.rate, duration_s=args.duration,
            encoding=args.encoding, realtime=args.realtime, stop=stop)
    finally:
        if previous is not None:
            signal.signal(signal.SIGINT, previous)
    print(f"wrote {result.output_path} ({result.encoding.value}, "
          f"{result.file_size_bytes} bytes)")
    print(f"snapshots: {result.snapshot_count}  devices: "
          f"{', '.join(result.device_names) or '(none)'}")
    drops = {k: v for k, v in result.dropped_samples.items() if v}
    if drops:
        print("dropped native samples: "
              + ", ".join(f"{k}={v}" for k, v in drops.items()))
    return EXIT_OK


def _cmd_validate(args) -> int:
    report = ops.validate_path(args.input)
    print(f"{len(report.violations)} violations in {report.record_count} records")
    for v in report.violations:
        print(f"  record {v.index}: {v.rule}: {v.message}")
    return EXIT_OK if report.ok else EXIT_DATA


def _cmd_info(args) -> int:
    summary = ops.summarize_path(args.input)
    if args.json:
        payload = {
            "snapshot_count": summary.snapshot_count,
            "duration_s": summary.duration_s,
            "effective_rate_hz": summary.effective_rate_hz,
            "metadata": None,
            "devices": [asdict(d) for d in summary.devices],
        }
        if summary.metadata is not None:
            meta = asdict(summary.metadata)
            meta["start_time"] = summary.metadata.start_time.isoformat()
            meta["end_time"] = (summary.metadata.end_time.isoformat()
                                if summary.metadata.end_time else None)
            payload["metadata"] = meta
        print(json.dumps(payload, indent=2))
        return EXIT_OK
    meta = summary.metadata
    if meta is not None:
        print(f"session:   {meta.session_label or '(unlabelled)'}  "
              f"participant: {meta.participant_id or '(none)'}")
        print(f"hmd:       {meta.hmd_name} / {meta.hmd_serial}")
        print(f"started:   {meta.start_time.isoformat()}")
        print(f"ended:     {meta.end_time.isoformat() if meta.end_time else '(not finalized)'}")
        print(f"polling:   {meta.polling_rate_hz} Hz")
    print(f"snapshots: {summary.snapshot_count}  duration: {summary.duration_s:.3f} s"
          f"  effective rate: {summary.effective_rate_hz:.2f} Hz")
    for dev in summary.devices:
        print(f"device {dev.device_id}: {dev.name} / {dev.serial}  "
              f"presence {dev.presence_ratio:.1%}  missed {dev.missed_cycles}")
        for name, tag in dev.features:
            print(f"    {name}: {tag}")
    return EXIT_OK


def _cmd_convert(args) -> int:
    result = ops.convert_path(args.input, _out_path(args.output),
                              args.from_encoding, args.to_encoding)
    print(f"transcoded {result.records} records "
          f"({result.from_encoding.value} -> {result.to_encoding.value}, "
          f"{result.output_size_bytes} bytes)")
    return EXIT_OK


def _cmd_export(args) -> int:
    result = ops.export_table(
        input_path=args.input, csv_path=_out_path(args.output),
        select=args.select, target_rate_hz=args.rate,
        staleness_horizon_ms=args.horizon, method=args.method,
        responses_path=args.responses)
    print(f"wrote {result.csv_path}: {result.rows} rows x {result.columns} columns")
    if result.matched is False:
        print("warning: no questionnaire response matched the participant id",
              file=sys.stderr)
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return EXIT_OK


_COMMANDS = {
    "record-sim": _cmd_record_sim,
    "validate": _cmd_validate,
    "info": _cmd_info,
    "convert": _cmd_convert,
    "export": _cmd_export,
    "serve": _cmd_serve,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        if exc.message:
            print(exc.message, file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, EmptySelectionError) as exc:
        print(f"oxdr: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DecodeError as exc:
        where = ""
        if exc.line is not None:
            where = f" (line {exc.line})"
        elif exc.offset is not None:
            where = f" (byte offset {exc.offset})"
        print(f"oxdr: invalid data: {exc}{where}", file=sys.stderr)
        return EXIT_DATA
    except AnalysisError as exc:
        print(f"oxdr: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BrokenPipeError:  # downstream consumer (head, ...) closed early
        sys.stderr.close()
        return EXIT_OK
    except OSError as exc:
        print(f"oxdr: i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OxdrError as exc:
        print(f"oxdr: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
