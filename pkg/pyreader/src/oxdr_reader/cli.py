"""`oxdr-read`: dump .oxdr recordings as CSV, show headers, re-validate."""

from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from .reading import ReaderError, Truncated, iter_records, read_recording
from .tabular import SelectionError, Selector, to_table, write_csv


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oxdr-read",
        description="Standalone reader for .oxdr recording files.")
    parser.add_argument("input", help="recording (.oxdr.ndjson or .oxdr.mp)")
    parser.add_argument("-o", "--output", default=None,
                        help="CSV destination (default: stdout)")
    parser.add_argument("--select", action="append", default=[],
                        metavar="DEVICE:FEATURE",
                        help="feature patterns, '*' wildcards, repeatable")
    parser.add_argument("--info", action="store_true",
                        help="print the session header instead of CSV")
    parser.add_argument("--check", action="store_true",
                        help="re-validate the stream instead of dumping CSV")
    return parser


def _info(path: str) -> int:
    metadata, snapshots = read_recording(path)
    count = sum(1 for _ in snapshots)
    print(f"format_version:  {metadata.format_version}")
    print(f"start_time_us:   {metadata.start_time_us}")
    print(f"end_time_us:     {metadata.end_time_us}")
    print(f"polling_rate_hz: {metadata.polling_rate_hz}")
    print(f"hmd:             {metadata.hmd_name} / {metadata.hmd_serial}")
    print(f"participant_id:  {metadata.participant_id}")
    print(f"session_label:   {metadata.session_label}")
    print(f"snapshots:       {count}")
    return 0


def _check(path: str) -> int:
    from .reading import validate_sequence

    problems = validate_sequence(iter_records(path))
    print(f"{len(problems)} violations")
    for index, rule, detail in problems:
        print(f"  record {index}: {rule}: {detail}")
    return 0 if not problems else 3


def _dump(path: str, output: Optional[str], select: list[str]) -> int:
    selector = Selector.parse(select) if select else Selector([("*", "*")])
    table = to_table(iter_records(path), selector)
    if output is None:
        write_csv(table, sys.stdout)
    else:
        rows, cols = write_csv(table, output)
        print(f"wrote {output}: {rows} rows x {cols} columns", file=sys.stderr)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.info:
            return _info(args.input)
        if args.check:
            return _check(args.input)
        return _dump(args.input, args.output, args.select)
    except SelectionError as exc:
        print(f"oxdr-read: {exc}", file=sys.stderr)
        return 1
    except ReaderError as exc:
        where = f" (line {exc.line})" if exc.line is not None else (
            f" (offset {exc.offset})" if exc.offset is not None else "")
        print(f"oxdr-read: invalid data: {exc}{where}", file=sys.stderr)
        return 3
    except BrokenPipeError:  # downstream consumer (head, ...) closed early
        sys.stderr.close()
        return 0
    except OSError as exc:
        print(f"oxdr-read: i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
