"""``nasa-convert <raw-file-or-dir> <out-dir>``"""

from __future__ import annotations

import argparse
import sys

from .convert import convert_path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="nasa-convert",
        description="Convert NASA PCoE battery containers to telemetry interchange files",
    )
    parser.add_argument("raw", help="container file (.mat) or directory of containers")
    parser.add_argument("out_dir", help="output directory for telemetry/metadata/log files")
    args = parser.parse_args(argv)

    try:
        results = convert_path(args.raw, args.out_dir)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for r in results:
        print(
            f"{r.battery_id}: {r.n_pairs} cycle pairs -> {r.telemetry_path} "
            f"({r.n_impedance} impedance dropped, {r.n_skipped} skipped)"
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
