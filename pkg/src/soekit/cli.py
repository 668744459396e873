"""Command-line front-end.

Subcommands run the analysis pipeline on a directory of interchange
documents. By default everything executes in-process; with ``--server``
the command acts as a thin client, shipping the documents to a running
soekit service and writing whatever it returns.

Exit codes: 0 success, 1 partial (some batteries failed), 2 fatal.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import httpx

from . import __version__
from .cleaning import CleaningPolicy
from .cycledata import load_segment_overrides
from .metrics import IntegrationRule
from .report import (
    AnalysisConfig,
    AnalysisResult,
    Factor,
    PlotKind,
    sanitize_name,
    analyze,
    atomic_write_text,
    export_plot_series,
    render_summary,
    summary_rows,
    write_analysis,
)

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_FATAL = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="soekit",
        description="Per-cycle energy-efficiency analysis of battery cycling telemetry",
    )
    parser.add_argument("--version", action="version", version=f"soekit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser):
        p.add_argument("--input", required=True, help="directory of telemetry/metadata pairs")
        p.add_argument(
            "--integration",
            choices=[r.value for r in IntegrationRule],
            default=IntegrationRule.LEFT_RECT.value,
            help="accumulation rule for sampled signals (default: left)",
        )
        p.add_argument(
            "--significance",
            type=float,
            default=0.05,
            help="p-value below which a trend is declared (default: 0.05)",
        )
        p.add_argument("--no-clean", action="store_true", help="skip cycle-level cleaning")
        p.add_argument("--segments", help="JSON file with per-battery segment overrides")
        p.add_argument("--server", help="base URL of a running soekit service (thin-client mode)")

    p_analyze = sub.add_parser("analyze", help="full analysis bundle (reports, matrix, summary)")
    common(p_analyze)
    p_analyze.add_argument("--out", required=True, help="output directory")

    p_plot = sub.add_parser("plotdata", help="emit plot-ready delimited series")
    common(p_plot)
    p_plot.add_argument("--out", required=True, help="output directory")
    p_plot.add_argument(
        "--kind",
        choices=[k.value for k in PlotKind],
        default=PlotKind.TRAJECTORY.value,
        help="series kind (default: trajectory)",
    )
    p_plot.add_argument(
        "--factor",
        choices=[f.value for f in Factor],
        help="varying factor for comparison kind",
    )

    p_summary = sub.add_parser("summary", help="one-line-per-battery summary table")
    common(p_summary)
    p_summary.add_argument("--out", help="output file (default: stdout)")
    p_summary.add_argument("--format", choices=["text", "json"], default="text")

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)
    return parser


def _config_from_args(args) -> AnalysisConfig:
    overrides = None
    if args.segments:
        overrides = load_segment_overrides(args.segments)
    return AnalysisConfig(
        integration=IntegrationRule(args.integration),
        significance=args.significance,
        clean=not args.no_clean,
        cleaning=CleaningPolicy(),
        segment_overrides=overrides,
    )


def _exit_code(result: AnalysisResult) -> int:
    if not result.reports:
        return EXIT_FATAL
    return EXIT_PARTIAL if result.failures else EXIT_OK


def _print_failures(result: AnalysisResult) -> None:
    for f in result.failures:
        print(f"failed: {f.source}: {f.error}", file=sys.stderr)


# --- thin-client mode --------------------------------------------------------

def _make_client(server: str):
    return httpx.Client(base_url=server, timeout=600.0)


def _payload(args) -> dict:
    batteries = []
    input_dir = Path(args.input)
    if not input_dir.is_dir():
        raise FileNotFoundError(f"input directory not found: {input_dir}")
    for telemetry in sorted(input_dir.glob("*.csv")):
        metadata = telemetry.with_suffix(".json")
        if not metadata.exists():
            raise FileNotFoundError(f"missing metadata sidecar {metadata.name}")
        batteries.append(
            {
                "telemetry": telemetry.read_text(encoding="utf-8"),
                "metadata": json.loads(metadata.read_text(encoding="utf-8")),
            }
        )
    if not batteries:
        raise FileNotFoundError(f"no telemetry documents (*.csv) in {input_dir}")
    config = {
        "integration": args.integration,
        "significance": args.significance,
        "clean": not args.no_clean,
    }
    if args.segments:
        config["segment_overrides"] = json.loads(Path(args.segments).read_text(encoding="utf-8"))
    return {"batteries": batteries, "config": config}


def _post(args, route: str, extra: dict | None = None) -> dict:
    payload = _payload(args)
    if extra:
        payload.update(extra)
    with _make_client(args.server) as client:
        response = client.post(route, json=payload)
        if response.status_code >= 400:
            raise RuntimeError(f"service error {response.status_code}: {response.text}")
        return response.json()


def _cmd_analyze_remote(args) -> int:
    body = _post(args, "/analyze")
    out_dir = Path(args.out)
    for rep in body["reports"]:
        path = out_dir / "reports" / f"{sanitize_name(rep['series_id'])}.json"
        atomic_write_text(path, json.dumps(rep, indent=2, sort_keys=True) + "\n")
        print(path)
    atomic_write_text(out_dir / "matrix.json", json.dumps(body["matrix"], indent=2, sort_keys=True) + "\n")
    print(out_dir / "matrix.json")
    with _make_client(args.server) as client:
        summary = client.post("/summary", json=_payload(args)).json()
    atomic_write_text(out_dir / "summary.txt", summary["text"])
    print(out_dir / "summary.txt")
    for f in body["failures"]:
        print(f"failed: {f['source']}: {f['error']}", file=sys.stderr)
    if not body["reports"]:
        return EXIT_FATAL
    return EXIT_PARTIAL if body["failures"] else EXIT_OK


def cmd_analyze(args) -> int:
    if args.server:
        return _cmd_analyze_remote(args)
    result = analyze(args.input, _config_from_args(args))
    written = write_analysis(result, args.out)
    for path in written:
        print(path)
    _print_failures(result)
    return _exit_code(result)


def cmd_plotdata(args) -> int:
    kind = PlotKind(args.kind)
    factor = Factor(args.factor) if args.factor else None
    if kind is PlotKind.FACTOR_COMPARISON and factor is None:
        print("error: --kind comparison requires --factor", file=sys.stderr)
        return EXIT_FATAL
    if args.server:
        body = _post(args, "/plotdata", {"kind": kind.value, "factor": factor.value if factor else None})
        out_dir = Path(args.out)
        for f in body["files"]:
            atomic_write_text(out_dir / sanitize_name(f["name"]), f["content"])
            print(out_dir / sanitize_name(f["name"]))
        for f in body["failures"]:
            print(f"failed: {f['source']}: {f['error']}", file=sys.stderr)
        return EXIT_PARTIAL if body["failures"] else EXIT_OK
    result = analyze(args.input, _config_from_args(args))
    if not result.reports:
        _print_failures(result)
        return EXIT_FATAL
    for path in export_plot_series(result.reports, kind, args.out, factor):
        print(path)
    _print_failures(result)
    return _exit_code(result)


def cmd_summary(args) -> int:
    if args.server:
        body = _post(args, "/summary")
        text = body["text"] if args.format == "text" else json.dumps(body["rows"], indent=2, sort_keys=True) + "\n"
        failures = body["failures"]
        n_reports = len(body["rows"])
    else:
        result = analyze(args.input, _config_from_args(args))
        if args.format == "text":
            text = render_summary(result.reports)
        else:
            text = json.dumps(summary_rows(result.reports), indent=2, sort_keys=True) + "\n"
        failures = [{"source": f.source, "error": f.error} for f in result.failures]
        n_reports = len(result.reports)
    if args.out:
        atomic_write_text(Path(args.out), text)
    else:
        sys.stdout.write(text)
    for f in failures:
        print(f"failed: {f['source']}: {f['error']}", file=sys.stderr)
    if not n_reports:
        return EXIT_FATAL
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("soekit.service:app", host=args.host, port=args.port)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    commands = {
        "analyze": cmd_analyze,
        "plotdata": cmd_plotdata,
        "summary": cmd_summary,
        "serve": cmd_serve,
    }
    try:
        return commands[args.command](args)
    except (FileNotFoundError, ValueError, RuntimeError, httpx.HTTPError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
