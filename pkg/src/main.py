import argparse
import os
import sys
from datetime import datetime
from typing import List, Optional

from .config import EXIT_CONFIG, EXIT_OK, EXIT_ORACLE, EXIT_SIMULATION
from .emit import emit
from .errors import ConfigError, OracleMismatchError, OverlapSimError, SweepAborted
from .harness import SWEEP_AXES, run_scenario, sweep, trace_scenario, verify_scenario
from .models import MetricsTable
from .scenario import load_config
from .utils import ensure_dir, format_ps, safe_filename


def _exit_code(exc: OverlapSimError) -> int:
    if isinstance(exc, SweepAborted):
        return _exit_code(exc.cause)
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, OracleMismatchError):
        return EXIT_ORACLE
    return EXIT_SIMULATION


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="overlapsim",
        description="Discrete-event simulator of message-driven halo exchange on a modeled GPU cluster",
    )
    verbs = parser.add_subparsers(dest="verb", required=True)

    def outputs(sub: argparse.ArgumentParser) -> None:
        sub.add_argument("--csv", default=None, help="Write per-iteration metrics to this CSV file")
        sub.add_argument("--svg", default=None, help="Write the time/iter chart to this SVG file")
        sub.add_argument(
            "--output-dir",
            default=None,
            help="Write <scenario>.csv (and .svg for sweeps) into this directory",
        )

    run = verbs.add_parser("run", help="Simulate one scenario and check it against the serial solver")
    run.add_argument("config", help="Scenario file")
    outputs(run)

    sw = verbs.add_parser("sweep", help="Simulate one scenario per value of a sweep axis")
    sw.add_argument("config", help="Base scenario file")
    sw.add_argument("--axis", required=True, choices=SWEEP_AXES, help="Parameter to sweep")
    sw.add_argument("--values", required=True, help="Comma-separated values, e.g. 1,2,4,8,16")
    sw.add_argument(
        "--best-odf",
        action="store_true",
        help="At every point of a Charm mode keep the best ODF in 1..16",
    )
    outputs(sw)

    verbs.add_parser("verify", help="Oracle check only").add_argument("config", help="Scenario file")

    tr = verbs.add_parser("trace", help="Dump the fired-event trace and its hash")
    tr.add_argument("config", help="Scenario file")
    tr.add_argument("--out", default=None, help="Write the trace here instead of stdout")
    return parser


def _emit_outputs(table: MetricsTable, args: argparse.Namespace, name: str, log_fn, chart: bool) -> None:
    targets = []
    if args.csv:
        targets.append(("csv", args.csv))
    if args.svg:
        targets.append(("svg", args.svg))
    if args.output_dir:
        ensure_dir(args.output_dir)
        base = os.path.join(args.output_dir, safe_filename(name))
        targets.append(("csv", base + ".csv"))
        if chart:
            targets.append(("svg", base + ".svg"))
    for fmt, path in targets:
        emit(table, fmt, path)
        log_fn(f"{fmt.upper()} written to {path}")


def cli_main(argv: Optional[List[str]] = None) -> int:
    """
    Command-line verbs; exit 0 on success, 1 on a config error,
    2 on a simulation error and 3 on an oracle mismatch.

    Examples:
      python run.py run scenarios/small.cfg --csv out.csv
      python run.py sweep scenarios/small.cfg --axis odf --values 1,2,4,8,16 --output-dir ./out
    """
    args = _build_parser().parse_args(argv)

    def log_fn(msg: str) -> None:
        ts = datetime.now().strftime("%H:%M:%S")
        print(f"[{ts}] {msg}")

    def progress_fn(value: float, text: str) -> None:
        pct = int(value * 100)
        print(f"[{pct:3d}%] {text}")

    try:
        scenario = load_config(args.config)
        log_fn(f"Loaded {args.config}: {scenario.scenario_id}")

        if args.verb == "run":
            table = run_scenario(scenario, log_fn)
            _emit_outputs(table, args, scenario.scenario_id, log_fn, chart=False)
            if table.failed:
                log_fn("Oracle mismatch: final grid differs from the serial reference.")
                return EXIT_ORACLE

        elif args.verb == "sweep":
            values = [v.strip() for v in args.values.split(",") if v.strip()]
            try:
                table = sweep(
                    scenario,
                    args.axis,
                    values,
                    best_odf=args.best_odf,
                    log_fn=log_fn,
                    progress_fn=progress_fn,
                )
            except SweepAborted as exc:
                log_fn(f"Error: {exc}")
                if exc.partial.rows:
                    _emit_outputs(exc.partial, args, f"{scenario.scenario_id}-{args.axis}-partial", log_fn, True)
                return _exit_code(exc)
            for point in table.points:
                marker = "  <- best" if point.best else ""
                log_fn(f"{point.series} {point.label}: {point.mean_time_ps / 1e6:.3f} us/iter{marker}")
            _emit_outputs(table, args, f"{scenario.scenario_id}-{args.axis}", log_fn, chart=True)
            if table.failed:
                log_fn("Oracle mismatch in at least one sweep point.")
                return EXIT_ORACLE

        elif args.verb == "verify":
            table = verify_scenario(scenario, log_fn)
            log_fn(f"Oracle ok over {scenario.grid.total_iterations} iterations.")

        elif args.verb == "trace":
            trace, digest = trace_scenario(scenario, log_fn)
            lines = [f"{format_ps(t)} {seq} {entity}" for t, seq, entity in trace]
            lines.append(f"hash {digest}")
            if args.out:
                with open(args.out, "w", encoding="utf-8") as f:
                    f.write("\n".join(lines) + "\n")
                log_fn(f"{len(trace)} events written to {args.out}")
            else:
                print("\n".join(lines))

    except OverlapSimError as exc:
        log_fn(f"Error: {exc}")
        return _exit_code(exc)
    except OSError as exc:
        log_fn(f"Error: {exc}")
        return EXIT_CONFIG

    return EXIT_OK


def main() -> None:
    if len(sys.argv) > 1:
        sys.exit(cli_main())
    else:
        from .gui import App

        app = App()
        app.mainloop()
