import csv
import os
from collections import defaultdict
from typing import Dict, List, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .config import CSV_COLUMNS  # noqa: E402
from .errors import ConfigError  # noqa: E402
from .models import MetricsTable, SummaryPoint  # noqa: E402
from .utils import format_ps, ps_to_seconds  # noqa: E402

FORMATS = ("csv", "svg")


def _check_target(table: MetricsTable, path: str) -> None:
    if not table.rows and not table.points:
        raise ConfigError("nothing to emit: the metrics table is empty")
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise ConfigError(f"cannot write {path}: directory {parent} does not exist")
    if os.path.isdir(path):
        raise ConfigError(f"cannot write {path}: it is a directory")


def write_csv(table: MetricsTable, path: str) -> None:
    if not table.rows:
        raise ConfigError("nothing to emit: the metrics table has no rows")
    try:
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for row in table.rows:
                writer.writerow(
                    [
                        row.scenario,
                        row.iteration,
                        format_ps(row.time_ps),
                        f"{row.pe_busy:.6f}",
                        f"{row.gpu_busy:.6f}",
                        format_ps(row.exposed_comm_ps),
                        row.launches,
                        row.nic_bytes,
                    ]
                )
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from None


def summary_points(table: MetricsTable) -> List[SummaryPoint]:
    """Sweep points as recorded, or one point per scenario from raw rows."""
    if table.points:
        return list(table.points)
    by_scenario: Dict[str, List[int]] = defaultdict(list)
    for row in table.rows:
        by_scenario[row.scenario].append(row.time_ps)
    return [
        SummaryPoint(series=name, x=float(i + 1), mean_time_ps=sum(times) / len(times), label=name)
        for i, (name, times) in enumerate(by_scenario.items())
    ]


def write_svg(table: MetricsTable, path: str, title: str = "time per iteration") -> None:
    """Log-x line chart of mean time/iter, one line per series."""
    series: Dict[str, List[Tuple[float, float, bool]]] = defaultdict(list)
    for point in summary_points(table):
        series[point.series].append((point.x, ps_to_seconds(point.mean_time_ps), point.best))

    fig, ax = plt.subplots(figsize=(7, 4.5))
    try:
        for name in sorted(series):
            pts = sorted(series[name])
            xs = [p[0] for p in pts]
            ys = [p[1] for p in pts]
            (line,) = ax.plot(xs, ys, marker="o", label=name)
            line.set_gid(f"series-{name}")
            for x, y, best in pts:
                if best:
                    ax.plot([x], [y], marker="*", markersize=12, color=line.get_color(), linestyle="none")
        ax.set_xscale("log", base=2)
        ax.set_xlabel("sweep value")
        ax.set_ylabel("time per iteration (s)")
        ax.set_title(title)
        ax.grid(True, which="both", alpha=0.3)
        ax.legend(loc="best", fontsize="small")
        fig.tight_layout()
        fig.savefig(path, format="svg")
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from None
    finally:
        plt.close(fig)


def emit(table: MetricsTable, fmt: str, path: str) -> None:
    fmt = fmt.lower()
    if fmt not in FORMATS:
        raise ConfigError(f"unknown output format '{fmt}' (expected csv or svg)")
    _check_target(table, path)
    if fmt == "csv":
        write_csv(table, path)
    else:
        write_svg(table, path)
