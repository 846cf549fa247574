import re

import pytest
from bs4 import BeautifulSoup

from src.emit import emit, summary_points
from src.errors import ConfigError
from src.models import MetricRow, MetricsTable, SummaryPoint


def row(scenario="s", iteration=0, time_ps=1_500_000):
    return MetricRow(
        scenario=scenario,
        iteration=iteration,
        time_ps=time_ps,
        pe_busy=0.5,
        gpu_busy=0.25,
        exposed_comm_ps=500_000,
        launches=13,
        nic_bytes=4096,
    )


def test_one_row_table_gives_a_two_line_csv(tmp_path):
    path = tmp_path / "out.csv"
    emit(MetricsTable(rows=[row()]), "csv", str(path))
    text = path.read_text(encoding="utf-8")
    assert text == (
        "scenario,iteration,time_s,pe_busy,gpu_busy,exposed_comm_s,launches,nic_bytes\n"
        "s,0,0.000001500000,0.500000,0.250000,0.000000500000,13,4096\n"
    )


def test_empty_table_is_an_error_and_writes_nothing(tmp_path):
    path = tmp_path / "empty.csv"
    with pytest.raises(ConfigError, match="empty"):
        emit(MetricsTable(), "csv", str(path))
    assert not path.exists()


def test_unwritable_path(tmp_path):
    with pytest.raises(ConfigError, match="cannot write"):
        emit(MetricsTable(rows=[row()]), "csv", str(tmp_path / "missing" / "out.csv"))
    with pytest.raises(ConfigError, match="cannot write"):
        emit(MetricsTable(rows=[row()]), "svg", str(tmp_path))


def test_unknown_format(tmp_path):
    with pytest.raises(ConfigError, match="format"):
        emit(MetricsTable(rows=[row()]), "pdf", str(tmp_path / "x.pdf"))


def test_sweep_svg_has_one_line_per_series(tmp_path):
    points = [
        SummaryPoint(series=mode, x=float(odf), mean_time_ps=1e6 * (odf + i), best=odf == 1)
        for i, mode in enumerate(["mpi_h", "charm_h", "charm_d"])
        for odf in (1, 2, 4)
    ]
    path = tmp_path / "sweep.svg"
    emit(MetricsTable(rows=[row()], points=points), "svg", str(path))
    soup = BeautifulSoup(path.read_text(encoding="utf-8"), "html.parser")
    ids = sorted(g["id"] for g in soup.find_all("g", id=re.compile(r"^series-")))
    assert ids == ["series-charm_d", "series-charm_h", "series-mpi_h"]


def test_rows_without_points_are_summarized_per_scenario():
    table = MetricsTable(rows=[row("a", 0, 10), row("a", 1, 20), row("b", 0, 5)])
    points = summary_points(table)
    assert [(p.series, p.x, p.mean_time_ps) for p in points] == [("a", 1.0, 15.0), ("b", 2.0, 5.0)]
