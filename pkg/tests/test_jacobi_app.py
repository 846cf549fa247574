import numpy as np
import pytest

from src.errors import ConfigError, LivelockError
from src.jacobi_app import SETUP_TAG, JacobiSimulation, run_charm, run_mpi, simulate
from src.models import (
    ExecMode,
    Fusion,
    GridSpec,
    LaunchMode,
    Machine,
    NetParams,
    RunOptions,
    Scenario,
    SyncPolicy,
)
from src.oracle import serial_jacobi


def scenario(dims=(12, 12, 12), iterations=4, warmup=1, machine=None, net=None, **run):
    return Scenario(
        grid=GridSpec(dims=dims, iterations=iterations, warmup=warmup),
        run=RunOptions(**run),
        machine=machine or Machine(nodes=1, pes_per_node=2, gpus_per_node=1),
        net=net or NetParams(),
    )


@pytest.mark.parametrize(
    "run",
    [
        dict(mode=ExecMode.MPI_H),
        dict(mode=ExecMode.MPI_D, sync=SyncPolicy.BASELINE),
        dict(mode=ExecMode.MPI_D, manual_overlap=True),
        dict(mode=ExecMode.CHARM_H, odf=2),
        dict(mode=ExecMode.CHARM_D, odf=4, sync=SyncPolicy.BASELINE),
        dict(mode=ExecMode.CHARM_D, odf=2, fusion=Fusion.A),
        dict(mode=ExecMode.CHARM_D, odf=2, fusion=Fusion.B),
        dict(mode=ExecMode.CHARM_D, odf=4, fusion=Fusion.C),
        dict(mode=ExecMode.CHARM_D, odf=4, launch=LaunchMode.GRAPH),
        dict(mode=ExecMode.CHARM_D, odf=2, launch=LaunchMode.GRAPH, fusion=Fusion.B, sync=SyncPolicy.BASELINE),
    ],
)
def test_final_grid_matches_serial_solver(run):
    s = scenario(**run)
    app, table = simulate(s)
    np.testing.assert_array_equal(app.final_grid(), serial_jacobi(s.grid))
    assert len(table.rows) == s.grid.iterations
    assert [r.iteration for r in table.rows] == list(range(s.grid.iterations))
    assert all(r.time_ps > 0 for r in table.rows)
    assert table.diagnostics == []


def test_single_chare_has_constant_iteration_time():
    s = scenario(dims=(8, 8, 8), iterations=100, warmup=10, machine=Machine(), mode=ExecMode.CHARM_D)
    table = run_charm(s)
    assert len(table.rows) == 100
    assert len({r.time_ps for r in table.rows}) == 1
    assert all(r.nic_bytes == 0 for r in table.rows)


def test_interior_chare_launch_counts_per_fusion_strategy():
    expected = {Fusion.NONE: 13, Fusion.A: 8, Fusion.B: 3, Fusion.C: 1}
    for fusion, count in expected.items():
        s = scenario(dims=(24, 24, 24), iterations=3, warmup=0, machine=Machine(), mode=ExecMode.CHARM_D,
                     odf=27, fusion=fusion)
        table = run_charm(s)
        for it in range(1, 3):
            record = table.launch_log[((1, 1, 1), it)]
            assert (record.kernels, record.graphs) == (count, 0), fusion
        assert ((1, 1, 1), SETUP_TAG) in table.launch_log


def test_graph_mode_alternates_variants():
    s = scenario(dims=(24, 24, 24), iterations=4, warmup=0, machine=Machine(), mode=ExecMode.CHARM_D,
                 odf=27, launch=LaunchMode.GRAPH)
    app, table = simulate(s)
    variants = []
    for it in range(4):
        record = table.launch_log[((1, 1, 1), it)]
        assert (record.graphs, record.kernels) == (1, 0)
        variants.extend(record.variants)
    assert variants == [0, 1, 0, 1]
    np.testing.assert_array_equal(app.final_grid(), serial_jacobi(s.grid))


def test_metric_rows_are_fractions_and_count_nic_bytes():
    machine = Machine(nodes=2, pes_per_node=1, gpus_per_node=1)
    s = scenario(dims=(16, 8, 8), machine=machine, mode=ExecMode.CHARM_D)
    table = run_charm(s)
    face_bytes = 8 * 8 * 8
    for row in table.rows:
        assert 0.0 < row.pe_busy <= 1.0
        assert 0.0 < row.gpu_busy <= 1.0
        assert 0 <= row.exposed_comm_ps <= row.time_ps
        assert row.nic_bytes == 2 * face_bytes
        assert row.launches > 0


def test_numerics_off_keeps_the_schedule():
    on = scenario(mode=ExecMode.CHARM_D, odf=2)
    off = Scenario(grid=on.grid, run=RunOptions(mode=ExecMode.CHARM_D, odf=2, numerics=False), machine=on.machine)
    app, table_off = simulate(off)
    assert app.final_grid() is None
    assert [r.time_ps for r in table_off.rows] == [r.time_ps for r in run_charm(on).rows]


def test_repeated_runs_are_identical():
    s = scenario(mode=ExecMode.CHARM_D, odf=4, perturb=True, seed=3)
    first, second = run_charm(s), run_charm(s)
    assert first.trace_hash == second.trace_hash
    assert first.rows == second.rows


def test_perturbation_changes_timing_but_not_numerics():
    base = scenario(mode=ExecMode.CHARM_H, odf=2)
    shaken = scenario(mode=ExecMode.CHARM_H, odf=2, perturb=True, seed=5)
    app, table = simulate(shaken)
    np.testing.assert_array_equal(app.final_grid(), serial_jacobi(shaken.grid))
    assert table.trace_hash != run_charm(base).trace_hash


def test_driver_entry_points_check_the_mode():
    with pytest.raises(ConfigError):
        run_mpi(scenario(mode=ExecMode.CHARM_D))
    with pytest.raises(ConfigError):
        run_charm(scenario(mode=ExecMode.MPI_H))


def test_indivisible_grid_is_rejected():
    with pytest.raises(ConfigError, match="not divisible"):
        JacobiSimulation(scenario(dims=(7, 7, 7), mode=ExecMode.CHARM_D, odf=2))


def test_watchdog_stops_a_long_run():
    s = scenario(iterations=50, mode=ExecMode.CHARM_D, odf=2, max_events=200)
    with pytest.raises(LivelockError):
        run_charm(s)
