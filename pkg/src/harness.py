"""Scenario runs, oracle checks, traces and parameter sweeps."""

import dataclasses
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .config import ODF_SWEEP_VALUES, THREADS_ENV_VAR
from .engine import TraceEntry
from .errors import ConfigError, LivelockError, OracleMismatchError, OverlapSimError, SimulationError, SweepAborted
from .jacobi_app import JacobiSimulation, simulate
from .models import (
    ExecMode,
    Fusion,
    LaunchMode,
    MetricsTable,
    Scaling,
    Scenario,
    SummaryPoint,
)
from .oracle import serial_jacobi
from .scenario import validate_scenario
from .stencil import block_surface, factor_triples

LogFn = Callable[[str], None]
ProgressFn = Callable[[float, str], None]

SWEEP_AXES = ("odf", "nodes", "mode", "fusion", "launch")


def _silent(_msg: str) -> None:
    pass


def _with_context(scenario: Scenario, exc: OverlapSimError) -> OverlapSimError:
    message = f"scenario '{scenario.scenario_id}': {exc}"
    if isinstance(exc, LivelockError):
        return LivelockError(message, exc.entity)
    if isinstance(exc, ConfigError):
        return ConfigError(message)
    if isinstance(exc, SimulationError):
        return SimulationError(message)
    return type(exc)(message)


def oracle_status(app: JacobiSimulation) -> str:
    grid = app.final_grid()
    if grid is None:
        return "skipped"
    reference = serial_jacobi(app.scenario.grid)
    return "ok" if np.array_equal(grid, reference) else "mismatch"


def _simulate(
    scenario: Scenario, log_fn: LogFn, check_oracle: bool, record_trace: bool
) -> Tuple[JacobiSimulation, MetricsTable]:
    try:
        app, table = simulate(scenario, log_fn=log_fn, record_trace=record_trace)
    except OverlapSimError as exc:
        raise _with_context(scenario, exc) from exc
    if check_oracle:
        table.oracle_status = oracle_status(app)
    return app, table


def run_scenario(scenario: Scenario, log_fn: Optional[LogFn] = None, check_oracle: bool = True) -> MetricsTable:
    """One isolated simulation of warmup + measured iterations."""
    log_fn = log_fn or _silent
    _, table = _simulate(scenario, log_fn, check_oracle, record_trace=False)
    log_fn(
        f"{scenario.scenario_id}: {len(table.rows)} measured iterations, "
        f"mean {table.mean_time_ps / 1e6:.3f} us/iter, oracle {table.oracle_status}"
    )
    return table


def verify_scenario(scenario: Scenario, log_fn: Optional[LogFn] = None) -> MetricsTable:
    """Run with numerics on and raise OracleMismatchError unless the grid matches."""
    if not scenario.run.numerics:
        scenario = dataclasses.replace(scenario, run=dataclasses.replace(scenario.run, numerics=True))
    table = run_scenario(scenario, log_fn)
    if table.oracle_status != "ok":
        raise OracleMismatchError(f"scenario '{scenario.scenario_id}': final grid differs from the serial reference")
    return table


def trace_scenario(scenario: Scenario, log_fn: Optional[LogFn] = None) -> Tuple[List[TraceEntry], str]:
    app, table = _simulate(scenario, log_fn or _silent, check_oracle=False, record_trace=True)
    return list(app.sim.trace or []), table.trace_hash


# ---- sweeps ----
def node_factors(nodes: int, dims: Tuple[int, int, int]) -> Tuple[int, int, int]:
    """Factor triple of the node count that keeps a weak-scaled grid most cube-like."""
    best = None
    for triple in factor_triples(nodes):
        scaled = (dims[0] * triple[0], dims[1] * triple[1], dims[2] * triple[2])
        area = block_surface(scaled)
        if best is None or area < best[0]:
            best = (area, triple)
    return best[1]


def apply_axis(base: Scenario, axis: str, value: Union[str, int]) -> Scenario:
    """Sweep point `axis = value` derived from base."""
    run, machine, grid = base.run, base.machine, base.grid
    text = str(value).strip().lower()
    try:
        if axis == "odf":
            run = dataclasses.replace(run, odf=int(text))
        elif axis == "nodes":
            nodes = int(text)
            if nodes < 1:
                raise ConfigError("'nodes' must be >= 1")
            if grid.scaling is Scaling.WEAK:
                base_factors = node_factors(machine.nodes, grid.dims)
                if any(d % f for d, f in zip(grid.dims, base_factors)):
                    raise ConfigError(
                        f"weak scaling: grid {grid.dims} does not split evenly over {machine.nodes} node(s) as {base_factors}"
                    )
                unit = tuple(d // f for d, f in zip(grid.dims, base_factors))
                factors = node_factors(nodes, unit)
                grid = dataclasses.replace(grid, dims=tuple(u * f for u, f in zip(unit, factors)))
            machine = dataclasses.replace(machine, nodes=nodes)
        elif axis == "mode":
            mode = ExecMode(text)
            run = dataclasses.replace(run, mode=mode)
            if mode.is_mpi:
                run = dataclasses.replace(run, odf=1)
            else:
                run = dataclasses.replace(run, manual_overlap=False)
            if mode is not ExecMode.CHARM_D:
                run = dataclasses.replace(run, fusion=Fusion.NONE, launch=LaunchMode.INDIVIDUAL)
        elif axis == "fusion":
            run = dataclasses.replace(run, fusion=Fusion(text))
        elif axis == "launch":
            run = dataclasses.replace(run, launch=LaunchMode(text))
        else:
            raise ConfigError(f"unknown sweep axis '{axis}' (expected one of {', '.join(SWEEP_AXES)})")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad value '{value}' for sweep axis '{axis}'") from None
    name = f"{base.scenario_id}/{axis}={text}"
    scenario = dataclasses.replace(base, run=dataclasses.replace(run, name=name), machine=machine, grid=grid)
    validate_scenario(scenario)
    return scenario


def _series(scenario: Scenario, axis: str) -> str:
    run = scenario.run
    if axis in ("fusion", "launch"):
        return f"{run.mode.value}-{run.launch.value}" if axis == "fusion" else f"{run.mode.value}-{run.fusion.value}"
    if axis == "odf":
        return f"{run.mode.value}-{run.fusion.value}-{run.launch.value}"
    return run.mode.value


def _x_value(axis: str, index: int, scenario: Scenario) -> float:
    if axis == "odf":
        return float(scenario.run.odf)
    if axis == "nodes":
        return float(scenario.machine.nodes)
    return float(index + 1)


def sweep_threads() -> int:
    raw = os.environ.get(THREADS_ENV_VAR, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{THREADS_ENV_VAR} must be an integer, got '{raw}'") from None


def _best_odf(scenario: Scenario, log_fn: LogFn) -> Tuple[int, MetricsTable]:
    """Best ODF among the sweep values that decompose the grid."""
    best: Optional[Tuple[float, int, MetricsTable]] = None
    for odf in ODF_SWEEP_VALUES:
        candidate = dataclasses.replace(
            scenario, run=dataclasses.replace(scenario.run, odf=odf, name=f"{scenario.scenario_id}@odf{odf}")
        )
        try:
            validate_scenario(candidate)
            table = run_scenario(candidate, log_fn)
        except ConfigError as exc:
            log_fn(f"skipping odf {odf}: {exc}")
            continue
        if best is None or table.mean_time_ps < best[0]:
            best = (table.mean_time_ps, odf, table)
    if best is None:
        raise ConfigError(f"scenario '{scenario.scenario_id}': no ODF in {ODF_SWEEP_VALUES} decomposes the grid")
    log_fn(f"{scenario.scenario_id}: best ODF {best[1]}")
    return best[1], best[2]


def sweep(
    base: Scenario,
    axis: str,
    values: Sequence[Union[str, int]],
    best_odf: bool = False,
    log_fn: Optional[LogFn] = None,
    progress_fn: Optional[ProgressFn] = None,
    threads: Optional[int] = None,
) -> MetricsTable:
    """Run one point per value; points carry summaries and the argmin marker."""
    log_fn = log_fn or _silent
    if not values:
        raise ConfigError("a sweep needs at least one value")
    points = [apply_axis(base, axis, v) for v in values]
    threads = sweep_threads() if threads is None else max(1, threads)

    def run_point(scenario: Scenario) -> Tuple[str, MetricsTable]:
        if best_odf and not scenario.run.mode.is_mpi and axis != "odf":
            odf, table = _best_odf(scenario, log_fn)
            return f"odf={odf}", table
        return "", run_scenario(scenario, log_fn)

    result = MetricsTable()
    done = 0

    def collect(index: int, label: str, table: MetricsTable) -> None:
        nonlocal done
        scenario = points[index]
        result.rows.extend(table.rows)
        result.diagnostics.extend(table.diagnostics)
        if table.oracle_status == "mismatch" or result.oracle_status == "skipped":
            result.oracle_status = table.oracle_status
        result.points.append(
            SummaryPoint(
                series=_series(scenario, axis),
                x=_x_value(axis, index, scenario),
                mean_time_ps=table.mean_time_ps,
                label=label or f"{axis}={values[index]}",
            )
        )
        done += 1
        if progress_fn is not None:
            progress_fn(done / len(points), f"{scenario.scenario_id} done")

    try:
        if threads == 1:
            for index, scenario in enumerate(points):
                collect(index, *run_point(scenario))
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                futures = [pool.submit(run_point, scenario) for scenario in points]
                for index, future in enumerate(futures):
                    collect(index, *future.result())
    except OverlapSimError as exc:
        raise SweepAborted(f"sweep over '{axis}' aborted: {exc}", exc, result) from exc

    _mark_best(result.points)
    return result


def _mark_best(points: List[SummaryPoint]) -> None:
    by_series = {}
    for point in points:
        current = by_series.get(point.series)
        if current is None or point.mean_time_ps < current.mean_time_ps:
            by_series[point.series] = point
    for point in by_series.values():
        point.best = True
