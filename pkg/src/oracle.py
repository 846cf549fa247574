"""Ground truth independent of the simulated drivers: a serial Jacobi solve,
a brute-force decomposition enumerator, memory footprints and a closed-form
replay of the bulk-synchronous schedule.
"""

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Tuple

import numpy as np

from .config import BYTES_PER_ELEMENT, DIRICHLET_VALUE, INITIAL_VALUE
from .device import copy_duration_ps, kernel_duration_ps
from .errors import ConfigError
from .models import Decomposition, Dims3, ExecMode, GridSpec, Index3, NetMode, Scenario, SyncPolicy
from .network import transfer_plan
from .stencil import block_indices, direction_axis, direction_sign, face_elements, opposite, stencil_point_sum
from .utils import seconds_to_ps


@lru_cache(maxsize=32)
def _serial(dims: Dims3, steps: int) -> np.ndarray:
    nx_, ny, nz = dims
    a = np.full((nx_ + 2, ny + 2, nz + 2), DIRICHLET_VALUE, dtype=np.float64)
    a[1:-1, 1:-1, 1:-1] = INITIAL_VALUE
    b = a.copy()
    for _ in range(steps):
        b[1:-1, 1:-1, 1:-1] = stencil_point_sum(
            a[1:-1, 1:-1, 1:-1],
            a[:-2, 1:-1, 1:-1],
            a[2:, 1:-1, 1:-1],
            a[1:-1, :-2, 1:-1],
            a[1:-1, 2:, 1:-1],
            a[1:-1, 1:-1, :-2],
            a[1:-1, 1:-1, 2:],
        )
        a, b = b, a
    result = a[1:-1, 1:-1, 1:-1].copy()
    result.flags.writeable = False
    return result


def serial_jacobi(grid: GridSpec, iterations: Optional[int] = None) -> np.ndarray:
    """Reference grid after `iterations` steps (default: warmup + measured)."""
    if any(d < 1 for d in grid.dims):
        raise ConfigError(f"grid dims must be >= 1, got {grid.dims}")
    steps = grid.total_iterations if iterations is None else iterations
    return _serial(tuple(grid.dims), steps)


def enumerate_decompositions(dims: Dims3, n: int) -> List[Tuple[int, Dims3]]:
    """Every divisible factor triple of n with its aggregate surface, best first."""
    found: List[Tuple[int, Dims3]] = []
    for parts in itertools.product(range(1, n + 1), repeat=3):
        if parts[0] * parts[1] * parts[2] != n:
            continue
        if any(d % p for d, p in zip(dims, parts)):
            continue
        bx, by, bz = (d // p for d, p in zip(dims, parts))
        found.append((n * 2 * (bx * by + by * bz + bx * bz), parts))
    found.sort()
    return found


def best_decomposition(dims: Dims3, n: int) -> Optional[Dims3]:
    found = enumerate_decompositions(dims, n)
    return found[0][1] if found else None


def staging_bytes(decomposition: Decomposition) -> int:
    """Send and recv face buffers for every neighbor direction of an interior block."""
    bx, by, bz = decomposition.block
    faces = {0: by * bz, 1: bx * bz, 2: bx * by}
    total = 0
    for axis, parts in enumerate(decomposition.parts):
        neighbors = min(2, parts - 1)
        total += 2 * neighbors * faces[axis] * BYTES_PER_ELEMENT
    return total


def memory_footprint(grid_dims: Dims3, parts: Dims3, staging: bool = True) -> int:
    """Per-block device bytes: two copies of the block plus optional staging."""
    if any(d % p for d, p in zip(grid_dims, parts)):
        raise ConfigError(f"{parts} does not divide {grid_dims}")
    block = (grid_dims[0] // parts[0], grid_dims[1] // parts[1], grid_dims[2] // parts[2])
    data = 2 * block[0] * block[1] * block[2] * BYTES_PER_ELEMENT
    if not staging:
        return data
    return data + staging_bytes(Decomposition(parts=parts, block=block))


def _check_analytic_domain(scenario: Scenario) -> Decomposition:
    run = scenario.run
    if not run.mode.is_mpi:
        raise ConfigError(
            "the closed form covers the bulk-synchronous MPI drivers only; "
            "Charm progress depends on the order callbacks reach each PE queue"
        )
    if run.manual_overlap:
        raise ConfigError("the closed form does not cover manual overlap")
    if run.perturb:
        raise ConfigError("the closed form needs perturbation off")
    if scenario.net.contention and scenario.machine.nodes > 1:
        raise ConfigError("the closed form needs NIC contention off")
    if scenario.machine.gpus_per_node < scenario.machine.pes_per_node:
        raise ConfigError("the closed form needs a dedicated GPU per rank")
    if scenario.grid.total_iterations < 2:
        raise ConfigError("the closed form needs at least two iterations")
    return _decompose_for(scenario)


def _decompose_for(scenario: Scenario) -> Decomposition:
    parts = best_decomposition(scenario.grid.dims, scenario.work_units)
    if parts is None:
        raise ConfigError(f"{scenario.grid.dims} has no divisible decomposition into {scenario.work_units} parts")
    dims = scenario.grid.dims
    return Decomposition(parts=parts, block=(dims[0] // parts[0], dims[1] // parts[1], dims[2] // parts[2]))


def _neighbor(index: Index3, d: int) -> Index3:
    other = list(index)
    other[direction_axis(d)] += direction_sign(d)
    return (other[0], other[1], other[2])


@dataclass
class _Rank:
    """Host cursor and device lane tails of one replayed rank."""

    index: Index3
    dirs: List[int]
    host: int
    tails: Dict[str, int] = field(default_factory=dict)
    previous: Optional[int] = None
    recv_posted: Dict[int, int] = field(default_factory=dict)
    send_posted: Dict[int, int] = field(default_factory=dict)
    waits: List[int] = field(default_factory=list)

    def submit(self, lane: str, at: int, duration: int, deps: Tuple[int, ...] = ()) -> int:
        start = max((at, self.tails.get(lane, 0)) + deps)
        self.tails[lane] = start + duration
        return self.tails[lane]


def analytic_iteration_ends(scenario: Scenario) -> List[int]:
    """Completion time of every iteration's update, replayed in max-plus form.

    Every rank owns its GPU, so its device lanes only interact through stream
    order and dependencies. Ranks interact through halo transfers, which start
    once both the send and the matching recv are posted.
    """
    decomp = _check_analytic_domain(scenario)
    cost, run = scenario.cost, scenario.run
    staged = run.mode is ExecMode.MPI_H
    block = decomp.block
    parts = decomp.parts

    t_launch = seconds_to_ps(cost.t_launch)
    t_msg = seconds_to_ps(cost.msg_cost)
    t_entry = seconds_to_ps(cost.entry_cost)
    face_bytes = {d: face_elements(block, d) * BYTES_PER_ELEMENT for d in range(6)}
    pack = {d: kernel_duration_ps(cost, face_elements(block, d), cost.pack_rate) for d in range(6)}
    copy = {d: copy_duration_ps(cost, face_bytes[d]) for d in range(6)}
    update = kernel_duration_ps(cost, block[0] * block[1] * block[2], cost.kernel_rate)

    # Host-resident messages take the direct alpha-beta path
    mode = NetMode.DEVICE_DIRECT if staged else scenario.resolve_device_mode()
    plans = {d: transfer_plan(face_bytes[d], mode, scenario.net, cost) for d in range(6)}

    if run.sync is SyncPolicy.BASELINE:
        lane_of = {"compute": "compute", "pack": "transfer", "d2h": "transfer", "h2d": "transfer"}
    else:
        lane_of = {"compute": "compute", "pack": "pack", "d2h": "d2h", "h2d": "h2d"}

    ranks: Dict[Index3, _Rank] = {}
    for index in block_indices(parts):
        dirs = [d for d in range(6) if 0 <= index[direction_axis(d)] + direction_sign(d) < parts[direction_axis(d)]]
        ranks[index] = _Rank(index, dirs, t_entry)

    def pack_and_post(rank: _Rank) -> None:
        prior = (rank.previous,) if rank.previous is not None else ()
        gate: Optional[int] = None
        packed: Dict[int, int] = {}
        for d in rank.dirs:
            rank.host += t_launch
            packed[d] = gate = rank.submit(lane_of["pack"], rank.host, pack[d], prior)
        if staged:
            for d in rank.dirs:
                rank.host += t_launch
                gate = rank.submit(lane_of["d2h"], rank.host, copy[d], (packed[d],))
        if gate is not None:
            rank.host = max(rank.host, gate)
        # Recvs are posted before sends, each charged one message cost
        n = len(rank.dirs)
        for k, d in enumerate(rank.dirs):
            rank.recv_posted[d] = rank.host + (k + 1) * t_msg
            rank.send_posted[d] = rank.host + (n + k + 1) * t_msg
        rank.host += 2 * n * t_msg
        rank.waits = []

    def unpack_and_update(rank: _Rank) -> int:
        rank.host = max([rank.host] + rank.waits)
        unpacked: Optional[int] = None
        for d in rank.dirs:
            deps: Tuple[int, ...] = ()
            if staged:
                rank.host += t_launch
                deps = (rank.submit(lane_of["h2d"], rank.host, copy[d]),)
            rank.host += t_launch
            unpacked = rank.submit(lane_of["pack"], rank.host, pack[d], deps)
        rank.host += t_launch
        done = rank.submit("compute", rank.host, update, (unpacked,) if unpacked is not None else ())
        if run.sync is SyncPolicy.BASELINE:
            rank.host = max(rank.host, done)
        rank.previous = done
        return done

    ends: List[int] = []
    for _ in range(scenario.grid.total_iterations):
        for rank in ranks.values():
            pack_and_post(rank)
        for rank in ranks.values():
            for d in rank.dirs:
                peer = ranks[_neighbor(rank.index, d)]
                plan = plans[d]
                start = max(rank.send_posted[d], peer.recv_posted[opposite(d)])
                rank.waits.append(start + min(plan.sender_done_ps, plan.duration_ps))
                peer.waits.append(start + plan.duration_ps)
        ends.append(max(unpack_and_update(rank) for rank in ranks.values()))
    return ends


def analytic_iter_time(scenario: Scenario) -> int:
    """Steady-state time per iteration of the bulk-synchronous driver, in ps."""
    ends = analytic_iteration_ends(scenario)
    return ends[-1] - ends[-2]
