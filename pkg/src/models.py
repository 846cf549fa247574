from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

from .config import (
    DEFAULT_ALPHA,
    DEFAULT_BETA,
    DEFAULT_CHUNK_SIZE,
    DEFAULT_DEVICE_SLOTS,
    DEFAULT_ENTRY_COST,
    DEFAULT_ITERATIONS,
    DEFAULT_JITTER,
    DEFAULT_KERNEL_RATE,
    DEFAULT_MAX_EVENTS,
    DEFAULT_MSG_COST,
    DEFAULT_PACK_RATE,
    DEFAULT_PCIE_BW,
    DEFAULT_PCIE_LAT,
    DEFAULT_PIPELINE_THRESHOLD,
    DEFAULT_T_GRAPH_LAUNCH,
    DEFAULT_T_KERNEL_FIXED,
    DEFAULT_T_LAUNCH,
    DEFAULT_WARMUP,
)

Dims3 = Tuple[int, int, int]
Index3 = Tuple[int, int, int]


class ExecMode(Enum):
    MPI_H = "mpi_h"
    MPI_D = "mpi_d"
    CHARM_H = "charm_h"
    CHARM_D = "charm_d"

    @property
    def is_mpi(self) -> bool:
        return self in (ExecMode.MPI_H, ExecMode.MPI_D)

    @property
    def device_comm(self) -> bool:
        return self in (ExecMode.MPI_D, ExecMode.CHARM_D)


class Fusion(Enum):
    NONE = "none"
    A = "a"
    B = "b"
    C = "c"


class LaunchMode(Enum):
    INDIVIDUAL = "individual"
    GRAPH = "graph"


class SyncPolicy(Enum):
    BASELINE = "baseline"
    OPTIMIZED = "optimized"


class NetMode(Enum):
    HOST_STAGING = "staged"
    DEVICE_DIRECT = "direct"
    PIPELINED = "pipelined"


class Location(Enum):
    HOST = "host"
    DEVICE = "device"


class Scaling(Enum):
    WEAK = "weak"
    STRONG = "strong"


@dataclass(frozen=True)
class Machine:
    nodes: int = 1
    gpus_per_node: int = 1
    pes_per_node: int = 1
    slots: int = DEFAULT_DEVICE_SLOTS

    @property
    def total_pes(self) -> int:
        return self.nodes * self.pes_per_node

    @property
    def total_gpus(self) -> int:
        return self.nodes * self.gpus_per_node


@dataclass(frozen=True)
class CostModel:
    t_launch: float = DEFAULT_T_LAUNCH
    t_graph_launch: float = DEFAULT_T_GRAPH_LAUNCH
    t_kernel_fixed: float = DEFAULT_T_KERNEL_FIXED
    kernel_rate: float = DEFAULT_KERNEL_RATE
    pack_rate: float = DEFAULT_PACK_RATE
    pcie_bw: float = DEFAULT_PCIE_BW
    pcie_lat: float = DEFAULT_PCIE_LAT
    entry_cost: float = DEFAULT_ENTRY_COST
    msg_cost: float = DEFAULT_MSG_COST


@dataclass(frozen=True)
class NetParams:
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    pipeline_threshold: int = DEFAULT_PIPELINE_THRESHOLD
    chunk_size: int = DEFAULT_CHUNK_SIZE
    # None resolves per execution mode (see resolve_device_mode)
    device_mode: Optional[NetMode] = None
    contention: bool = True


@dataclass(frozen=True)
class GridSpec:
    dims: Dims3
    iterations: int = DEFAULT_ITERATIONS
    warmup: int = DEFAULT_WARMUP
    scaling: Scaling = Scaling.WEAK

    @property
    def total_iterations(self) -> int:
        return self.iterations + self.warmup


@dataclass(frozen=True)
class RunOptions:
    mode: ExecMode
    name: str = ""
    odf: int = 1
    fusion: Fusion = Fusion.NONE
    launch: LaunchMode = LaunchMode.INDIVIDUAL
    sync: SyncPolicy = SyncPolicy.OPTIMIZED
    manual_overlap: bool = False
    seed: int = 0
    perturb: bool = False
    jitter: float = DEFAULT_JITTER
    numerics: bool = True
    debug: bool = False
    max_events: int = DEFAULT_MAX_EVENTS


@dataclass(frozen=True)
class Scenario:
    grid: GridSpec
    run: RunOptions
    machine: Machine = Machine()
    cost: CostModel = CostModel()
    net: NetParams = NetParams()

    @property
    def scenario_id(self) -> str:
        if self.run.name:
            return self.run.name
        return f"{self.run.mode.value}-odf{self.run.odf}-{self.run.fusion.value}-{self.run.launch.value}"

    @property
    def work_units(self) -> int:
        return self.machine.total_pes * self.run.odf

    def resolve_device_mode(self) -> NetMode:
        if self.net.device_mode is not None:
            return self.net.device_mode
        if self.run.mode is ExecMode.MPI_D:
            return NetMode.PIPELINED
        return NetMode.DEVICE_DIRECT


@dataclass(frozen=True)
class Decomposition:
    parts: Dims3
    block: Dims3

    @property
    def count(self) -> int:
        return self.parts[0] * self.parts[1] * self.parts[2]


@dataclass
class MetricRow:
    scenario: str
    iteration: int
    time_ps: int
    pe_busy: float
    gpu_busy: float
    exposed_comm_ps: int
    launches: int
    nic_bytes: int


@dataclass
class SummaryPoint:
    series: str
    x: float
    mean_time_ps: float
    label: str = ""
    best: bool = False


@dataclass
class LaunchRecord:
    kernels: int = 0
    graphs: int = 0
    variants: List[int] = field(default_factory=list)


@dataclass
class MetricsTable:
    rows: List[MetricRow] = field(default_factory=list)
    points: List[SummaryPoint] = field(default_factory=list)
    oracle_status: str = "skipped"
    trace_hash: str = ""
    # (chare index, iteration) -> launches issued by that chare for that iteration
    launch_log: Dict[Tuple[Index3, int], LaunchRecord] = field(default_factory=dict)
    diagnostics: List[str] = field(default_factory=list)

    @property
    def mean_time_ps(self) -> float:
        if not self.rows:
            return 0.0
        return sum(r.time_ps for r in self.rows) / len(self.rows)

    @property
    def failed(self) -> bool:
        return self.oracle_status == "mismatch"

    def extend(self, other: "MetricsTable") -> None:
        self.rows.extend(other.rows)
        self.points.extend(other.points)
        self.diagnostics.extend(other.diagnostics)
