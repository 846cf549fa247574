import re

# Virtual time resolution: all simulated durations are integer picoseconds
PS_PER_SECOND = 10**12

# Watchdog cap on fired events per simulation instance
DEFAULT_MAX_EVENTS = 10**8

# Entities reported in a livelock error are taken from this many most recent events
LIVELOCK_WINDOW = 1000

# Host-side runtime costs (seconds)
DEFAULT_ENTRY_COST = 0.5e-6
DEFAULT_MSG_COST = 0.5e-6

# Device cost model (seconds, elements/second, bytes/second)
DEFAULT_T_LAUNCH = 5e-6
DEFAULT_T_GRAPH_LAUNCH = 10e-6
DEFAULT_T_KERNEL_FIXED = 2e-6
DEFAULT_KERNEL_RATE = 5e10
DEFAULT_PACK_RATE = 1e10
DEFAULT_PCIE_BW = 16e9
DEFAULT_PCIE_LAT = 5e-6
DEFAULT_DEVICE_SLOTS = 8

# Network (alpha-beta) defaults; 23 GB/s is a per-node injection bandwidth
DEFAULT_ALPHA = 1e-6
DEFAULT_BETA = 23e9
DEFAULT_PIPELINE_THRESHOLD = 1 << 20
DEFAULT_CHUNK_SIZE = 1 << 20

# Adversarial delivery perturbation: max jitter added to a network delivery
DEFAULT_JITTER = 2e-6

# Scenario defaults
DEFAULT_ITERATIONS = 100
DEFAULT_WARMUP = 10
ODF_SWEEP_VALUES = (1, 2, 4, 8, 16)

BYTES_PER_ELEMENT = 8
DIRICHLET_VALUE = 1.0
INITIAL_VALUE = 0.0

CSV_COLUMNS = (
    "scenario",
    "iteration",
    "time_s",
    "pe_busy",
    "gpu_busy",
    "exposed_comm_s",
    "launches",
    "nic_bytes",
)

THREADS_ENV_VAR = "OVERLAPSIM_THREADS"

# Exit codes of the CLI verbs
EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SIMULATION = 2
EXIT_ORACLE = 3

# Matches "[section]" headers in scenario files
SECTION_RE = re.compile(r"^\[\s*([A-Za-z_][A-Za-z0-9_]*)\s*\]$")
# Matches "key = value" lines in scenario files
KEY_VALUE_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*)$")
