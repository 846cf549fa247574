"""Scenario files: `[section]` headers and `key = value` lines.

load_config() parses and validates with line-numbered errors; dump_config()
writes every resolved key so that loading the dump reproduces the scenario.
"""

import dataclasses
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Tuple

from .config import KEY_VALUE_RE, SECTION_RE
from .errors import ConfigError
from .models import (
    CostModel,
    ExecMode,
    Fusion,
    GridSpec,
    LaunchMode,
    Machine,
    NetMode,
    NetParams,
    RunOptions,
    Scaling,
    Scenario,
    SyncPolicy,
)

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in _TRUE:
        return True
    if lowered in _FALSE:
        return False
    raise ValueError(f"expected true/false, got '{text}'")


def _parse_int(text: str) -> int:
    return int(text.replace("_", ""), 10)


def _parse_dims(text: str) -> Tuple[int, int, int]:
    parts = text.replace(",", " ").replace("x", " ").split()
    if len(parts) != 3:
        raise ValueError(f"expected three integers, got '{text}'")
    return (_parse_int(parts[0]), _parse_int(parts[1]), _parse_int(parts[2]))


def _enum_parser(enum_cls: type) -> Callable[[str], Enum]:
    def parse(text: str) -> Enum:
        try:
            return enum_cls(text.lower())
        except ValueError:
            allowed = "|".join(member.value for member in enum_cls)
            raise ValueError(f"expected one of {allowed}, got '{text}'") from None

    return parse


def _parse_device_mode(text: str) -> Optional[NetMode]:
    if text.lower() == "auto":
        return None
    return _enum_parser(NetMode)(text)


_SECTIONS: Dict[str, Tuple[type, Dict[str, Callable[[str], Any]]]] = {
    "machine": (
        Machine,
        {"nodes": _parse_int, "gpus_per_node": _parse_int, "pes_per_node": _parse_int, "slots": _parse_int},
    ),
    "cost": (
        CostModel,
        {
            "t_launch": float,
            "t_graph_launch": float,
            "t_kernel_fixed": float,
            "kernel_rate": float,
            "pack_rate": float,
            "pcie_bw": float,
            "pcie_lat": float,
            "entry_cost": float,
            "msg_cost": float,
        },
    ),
    "net": (
        NetParams,
        {
            "alpha": float,
            "beta": float,
            "pipeline_threshold": _parse_int,
            "chunk_size": _parse_int,
            "device_mode": _parse_device_mode,
            "contention": _parse_bool,
        },
    ),
    "grid": (
        GridSpec,
        {"dims": _parse_dims, "iterations": _parse_int, "warmup": _parse_int, "scaling": _enum_parser(Scaling)},
    ),
    "run": (
        RunOptions,
        {
            "name": str,
            "mode": _enum_parser(ExecMode),
            "odf": _parse_int,
            "fusion": _enum_parser(Fusion),
            "launch": _enum_parser(LaunchMode),
            "sync": _enum_parser(SyncPolicy),
            "manual_overlap": _parse_bool,
            "seed": _parse_int,
            "perturb": _parse_bool,
            "jitter": float,
            "numerics": _parse_bool,
            "debug": _parse_bool,
            "max_events": _parse_int,
        },
    ),
}

REQUIRED_KEYS = (("grid", "dims"), ("run", "mode"))


def parse_config(text: str, source: str = "<string>") -> Scenario:
    values: Dict[str, Dict[str, Any]] = {name: {} for name in _SECTIONS}
    lines: Dict[Tuple[str, str], int] = {}
    section: Optional[str] = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        header = SECTION_RE.match(line)
        if header:
            section = header.group(1).lower()
            if section not in _SECTIONS:
                raise ConfigError(f"{source}: line {lineno}: unknown section [{section}]")
            continue
        match = KEY_VALUE_RE.match(line)
        if not match:
            raise ConfigError(f"{source}: line {lineno}: expected 'key = value', got '{line}'")
        if section is None:
            raise ConfigError(f"{source}: line {lineno}: key outside of any [section]")
        key, value = match.group(1).lower(), match.group(2).strip()
        parsers = _SECTIONS[section][1]
        if key not in parsers:
            raise ConfigError(f"{source}: line {lineno}: unknown key '{key}' in [{section}]")
        if (section, key) in lines:
            raise ConfigError(f"{source}: line {lineno}: duplicate key '{key}' (first set on line {lines[(section, key)]})")
        try:
            values[section][key] = parsers[key](value)
        except ValueError as exc:
            raise ConfigError(f"{source}: line {lineno}: bad value for '{key}': {exc}") from None
        lines[(section, key)] = lineno

    for section_name, key in REQUIRED_KEYS:
        if key not in values[section_name]:
            raise ConfigError(f"{source}: missing required key '{key}' in [{section_name}]")

    scenario = Scenario(
        grid=GridSpec(**values["grid"]),
        run=RunOptions(**values["run"]),
        machine=Machine(**values["machine"]),
        cost=CostModel(**values["cost"]),
        net=NetParams(**values["net"]),
    )
    try:
        validate_scenario(scenario)
    except ConfigError as exc:
        line = _blame(str(exc), lines)
        prefix = f"{source}: line {line}: " if line else f"{source}: "
        raise ConfigError(prefix + str(exc)) from None
    return scenario


def _blame(message: str, lines: Dict[Tuple[str, str], int]) -> Optional[int]:
    """Line of the first key named in a validation message, if it was set in the file."""
    for (section, key), lineno in sorted(lines.items(), key=lambda item: item[1]):
        if f"'{key}'" in message or f"{section}.{key}" in message:
            return lineno
    return None


def load_config(path: str) -> Scenario:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file {path}: {exc}") from None
    return parse_config(text, source=path)


def _format_value(value: Any) -> str:
    if value is None:
        return "auto"
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return " ".join(str(v) for v in value)
    return str(value)


def dump_config(scenario: Scenario) -> str:
    sections = {
        "machine": scenario.machine,
        "cost": scenario.cost,
        "net": scenario.net,
        "grid": scenario.grid,
        "run": scenario.run,
    }
    out: List[str] = []
    for name, obj in sections.items():
        out.append(f"[{name}]")
        for f in dataclasses.fields(obj):
            out.append(f"{f.name} = {_format_value(getattr(obj, f.name))}")
        out.append("")
    return "\n".join(out)


def validate_scenario(scenario: Scenario) -> None:
    """Raise ConfigError for any value or mode combination outside the model."""
    m, c, n, g, r = scenario.machine, scenario.cost, scenario.net, scenario.grid, scenario.run

    for key in ("nodes", "gpus_per_node", "pes_per_node", "slots"):
        if getattr(m, key) < 1:
            raise ConfigError(f"'{key}' must be >= 1")
    for key in ("t_launch", "t_graph_launch", "t_kernel_fixed", "pcie_lat", "entry_cost", "msg_cost"):
        if getattr(c, key) < 0:
            raise ConfigError(f"'{key}' must be >= 0")
    for key in ("kernel_rate", "pack_rate", "pcie_bw"):
        if getattr(c, key) <= 0:
            raise ConfigError(f"'{key}' must be > 0")
    if n.alpha < 0:
        raise ConfigError("'alpha' must be >= 0")
    if n.beta <= 0:
        raise ConfigError("'beta' must be > 0")
    if n.chunk_size <= 0:
        raise ConfigError("'chunk_size' must be > 0")
    if n.pipeline_threshold < 0:
        raise ConfigError("'pipeline_threshold' must be >= 0")

    if len(g.dims) != 3 or any(d < 1 for d in g.dims):
        raise ConfigError(f"'dims' must be three integers >= 1, got {g.dims}")
    if g.iterations < 1:
        raise ConfigError("'iterations' must be >= 1")
    if g.warmup < 0:
        raise ConfigError("'warmup' must be >= 0")

    if r.odf < 1:
        raise ConfigError("'odf' must be >= 1")
    if r.mode.is_mpi and r.odf != 1:
        raise ConfigError(f"'odf' must be 1 for {r.mode.value} (one rank per PE)")
    if r.manual_overlap and not r.mode.is_mpi:
        raise ConfigError("'manual_overlap' applies to MPI modes only")
    if r.fusion is not Fusion.NONE and r.mode is not ExecMode.CHARM_D:
        raise ConfigError("'fusion' requires mode charm_d (device-direct communication)")
    if r.launch is LaunchMode.GRAPH and r.mode is not ExecMode.CHARM_D:
        raise ConfigError("'launch' = graph requires mode charm_d (device-direct communication)")
    if r.jitter < 0:
        raise ConfigError("'jitter' must be >= 0")
    if r.max_events < 1:
        raise ConfigError("'max_events' must be >= 1")
    if n.device_mode is not None and not r.mode.device_comm:
        raise ConfigError(f"'device_mode' only applies to device-communication modes, not {r.mode.value}")
