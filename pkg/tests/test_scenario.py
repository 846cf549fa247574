import pytest

from src.config import DEFAULT_ITERATIONS, DEFAULT_T_LAUNCH
from src.errors import ConfigError
from src.models import ExecMode, Fusion, LaunchMode, NetMode, Scaling, SyncPolicy
from src.scenario import dump_config, load_config, parse_config

MINIMAL = """
[grid]
dims = 24 24 24

[run]
mode = charm_d
"""


def test_minimal_file_gets_defaults():
    scenario = parse_config(MINIMAL)
    assert scenario.grid.dims == (24, 24, 24)
    assert scenario.grid.iterations == DEFAULT_ITERATIONS
    assert scenario.run.mode is ExecMode.CHARM_D
    assert scenario.run.odf == 1
    assert scenario.cost.t_launch == DEFAULT_T_LAUNCH
    assert scenario.net.device_mode is None
    assert scenario.resolve_device_mode() is NetMode.DEVICE_DIRECT


def test_full_charm_d_combination_is_accepted():
    text = MINIMAL + "odf = 4\nfusion = c\nlaunch = graph\nsync = baseline\n"
    run = parse_config(text).run
    assert (run.odf, run.fusion, run.launch, run.sync) == (4, Fusion.C, LaunchMode.GRAPH, SyncPolicy.BASELINE)


def test_mpi_d_resolves_to_the_pipelined_protocol():
    text = "[grid]\ndims = 8,8,8\nscaling = strong\n[run]\nmode = mpi_d\n"
    scenario = parse_config(text)
    assert scenario.resolve_device_mode() is NetMode.PIPELINED
    assert scenario.grid.scaling is Scaling.STRONG


@pytest.mark.parametrize(
    "extra, line, message",
    [
        ("odf = 0\n", 7, "'odf' must be >= 1"),
        ("color = blue\n", 7, "unknown key 'color'"),
        ("odf = many\n", 7, "bad value for 'odf'"),
        ("fusion = d\n", 7, "expected one of none|a|b|c"),
        ("mode = mpi_h\n", 7, "duplicate key 'mode'"),
        ("[extras]\n", 7, "unknown section"),
        ("just text\n", 7, "expected 'key = value'"),
    ],
)
def test_errors_carry_line_numbers(extra, line, message):
    with pytest.raises(ConfigError) as info:
        parse_config(MINIMAL + extra, source="s.cfg")
    assert f"s.cfg: line {line}:" in str(info.value)
    assert message in str(info.value)


def test_missing_required_key():
    with pytest.raises(ConfigError, match=r"missing required key 'dims' in \[grid\]"):
        parse_config("[run]\nmode = charm_h\n")


def test_key_outside_section():
    with pytest.raises(ConfigError, match="outside of any"):
        parse_config("dims = 1 1 1\n")


@pytest.mark.parametrize(
    "extra",
    [
        "fusion = a\n[run]\n",
        "launch = graph\n",
        "manual_overlap = true\n",
    ],
)
def test_invalid_mode_combinations(extra):
    text = "[grid]\ndims = 8 8 8\n[run]\nmode = charm_h\n" + extra
    with pytest.raises(ConfigError):
        parse_config(text)


def test_mpi_requires_odf_one():
    with pytest.raises(ConfigError, match="'odf' must be 1"):
        parse_config("[grid]\ndims = 8 8 8\n[run]\nmode = mpi_h\nodf = 2\n")


def test_device_mode_needs_device_communication():
    text = "[grid]\ndims = 8 8 8\n[run]\nmode = charm_h\n[net]\ndevice_mode = staged\n"
    with pytest.raises(ConfigError, match="line 6"):
        parse_config(text)


def test_dump_then_load_reproduces_the_scenario(tmp_path):
    text = MINIMAL + (
        "odf = 2\nfusion = b\nseed = 11\nperturb = yes\njitter = 1.5e-06\n"
        "[net]\ndevice_mode = pipelined\ncontention = off\nbeta = 12.5e9\n"
        "[cost]\nt_launch = 3.3e-06\n"
    )
    scenario = parse_config(text)
    path = tmp_path / "resolved.cfg"
    path.write_text(dump_config(scenario), encoding="utf-8")
    assert load_config(str(path)) == scenario


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(str(tmp_path / "nope.cfg"))
