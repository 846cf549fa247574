import numpy as np
import pytest

from src.errors import ConfigError, SimulationError
from src.models import GridSpec
from src.oracle import serial_jacobi
from src.stencil import (
    JacobiBlock,
    decompose,
    exterior_regions,
    face_elements,
    factor_triples,
    interior_elements,
    interior_region,
)


def test_factor_triples_are_lexicographic():
    assert factor_triples(4) == [(1, 1, 4), (1, 2, 2), (1, 4, 1), (2, 1, 2), (2, 2, 1), (4, 1, 1)]


def test_decompose_minimizes_surface():
    d = decompose((24, 24, 24), 8)
    assert d.parts == (2, 2, 2) and d.block == (12, 12, 12)
    assert decompose((48, 24, 24), 2).parts == (2, 1, 1)


def test_decompose_breaks_ties_lexicographically():
    assert decompose((24, 24, 24), 2).parts == (1, 1, 2)


def test_decompose_names_the_failing_axis():
    with pytest.raises(ConfigError, match="dimension x=8 is not divisible by 3"):
        decompose((8, 8, 8), 3)
    with pytest.raises(ConfigError):
        decompose((0, 8, 8), 1)


@pytest.mark.parametrize("block", [(5, 4, 3), (2, 2, 2), (1, 5, 5), (3, 4, 2), (6, 6, 6)])
def test_exterior_and_interior_tile_the_block(block):
    count = np.zeros(tuple(n + 2 for n in block), dtype=int)
    regions = list(exterior_regions(block))
    inner = interior_region(block)
    if inner is not None:
        regions.append(inner)
    for region in regions:
        count[region] += 1
    assert (count[1:-1, 1:-1, 1:-1] == 1).all()
    assert count.sum() == block[0] * block[1] * block[2]
    if inner is None:
        assert interior_elements(block) == 0
    else:
        assert int(count[inner].sum()) == interior_elements(block)


def test_single_block_matches_serial_reference():
    grid = GridSpec(dims=(6, 5, 4), iterations=3, warmup=0)
    block = JacobiBlock((0, 0, 0), decompose(grid.dims, 1))
    for _ in range(3):
        block.update(block.cur, 1 - block.cur)
        block.swap()
    np.testing.assert_array_equal(block.interior(), serial_jacobi(grid))
    assert block.flips == 3


def test_split_update_equals_full_update():
    decomposition = decompose((6, 7, 8), 1)
    full, split = JacobiBlock((0, 0, 0), decomposition), JacobiBlock((0, 0, 0), decomposition)
    values = np.linspace(0.0, 1.0, 6 * 7 * 8).reshape(6, 7, 8)
    for b in (full, split):
        b.bufs[0][1:-1, 1:-1, 1:-1] = values
    full.update(0, 1)
    split.interior_update(0, 1)
    split.exterior_update(0, 1)
    np.testing.assert_array_equal(full.bufs[1], split.bufs[1])


def test_halo_moves_face_into_neighbor_ghost_layer():
    decomposition = decompose((4, 3, 3), 2)
    assert decomposition.parts == (2, 1, 1)
    left, right = JacobiBlock((0, 0, 0), decomposition), JacobiBlock((1, 0, 0), decomposition)
    assert left.neighbor_dirs == [1] and right.neighbor_dirs == [0]
    left.bufs[0][1:-1, 1:-1, 1:-1] = np.arange(18.0).reshape(2, 3, 3)
    left.pack(1, 0)
    assert left.send[1].size == face_elements(left.block, 1) == 9
    right.receive(0, left.send[1])
    right.unpack(0, 0)
    np.testing.assert_array_equal(right.bufs[0][0, 1:-1, 1:-1], left.bufs[0][2, 1:-1, 1:-1])


def test_global_faces_hold_the_dirichlet_value():
    block = JacobiBlock((0, 0, 0), decompose((4, 3, 3), 2))
    for buf in block.bufs:
        assert (buf[0, 1:-1, 1:-1] == 1.0).all()
        assert (buf[-1, 1:-1, 1:-1] == 0.0).all()


def test_unpack_before_arrival_is_an_error():
    block = JacobiBlock((0, 0, 0), decompose((4, 3, 3), 2))
    with pytest.raises(SimulationError, match="before its halo arrived"):
        block.unpack(1, 0)
    with pytest.raises(SimulationError):
        block.pack(0, 0)


def test_debug_mode_flags_non_finite_values():
    block = JacobiBlock((0, 0, 0), decompose((3, 3, 3), 1), debug=True)
    block.bufs[0][2, 2, 2] = np.nan
    with pytest.raises(SimulationError, match="non-finite"):
        block.update(0, 1)


def test_numerics_off_keeps_no_arrays():
    block = JacobiBlock((0, 0, 0), decompose((4, 3, 3), 2), numerics=False)
    block.update(0, 1)
    block.pack(1, 0)
    assert block.bufs is None and block.interior() is None and block.send[1] is None
