"""Jacobi3D numerics: surface-minimizing decomposition, padded double-precision
blocks with ghost layers, the 7-point stencil and halo pack/unpack.
"""

import itertools
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from .config import BYTES_PER_ELEMENT, DIRICHLET_VALUE, INITIAL_VALUE
from .errors import ConfigError, SimulationError
from .models import Decomposition, Dims3, Index3

# Directions in their fixed order: -x, +x, -y, +y, -z, +z
DIRECTIONS = ("-x", "+x", "-y", "+y", "-z", "+z")
AXIS_NAMES = "xyz"

Region = Tuple[slice, slice, slice]


def direction_axis(d: int) -> int:
    return d // 2


def direction_sign(d: int) -> int:
    return -1 if d % 2 == 0 else 1


def opposite(d: int) -> int:
    return d ^ 1


def stencil_point_sum(c, xm, xp, ym, yp, zm, zp):
    """The single-element update, shared by the blocked solver and the serial reference."""
    return ((((((c + xm) + xp) + ym) + yp) + zm) + zp) / 7.0


def factor_triples(n: int) -> List[Dims3]:
    """All ordered (a, b, c) with a*b*c == n, in lexicographic order."""
    if n < 1:
        raise ConfigError(f"cannot decompose into {n} parts")
    triples: List[Dims3] = []
    for a in range(1, n + 1):
        if n % a:
            continue
        rest = n // a
        for b in range(1, rest + 1):
            if rest % b == 0:
                triples.append((a, b, rest // b))
    return triples


def block_surface(block: Dims3) -> int:
    bx, by, bz = block
    return 2 * (bx * by + by * bz + bx * bz)


def decompose(dims: Dims3, n: int) -> Decomposition:
    """Surface-minimizing divisible factor triple; ties go to the smallest triple."""
    if any(d < 1 for d in dims):
        raise ConfigError(f"grid dims must be >= 1, got {dims}")
    best: Optional[Tuple[int, Dims3]] = None
    failing: Dict[int, int] = {}
    for parts in factor_triples(n):
        bad = [axis for axis in range(3) if dims[axis] % parts[axis]]
        if bad:
            failing.setdefault(bad[0], parts[bad[0]])
            continue
        block = (dims[0] // parts[0], dims[1] // parts[1], dims[2] // parts[2])
        area = n * block_surface(block)
        if best is None or area < best[0]:
            best = (area, parts)
    if best is None:
        axis = min(failing)
        raise ConfigError(
            f"no divisible decomposition of {dims} into {n} parts: "
            f"dimension {AXIS_NAMES[axis]}={dims[axis]} is not divisible by {failing[axis]}"
        )
    parts = best[1]
    return Decomposition(parts=parts, block=(dims[0] // parts[0], dims[1] // parts[1], dims[2] // parts[2]))


def face_elements(block: Dims3, d: int) -> int:
    bx, by, bz = block
    return (by * bz, bx * bz, bx * by)[direction_axis(d)]


def max_face_bytes(block: Dims3) -> int:
    return max(face_elements(block, d) for d in range(0, 6, 2)) * BYTES_PER_ELEMENT


def exterior_regions(block: Dims3) -> List[Region]:
    """Disjoint one-element-thick shells of the owned region, in padded coordinates."""
    bx, by, bz = block
    regions: List[Region] = []
    for i in sorted({1, bx}):
        regions.append((slice(i, i + 1), slice(1, by + 1), slice(1, bz + 1)))
    if bx > 2:
        xs = slice(2, bx)
        for j in sorted({1, by}):
            regions.append((xs, slice(j, j + 1), slice(1, bz + 1)))
        if by > 2:
            ys = slice(2, by)
            for k in sorted({1, bz}):
                regions.append((xs, ys, slice(k, k + 1)))
    return regions


def interior_region(block: Dims3) -> Optional[Region]:
    bx, by, bz = block
    if min(bx, by, bz) <= 2:
        return None
    return (slice(2, bx), slice(2, by), slice(2, bz))


def interior_elements(block: Dims3) -> int:
    return max(0, block[0] - 2) * max(0, block[1] - 2) * max(0, block[2] - 2)


def _shift(s: slice, delta: int) -> slice:
    return slice(s.start + delta, s.stop + delta)


def apply_stencil(src: np.ndarray, dst: np.ndarray, region: Region) -> None:
    si, sj, sk = region
    dst[si, sj, sk] = stencil_point_sum(
        src[si, sj, sk],
        src[_shift(si, -1), sj, sk],
        src[_shift(si, 1), sj, sk],
        src[si, _shift(sj, -1), sk],
        src[si, _shift(sj, 1), sk],
        src[si, sj, _shift(sk, -1)],
        src[si, sj, _shift(sk, 1)],
    )


def _face_index(n: int, d: int, ghost: bool) -> int:
    if direction_sign(d) < 0:
        return 0 if ghost else 1
    return n + 1 if ghost else n


def _face_view(buf: np.ndarray, block: Dims3, d: int, ghost: bool) -> np.ndarray:
    axis = direction_axis(d)
    index: List[slice] = [slice(1, n + 1) for n in block]
    at = _face_index(block[axis], d, ghost)
    index[axis] = slice(at, at + 1)
    return buf[tuple(index)]


class JacobiBlock:
    """One chare's share of the grid with double buffering."""

    def __init__(
        self,
        index: Index3,
        decomposition: Decomposition,
        numerics: bool = True,
        debug: bool = False,
    ) -> None:
        self.index = index
        self.parts = decomposition.parts
        self.block = decomposition.block
        self.origin = tuple(i * b for i, b in zip(index, self.block))
        self.debug = debug
        self.cur = 0
        self.flips = 0
        self.neighbors: Dict[int, Index3] = {}
        for d in range(6):
            axis = direction_axis(d)
            other = list(index)
            other[axis] += direction_sign(d)
            if 0 <= other[axis] < self.parts[axis]:
                self.neighbors[d] = (other[0], other[1], other[2])
        self.received: Set[int] = set()
        self.send: Dict[int, Optional[np.ndarray]] = {d: None for d in self.neighbors}
        self.recv: Dict[int, Optional[np.ndarray]] = {d: None for d in self.neighbors}
        self.bufs: Optional[List[np.ndarray]] = None
        if numerics:
            self.bufs = [self._initial_buffer(), self._initial_buffer()]

    def _initial_buffer(self) -> np.ndarray:
        bx, by, bz = self.block
        buf = np.full((bx + 2, by + 2, bz + 2), INITIAL_VALUE, dtype=np.float64)
        for d in range(6):
            if d not in self.neighbors:
                _face_view(buf, self.block, d, ghost=True)[...] = DIRICHLET_VALUE
        return buf

    @property
    def neighbor_dirs(self) -> List[int]:
        return sorted(self.neighbors)

    @property
    def elements(self) -> int:
        return self.block[0] * self.block[1] * self.block[2]

    def face_elements(self, d: int) -> int:
        return face_elements(self.block, d)

    def face_bytes(self, d: int) -> int:
        return self.face_elements(d) * BYTES_PER_ELEMENT

    def max_face_elements(self) -> int:
        return max((self.face_elements(d) for d in self.neighbors), default=0)

    def swap(self) -> None:
        self.cur = 1 - self.cur
        self.flips += 1

    def interior(self, which: Optional[int] = None) -> Optional[np.ndarray]:
        if self.bufs is None:
            return None
        buf = self.bufs[self.cur if which is None else which]
        return buf[1:-1, 1:-1, 1:-1]

    # ---- updates ----
    def _regions(self, regions: Sequence[Region], src: int, dst: int) -> None:
        if self.bufs is None:
            return
        for region in regions:
            apply_stencil(self.bufs[src], self.bufs[dst], region)

    def update(self, src: int, dst: int) -> None:
        bx, by, bz = self.block
        self._regions([(slice(1, bx + 1), slice(1, by + 1), slice(1, bz + 1))], src, dst)
        self._check(dst)

    def interior_update(self, src: int, dst: int) -> None:
        region = interior_region(self.block)
        if region is not None:
            self._regions([region], src, dst)

    def exterior_update(self, src: int, dst: int) -> None:
        self._regions(exterior_regions(self.block), src, dst)
        self._check(dst)

    def _check(self, dst: int) -> None:
        if not self.debug or self.bufs is None:
            return
        if not np.isfinite(self.bufs[dst][1:-1, 1:-1, 1:-1]).all():
            raise SimulationError(f"block {self.index}: non-finite value after update into buffer {dst}")

    # ---- halos ----
    def pack(self, d: int, src: int) -> None:
        if d not in self.neighbors:
            raise SimulationError(f"block {self.index} has no neighbor in direction {DIRECTIONS[d]}")
        if self.bufs is not None:
            self.send[d] = _face_view(self.bufs[src], self.block, d, ghost=False).copy()

    def pack_all(self, src: int) -> None:
        for d in self.neighbor_dirs:
            self.pack(d, src)

    def receive(self, d: int, data: Optional[np.ndarray]) -> None:
        self.recv[d] = data
        self.received.add(d)

    def unpack(self, d: int, dst: int) -> None:
        if d not in self.received:
            raise SimulationError(f"block {self.index}: unpack {DIRECTIONS[d]} before its halo arrived")
        self.received.discard(d)
        if self.bufs is not None and self.recv[d] is not None:
            _face_view(self.bufs[dst], self.block, d, ghost=True)[...] = self.recv[d]

    def unpack_all(self, dst: int) -> None:
        for d in self.neighbor_dirs:
            self.unpack(d, dst)


def assemble(blocks: Sequence[JacobiBlock], dims: Dims3) -> np.ndarray:
    grid = np.empty(dims, dtype=np.float64)
    for block in blocks:
        x0, y0, z0 = block.origin
        bx, by, bz = block.block
        grid[x0 : x0 + bx, y0 : y0 + by, z0 : z0 + bz] = block.interior()
    return grid


def block_indices(parts: Dims3) -> List[Index3]:
    return list(itertools.product(range(parts[0]), range(parts[1]), range(parts[2])))
