"""Parameterized warehouse layout generator.

Layout: a delivery border row on top (delivery bays mixed with floor), then
``shelf_rows`` rows of shelf blocks. Each shelf row holds ``blocks_per_row``
blocks of ``block_length`` x ``block_depth`` storage cells, with corridors of
``corridor_width`` around every block. Defaults give a 15 x 29 map.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..gridmap import CellKind, GridMap
from ..pathcache import PathCacheError, precompute_all


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class LayoutParams:
    shelf_rows: int = 4
    blocks_per_row: int = 3
    block_length: int = 7
    block_depth: int = 1
    corridor_width: int = 2
    delivery_bays: int = 8
    wall_density: float = 0.0  # random pillars dropped into corridors

    @property
    def height(self) -> int:
        return 1 + self.corridor_width + self.shelf_rows * (self.block_depth + self.corridor_width)

    @property
    def width(self) -> int:
        return self.corridor_width + self.blocks_per_row * (self.block_length + self.corridor_width)

    def as_dict(self) -> dict:
        return asdict(self)


def _layout(params: LayoutParams, rng: np.random.Generator) -> GridMap:
    p = params
    if p.delivery_bays < 1:
        raise LayoutError("need at least one delivery bay")
    if min(p.shelf_rows, p.blocks_per_row, p.block_length, p.block_depth, p.corridor_width) < 1:
        raise LayoutError("layout parameters must be positive")
    if p.delivery_bays > p.width:
        raise LayoutError("more delivery bays than border cells")
    H, W = p.height, p.width
    kinds = np.full((H, W), CellKind.FLOOR, dtype=np.int8)
    for r in range(p.shelf_rows):
        top = 1 + p.corridor_width + r * (p.block_depth + p.corridor_width)
        for b in range(p.blocks_per_row):
            left = p.corridor_width + b * (p.block_length + p.corridor_width)
            kinds[top:top + p.block_depth, left:left + p.block_length] = CellKind.STORAGE
    bays = np.sort(rng.choice(W, size=p.delivery_bays, replace=False))
    kinds[0, bays] = CellKind.DELIVERY
    if p.wall_density > 0:
        floor = np.flatnonzero(kinds.ravel() == CellKind.FLOOR)
        floor = floor[floor >= W]  # keep the delivery row clear
        k = int(round(p.wall_density * floor.size))
        if k:
            kinds.ravel()[rng.choice(floor, size=k, replace=False)] = CellKind.WALL
    return GridMap(W, H, tuple(CellKind(int(v)) for v in kinds.ravel()))


def generate_map(params: LayoutParams | None = None, seed: int = 0, retries: int = 20) -> GridMap:
    """Deterministic in ``seed``; layouts that fail the reachability check are redrawn."""
    params = params or LayoutParams()
    rng = np.random.default_rng(seed)
    last = None
    for _ in range(retries):
        gm = _layout(params, rng)
        try:
            precompute_all(gm)
        except (PathCacheError, ValueError) as exc:
            last = exc
            continue
        return gm
    raise LayoutError(f"no connected layout after {retries} attempts: {last}")
