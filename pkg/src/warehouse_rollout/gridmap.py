"""Static warehouse geometry: cell kinds, index arithmetic, adjacency, map files."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterator


class CellKind(enum.IntEnum):
    FLOOR = 0
    WALL = 1
    STORAGE = 2
    DELIVERY = 3


class Action(enum.IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3
    STAY = 4


# Fixed order used for neighbor listing and all tie-breaking.
MOVES = (Action.UP, Action.DOWN, Action.LEFT, Action.RIGHT)
ACTIONS = MOVES + (Action.STAY,)
OFFSETS = {
    Action.UP: (-1, 0),
    Action.DOWN: (1, 0),
    Action.LEFT: (0, -1),
    Action.RIGHT: (0, 1),
    Action.STAY: (0, 0),
}

CHAR_TO_KIND = {
    ".": CellKind.FLOOR,
    "#": CellKind.WALL,
    "@": CellKind.STORAGE,
    "D": CellKind.DELIVERY,
}
KIND_TO_CHAR = {v: k for k, v in CHAR_TO_KIND.items()}


class MapParseError(ValueError):
    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.line = line
        self.col = col
        where = ""
        if line is not None:
            where = f" at line {line}" + (f", col {col}" if col is not None else "")
        super().__init__(message + where)


@dataclass(frozen=True)
class GridMap:
    """Immutable rectangular grid. Cells are addressed by ``row * width + col``."""

    width: int
    height: int
    kinds: tuple[CellKind, ...]

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("map dimensions must be positive")
        if len(self.kinds) != self.width * self.height:
            raise ValueError("kinds length does not match dimensions")
        # neighbor table, built once; object is frozen so go through __setattr__
        table = []
        for c in range(self.width * self.height):
            r, col = divmod(c, self.width)
            out = []
            for a in MOVES:
                dr, dc = OFFSETS[a]
                rr, cc = r + dr, col + dc
                if 0 <= rr < self.height and 0 <= cc < self.width:
                    n = rr * self.width + cc
                    if self.kinds[n] != CellKind.WALL:
                        out.append((a, n))
            table.append(tuple(out))
        object.__setattr__(self, "_adj", tuple(table))

    @property
    def size(self) -> int:
        return self.width * self.height

    def encode(self, row: int, col: int) -> int:
        if not (0 <= row < self.height and 0 <= col < self.width):
            raise IndexError(f"({row}, {col}) outside {self.height}x{self.width} map")
        return row * self.width + col

    def decode(self, cell: int) -> tuple[int, int]:
        if not 0 <= cell < self.size:
            raise IndexError(f"cell {cell} outside map of size {self.size}")
        return divmod(cell, self.width)

    def kind(self, cell: int) -> CellKind:
        return self.kinds[cell]

    def cells_of(self, kind: CellKind) -> list[int]:
        return [c for c, k in enumerate(self.kinds) if k == kind]

    @property
    def storage_cells(self) -> list[int]:
        return self.cells_of(CellKind.STORAGE)

    @property
    def delivery_cells(self) -> list[int]:
        return self.cells_of(CellKind.DELIVERY)

    @property
    def floor_cells(self) -> list[int]:
        return self.cells_of(CellKind.FLOOR)

    def move(self, cell: int, action: Action) -> int | None:
        """Destination of ``action`` from ``cell``; None if off-grid or a wall."""
        if action == Action.STAY:
            return cell
        for a, n in self._adj[cell]:
            if a == action:
                return n
        return None

    def neighbors(self, cell: int) -> tuple[tuple[Action, int], ...]:
        return self._adj[cell]

    def is_transit(self, cell: int) -> bool:
        return self.kinds[cell] in (CellKind.FLOOR, CellKind.DELIVERY)

    def fingerprint(self) -> int:
        """64-bit FNV-1a over the kinds array (one byte per cell)."""
        h = 0xCBF29CE484222325
        for k in self.kinds:
            h ^= int(k)
            h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
        return h

    def validate_episode_ready(self) -> None:
        if not self.storage_cells:
            raise ValueError("map has no storage cells")
        if not self.delivery_cells:
            raise ValueError("map has no delivery cells")
        for c in self.storage_cells + self.delivery_cells:
            if not any(self.kinds[n] == CellKind.FLOOR for _, n in self._adj[c]):
                r, col = self.decode(c)
                raise ValueError(f"cell ({r}, {col}) has no floor neighbor")

    def __iter__(self) -> Iterator[CellKind]:
        return iter(self.kinds)


def neighbors(gridmap: GridMap, cell: int) -> list[tuple[Action, int]]:
    return list(gridmap.neighbors(cell))


def parse_map(text: str) -> GridMap:
    lines = text.splitlines()
    while lines and lines[-1].strip() == "":
        lines.pop()
    if not lines:
        raise MapParseError("empty map")
    lines = [ln.rstrip("\r") for ln in lines]
    width = len(lines[0])
    if width == 0:
        raise MapParseError("empty first row", line=1)
    kinds = []
    for i, ln in enumerate(lines, start=1):
        if len(ln) != width:
            raise MapParseError(f"ragged row (length {len(ln)}, expected {width})", line=i)
        for j, ch in enumerate(ln, start=1):
            try:
                kinds.append(CHAR_TO_KIND[ch])
            except KeyError:
                raise MapParseError(f"unknown character {ch!r}", line=i, col=j) from None
    return GridMap(width, len(lines), tuple(kinds))


def render_map(gridmap: GridMap) -> str:
    rows = []
    for r in range(gridmap.height):
        row = gridmap.kinds[r * gridmap.width:(r + 1) * gridmap.width]
        rows.append("".join(KIND_TO_CHAR[k] for k in row))
    return "\n".join(rows)


def load_map(path) -> GridMap:
    with open(path, encoding="utf-8") as fh:
        return parse_map(fh.read())
