"""Offline shortest-path precomputation: one BFS distance field per storage/delivery cell.

Storage cells are path endpoints only: a field assigns them a distance (you may
leave a shelf cell) but never routes through one unless it is the target.
"""
from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass

import numpy as np

from .gridmap import Action, CellKind, GridMap

UNREACHABLE = -1
NO_ACTION = 255
MAGIC = b"WRPC1"
_HEADER = struct.Struct("<5sIIQI")


class PathCacheError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DistanceField:
    target: int
    dist: np.ndarray  # int32, UNREACHABLE where no path exists
    next_action: np.ndarray  # uint8, NO_ACTION at the target and unreachable cells
    next_cell: np.ndarray  # int32, -1 where next_action is NO_ACTION

    def __eq__(self, other):
        if not isinstance(other, DistanceField):
            return NotImplemented
        return (
            self.target == other.target
            and np.array_equal(self.dist, other.dist)
            and np.array_equal(self.next_action, other.next_action)
        )

    __hash__ = None

    def reachable(self, cell: int) -> bool:
        return self.dist[cell] != UNREACHABLE

    def path_from(self, cell: int) -> list[int] | None:
        """Cells visited by following next_action from ``cell`` (inclusive of both ends)."""
        if self.dist[cell] == UNREACHABLE:
            return None
        out = [cell]
        while cell != self.target:
            cell = int(self.next_cell[cell])
            out.append(cell)
        return out


def _enterable(gridmap: GridMap, cell: int, target: int) -> bool:
    return cell == target or gridmap.is_transit(cell)


def _next_tables(gridmap: GridMap, target: int, dist: np.ndarray, blocked=frozenset()):
    n = gridmap.size
    next_action = np.full(n, NO_ACTION, dtype=np.uint8)
    next_cell = np.full(n, -1, dtype=np.int32)
    for c in range(n):
        d = dist[c]
        if d <= 0:
            continue
        for a, nb in gridmap.neighbors(c):
            if dist[nb] == d - 1 and _enterable(gridmap, nb, target) and (nb == target or nb not in blocked):
                next_action[c] = a
                next_cell[c] = nb
                break
    return next_action, next_cell


def build_distance_field(
    gridmap: GridMap, target: int, require_floor: bool = True, blocked=frozenset()
) -> DistanceField:
    """BFS outward from ``target``. Cells in ``blocked`` (other than the target)
    can be left but never entered, like shelf cells."""
    if gridmap.kind(target) == CellKind.WALL:
        raise PathCacheError(f"target {gridmap.decode(target)} is a wall")
    n = gridmap.size
    dist = np.full(n, UNREACHABLE, dtype=np.int32)
    dist[target] = 0
    queue = deque([target])
    while queue:
        v = queue.popleft()
        dv = dist[v] + 1
        for _, u in gridmap.neighbors(v):
            if dist[u] != UNREACHABLE:
                continue
            dist[u] = dv
            # shelf and blocked cells get a distance (they can be left) but are never expanded
            if gridmap.is_transit(u) and u not in blocked:
                queue.append(u)
    if require_floor:
        floors = gridmap.floor_cells
        if floors and not any(dist[c] != UNREACHABLE for c in floors):
            raise PathCacheError(f"target {gridmap.decode(target)} unreachable from every floor cell")
    next_action, next_cell = _next_tables(gridmap, target, dist, blocked)
    return DistanceField(target, dist, next_action, next_cell)


class PathCache:
    """Distance fields keyed by target cell, bound to one map via its fingerprint."""

    def __init__(self, width: int, height: int, fingerprint: int, fields: dict[int, DistanceField]):
        self.width = width
        self.height = height
        self.fingerprint = fingerprint
        self.fields = dict(sorted(fields.items()))
        self._paths: dict[tuple[int, int], np.ndarray | None] = {}

    def __eq__(self, other):
        if not isinstance(other, PathCache):
            return NotImplemented
        return (
            (self.width, self.height, self.fingerprint) == (other.width, other.height, other.fingerprint)
            and self.fields.keys() == other.fields.keys()
            and all(self.fields[t] == other.fields[t] for t in self.fields)
        )

    __hash__ = None

    def __len__(self):
        return len(self.fields)

    def __contains__(self, target):
        return target in self.fields

    def field(self, target: int) -> DistanceField:
        try:
            return self.fields[target]
        except KeyError:
            raise KeyError(f"no distance field for target cell {target}") from None

    def dist(self, target: int, cell: int) -> int:
        return int(self.field(target).dist[cell])

    def path(self, target: int, start: int) -> np.ndarray | None:
        key = (target, start)
        try:
            return self._paths[key]
        except KeyError:
            p = self.field(target).path_from(start)
            arr = None if p is None else np.asarray(p, dtype=np.int32)
            self._paths[key] = arr
            return arr

    def with_targets(self, gridmap: GridMap, targets) -> "PathCache":
        """A cache holding these fields plus fields for extra targets (e.g. home cells)."""
        if gridmap.fingerprint() != self.fingerprint:
            raise PathCacheError("map fingerprint does not match the cache")
        fields = dict(self.fields)
        for t in targets:
            if t not in fields:
                fields[t] = build_distance_field(gridmap, t, require_floor=False)
        out = PathCache(self.width, self.height, self.fingerprint, fields)
        out._paths = self._paths  # path arrays depend only on (target, start)
        return out

    def diameter(self) -> int:
        best = 0
        for f in self.fields.values():
            best = max(best, int(f.dist.max()))
        return best

    def nbytes(self) -> int:
        return len(save_cache(self))

    @staticmethod
    def size_formula(gridmap: GridMap, bytes_per_entry: int = 5) -> int:
        """Environment size x (#storage + #delivery) x bytes per cell entry."""
        return gridmap.size * (len(gridmap.storage_cells) + len(gridmap.delivery_cells)) * bytes_per_entry


class OnDemandFields:
    """Field provider without precomputation: BFS on request, forgotten on ``reset``."""

    def __init__(self, gridmap: GridMap):
        self.gridmap = gridmap
        self._fields: dict[int, DistanceField] = {}
        self._paths: dict[tuple[int, int], np.ndarray | None] = {}
        self.builds = 0

    def reset(self):
        self._fields.clear()
        self._paths.clear()

    def __contains__(self, target):
        return self.gridmap.kind(target) != CellKind.WALL

    def field(self, target: int) -> DistanceField:
        f = self._fields.get(target)
        if f is None:
            f = build_distance_field(self.gridmap, target, require_floor=False)
            self._fields[target] = f
            self.builds += 1
        return f

    def diameter(self) -> int:
        gm = self.gridmap
        targets = gm.storage_cells + gm.delivery_cells or gm.floor_cells
        return max((int(self.field(t).dist.max()) for t in targets), default=0)

    def dist(self, target: int, cell: int) -> int:
        return int(self.field(target).dist[cell])

    def path(self, target: int, start: int) -> np.ndarray | None:
        key = (target, start)
        if key not in self._paths:
            p = self.field(target).path_from(start)
            self._paths[key] = None if p is None else np.asarray(p, dtype=np.int32)
        return self._paths[key]


def precompute_all(gridmap: GridMap) -> PathCache:
    gridmap.validate_episode_ready()
    targets = sorted(gridmap.storage_cells + gridmap.delivery_cells)
    floors = np.asarray(gridmap.floor_cells, dtype=np.int64)
    fields = {}
    bad = []
    for t in targets:
        try:
            f = build_distance_field(gridmap, t)
        except PathCacheError:
            bad.append(t)
            continue
        if floors.size and (f.dist[floors] == UNREACHABLE).any():
            bad.append(t)
            continue
        fields[t] = f
    if bad:
        cells = ", ".join(str(gridmap.decode(t)) for t in bad)
        raise PathCacheError(f"targets unreachable from some floor cell: {cells}")
    return PathCache(gridmap.width, gridmap.height, gridmap.fingerprint(), fields)


def save_cache(cache: PathCache) -> bytes:
    parts = [_HEADER.pack(MAGIC, cache.width, cache.height, cache.fingerprint, len(cache.fields))]
    for t, f in cache.fields.items():
        parts.append(struct.pack("<I", t))
        d = f.dist.astype(np.int64)
        d[d == UNREACHABLE] = 0xFFFFFFFF
        parts.append(d.astype("<u4").tobytes())
        parts.append(f.next_action.astype(np.uint8).tobytes())
    return b"".join(parts)


def load_cache(data: bytes, gridmap: GridMap) -> PathCache:
    if len(data) < _HEADER.size:
        raise PathCacheError("truncated cache header")
    magic, width, height, fp, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise PathCacheError("bad magic, not a path cache")
    if (width, height) != (gridmap.width, gridmap.height) or fp != gridmap.fingerprint():
        raise PathCacheError("map fingerprint mismatch")
    n = width * height
    per = 4 + 4 * n + n
    if len(data) != _HEADER.size + count * per:
        raise PathCacheError("truncated or corrupt cache payload")
    fields = {}
    off = _HEADER.size
    for _ in range(count):
        (t,) = struct.unpack_from("<I", data, off)
        off += 4
        raw = np.frombuffer(data, dtype="<u4", count=n, offset=off).astype(np.int64)
        off += 4 * n
        nxt = np.frombuffer(data, dtype=np.uint8, count=n, offset=off).copy()
        off += n
        if t >= n:
            raise PathCacheError(f"field target {t} outside map")
        raw[raw == 0xFFFFFFFF] = UNREACHABLE
        dist = raw.astype(np.int32)
        next_cell = np.full(n, -1, dtype=np.int32)
        for c in np.flatnonzero(nxt != NO_ACTION):
            dest = gridmap.move(int(c), Action(int(nxt[c])))
            if dest is None:
                raise PathCacheError("corrupt next-action entry")
            next_cell[c] = dest
        fields[int(t)] = DistanceField(int(t), dist, nxt, next_cell)
    return PathCache(width, height, fp, fields)


def write_cache(cache: PathCache, path) -> int:
    data = save_cache(cache)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def read_cache(path, gridmap: GridMap) -> PathCache:
    with open(path, "rb") as fh:
        return load_cache(fh.read(), gridmap)
