import heapq

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from warehouse_rollout.gridmap import Action, CellKind, parse_map
from warehouse_rollout.pathcache import (
    MAGIC,
    NO_ACTION,
    UNREACHABLE,
    OnDemandFields,
    PathCache,
    PathCacheError,
    build_distance_field,
    load_cache,
    precompute_all,
    read_cache,
    save_cache,
    write_cache,
)


def dijkstra_oracle(gm, target, blocked=frozenset()):
    """Forward Dijkstra from every cell over moves into enterable cells."""

    def enterable(c):
        return c == target or (gm.kind(c) in (CellKind.FLOOR, CellKind.DELIVERY) and c not in blocked)

    out = np.full(gm.size, UNREACHABLE)
    for src in range(gm.size):
        if gm.kind(src) == CellKind.WALL:
            continue
        best = {src: 0}
        heap = [(0, src)]
        while heap:
            d, c = heapq.heappop(heap)
            if c == target:
                out[src] = d
                break
            if d > best[c]:
                continue
            for _, n in gm.neighbors(c):
                if enterable(n) and d + 1 < best.get(n, 1 << 30):
                    best[n] = d + 1
                    heapq.heappush(heap, (d + 1, n))
    return out


random_map = st.lists(
    st.sampled_from("....#@D"), min_size=100, max_size=100
).map(lambda cells: "\n".join("".join(cells[r * 10:(r + 1) * 10]) for r in range(10)))


def test_open_grid_manhattan():
    gm = parse_map("...\n...\n...")
    f = build_distance_field(gm, gm.encode(2, 2))
    assert f.dist[gm.encode(0, 0)] == 4
    assert f.dist[f.target] == 0 and f.next_action[f.target] == NO_ACTION


def test_gap_in_wall():
    gm = parse_map("...\n#.#\n...")
    f = build_distance_field(gm, gm.encode(2, 0))
    assert f.dist[gm.encode(0, 0)] == 4
    assert np.array_equal(f.dist, dijkstra_oracle(gm, gm.encode(2, 0)))


def test_tie_break_prefers_up_down_left_right():
    gm = parse_map("...\n...\n...")
    f = build_distance_field(gm, gm.encode(0, 0))
    assert Action(int(f.next_action[gm.encode(1, 1)])) == Action.UP


def test_shelves_are_endpoints_only():
    gm = parse_map(".@.")
    f = build_distance_field(gm, gm.encode(0, 2), require_floor=False)
    assert f.dist[0] == UNREACHABLE
    assert f.dist[1] == 1  # a shelf can be left
    g = build_distance_field(gm, gm.encode(0, 1))
    assert g.dist[0] == 1 and g.dist[2] == 1


def test_unreachable_target_errors():
    gm = parse_map(".#D")
    with pytest.raises(PathCacheError):
        build_distance_field(gm, gm.encode(0, 2))
    with pytest.raises(PathCacheError):
        precompute_all(parse_map("D.#.@"))


def test_blocked_cells_can_be_left_not_entered():
    gm = parse_map(".....\n.....")
    blocked = frozenset({gm.encode(0, 2)})
    f = build_distance_field(gm, gm.encode(0, 4), blocked=blocked)
    assert np.array_equal(f.dist, dijkstra_oracle(gm, gm.encode(0, 4), blocked))
    assert f.dist[gm.encode(0, 2)] == 2  # leaves its own cell
    path = f.path_from(gm.encode(0, 0))
    assert gm.encode(0, 2) not in path and len(path) - 1 == 6


def test_cardinality_and_determinism(small_map, small_cache):
    assert len(small_cache) == len(small_map.storage_cells) + len(small_map.delivery_cells)
    assert precompute_all(small_map) == small_cache
    assert save_cache(precompute_all(small_map)) == save_cache(small_cache)


def test_size_formula(small_map, small_cache):
    n = small_map.size
    per_field = 4 + 4 * n + n
    assert small_cache.nbytes() == 25 + len(small_cache) * per_field
    assert PathCache.size_formula(small_map) == n * len(small_cache) * 5


def test_roundtrip_and_errors(small_map, small_cache, tmp_path):
    data = save_cache(small_cache)
    assert data.startswith(MAGIC)
    assert load_cache(data, small_map) == small_cache
    other = parse_map("D.@\n...")
    with pytest.raises(PathCacheError, match="fingerprint"):
        load_cache(data, other)
    with pytest.raises(PathCacheError):
        load_cache(data[:-3], small_map)
    with pytest.raises(PathCacheError):
        load_cache(b"XXXXX" + data[5:], small_map)
    with pytest.raises(PathCacheError):
        load_cache(data[:10], small_map)
    path = tmp_path / "c.cache"
    assert write_cache(small_cache, path) == len(data)
    assert read_cache(path, small_map) == small_cache


def test_empty_cache_roundtrip(small_map):
    empty = PathCache(small_map.width, small_map.height, small_map.fingerprint(), {})
    assert load_cache(save_cache(empty), small_map) == empty


def test_on_demand_matches_cache(small_map, small_cache):
    od = OnDemandFields(small_map)
    for t in list(small_cache.fields)[:5]:
        assert od.field(t) == small_cache.field(t)
    assert od.builds == 5
    od.reset()
    od.field(next(iter(small_cache.fields)))
    assert od.builds == 6


@given(random_map, st.data())
def test_matches_dijkstra_on_random_maps(text, data):
    gm = parse_map(text)
    open_cells = [c for c in range(gm.size) if gm.kind(c) != CellKind.WALL]
    if not open_cells:
        return
    target = data.draw(st.sampled_from(open_cells))
    f = build_distance_field(gm, target, require_floor=False)
    assert np.array_equal(f.dist, dijkstra_oracle(gm, target))


@given(random_map, st.data())
def test_bellman_consistency_and_greedy_walk(text, data):
    gm = parse_map(text)
    open_cells = [c for c in range(gm.size) if gm.kind(c) != CellKind.WALL]
    if not open_cells:
        return
    target = data.draw(st.sampled_from(open_cells))
    f = build_distance_field(gm, target, require_floor=False)
    for c in open_cells:
        if c == target or f.dist[c] == UNREACHABLE:
            continue
        nxt = [f.dist[n] for _, n in gm.neighbors(c)
               if f.dist[n] != UNREACHABLE and (n == target or gm.is_transit(n))]
        assert f.dist[c] == 1 + min(nxt)
        assert f.dist[c] == 1 + f.dist[gm.move(c, Action(int(f.next_action[c])))]
        path = f.path_from(c)
        assert path[0] == c and path[-1] == target
        assert len(path) - 1 == f.dist[c] and len(set(path)) == len(path)
