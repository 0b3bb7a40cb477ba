import os

import pytest
from hypothesis import HealthCheck, settings

from warehouse_rollout.gridmap import parse_map
from warehouse_rollout.harness.mapgen import generate_map
from warehouse_rollout.pathcache import precompute_all

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


# a small warehouse: one delivery row, two shelves, 2-wide corridors
SMALL_WAREHOUSE = """\
D..D..D..D
..........
..........
..@@@@@@..
..........
..........
..@@@@@@..
..........
"""


@pytest.fixture(scope="session")
def small_map():
    return parse_map(SMALL_WAREHOUSE)


@pytest.fixture(scope="session")
def small_cache(small_map):
    return precompute_all(small_map)


@pytest.fixture(scope="session")
def battery_map():
    return generate_map()


@pytest.fixture(scope="session")
def battery_cache(battery_map):
    return precompute_all(battery_map)


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion, gathered from the tests' user properties."""
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if rep.when != "call":
                continue
            for name, value in rep.user_properties:
                if name == "criterion":
                    lines.append(value)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: (int(s.split()[1].rstrip(":").rstrip("abc")), s)):
            terminalreporter.write_line(line)
