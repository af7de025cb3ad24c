import numpy as np
import pytest

from hodgecl.datasets import TriangularGridSpec, build_two_hole_map
from hodgecl.simplicial import analyze, build_complex


@pytest.fixture
def filled_triangle():
    return build_complex(3, [(0, 1), (0, 2), (1, 2)], [(0, 1, 2)])


@pytest.fixture
def hollow_cycle():
    return build_complex(3, [(0, 1), (0, 2), (1, 2)])


def random_grid_specs(count, seed=0):
    """Small grids with 0-2 random non-touching holes and random labels."""
    rng = np.random.default_rng(seed)
    specs = []
    while len(specs) < count:
        rows, cols = rng.integers(3, 7, size=2)
        holes = []
        for _ in range(rng.integers(0, 3)):
            r, c = rng.integers(1, rows - 1), rng.integers(1, cols - 1)
            candidate = (int(r), int(c), 1, 1)
            if all(abs(r - h[0]) > 1 or abs(c - h[1]) > 1 for h in holes):
                holes.append(candidate)
        specs.append(TriangularGridSpec(int(rows), int(cols), tuple(holes), int(rng.integers(1000))))
    return specs


def random_grid_complexes(count, seed=0):
    return [build_two_hole_map(spec) for spec in random_grid_specs(count, seed)]


@pytest.fixture(scope="session")
def small_map_hodge():
    spec = TriangularGridSpec(4, 4, ((1, 1, 1, 1),))
    return analyze(build_two_hole_map(spec))
