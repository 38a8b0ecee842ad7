import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from topseg.errors import AggregationError, InvalidPairError
from topseg.homology import PersistenceDiagram
from topseg.landscape import (LandscapeVector, diagram_to_landscape, flatten, grid_points,
                              landscape_values, mean_landscapes, tent, unflatten)


def diag(h0=(), h1=()):
    return PersistenceDiagram(np.array(h0, float).reshape(-1, 2), np.array(h1, float).reshape(-1, 2), 10.0)


def brute_landscape(pairs, K, grid):
    out = np.zeros((K, len(grid)))
    for g, e in enumerate(grid):
        vals = sorted((max(0.0, min(e - b, d - e)) for b, d in pairs), reverse=True)
        vals = (vals + [0.0] * K)[:K]
        out[:, g] = vals
    return out


def test_tent_values():
    assert tent(0, 2, 1.0) == 1.0
    assert tent(0, 2, 0.5) == 0.5
    assert tent(0, 2, 3.0) == 0.0
    with pytest.raises(InvalidPairError):
        tent(2, 1, 1.5)


def test_two_pairs_at_1_5():
    # pairs (0, 2) and (1, 3): both tents equal 0.5 at eps = 1.5
    v = landscape_values(np.array([[0, 2], [1, 3.0]]), 2, np.array([1.5]))
    assert v[:, 0].tolist() == [0.5, 0.5]


def test_single_pair_reproduces_tent_exactly():
    lv = diagram_to_landscape(diag(h1=[(0.2, 0.9)]), 1, K=3, G=65, grid_min=0, grid_max=1)
    expect = np.array([tent(0.2, 0.9, e) for e in lv.grid])
    assert np.array_equal(lv.values[0], expect)
    assert np.all(lv.values[1:] == 0)


def test_empty_diagram_is_zero():
    lv = diagram_to_landscape(diag(), 0, K=5, G=16)
    assert lv.values.shape == (5, 16) and not lv.values.any()


pair_lists = st.lists(
    st.tuples(st.floats(0, 5), st.floats(0, 5)).map(lambda t: (min(t), max(t))),
    min_size=0, max_size=12)


@given(pair_lists, st.integers(1, 6))
def test_matches_brute_force(pairs, K):
    grid = grid_points(0, 5, 33)
    got = landscape_values(np.array(pairs, float).reshape(-1, 2), K, grid)
    assert np.allclose(got, brute_landscape(pairs, K, grid), atol=1e-12)


@given(pair_lists)
def test_layers_ordered_and_lipschitz(pairs):
    grid = grid_points(0, 5, 64)
    v = landscape_values(np.array(pairs, float).reshape(-1, 2), 5, grid)
    assert np.all(v >= 0)
    assert np.all(np.diff(v, axis=0) <= 1e-12)
    step = grid[1] - grid[0]
    assert np.all(np.abs(np.diff(v, axis=1)) <= step + 1e-12)


def test_pairs_beyond_grid_are_not_clamped():
    # a pair dying past grid_max still contributes its rising edge
    lv = diagram_to_landscape(diag(h0=[(0, 4.0)]), 0, K=1, G=3, grid_min=0, grid_max=1)
    assert lv.values[0].tolist() == [0.0, 0.5, 1.0]


def test_flatten_round_trip(rng):
    a = LandscapeVector(rng.random((5, 8)), 0, 1, 0)
    b = LandscapeVector(rng.random((5, 8)), 0, 1, 1)
    v = flatten(a, b)
    assert v.shape == (80,)
    a2, b2 = unflatten(v, 5, 8)
    assert np.array_equal(a2.values, a.values) and np.array_equal(b2.values, b.values)


def test_mean_landscapes(rng):
    items = [LandscapeVector(rng.random((2, 4)), 0, 1, 0) for _ in range(3)]
    m = mean_landscapes(items)
    assert np.allclose(m.values, np.mean([i.values for i in items], axis=0))
    with pytest.raises(AggregationError):
        mean_landscapes([])
    with pytest.raises(AggregationError):
        mean_landscapes([items[0], LandscapeVector(items[1].values, 0, 2, 0)])
