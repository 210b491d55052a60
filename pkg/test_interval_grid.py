"""
Tests for grid quantizers
"""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from interval_grid import (BadCell, ContinuousDomain, OutOfDomain, Quantizer, StrictnessError, check_strict,
                           concretize, from_dict, grid_points, identity, quantize, relation_predicate,
                           require_strict, uniform)
from predicates import PredicateContext


@pytest.fixture
def ctx():
    return PredicateContext('grid', backend='autoref')


@pytest.fixture
def bench_grid(ctx):
    return uniform(ctx, 'x', 0, 32, 1.0)


def test_bench_grid_layout(bench_grid):
    assert bench_grid.cell_count == 32
    assert bench_grid.anchor == 0.5
    assert concretize(bench_grid, 0) == (0.0, 1.0)
    assert concretize(bench_grid, 31) == (31.0, 32.0)
    assert check_strict(bench_grid)


def test_boundary_points_belong_to_both_cells(bench_grid):
    assert quantize(bench_grid, 1.0) == {0, 1}
    assert quantize(bench_grid, 0.3) == {0}
    assert quantize(bench_grid, 0.0) == {0}
    assert quantize(bench_grid, 32.0) == {31}
    assert quantize(bench_grid, 16.5) == {16}


def test_points_outside_the_domain(bench_grid):
    with pytest.raises(OutOfDomain):
        quantize(bench_grid, -0.01)
    with pytest.raises(OutOfDomain):
        quantize(bench_grid, 32.5)


def test_bad_cells(bench_grid):
    with pytest.raises(BadCell):
        concretize(bench_grid, 32)
    with pytest.raises(BadCell):
        concretize(bench_grid, -1)


def test_cell_range_is_clipped(bench_grid):
    first, last = bench_grid.cell_range([-5.0, 2.5, 31.5], [0.5, 4.0, 50.0])
    assert first.tolist() == [0, 2, 31]
    assert last.tolist() == [0, 4, 31]
    first, last = bench_grid.cell_range(33.0, 34.0)
    assert int(first) > int(last)


def test_last_cell_is_clipped_to_the_domain(ctx):
    q = uniform(ctx, 'y', 0, 10, 3.0)
    assert q.cell_count == 4
    assert concretize(q, 3) == (9.0, 10.0)
    assert check_strict(q)


def test_identity_quantizer(ctx):
    q = identity(ctx, 'u', values=[2, -1, 1, -2])
    assert q.values == (-2, -1, 1, 2)
    assert quantize(q, 1) == {2}
    assert concretize(q, 0) == (-2, -2)
    with pytest.raises(OutOfDomain):
        quantize(q, 0)
    first, last = q.cell_range(-1.5, 1.5)
    assert (int(first), int(last)) == (1, 2)


def test_from_dict_cross_checks_cells(ctx):
    q = from_dict(ctx, {'var': 'x', 'kind': 'uniform', 'lower': 0, 'upper': 32, 'eta': 1, 'anchor': 0.5,
                        'cells': 32})
    assert q.to_dict() == {'var': 'x', 'kind': 'uniform', 'lower': 0.0, 'upper': 32.0, 'eta': 1.0,
                           'anchor': 0.5, 'cells': 32}
    with pytest.raises(ValueError):
        from_dict(ctx, {'var': 'y', 'lower': 0, 'upper': 32, 'eta': 1, 'cells': 30})
    with pytest.raises(ValueError):
        from_dict(ctx, {'var': 'z', 'lower': 0, 'upper': 32, 'eta': 0})


def test_non_covering_grid_is_not_strict(ctx):
    short = Quantizer('w', 'uniform', ctx.declare('w', 3), ContinuousDomain(0, 10), 1.0, 0.5)
    assert not check_strict(short)
    with pytest.raises(StrictnessError):
        require_strict([short])


def test_grid_points_include_both_ends(bench_grid):
    points = grid_points(bench_grid, 10)
    assert points[0] == 0.0
    assert points[-1] == 32.0
    assert len(points) == 321


def test_relation_predicate_relates_samples_to_cells(ctx, bench_grid):
    samples = [0.5, 1.0, 31.5]
    rel = relation_predicate(ctx, bench_grid, samples)
    rows = list(ctx.enumerate_sat(rel, ['x~s', 'x']))
    assert rows == [{'x': 0, 'x~s': 0}, {'x': 0, 'x~s': 1}, {'x': 1, 'x~s': 1}, {'x': 31, 'x~s': 2}]
    with pytest.raises(OutOfDomain):
        relation_predicate(ctx, bench_grid, [40.0], sample_var=ctx.declare('extra', 1))


@settings(max_examples=200, deadline=None)
@given(lower=st.integers(-50, 50), width=st.integers(1, 40),
       eta=st.sampled_from([0.25, 0.5, 1.0, 2.0, 4.0]), frac=st.floats(0, 1))
def test_every_point_is_covered_by_its_cells(lower, width, eta, frac):
    ctx = PredicateContext('cover', backend='autoref')
    q = uniform(ctx, 'x', float(lower), float(lower + width), eta)
    assert check_strict(q)
    point = min(lower + frac * width, lower + width)
    cells = quantize(q, point)
    assert cells
    for cell in cells:
        lo, hi = concretize(q, cell)
        assert lo <= point <= hi
    first, last = q.cell_range(np.array([point]), np.array([point]))
    assert set(range(int(first[0]), int(last[0]) + 1)) == cells
