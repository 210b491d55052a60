"""
Tests for grid traversal and module abstraction
"""
import time

import numpy as np
import pytest

from abstractor import (AbstractionJob, TimeBudgetExceeded, abstract_many, abstract_module, abstract_with_stats,
                        traverse)
from concrete_functions import build_oracle
from config import Config
from interval_grid import ContinuousDomain, Quantizer, identity, uniform
from module_algebra import nonblocking
from predicates import PredicateContext
from refinement import check_abstraction, finitize


@pytest.fixture
def ctx():
    return PredicateContext('abstraction', backend='autoref')


def _bench_job(ctx):
    qx = uniform(ctx, 'x', 0, 32, 1.0)
    qu = identity(ctx, 'u', values=[-2, -1, 1, 2])
    ql = uniform(ctx, 'l', 0, 32, 1.0)
    qn = uniform(ctx, "x'", 0, 32, 1.0, related_to='x')
    oracle = build_oracle('interval', ['glog(0, 32, 0.2, x + u + 0.2*(x - l))'], ['x', 'u', 'l'])
    return AbstractionJob('F', (qx, qu, ql), (qn,), oracle)


def test_job_checks_its_oracle(ctx):
    qx = uniform(ctx, 'x', 0, 4, 1.0)
    qy = uniform(ctx, 'y', 0, 4, 1.0)
    with pytest.raises(ValueError):
        AbstractionJob('bad', (qy,), (qx,), build_oracle('interval', ['x'], ['x']))
    with pytest.raises(ValueError):
        AbstractionJob('bad', (qx,), (qx, qy), build_oracle('interval', ['x'], ['x']))


def test_traverse_marks_padding_and_escapes(ctx):
    qx = uniform(ctx, 'x', 0, 5, 1.0)
    qy = uniform(ctx, 'y', 0, 4, 1.0)
    job = AbstractionJob('shift', (qx,), (qy,), build_oracle('interval', ['x'], ['x']))
    assert job.padded_shape == (8,)
    assert job.cells == 5
    part = traverse(job, 0, 8)
    # cell 4 is [4, 5] and leaves [0, 4]; cells 5..7 are padding
    assert part.ranges[:4, 0].tolist() == [[0, 1], [0, 2], [1, 3], [2, 3]]
    assert (part.ranges[4:] == -1).all()
    assert part.blocking == 1
    assert part.escaped == 1
    assert part.transitions == 2 + 3 + 3 + 2


def test_square_root_blocks_exactly_on_negative_inputs(ctx):
    qx = identity(ctx, 'x', values=range(-4, 9))
    qz = uniform(ctx, 'z', 0, 3, 1.0)
    m, stats = abstract_with_stats(ctx, AbstractionJob('root', (qx,), (qz,),
                                                       build_oracle('interval', ['sqrt(x)'], ['x'])))
    x = qx.abstract_var
    assert ctx.equivalent(nonblocking(m), ctx.member(x, [i for i in range(13) if x.label_of(i) >= 0]))
    assert stats.undefined == 4
    assert stats.blocking == 4
    assert stats.cells == 13


def test_division_blocks_exactly_at_zero(ctx):
    qy = identity(ctx, 'y', values=range(-3, 4))
    qz = uniform(ctx, 'z', -2, 2, 0.5)
    m = abstract_module(ctx, AbstractionJob('inv', (qy,), (qz,), build_oracle('interval', ['1/y'], ['y'])))
    y = qy.abstract_var
    assert ctx.equivalent(nonblocking(m), ctx.neg(ctx.eq_label(y, 0)))


def test_statistics_match_the_predicate(ctx):
    job = _bench_job(ctx)
    m, stats = abstract_with_stats(ctx, job)
    assert stats.cells == 32 * 4 * 32
    assert stats.transitions == m.transition_count()
    assert stats.blocking == m.blocking_count()
    assert stats.to_dict()['name'] == 'F'


def test_chunking_does_not_change_the_result(ctx, monkeypatch):
    job = _bench_job(ctx)
    whole = abstract_module(ctx, job)
    monkeypatch.setattr(Config, 'ABSTRACTION_CHUNK_BITS', 7)
    chunked = abstract_module(ctx, job)
    assert ctx.equivalent(whole.constraint, chunked.constraint)


def test_abstract_many_reports_failing_jobs(ctx):
    good = _bench_job(ctx)
    short = Quantizer('w', 'uniform', ctx.declare('w', 3), ContinuousDomain(0, 10), 1.0, 0.5)
    qv = uniform(ctx, 'v', 0, 10, 1.0)
    bad = AbstractionJob('short', (short,), (qv,), build_oracle('interval', ['w'], ['w']))
    modules, errors, stats = abstract_many(ctx, [good, bad], n_jobs=1)
    assert set(modules) == {'F'}
    assert set(errors) == {'short'}
    assert ctx.equivalent(modules['F'].constraint, abstract_module(ctx, good).constraint)
    assert stats['F'].cells == 4096


def test_deadline_in_the_past_stops_traversal(ctx):
    job = _bench_job(ctx)
    with pytest.raises(TimeBudgetExceeded) as info:
        abstract_with_stats(ctx, job, deadline=time.time() - 1)
    assert info.value.cells_traversed == 0
    assert info.value.cells_total == 4096


@pytest.mark.parametrize('seed', range(5))
def test_abstraction_of_monotone_maps_survives_dense_sampling(seed):
    _check_monotone_map(seed)


@pytest.mark.slow
@pytest.mark.parametrize('seed', range(5, 50))
def test_abstraction_of_monotone_maps_survives_dense_sampling_slow(seed):
    _check_monotone_map(seed)


def _check_monotone_map(seed):
    rng = np.random.default_rng(seed)
    ctx = PredicateContext(f"monotone-{seed}", backend='autoref')
    n = int(rng.integers(8, 25))
    a, b = rng.uniform(0.2, 2.0), rng.uniform(-2.0, 2.0)
    kind = ['linear', 'logistic'][seed % 2]
    expr = f"{a:.3f}*x + {b:.3f}" if kind == 'linear' else f"glog(0, {n}, {a:.3f}, x + {b:.3f})"
    qx = uniform(ctx, 'x', 0, n, 1.0)
    qy = uniform(ctx, 'y', -4, 2 * n + 4, 1.0)
    oracle = build_oracle('monotone', [expr], ['x'], {'x': (0, n)})
    abstract = abstract_module(ctx, AbstractionJob('F', (qx,), (qy,), oracle))
    sampled = finitize(ctx, 'F', [expr], [qx], [qy], resolution=10)
    report = check_abstraction(sampled.claim(abstract))
    assert report.passed, report.to_dict()
