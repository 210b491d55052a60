"""
Tests for the predicate engine
"""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from predicates import (ContextMismatch, FormatError, InvalidBundle, NameClash, PredicateContext,
                        SupportError, TypeMismatch)


@pytest.fixture
def ctx():
    return PredicateContext('test', backend='autoref')


def _random_context(seed: int, count: int = 3):
    """Context with `count` variables of 2..8 values (at most 9 bits) and an rng"""
    rng = np.random.default_rng(seed)
    ctx = PredicateContext(f"random-{seed}", backend='autoref')
    variables = [ctx.declare(f"v{k}", int(rng.integers(2, 9))) for k in range(count)]
    return ctx, variables, rng


def _random_predicate(ctx, variables, rng):
    mask = rng.random(tuple(v.domain_size for v in variables)) < rng.uniform(0.2, 0.8)
    return ctx.from_mask(variables, mask), mask


def test_declare_rejects_duplicate_names(ctx):
    ctx.declare('x', 5)
    with pytest.raises(NameClash):
        ctx.declare('x', 3)


def test_padding_values_are_never_satisfying(ctx):
    x = ctx.declare('x', 5)
    assert x.bit_width == 3
    assert ctx.count_sat(ctx.true, [x]) == 5
    assert ctx.count_sat(ctx.neg(ctx.eq(x, 2)), [x]) == 4
    assert ctx.is_tautology(ctx.domain([x]))
    assert list(ctx.enumerate_sat(ctx.neg(ctx.in_range(x, 0, 2)), [x])) == [{'x': 3}, {'x': 4}]


def test_in_range_is_clipped_to_the_domain(ctx):
    x = ctx.declare('x', 6)
    assert ctx.count_sat(ctx.in_range(x, -3, 2), [x]) == 3
    assert ctx.count_sat(ctx.in_range(x, 4, 40), [x]) == 2
    assert ctx.is_unsat(ctx.in_range(x, 5, 3))


def test_labels_map_to_indices(ctx):
    u = ctx.declare('u', 4, labels=[-2, -1, 1, 2])
    assert u.index_of(1) == 2
    assert u.label_of(0) == -2
    assert ctx.equivalent(ctx.eq_label(u, -1), ctx.eq(u, 1))
    with pytest.raises(ValueError):
        u.index_of(0)


def test_bundle_orders_members_most_significant_first(ctx):
    a = ctx.declare('a', 3)
    b = ctx.declare('b', 2)
    ab = ctx.bundle([a, b])
    assert ab.domain_size == 6
    assert ab.split(5) == {'a': 2, 'b': 1}
    assert ctx.equivalent(ctx.eq(ab, 3), ctx.cube({'a': 1, 'b': 1}))
    with pytest.raises(InvalidBundle):
        ctx.bundle([a, a])


def test_var_eq_requires_equal_domains(ctx):
    x = ctx.declare('x', 5)
    y = ctx.declare('y', 5, related_to='x')
    z = ctx.declare('z', 4)
    assert ctx.count_sat(ctx.var_eq(x, y), [x, y]) == 5
    with pytest.raises(TypeMismatch):
        ctx.var_eq(x, z)


def test_rename_moves_the_support(ctx):
    x = ctx.declare('x', 5)
    y = ctx.declare('y', 5)
    p = ctx.in_range(x, 1, 3)
    q = ctx.rename(p, {'x': 'y'})
    assert q.support == frozenset({'y'})
    assert ctx.equivalent(q, ctx.in_range(y, 1, 3))


def test_rename_refuses_capture(ctx):
    x = ctx.declare('x', 4)
    y = ctx.declare('y', 4)
    p = ctx.conj(ctx.eq(x, 1), ctx.eq(y, 2))
    with pytest.raises(SupportError):
        ctx.rename(p, {'x': 'y'})


def test_count_sat_needs_covering_variables(ctx):
    x = ctx.declare('x', 4)
    y = ctx.declare('y', 4)
    p = ctx.conj(ctx.eq(x, 1), ctx.eq(y, 2))
    with pytest.raises(SupportError):
        ctx.count_sat(p, [x])
    assert ctx.count_sat(p, [x, y]) == 1
    assert ctx.count_sat(ctx.eq(x, 1), [x, y]) == 4


def test_predicates_from_other_contexts_are_rejected(ctx):
    other = PredicateContext('other', backend='autoref')
    ctx.declare('x', 2)
    other.declare('x', 2)
    with pytest.raises(ContextMismatch):
        ctx.conj(ctx.eq('x', 0), other.eq('x', 1))


def test_enumerate_and_pick_follow_declaration_order(ctx):
    x = ctx.declare('x', 3)
    y = ctx.declare('y', 3)
    p = ctx.from_function([y, x], lambda j, i: i + j == 2)
    rows = list(ctx.enumerate_sat(p, [y, x]))
    assert rows == [{'x': 0, 'y': 2}, {'x': 1, 'y': 1}, {'x': 2, 'y': 0}]
    assert ctx.pick(p, [x, y]) == {'x': 0, 'y': 2}
    assert ctx.pick(ctx.false, [x]) is None


def test_from_table_chunks_compose_to_the_whole_table(ctx):
    x = ctx.declare('x', 8)
    y = ctx.declare('y', 4)
    rng = np.random.default_rng(3)
    table = rng.integers(0, 2, size=32)
    whole = ctx.from_table([x, y], table, [ctx.false, ctx.true])
    parts = ctx.false
    for start in range(0, 32, 8):
        chunk = ctx.from_table([x, y], table[start:start + 8], [ctx.false, ctx.true], offset=start)
        parts = ctx.disj(parts, chunk)
    assert ctx.equivalent(whole, parts)
    assert ctx.count_sat(whole, [x, y]) == int(table.sum())
    with pytest.raises(ValueError):
        ctx.from_table([x, y], table[:8], [ctx.false, ctx.true], offset=4)


def test_assignment_dump_loads_in_a_fresh_context(ctx):
    x = ctx.declare('x', 5)
    u = ctx.declare('u', 3)
    p = ctx.from_function([x, u], lambda i, j: (i + j) % 3 == 0)
    text = ctx.dump_assignments(p, [x, u])
    assert text.startswith('# predicate x:5 u:3\n')
    assert text.rstrip().endswith(f"# end {ctx.count_sat(p, [x, u])}")

    fresh = PredicateContext('fresh', backend='autoref')
    q = fresh.load_dump(text)
    assert fresh.count_sat(q, ['x', 'u']) == ctx.count_sat(p, [x, u])
    assert list(fresh.enumerate_sat(q, ['x', 'u'])) == list(ctx.enumerate_sat(p, [x, u]))


def test_diagram_dump_loads_in_a_fresh_context(ctx):
    x = ctx.declare('x', 7)
    y = ctx.declare('y', 6)
    p = ctx.from_function([x, y], lambda i, j: i * j % 4 == 1)
    fresh = PredicateContext('fresh', backend='autoref')
    q = fresh.load_dump(ctx.dump_diagram(p, [x, y]))
    assert list(fresh.enumerate_sat(q, ['x', 'y'])) == list(ctx.enumerate_sat(p, [x, y]))


def test_diagram_root_is_restricted_to_the_domain(ctx):
    # a constant-true root still excludes the padding value of a 3-valued variable
    p = ctx.load_dump('# diagram a:3\n# root 1\n# end 0\n')
    assert ctx.count_sat(p, ['a']) == 3
    assert p.node == ctx.domain(['a']).node


def test_truncated_dumps_raise_format_error(ctx):
    x = ctx.declare('x', 4)
    text = ctx.dump_assignments(ctx.in_range(x, 1, 2), [x])
    truncated = '\n'.join(text.splitlines()[:-1])
    with pytest.raises(FormatError):
        PredicateContext('fresh', backend='autoref').load_dump(truncated)
    with pytest.raises(FormatError):
        PredicateContext('fresh', backend='autoref').load('not json\n' + text)


def test_json_header_dump_round_trip(ctx):
    x = ctx.declare('x', 4)
    text = ctx.dump(ctx.in_range(x, 1, 2), [x], header={'module': 'M'})
    meta, p = PredicateContext('fresh', backend='autoref').load(text)
    assert meta['module'] == 'M'
    assert meta['count'] == 2
    assert meta['variables'] == [['x', 4]]


def test_load_rejects_conflicting_domain(ctx):
    x = ctx.declare('x', 4)
    text = ctx.dump_assignments(ctx.eq(x, 1), [x])
    other = PredicateContext('other', backend='autoref')
    other.declare('x', 5)
    with pytest.raises(TypeMismatch):
        other.load_dump(text)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_quantifier_duality(seed):
    ctx, (a, b, c), rng = _random_context(seed)
    p, _ = _random_predicate(ctx, [a, b, c], rng)
    assert ctx.equivalent(ctx.neg(ctx.exists([b], p)), ctx.forall([b], ctx.neg(p)))
    assert ctx.equivalent(ctx.neg(ctx.forall([a, c], p)), ctx.exists([a, c], ctx.neg(p)))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_inclusion_exclusion_counting(seed):
    ctx, variables, rng = _random_context(seed)
    p, mp = _random_predicate(ctx, variables, rng)
    q, mq = _random_predicate(ctx, variables, rng)
    assert ctx.count_sat(p, variables) == int(mp.sum())
    union = ctx.count_sat(ctx.disj(p, q), variables)
    both = ctx.count_sat(ctx.conj(p, q), variables)
    assert union == ctx.count_sat(p, variables) + ctx.count_sat(q, variables) - both
    assert ctx.count_sat(ctx.neg(p), variables) == int(mp.size - mp.sum())


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_exists_matches_mask_projection(seed):
    ctx, (a, b, c), rng = _random_context(seed)
    p, mask = _random_predicate(ctx, [a, b, c], rng)
    projected = ctx.exists([b], p)
    assert ctx.equivalent(projected, ctx.from_mask([a, c], mask.any(axis=1)))
    assert ctx.equivalent(ctx.forall([b], p), ctx.from_mask([a, c], mask.all(axis=1)))


def test_var_eq_on_padded_domains(ctx):
    a = ctx.declare('a', 3)
    b = ctx.declare('b', 3)
    same = ctx.var_eq(a, b)
    assert [(row['a'], row['b']) for row in ctx.enumerate_sat(same, [a, b])] == [(0, 0), (1, 1), (2, 2)]
    assert ctx.count_sat(ctx.neg(same), [a, b]) == 6
    with pytest.raises(TypeMismatch):
        ctx.var_eq(a, ctx.declare('c', 4))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_equal_sets_share_one_node(seed):
    ctx, variables, rng = _random_context(seed)
    p, mask = _random_predicate(ctx, variables, rng)
    cubes = ctx.disj_all(ctx.cube({v: int(i) for v, i in zip(variables, index)})
                         for index in zip(*np.nonzero(mask)))
    assert cubes.node == p.node
    assert ctx.neg(ctx.neg(p)).node == p.node
    q, _ = _random_predicate(ctx, variables, rng)
    assert ctx.equivalent(p, q) == (p.node == q.node)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_enumeration_agrees_with_the_count(seed):
    ctx, variables, rng = _random_context(seed)
    p, mask = _random_predicate(ctx, variables, rng)
    rows = list(ctx.enumerate_sat(p, variables))
    assert len(rows) == ctx.count_sat(p, variables) == int(mask.sum())
    assert len({tuple(row.values()) for row in rows}) == len(rows)
    picked = ctx.exists(variables[1:], p)
    assert len(list(ctx.enumerate_sat(picked, variables[:1]))) == ctx.count_sat(picked, variables[:1])
