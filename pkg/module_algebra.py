"""
Module Algebra
Modules as (inputs, outputs, constraint) triples, nonblocking inputs,
series/parallel composition with blocking propagation, collection
composition over the dependency graph, and output hiding
"""
import logging
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import networkx as nx

from predicates import ContextMismatch, Predicate, PredicateContext, SupportError, TypeMismatch, VarLike

logger = logging.getLogger(__name__)


class AlgebraicLoop(ValueError):
    """Cyclic dependency between modules"""

    def __init__(self, cycle: Sequence[str]):
        self.cycle = list(cycle)
        super().__init__(f"Algebraic loop through modules: {' -> '.join(self.cycle)}")


class OutputClash(ValueError):
    """Two modules drive the same output variable"""


class NotAnOutput(ValueError):
    """Hiding a variable that is not an output of the module"""


class PairingError(ValueError):
    """Primed state without a matching unprimed input"""


class FiniteModule:
    """
    Module (i, o, F) over finite variables

    Args:
        name: identifier used in logs, reports and the dependency graph
        inputs: input variables (composites are expanded to their atoms)
        outputs: output variables
        constraint: predicate whose support lies in inputs + outputs
    """

    def __init__(self, name: str, inputs: Sequence[VarLike], outputs: Sequence[VarLike],
                 constraint: Predicate):
        ctx = constraint.context
        self.name = name
        self.constraint = constraint
        self.inputs = tuple(ctx.atoms(inputs))
        self.outputs = tuple(ctx.atoms(outputs))
        overlap = self.input_names & self.output_names
        if overlap:
            raise ValueError(f"Module {name}: {sorted(overlap)} both input and output")
        extra = constraint.support - self.input_names - self.output_names
        if extra:
            raise SupportError(f"Module {name} constraint depends on {sorted(extra)}")

    @property
    def context(self) -> PredicateContext:
        return self.constraint.context

    @property
    def input_names(self) -> frozenset:
        return frozenset(v.name for v in self.inputs)

    @property
    def output_names(self) -> frozenset:
        return frozenset(v.name for v in self.outputs)

    def nonblocking(self) -> Predicate:
        return nonblocking(self)

    def transition_count(self) -> int:
        return self.context.count_sat(self.constraint, self.inputs + self.outputs)

    def input_count(self) -> int:
        count = 1
        for v in self.inputs:
            count *= v.domain_size
        return count

    def blocking_count(self) -> int:
        return self.input_count() - self.context.count_sat(self.nonblocking(), self.inputs)

    def to_dict(self) -> Dict:
        """Convert to dictionary"""
        return {
            'name': self.name,
            'inputs': [v.name for v in self.inputs],
            'outputs': [v.name for v in self.outputs],
            'transitions': self.transition_count(),
            'blocking_inputs': self.blocking_count(),
            'nodes': self.context.node_count(self.constraint),
        }

    def __repr__(self):
        ins = ','.join(v.name for v in self.inputs)
        outs = ','.join(v.name for v in self.outputs)
        return f"FiniteModule({self.name}: ({ins}) -> ({outs}))"


class ControlModule(FiniteModule):
    """
    Control system as a module: inputs x + u, outputs x'

    `pairing` maps each primed state name to its unprimed state name.
    """

    def __init__(self, name: str, states: Sequence[VarLike], controls: Sequence[VarLike],
                 next_states: Sequence[VarLike], constraint: Predicate, pairing: Mapping[str, str]):
        ctx = constraint.context
        self.states = tuple(ctx.atoms(states))
        self.controls = tuple(ctx.atoms(controls))
        self.next_states = tuple(ctx.atoms(next_states))
        self.pairing = dict(pairing)
        super().__init__(name, self.states + self.controls, self.next_states, constraint)

    def to_next(self, p: Predicate) -> Predicate:
        """Predicate over x rewritten over x'"""
        return self.context.rename(p, {x: xn for xn, x in self.pairing.items()})

    def to_current(self, p: Predicate) -> Predicate:
        return self.context.rename(p, dict(self.pairing))

    def state_count(self) -> int:
        count = 1
        for v in self.states:
            count *= v.domain_size
        return count


def nonblocking(m: FiniteModule) -> Predicate:
    """NB(i) = exists o. F(i, o)"""
    return m.context.exists(m.outputs, m.constraint)


def blocking(m: FiniteModule) -> Predicate:
    ctx = m.context
    return ctx.conj(ctx.neg(nonblocking(m)), ctx.domain(m.inputs))


def _check_shared(m1: FiniteModule, m2: FiniteModule):
    if m1.context is not m2.context:
        raise ContextMismatch(f"Modules {m1.name} and {m2.name} live in different contexts")
    vars1 = {v.name: v for v in m1.inputs + m1.outputs}
    for v in m2.inputs + m2.outputs:
        other = vars1.get(v.name)
        if other is not None and other.domain_size != v.domain_size:
            raise TypeMismatch(f"Shared variable {v.name}: {other.domain_size} values in {m1.name}, "
                               f"{v.domain_size} in {m2.name}")


def compose2(m1: FiniteModule, m2: FiniteModule, name: str = None) -> FiniteModule:
    """
    Compose two modules, M1 upstream of M2

    The orientation is detected from the shared variables; modules that share
    nothing are composed in name order.

    Returns:
        (i1 + i2 - o1, o1 + o2, M1 and M2 and forall o1 (M1 => NB_M2))
    """
    _check_shared(m1, m2)
    clash = m1.output_names & m2.output_names
    if clash:
        raise OutputClash(f"Modules {m1.name} and {m2.name} both drive {sorted(clash)}")
    forward = bool(m1.output_names & m2.input_names)
    backward = bool(m2.output_names & m1.input_names)
    if forward and backward:
        raise AlgebraicLoop([m1.name, m2.name, m1.name])
    if backward or (not forward and m2.name < m1.name):
        m1, m2 = m2, m1

    ctx = m1.context
    wired = m1.output_names & m2.input_names
    inputs = list(m1.inputs) + [v for v in m2.inputs if v.name not in wired and v.name not in m1.input_names]
    outputs = list(m1.outputs) + list(m2.outputs)
    constraint = ctx.conj(m1.constraint, m2.constraint)
    if wired:
        # the guard only depends on o1 among the composite outputs
        guard = ctx.forall(m1.outputs, ctx.implies(m1.constraint, nonblocking(m2)))
        constraint = ctx.conj(constraint, guard)
    result = FiniteModule(name or f"{m1.name}+{m2.name}", inputs, outputs, constraint)
    logger.debug(f"Composed {m1.name} -> {m2.name} over {sorted(wired)}: "
                 f"{ctx.node_count(constraint)} nodes")
    return result


class DependencyGraph:
    """
    Modules as vertices, an edge a -> b when an output of a is an input of b

    Works on anything with `name`, `input_names` and `output_names`, so
    module descriptors can be checked before any predicate exists.
    """

    def __init__(self, modules: Iterable):
        self.modules: Dict[str, object] = {}
        self.graph = nx.DiGraph()
        self.drivers: Dict[str, str] = {}
        for m in modules:
            if m.name in self.modules:
                raise ValueError(f"Duplicate module name {m.name}")
            self.modules[m.name] = m
            self.graph.add_node(m.name)
            for name in sorted(m.output_names):
                if name in self.drivers:
                    raise OutputClash(f"{name} driven by both {self.drivers[name]} and {m.name}")
                self.drivers[name] = m.name
        for m in self.modules.values():
            for name in sorted(m.input_names):
                source = self.drivers.get(name)
                if source is None:
                    continue
                if self.graph.has_edge(source, m.name):
                    self.graph.edges[source, m.name]['wires'].append(name)
                else:
                    self.graph.add_edge(source, m.name, wires=[name])

    def order(self) -> List[str]:
        """Upstream-first topological order, ties broken by module name"""
        try:
            return list(nx.lexicographical_topological_sort(self.graph))
        except nx.NetworkXUnfeasible:
            cycle = nx.find_cycle(self.graph)
            names = [edge[0] for edge in cycle] + [cycle[0][0]]
            raise AlgebraicLoop(names)

    def upstream(self, name: str) -> List[str]:
        """The module plus everything feeding it, in topological order"""
        cone = nx.ancestors(self.graph, name) | {name}
        return [n for n in self.order() if n in cone]

    def edges(self) -> List[tuple]:
        return [(a, b, sorted(data['wires'])) for a, b, data in sorted(self.graph.edges(data=True))]


def compose_all(modules: Sequence[FiniteModule], name: str = None,
                context: PredicateContext = None) -> FiniteModule:
    """
    Compose a collection: fold compose2 from the most downstream module up

    An empty collection yields the trivial module (no inputs, no outputs, true),
    which needs `context`.
    """
    modules = list(modules)
    if not modules:
        if context is None:
            raise ValueError("compose_all of no modules needs a context")
        return FiniteModule(name or 'empty', (), (), context.true)
    graph = DependencyGraph(modules)
    order = graph.order()
    composed = None
    for module_name in reversed(order):
        m = graph.modules[module_name]
        composed = m if composed is None else compose2(m, composed)
    if name:
        composed = FiniteModule(name, composed.inputs, composed.outputs, composed.constraint)
    logger.info(f"Composed {len(modules)} modules ({' < '.join(order)}): "
                f"{composed.context.node_count(composed.constraint)} nodes")
    return composed


def hide(m: FiniteModule, hidden: Iterable[VarLike], name: str = None) -> FiniteModule:
    """(i, o + w, F) -> (i, o, exists w. F)"""
    ctx = m.context
    hidden = ctx.atoms(list(hidden))
    names = {v.name for v in hidden}
    bad = names - m.output_names
    if bad:
        raise NotAnOutput(f"{sorted(bad)} are not outputs of {m.name}")
    if not names:
        return m
    outputs = [v for v in m.outputs if v.name not in names]
    return FiniteModule(name or m.name, m.inputs, outputs, ctx.exists(hidden, m.constraint))


def rename(m: FiniteModule, mapping: Mapping[str, str], name: str = None) -> FiniteModule:
    """Rewire a module by renaming its variables"""
    ctx = m.context
    mapping = {k: v for k, v in mapping.items() if k in m.input_names | m.output_names}

    def moved(vs):
        return [ctx.variable(mapping.get(v.name, v.name)) for v in vs]

    return FiniteModule(name or m.name, moved(m.inputs), moved(m.outputs),
                        ctx.rename(m.constraint, mapping))


def as_control(m: FiniteModule, pairing: Mapping[str, str], name: str = None) -> ControlModule:
    """
    Validate a module as a control system

    Args:
        m: module whose outputs are exactly the primed states
        pairing: primed state name -> unprimed state name
    """
    ctx = m.context
    outputs = m.output_names
    unpaired = outputs - set(pairing)
    if unpaired:
        raise PairingError(f"Outputs {sorted(unpaired)} of {m.name} have no state pairing")
    missing = set(pairing) - outputs
    if missing:
        raise PairingError(f"Paired states {sorted(missing)} are not outputs of {m.name}")
    states = []
    for primed in (v.name for v in m.outputs):
        state = pairing[primed]
        if state not in m.input_names:
            raise PairingError(f"{state} (paired with {primed}) is not an input of {m.name}")
        if ctx.variable(state).domain_size != ctx.variable(primed).domain_size:
            raise PairingError(f"dom({state}) and dom({primed}) differ in size")
        states.append(state)
    controls = [v for v in m.inputs if v.name not in set(states)]
    return ControlModule(name or m.name, states, controls, [v.name for v in m.outputs],
                         m.constraint, pairing)
