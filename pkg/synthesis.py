"""
Controller Synthesis
Safety and reach fixed points on abstract control modules, and refinement
of abstract controllers to concrete states through the state quantizers
"""
import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from interval_grid import OutOfDomain, Quantizer, quantize
from module_algebra import ControlModule, nonblocking
from predicates import Predicate, PredicateContext

logger = logging.getLogger(__name__)


class OutOfControllerDomain(OutOfDomain):
    """Concrete state without an input admissible for all related cells"""


@dataclass
class Controller:
    """
    Abstract controller C(x^, u) for a control module

    For reach controllers `levels[k]` holds the states winning within k
    steps and C only admits the inputs chosen when a state first entered.
    `iterations` counts predecessor computations up to the fixed point.
    """
    system: ControlModule
    predicate: Predicate
    domain: Predicate
    kind: str
    levels: List[Predicate] = field(default_factory=list)
    iterations: int = 0

    @property
    def context(self) -> PredicateContext:
        return self.system.context

    def contains(self, state: Mapping[str, int]) -> bool:
        ctx = self.context
        return not ctx.is_unsat(ctx.conj(self.domain, ctx.cube(state)))

    def inputs_at(self, state: Mapping[str, int]) -> List[Dict[str, int]]:
        """Admissible control assignments at an abstract state, smallest first"""
        ctx = self.context
        allowed = ctx.exists(self.system.states, ctx.conj(self.predicate, ctx.cube(state)))
        return list(ctx.enumerate_sat(allowed, self.system.controls))

    def choose(self, state: Mapping[str, int]) -> Optional[Dict[str, int]]:
        inputs = self.inputs_at(state)
        return inputs[0] if inputs else None

    def step_index(self, state: Mapping[str, int]) -> Optional[int]:
        """Reach controllers: iteration at which the state entered the winning set"""
        ctx = self.context
        cube = ctx.cube(state)
        for k, level in enumerate(self.levels):
            if not ctx.is_unsat(ctx.conj(level, cube)):
                return k
        return None

    def domain_size(self) -> int:
        return self.context.count_sat(self.domain, self.system.states)

    def to_dict(self) -> Dict:
        """Convert to dictionary"""
        ctx = self.context
        return {
            'system': self.system.name,
            'kind': self.kind,
            'domain_states': self.domain_size(),
            'state_count': self.system.state_count(),
            'pairs': ctx.count_sat(self.predicate, self.system.states + self.system.controls),
            'iterations': self.iterations,
        }

    def export(self) -> str:
        """JSON header plus predicate dump of C"""
        header = {'system': self.system.name, 'kind': self.kind,
                  'states': [v.name for v in self.system.states],
                  'controls': [v.name for v in self.system.controls]}
        return self.context.dump(self.predicate, self.system.states + self.system.controls, header)


def controlled_pre(system: ControlModule, target: Predicate) -> Predicate:
    """(x^, u) pairs that are nonblocking and only lead into `target`"""
    ctx = system.context
    successors_ok = ctx.forall(system.next_states,
                               ctx.implies(system.constraint, system.to_next(target)))
    return ctx.conj(nonblocking(system), successors_ok)


def _states(system: ControlModule, p: Predicate) -> Predicate:
    ctx = system.context
    return ctx.conj(p, ctx.domain(system.states))


def solve_safety(system: ControlModule, safe: Predicate) -> Controller:
    """Greatest fixed point W = Safe and exists u. cpre(W)"""
    ctx = system.context
    safe = _states(system, safe)
    winning = safe
    iterations = 0
    while True:
        iterations += 1
        shrunk = ctx.conj(safe, ctx.exists(system.controls, controlled_pre(system, winning)))
        if ctx.equivalent(shrunk, winning):
            break
        winning = shrunk
    predicate = ctx.conj(safe, controlled_pre(system, winning))
    controller = Controller(system, predicate, winning, 'safety', iterations=iterations)
    logger.info(f"Safety on {system.name}: {controller.domain_size()} of "
                f"{system.state_count()} states after {iterations} iterations")
    return controller


def solve_reach(system: ControlModule, target: Predicate) -> Controller:
    """Least fixed point W = Target or exists u. cpre(W), keeping first-entry inputs"""
    ctx = system.context
    target = _states(system, target)
    winning = target
    levels = [target]
    predicate = ctx.conj(target, nonblocking(system))
    while True:
        pre = controlled_pre(system, winning)
        fresh = ctx.conj(ctx.exists(system.controls, pre), ctx.neg(winning))
        if ctx.is_unsat(fresh):
            break
        predicate = ctx.disj(predicate, ctx.conj(pre, fresh))
        winning = ctx.disj(winning, fresh)
        levels.append(winning)
    controller = Controller(system, predicate, winning, 'reach', levels, len(levels))
    logger.info(f"Reach on {system.name}: {controller.domain_size()} of "
                f"{system.state_count()} states in {len(levels) - 1} steps")
    return controller


def box_predicate(ctx: PredicateContext, quantizers: Mapping[str, Quantizer],
                  box: Mapping[str, Sequence[float]]) -> Predicate:
    """
    Abstract states whose cells lie entirely inside an interval box

    Args:
        quantizers: concrete state name -> quantizer
        box: concrete state name -> [lo, hi]; unlisted states are unconstrained
    """
    result = ctx.true
    for name, (lo, hi) in box.items():
        if name not in quantizers:
            raise ValueError(f"No quantizer for state {name}")
        q = quantizers[name]
        cells = np.arange(q.cell_count)
        cell_lo, cell_hi = q.bounds(cells)
        inside = cells[(cell_lo >= lo) & (cell_hi <= hi)]
        result = ctx.conj(result, ctx.member(q.abstract_var, [int(c) for c in inside]))
    return result


def check_safety_closure(controller: Controller, safe: Predicate) -> bool:
    """Every successor under C stays in the controller domain and in Safe"""
    system = controller.system
    ctx = system.context
    allowed = ctx.conj(controller.predicate, system.constraint)
    stay = system.to_next(ctx.conj(controller.domain, safe))
    return ctx.is_unsat(ctx.conj(allowed, ctx.neg(stay)))


def check_reach_progress(controller: Controller, target: Predicate) -> bool:
    """Step index strictly decreases along every closed-loop transition until Target"""
    system = controller.system
    ctx = system.context
    target = _states(system, target)
    for state in ctx.enumerate_sat(controller.domain, system.states):
        if not ctx.is_unsat(ctx.conj(target, ctx.cube(state))):
            continue
        level = controller.step_index(state)
        inputs = controller.inputs_at(state)
        if not inputs:
            return False
        for u in inputs:
            step = ctx.conj(system.constraint, ctx.cube({**state, **u}))
            successors = ctx.exists(system.states + system.controls, step)
            for nxt in ctx.enumerate_sat(successors, system.next_states):
                current = {system.pairing[k]: v for k, v in nxt.items()}
                index = controller.step_index(current)
                if index is None or index >= level:
                    return False
    return True


class ConcreteController:
    """
    Refined controller: quantize the concrete state, then keep the inputs
    admissible for every related cell
    """

    def __init__(self, controller: Controller, quantizers: Mapping[str, Quantizer]):
        self.controller = controller
        self.quantizers = dict(quantizers)
        states = controller.system.states
        missing = [v.name for v in states
                   if not any(q.abstract_var.name == v.name for q in self.quantizers.values())]
        if missing:
            raise ValueError(f"No quantizer for abstract states {missing}")

    def cells(self, point: Mapping[str, float]) -> List[Dict[str, int]]:
        names, choices = [], []
        for concrete, q in self.quantizers.items():
            if concrete not in point:
                raise OutOfDomain(f"No value for state {concrete}")
            names.append(q.abstract_var.name)
            choices.append(sorted(quantize(q, point[concrete])))
        return [dict(zip(names, combo)) for combo in itertools.product(*choices)]

    def admissible(self, point: Mapping[str, float]) -> List[Dict]:
        """Control inputs (labels) allowed at a concrete state; empty when cells disagree"""
        allowed = None
        for cell in self.cells(point):
            here = {tuple(sorted(u.items())) for u in self.controller.inputs_at(cell)}
            allowed = here if allowed is None else allowed & here
        if not allowed:
            logger.warning(f"No input admissible for all cells related to {dict(point)}")
            return []
        ctx = self.controller.context
        return [{k: ctx.variables[k].label_of(v) for k, v in u} for u in sorted(allowed)]

    def choose(self, point: Mapping[str, float]) -> Dict:
        inputs = self.admissible(point)
        if not inputs:
            raise OutOfControllerDomain(f"{dict(point)} is outside the refined controller's domain")
        return inputs[0]

    def __call__(self, point: Mapping[str, float]) -> List[Dict]:
        return self.admissible(point)


def refine_controller(controller: Controller, quantizers: Mapping[str, Quantizer]) -> ConcreteController:
    if controller.context.is_unsat(controller.predicate):
        raise ValueError(f"Controller for {controller.system.name} is empty")
    return ConcreteController(controller, quantizers)
