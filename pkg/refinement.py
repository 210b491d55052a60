"""
Refinement Checks
Executable checks that an abstract module approximates a concrete one
(blocking and overapproximation conditions), the feedback refinement
specialization for control systems, and randomized harnesses showing the
relation survives composition and output hiding
"""
import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed

from concrete_functions import Expr, evaluate_array, parse
from config import Config
from interval_grid import Quantizer, StrictnessError, grid_points, relation_predicate, require_strict
from module_algebra import ControlModule, FiniteModule, compose2, hide, nonblocking
from predicates import Predicate, PredicateContext, TypeMismatch, Variable

logger = logging.getLogger(__name__)

NONBLOCKING = 'nonblocking'
OVERAPPROX = 'overapprox'


@dataclass
class AbstractionClaim:
    """
    `abstract` approximates `concrete` with respect to the relations

    Args:
        input_relation: Qi over concrete and abstract inputs
        output_relation: Qo over concrete and abstract outputs
        resolution: samples per eta when the concrete side is a sampled restriction
    """
    concrete: FiniteModule
    abstract: FiniteModule
    input_relation: Predicate
    output_relation: Predicate
    resolution: Optional[int] = None


@dataclass
class CheckReport:
    verdict: str
    condition: Optional[str] = None
    counterexample: Optional[Dict[str, int]] = None
    witness: Optional[Dict[str, object]] = None
    notes: List[str] = field(default_factory=list)
    resolution: Optional[int] = None

    @property
    def passed(self) -> bool:
        return self.verdict == 'pass'

    def to_dict(self) -> Dict:
        """Convert to dictionary"""
        return {
            'verdict': self.verdict,
            'condition': self.condition,
            'counterexample': self.counterexample,
            'witness': self.witness,
            'notes': self.notes,
            'resolution': self.resolution,
        }


def _names(variables: Sequence[Variable]) -> List[str]:
    return [v.name for v in variables]


def relation_is_strict(ctx: PredicateContext, relation: Predicate, concrete: Sequence[Variable],
                       abstract: Sequence[Variable]) -> bool:
    """Every concrete assignment is related to at least one abstract assignment"""
    shared = set(_names(concrete)) & set(_names(abstract))
    abstract_only = [v for v in abstract if v.name not in shared]
    return ctx.is_tautology(ctx.exists(abstract_only, relation))


def violation(claim: AbstractionClaim, condition: str) -> Predicate:
    """Assignments breaking one of the two approximation conditions"""
    ctx = claim.concrete.context
    premise = ctx.conj(claim.input_relation, nonblocking(claim.abstract))
    if condition == NONBLOCKING:
        return ctx.conj(premise, ctx.neg(nonblocking(claim.concrete)))
    if condition == OVERAPPROX:
        return ctx.conj_all([premise, claim.concrete.constraint, claim.output_relation,
                             ctx.neg(claim.abstract.constraint)])
    raise ValueError(f"Unknown condition {condition}")


def check_abstraction(claim: AbstractionClaim) -> CheckReport:
    """
    Exact check of both conditions by predicate emptiness

    A sampled concrete side makes this a refuter at the stated resolution.
    """
    ctx = claim.concrete.context
    m, mh = claim.concrete, claim.abstract
    if not relation_is_strict(ctx, claim.input_relation, m.inputs, mh.inputs):
        raise StrictnessError(f"Input relation of {mh.name} is not strict")
    if not relation_is_strict(ctx, claim.output_relation, m.outputs, mh.outputs):
        raise StrictnessError(f"Output relation of {mh.name} is not strict")

    for condition in (NONBLOCKING, OVERAPPROX):
        bad = violation(claim, condition)
        if not ctx.is_unsat(bad):
            found = ctx.pick(bad, sorted(bad.support))
            witness = {name: ctx.variables[name].label_of(value) for name, value in found.items()}
            logger.info(f"{mh.name} violates the {condition} condition at {witness}")
            return CheckReport('fail', condition, found, witness, resolution=claim.resolution)

    report = CheckReport('pass', resolution=claim.resolution)
    conservative = ctx.conj_all([claim.input_relation, nonblocking(m), ctx.neg(nonblocking(mh))])
    if not ctx.is_unsat(conservative):
        pairs = ctx.count_sat(conservative, sorted(conservative.support))
        report.notes.append(f"{pairs} related input pairs where only the abstraction blocks")
    if claim.resolution is not None:
        report.notes.append(f"no counterexample found at resolution eta/{claim.resolution}")
    return report


def confirm_counterexample(claim: AbstractionClaim, report: CheckReport) -> bool:
    """Replay a reported counterexample through the predicate engine"""
    if report.passed:
        return False
    ctx = claim.concrete.context
    return not ctx.is_unsat(ctx.conj(ctx.cube(report.counterexample), violation(claim, report.condition)))


# ----------------------------------------------------------------------
# sampled restrictions of continuous modules
# ----------------------------------------------------------------------
@dataclass
class SampledModule:
    """Finite restriction of a continuous module plus its quantization relations"""
    module: FiniteModule
    input_relation: Predicate
    output_relation: Predicate
    resolution: int

    def claim(self, abstract: FiniteModule) -> AbstractionClaim:
        return AbstractionClaim(self.module, abstract, self.input_relation, self.output_relation,
                                self.resolution)


def _declare_once(ctx: PredicateContext, name: str, labels: Sequence[float], related_to: str) -> Variable:
    existing = ctx.variables.get(name)
    if existing is not None:
        if existing.labels != tuple(labels):
            raise TypeMismatch(f"{name} already declared with other sample values")
        return existing
    return ctx.declare(name, len(labels), labels=tuple(labels), related_to=related_to)


def _output_classes(q: Quantizer) -> Tuple[List[float], np.ndarray]:
    """
    Concrete outputs with the same cell set are interchangeable in the
    check, so each output is represented by its cell set: class 2c is
    {c}, class 2c+1 is {c, c+1}
    """
    n = q.cell_count
    labels, mask = [], np.zeros((2 * n - 1, n), dtype=bool)
    for k in range(2 * n - 1):
        c = k // 2
        labels.append(float(q.center(c)) if k % 2 == 0 else float(q._cell_upper(c)))
        mask[k, c] = True
        mask[k, (k + 1) // 2] = True
    return labels, mask


def finitize(ctx: PredicateContext, name: str, exprs: Sequence[Union[Expr, str]],
             inputs: Sequence[Quantizer], outputs: Sequence[Quantizer],
             resolution: int = None) -> SampledModule:
    """
    Dense-sample restriction of the concrete module o = F(i)

    Uniform inputs are sampled at eta/resolution; identity-quantized
    variables are shared with the abstract side (their relation is true).
    The concrete module blocks where F is undefined or leaves the output domain.
    """
    resolution = resolution or Config.CHECK_RESOLUTION
    names = [q.var for q in inputs]
    exprs = [parse(e, names) if isinstance(e, str) else e for e in exprs]
    if len(exprs) != len(outputs):
        raise ValueError(f"{len(exprs)} expressions for {len(outputs)} outputs")

    in_vars, in_values, relations = [], [], []
    for q in inputs:
        if q.kind == 'identity':
            in_vars.append(q.abstract_var)
            in_values.append(np.asarray(q.values, dtype=float))
            continue
        samples = grid_points(q, resolution)
        var = _declare_once(ctx, f"{q.var}~s", [float(s) for s in samples], q.abstract_var.name)
        relations.append(relation_predicate(ctx, q, samples, var))
        in_vars.append(var)
        in_values.append(samples)

    out_vars, out_relations = [], []
    for q in outputs:
        if q.kind == 'identity':
            out_vars.append(q.abstract_var)
            continue
        labels, mask = _output_classes(q)
        var = _declare_once(ctx, f"{q.var}~o", labels, q.abstract_var.name)
        out_relations.append(ctx.from_mask([var, q.abstract_var], mask))
        out_vars.append(var)

    padded = ctx.padded_shape(in_vars)
    total = int(np.prod(padded, dtype=np.int64))
    size = min(2 ** Config.ABSTRACTION_CHUNK_BITS, total)
    leaves: Dict[tuple, Predicate] = {}
    constraint = ctx.false
    for start in range(0, total, size):
        flat = np.arange(start, start + size, dtype=np.int64)
        index = np.unravel_index(flat, padded)
        valid = np.ones(size, dtype=bool)
        env = {}
        for k, (q, values) in enumerate(zip(inputs, in_values)):
            valid &= index[k] < len(values)
            env[q.var] = values[np.minimum(index[k], len(values) - 1)]
        classes = np.empty((size, len(outputs)), dtype=np.int64)
        for j, (expr, q) in enumerate(zip(exprs, outputs)):
            value = np.broadcast_to(evaluate_array(expr, env), (size,))
            ok = ~np.isnan(value) & (value >= q.lower) & (value <= q.upper)
            first, last = q.cell_range(np.where(ok, value, q.lower), np.where(ok, value, q.lower))
            ok &= first <= last
            classes[:, j] = first if q.kind == 'identity' else first + last
            valid &= ok
        classes[~valid] = -1
        rows, inverse = np.unique(classes, axis=0, return_inverse=True)
        chunk_leaves = []
        for row in rows:
            key = tuple(int(v) for v in row)
            if key not in leaves:
                leaves[key] = ctx.false if key[0] < 0 else ctx.cube(dict(zip(_names(out_vars), key)))
            chunk_leaves.append(leaves[key])
        chunk = ctx.from_table(in_vars, inverse.reshape(-1), chunk_leaves, offset=start)
        constraint = ctx.disj(constraint, chunk)
    constraint = ctx.conj(constraint, ctx.domain(in_vars + out_vars))
    module = FiniteModule(f"{name}~sampled", in_vars, out_vars, constraint)
    logger.info(f"Sampled {name} at eta/{resolution}: {module.input_count()} input samples")
    return SampledModule(module, ctx.conj_all(relations), ctx.conj_all(out_relations), resolution)


def sample_control_system(ctx: PredicateContext, name: str, exprs: Sequence[Union[Expr, str]],
                          states: Sequence[Quantizer], controls: Sequence[Quantizer],
                          next_states: Sequence[Quantizer], resolution: int = None) -> SampledModule:
    """finitize for x' = F(x, u) with identity-quantized controls"""
    for q in controls:
        if q.kind != 'identity':
            raise TypeMismatch(f"Control {q.var} must be quantized by identity")
    return finitize(ctx, name, exprs, list(states) + list(controls), next_states, resolution)


def check_frr(concrete: Union[ControlModule, SampledModule], abstract: ControlModule,
              state_relation: Predicate = None) -> CheckReport:
    """
    Feedback refinement check: shared controls, state relation on x and x'

    Args:
        concrete: finite control module (then `state_relation` relates x to
                  the abstract states) or a sampled control system
        abstract: abstract control module
    """
    if isinstance(concrete, SampledModule):
        missing = [u.name for u in abstract.controls if u.name not in concrete.module.input_names]
        if missing:
            raise TypeMismatch(f"Controls {missing} are not inputs of the sampled system")
        return check_abstraction(concrete.claim(abstract))

    ours = [(u.name, u.domain_size) for u in concrete.controls]
    theirs = [(u.name, u.domain_size) for u in abstract.controls]
    if ours != theirs:
        raise TypeMismatch(f"Control inputs differ: {ours} vs {theirs}")
    if state_relation is None:
        raise ValueError("check_frr on a finite control module needs the state relation")
    ctx = concrete.context
    mapping = {x: xn for xn, x in concrete.pairing.items()}
    mapping.update({x: xn for xn, x in abstract.pairing.items()})
    primed = ctx.rename(state_relation, mapping)
    return check_abstraction(AbstractionClaim(concrete, abstract, state_relation, primed))


# ----------------------------------------------------------------------
# exhaustive abstractions and randomized harnesses
# ----------------------------------------------------------------------
def tightest_abstraction(m: FiniteModule, input_relation: Predicate, output_relation: Predicate,
                         abstract_inputs: Sequence[Variable], abstract_outputs: Sequence[Variable],
                         name: str = None) -> FiniteModule:
    """
    Least conservative abstraction for the given relations

    An abstract input is nonblocking iff every related concrete input is;
    its transitions are the images of the related concrete transitions.
    """
    ctx = m.context
    abstract_names = set(_names(abstract_inputs)) | set(_names(abstract_outputs))
    concrete_in = [v for v in m.inputs if v.name not in abstract_names]
    concrete_out = [v for v in m.outputs if v.name not in abstract_names]
    safe = ctx.forall(concrete_in, ctx.implies(input_relation, nonblocking(m)))
    image = ctx.exists(concrete_in + concrete_out,
                       ctx.conj_all([input_relation, m.constraint, output_relation]))
    constraint = ctx.conj_all([safe, image, ctx.domain(list(abstract_inputs) + list(abstract_outputs))])
    return FiniteModule(name or f"{m.name}^", abstract_inputs, abstract_outputs, constraint)


def random_module(ctx: PredicateContext, name: str, inputs: Sequence[Variable],
                  outputs: Sequence[Variable], rng: np.random.Generator,
                  density: float = None, blocking_rate: float = 0.2) -> FiniteModule:
    """Random partial module, satisfying density drawn from [0.3, 0.7]"""
    density = rng.uniform(0.3, 0.7) if density is None else density
    in_shape = tuple(v.domain_size for v in inputs)
    out_shape = tuple(v.domain_size for v in outputs)
    mask = rng.random(in_shape + out_shape) < density
    if inputs:
        blocked = rng.random(in_shape) < blocking_rate
        mask[blocked] = False
    return FiniteModule(name, inputs, outputs, ctx.from_mask(list(inputs) + list(outputs), mask))


def random_cover(ctx: PredicateContext, concrete: Variable, abstract: Variable,
                 rng: np.random.Generator, overlap: float = 0.3) -> Predicate:
    """Random strict relation: each concrete value gets one or two abstract values"""
    mask = np.zeros((concrete.domain_size, abstract.domain_size), dtype=bool)
    for value in range(concrete.domain_size):
        mask[value, rng.integers(abstract.domain_size)] = True
        if rng.random() < overlap:
            mask[value, rng.integers(abstract.domain_size)] = True
    relation = ctx.from_mask([concrete, abstract], mask)
    if not relation_is_strict(ctx, relation, [concrete], [abstract]):
        raise StrictnessError(f"Random cover of {concrete.name} is not strict")
    return relation


def loosen(mh: FiniteModule, rng: np.random.Generator, extra: float = 0.1,
           block: float = 0.1) -> FiniteModule:
    """Add transitions on nonblocking inputs and block some inputs; stays an abstraction"""
    ctx = mh.context
    nb = nonblocking(mh)
    noise = random_module(ctx, 'noise', mh.inputs, mh.outputs, rng, density=extra, blocking_rate=0.0)
    blocked = ctx.from_mask(mh.inputs, rng.random(tuple(v.domain_size for v in mh.inputs)) < block)
    constraint = ctx.conj(ctx.disj(mh.constraint, ctx.conj(nb, noise.constraint)), ctx.neg(blocked))
    return FiniteModule(mh.name, mh.inputs, mh.outputs, constraint)


def _unsound(mh: FiniteModule, m: FiniteModule, input_relation: Predicate) -> FiniteModule:
    """Negative control: admit abstract inputs related to blocking concrete inputs"""
    ctx = mh.context
    abstract_names = set(mh.input_names)
    concrete_in = [v for v in m.inputs if v.name not in abstract_names]
    reaches_blocking = ctx.exists(concrete_in, ctx.conj(input_relation, ctx.neg(nonblocking(m))))
    constraint = ctx.disj(mh.constraint, ctx.conj(reaches_blocking, ctx.domain(mh.outputs)))
    return FiniteModule(mh.name, mh.inputs, mh.outputs, constraint)


@dataclass
class HarnessStats:
    name: str
    trials: int = 0
    passed: int = 0
    failed: int = 0
    precondition_failures: int = 0
    degenerate: int = 0
    failures: List[Dict] = field(default_factory=list)

    def to_dict(self) -> Dict:
        """Convert to dictionary"""
        return {
            'name': self.name,
            'trials': self.trials,
            'passed': self.passed,
            'failed': self.failed,
            'precondition_failures': self.precondition_failures,
            'degenerate': self.degenerate,
        }


def _sizes(rng: np.random.Generator, names: Sequence[str], max_bits: int) -> Dict[str, int]:
    return {n: int(rng.integers(2, 2 ** max_bits + 1)) for n in names}


def _declare_pair(ctx: PredicateContext, sizes: Dict[str, int], hat: Dict[str, int]):
    concrete = {n: ctx.declare(n, s) for n, s in sizes.items()}
    abstract = {n: ctx.declare(f"{n}_hat", hat[n], related_to=n) for n in sizes}
    return concrete, abstract


def _dump(ctx: PredicateContext, modules: Sequence[FiniteModule]) -> Dict[str, str]:
    return {m.name: ctx.dump_assignments(m.constraint, m.inputs + m.outputs) for m in modules}


def composition_trial(seed: int, trial: int, max_bits: int = 3, loosened: bool = True,
                      negative_control: bool = False, degenerate_every: int = 50) -> Dict:
    """
    One composition trial: M1 (x -> k, y) feeding M2 (j, y -> z)

    Abstractions of both modules are checked, then both levels are composed
    and the composed claim is checked.
    """
    rng = np.random.default_rng([seed, trial])
    ctx = PredicateContext(f"trial-{trial}")
    names = ['x', 'k', 'y', 'j', 'z']
    sizes = _sizes(rng, names, max_bits)
    v, h = _declare_pair(ctx, sizes, _sizes(rng, names, max_bits))
    q = {n: random_cover(ctx, v[n], h[n], rng) for n in names}

    degenerate = degenerate_every > 0 and trial % degenerate_every == 0
    m1 = random_module(ctx, 'M1', [v['x']], [v['k'], v['y']], rng)
    if degenerate:
        m2 = FiniteModule('M2', [v['j'], v['y']], [v['z']], ctx.false)
    else:
        m2 = random_module(ctx, 'M2', [v['j'], v['y']], [v['z']], rng)

    qi1, qo1 = q['x'], ctx.conj(q['k'], q['y'])
    qi2, qo2 = ctx.conj(q['j'], q['y']), q['z']
    mh1 = tightest_abstraction(m1, qi1, qo1, [h['x']], [h['k'], h['y']], 'M1^')
    mh2 = tightest_abstraction(m2, qi2, qo2, [h['j'], h['y']], [h['z']], 'M2^')
    if loosened:
        mh1, mh2 = loosen(mh1, rng), loosen(mh2, rng)
    if negative_control:
        mh2 = _unsound(mh2, m2, qi2)

    parts = [check_abstraction(AbstractionClaim(m1, mh1, qi1, qo1)),
             check_abstraction(AbstractionClaim(m2, mh2, qi2, qo2))]
    premise = all(r.passed for r in parts)

    m12, mh12 = compose2(m1, m2, 'M12'), compose2(mh1, mh2, 'M12^')
    composed = AbstractionClaim(m12, mh12, ctx.conj(q['x'], q['j']),
                                ctx.conj_all([q['k'], q['y'], q['z']]))
    report = check_abstraction(composed)
    record = {
        'trial': trial,
        'sizes': sizes,
        'degenerate': degenerate,
        'premise': premise,
        'passed': report.passed,
        'report': report.to_dict(),
    }
    if not report.passed:
        record['dump'] = _dump(ctx, [m1, m2, mh1, mh2])
    return record


def hiding_trial(seed: int, trial: int, max_bits: int = 3, loosened: bool = True) -> Dict:
    """One hiding trial: M (a -> b, c) with c, nothing, or everything hidden"""
    rng = np.random.default_rng([seed, trial])
    ctx = PredicateContext(f"trial-{trial}")
    names = ['a', 'b', 'c']
    sizes = _sizes(rng, names, max_bits)
    v, h = _declare_pair(ctx, sizes, _sizes(rng, names, max_bits))
    q = {n: random_cover(ctx, v[n], h[n], rng) for n in names}
    m = random_module(ctx, 'M', [v['a']], [v['b'], v['c']], rng)
    mh = tightest_abstraction(m, q['a'], ctx.conj(q['b'], q['c']), [h['a']], [h['b'], h['c']], 'M^')
    if loosened:
        mh = loosen(mh, rng)
    premise = check_abstraction(AbstractionClaim(m, mh, q['a'], ctx.conj(q['b'], q['c']))).passed

    mode = rng.choice(['one', 'none', 'all'], p=[0.8, 0.1, 0.1])
    hidden = {'one': ['c'], 'none': [], 'all': ['b', 'c']}[str(mode)]
    kept = [n for n in ('b', 'c') if n not in hidden]
    claim = AbstractionClaim(hide(m, [v[n] for n in hidden]), hide(mh, [h[n] for n in hidden]),
                             q['a'], ctx.conj_all(q[n] for n in kept))
    report = check_abstraction(claim)
    record = {
        'trial': trial,
        'sizes': sizes,
        'hidden': hidden,
        'degenerate': not kept,
        'premise': premise,
        'passed': report.passed,
        'report': report.to_dict(),
    }
    if not report.passed:
        record['dump'] = _dump(ctx, [m, mh])
    return record


def _run_harness(name: str, trial_fn, trials: int, seed: int, jsonl_path: str, n_jobs: int,
                 **kwargs) -> HarnessStats:
    trials = Config.HARNESS_TRIALS if trials is None else trials
    seed = Config.HARNESS_SEED if seed is None else seed
    n_jobs = n_jobs or Config.N_JOBS
    if n_jobs == 1:
        records = [trial_fn(seed, t, **kwargs) for t in range(trials)]
    else:
        records = Parallel(n_jobs=n_jobs)(delayed(trial_fn)(seed, t, **kwargs) for t in range(trials))

    stats = HarnessStats(name)
    for record in records:
        stats.trials += 1
        stats.degenerate += int(record['degenerate'])
        if not record['premise']:
            stats.precondition_failures += 1
        if record['passed']:
            stats.passed += 1
        else:
            stats.failed += 1
            stats.failures.append(record)
            if record['premise']:
                logger.error(f"{name} trial {record['trial']} failed with sound components: "
                             f"{record['report']}")
    if jsonl_path:
        with open(jsonl_path, 'w') as f:
            for record in records:
                f.write(json.dumps(record, sort_keys=True) + '\n')
    logger.info(f"{name}: {stats.passed}/{stats.trials} passed, "
                f"{stats.precondition_failures} precondition failures")
    return stats


def composition_harness(trials: int = None, max_bits: int = 3, seed: int = None, loosened: bool = True,
                        negative_control: bool = False, jsonl_path: str = None,
                        n_jobs: int = None) -> HarnessStats:
    """Composition preserves the abstraction relation, over randomized trials"""
    name = 'composition-negative-control' if negative_control else 'composition'
    return _run_harness(name, composition_trial, trials, seed, jsonl_path, n_jobs,
                        max_bits=max_bits, loosened=loosened, negative_control=negative_control)


def hiding_harness(trials: int = None, max_bits: int = 3, seed: int = None, loosened: bool = True,
                   jsonl_path: str = None, n_jobs: int = None) -> HarnessStats:
    """Hiding outputs on both levels preserves the abstraction relation"""
    return _run_harness('hiding', hiding_trial, trials, seed, jsonl_path, n_jobs,
                        max_bits=max_bits, loosened=loosened)
