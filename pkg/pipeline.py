"""
Abstraction Pipeline
Runs a SystemSpec through abstraction, composition, latent hiding, the
feedback refinement check and synthesis, writing run artifacts and a report
"""
import json
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

from abstractor import AbstractionStats, abstract_many, abstract_with_stats
from config import Config
from interval_grid import Quantizer
from module_algebra import ControlModule, DependencyGraph, FiniteModule, as_control, compose_all, hide, nonblocking
from predicates import FormatError, PredicateContext
from refinement import CheckReport, check_frr, sample_control_system
from synthesis import Controller, box_predicate, solve_reach, solve_safety
from system_spec import SystemSpec

logger = logging.getLogger(__name__)

STRATEGIES = ('cone', 'flat')


class StageError(RuntimeError):
    """An error raised inside a pipeline stage, labelled with the stage"""

    def __init__(self, stage: str, error: Exception):
        self.stage = stage
        self.error = error
        super().__init__(f"[{stage}] {type(error).__name__}: {error}")


@dataclass
class RunReport:
    name: str
    strategy: str
    stage_seconds: Dict[str, float] = field(default_factory=dict)
    modules: List[Dict] = field(default_factory=list)
    cells_traversed: int = 0
    composed: Optional[Dict] = None
    check: Optional[Dict] = None
    controller: Optional[Dict] = None

    @property
    def transitions(self) -> Optional[int]:
        return self.composed['transitions'] if self.composed else None

    def to_dict(self, timings: bool = True) -> Dict:
        """Convert to dictionary; timings=False gives the run-independent part"""
        data = {
            'name': self.name,
            'strategy': self.strategy,
            'modules': self.modules,
            'cells_traversed': self.cells_traversed,
            'composed': self.composed,
            'check': self.check,
            'controller': self.controller,
        }
        if timings:
            data['stage_seconds'] = self.stage_seconds
        return data


@dataclass
class PipelineRun:
    spec: SystemSpec
    context: PredicateContext
    quantizers: Dict[str, Quantizer]
    report: RunReport
    modules: Dict[str, FiniteModule] = field(default_factory=dict)
    composed: Optional[FiniteModule] = None
    control: Optional[ControlModule] = None
    controller: Optional[Controller] = None
    check: Optional[CheckReport] = None

    def state_quantizers(self) -> Dict[str, Quantizer]:
        return {x: self.quantizers[x] for x in self.spec.states}


class _Stage:
    """Times a stage and wraps its errors"""

    def __init__(self, report: RunReport, stage: str):
        self.report = report
        self.stage = stage

    def __enter__(self):
        self.started = time.time()
        logger.info(f"{self.report.name}: {self.stage}")
        return self

    def __exit__(self, exc_type, exc, tb):
        self.report.stage_seconds[self.stage] = round(time.time() - self.started, 3)
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.stage, exc) from exc
        return False


def _module_entry(m: FiniteModule, stats: AbstractionStats = None) -> Dict:
    entry = m.to_dict()
    if stats is not None:
        entry['cells'] = stats.cells
        entry['undefined_cells'] = stats.undefined
    return entry


def abstract_spec(spec: SystemSpec, report: RunReport, context: PredicateContext = None,
                  n_jobs: int = None) -> PipelineRun:
    """Declare the variables and abstract every module of the spec"""
    with _Stage(report, 'declare'):
        ctx = context or PredicateContext(spec.name)
        quantizers = spec.declare(ctx)
    run = PipelineRun(spec, ctx, quantizers, report)
    with _Stage(report, 'abstract'):
        jobs = spec.jobs(quantizers)
        modules, errors, stats = abstract_many(ctx, jobs, n_jobs)
        if errors:
            failed = ', '.join(f"{name}: {message}" for name, message in sorted(errors.items()))
            raise ValueError(f"Abstraction failed for {failed}")
        for m in spec.transition_modules(ctx, quantizers):
            modules[m.name] = m
        run.modules = {m.name: modules[m.name] for m in spec.modules}
        report.modules = [_module_entry(m, stats.get(name)) for name, m in run.modules.items()]
        report.cells_traversed = sum(s.cells for s in stats.values())
    return run


def _compose_flat(run: PipelineRun, hidden: Sequence[str]) -> FiniteModule:
    composed = compose_all(list(run.modules.values()), name=run.spec.name)
    return hide(composed, hidden)


def _compose_cones(run: PipelineRun, hidden: Sequence[str]) -> FiniteModule:
    """
    Compose each state's upstream cone, hide its latents, then compose the
    cones; cones share only inputs, so the last step is a parallel one
    """
    graph = DependencyGraph(run.modules.values())
    pairing = run.spec.pairing
    cones = []
    for name in graph.order():
        m = graph.modules[name]
        if not m.output_names & set(pairing):
            continue
        cone = compose_all([graph.modules[n] for n in graph.upstream(name)], name=f"cone:{name}")
        internal = [v.name for v in cone.outputs if v.name in hidden]
        cones.append(hide(cone, internal))
    return compose_all(cones, name=run.spec.name, context=run.context)


def compose_spec(run: PipelineRun, strategy: str = 'cone', hidden: Sequence[str] = None) -> FiniteModule:
    spec = run.spec
    hidden = list(spec.latents if hidden is None else hidden)
    if strategy not in STRATEGIES:
        raise ValueError(f"Unknown strategy {strategy!r}, use one of {STRATEGIES}")
    internal = {o for m in run.modules.values() for o in m.output_names} - set(spec.pairing)
    if strategy == 'cone' and not internal <= set(hidden):
        logger.warning(f"Latents {sorted(internal - set(hidden))} stay visible, composing flat")
        strategy = 'flat'
    run.report.strategy = strategy
    with _Stage(run.report, 'compose'):
        if strategy == 'cone':
            composed = _compose_cones(run, hidden)
        else:
            composed = _compose_flat(run, hidden)
    run.composed = composed
    run.report.composed = composed.to_dict()
    with _Stage(run.report, 'control'):
        if set(composed.output_names) <= set(spec.pairing):
            run.control = as_control(composed, spec.pairing)
        else:
            logger.info(f"{spec.name}: outputs {sorted(composed.output_names - set(spec.pairing))} "
                        f"are not states, no control module")
    return composed


def check_run(run: PipelineRun, resolution: int = None) -> CheckReport:
    """Falsification check of the composed abstraction against sampled concrete dynamics"""
    spec = run.spec
    with _Stage(run.report, 'check'):
        if run.control is None:
            raise ValueError("The check needs a control module; hide every latent")
        exprs = spec.monolithic_exprs()
        q = run.quantizers
        sampled = sample_control_system(run.context, spec.name, [exprs[xn] for xn in spec.next_states],
                                        [q[x] for x in spec.states], [q[u] for u in spec.controls],
                                        [q[xn] for xn in spec.next_states], resolution)
        report = check_frr(sampled, run.control)
    run.check = report
    run.report.check = report.to_dict()
    logger.info(f"Check on {spec.name}: {report.verdict}")
    return report


def synthesize_run(run: PipelineRun, kind: str, box: Mapping[str, Sequence[float]]) -> Controller:
    with _Stage(run.report, 'synthesize'):
        if run.control is None:
            raise ValueError("Synthesis needs a control module; hide every latent")
        region = box_predicate(run.context, run.state_quantizers(), box)
        if kind == 'safety':
            controller = solve_safety(run.control, region)
        elif kind == 'reach':
            controller = solve_reach(run.control, region)
        else:
            raise ValueError(f"Unknown synthesis objective {kind!r}")
    run.controller = controller
    run.report.controller = controller.to_dict()
    return controller


def write_artifacts(run: PipelineRun, directory: str) -> str:
    """
    One directory per run: spec.json, modules/<name>.dump, composed.dump,
    controller.dump, report.json and timings.json
    """
    ctx = run.context
    with _Stage(run.report, 'artifacts'):
        os.makedirs(os.path.join(directory, 'modules'), exist_ok=True)
        _write(os.path.join(directory, 'spec.json'), json.dumps(run.spec.to_dict(), indent=2, sort_keys=True))
        for name, m in run.modules.items():
            _write(os.path.join(directory, 'modules', f"{name}.dump"), _dump_module(m))
        if run.composed is not None:
            _write(os.path.join(directory, 'composed.dump'), _dump_module(run.composed))
        if run.controller is not None:
            _write(os.path.join(directory, 'controller.dump'), run.controller.export())
        _write(os.path.join(directory, 'report.json'),
               json.dumps(run.report.to_dict(timings=False), indent=2, sort_keys=True))
    _write(os.path.join(directory, 'timings.json'), json.dumps(run.report.stage_seconds, indent=2, sort_keys=True))
    logger.info(f"Artifacts for {run.spec.name} written to {directory}")
    return directory


def _write(path: str, text: str):
    with open(path, 'w') as f:
        f.write(text if text.endswith('\n') else text + '\n')


def _dump_module(m: FiniteModule) -> str:
    header = {'module': m.name, 'inputs': [v.name for v in m.inputs], 'outputs': [v.name for v in m.outputs]}
    return m.context.dump(m.constraint, m.inputs + m.outputs, header)


def run_pipeline(spec: SystemSpec, strategy: str = 'cone', hidden: Sequence[str] = None,
                 check: bool = False, synthesize: Mapping = None, artifact_dir: str = None,
                 n_jobs: int = None, resolution: int = None) -> PipelineRun:
    """
    Abstract, compose, hide latents, and optionally check and synthesize

    Args:
        strategy: 'cone' (per-state upstream cones) or 'flat' (one fold over all modules)
        hidden: latents to hide (default: the spec's latents)
        synthesize: {'spec': 'safety'|'reach', 'box': {state: [lo, hi]}};
                    the spec's own synthesis section is used when omitted
        artifact_dir: parent directory for the run directory (no artifacts when None)

    Raises:
        StageError: wrapping the first failing stage's error
    """
    report = RunReport(spec.name, strategy)
    run = abstract_spec(spec, report, n_jobs=n_jobs)
    compose_spec(run, strategy, hidden)
    if check:
        check_run(run, resolution)
    objective = synthesize if synthesize is not None else spec.synthesis
    if objective is not None:
        synthesize_run(run, objective['spec'], objective.get('box', {}))
    if artifact_dir:
        write_artifacts(run, os.path.join(artifact_dir, spec.name))
    return run


def run_monolithic(spec: SystemSpec, budget: float = None, base: PipelineRun = None,
                   n_jobs: int = None) -> PipelineRun:
    """
    Abstract the whole control system as one module

    Reuses the context of `base` (a compositional run) so the two results
    can be compared directly.

    Raises:
        TimeBudgetExceeded: traversal did not finish within `budget` seconds
    """
    budget = Config.MONOLITHIC_BUDGET if budget is None else budget
    report = RunReport(f"{spec.name}-monolithic", 'monolithic')
    if base is not None:
        run = PipelineRun(spec, base.context, base.quantizers, report)
    else:
        with _Stage(report, 'declare'):
            ctx = PredicateContext(spec.name)
            run = PipelineRun(spec, ctx, spec.declare(ctx), report)
    job = spec.monolithic_job(run.quantizers)
    logger.info(f"Monolithic abstraction of {spec.name}: {job.cells} cells, budget {budget}s")
    started = time.time()
    module, stats = abstract_with_stats(run.context, job, deadline=started + budget, n_jobs=n_jobs)
    report.stage_seconds['abstract'] = round(time.time() - started, 3)
    report.cells_traversed = stats.cells
    run.composed = module
    run.control = as_control(module, spec.pairing)
    report.composed = module.to_dict()
    report.modules = [_module_entry(module, stats)]
    return run


def compare(compositional: FiniteModule, monolithic: FiniteModule) -> Dict:
    """
    Conservative-direction relation between the two abstractions

    blocking_contained: every input the monolithic abstraction blocks is
    blocked compositionally; transitions_contained: on inputs both accept,
    every monolithic transition is a compositional one.
    """
    ctx = compositional.context
    if monolithic.context is not ctx:
        raise ValueError("Both abstractions must live in one context")
    nb_comp = nonblocking(compositional)
    nb_mono = nonblocking(monolithic)
    blocking_contained = ctx.is_unsat(ctx.conj(nb_comp, ctx.neg(nb_mono)))
    joint = ctx.conj_all([nb_comp, nb_mono, monolithic.constraint])
    transitions_contained = ctx.is_unsat(ctx.conj(joint, ctx.neg(compositional.constraint)))
    variables = list(compositional.inputs) + list(compositional.outputs)
    result = {
        'blocking_contained': blocking_contained,
        'transitions_contained': transitions_contained,
        'compositional_transitions': ctx.count_sat(compositional.constraint, variables),
        'monolithic_transitions': ctx.count_sat(monolithic.constraint, variables),
        'compositional_blocking': compositional.blocking_count(),
        'monolithic_blocking': monolithic.blocking_count(),
    }
    logger.info(f"Compositional vs monolithic: {result}")
    return result


def stats(path: str) -> Dict:
    """
    Summary of a predicate artifact: transition count, node count and, for
    module dumps, the blocking fraction

    Raises:
        FormatError: unreadable or truncated artifact
    """
    with open(path) as f:
        text = f.read()
    ctx = PredicateContext('stats')
    if text.startswith('{'):
        meta, p = ctx.load(text)
    else:
        meta, p = {}, ctx.load_dump(text)
    variables = ctx.by_declaration(list(ctx.variables.values()))
    summary = {
        'path': path,
        'transitions': ctx.count_sat(p, variables),
        'nodes': ctx.node_count(p),
        'blocking_fraction': None,
    }
    if 'inputs' in meta and 'outputs' in meta:
        try:
            m = FiniteModule(meta.get('module', os.path.basename(path)), meta['inputs'], meta['outputs'], p)
        except (KeyError, ValueError) as e:
            raise FormatError(f"Header of {path} does not describe the dumped predicate: {e}")
        total = m.input_count()
        summary['blocking_fraction'] = m.blocking_count() / total if total else 0.0
    return summary
