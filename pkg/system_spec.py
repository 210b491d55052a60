"""
System Specs
Declarative description of variables (via their quantizers), concrete
modules, latent variables and the control pairing; loaded from JSON or
YAML and validated before anything is built
"""
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional

import yaml

from abstractor import AbstractionJob
from concrete_functions import ExprSyntaxError, InvalidParameters, UnknownIdentifier, build_oracle, parse, substitute
from interval_grid import Quantizer, check_strict, from_dict
from module_algebra import DependencyGraph, FiniteModule, OutputClash
from predicates import PredicateContext

logger = logging.getLogger(__name__)

ORACLES = ('lipschitz', 'monotone', 'interval')


class SpecValidationError(ValueError):
    """Invalid system spec; `pointer` locates the offending JSON value"""

    def __init__(self, message: str, pointer: str = ''):
        self.pointer = pointer or '/'
        super().__init__(f"{self.pointer}: {message}")


@dataclass
class ModuleSpec:
    name: str
    inputs: List[str]
    outputs: List[str]
    exprs: Optional[List[str]] = None
    oracle: str = 'interval'
    L: Optional[List[List[float]]] = None
    transitions: Optional[str] = None

    @property
    def input_names(self) -> frozenset:
        return frozenset(self.inputs)

    @property
    def output_names(self) -> frozenset:
        return frozenset(self.outputs)

    def to_dict(self) -> Dict:
        if self.transitions is not None:
            source = {'transitions': self.transitions}
        else:
            source = {'abstracted': {'exprs': self.exprs, 'oracle': self.oracle}}
            if self.L is not None:
                source['abstracted']['L'] = self.L
        return {'name': self.name, 'inputs': self.inputs, 'outputs': self.outputs, 'source': source}


@dataclass
class SystemSpec:
    name: str
    quantizers: List[Dict]
    modules: List[ModuleSpec]
    latents: List[str] = field(default_factory=list)
    pairing: Dict[str, str] = field(default_factory=dict)
    controls: List[str] = field(default_factory=list)
    synthesis: Optional[Dict] = None
    base_dir: str = '.'

    @property
    def states(self) -> List[str]:
        return [self.pairing[x] for x in self.next_states]

    @property
    def next_states(self) -> List[str]:
        return [o for m in self.modules for o in m.outputs if o in self.pairing]

    def to_dict(self) -> Dict:
        """Convert to dictionary"""
        data = {
            'name': self.name,
            'quantizers': self.quantizers,
            'modules': [m.to_dict() for m in self.modules],
            'latents': self.latents,
            'control': {'pairing': self.pairing, 'controls': self.controls},
        }
        if self.synthesis is not None:
            data['synthesis'] = self.synthesis
        return data

    # ------------------------------------------------------------------
    # realization in a predicate context
    # ------------------------------------------------------------------
    def declare(self, ctx: PredicateContext) -> Dict[str, Quantizer]:
        """Declare every quantized variable; primed states interleave with their state"""
        quantizers = {}
        for data in self.quantizers:
            if data['var'] not in self.pairing:
                quantizers[data['var']] = from_dict(ctx, data)
        for data in self.quantizers:
            if data['var'] in self.pairing:
                quantizers[data['var']] = from_dict(ctx, data, related_to=self.pairing[data['var']])
        logger.debug(f"Declared {len(quantizers)} variables for {self.name} ({len(self.pairing)} paired)")
        return quantizers

    def _oracle(self, m: ModuleSpec, quantizers: Mapping[str, Quantizer]):
        domains = {n: (quantizers[n].lower, quantizers[n].upper) for n in m.inputs}
        return build_oracle(m.oracle, m.exprs, m.inputs, domains, m.L)

    def jobs(self, quantizers: Mapping[str, Quantizer]) -> List[AbstractionJob]:
        jobs = []
        for m in self.modules:
            if m.exprs is None:
                continue
            jobs.append(AbstractionJob(m.name, tuple(quantizers[n] for n in m.inputs),
                                       tuple(quantizers[n] for n in m.outputs),
                                       self._oracle(m, quantizers)))
        return jobs

    def transition_modules(self, ctx: PredicateContext, quantizers: Mapping[str, Quantizer]) -> List[FiniteModule]:
        """Modules given directly as predicate dumps"""
        modules = []
        for m in self.modules:
            if m.transitions is None:
                continue
            path = os.path.join(self.base_dir, m.transitions)
            with open(path) as f:
                text = f.read()
            predicate = ctx.load(text)[1] if text.startswith('{') else ctx.load_dump(text)
            modules.append(FiniteModule(m.name, [quantizers[n].abstract_var for n in m.inputs],
                                        [quantizers[n].abstract_var for n in m.outputs], predicate))
        return modules

    def monolithic_exprs(self) -> Dict[str, object]:
        """
        One expression per primed state with every latent definition inlined

        Raises:
            SpecValidationError: a module is not given by expressions
        """
        definitions = {}
        for m in self.modules:
            if m.exprs is None:
                raise SpecValidationError(f"Module {m.name} has no expressions to inline",
                                          f"/modules/{self.modules.index(m)}/source")
            for out, text in zip(m.outputs, m.exprs):
                definitions[out] = parse(text, m.inputs)
        order = DependencyGraph(self.modules).order()
        resolved = {}
        for name in order:
            m = next(mod for mod in self.modules if mod.name == name)
            for out in m.outputs:
                resolved[out] = substitute(definitions[out], resolved)
        return {xn: resolved[xn] for xn in self.next_states}

    def monolithic_job(self, quantizers: Mapping[str, Quantizer], oracle: str = 'interval') -> AbstractionJob:
        """The whole control system as one module over states and controls"""
        exprs = self.monolithic_exprs()
        inputs = self.states + self.controls
        next_states = self.next_states
        built = build_oracle(oracle, [exprs[xn] for xn in next_states], inputs,
                             {n: (quantizers[n].lower, quantizers[n].upper) for n in inputs})
        return AbstractionJob(f"{self.name}-monolithic", tuple(quantizers[n] for n in inputs),
                              tuple(quantizers[n] for n in next_states), built)


# ----------------------------------------------------------------------
# loading and validation
# ----------------------------------------------------------------------
def _require(data: Mapping, key: str, kind, pointer: str):
    if key not in data:
        raise SpecValidationError(f"missing required key {key!r}", pointer)
    value = data[key]
    if not isinstance(value, kind):
        raise SpecValidationError(f"{key!r} must be {getattr(kind, '__name__', kind)}", f"{pointer}/{key}")
    return value


def _names(values, pointer: str) -> List[str]:
    if not isinstance(values, list) or not all(isinstance(v, str) for v in values):
        raise SpecValidationError("expected a list of variable names", pointer)
    return list(values)


def _validate_quantizer(data, pointer: str, seen: set) -> Dict:
    if not isinstance(data, dict):
        raise SpecValidationError("quantizer must be an object", pointer)
    name = _require(data, 'var', str, pointer)
    if name in seen:
        raise SpecValidationError(f"variable {name} declared twice", f"{pointer}/var")
    seen.add(name)
    kind = data.get('kind', 'uniform')
    if kind == 'identity':
        values = _require(data, 'values', list, pointer)
        if not values or not all(isinstance(v, (int, float)) for v in values):
            raise SpecValidationError("identity values must be a nonempty list of numbers", f"{pointer}/values")
        if len(set(values)) != len(values):
            raise SpecValidationError("identity values must be distinct", f"{pointer}/values")
        return data
    if kind != 'uniform':
        raise SpecValidationError(f"unknown quantizer kind {kind!r}", f"{pointer}/kind")
    for key in ('lower', 'upper', 'eta'):
        _require(data, key, (int, float), pointer)
    scratch = PredicateContext('validation', backend='autoref')
    try:
        q = from_dict(scratch, data)
    except ValueError as e:
        raise SpecValidationError(str(e), pointer)
    if not check_strict(q):
        raise SpecValidationError(f"quantizer for {name} does not cover [{q.lower}, {q.upper}]", pointer)
    return data


def _validate_module(data, pointer: str, declared: set) -> ModuleSpec:
    if not isinstance(data, dict):
        raise SpecValidationError("module must be an object", pointer)
    name = _require(data, 'name', str, pointer)
    inputs = _names(_require(data, 'inputs', list, pointer), f"{pointer}/inputs")
    outputs = _names(_require(data, 'outputs', list, pointer), f"{pointer}/outputs")
    for key, names in (('inputs', inputs), ('outputs', outputs)):
        for k, v in enumerate(names):
            if v not in declared:
                raise SpecValidationError(f"undeclared variable {v}", f"{pointer}/{key}/{k}")
    if set(inputs) & set(outputs):
        raise SpecValidationError(f"{sorted(set(inputs) & set(outputs))} both input and output", pointer)
    if not outputs:
        raise SpecValidationError("module without outputs", f"{pointer}/outputs")
    source = _require(data, 'source', dict, pointer)
    if 'transitions' in source:
        path = source['transitions']
        if not isinstance(path, str):
            raise SpecValidationError("transitions must be a file path", f"{pointer}/source/transitions")
        return ModuleSpec(name, inputs, outputs, transitions=path)
    body = _require(source, 'abstracted', dict, f"{pointer}/source")
    here = f"{pointer}/source/abstracted"
    exprs = _require(body, 'exprs', list, here)
    if len(exprs) != len(outputs):
        raise SpecValidationError(f"{len(exprs)} expressions for {len(outputs)} outputs", f"{here}/exprs")
    for k, text in enumerate(exprs):
        if not isinstance(text, str):
            raise SpecValidationError("expression must be a string", f"{here}/exprs/{k}")
        try:
            parse(text, inputs)
        except (ExprSyntaxError, UnknownIdentifier, InvalidParameters) as e:
            raise SpecValidationError(str(e), f"{here}/exprs/{k}")
    oracle = body.get('oracle', 'interval')
    if oracle not in ORACLES:
        raise SpecValidationError(f"oracle must be one of {ORACLES}", f"{here}/oracle")
    L = body.get('L')
    if oracle == 'lipschitz':
        if not isinstance(L, list) or len(L) != len(outputs) or any(
                not isinstance(row, list) or len(row) != len(inputs) for row in L):
            raise SpecValidationError(f"L must be a {len(outputs)}x{len(inputs)} matrix", f"{here}/L")
        if any(not isinstance(c, (int, float)) or c < 0 for row in L for c in row):
            raise SpecValidationError("Lipschitz constants must be nonnegative numbers", f"{here}/L")
    return ModuleSpec(name, inputs, outputs, list(exprs), oracle, L)


def validate_spec(data, base_dir: str = '.') -> SystemSpec:
    """Validate a parsed spec document; raises SpecValidationError or AlgebraicLoop"""
    if not isinstance(data, dict):
        raise SpecValidationError("spec must be an object")
    seen = set()
    quantizers = [_validate_quantizer(q, f"/quantizers/{k}", seen)
                  for k, q in enumerate(_require(data, 'quantizers', list, ''))]
    kinds = {q['var']: q.get('kind', 'uniform') for q in quantizers}
    modules = [_validate_module(m, f"/modules/{k}", seen)
               for k, m in enumerate(_require(data, 'modules', list, ''))]
    if len({m.name for m in modules}) != len(modules):
        raise SpecValidationError("module names must be unique", "/modules")
    try:
        DependencyGraph(modules).order()
    except OutputClash as e:
        raise SpecValidationError(str(e), "/modules")

    outputs = {o for m in modules for o in m.outputs}
    latents = _names(data.get('latents', []), '/latents')
    for k, name in enumerate(latents):
        if name not in outputs:
            raise SpecValidationError(f"latent {name} is not a module output", f"/latents/{k}")

    control = data.get('control', {})
    if not isinstance(control, dict):
        raise SpecValidationError("control must be an object", '/control')
    pairing = control.get('pairing', {})
    if not isinstance(pairing, dict):
        raise SpecValidationError("pairing must map primed states to states", '/control/pairing')
    sizes = {q['var']: _cell_count(q) for q in quantizers}
    for primed, state in pairing.items():
        here = f"/control/pairing/{primed}"
        if primed not in outputs:
            raise SpecValidationError(f"{primed} is not a module output", here)
        if state not in seen:
            raise SpecValidationError(f"undeclared state {state}", here)
        if sizes[primed] != sizes[state]:
            raise SpecValidationError(f"dom({primed}) and dom({state}) differ in size", here)
    controls = _names(control.get('controls', []), '/control/controls')
    for k, name in enumerate(controls):
        if kinds.get(name) != 'identity':
            raise SpecValidationError(f"control {name} must use an identity quantizer", f"/control/controls/{k}")

    synthesis = data.get('synthesis')
    if synthesis is not None:
        if not isinstance(synthesis, dict) or synthesis.get('spec') not in ('safety', 'reach'):
            raise SpecValidationError("synthesis.spec must be 'safety' or 'reach'", '/synthesis')
        for name, bounds in synthesis.get('box', {}).items():
            if name not in pairing.values():
                raise SpecValidationError(f"{name} is not a state", f"/synthesis/box/{name}")
            if not isinstance(bounds, list) or len(bounds) != 2:
                raise SpecValidationError("box bounds must be [lo, hi]", f"/synthesis/box/{name}")
    return SystemSpec(str(data.get('name', 'system')), quantizers, modules, latents, dict(pairing),
                      controls, synthesis, base_dir)


def _cell_count(data: Dict) -> int:
    if data.get('kind', 'uniform') == 'identity':
        return len(data['values'])
    scratch = PredicateContext('validation', backend='autoref')
    return from_dict(scratch, data).cell_count


def load_spec(path: str) -> SystemSpec:
    """Load a JSON or YAML spec file (by suffix) and validate it"""
    with open(path) as f:
        text = f.read()
    try:
        if path.endswith(('.yaml', '.yml')):
            data = yaml.safe_load(text)
        else:
            data = json.loads(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise SpecValidationError(f"cannot parse {path}: {e}")
    spec = validate_spec(data, os.path.dirname(os.path.abspath(path)))
    logger.info(f"Loaded spec {spec.name}: {len(spec.quantizers)} variables, {len(spec.modules)} modules")
    return spec
