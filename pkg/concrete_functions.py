"""
Concrete Functions
Expression language for concrete module right-hand sides, point evaluation
with an explicit Undefined result, and box overapproximation oracles
(Lipschitz, monotone, natural interval extension)
"""
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from lark import Lark, Transformer
from lark.exceptions import UnexpectedInput, VisitError

from config import Config

logger = logging.getLogger(__name__)


class ExprSyntaxError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        self.line = line
        self.column = column
        super().__init__(f"{message} at line {line}, column {column}")


class UnknownIdentifier(ValueError):
    """Reference to an undeclared variable or function"""


class InvalidParameters(ValueError):
    """Bad primitive parameters (arity, glog a >= b, rate <= 0, ...)"""


class UnboundVariable(ValueError):
    """Evaluation without a value for a referenced variable"""


class UndefinedOnBox(ValueError):
    """Oracle cannot bound the image because the function is undefined on the box"""


class NotMonotone(ValueError):
    """Sampled ordered pair violates the declared monotonicity"""


class _Undefined:
    """Result of evaluating a function outside its domain of definition"""
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __bool__(self):
        return False

    def __repr__(self):
        return 'Undefined'


UNDEFINED = _Undefined()


# ----------------------------------------------------------------------
# expression trees
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Ref:
    name: str


@dataclass(frozen=True)
class BinOp:
    op: str
    left: 'Expr'
    right: 'Expr'


@dataclass(frozen=True)
class Neg:
    operand: 'Expr'


@dataclass(frozen=True)
class Call:
    fn: str
    args: Tuple['Expr', ...]


Expr = Union[Const, Ref, BinOp, Neg, Call]

# name -> (arity, number of leading constant parameters); arity -1 means two or more
FUNCTIONS = {
    'sqrt': (1, 0),
    'exp': (1, 0),
    'abs': (1, 0),
    'min': (-1, 0),
    'max': (-1, 0),
    'glog': (4, 3),
    'gain': (2, 1),
}

GRAMMAR = r"""
?start: expr

?expr: term
     | expr "+" term        -> add
     | expr "-" term        -> sub

?term: factor
     | term "*" factor      -> mul
     | term "/" factor      -> div

?factor: atom
       | "-" factor         -> neg
       | "+" factor

?atom: NUMBER               -> number
     | NAME "(" args ")"    -> call
     | NAME                 -> ref
     | "(" expr ")"

args: expr ("," expr)*

NAME: /[A-Za-z_][A-Za-z0-9_']*/

%import common.NUMBER
%import common.WS
%ignore WS
"""

_parser = Lark(GRAMMAR, parser='lalr', propagate_positions=True)


class _TreeBuilder(Transformer):
    def number(self, items):
        return Const(float(items[0]))

    def ref(self, items):
        return Ref(str(items[0]))

    def add(self, items):
        return BinOp('+', items[0], items[1])

    def sub(self, items):
        return BinOp('-', items[0], items[1])

    def mul(self, items):
        return BinOp('*', items[0], items[1])

    def div(self, items):
        return BinOp('/', items[0], items[1])

    def neg(self, items):
        operand = items[0]
        if isinstance(operand, Const):
            return Const(-operand.value)
        return Neg(operand)

    def args(self, items):
        return tuple(items)

    def call(self, items):
        name, args = str(items[0]), items[1]
        _check_call(name, args)
        return Call(name, args)


def _check_call(name: str, args: Tuple[Expr, ...]):
    if name not in FUNCTIONS:
        raise UnknownIdentifier(f"Unknown function {name}")
    arity, constants = FUNCTIONS[name]
    if arity == -1 and len(args) < 2:
        raise InvalidParameters(f"{name} needs at least two arguments")
    if arity > 0 and len(args) != arity:
        raise InvalidParameters(f"{name} takes {arity} arguments, got {len(args)}")
    for a in args[:constants]:
        if not isinstance(a, Const):
            raise InvalidParameters(f"Parameters of {name} must be numeric constants")
    if name == 'glog':
        lo, hi, rate = (a.value for a in args[:3])
        if not lo < hi:
            raise InvalidParameters(f"glog needs a < b, got a={lo}, b={hi}")
        if not rate > 0:
            raise InvalidParameters(f"glog needs rate > 0, got {rate}")


def parse(text: str, variables: Iterable[str] = None) -> Expr:
    """
    Parse an expression

    Args:
        text: infix arithmetic with calls to sqrt, exp, abs, min, max,
              glog(a, b, rate, e) and gain(k, e)
        variables: if given, every referenced name must be in it
    """
    try:
        expr = _TreeBuilder().transform(_parser.parse(text))
    except UnexpectedInput as e:
        line, column = getattr(e, 'line', -1), getattr(e, 'column', -1)
        if line is None or line < 1:
            lines = text.splitlines() or ['']
            line, column = len(lines), len(lines[-1]) + 1
        raise ExprSyntaxError(f"Cannot parse {text!r}", line, column)
    except VisitError as e:
        raise e.orig_exc
    if variables is not None:
        unknown = set(free_variables(expr)) - set(variables)
        if unknown:
            raise UnknownIdentifier(f"Unknown identifiers {sorted(unknown)} in {text!r}")
    return expr


def free_variables(expr: Expr) -> List[str]:
    """Referenced variable names, sorted"""
    names = set()

    def walk(e):
        if isinstance(e, Ref):
            names.add(e.name)
        elif isinstance(e, BinOp):
            walk(e.left)
            walk(e.right)
        elif isinstance(e, Neg):
            walk(e.operand)
        elif isinstance(e, Call):
            for a in e.args:
                walk(a)

    walk(expr)
    return sorted(names)


def op_count(expr: Expr) -> int:
    if isinstance(expr, BinOp):
        return 1 + op_count(expr.left) + op_count(expr.right)
    if isinstance(expr, Neg):
        return 1 + op_count(expr.operand)
    if isinstance(expr, Call):
        return 1 + sum(op_count(a) for a in expr.args)
    return 0


def substitute(expr: Expr, mapping: Mapping[str, Expr]) -> Expr:
    """Replace variable references by expressions"""
    if isinstance(expr, Ref):
        return mapping.get(expr.name, expr)
    if isinstance(expr, BinOp):
        return BinOp(expr.op, substitute(expr.left, mapping), substitute(expr.right, mapping))
    if isinstance(expr, Neg):
        return Neg(substitute(expr.operand, mapping))
    if isinstance(expr, Call):
        return Call(expr.fn, tuple(substitute(a, mapping) for a in expr.args))
    return expr


_PRECEDENCE = {'+': 1, '-': 1, '*': 2, '/': 2}


def _precedence(expr: Expr) -> int:
    if isinstance(expr, BinOp):
        return _PRECEDENCE[expr.op]
    if isinstance(expr, Neg) or (isinstance(expr, Const) and expr.value < 0):
        return 3
    return 4


def to_text(expr: Expr) -> str:
    """Print an expression so that it parses back to an equal tree"""
    if isinstance(expr, Const):
        return repr(float(expr.value))
    if isinstance(expr, Ref):
        return expr.name
    if isinstance(expr, Neg):
        inner = to_text(expr.operand)
        return f"-({inner})" if _precedence(expr.operand) < 3 else f"-{inner}"
    if isinstance(expr, Call):
        return f"{expr.fn}({', '.join(to_text(a) for a in expr.args)})"
    p = _PRECEDENCE[expr.op]
    left, right = to_text(expr.left), to_text(expr.right)
    if _precedence(expr.left) < p:
        left = f"({left})"
    if _precedence(expr.right) <= p:
        right = f"({right})"
    return f"{left} {expr.op} {right}"


# ----------------------------------------------------------------------
# point evaluation (NaN marks undefined internally)
# ----------------------------------------------------------------------
def _glog(lo: float, hi: float, rate: float, x):
    return lo + (hi - lo) / (1.0 + np.exp(-rate * (x - (lo + hi) / 2.0)))


def evaluate_array(expr: Expr, env: Mapping[str, np.ndarray]) -> np.ndarray:
    """Vectorized evaluation; undefined entries come back as NaN"""
    with np.errstate(invalid='ignore', divide='ignore', over='ignore'):
        return np.asarray(_point(expr, env), dtype=float)


def _point(expr: Expr, env):
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, Ref):
        try:
            return np.asarray(env[expr.name], dtype=float)
        except KeyError:
            raise UnboundVariable(f"No value for {expr.name}")
    if isinstance(expr, Neg):
        return -_point(expr.operand, env)
    if isinstance(expr, BinOp):
        a, b = _point(expr.left, env), _point(expr.right, env)
        if expr.op == '+':
            return a + b
        if expr.op == '-':
            return a - b
        if expr.op == '*':
            return a * b
        b = np.asarray(b, dtype=float)
        return np.where(b == 0, np.nan, a / np.where(b == 0, 1.0, b))
    fn = expr.fn
    if fn == 'glog':
        lo, hi, rate = (a.value for a in expr.args[:3])
        return _glog(lo, hi, rate, _point(expr.args[3], env))
    if fn == 'gain':
        return expr.args[0].value * _point(expr.args[1], env)
    values = [np.asarray(_point(a, env), dtype=float) for a in expr.args]
    if fn == 'sqrt':
        x = values[0]
        return np.where(x < 0, np.nan, np.sqrt(np.abs(x)))
    if fn == 'exp':
        return np.exp(values[0])
    if fn == 'abs':
        return np.abs(values[0])
    if fn == 'min':
        return np.minimum.reduce(np.broadcast_arrays(*values))
    return np.maximum.reduce(np.broadcast_arrays(*values))


def evaluate(expr: Expr, assignment: Mapping[str, float]):
    """Evaluate at one point: a float, or UNDEFINED outside the domain of definition"""
    value = float(evaluate_array(expr, assignment))
    if np.isnan(value) or np.isinf(value):
        return UNDEFINED
    return value


# ----------------------------------------------------------------------
# natural interval extension
# ----------------------------------------------------------------------
def interval_array(expr: Expr, boxes: Mapping[str, Tuple[np.ndarray, np.ndarray]]):
    """
    Interval image of `expr` over boxes given as name -> (lo, hi) arrays

    Entries where the function may be undefined somewhere in the box are NaN.
    """
    with np.errstate(invalid='ignore', divide='ignore', over='ignore'):
        lo, hi = _interval(expr, boxes)
        return np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)


def _interval(expr: Expr, boxes):
    if isinstance(expr, Const):
        return expr.value, expr.value
    if isinstance(expr, Ref):
        try:
            lo, hi = boxes[expr.name]
        except KeyError:
            raise UnboundVariable(f"No interval for {expr.name}")
        return np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    if isinstance(expr, Neg):
        lo, hi = _interval(expr.operand, boxes)
        return -hi, -lo
    if isinstance(expr, BinOp):
        (al, ah), (bl, bh) = _interval(expr.left, boxes), _interval(expr.right, boxes)
        if expr.op == '+':
            return al + bl, ah + bh
        if expr.op == '-':
            return al - bh, ah - bl
        if expr.op == '/':
            bl, bh = np.asarray(bl, dtype=float), np.asarray(bh, dtype=float)
            bad = (bl <= 0) & (bh >= 0)
            bl = np.where(bad, np.nan, bl)
            bh = np.where(bad, np.nan, bh)
            bl, bh = 1.0 / bh, 1.0 / bl
        corners = np.broadcast_arrays(al * bl, al * bh, ah * bl, ah * bh)
        return np.minimum.reduce(corners), np.maximum.reduce(corners)
    fn = expr.fn
    if fn == 'glog':
        a, b, rate = (p.value for p in expr.args[:3])
        lo, hi = _interval(expr.args[3], boxes)
        return _glog(a, b, rate, lo), _glog(a, b, rate, hi)
    if fn == 'gain':
        k = expr.args[0].value
        lo, hi = _interval(expr.args[1], boxes)
        return (k * lo, k * hi) if k >= 0 else (k * hi, k * lo)
    parts = [_interval(a, boxes) for a in expr.args]
    if fn == 'sqrt':
        lo, hi = (np.asarray(v, dtype=float) for v in parts[0])
        bad = lo < 0
        return np.where(bad, np.nan, np.sqrt(np.abs(lo))), np.where(bad, np.nan, np.sqrt(np.abs(hi)))
    if fn == 'exp':
        return np.exp(parts[0][0]), np.exp(parts[0][1])
    if fn == 'abs':
        lo, hi = (np.asarray(v, dtype=float) for v in parts[0])
        low = np.where(lo >= 0, lo, np.where(hi <= 0, -hi, 0.0))
        return low, np.maximum(np.abs(lo), np.abs(hi))
    lows = np.broadcast_arrays(*[p[0] for p in parts])
    highs = np.broadcast_arrays(*[p[1] for p in parts])
    if fn == 'min':
        return np.minimum.reduce(lows), np.minimum.reduce(highs)
    return np.maximum.reduce(lows), np.maximum.reduce(highs)


# ----------------------------------------------------------------------
# oracles
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class Oracle:
    """
    Box-to-box overapproximation of an expression vector

    kind: lipschitz (L[out][in] >= 0), monotone (nondecreasing in every
          input) or interval (natural interval extension)
    """
    kind: str
    exprs: Tuple[Expr, ...]
    inputs: Tuple[str, ...]
    L: Optional[Tuple[Tuple[float, ...], ...]] = None

    @property
    def ops(self) -> int:
        return max((op_count(e) for e in self.exprs), default=0)

    def boxes(self, lo: np.ndarray, hi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Vectorized oracle

        Args:
            lo, hi: arrays of shape (boxes, inputs)

        Returns:
            (lo, hi) arrays of shape (boxes, outputs); rows with NaN are undefined
        """
        lo = np.atleast_2d(np.asarray(lo, dtype=float))
        hi = np.atleast_2d(np.asarray(hi, dtype=float))
        env = {name: (lo[:, k], hi[:, k]) for k, name in enumerate(self.inputs)}
        out_lo = np.empty((lo.shape[0], len(self.exprs)))
        out_hi = np.empty_like(out_lo)
        for j, expr in enumerate(self.exprs):
            ilo, ihi = interval_array(expr, env)
            if self.kind == 'interval':
                out_lo[:, j], out_hi[:, j] = ilo, ihi
                continue
            # partiality anywhere in the box makes the whole box undefined
            undefined = np.isnan(ilo) | np.isnan(ihi)
            if self.kind == 'monotone':
                flo = evaluate_array(expr, {n: lo[:, k] for k, n in enumerate(self.inputs)})
                fhi = evaluate_array(expr, {n: hi[:, k] for k, n in enumerate(self.inputs)})
            else:
                center = (lo + hi) / 2.0
                radius = (hi - lo) / 2.0
                fc = evaluate_array(expr, {n: center[:, k] for k, n in enumerate(self.inputs)})
                spread = radius @ np.asarray(self.L[j], dtype=float)
                flo, fhi = fc - spread, fc + spread
            out_lo[:, j] = np.where(undefined, np.nan, flo)
            out_hi[:, j] = np.where(undefined, np.nan, fhi)
        bad = np.isnan(out_lo).any(axis=1) | np.isnan(out_hi).any(axis=1)
        out_lo[bad] = np.nan
        out_hi[bad] = np.nan
        return out_lo, out_hi

    def to_dict(self) -> Dict:
        data = {'kind': self.kind, 'inputs': list(self.inputs), 'exprs': [to_text(e) for e in self.exprs]}
        if self.L is not None:
            data['L'] = [list(row) for row in self.L]
        return data


def _box_arrays(oracle: Oracle, box: Sequence[Tuple[float, float]]):
    if len(box) != len(oracle.inputs):
        raise ValueError(f"Box has {len(box)} intervals for {len(oracle.inputs)} inputs")
    lo = np.array([[float(a) for a, _ in box]])
    hi = np.array([[float(b) for _, b in box]])
    if (lo > hi).any():
        raise ValueError(f"Empty box {box}")
    return lo, hi


def _single(oracle: Oracle, box) -> List[Tuple[float, float]]:
    lo, hi = oracle.boxes(*_box_arrays(oracle, box))
    if np.isnan(lo).any():
        raise UndefinedOnBox(f"{[to_text(e) for e in oracle.exprs]} undefined on {list(box)}")
    return [(float(a), float(b)) for a, b in zip(lo[0], hi[0])]


def lipschitz_box(oracle: Oracle, box: Sequence[Tuple[float, float]]) -> List[Tuple[float, float]]:
    """[F(c) - L r, F(c) + L r] with c the box center and r its radius"""
    if oracle.kind != 'lipschitz':
        oracle = Oracle('lipschitz', oracle.exprs, oracle.inputs, oracle.L)
    return _single(oracle, box)


def monotone_box(oracle: Oracle, box: Sequence[Tuple[float, float]], validate: bool = True,
                 samples: int = None, seed: int = None) -> List[Tuple[float, float]]:
    """[F(a), F(b)] for F nondecreasing in every input"""
    if validate:
        domains = dict(zip(oracle.inputs, box))
        check_monotone(oracle.exprs, oracle.inputs, domains, samples, seed)
    return _single(Oracle('monotone', oracle.exprs, oracle.inputs), box)


def interval_box(oracle: Oracle, box: Sequence[Tuple[float, float]]) -> List[Tuple[float, float]]:
    return _single(Oracle('interval', oracle.exprs, oracle.inputs), box)


def check_monotone(exprs: Sequence[Expr], inputs: Sequence[str],
                   domains: Mapping[str, Tuple[float, float]],
                   samples: int = None, seed: int = None) -> None:
    """
    Randomized directional test of componentwise monotonicity

    Draws ordered pairs a <= b (componentwise) inside the domains and
    raises NotMonotone on the first output with F(a) > F(b).
    """
    samples = samples or Config.MONOTONE_SAMPLES
    rng = np.random.default_rng(Config.ORACLE_SEED if seed is None else seed)
    bounds = np.array([domains[name] for name in inputs], dtype=float).reshape(len(inputs), 2)
    p = rng.uniform(bounds[:, 0], bounds[:, 1], size=(samples, len(inputs)))
    q = rng.uniform(bounds[:, 0], bounds[:, 1], size=(samples, len(inputs)))
    a = np.vstack([np.minimum(p, q), bounds[:, 0]])
    b = np.vstack([np.maximum(p, q), bounds[:, 1]])
    for expr in exprs:
        fa = evaluate_array(expr, {n: a[:, k] for k, n in enumerate(inputs)})
        fb = evaluate_array(expr, {n: b[:, k] for k, n in enumerate(inputs)})
        fa, fb = np.broadcast_arrays(fa, fb)
        defined = ~(np.isnan(fa) | np.isnan(fb))
        violated = defined & (fa > fb + 1e-12 * np.maximum(1.0, np.abs(fb)))
        if violated.any():
            k = int(np.argmax(violated))
            raise NotMonotone(f"{to_text(expr)} decreases from {dict(zip(inputs, a[k]))} "
                              f"to {dict(zip(inputs, b[k]))}")


def build_oracle(kind: str, exprs: Sequence[Union[Expr, str]], inputs: Sequence[str],
                 domains: Mapping[str, Tuple[float, float]] = None,
                 L: Sequence[Sequence[float]] = None) -> Oracle:
    """
    Build and validate an oracle

    A monotone declaration that fails validation over `domains` is
    downgraded to the interval oracle with a warning.
    """
    inputs = tuple(inputs)
    exprs = tuple(parse(e, inputs) if isinstance(e, str) else e for e in exprs)
    for e in exprs:
        unknown = set(free_variables(e)) - set(inputs)
        if unknown:
            raise UnknownIdentifier(f"Unknown identifiers {sorted(unknown)} in {to_text(e)}")
    if kind == 'lipschitz':
        if L is None:
            raise InvalidParameters("Lipschitz oracle needs a matrix L")
        matrix = np.asarray(L, dtype=float)
        if matrix.shape != (len(exprs), len(inputs)):
            raise InvalidParameters(f"L has shape {matrix.shape}, expected {(len(exprs), len(inputs))}")
        if (matrix < 0).any():
            raise InvalidParameters("Lipschitz constants must be nonnegative")
        return Oracle(kind, exprs, inputs, tuple(tuple(row) for row in matrix))
    if kind == 'monotone':
        if domains is not None:
            try:
                check_monotone(exprs, inputs, domains)
            except NotMonotone as e:
                logger.warning(f"Monotone oracle rejected, using interval instead: {e}")
                return Oracle('interval', exprs, inputs)
        return Oracle(kind, exprs, inputs)
    if kind == 'interval':
        return Oracle(kind, exprs, inputs)
    raise ValueError(f"Unknown oracle kind {kind}")
