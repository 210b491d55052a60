"""
Quantization relations between continuous intervals and finite grid cells
Uniform eta-grids of closed infinity-norm balls, and identity relations for
variables that are already discrete
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from predicates import Predicate, PredicateContext, Variable

logger = logging.getLogger(__name__)


class OutOfDomain(ValueError):
    """Point outside the quantizer's concrete domain"""


class BadCell(ValueError):
    """Cell index outside 0 .. cell_count - 1"""


class StrictnessError(ValueError):
    """Quantizer cells do not cover the concrete domain"""


@dataclass(frozen=True)
class ContinuousDomain:
    lower: float
    upper: float

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise ValueError(f"Empty interval [{self.lower}, {self.upper}]")

    def contains(self, point: float) -> bool:
        return self.lower <= point <= self.upper


@dataclass(frozen=True)
class Quantizer:
    """
    Relation between concrete variable `var` and grid variable `abstract_var`

    uniform: cell c is the closed ball of diameter eta around anchor + c*eta,
             intersected with [lower, upper]
    identity: the concrete variable already takes the abstract labels
    """
    var: str
    kind: str
    abstract_var: Variable
    domain: Optional[ContinuousDomain] = None
    eta: float = 0.0
    anchor: float = 0.0

    def __post_init__(self):
        if self.kind not in ('uniform', 'identity'):
            raise ValueError(f"Unknown quantizer kind {self.kind}")
        if self.kind == 'uniform':
            if self.domain is None:
                raise ValueError(f"Uniform quantizer for {self.var} needs a concrete domain")
            if not self.eta > 0:
                raise ValueError(f"eta must be positive, got {self.eta}")
        elif self.abstract_var.labels is not None:
            labels = list(self.abstract_var.labels)
            if labels != sorted(labels):
                raise ValueError(f"Identity labels of {self.var} must be sorted ascending")

    @property
    def cell_count(self) -> int:
        return self.abstract_var.domain_size

    @property
    def values(self) -> Tuple:
        """Discrete values of an identity quantizer"""
        labels = self.abstract_var.labels
        return tuple(labels) if labels is not None else tuple(range(self.cell_count))

    @property
    def lower(self) -> float:
        if self.kind == 'identity':
            return float(min(self.values))
        return self.domain.lower

    @property
    def upper(self) -> float:
        if self.kind == 'identity':
            return float(max(self.values))
        return self.domain.upper

    # cell c spans anchor + (c - 1/2) eta .. anchor + (c + 1/2) eta, so neighbours
    # share bit-identical boundaries
    def _cell_lower(self, c):
        return self.anchor + (c - 0.5) * self.eta

    def _cell_upper(self, c):
        return self.anchor + (c + 0.5) * self.eta

    def center(self, cell: int) -> float:
        if self.kind == 'identity':
            return float(self.values[cell])
        return self.anchor + cell * self.eta

    def bounds(self, cells) -> Tuple[np.ndarray, np.ndarray]:
        """Vectorized concretize; cells must be valid indices"""
        cells = np.asarray(cells)
        if self.kind == 'identity':
            values = np.asarray(self.values, dtype=float)[cells]
            return values, values
        lo = np.maximum(self._cell_lower(cells), self.domain.lower)
        hi = np.minimum(self._cell_upper(cells), self.domain.upper)
        return lo, hi

    def cell_range(self, lo, hi) -> Tuple[np.ndarray, np.ndarray]:
        """
        First and last cell meeting the closed interval [lo, hi] (vectorized)

        Returns index arrays; an empty intersection shows up as first > last.
        """
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if self.kind == 'identity':
            values = np.asarray(self.values, dtype=float)
            first = np.searchsorted(values, lo, side='left')
            last = np.searchsorted(values, hi, side='right') - 1
            return first.astype(np.int64), last.astype(np.int64)
        first = np.ceil((lo - self.anchor) / self.eta - 0.5).astype(np.int64)
        first = np.where(self._cell_upper(first - 1) >= lo, first - 1, first)
        first = np.where(self._cell_upper(first) < lo, first + 1, first)
        last = np.floor((hi - self.anchor) / self.eta + 0.5).astype(np.int64)
        last = np.where(self._cell_lower(last + 1) <= hi, last + 1, last)
        last = np.where(self._cell_lower(last) > hi, last - 1, last)
        first = np.maximum(first, 0)
        last = np.minimum(last, self.cell_count - 1)
        return first, last

    def to_dict(self) -> Dict:
        if self.kind == 'identity':
            return {'var': self.var, 'kind': 'identity', 'values': list(self.values)}
        return {
            'var': self.var,
            'kind': 'uniform',
            'lower': self.domain.lower,
            'upper': self.domain.upper,
            'eta': self.eta,
            'anchor': self.anchor,
            'cells': self.cell_count,
        }


@dataclass(frozen=True)
class CompositeQuantizer:
    """Component-wise product of quantizers (one per member variable)"""
    components: Tuple[Quantizer, ...]

    @property
    def var(self) -> str:
        return '(' + ','.join(q.var for q in self.components) + ')'


def uniform(ctx: PredicateContext, var: str, lower: float, upper: float, eta: float,
            anchor: float = None, cells: int = None, abstract_name: str = None,
            related_to: str = None) -> Quantizer:
    """
    Declare the grid variable for `var` and return its uniform quantizer

    Args:
        anchor: center of cell 0 (default lower + eta/2)
        cells: number of cells (default: fewest cells reaching `upper`)
        abstract_name: name of the grid variable (default: same as `var`)
        related_to: variable whose bits the grid bits interleave with
    """
    if anchor is None:
        anchor = lower + eta / 2
    if cells is None:
        cells = max(1, math.ceil((upper - anchor) / eta + 0.5 - 1e-12))
    abstract_var = ctx.declare(abstract_name or var, cells, related_to=related_to)
    return Quantizer(var, 'uniform', abstract_var, ContinuousDomain(lower, upper), eta, anchor)


def identity(ctx: PredicateContext, var: str, values: Sequence = None, size: int = None,
             abstract_name: str = None, related_to: str = None) -> Quantizer:
    """Declare a discrete variable and return its identity quantizer"""
    if values is not None:
        values = tuple(sorted(values))
        size = len(values)
    if size is None:
        raise ValueError(f"Identity quantizer for {var} needs values or a size")
    abstract_var = ctx.declare(abstract_name or var, size, labels=values, related_to=related_to)
    return Quantizer(var, 'identity', abstract_var)


def from_dict(ctx: PredicateContext, data: Dict, related_to: str = None) -> Quantizer:
    """
    Build a quantizer from its JSON form, cross-checking `cells` against the
    derived layout (lower, upper, eta, anchor)
    """
    name = data['var']
    kind = data.get('kind', 'uniform')
    if kind == 'identity':
        return identity(ctx, name, values=data['values'], related_to=related_to)
    if kind != 'uniform':
        raise ValueError(f"Unknown quantizer kind {kind!r} for {name}")
    lower, upper, eta = float(data['lower']), float(data['upper']), float(data['eta'])
    if not eta > 0:
        raise ValueError(f"eta must be positive for {name}")
    if not lower <= upper:
        raise ValueError(f"Empty interval [{lower}, {upper}] for {name}")
    anchor = float(data.get('anchor', lower + eta / 2))
    derived = max(1, math.ceil((upper - anchor) / eta + 0.5 - 1e-12))
    cells = int(data.get('cells', derived))
    if cells != derived:
        raise ValueError(f"{name}: {cells} cells declared but eta={eta}, anchor={anchor} "
                         f"over [{lower}, {upper}] needs {derived}")
    return uniform(ctx, name, lower, upper, eta, anchor, cells, related_to=related_to)


def quantize(q: Quantizer, point: float) -> Set[int]:
    """All cells whose concretization contains `point`"""
    if q.kind == 'identity':
        try:
            return {q.values.index(point)}
        except ValueError:
            raise OutOfDomain(f"{point} is not a value of {q.var}")
    if not q.domain.contains(point):
        raise OutOfDomain(f"{point} outside dom({q.var}) = [{q.domain.lower}, {q.domain.upper}]")
    first, last = q.cell_range(point, point)
    return set(range(int(first), int(last) + 1))


def concretize(q: Quantizer, cell: int) -> Tuple[float, float]:
    """Closed interval of concrete values related to `cell`"""
    if not 0 <= cell < q.cell_count:
        raise BadCell(f"Cell {cell} outside 0..{q.cell_count - 1} for {q.var}")
    if q.kind == 'identity':
        value = q.values[cell]
        return value, value
    lo = max(q._cell_lower(cell), q.domain.lower)
    hi = min(q._cell_upper(cell), q.domain.upper)
    return lo, hi


def check_strict(q) -> bool:
    """True iff the cells cover the whole concrete domain"""
    if isinstance(q, CompositeQuantizer):
        return all(check_strict(c) for c in q.components)
    if q.kind == 'identity':
        return True
    return q._cell_lower(0) <= q.domain.lower and q._cell_upper(q.cell_count - 1) >= q.domain.upper


def require_strict(quantizers) -> None:
    for q in quantizers:
        if not check_strict(q):
            raise StrictnessError(f"Quantizer for {q.var} does not cover its domain")


def relation_predicate(ctx: PredicateContext, q, samples, sample_var=None) -> Predicate:
    """
    Finite restriction of the quantization relation to listed concrete samples

    The result relates a sample-index variable (declared next to the abstract
    variable unless given) to the grid variable. A CompositeQuantizer takes a
    list of sample lists and a list of sample variables and returns the
    conjunction of its components.
    """
    if isinstance(q, CompositeQuantizer):
        sample_vars = sample_var or [None] * len(q.components)
        return ctx.conj_all(relation_predicate(ctx, c, s, v)
                            for c, s, v in zip(q.components, samples, sample_vars))
    samples = np.asarray(list(samples), dtype=float)
    if q.kind == 'identity':
        known = set(float(v) for v in q.values)
        bad = [s for s in samples if s not in known]
    else:
        bad = [s for s in samples if not q.domain.contains(s)]
    if bad:
        raise OutOfDomain(f"Samples {bad[:5]} outside dom({q.var})")
    if sample_var is None:
        sample_var = ctx.declare(f"{q.var}~s", len(samples), related_to=q.abstract_var.name)
    sample_var = ctx.variable(sample_var)
    if sample_var.domain_size != len(samples):
        raise ValueError(f"{sample_var.name} has {sample_var.domain_size} values for {len(samples)} samples")
    first, last = q.cell_range(samples, samples)
    cells = np.arange(q.cell_count)
    mask = (cells[None, :] >= first[:, None]) & (cells[None, :] <= last[:, None])
    return ctx.from_mask([sample_var, q.abstract_var], mask)


def grid_points(q: Quantizer, resolution: int) -> np.ndarray:
    """Dense samples over the concrete domain, `resolution` points per eta"""
    if q.kind == 'identity':
        return np.asarray(q.values, dtype=float)
    step = q.eta / resolution
    count = int(math.floor((q.domain.upper - q.domain.lower) / step + 1e-9)) + 1
    points = q.domain.lower + step * np.arange(count)
    if points[-1] < q.domain.upper:
        points = np.append(points, q.domain.upper)
    return np.minimum(points, q.domain.upper)
