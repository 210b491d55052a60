"""
Predicate engine over finite, bit-encoded variables
Canonical boolean functions backed by a reduced ordered BDD store
(dd.cudd when it is built, dd.autoref otherwise)
"""
import hashlib
import itertools
import json
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from config import Config

logger = logging.getLogger(__name__)

try:
    from dd import cudd as _cudd
    CUDD_AVAILABLE = True
except ImportError:
    CUDD_AVAILABLE = False
    logger.debug("dd.cudd not built, using dd.autoref")

from dd import autoref as _autoref


class NameClash(ValueError):
    """Variable name already declared in this context"""


class InvalidBundle(ValueError):
    """Composite variable with overlapping members"""


class ContextMismatch(ValueError):
    """Operands belong to different predicate contexts"""


class TypeMismatch(ValueError):
    """Variables paired together have different domain sizes"""


class SupportError(ValueError):
    """Predicate depends on variables outside the requested set"""


class FormatError(ValueError):
    """Malformed or truncated predicate dump"""


class MemoryBudgetExceeded(RuntimeError):
    """Diagram store grew past DD_MEMORY_MB"""


@dataclass(frozen=True)
class Variable:
    """
    Finite variable with values 0 .. domain_size - 1

    Composite variables carry their members; the value index of a composite
    is mixed radix over the members, first member most significant.
    """
    name: str
    domain_size: int
    bit_width: int
    members: Tuple['Variable', ...] = ()
    labels: Optional[Tuple] = None

    @property
    def kind(self) -> str:
        return 'composite' if self.members else 'atomic'

    def atoms(self) -> Tuple['Variable', ...]:
        if not self.members:
            return (self,)
        return tuple(a for m in self.members for a in m.atoms())

    def label_of(self, index: int):
        if self.labels is None:
            return index
        return self.labels[index]

    def index_of(self, label) -> int:
        if self.labels is None:
            index = int(label)
            if not 0 <= index < self.domain_size:
                raise ValueError(f"{label} is not a value of {self.name}")
            return index
        try:
            return self.labels.index(label)
        except ValueError:
            raise ValueError(f"{label} is not a value of {self.name}")

    def split(self, index: int) -> Dict[str, int]:
        """Value index of this variable -> value index per atom"""
        if not 0 <= index < self.domain_size:
            raise ValueError(f"value {index} outside dom({self.name}) of size {self.domain_size}")
        if not self.members:
            return {self.name: index}
        values = {}
        for member in reversed(self.members):
            index, rest = divmod(index, member.domain_size)
            values.update(member.split(rest))
        return values

    def __repr__(self):
        return f"Variable({self.name}, {self.domain_size})"


VarLike = Union[Variable, str]


def _width(domain_size: int) -> int:
    return (domain_size - 1).bit_length()


class Predicate:
    """Handle into a context's diagram store plus the variables it may depend on"""

    __slots__ = ('context', 'node', 'support')

    def __init__(self, context: 'PredicateContext', node, support: Iterable[str]):
        self.context = context
        self.node = node
        self.support = frozenset(support)

    def __and__(self, other: 'Predicate') -> 'Predicate':
        return self.context.conj(self, other)

    def __or__(self, other: 'Predicate') -> 'Predicate':
        return self.context.disj(self, other)

    def __invert__(self) -> 'Predicate':
        return self.context.neg(self)

    def implies(self, other: 'Predicate') -> 'Predicate':
        return self.context.implies(self, other)

    def __repr__(self):
        names = ', '.join(sorted(self.support))
        return f"Predicate({{{names}}}, nodes={self.context.node_count(self)})"


class PredicateContext:
    """
    Variables, bit ordering and the shared diagram store

    One context is used from one thread at a time. Independent contexts
    exchange predicates through the dump formats at the bottom of this module.
    """

    def __init__(self, name: str = 'default', backend: str = None):
        self.name = name
        backend = (backend or Config.DD_BACKEND).lower()
        if backend == 'cudd' and not CUDD_AVAILABLE:
            raise ImportError("dd.cudd not available. Install dd with the CUDD extension")
        if backend == 'cudd' or (backend == 'auto' and CUDD_AVAILABLE):
            self._dd = _cudd
            self.bdd = _cudd.BDD(memory_estimate=int(Config.DD_MEMORY_MB * 2 ** 20))
            self.backend = 'cudd'
        else:
            self._dd = _autoref
            self.bdd = _autoref.BDD()
            self.backend = 'autoref'
        self.bdd.configure(reordering=False)
        self.variables: Dict[str, Variable] = {}
        self._bits: Dict[str, Tuple[str, ...]] = {}
        self._order: List[str] = []
        self._domain_nodes: Dict[str, object] = {}
        self._range_nodes: Dict[Tuple[str, int, int], object] = {}

    # ------------------------------------------------------------------
    # variables
    # ------------------------------------------------------------------
    def declare(self, name: str, domain_size: int, labels: Sequence = None,
                related_to: VarLike = None) -> Variable:
        """
        Declare a variable with `domain_size` values

        Args:
            name: unique identifier in this context
            domain_size: number of abstract values
            labels: optional concrete values the indices stand for
            related_to: variable whose bits are interleaved with the new ones
                        (x with x', w with its abstract counterpart)
        """
        if name in self.variables:
            raise NameClash(f"Variable {name} already declared in context {self.name}")
        if domain_size < 1:
            raise ValueError(f"Domain of {name} must have at least one value")
        if labels is not None:
            labels = tuple(labels)
            if len(labels) != domain_size:
                raise ValueError(f"{name}: {len(labels)} labels for {domain_size} values")
            if len(set(labels)) != len(labels):
                raise ValueError(f"{name}: labels must be distinct")
        width = _width(domain_size)
        var = Variable(name, domain_size, width, labels=labels)
        bits = tuple(f"{name}#{k}" for k in reversed(range(width)))
        if bits:
            self.bdd.declare(*bits)
        self.variables[name] = var
        self._bits[name] = bits

        anchor = self.variable(related_to) if related_to is not None else None
        if anchor is not None and anchor.members:
            raise ValueError("Bits can only be interleaved with an atomic variable")
        if anchor is None or not bits or not self._bits[anchor.name]:
            self._order.extend(bits)
        else:
            self._interleave(self._bits[anchor.name], bits)
        logger.debug(f"Declared {name} with {domain_size} values ({width} bits)")
        return var

    def _interleave(self, anchor_bits: Tuple[str, ...], bits: Tuple[str, ...]):
        order = []
        placed = 0
        for bit in self._order:
            order.append(bit)
            if bit in anchor_bits:
                position = anchor_bits.index(bit)
                if position < len(bits):
                    order.append(bits[position])
                    placed += 1
                if position == len(anchor_bits) - 1:
                    order.extend(bits[placed:])
                    placed = len(bits)
        self._order = order
        self._dd.reorder(self.bdd, {bit: level for level, bit in enumerate(order)})

    def variable(self, var: VarLike) -> Variable:
        if isinstance(var, Variable):
            for atom in var.atoms():
                if self.variables.get(atom.name) != atom:
                    raise ContextMismatch(f"{atom.name} is not declared in context {self.name}")
            return var
        try:
            return self.variables[var]
        except KeyError:
            raise ContextMismatch(f"{var} is not declared in context {self.name}")

    def bundle(self, variables: Sequence[VarLike]) -> Variable:
        """Composite variable whose domain is the product of its members"""
        members = tuple(self.variable(v) for v in variables)
        if not members:
            raise InvalidBundle("Cannot bundle an empty list of variables")
        names = [a.name for m in members for a in m.atoms()]
        if len(names) != len(set(names)):
            raise InvalidBundle(f"Overlapping members in bundle {names}")
        if len(members) == 1:
            return members[0]
        size = 1
        for m in members:
            size *= m.domain_size
        width = sum(m.bit_width for m in members)
        return Variable('(' + ','.join(m.name for m in members) + ')', size, width, members=members)

    def atoms(self, variables: Iterable[VarLike]) -> List[Variable]:
        """Atomic variables behind `variables`, in the given order"""
        if isinstance(variables, (Variable, str)):
            variables = [variables]
        seen = set()
        result = []
        for v in variables:
            for atom in self.variable(v).atoms():
                if atom.name not in seen:
                    seen.add(atom.name)
                    result.append(atom)
        return result

    def by_declaration(self, variables: Iterable[VarLike]) -> List[Variable]:
        rank = {name: i for i, name in enumerate(self.variables)}
        return sorted(self.atoms(variables), key=lambda v: rank[v.name])

    def bits(self, variables: Iterable[VarLike]) -> List[str]:
        return [b for v in self.atoms(variables) for b in self._bits[v.name]]

    # ------------------------------------------------------------------
    # constants and builders
    # ------------------------------------------------------------------
    @property
    def true(self) -> Predicate:
        return Predicate(self, self.bdd.true, ())

    @property
    def false(self) -> Predicate:
        return Predicate(self, self.bdd.false, ())

    def _domain_node(self, names: Iterable[str]):
        node = self.bdd.true
        for name in names:
            cached = self._domain_nodes.get(name)
            if cached is None:
                var = self.variables[name]
                if var.domain_size == 2 ** var.bit_width:
                    cached = self.bdd.true
                else:
                    cached = self._leq(self._bits[name], var.domain_size - 1)
                self._domain_nodes[name] = cached
            node = node & cached
        return node

    def domain(self, variables: Iterable[VarLike]) -> Predicate:
        """Constraint `v < domain_size` for every listed variable"""
        names = [a.name for a in self.atoms(variables)]
        return Predicate(self, self._domain_node(names), names)

    def _leq(self, bits: Sequence[str], c: int):
        node = self.bdd.true
        for k, bit in enumerate(reversed(bits)):
            v = self.bdd.var(bit)
            node = (~v | node) if (c >> k) & 1 else (~v & node)
        return node

    def _geq(self, bits: Sequence[str], c: int):
        node = self.bdd.true
        for k, bit in enumerate(reversed(bits)):
            v = self.bdd.var(bit)
            node = (v & node) if (c >> k) & 1 else (v | node)
        return node

    def _atom_cube(self, values: Mapping[str, int]):
        literals = {}
        for name, value in values.items():
            for k, bit in enumerate(reversed(self._bits[name])):
                literals[bit] = bool((value >> k) & 1)
        return self.bdd.cube(literals)

    def eq(self, var: VarLike, value: int) -> Predicate:
        """var == value (value index)"""
        var = self.variable(var)
        values = var.split(value)
        return Predicate(self, self._atom_cube(values), values.keys())

    def eq_label(self, var: VarLike, label) -> Predicate:
        var = self.variable(var)
        return self.eq(var, var.index_of(label))

    def in_range(self, var: VarLike, lo: int, hi: int) -> Predicate:
        """lo <= var <= hi, clipped to the domain"""
        var = self.variable(var)
        if var.members:
            raise ValueError(f"in_range needs an atomic variable, got {var.name}")
        lo = max(int(lo), 0)
        hi = min(int(hi), var.domain_size - 1)
        if lo > hi:
            return Predicate(self, self.bdd.false, (var.name,))
        key = (var.name, lo, hi)
        node = self._range_nodes.get(key)
        if node is None:
            bits = self._bits[var.name]
            node = self._geq(bits, lo) & self._leq(bits, hi)
            self._range_nodes[key] = node
        return Predicate(self, node, (var.name,))

    def member(self, var: VarLike, values: Iterable[int]) -> Predicate:
        var = self.variable(var)
        result = Predicate(self, self.bdd.false, [a.name for a in var.atoms()])
        for value in values:
            result = self.disj(result, self.eq(var, value))
        return result

    def var_eq(self, a: VarLike, b: VarLike) -> Predicate:
        """Both variables hold the same value index"""
        a, b = self.variable(a), self.variable(b)
        if a.domain_size != b.domain_size:
            raise TypeMismatch(f"dom({a.name}) has {a.domain_size} values, dom({b.name}) has {b.domain_size}")
        node = self.bdd.true
        for x, y in zip(self.bits([a]), self.bits([b])):
            node = node & self.bdd.var(x).equiv(self.bdd.var(y))
        names = [v.name for v in a.atoms() + b.atoms()]
        return Predicate(self, node & self._domain_node(names), names)

    def cube(self, assignment: Mapping[VarLike, int]) -> Predicate:
        values = {}
        for var, value in assignment.items():
            values.update(self.variable(var).split(value))
        return Predicate(self, self._atom_cube(values), values.keys())

    def padded_shape(self, variables: Sequence[VarLike]) -> Tuple[int, ...]:
        return tuple(2 ** v.bit_width for v in self.atoms(variables))

    def from_table(self, variables: Sequence[VarLike], table: np.ndarray,
                   leaves: Sequence[Predicate], offset: int = 0) -> Predicate:
        """
        Predicate from a table of leaf ids

        The table covers the padded row-major index space of `variables`
        (each variable padded to 2**bit_width, bits most significant first).
        A table shorter than the whole space is an aligned chunk starting at
        `offset`; entries outside the chunk are false. Padding entries are
        forced false whatever leaf they carry.
        """
        atoms = self.atoms(variables)
        bits = self.bits(atoms)
        table = np.asarray(table).ravel()
        size = table.shape[0]
        k = size.bit_length() - 1
        if size != 2 ** k or k > len(bits):
            raise ValueError(f"Table of {size} entries does not fit {len(bits)} bits")
        if offset % size:
            raise ValueError(f"Offset {offset} not aligned to chunk of {size}")
        nodes = [leaf.node for leaf in leaves]
        support = {a.name for a in atoms}
        for leaf in leaves:
            if leaf.context is not self:
                raise ContextMismatch("Leaf predicate from another context")
            support |= leaf.support

        low_bits = bits[len(bits) - k:]
        memo = {}

        def build(depth, block):
            first = block[0]
            if block.min() == block.max():
                return nodes[first]
            raw = block.tobytes()
            key = (depth, raw if len(raw) <= 256 else hashlib.blake2b(raw, digest_size=20).digest())
            node = memo.get(key)
            if node is None:
                half = block.shape[0] // 2
                low = build(depth + 1, block[:half])
                high = build(depth + 1, block[half:])
                node = self.bdd.ite(self.bdd.var(low_bits[depth]), high, low)
                memo[key] = node
            return node

        node = build(0, table)
        prefix = offset >> k
        prefix_bits = bits[:len(bits) - k]
        if prefix_bits:
            literals = {bit: bool((prefix >> i) & 1) for i, bit in enumerate(reversed(prefix_bits))}
            node = node & self.bdd.cube(literals)
        node = node & self._domain_node(a.name for a in atoms)
        return Predicate(self, node, support)

    def from_mask(self, variables: Sequence[VarLike], mask: np.ndarray) -> Predicate:
        """Predicate true where the boolean array `mask` (shape = domain sizes) is set"""
        atoms = self.atoms(variables)
        mask = np.asarray(mask, dtype=bool)
        shape = tuple(a.domain_size for a in atoms)
        if mask.shape != shape:
            raise ValueError(f"Mask shape {mask.shape} does not match domains {shape}")
        padded = np.zeros(self.padded_shape(atoms), dtype=np.int8)
        padded[tuple(slice(0, n) for n in shape)] = mask
        return self.from_table(atoms, padded.ravel(), [self.false, self.true])

    def from_function(self, variables: Sequence[VarLike], fn: Callable[..., bool]) -> Predicate:
        """Brute force over the product domain; `fn` receives value indices"""
        atoms = self.atoms(variables)
        mask = np.zeros(tuple(a.domain_size for a in atoms), dtype=bool)
        for index in itertools.product(*(range(a.domain_size) for a in atoms)):
            mask[index] = bool(fn(*index))
        return self.from_mask(atoms, mask)

    # ------------------------------------------------------------------
    # connectives and quantifiers
    # ------------------------------------------------------------------
    def _check(self, *predicates: Predicate):
        for p in predicates:
            if p.context is not self:
                raise ContextMismatch(f"Predicate from context {p.context.name} used in {self.name}")

    def conj(self, p: Predicate, q: Predicate) -> Predicate:
        self._check(p, q)
        return Predicate(self, p.node & q.node, p.support | q.support)

    def disj(self, p: Predicate, q: Predicate) -> Predicate:
        self._check(p, q)
        support = p.support | q.support
        return Predicate(self, (p.node | q.node) & self._domain_node(support), support)

    def neg(self, p: Predicate) -> Predicate:
        self._check(p)
        return Predicate(self, ~p.node & self._domain_node(p.support), p.support)

    def implies(self, p: Predicate, q: Predicate) -> Predicate:
        return self.disj(self.neg(p), q)

    def conj_all(self, predicates: Iterable[Predicate]) -> Predicate:
        result = self.true
        for p in predicates:
            result = self.conj(result, p)
        return result

    def disj_all(self, predicates: Iterable[Predicate]) -> Predicate:
        result = self.false
        for p in predicates:
            result = self.disj(result, p)
        return result

    def _quantified(self, variables, p: Predicate) -> List[Variable]:
        self._check(p)
        return [a for a in self.atoms(variables) if a.name in p.support]

    def exists(self, variables: Iterable[VarLike], p: Predicate) -> Predicate:
        atoms = self._quantified(variables, p)
        if not atoms:
            return p
        names = [a.name for a in atoms]
        node = self.bdd.exist(set(self.bits(atoms)), p.node & self._domain_node(names))
        return Predicate(self, node, p.support - set(names))

    def forall(self, variables: Iterable[VarLike], p: Predicate) -> Predicate:
        atoms = self._quantified(variables, p)
        if not atoms:
            return p
        names = [a.name for a in atoms]
        node = self.bdd.forall(set(self.bits(atoms)), ~self._domain_node(names) | p.node)
        return Predicate(self, node, p.support - set(names))

    def rename(self, p: Predicate, mapping: Mapping[VarLike, VarLike]) -> Predicate:
        """Substitute variables; old and new must have equal domain sizes"""
        self._check(p)
        pairs = []
        for old, new in mapping.items():
            old, new = self.variable(old), self.variable(new)
            if old.domain_size != new.domain_size:
                raise TypeMismatch(f"Cannot rename {old.name} ({old.domain_size} values) "
                                   f"to {new.name} ({new.domain_size} values)")
            for a, b in zip(old.atoms(), new.atoms()):
                if a.domain_size != b.domain_size:
                    raise TypeMismatch(f"Member {a.name} and {b.name} differ in domain size")
                if a.name in p.support:
                    pairs.append((a, b))
        if not pairs:
            return p
        sources = {a.name for a, _ in pairs}
        for _, b in pairs:
            if b.name in p.support and b.name not in sources:
                raise SupportError(f"{b.name} already occurs in the predicate")
        bitmap = {}
        for a, b in pairs:
            for x, y in zip(self._bits[a.name], self._bits[b.name]):
                bitmap[x] = self.bdd.var(y)
        support = (p.support - sources) | {b.name for _, b in pairs}
        return Predicate(self, self.bdd.let(bitmap, p.node), support)

    # ------------------------------------------------------------------
    # queries
    # ------------------------------------------------------------------
    def _set_equal(self, p: Predicate, q: Predicate) -> bool:
        dom = self._domain_node(p.support | q.support)
        return (p.node & dom) == (q.node & dom)

    def equivalent(self, p: Predicate, q: Predicate) -> bool:
        self._check(p, q)
        return self._set_equal(p, q)

    def is_tautology(self, p: Predicate) -> bool:
        self._check(p)
        return self._set_equal(p, self.true)

    def is_unsat(self, p: Predicate) -> bool:
        self._check(p)
        return p.node == self.bdd.false

    def _covering(self, p: Predicate, variables) -> List[Variable]:
        atoms = self.atoms(variables)
        names = {a.name for a in atoms}
        extra = p.support - names
        if extra:
            raise SupportError(f"Predicate depends on {sorted(extra)} outside {sorted(names)}")
        return atoms

    def count_sat(self, p: Predicate, variables: Iterable[VarLike]) -> int:
        """Satisfying assignments over the product of the listed domains"""
        self._check(p)
        atoms = self._covering(p, variables)
        node = p.node & self._domain_node(a.name for a in atoms)
        if node == self.bdd.false:
            return 0
        nbits = sum(a.bit_width for a in atoms)
        if nbits == 0:
            return 1
        return int(self.bdd.count(node, nbits))

    def enumerate_sat(self, p: Predicate, variables: Iterable[VarLike]) -> Iterator[Dict[str, int]]:
        """Satisfying assignments in lexicographic (declaration order, value) order"""
        self._check(p)
        atoms = self.by_declaration(self._covering(p, variables))
        node = p.node & self._domain_node(a.name for a in atoms)
        if node == self.bdd.false:
            return
        care = set(self.bits(atoms))
        rows = set()
        if care:
            for model in self.bdd.pick_iter(node, care_vars=care):
                rows.add(tuple(self._decode(model, a) for a in atoms))
        else:
            # single-valued variables carry no bits
            rows.add(tuple(0 for _ in atoms))
        for row in sorted(rows):
            yield dict(zip((a.name for a in atoms), row))

    def _decode(self, model: Mapping[str, bool], var: Variable) -> int:
        value = 0
        for bit in self._bits[var.name]:
            value = (value << 1) | int(model[bit])
        return value

    def pick(self, p: Predicate, variables: Iterable[VarLike]) -> Optional[Dict[str, int]]:
        """One satisfying assignment (the lexicographically first), or None"""
        atoms = self.by_declaration(self._covering(p, variables))
        node = p.node & self._domain_node(a.name for a in atoms)
        if node == self.bdd.false:
            return None
        assignment = {}
        for atom in atoms:
            for value in range(atom.domain_size):
                candidate = node & self._atom_cube({atom.name: value})
                if candidate != self.bdd.false:
                    assignment[atom.name] = value
                    node = candidate
                    break
        return assignment

    def node_count(self, p: Predicate = None) -> int:
        if p is None:
            return len(self.bdd)
        return p.node.dag_size

    def check_memory(self):
        used = len(self.bdd) * Config.DD_NODE_BYTES / 2 ** 20
        if used > Config.DD_MEMORY_MB:
            raise MemoryBudgetExceeded(
                f"Context {self.name} holds {len(self.bdd)} nodes (~{used:.0f} MB), "
                f"cap is {Config.DD_MEMORY_MB:.0f} MB")

    # ------------------------------------------------------------------
    # dump formats
    # ------------------------------------------------------------------
    def _header(self, atoms: Sequence[Variable]) -> str:
        return ' '.join(f"{a.name}:{a.domain_size}" for a in atoms)

    def dump_assignments(self, p: Predicate, variables: Iterable[VarLike]) -> str:
        """One satisfying assignment per line, `var=value` fields, lines sorted"""
        atoms = self.by_declaration(self._covering(p, variables))
        lines = sorted(' '.join(f"{k}={v}" for k, v in row.items())
                       for row in self.enumerate_sat(p, atoms))
        out = [f"# predicate {self._header(atoms)}"] + lines + [f"# end {len(lines)}"]
        return '\n'.join(out) + '\n'

    def dump_diagram(self, p: Predicate, variables: Iterable[VarLike]) -> str:
        """Node table (bottom-up ids, 0/1 terminals) for predicates too large to list"""
        atoms = self.by_declaration(self._covering(p, variables))
        node = p.node & self._domain_node(a.name for a in atoms)
        ids = {}
        rows = []

        def visit(u):
            if u == self.bdd.false:
                return 0
            if u == self.bdd.true:
                return 1
            key = int(u)
            if key in ids:
                return ids[key]
            bit = u.var
            low = visit(self.bdd.let({bit: False}, u))
            high = visit(self.bdd.let({bit: True}, u))
            ids[key] = len(rows) + 2
            rows.append(f"{ids[key]} {bit} {low} {high}")
            return ids[key]

        root = visit(node)
        out = [f"# diagram {self._header(atoms)}"] + rows + [f"# root {root}", f"# end {len(rows)}"]
        return '\n'.join(out) + '\n'

    def dump(self, p: Predicate, variables: Iterable[VarLike], header: Mapping = None) -> str:
        """
        JSON header line followed by the assignment dump, or by the diagram
        dump when there are more than DUMP_ASSIGNMENT_LIMIT assignments
        """
        atoms = self.by_declaration(self._covering(p, variables))
        meta = dict(header or {})
        meta['variables'] = [[a.name, a.domain_size] for a in atoms]
        count = self.count_sat(p, atoms)
        meta['count'] = count
        body = (self.dump_assignments(p, atoms) if count <= Config.DUMP_ASSIGNMENT_LIMIT
                else self.dump_diagram(p, atoms))
        return json.dumps(meta, sort_keys=True) + '\n' + body

    def load(self, text: str) -> Tuple[Dict, Predicate]:
        """Inverse of dump: (header, predicate)"""
        first, _, body = text.partition('\n')
        try:
            meta = json.loads(first)
        except json.JSONDecodeError:
            raise FormatError("Artifact does not start with a JSON header")
        if not isinstance(meta, dict):
            raise FormatError("Artifact header is not a JSON object")
        return meta, self.load_dump(body)

    def _declare_header(self, fields: Sequence[str]) -> List[Variable]:
        atoms = []
        for field in fields:
            try:
                name, size = field.rsplit(':', 1)
                size = int(size)
            except ValueError:
                raise FormatError(f"Bad variable field in header: {field!r}")
            if name in self.variables:
                if self.variables[name].domain_size != size:
                    raise TypeMismatch(f"Dump declares {name} with {size} values, "
                                       f"context has {self.variables[name].domain_size}")
            else:
                self.declare(name, size)
            atoms.append(self.variables[name])
        return atoms

    def load_dump(self, text: str) -> Predicate:
        """Inverse of dump_assignments / dump_diagram; declares missing variables"""
        lines = [line for line in text.splitlines() if line.strip()]
        if len(lines) < 2 or not lines[-1].startswith('# end '):
            raise FormatError("Dump is truncated (missing end marker)")
        head = lines[0].split()
        if len(head) < 2 or head[0] != '#' or head[1] not in ('predicate', 'diagram'):
            raise FormatError(f"Unknown dump header: {lines[0]!r}")
        atoms = self._declare_header(head[2:])
        try:
            expected = int(lines[-1].split()[2])
        except (IndexError, ValueError):
            raise FormatError(f"Bad end marker: {lines[-1]!r}")
        if head[1] == 'predicate':
            return self._load_assignments(atoms, lines[1:-1], expected)
        return self._load_diagram(atoms, lines[1:-1], expected)

    def _load_assignments(self, atoms, body, expected) -> Predicate:
        if len(body) != expected:
            raise FormatError(f"Dump lists {len(body)} assignments, end marker says {expected}")
        position = {a.name: i for i, a in enumerate(atoms)}
        mask = np.zeros(tuple(a.domain_size for a in atoms), dtype=bool)
        for line in body:
            index = [None] * len(atoms)
            for field in line.split():
                name, _, value = field.partition('=')
                if name not in position or not value.lstrip('-').isdigit():
                    raise FormatError(f"Bad assignment field {field!r}")
                value = int(value)
                if not 0 <= value < atoms[position[name]].domain_size:
                    raise FormatError(f"{field} outside the declared domain")
                index[position[name]] = value
            if None in index:
                raise FormatError(f"Incomplete assignment line {line!r}")
            mask[tuple(index)] = True
        return self.from_mask(atoms, mask)

    def _load_diagram(self, atoms, body, expected) -> Predicate:
        if not body or not body[-1].startswith('# root '):
            raise FormatError("Diagram dump without root marker")
        rows = body[:-1]
        if len(rows) != expected:
            raise FormatError(f"Diagram lists {len(rows)} nodes, end marker says {expected}")
        known = set(self.bits(atoms))
        nodes = {0: self.bdd.false, 1: self.bdd.true}
        for row in rows:
            parts = row.split()
            if len(parts) != 4 or parts[1] not in known:
                raise FormatError(f"Bad diagram row {row!r}")
            try:
                ident, low, high = int(parts[0]), int(parts[2]), int(parts[3])
                nodes[ident] = self.bdd.ite(self.bdd.var(parts[1]), nodes[high], nodes[low])
            except (ValueError, KeyError):
                raise FormatError(f"Bad diagram row {row!r}")
        try:
            root = nodes[int(body[-1].split()[2])]
        except (IndexError, ValueError, KeyError):
            raise FormatError(f"Bad root marker {body[-1]!r}")
        names = [a.name for a in atoms]
        return Predicate(self, root & self._domain_node(names), names)
