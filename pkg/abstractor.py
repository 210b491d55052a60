"""
Module Abstraction
Builds a finite abstract module from a concrete module's overapproximation
oracle by traversing the abstract input grid in aligned chunks
"""
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from concrete_functions import Oracle
from config import Config
from interval_grid import Quantizer, require_strict
from module_algebra import FiniteModule
from predicates import Predicate, PredicateContext

logger = logging.getLogger(__name__)


class TimeBudgetExceeded(RuntimeError):
    """Grid traversal aborted at its deadline"""

    def __init__(self, message: str, cells_traversed: int, cells_total: int):
        self.cells_traversed = cells_traversed
        self.cells_total = cells_total
        super().__init__(f"{message} after {cells_traversed} of {cells_total} cells")


@dataclass(frozen=True)
class AbstractionJob:
    """
    Abstraction of one concrete module

    inputs are listed in the oracle's input order, outputs in the order of
    its expressions.
    """
    name: str
    inputs: Tuple[Quantizer, ...]
    outputs: Tuple[Quantizer, ...]
    oracle: Oracle

    def __post_init__(self):
        names = tuple(q.var for q in self.inputs)
        if names != tuple(self.oracle.inputs):
            raise ValueError(f"Job {self.name}: quantized inputs {names} do not match "
                             f"oracle inputs {self.oracle.inputs}")
        if len(self.outputs) != len(self.oracle.exprs):
            raise ValueError(f"Job {self.name}: {len(self.outputs)} output quantizers for "
                             f"{len(self.oracle.exprs)} expressions")

    @property
    def padded_shape(self) -> Tuple[int, ...]:
        return tuple(2 ** q.abstract_var.bit_width for q in self.inputs)

    @property
    def padded_cells(self) -> int:
        return int(np.prod(self.padded_shape, dtype=np.int64))

    @property
    def cells(self) -> int:
        return int(np.prod([q.cell_count for q in self.inputs], dtype=np.int64))


@dataclass
class TraversalResult:
    """Per-cell output index ranges for a slice of the padded input space"""
    start: int
    stop: int
    ranges: np.ndarray              # (cells, outputs, 2); -1 rows are blocking
    blocking: int = 0
    undefined: int = 0
    escaped: int = 0
    transitions: int = 0


@dataclass
class AbstractionStats:
    name: str
    cells: int = 0
    blocking: int = 0
    undefined: int = 0
    escaped: int = 0
    transitions: int = 0
    nodes: int = 0
    seconds: float = 0.0

    def to_dict(self) -> Dict:
        """Convert to dictionary"""
        return {
            'name': self.name,
            'cells': self.cells,
            'blocking': self.blocking,
            'undefined': self.undefined,
            'escaped': self.escaped,
            'transitions': self.transitions,
            'nodes': self.nodes,
            'seconds': round(self.seconds, 3),
        }


def chunk_size(job: AbstractionJob) -> int:
    return min(2 ** Config.ABSTRACTION_CHUNK_BITS, job.padded_cells)


def traverse(job: AbstractionJob, start: int, stop: int) -> TraversalResult:
    """
    Evaluate the oracle on input cells start .. stop-1 (padded row-major order)

    Pure numpy, so it runs unchanged inside joblib workers.
    """
    flat = np.arange(start, stop, dtype=np.int64)
    index = np.unravel_index(flat, job.padded_shape)
    valid = np.ones(flat.shape[0], dtype=bool)
    lo = np.empty((flat.shape[0], len(job.inputs)))
    hi = np.empty_like(lo)
    for k, q in enumerate(job.inputs):
        cells = index[k]
        valid &= cells < q.cell_count
        lo[:, k], hi[:, k] = q.bounds(np.minimum(cells, q.cell_count - 1))

    out_lo, out_hi = job.oracle.boxes(lo, hi)
    undefined = np.isnan(out_lo).any(axis=1)
    escaped = np.zeros_like(undefined)
    ranges = np.empty((flat.shape[0], len(job.outputs), 2), dtype=np.int64)
    # closed intervals widened by a few ulps per arithmetic step
    slack = max(job.oracle.ops, 1)
    for j, q in enumerate(job.outputs):
        a, b = out_lo[:, j], out_hi[:, j]
        with np.errstate(invalid='ignore'):
            escaped |= (a < q.lower) | (b > q.upper)
        a = np.where(undefined, q.lower, a)
        b = np.where(undefined, q.lower, b)
        widen_a = slack * np.spacing(np.abs(a))
        widen_b = slack * np.spacing(np.abs(b))
        first, last = q.cell_range(a - widen_a, b + widen_b)
        ranges[:, j, 0] = first
        ranges[:, j, 1] = last
        escaped |= first > last
    escaped &= ~undefined
    blocking = ~valid | undefined | escaped
    ranges[blocking] = -1

    counted = ~blocking
    widths = ranges[counted, :, 1] - ranges[counted, :, 0] + 1
    transitions = int(np.prod(widths, axis=1, dtype=np.int64).sum())
    return TraversalResult(
        start=start,
        stop=stop,
        ranges=ranges,
        blocking=int((valid & blocking).sum()),
        undefined=int((valid & undefined).sum()),
        escaped=int((valid & escaped).sum()),
        transitions=transitions,
    )


class _Assembler:
    """Turns traversal results into one predicate in the owning context"""

    def __init__(self, ctx: PredicateContext, job: AbstractionJob):
        self.ctx = ctx
        self.job = job
        self.input_vars = [q.abstract_var for q in job.inputs]
        self.output_vars = [q.abstract_var for q in job.outputs]
        for v in self.input_vars + self.output_vars:
            ctx.variable(v)
        self.leaves: Dict[tuple, Predicate] = {}
        self.result = ctx.false
        self.stats = AbstractionStats(job.name)
        self._reported = 0

    def _leaf(self, row: np.ndarray) -> Predicate:
        key = tuple(int(v) for v in row.ravel())
        leaf = self.leaves.get(key)
        if leaf is None:
            if key[0] < 0:
                leaf = self.ctx.false
            else:
                leaf = self.ctx.conj_all(self.ctx.in_range(v, row[j, 0], row[j, 1])
                                         for j, v in enumerate(self.output_vars))
            self.leaves[key] = leaf
        return leaf

    def add(self, part: TraversalResult):
        rows, inverse = np.unique(part.ranges.reshape(part.ranges.shape[0], -1), axis=0, return_inverse=True)
        rows = rows.reshape(-1, len(self.output_vars), 2)
        leaves = [self._leaf(row) for row in rows]
        chunk = self.ctx.from_table(self.input_vars, inverse.reshape(-1), leaves, offset=part.start)
        self.result = self.ctx.disj(self.result, chunk)

        s = self.stats
        s.cells += min(part.stop, self.job.padded_cells) - part.start
        s.blocking += part.blocking
        s.undefined += part.undefined
        s.escaped += part.escaped
        s.transitions += part.transitions
        if s.cells // Config.PROGRESS_EVERY > self._reported:
            self._reported = s.cells // Config.PROGRESS_EVERY
            logger.debug(f"{self.job.name}: cells_done={s.cells}, blocking_count={s.blocking}, "
                         f"transition_count={s.transitions}, dd_nodes={self.ctx.node_count()}")
        self.ctx.check_memory()

    def finish(self, started: float) -> FiniteModule:
        inputs = self.input_vars
        outputs = self.output_vars
        constraint = self.ctx.conj(self.result, self.ctx.domain(inputs + outputs))
        self.stats.cells = self.job.cells
        self.stats.nodes = self.ctx.node_count(constraint)
        self.stats.seconds = time.time() - started
        if self.stats.undefined:
            logger.warning(f"{self.job.name}: oracle undefined on {self.stats.undefined} cells, "
                           f"left blocking")
        logger.info(f"Abstracted {self.job.name}: {self.stats.cells} cells, "
                    f"{self.stats.blocking} blocking, {self.stats.transitions} transitions, "
                    f"{self.stats.nodes} nodes in {self.stats.seconds:.2f}s")
        return FiniteModule(self.job.name, inputs, outputs, constraint)


def _slices(job: AbstractionJob) -> Tuple[range, int]:
    """Lazy chunk start offsets and the chunk size"""
    size = chunk_size(job)
    return range(0, job.padded_cells, size), size


def abstract_with_stats(ctx: PredicateContext, job: AbstractionJob, deadline: float = None,
                        n_jobs: int = None) -> Tuple[FiniteModule, AbstractionStats]:
    """
    Abstract one module, returning the module and its traversal statistics

    Args:
        ctx: context owning the job's abstract variables
        deadline: time.time() value after which TimeBudgetExceeded is raised
        n_jobs: joblib workers for chunk traversal (default Config.N_JOBS)
    """
    require_strict(job.inputs + job.outputs)
    started = time.time()
    assembler = _Assembler(ctx, job)
    n_jobs = n_jobs or Config.N_JOBS
    starts, size = _slices(job)
    batch = max(1, n_jobs)
    with Parallel(n_jobs=n_jobs) as parallel:
        for k in range(0, len(starts), batch):
            if deadline is not None and time.time() > deadline:
                raise TimeBudgetExceeded(f"Abstraction of {job.name} hit its deadline",
                                         assembler.stats.cells, job.cells)
            group = [(s, s + size) for s in starts[k:k + batch]]
            if n_jobs == 1:
                parts = [traverse(job, s, e) for s, e in group]
            else:
                parts = parallel(delayed(traverse)(job, s, e) for s, e in group)
            for part in parts:
                assembler.add(part)
    module = assembler.finish(started)
    return module, assembler.stats


def abstract_module(ctx: PredicateContext, job: AbstractionJob, deadline: float = None) -> FiniteModule:
    module, _ = abstract_with_stats(ctx, job, deadline)
    return module


def abstract_many(ctx: PredicateContext, jobs: Sequence[AbstractionJob],
                  n_jobs: int = None) -> Tuple[Dict[str, FiniteModule], Dict[str, str], Dict[str, AbstractionStats]]:
    """
    Abstract independent modules

    Traversal of all jobs is farmed out to joblib workers; predicates are
    assembled here, in the owning context.

    Returns:
        (modules, errors, stats) keyed by job name; a failing job only
        shows up in errors
    """
    n_jobs = n_jobs or Config.N_JOBS
    modules: Dict[str, FiniteModule] = {}
    errors: Dict[str, str] = {}
    stats: Dict[str, AbstractionStats] = {}
    runnable = []
    for job in jobs:
        try:
            require_strict(job.inputs + job.outputs)
            runnable.append(job)
        except Exception as e:
            logger.error(f"Error abstracting {job.name}: {e}")
            errors[job.name] = str(e)

    tasks = []
    for i, job in enumerate(runnable):
        starts, size = _slices(job)
        tasks.extend((i, s, s + size) for s in starts)
    results: Dict[int, List] = {i: [] for i in range(len(runnable))}
    if n_jobs == 1:
        outcomes = [_safe_traverse(runnable[i], s, e) for i, s, e in tasks]
    else:
        outcomes = Parallel(n_jobs=n_jobs)(delayed(_safe_traverse)(runnable[i], s, e) for i, s, e in tasks)
    for (i, _, _), outcome in zip(tasks, outcomes):
        results[i].append(outcome)

    for i, job in enumerate(runnable):
        failure = next((o for o in results[i] if isinstance(o, Exception)), None)
        if failure is not None:
            logger.error(f"Error abstracting {job.name}: {failure}")
            errors[job.name] = str(failure)
            continue
        try:
            started = time.time()
            assembler = _Assembler(ctx, job)
            for part in results[i]:
                assembler.add(part)
            modules[job.name] = assembler.finish(started)
            stats[job.name] = assembler.stats
        except Exception as e:
            logger.error(f"Error abstracting {job.name}: {e}")
            errors[job.name] = str(e)
    return modules, errors, stats


def _safe_traverse(job: AbstractionJob, start: int, stop: int):
    try:
        return traverse(job, start, stop)
    except Exception as e:
        return e
