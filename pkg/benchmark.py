"""
Benchmark Systems
Generator for the N-state logistic consensus benchmark: each state is
driven toward the global average through a saturating logistic map, and
the average is computed by a tree of partial-average latent modules
"""
import logging
from collections import deque
from typing import Dict, List, Tuple

from config import Config

logger = logging.getLogger(__name__)

CONTROL_VALUES = [-2, -1, 1, 2]
GLOG_RATE = 0.2
LEAF_SIZE = 3


def _grid(var: str, cells: int) -> Dict:
    return {'var': var, 'kind': 'uniform', 'lower': 0, 'upper': cells, 'eta': 1, 'anchor': 0.5, 'cells': cells}


def average_tree(n: int) -> List[Tuple[str, List[str], str]]:
    """
    Latent averages for states x1..xn as (latent, inputs, expression)

    Groups of up to three states are averaged directly; larger groups are
    split in halves (first half rounded up) whose averages are combined
    with weights. Latents are numbered breadth first from the root l1.
    """
    if n < 1:
        raise ValueError(f"Benchmark needs at least one state, got {n}")
    tree = []
    counter = 1
    queue = deque([(1, list(range(1, n + 1)))])
    while queue:
        index, members = queue.popleft()
        latent = f"l{index}"
        if len(members) <= LEAF_SIZE:
            inputs = [f"x{i}" for i in members]
            expr = '(' + ' + '.join(inputs) + f")/{len(members)}"
            tree.append((latent, inputs, expr))
            continue
        half = (len(members) + 1) // 2
        left, right = members[:half], members[half:]
        a, b = counter + 1, counter + 2
        counter += 2
        inputs = [f"l{a}", f"l{b}"]
        if len(left) == len(right):
            expr = f"(l{a} + l{b})/2"
        else:
            expr = f"({len(left)}*l{a} + {len(right)}*l{b})/{len(members)}"
        tree.append((latent, inputs, expr))
        queue.append((a, left))
        queue.append((b, right))
    return tree


def make_bench_spec(n: int, cells: int = None, gain: float = None) -> Dict:
    """
    SystemSpec document for the N-state benchmark

    x_i' = glog(0, cells, 0.2, x_i + u_i + gain*(x_i - l1)), u_i in {-2,-1,1,2},
    every state on `cells` unit cells centered at 0.5 + c.
    """
    cells = cells or Config.BENCH_CELLS
    gain = Config.BENCH_GAIN if gain is None else gain
    tree = average_tree(n)
    states = [f"x{i}" for i in range(1, n + 1)]

    quantizers = [_grid(x, cells) for x in states]
    quantizers += [{'var': f"u{i}", 'kind': 'identity', 'values': list(CONTROL_VALUES)} for i in range(1, n + 1)]
    quantizers += [_grid(latent, cells) for latent, _, _ in sorted(tree, key=lambda t: int(t[0][1:]))]
    quantizers += [_grid(f"{x}'", cells) for x in states]

    modules = []
    for i in range(1, n + 1):
        expr = f"glog(0, {cells}, {GLOG_RATE:g}, x{i} + u{i} + {gain:g}*(x{i} - l1))"
        modules.append({'name': f"F{i}", 'inputs': [f"x{i}", f"u{i}", 'l1'], 'outputs': [f"x{i}'"],
                        'source': {'abstracted': {'exprs': [expr], 'oracle': 'interval'}}})
    for latent, inputs, expr in tree:
        modules.append({'name': f"A{latent[1:]}", 'inputs': inputs, 'outputs': [latent],
                        'source': {'abstracted': {'exprs': [expr], 'oracle': 'monotone'}}})

    spec = {
        'name': f"bench_n{n}",
        'quantizers': quantizers,
        'modules': modules,
        'latents': [latent for latent, _, _ in tree],
        'control': {'pairing': {f"{x}'": x for x in states}, 'controls': [f"u{i}" for i in range(1, n + 1)]},
    }
    logger.debug(f"Benchmark spec for N={n}: {len(modules)} modules, {len(tree)} latents")
    return spec


def monolithic_cells(n: int, cells: int = None) -> int:
    """Cells traversed by a monolithic abstraction: (cells * |U|)^N"""
    cells = cells or Config.BENCH_CELLS
    return (cells * len(CONTROL_VALUES)) ** n


def compositional_cells(n: int, cells: int = None) -> int:
    """Cells traversed compositionally: the sum of the module grid sizes"""
    cells = cells or Config.BENCH_CELLS
    total = n * cells * len(CONTROL_VALUES) * cells
    for _, inputs, _ in average_tree(n):
        total += cells ** len(inputs)
    return total
