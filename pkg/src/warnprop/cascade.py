"""Changes after round t0: connected cascades and the marking process.

``track_cascades`` looks at what actually changes between round t0 and the
fixed point. ``run_marking`` explores outward from the changes at round
t0 -> t0+1 and marks every directed edge that could be affected, treating
revisited vertices (duplicates) and high-degree vertices (freaks) as snags
whose out-edges are all marked spurious. Every edge whose message changes
after round t0 ends up marked:

* a change on ``y -> z`` after round t0+1 needs a change on some ``w -> y``,
  ``w != z``, one round earlier, which is marked by induction;
* if ``y`` is a snag, ``y -> z`` is marked spurious unless the rule output
  at ``y`` is constant over every combination of values its other in-edges
  take after round t0 (then ``y -> z`` cannot change);
* otherwise ``w -> y`` is the only changing in-edge of ``y`` other than
  ``z -> y`` (a second one would make ``y`` a duplicate), so ``y -> z`` only
  changes if the rule output at ``y`` varies over the values ``w -> y``
  takes after round t0, which is the marking test.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ParameterError
from .graph import Graph, StoryGraph, edge_components, init_messages, wp_run
from .halfedge import k0_threshold
from .rules import UpdateRule
from .tree import ChangePair

STOP_CONDITIONS = ("exhaustion", "expansion", "explosion")


@dataclass
class CascadeReport:
    component_sizes: np.ndarray
    total_marked: int
    stop: str | None = None
    duplicates: int = 0
    freaks: int = 0
    spurious: int = 0
    marked: np.ndarray | None = field(default=None, repr=False)
    type_counts: dict = field(default_factory=dict)
    k0: float | None = None

    def size_histogram(self) -> dict[int, int]:
        uniq, cnt = np.unique(self.component_sizes, return_counts=True)
        return dict(zip(uniq.tolist(), cnt.tolist()))

    @property
    def largest(self) -> int:
        return int(self.component_sizes.max()) if len(self.component_sizes) else 0

    def summary(self) -> str:
        return (f"stop={self.stop} marked={self.total_marked} duplicates={self.duplicates} "
                f"freaks={self.freaks}")


def _require_fixed_point(sg: StoryGraph, t0: int):
    if t0 < sg.first_round:
        raise InputError(f"round {t0} was not recorded")
    if not sg.fixed_point:
        raise InputError(f"run did not reach a fixed point within its horizon {sg.horizon}")
    if t0 > sg.horizon + 1:
        # beyond the horizon every round equals the fixed point
        return


def changed_after(sg: StoryGraph, t0: int) -> np.ndarray:
    """Mask of directed slots whose message differs between round t0 and the fixed point."""
    _require_fixed_point(sg, t0)
    return sg.messages_at(t0) != sg.message


def track_cascades(sg: StoryGraph, t0: int) -> CascadeReport:
    """Components (in the underlying graph) of the edges that change after round t0.

    Sizes count undirected edges carrying at least one changed direction.
    """
    mask = changed_after(sg, t0)
    _, sizes = edge_components(sg.graph, mask)
    return CascadeReport(np.sort(sizes)[::-1], int(sizes.sum()), marked=mask)


def _values_after(sg: StoryGraph, t0: int) -> np.ndarray:
    """Bitmask per slot of the messages seen in rounds t0..fixed point."""
    bits = np.zeros(sg.graph.n_directed, dtype=np.int64)
    for t in range(t0, max(t0, sg.horizon) + 1):
        bits |= np.int64(1) << sg.messages_at(t).astype(np.int64)
    return bits


def _can_vary(rule: UpdateRule, in_slots, values) -> bool:
    """Whether the rule output varies over all value combinations of ``in_slots``."""
    S, C = rule.size, rule.cap
    states = {(0,) * S}
    for e in in_slots:
        vals = [s for s in range(S) if values[e] >> s & 1]
        nxt = set()
        for st in states:
            for v in vals:
                lst = list(st)
                lst[v] = min(lst[v] + 1, C)
                nxt.add(tuple(lst))
        states = nxt
    outs = {int(rule.lookup(np.array(st))) for st in states}
    return len(outs) > 1


def _alpha_lookup(alpha):
    if alpha is None:
        return None
    if isinstance(alpha, dict):
        table = {}
        for key, w in alpha.items():
            if isinstance(key, tuple) and len(key) == 2 and isinstance(key[0], tuple):
                table[(ChangePair(*key[0]), int(key[1]))] = float(w)
            else:
                table[ChangePair(*key)] = float(w)
        return table
    raise InputError("alpha must map change types to weights")


def run_marking(g: Graph | None, rule: UpdateRule, q0, t0: int, delta0: float, alpha, seed,
                sg: StoryGraph | None = None, t_max: int = 10_000) -> CascadeReport:
    """Marking exploration started from the changes at round t0 -> t0+1.

    ``alpha`` maps change types, either ``(ChangePair, chi)`` or bare
    ``ChangePair``, to Perron weights; a type missing from it uses the
    smallest given weight. Expansion fires when the marks of one type reach
    ``delta0**0.6 * alpha[type] * n``, explosion when spurious marks reach
    ``delta0**(2/3) * n``. Spurious marks take their change from the run.
    Pass ``sg`` to reuse an existing run (it must be at a fixed point).
    """
    if t0 < 0:
        raise ParameterError("t0 must be nonnegative")
    if not 0 < delta0 < 1:
        raise ParameterError("delta0 must lie in (0, 1)")
    if sg is None:
        if g is None:
            raise InputError("need a graph or a recorded run")
        sg, _ = wp_run(init_messages(g, q0, seed, rule), rule, t_max)
    g = sg.graph
    _require_fixed_point(sg, t0)
    n = g.n
    S = rule.size
    k0 = k0_threshold(n)
    deg = g.degrees()
    base = sg.messages_at(t0)
    final = sg.message
    nxt = sg.messages_at(t0 + 1)
    values = _values_after(sg, t0)
    weights = _alpha_lookup(alpha)
    floor = min(weights.values()) if weights else None
    expand_at = delta0 ** 0.6 * n
    explode_at = delta0 ** (2 / 3) * n

    # in-message counts at every vertex in round t0
    counts = np.bincount(g.src * S + base[g.rev], minlength=n * S).reshape(n, S)

    marked = np.zeros(g.n_directed, dtype=bool)
    seen = np.zeros(n, dtype=bool)
    queue: deque[tuple[int, bool]] = deque()
    type_counts: dict = {}
    stop = None
    duplicates = freaks = spurious = 0

    def weight(pair, chi):
        if weights is None:
            return None
        w = weights.get((pair, chi), weights.get(pair))
        return floor if w is None else w

    def mark(e: int, is_spurious: bool):
        nonlocal spurious, stop
        if marked[e]:
            return
        marked[e] = True
        queue.append((e, is_spurious))
        if is_spurious:
            spurious += 1
            if spurious >= explode_at and stop is None:
                stop = "explosion"
        old, new = int(base[e]), int(final[e])
        if old != new:
            pair = ChangePair(old, new)
            chi = int(base[g.rev[e]])
            key = (pair, chi)
            type_counts[key] = type_counts.get(key, 0) + 1
            w = weight(pair, chi)
            if w is not None and type_counts[key] >= expand_at * w and stop is None:
                stop = "expansion"

    for e in np.flatnonzero(base != nxt).tolist():
        mark(e, False)
    while queue and stop is None:
        e, _ = queue.popleft()
        x, y = int(g.src[e]), int(g.dst[e])
        out = range(g.indptr[y], g.indptr[y + 1])
        if deg[y] > k0 or seen[y]:
            if deg[y] > k0 and not seen[y]:
                freaks += 1
            else:
                duplicates += 1
            seen[y] = True
            for f in out:
                if marked[f]:
                    continue
                others = [int(g.rev[h]) for h in out if h != f]
                if _can_vary(rule, others, values):
                    mark(f, True)
                    if stop is not None:
                        break
            continue
        seen[y] = True
        vals = [s for s in range(S) if values[e] >> s & 1]
        a = int(base[e])
        for f in out:
            z = int(g.dst[f])
            if z == x:
                continue
            c = counts[y].copy()
            c[base[g.rev[f]]] -= 1  # drop z -> y
            c[a] -= 1  # drop x -> y
            outs = set()
            for v in vals:
                c[v] += 1
                outs.add(int(rule.lookup(c)))
                c[v] -= 1
            if len(outs) > 1:
                mark(f, False)
                if stop is not None:
                    break
    if stop is None:
        stop = "exhaustion"
    _, sizes = edge_components(g, marked)
    return CascadeReport(np.sort(sizes)[::-1], int(marked.sum()), stop, duplicates, freaks,
                         spurious, marked, type_counts, k0)


def alpha_from_report(types, alpha) -> dict:
    """Pair matrix types with the Perron vector from the change module."""
    return {t: float(w) for t, w in zip(types, alpha)}
