"""Sparse graphs, the synchronous WP engine and k-core tools.

Directed edges live in CSR order: the slots ``indptr[v]:indptr[v+1]`` are
the directed edges ``v -> dst[slot]``, and ``rev[slot]`` is the slot of the
reverse edge. A message array has one entry per slot, so ``msg[e]`` is the
message sent along ``e`` and ``msg[rev[e]]`` is the message ``e``'s tail
receives from its head.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .dist import as_dist
from .errors import InputError, ParameterError, StateError
from .rng import as_generator
from .rules import UpdateRule

MAX_CYCLE = 64


@dataclass(eq=False)
class Graph:
    n: int
    indptr: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    rev: np.ndarray

    @classmethod
    def from_edges(cls, n: int, edges) -> "Graph":
        """Simple undirected graph on ``0..n-1``; rejects loops and repeated edges."""
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= n):
            raise InputError("edge endpoint out of range")
        if (e[:, 0] == e[:, 1]).any():
            raise InputError("self-loops are not allowed")
        lo, hi = np.minimum(e[:, 0], e[:, 1]), np.maximum(e[:, 0], e[:, 1])
        if np.unique(lo * n + hi).size != len(e):
            raise InputError("multi-edges are not allowed")
        src = np.concatenate([e[:, 0], e[:, 1]])
        dst = np.concatenate([e[:, 1], e[:, 0]])
        key = src * n + dst
        order = np.argsort(key, kind="stable")
        src, dst, key = src[order], dst[order], key[order]
        rev = np.searchsorted(key, dst * n + src)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
        return cls(n, indptr, src, dst, rev)

    @property
    def n_directed(self) -> int:
        return len(self.dst)

    @property
    def n_edges(self) -> int:
        return len(self.dst) // 2

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def edges(self) -> np.ndarray:
        """Undirected edges as rows ``(u, v)`` with ``u < v``, sorted."""
        mask = self.src < self.dst
        return np.stack([self.src[mask], self.dst[mask]], axis=1)

    def neighbors(self, v: int) -> np.ndarray:
        return self.dst[self.indptr[v]:self.indptr[v + 1]]

    def adjacency_lists(self) -> list[list[int]]:
        dst = self.dst.tolist()
        ptr = self.indptr.tolist()
        return [dst[ptr[v]:ptr[v + 1]] for v in range(self.n)]

    def slot(self, u: int, v: int) -> int:
        lo, hi = self.indptr[u], self.indptr[u + 1]
        i = lo + np.searchsorted(self.dst[lo:hi], v)
        if i >= hi or self.dst[i] != v:
            raise InputError(f"no edge {u}-{v}")
        return int(i)


@dataclass(eq=False)
class MessagedGraph:
    graph: Graph
    message: np.ndarray
    round: int = 0


@dataclass(eq=False)
class StoryGraph:
    """A graph with the message history of every directed edge.

    ``history[t, e]`` is the message along slot ``e`` after ``t`` rounds.
    ``fixed_point`` means the last recorded round changed nothing, so every
    later round repeats it. ``cycle_period`` is set when the run entered a
    periodic orbit instead.
    """

    graph: Graph
    history: np.ndarray
    fixed_point: bool = False
    cycle_period: int | None = None
    changes: list[int] = field(default_factory=list)
    first_round: int = 0

    @property
    def horizon(self) -> int:
        return self.first_round + len(self.history) - 1

    @property
    def message(self) -> np.ndarray:
        return self.history[-1]

    def messages_at(self, t: int) -> np.ndarray:
        if t < self.first_round:
            raise InputError(f"round {t} was not recorded")
        if t <= self.horizon:
            return self.history[t - self.first_round]
        if self.fixed_point:
            return self.history[-1]
        P = self.cycle_period
        if P and self.horizon - P >= self.first_round:
            return self.history[self.horizon - P + (t - self.horizon) % P - self.first_round]
        raise InputError(f"round {t} is beyond the recorded horizon {self.horizon}")

    def stories(self, t: int | None = None) -> np.ndarray:
        """Array of shape ``(n_directed, t+1)``: the story of every slot up to ``t``."""
        t = self.horizon if t is None else t
        return np.stack([self.messages_at(s) for s in range(t + 1)], axis=1)


def _pair_from_index(k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # pairs (i, j), i < j, enumerated as k = j(j-1)/2 + i
    j = np.floor((1 + np.sqrt(1 + 8 * k.astype(np.float64))) / 2).astype(np.int64)
    j -= (j * (j - 1) // 2 > k)
    j += ((j + 1) * j // 2 <= k)
    i = k - j * (j - 1) // 2
    return i, j


def gen_gnp(n: int, d: float, seed) -> Graph:
    """G(n, d/n) by geometric skipping over the pair sequence."""
    if n < 1:
        raise ParameterError("n must be positive")
    if d < 0 or d > n:
        raise ParameterError(f"need 0 <= d <= n, got d={d}, n={n}")
    rng = as_generator(seed)
    p = d / n
    total = n * (n - 1) // 2
    if p == 0 or total == 0:
        return Graph.from_edges(n, np.zeros((0, 2), dtype=np.int64))
    if p >= 1:
        picks = np.arange(total, dtype=np.int64)
    else:
        chunks = []
        pos = -1
        batch = int(total * p * 1.05) + 64
        while pos < total:
            gaps = rng.geometric(p, size=batch).astype(np.int64)
            idx = pos + np.cumsum(gaps)
            chunks.append(idx[idx < total])
            pos = int(idx[-1])
            batch = max(64, int((total - pos) * p * 1.05) + 64)
        picks = np.concatenate(chunks)
    i, j = _pair_from_index(picks)
    return Graph.from_edges(n, np.stack([i, j], axis=1))


def init_messages(g: Graph, q0, seed, rule: UpdateRule | None = None) -> MessagedGraph:
    """Draw every directed message i.i.d. from ``q0``."""
    q0 = as_dist(q0, None if rule is None else rule.size)
    rng = as_generator(seed)
    msg = rng.choice(len(q0), size=g.n_directed, p=q0).astype(np.int8)
    return MessagedGraph(g, msg, 0)


def wp_step(g: Graph, rule: UpdateRule, msg: np.ndarray) -> np.ndarray:
    """One synchronous round computed from the snapshot ``msg``."""
    S = rule.size
    incoming = msg[g.rev].astype(np.int64)
    counts = np.bincount(g.src * S + incoming, minlength=g.n * S).reshape(g.n, S)
    idx = np.zeros(g.n_directed, dtype=np.int64)
    for s in range(S):
        c = counts[g.src, s] - (incoming == s)
        idx += np.minimum(c, rule.cap) * rule._radix[s]
    return rule._flat[idx]


def wp_run(mg: MessagedGraph, rule: UpdateRule, t_max: int, record_stories: bool = True,
           stop_at_fixed_point: bool = True):
    """Run synchronous WP for up to ``t_max`` rounds.

    Stops early at the first round with no change (or when a periodic orbit
    of period <= 64 is detected). Returns ``(StoryGraph, changes)`` where
    ``changes[r-1]`` counts directed messages that differ between rounds
    ``r-1`` and ``r``.
    """
    if t_max < 0:
        raise ParameterError("t_max must be nonnegative")
    g = mg.graph
    msg = mg.message.astype(np.int8)
    history = [msg]
    changes: list[int] = []
    seen: dict[bytes, int] = {msg.tobytes(): 0}
    fixed = g.n_directed == 0
    period = None
    for t in range(1, t_max + 1):
        if fixed and stop_at_fixed_point:
            break
        new = wp_step(g, rule, msg)
        changed = int((new != msg).sum())
        changes.append(changed)
        msg = new
        if record_stories:
            history.append(msg)
        else:
            history[0] = msg
        fixed = changed == 0
        if fixed:
            if stop_at_fixed_point:
                break
            continue
        key = msg.tobytes()
        prev = seen.get(key)
        if prev is not None and t - prev <= MAX_CYCLE:
            period = t - prev
            break
        seen[key] = t
        for old in [k for k, r in seen.items() if r < t - MAX_CYCLE]:
            del seen[old]
    first = 0 if record_stories else len(changes)
    sg = StoryGraph(g, np.array(history, dtype=np.int8), fixed_point=fixed,
                    cycle_period=period, changes=changes, first_round=first)
    return sg, changes


def changes_between(sg: StoryGraph, s: int, t: int) -> int:
    """Number of directed edges whose message differs between rounds s and t."""
    return int((sg.messages_at(s) != sg.messages_at(t)).sum())


def run_to_fixed_point(g: Graph, rule: UpdateRule, q0, seed, t_max: int = 10_000):
    mg = init_messages(g, q0, seed, rule)
    return wp_run(mg, rule, t_max, record_stories=True)


def extract_core_wp(sg: StoryGraph, k: int, one: int = 1) -> np.ndarray:
    """Vertices receiving at least ``k`` messages equal to ``one`` at the fixed point."""
    if not sg.fixed_point:
        raise StateError("story graph is not at a WP fixed point")
    g = sg.graph
    incoming_one = (sg.message[g.rev] == one).astype(np.int64)
    received = np.bincount(g.src, weights=incoming_one, minlength=g.n)
    return np.flatnonzero(received >= k)


def peel_kcore(g: Graph, k: int) -> np.ndarray:
    """k-core by repeatedly deleting vertices of degree < k (queue-based)."""
    if k < 1:
        raise ParameterError("k must be at least 1")
    adj = g.adjacency_lists()
    deg = [len(a) for a in adj]
    removed = [False] * g.n
    queue = deque(v for v in range(g.n) if deg[v] < k)
    for v in queue:
        removed[v] = True
    while queue:
        v = queue.popleft()
        for w in adj[v]:
            if not removed[w]:
                deg[w] -= 1
                if deg[w] < k:
                    removed[w] = True
                    queue.append(w)
    return np.array([v for v in range(g.n) if not removed[v]], dtype=np.int64)


def _on_short_cycle(adj, u: int, v: int, max_len: int) -> bool:
    # is there a u-v path of length <= max_len - 1 avoiding the edge uv?
    budget = max_len - 1
    if budget < 2:
        return False
    ra, rb = budget // 2, budget - budget // 2

    def ball(x, other, radius):
        seen = {x: 0}
        frontier = [x]
        for r in range(radius):
            nxt = []
            for y in frontier:
                for z in adj[y]:
                    if (y == x and z == other) or (y == other and z == x):
                        continue
                    if z not in seen:
                        seen[z] = r + 1
                        nxt.append(z)
            frontier = nxt
        return seen

    bu = ball(u, v, ra)
    if v in bu:
        return True
    bv = ball(v, u, rb)
    return any(z in bv for z in bu)


def short_cycle_vertices(g: Graph, max_len: int) -> np.ndarray:
    """Vertices lying on some cycle of length at most ``max_len``."""
    if max_len < 3 or g.n_edges == 0:
        return np.zeros(0, dtype=np.int64)
    adj = g.adjacency_lists()
    on = np.zeros(g.n, dtype=bool)
    for u, v in g.edges().tolist():
        if on[u] and on[v]:
            continue
        if _on_short_cycle(adj, u, v, max_len):
            on[u] = on[v] = True
    return np.flatnonzero(on)


def count_near_short_cycles(g: Graph, t0: int) -> int:
    """|C_t0|: vertices within distance t0 of a cycle of length <= t0."""
    if t0 < 0:
        raise ParameterError("t0 must be nonnegative")
    mark = np.zeros(g.n, dtype=bool)
    mark[short_cycle_vertices(g, t0)] = True
    for _ in range(t0):
        grown = mark.copy()
        grown[g.dst[mark[g.src]]] = True
        if (grown == mark).all():
            break
        mark = grown
    return int(mark.sum())


def edge_components(g: Graph, edge_mask: np.ndarray):
    """Connected components of the subgraph formed by the selected directed slots.

    Returns ``(labels_per_slot, sizes)`` where sizes count undirected edges.
    Unselected slots get label -1.
    """
    sel = edge_mask | edge_mask[g.rev]
    und = sel & (g.src < g.dst)
    u, v = g.src[und], g.dst[und]
    if len(u) == 0:
        return np.full(g.n_directed, -1), np.zeros(0, dtype=np.int64)
    A = csr_matrix((np.ones(len(u)), (u, v)), shape=(g.n, g.n))
    _, vlab = connected_components(A, directed=False)
    used, comp = np.unique(vlab[u], return_inverse=True)
    sizes = np.bincount(comp, minlength=len(used))
    labels = np.full(g.n_directed, -1)
    labels[sel] = np.searchsorted(used, vlab[g.src[sel]])
    return labels, sizes


# file formats --------------------------------------------------------------

def write_edge_list(g: Graph, path) -> None:
    with open(path, "w") as fh:
        for u, v in g.edges().tolist():
            fh.write(f"{u} {v}\n")


def read_edge_list(path, n: int | None = None) -> Graph:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                u, v = line.split()[:2]
                rows.append((int(u), int(v)))
    edges = np.array(rows, dtype=np.int64).reshape(-1, 2)
    if n is None:
        n = int(edges.max()) + 1 if len(edges) else 0
    return Graph.from_edges(n, edges)


def write_messaged(mg: MessagedGraph, path, alphabet) -> None:
    g = mg.graph
    with open(path, "w") as fh:
        for e in np.flatnonzero(g.src < g.dst).tolist():
            fh.write(f"{g.src[e]} {g.dst[e]} {alphabet.name(mg.message[e])} "
                     f"{alphabet.name(mg.message[g.rev[e]])}\n")


def write_stories(sg: StoryGraph, path, alphabet, t: int | None = None) -> None:
    st = sg.stories(t)
    g = sg.graph
    with open(path, "w") as fh:
        for e in range(g.n_directed):
            story = ",".join(alphabet.name(x) for x in st[e])
            fh.write(f"{g.src[e]} {g.dst[e]} {story}\n")
