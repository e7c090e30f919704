"""The half-edge model: stories are drawn first, then matched consistently.

Every vertex gets Po(d) half-edges. Each half-edge carries an in-story
(i.i.d. from the Galton-Watson story law) and an initial out-message (i.i.d.
``q0``). Out-stories at times ``1..t0`` are then fixed by the rule applied to
the sibling in-stories. A half-edge with (in, out) = (a, b) may only be
matched to one with (in, out) = (b, a), so a consistent matching exists iff
the statistics match: ``m[a, b] == m[b, a]`` off the diagonal and ``m[a, a]``
even.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binomtest

from .dist import as_dist, capped_poisson_weights, iterates
from .errors import ConditioningError, FeasibilityError, InputError, ParameterError, SimplicityError
from .graph import Graph, StoryGraph, gen_gnp, init_messages, wp_run, wp_step
from .rng import as_generator
from .rules import UpdateRule
from .tree import sample_stories, support_levels

MAX_DP_STATES = 10**7


def story_codes(stories: np.ndarray, size: int) -> np.ndarray:
    """Integer code of each row (most significant entry first)."""
    stories = np.asarray(stories, dtype=np.int64)
    L = stories.shape[-1]
    if L * math.log2(max(size, 2)) > 62:
        raise FeasibilityError("stories too long to encode as 64-bit integers")
    radix = size ** np.arange(L - 1, -1, -1, dtype=np.int64)
    return stories @ radix


def decode_story(code: int, size: int, length: int) -> tuple[int, ...]:
    out = []
    for _ in range(length):
        code, r = divmod(int(code), size)
        out.append(r)
    return tuple(reversed(out))


def k0_threshold(n: int) -> float:
    """Degree cutoff ``11 ln ln n / ln ln ln n``, clamped to at least 20.

    The formula is asymptotic; for every practical n, ``ln ln ln n`` is at
    most about 1 and the raw value is meaningless, hence the clamp.
    """
    if n < 16:
        return 20.0
    lll = math.log(math.log(math.log(n)))
    if lll <= 1:
        return 20.0
    return max(11 * math.log(math.log(n)) / lll, 20.0)


# ensemble --------------------------------------------------------------------

def derive_out_stories(rule: UpdateRule, vertex: np.ndarray, in_story: np.ndarray,
                       out0: np.ndarray, n: int) -> np.ndarray:
    """Out-story of every half-edge: ``out[t] = rule(sibling in-messages at t-1)``."""
    m, L = in_story.shape
    S = rule.size
    out = np.empty((m, L), dtype=np.int8)
    out[:, 0] = out0
    vertex = np.asarray(vertex, dtype=np.int64)
    for t in range(1, L):
        inc = in_story[:, t - 1].astype(np.int64)
        counts = np.bincount(vertex * S + inc, minlength=n * S).reshape(n, S)
        idx = np.zeros(m, dtype=np.int64)
        for s in range(S):
            c = counts[vertex, s] - (inc == s)
            idx += np.minimum(c, rule.cap) * rule._radix[s]
        out[:, t] = rule._flat[idx]
    return out


@dataclass(eq=False)
class HalfEdgeEnsemble:
    """Half-edges sorted by vertex; row ``i`` of the story arrays is half-edge ``i``."""

    rule: UpdateRule
    d: float
    t0: int
    n: int
    vertex: np.ndarray
    in_story: np.ndarray
    out_story: np.ndarray
    info: dict = field(default_factory=dict)

    @classmethod
    def from_arrays(cls, rule, t0, n, vertex, in_story, out0, d=float("nan")):
        vertex = np.asarray(vertex, dtype=np.int64)
        order = np.argsort(vertex, kind="stable")
        vertex = vertex[order]
        in_story = np.asarray(in_story, dtype=np.int8).reshape(len(vertex), t0 + 1)[order]
        out0 = np.asarray(out0, dtype=np.int8)[order]
        if len(vertex) and (vertex.min() < 0 or vertex.max() >= n):
            raise InputError("half-edge vertex out of range")
        out = derive_out_stories(rule, vertex, in_story, out0, n)
        return cls(rule, d, t0, n, vertex, in_story, out)

    @property
    def m(self) -> int:
        return len(self.vertex)

    @property
    def out0(self) -> np.ndarray:
        return self.out_story[:, 0]

    @property
    def degrees(self) -> np.ndarray:
        return np.bincount(self.vertex, minlength=self.n)

    def in_codes(self):
        return story_codes(self.in_story, self.rule.size)

    def out_codes(self):
        return story_codes(self.out_story, self.rule.size)

    def check_out_stories(self) -> bool:
        again = derive_out_stories(self.rule, self.vertex, self.in_story, self.out0, self.n)
        return bool(np.array_equal(again, self.out_story))


def generate_ensemble(rule: UpdateRule, d: float, q0, t0: int, n: int, seed) -> HalfEdgeEnsemble:
    if t0 < 0:
        raise ParameterError("t0 must be nonnegative")
    if n < 1:
        raise ParameterError("n must be positive")
    if d < 0:
        raise ParameterError("d must be nonnegative")
    q0 = as_dist(q0, rule.size)
    rng = as_generator(seed)
    deg = rng.poisson(d, size=n)
    m = int(deg.sum())
    vertex = np.repeat(np.arange(n, dtype=np.int64), deg)
    in_story = sample_stories(rule, d, q0, t0, m, rng)
    out0 = rng.choice(rule.size, size=m, p=q0).astype(np.int8)
    out = derive_out_stories(rule, vertex, in_story, out0, n)
    return HalfEdgeEnsemble(rule, d, t0, n, vertex, in_story, out)


# statistics ------------------------------------------------------------------

@dataclass
class StoryStats:
    counts: dict  # (in_story tuple, out_story tuple) -> count
    m: int

    def get(self, a, b) -> int:
        return self.counts.get((tuple(a), tuple(b)), 0)


def pair_statistics(in_story: np.ndarray, out_story: np.ndarray) -> StoryStats:
    m = len(in_story)
    if m == 0:
        return StoryStats({}, 0)
    rows = np.concatenate([in_story, out_story], axis=1)
    uniq, cnt = np.unique(rows, axis=0, return_counts=True)
    L = in_story.shape[1]
    counts = {
        (tuple(int(x) for x in r[:L]), tuple(int(x) for x in r[L:])): int(c)
        for r, c in zip(uniq, cnt)
    }
    return StoryStats(counts, m)


def story_statistics(ens: HalfEdgeEnsemble) -> StoryStats:
    return pair_statistics(ens.in_story, ens.out_story)


def graph_statistics(sg: StoryGraph, t0: int) -> StoryStats:
    """Same statistics on a real graph: the half-edge at ``u`` of slot ``u -> v``
    has in-story ``story(v -> u)`` and out-story ``story(u -> v)``."""
    st = sg.stories(t0)
    return pair_statistics(st[sg.graph.rev], st)


def statistics_match(stats: StoryStats) -> bool:
    for (a, b), c in stats.counts.items():
        if a == b:
            if c % 2:
                return False
        elif stats.counts.get((b, a), 0) != c:
            return False
    return True


def expected_pair_probs(nu: dict) -> dict:
    """In- and out-story at one half-edge are independent with the same law."""
    return {(a, b): pa * pb for a, pa in nu.items() for b, pb in nu.items()}


@dataclass
class MatchReport:
    a_holds: bool
    max_dev_over_sqrt_n: float
    min_ratio: float
    max_ratio: float
    worst_pair: tuple | None


def match_and_deviations(stats: StoryStats, expected: dict, n: int, d: float,
                         min_q: float = 1e-4) -> MatchReport:
    """Statistics-matching flag and deviations of counts from ``d n q``.

    The additive deviation is over every pair in ``expected``; multiplicative
    ratios only over pairs with ``q >= min_q``.
    """
    missing = [k for k in stats.counts if k not in expected]
    if missing:
        raise InputError(f"story pair {missing[0]} observed but absent from the expected law")
    worst, worst_pair = 0.0, None
    lo, hi = math.inf, -math.inf
    for key, q in expected.items():
        mbar = d * n * q
        c = stats.counts.get(key, 0)
        dev = abs(c - mbar)
        if dev > worst:
            worst, worst_pair = dev, key
        if q >= min_q and mbar > 0:
            r = c / mbar
            lo, hi = min(lo, r), max(hi, r)
    if lo == math.inf:
        lo = hi = 1.0
    return MatchReport(statistics_match(stats), worst / math.sqrt(n), lo, hi, worst_pair)


# exact story law -------------------------------------------------------------

def _state_bound(nu, d, C, width) -> int:
    # capped count vectors live in a space of size (C+1)^width, and each story
    # with positive Poisson mass multiplies the reachable set by at most C+1
    active = sum(1 for p in nu.values() if d * p > 0)
    return min((C + 1) ** width, (C + 1) ** active)


def story_distribution_exact(rule: UpdateRule, d: float, q0, t: int) -> dict:
    """Exact law of the length-(t+1) story, as ``{story tuple: probability}``.

    Children's stories are i.i.d. from the previous level; by Poissonization
    the number of children with story ``w`` is Po(d nu(w)), independently
    over ``w``. Capping each of these counts at ``cap`` keeps every capped
    per-time count exact, so the parent's story law is a finite convolution
    over capped per-time count vectors.
    """
    if t < 0:
        raise ParameterError("t must be nonnegative")
    if d < 0:
        raise ParameterError("d must be nonnegative")
    q0 = as_dist(q0, rule.size)
    S, C = rule.size, rule.cap
    roots = [x for x in range(S) if q0[x] > 0]
    nu = {(x,): float(q0[x]) for x in roots}
    for level in range(1, t + 1):
        width = level * S
        bound = _state_bound(nu, d, C, width)
        if bound > MAX_DP_STATES:
            raise FeasibilityError(
                f"story DP may need up to {bound:.3g} count states; use Monte Carlo"
            )
        # states: rows of capped counts, column s*S + sym
        states = np.zeros((1, width), dtype=np.int16)
        probs = np.ones(1)
        for w, pw in sorted(nu.items()):
            weights = capped_poisson_weights(np.array([d * pw]), C)[0]
            cols = np.array([s * S + w[s] for s in range(level)])
            blocks, bprobs = [], []
            for k in range(C + 1):
                if weights[k] <= 0:
                    continue
                nxt = states.copy()
                nxt[:, cols] = np.minimum(nxt[:, cols] + k, C)
                blocks.append(nxt)
                bprobs.append(probs * weights[k])
            allst = np.concatenate(blocks)
            allp = np.concatenate(bprobs)
            uniq, inv = np.unique(allst, axis=0, return_inverse=True)
            probs = np.bincount(inv.reshape(-1), weights=allp, minlength=len(uniq))
            states = uniq
            if len(states) > MAX_DP_STATES:
                raise FeasibilityError(
                    f"story DP needs more than {MAX_DP_STATES} count states; use Monte Carlo"
                )
        tails = np.stack(
            [rule.lookup(states[:, s * S:(s + 1) * S]) for s in range(level)], axis=1
        )
        utail, inv = np.unique(tails, axis=0, return_inverse=True)
        ptail = np.bincount(inv.reshape(-1), weights=probs, minlength=len(utail))
        nu = {}
        for x in roots:
            for tail, pt in zip(utail, ptail):
                if pt > 0:
                    nu[(x,) + tuple(int(v) for v in tail)] = float(q0[x] * pt)
    return nu


def story_marginals(nu: dict, size: int) -> np.ndarray:
    L = len(next(iter(nu)))
    out = np.zeros((L, size))
    for w, p in nu.items():
        for i, x in enumerate(w):
            out[i, x] += p
    return out


def marginal_error(rule, d, q0, t) -> float:
    nu = story_distribution_exact(rule, d, q0, t)
    return float(np.abs(story_marginals(nu, rule.size) - iterates(rule, d, q0, t)).max())


# classes ---------------------------------------------------------------------

@dataclass
class ClassReport:
    S: list
    Q: list
    R: list
    R_below: int
    exponent: float


def qr_classes(rule: UpdateRule, d, q0, t0: int) -> ClassReport:
    """Sizes of the story-pair classes S_t, Q_t (off-diagonal), R_t (diagonal).

    ``R_below`` counts R_{-1}, ..., R_{t0-1}, where R_{-1} is the single
    empty pair.
    """
    levels = support_levels(rule, q0, t0, d)
    w = [len(x) for x in levels]
    S = [k * k for k in w]
    R = list(w)
    Q = [s - r for s, r in zip(S, R)]
    R_below = 1 + sum(R[:t0])
    return ClassReport(S, Q, R, R_below, (Q[t0] - 2 * R_below) / 4)


@dataclass
class MatchProbability:
    estimate: float
    hits: int
    trials: int
    ci: tuple[float, float]


def estimate_match_probability(rule, d, q0, t0, n, trials, seed) -> MatchProbability:
    if trials < 1:
        raise ParameterError("trials must be positive")
    rng = as_generator(seed)
    hits = 0
    for _ in range(trials):
        ens = generate_ensemble(rule, d, q0, t0, n, rng)
        hits += statistics_match(story_statistics(ens))
    ci = binomtest(hits, trials).proportion_ci(confidence_level=0.95, method="wilson")
    return MatchProbability(hits / trials, hits, trials, (float(ci.low), float(ci.high)))


# conditioning on matching statistics ----------------------------------------

class _ConditionedChain:
    """Metropolis chain on ensembles whose stationary law is the product prior
    restricted to matching statistics.

    A move redraws one or two vertices from the prior and is accepted iff the
    statistics still match (in the repair phase: iff the imbalance does not
    grow). Proposals are independent prior draws, so the acceptance ratio
    reduces to the indicator of the target event.
    """

    def __init__(self, rule, d, q0, t0, n, rng):
        self.rule, self.d, self.q0, self.t0, self.n, self.rng = rule, d, as_dist(q0, rule.size), t0, n, rng
        self.S = rule.size
        self.pool = np.zeros((0, t0 + 1), dtype=np.int8)
        self.pos = 0
        self.vin: list[np.ndarray] = []
        self.vout: list[np.ndarray] = []
        self.vkeys: list[list] = []
        self.counts: dict = {}
        self.bad = 0

    def _stories(self, k):
        if self.pos + k > len(self.pool):
            size = max(k, int(2 * self.d * self.n) + 1024)
            self.pool = sample_stories(self.rule, self.d, self.q0, self.t0, size, self.rng)
            self.pos = 0
        out = self.pool[self.pos:self.pos + k]
        self.pos += k
        return out

    def _draw_vertex(self):
        k = int(self.rng.poisson(self.d))
        ins = self._stories(k)
        out0 = self.rng.choice(self.S, size=k, p=self.q0).astype(np.int8)
        outs = derive_out_stories(self.rule, np.zeros(k, dtype=np.int64), ins, out0, 1)
        keys = list(zip(story_codes(ins, self.S).tolist(), story_codes(outs, self.S).tolist()))
        return ins, outs, keys

    def _term(self, key):
        a, b = key
        if a == b:
            return self.counts.get(key, 0) % 2
        # each unordered off-diagonal pair is scored once, from its smaller key
        lo, hi = (key, (b, a)) if a < b else ((b, a), key)
        return abs(self.counts.get(lo, 0) - self.counts.get(hi, 0))

    def _canon(self, key):
        a, b = key
        return key if a <= b else (b, a)

    def _apply(self, keys, sign):
        for key in keys:
            self.counts[key] = self.counts.get(key, 0) + sign

    def _delta(self, old_keys, new_keys):
        touched = {self._canon(k) for k in old_keys} | {self._canon(k) for k in new_keys}
        before = sum(self._term(k) for k in touched)
        self._apply(old_keys, -1)
        self._apply(new_keys, +1)
        after = sum(self._term(k) for k in touched)
        return after - before

    def init(self):
        for _ in range(self.n):
            ins, outs, keys = self._draw_vertex()
            self.vin.append(ins)
            self.vout.append(outs)
            self.vkeys.append(keys)
            self._apply(keys, +1)
        canon = {self._canon(k) for k in self.counts}
        self.bad = sum(self._term(k) for k in canon)

    def step(self, repair: bool) -> bool:
        size = 1 if self.rng.random() < 0.5 or self.n == 1 else 2
        vs = self.rng.choice(self.n, size=size, replace=False)
        draws = [self._draw_vertex() for _ in vs]
        old_keys = [k for v in vs for k in self.vkeys[v]]
        new_keys = [k for dr in draws for k in dr[2]]
        delta = self._delta(old_keys, new_keys)
        ok = delta <= 0 if repair else self.bad + delta == 0
        if not ok:
            self._apply(new_keys, -1)
            self._apply(old_keys, +1)
            return False
        self.bad += delta
        for v, (ins, outs, keys) in zip(vs, draws):
            self.vin[v], self.vout[v], self.vkeys[v] = ins, outs, keys
        return True

    def ensemble(self) -> HalfEdgeEnsemble:
        deg = np.array([len(x) for x in self.vin], dtype=np.int64)
        vertex = np.repeat(np.arange(self.n, dtype=np.int64), deg)
        L = self.t0 + 1
        ins = np.concatenate(self.vin) if vertex.size else np.zeros((0, L), dtype=np.int8)
        outs = np.concatenate(self.vout) if vertex.size else np.zeros((0, L), dtype=np.int8)
        return HalfEdgeEnsemble(self.rule, self.d, self.t0, self.n, vertex, ins, outs)


def conditioned_ensembles(rule, d, q0, t0, n, count, seed, rejection_tries: int = 200,
                          burn_in: int | None = None, thin: int | None = None,
                          max_repair: int | None = None):
    """``count`` ensembles whose statistics match.

    First tries whole-ensemble rejection (exact conditioning). If no draw
    matches within ``rejection_tries``, falls back to the Metropolis chain:
    a repair phase drives the imbalance to zero, then ``burn_in`` proposals
    are run and every ``thin``-th state is returned. ``info['method']`` on
    each ensemble records which route was taken.
    """
    rng = as_generator(seed)
    out = []
    for attempt in range(1, rejection_tries + 1):
        ens = generate_ensemble(rule, d, q0, t0, n, rng)
        if statistics_match(story_statistics(ens)):
            ens.info = {"method": "rejection", "attempts": attempt}
            out.append(ens)
            if len(out) == count:
                return out
    if out:
        # rejection works at this size; keep using it
        attempts = rejection_tries
        while len(out) < count:
            ens = generate_ensemble(rule, d, q0, t0, n, rng)
            attempts += 1
            if statistics_match(story_statistics(ens)):
                ens.info = {"method": "rejection", "attempts": attempts}
                out.append(ens)
        return out
    burn_in = 20 * n if burn_in is None else burn_in
    thin = 2 * n if thin is None else thin
    max_repair = 2000 * n if max_repair is None else max_repair
    chain = _ConditionedChain(rule, d, q0, t0, n, rng)
    chain.init()
    steps = 0
    while chain.bad > 0:
        chain.step(repair=True)
        steps += 1
        if steps >= max_repair:
            raise ConditioningError(
                f"could not reach matching statistics in {steps} repair moves", 0.0, steps
            )
    accepted = 0
    for _ in range(burn_in):
        accepted += chain.step(repair=False)
    total = burn_in
    while len(out) < count:
        for _ in range(thin):
            accepted += chain.step(repair=False)
        total += thin
        ens = chain.ensemble()
        ens.info = {"method": "mcmc", "repair_moves": steps, "acceptance": accepted / total}
        out.append(ens)
    return out


# matching --------------------------------------------------------------------

def _match_classes(in_codes, out_codes):
    """Consistency classes as ``[(members, dual members or None for diagonal)]``."""
    keys = np.stack([in_codes, out_codes], axis=1)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    order = np.argsort(inv, kind="stable")
    bounds = np.searchsorted(inv[order], np.arange(len(uniq) + 1))
    cls = {(int(a), int(b)): order[bounds[i]:bounds[i + 1]] for i, (a, b) in enumerate(uniq)}
    plan = []
    for (a, b), members in cls.items():
        if a == b:
            if len(members) % 2:
                raise InputError("statistics do not match: odd diagonal class")
            plan.append((members, None))
        elif a < b:
            dual = cls.get((b, a))
            if dual is None or len(dual) != len(members):
                raise InputError("statistics do not match: unequal dual classes")
            plan.append((members, dual))
        elif (b, a) not in cls:
            raise InputError("statistics do not match: class without a dual")
    return plan


def _consistent_partner(plan, m, rng) -> np.ndarray:
    partner = np.full(m, -1, dtype=np.int64)
    for members, dual in plan:
        if dual is None:
            perm = rng.permutation(members)
            partner[perm[0::2]] = perm[1::2]
            partner[perm[1::2]] = perm[0::2]
        else:
            perm = rng.permutation(dual)
            partner[members] = perm
            partner[perm] = members
    return partner


def _is_simple(vertex, partner, n) -> bool:
    u = vertex
    v = vertex[partner]
    if (u == v).any():
        return False
    keep = u < v
    key = u[keep] * n + v[keep]
    return len(np.unique(key)) == len(key)


def random_consistent_matching(ens: HalfEdgeEnsemble, seed, max_attempts: int = 100_000) -> np.ndarray:
    """Partner index of every half-edge for a uniform consistent simple matching."""
    rng = as_generator(seed)
    S = ens.rule.size
    plan = _match_classes(story_codes(ens.in_story, S), story_codes(ens.out_story, S))
    for attempt in range(1, max_attempts + 1):
        partner = _consistent_partner(plan, ens.m, rng)
        if _is_simple(ens.vertex, partner, ens.n):
            return partner
    raise SimplicityError(f"no simple matching in {max_attempts} attempts", max_attempts)


def sample_matching(ens: HalfEdgeEnsemble, seed, max_attempts: int = 100_000) -> StoryGraph:
    """Match half-edges and return the graph with every directed story.

    The story on ``u -> v`` is the out-story of the half-edge at ``u``.
    """
    if not statistics_match(story_statistics(ens)):
        raise InputError("statistics do not match; no consistent matching exists")
    partner = random_consistent_matching(ens, seed, max_attempts)
    u = ens.vertex
    v = ens.vertex[partner]
    keep = u < v
    g = Graph.from_edges(ens.n, np.stack([u[keep], v[keep]], axis=1))
    keys = g.src * ens.n + g.dst
    slot = np.searchsorted(keys, u * ens.n + v)
    history = np.empty((ens.t0 + 1, g.n_directed), dtype=np.int8)
    history[:, slot] = ens.out_story.T
    return StoryGraph(g, history)


def verify_wp_consistency(sg: StoryGraph, rule: UpdateRule, t0: int) -> bool:
    """Rerun ``t0`` WP rounds from the round-0 messages and compare every entry."""
    if t0 > sg.horizon:
        raise InputError(f"graph carries stories up to round {sg.horizon}, asked for {t0}")
    msg = sg.messages_at(0)
    for t in range(1, t0 + 1):
        msg = wp_step(sg.graph, rule, msg)
        if not np.array_equal(msg, sg.messages_at(t)):
            return False
    return True


# model comparison ------------------------------------------------------------

def _compilations(vertex, in_codes, out0, n, S, k0):
    """Histogram of sorted input multisets (in-story, out-message) over vertices of degree <= k0."""
    deg = np.bincount(vertex, minlength=n)
    code = in_codes * S + out0.astype(np.int64)
    order = np.lexsort((code, vertex))
    code = code[order]
    ptr = np.concatenate([[0], np.cumsum(deg)])
    hist: dict = {}
    for v in np.flatnonzero(deg <= k0):
        key = tuple(code[ptr[v]:ptr[v + 1]].tolist())
        hist[key] = hist.get(key, 0) + 1
    return hist, int((deg > k0).sum())


@dataclass
class ModelComparison:
    n: int
    t0: int
    k0: float
    pairs: list  # (in_story, out_story, expected, count_graph, count_halfedge)
    graph_dev_over_sqrt_n: float
    halfedge_dev_over_sqrt_n: float
    high_degree_graph: int
    high_degree_halfedge: int
    l1_discrepancy: float
    halfedge_match: bool
    compilations_graph: dict = field(repr=False, default_factory=dict)
    compilations_halfedge: dict = field(repr=False, default_factory=dict)


def compare_models(rule: UpdateRule, d: float, q0, t0: int, n: int, seed,
                   min_q: float = 1e-4) -> ModelComparison:
    """Story statistics and local input histograms of the real graph after
    ``t0`` WP rounds against an (unconditioned) half-edge ensemble."""
    if n < 1:
        raise ParameterError("n must be positive")
    q0 = as_dist(q0, rule.size)
    S = rule.size
    rng = as_generator(seed)
    g = gen_gnp(n, d, rng)
    sg, _ = wp_run(init_messages(g, q0, rng, rule), rule, t0, record_stories=True,
                   stop_at_fixed_point=False)
    gstats = graph_statistics(sg, t0)
    ens = generate_ensemble(rule, d, q0, t0, n, rng)
    hstats = story_statistics(ens)
    nu = story_distribution_exact(rule, d, q0, t0)
    expected = expected_pair_probs(nu)
    grep = match_and_deviations(gstats, expected, n, d, min_q)
    hrep = match_and_deviations(hstats, expected, n, d, min_q)
    pairs = [
        (a, b, d * n * q, gstats.counts.get((a, b), 0), hstats.counts.get((a, b), 0))
        for (a, b), q in sorted(expected.items())
    ]
    k0 = k0_threshold(n)
    st = sg.stories(t0)
    g_in = story_codes(st[g.rev], S)
    hg, big_g = _compilations(g.src, g_in, st[:, 0], n, S, k0)
    hh, big_h = _compilations(ens.vertex, ens.in_codes(), ens.out0, n, S, k0)
    keys = set(hg) | set(hh)
    l1 = sum(abs(hg.get(k, 0) - hh.get(k, 0)) for k in keys) / n
    return ModelComparison(n, t0, k0, pairs, grep.max_dev_over_sqrt_n, hrep.max_dev_over_sqrt_n,
                           big_g, big_h, l1, statistics_match(hstats), hg, hh)
