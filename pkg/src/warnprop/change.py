"""The change branching process and its typed transition matrix.

A change travels along a directed edge ``x -> y``: the message ``x`` sends
flips from ``old`` to ``new``. The receiving vertex ``y`` has in-messages
``M ~ Po(d p)`` from its other neighbours and sends ``chi = rule(M)`` back
to ``x``. For every element ``e`` of ``M`` the message ``y`` sends to that
neighbour flips from ``rule(M - e + old)`` to ``rule(M - e + new)``; when the
two differ this is a child change of type ``((old', new'), e)``.

The Markov type of the process is therefore ``(ChangePair, chi)``. The
coarser matrix indexed by change pairs alone is obtained by averaging the
parent's ``chi`` over ``p``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .dist import as_dist, capped_count_law
from .errors import ConditioningError, InputError, NumericalError, ParameterError
from .rng import as_generator, stream
from .rules import UpdateRule
from .tree import ChangePair, potential_changes

MAX_ATTEMPTS = 10**6
MAX_BATCH = 200_000


class TypeSpace:
    """Dense indexing of all types ``(ChangePair(a, b), chi)`` with ``a != b``."""

    def __init__(self, size: int):
        self.size = size
        self.types = [
            (ChangePair(a, b), c)
            for a in range(size) for b in range(size) if a != b for c in range(size)
        ]
        self._index = {t: i for i, t in enumerate(self.types)}
        # code lookup: (old, new, chi) -> index, -1 on the diagonal
        table = np.full((size, size, size), -1, dtype=np.int64)
        for i, (pair, c) in enumerate(self.types):
            table[pair.old, pair.new, c] = i
        self.table = table

    def __len__(self):
        return len(self.types)

    def index(self, pair, chi) -> int:
        return self._index[(ChangePair(*pair), int(chi))]


def _unit(S, i):
    u = np.zeros(S, dtype=np.int64)
    u[i] = 1
    return u


def draw_conditioned(rule: UpdateRule, lam: np.ndarray, chi: int, count: int, rng,
                     max_attempts: int = MAX_ATTEMPTS):
    """``count`` draws of ``M ~ Po(lam)`` conditioned on ``rule(M) == chi``.

    Returns ``(M, acceptance_rate)``. Raises ConditioningError if no draw is accepted
    within ``max_attempts``.
    """
    S = rule.size
    parts = []
    got = 0
    attempts = 0
    batch = min(MAX_BATCH, max(64, 2 * count))
    while got < count:
        M = rng.poisson(lam, size=(batch, S))
        ok = rule.lookup(M) == chi
        attempts += batch
        acc = M[ok]
        parts.append(acc)
        got += len(acc)
        if got == 0:
            if attempts >= max_attempts:
                raise ConditioningError(
                    f"no multiset with output {chi} in {attempts} attempts", 0.0, attempts
                )
            batch = min(MAX_BATCH, 2 * batch)
        else:
            rate = got / attempts
            batch = int(min(MAX_BATCH, max(64, 1.2 * (count - got) / rate)))
    M = np.concatenate(parts)[:count] if parts else np.zeros((0, S), dtype=np.int64)
    return M, got / attempts


def children_of(rule: UpdateRule, M: np.ndarray, pair, space: TypeSpace):
    """Child changes for each row of ``M`` (uncapped in-message counts).

    Returns arrays ``(row, type_index, multiplicity)``. Each row produces at
    most one child type per symbol ``e``, with multiplicity ``M[row, e]``.
    """
    M = np.atleast_2d(np.asarray(M, dtype=np.int64))
    S = rule.size
    old_u, new_u = _unit(S, pair[0]), _unit(S, pair[1])
    rows, kinds, mult = [], [], []
    for e in range(S):
        has = np.flatnonzero(M[:, e] > 0)
        if not len(has):
            continue
        base = M[has] - _unit(S, e)
        o = rule.lookup(base + old_u)
        n = rule.lookup(base + new_u)
        flip = o != n
        if not flip.any():
            continue
        rows.append(has[flip])
        kinds.append(space.table[o[flip], n[flip], e])
        mult.append(M[has[flip], e])
    if not rows:
        z = np.zeros(0, dtype=np.int64)
        return z, z, z
    return np.concatenate(rows), np.concatenate(kinds), np.concatenate(mult)


def sample_change_step(rule: UpdateRule, d: float, p, change, chi, seed) -> dict:
    """Children of one change of type ``(change, chi)`` as ``{(ChangePair, chi'): count}``."""
    p = as_dist(p, rule.size, atol=1e-9)
    change = ChangePair(*(rule.alphabet.index(s) if isinstance(s, str) else int(s) for s in change))
    if change.old == change.new:
        raise InputError("a change needs old != new")
    chi = rule.alphabet.index(chi) if isinstance(chi, str) else int(chi)
    space = TypeSpace(rule.size)
    M, _ = draw_conditioned(rule, d * p, chi, 1, as_generator(seed))
    _, kinds, mult = children_of(rule, M, change, space)
    return {space.types[k]: int(m) for k, m in zip(kinds, mult)}


def _feasible_chi(rule, d, p):
    """Exact law of ``rule(Po(d p))`` when enumerable, else None."""
    try:
        law = capped_count_law(rule, d * p)
    except Exception:
        return None
    return np.bincount(rule._flat, weights=law, minlength=rule.size)


@dataclass
class TransitionMatrix:
    """``entries[i, j]``: expected children of type ``i`` per parent of type ``j``."""

    types: list
    entries: np.ndarray
    stderr: np.ndarray
    trials: int
    infeasible: list = field(default_factory=list)
    acceptance: dict = field(default_factory=dict)
    pairs: list = field(default_factory=list)
    aggregated: np.ndarray | None = None

    def row_sums(self) -> np.ndarray:
        """Expected number of children per parent type (column sums of ``entries``)."""
        return self.entries.sum(axis=0)


def _root_types(rule, d, p, changes):
    S = rule.size
    if changes is None:
        changes = potential_changes(rule, d, p).pairs
    changes = sorted(ChangePair(*c) for c in changes)
    if not changes:
        raise InputError("no potential changes for this rule and distribution")
    for c in changes:
        if c.old == c.new:
            raise InputError("changes need old != new")
    return [(c, x) for c in changes for x in range(S) if p[x] > 0]


def _aggregate(rule, p, types, entries, infeasible_set):
    pairs = sorted({t[0] for t in types})
    pidx = {c: i for i, c in enumerate(pairs)}
    agg = np.zeros((len(pairs), len(pairs)))
    weight = np.zeros(len(pairs))
    for j, (c, chi) in enumerate(types):
        if j in infeasible_set:
            continue
        w = p[chi]
        weight[pidx[c]] += w
        for i, (c2, _) in enumerate(types):
            agg[pidx[c2], pidx[c]] += w * entries[i, j]
    nz = weight > 0
    agg[:, nz] /= weight[nz]
    return pairs, agg


def exact_transition_matrix(rule: UpdateRule, d: float, p, changes=None) -> TransitionMatrix:
    """Enumeration oracle over capped count vectors.

    By Poisson size-biasing, ``E[#{e in M} f(M - e) ; rule(M) = chi]`` equals
    ``lam_e E[f(M) ; rule(M + e) = chi]``, so every entry is a finite sum.
    """
    if d < 0:
        raise ParameterError("d must be nonnegative")
    p = as_dist(p, rule.size, atol=1e-9)
    S, C = rule.size, rule.cap
    lam = d * p
    law = capped_count_law(rule, lam)
    states = np.array(np.unravel_index(np.arange(rule.n_states), (C + 1,) * S)).T
    out0 = rule._flat
    pchi = np.bincount(out0, weights=law, minlength=S)
    space = TypeSpace(S)

    def plus(i):
        return rule.lookup(states + _unit(S, i))

    plus_sym = [plus(i) for i in range(S)]
    # closure of types reachable from the roots
    roots = _root_types(rule, d, p, changes)
    order, seen = [], set()
    queue = deque(roots)
    cols = {}
    infeasible = []
    while queue:
        t = queue.popleft()
        if t in seen:
            continue
        seen.add(t)
        order.append(t)
        (a, b), chi = t
        col = {}
        if pchi[chi] <= 0:
            infeasible.append(t)
        else:
            for e in range(S):
                if lam[e] <= 0:
                    continue
                cond = plus_sym[e] == chi
                o, n = plus_sym[a], plus_sym[b]
                sel = cond & (o != n)
                if not sel.any():
                    continue
                w = np.bincount(o[sel] * S + n[sel], weights=law[sel], minlength=S * S)
                for code in np.flatnonzero(w > 0):
                    child = (ChangePair(int(code // S), int(code % S)), e)
                    col[child] = lam[e] * w[code] / pchi[chi]
                    if child not in seen:
                        queue.append(child)
        cols[t] = col
    idx = {t: i for i, t in enumerate(order)}
    T = np.zeros((len(order), len(order)))
    for t, col in cols.items():
        for child, v in col.items():
            T[idx[child], idx[t]] = v
    inf_idx = {idx[t] for t in infeasible}
    pairs, agg = _aggregate(rule, p, order, T, inf_idx)
    return TransitionMatrix(order, T, np.zeros_like(T), 0, [idx[t] for t in infeasible],
                            {}, pairs, agg)


def estimate_transition_matrix(rule: UpdateRule, d: float, p, trials: int, seed,
                               changes=None) -> TransitionMatrix:
    """Monte-Carlo transition matrix over the types reachable from the roots.

    Root types are ``(c, chi)`` for every potential change ``c`` and every
    ``chi`` in the support of ``p``; the set is closed under observed
    children. Types whose conditioning event is impossible (exactly, when
    the count law is enumerable, or after the attempt cap) get a zero
    column and are listed in ``infeasible``.
    """
    if trials < 1:
        raise ParameterError("trials must be positive")
    if d < 0:
        raise ParameterError("d must be nonnegative")
    p = as_dist(p, rule.size, atol=1e-9)
    space = TypeSpace(rule.size)
    exact_chi = _feasible_chi(rule, d, p)
    roots = _root_types(rule, d, p, changes)
    order, seen = [], set()
    queue = deque(roots)
    cols, infeasible, acceptance = {}, [], {}
    while queue:
        t = queue.popleft()
        if t in seen:
            continue
        seen.add(t)
        order.append(t)
        pair, chi = t
        k = space.index(pair, chi)
        if exact_chi is not None and exact_chi[chi] <= 0:
            infeasible.append(t)
            cols[t] = ({}, {})
            continue
        rng = stream(seed, "matrix", k)
        try:
            M, rate = draw_conditioned(rule, d * p, chi, trials, rng)
        except ConditioningError as exc:
            infeasible.append(t)
            acceptance[t] = exc.acceptance_rate
            cols[t] = ({}, {})
            continue
        acceptance[t] = rate
        _, kinds, mult = children_of(rule, M, pair, space)
        s1 = np.bincount(kinds, weights=mult, minlength=len(space))
        s2 = np.bincount(kinds, weights=mult.astype(float) ** 2, minlength=len(space))
        mean, sq = {}, {}
        for ci in np.flatnonzero(s1 > 0):
            child = space.types[ci]
            mean[child] = s1[ci] / trials
            sq[child] = s2[ci] / trials
            if child not in seen:
                queue.append(child)
        cols[t] = (mean, sq)
    idx = {t: i for i, t in enumerate(order)}
    T = np.zeros((len(order), len(order)))
    SE = np.zeros_like(T)
    for t, (mean, sq) in cols.items():
        for child, m in mean.items():
            var = max(sq[child] - m * m, 0.0)
            T[idx[child], idx[t]] = m
            SE[idx[child], idx[t]] = np.sqrt(var / trials)
    inf_idx = {idx[t] for t in infeasible}
    pairs, agg = _aggregate(rule, p, order, T, inf_idx)
    return TransitionMatrix(order, T, SE, trials, [idx[t] for t in infeasible],
                            acceptance, pairs, agg)


# spectral analysis -----------------------------------------------------------

@dataclass
class SubcriticalityReport:
    rho: float
    alpha: np.ndarray
    gamma: float
    verdict: str
    ci: tuple[float, float]
    iterations: int
    residual: float


def perron(A: np.ndarray, epsilon: float = 1e-9, tol: float = 1e-11, max_iter: int = 100_000):
    """Perron root and L1-normalised positive eigenvector of ``A + epsilon``.

    Power iteration runs on ``A + epsilon + I``: same eigenvectors, and the
    shift makes the Perron root strictly dominant in modulus even when ``A``
    is periodic.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InputError("matrix must be square")
    if (A < 0).any() or not np.isfinite(A).all():
        raise InputError("matrix entries must be finite and nonnegative")
    if epsilon <= 0:
        raise ParameterError("epsilon must be positive")
    n = A.shape[0]
    if n == 0:
        raise InputError("empty matrix")
    B = A + epsilon
    x = np.full(n, 1.0 / n)
    for it in range(1, max_iter + 1):
        y = B @ x + x
        y /= y.sum()
        Bx = B @ y
        rho = float(Bx.sum())
        res = float(np.abs(Bx - rho * y).sum())
        x = y
        if res <= tol * max(1.0, rho):
            return rho, x, it, res
    raise NumericalError(f"power iteration did not converge in {max_iter} steps (residual {res:.3g})")


def spectral_radius(T, epsilon: float = 1e-9, margin: float = 0.02, boot: int = 200,
                    seed=0) -> SubcriticalityReport:
    """Perron analysis of ``T + epsilon`` with a parametric bootstrap CI.

    ``T`` is a TransitionMatrix (the CI resamples entries as independent
    normals with their standard errors, clipped at 0) or a plain array (CI
    degenerates to the point estimate).
    """
    if isinstance(T, TransitionMatrix):
        A, SE = T.entries, T.stderr
    else:
        A = np.asarray(T, dtype=float)
        SE = np.zeros_like(A)
    rho, alpha, it, res = perron(A, epsilon)
    if (SE > 0).any() and boot > 0:
        rng = as_generator(seed)
        reps = []
        for _ in range(boot):
            Ab = np.clip(A + rng.normal(size=A.shape) * SE, 0.0, None)
            # only the root is needed here; eigvals avoids slow power
            # iteration on nearly degenerate replicates
            reps.append(float(np.max(np.linalg.eigvals(Ab + epsilon).real)))
        lo, hi = (float(x) for x in np.quantile(reps, [0.025, 0.975]))
        lo, hi = min(lo, rho), max(hi, rho)
    else:
        lo = hi = rho
    if hi < 1 - margin:
        verdict = "subcritical"
    elif lo > 1:
        verdict = "supercritical"
    else:
        verdict = "critical-band"
    return SubcriticalityReport(rho, alpha, 1 - rho, verdict, (lo, hi), it, res)


# simulation ------------------------------------------------------------------

@dataclass
class ChangeTreeReport:
    trials: int
    extinct_by: np.ndarray  # extinct_by[g]: fraction with empty generation g (g >= 1)
    mean_population: np.ndarray  # mean generation size, g = 0..max_gen
    sizes: dict
    depths: dict
    censored: int

    def extinct_fraction(self, gen: int) -> float:
        return float(self.extinct_by[gen])


def simulate_change_tree(rule: UpdateRule, d: float, p, change, max_gen: int, max_size: int,
                         trials: int, seed) -> ChangeTreeReport:
    """Run the change process from a root change with up-message ``chi ~ p``.

    The root is generation 0. A trial stops at extinction, after
    ``max_gen`` generations, or once its total size exceeds ``max_size``;
    the last two are counted as censored. ``chi`` is drawn from ``p``
    restricted to outputs the rule can actually produce.
    """
    if trials < 1 or max_gen < 1 or max_size < 1:
        raise ParameterError("trials, max_gen and max_size must be positive")
    p = as_dist(p, rule.size, atol=1e-9)
    S = rule.size
    change = ChangePair(*change)
    if change.old == change.new:
        raise InputError("a change needs old != new")
    space = TypeSpace(S)
    lam = d * p
    exact_chi = _feasible_chi(rule, d, p)
    w = p.copy()
    if exact_chi is not None:
        w[exact_chi <= 0] = 0
    if w.sum() <= 0:
        raise ConditioningError("no feasible up-message for the root", 0.0, 0)
    w /= w.sum()
    rng = stream(seed, "change-tree")
    chi0 = rng.choice(S, size=trials, p=w)
    pop = {}
    for c in range(S):
        sel = chi0 == c
        if sel.any():
            pop[space.index(change, c)] = sel.astype(np.int64)
    size = np.ones(trials, dtype=np.int64)
    depth = np.zeros(trials, dtype=np.int64)
    active = np.ones(trials, dtype=bool)
    censored = np.zeros(trials, dtype=bool)
    extinct_by = np.zeros(max_gen + 1)
    mean_pop = np.zeros(max_gen + 1)
    mean_pop[0] = 1.0
    for gen in range(1, max_gen + 1):
        nxt: dict[int, np.ndarray] = {}
        for k, counts in pop.items():
            total = int(counts.sum())
            if total == 0:
                continue
            pair, chi = space.types[k]
            M, _ = draw_conditioned(rule, lam, chi, total, rng)
            owner = np.repeat(np.arange(trials), counts)
            rows, kinds, mult = children_of(rule, M, pair, space)
            for ck in np.unique(kinds):
                sel = kinds == ck
                add = np.bincount(owner[rows[sel]], weights=mult[sel], minlength=trials)
                nxt[ck] = nxt.get(ck, 0) + add.astype(np.int64)
        gen_size = sum(nxt.values()) if nxt else np.zeros(trials, dtype=np.int64)
        mean_pop[gen] = gen_size.mean()
        size += gen_size
        alive = gen_size > 0
        depth[alive] = gen
        over = alive & (size > max_size)
        censored |= over & active
        active &= alive & ~over
        for ck in nxt:
            nxt[ck][~active] = 0
        pop = nxt
        extinct_by[gen] = np.mean(~alive & ~censored)
    censored |= active
    sizes = dict(zip(*(x.tolist() for x in np.unique(size, return_counts=True))))
    depths = dict(zip(*(x.tolist() for x in np.unique(depth, return_counts=True))))
    return ChangeTreeReport(trials, extinct_by, mean_pop, sizes, depths, int(censored.sum()))
