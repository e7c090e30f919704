"""Galton-Watson stories, their support, and potential changes.

A story of length t+1 is the sequence of messages a root ``u`` of a Po(d)
tree sends to an extra parent ``v`` during rounds 0..t, with every message
initialised i.i.d. from ``q0``. Entry s only depends on the depth-s subtree,
so a tree truncated at depth t is enough. The children of depth t-1 nodes
only contribute their round-0 messages, whose per-symbol counts are
independent Poisson variables; they are drawn as counts rather than nodes.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .dist import as_dist, iterates, tv_distance
from .errors import FeasibilityError, ParameterError, ResourceError
from .rng import as_generator
from .rules import UpdateRule

MAX_TREE_NODES = 10**7
CHUNK_NODES = 2_000_000
EXACT_SUPPORT_LIMIT = 4096


class ChangePair(NamedTuple):
    old: int
    new: int


class Support(NamedTuple):
    stories: frozenset
    exact: bool


def expected_tree_nodes(d: float, t: int) -> float:
    return float(sum(d**level for level in range(t + 1)))


def _sample_chunk(rule, d, q0, t, roots, rng):
    S = rule.size
    x0 = lambda size: rng.choice(S, size=size, p=q0).astype(np.int8)  # noqa: E731
    if t == 0:
        return x0(roots)[:, None]
    # top-down: parent index of every node on levels 1..t-1
    sizes = [roots]
    parents = []
    for _ in range(t - 1):
        kids = rng.poisson(d, size=sizes[-1])
        parents.append(np.repeat(np.arange(sizes[-1], dtype=np.int64), kids))
        sizes.append(int(kids.sum()))
    # level t-1: leaf children as Poisson counts per symbol
    leaf_counts = rng.poisson(d * q0, size=(sizes[-1], S))
    stories = np.empty((sizes[-1], 2), dtype=np.int8)
    stories[:, 0] = x0(sizes[-1])
    stories[:, 1] = rule.lookup(leaf_counts)
    # bottom-up
    for level in range(t - 2, -1, -1):
        par = parents[level]
        m = sizes[level]
        length = t - level + 1
        out = np.empty((m, length), dtype=np.int8)
        out[:, 0] = x0(m)
        for s in range(length - 1):
            counts = np.bincount(par * S + stories[:, s], minlength=m * S).reshape(m, S)
            out[:, s + 1] = rule.lookup(counts)
        stories = out
    return stories


def sample_stories(rule: UpdateRule, d: float, q0, t: int, samples: int, seed) -> np.ndarray:
    """``samples`` i.i.d. stories, shape ``(samples, t+1)``, symbol indices."""
    if t < 0:
        raise ParameterError("t must be nonnegative")
    if d < 0:
        raise ParameterError("d must be nonnegative")
    q0 = as_dist(q0, rule.size)
    per_tree = expected_tree_nodes(d, t)
    if per_tree > MAX_TREE_NODES:
        raise ResourceError(f"expected tree size {per_tree:.3g} exceeds {MAX_TREE_NODES} nodes")
    rng = as_generator(seed)
    chunk = max(1, int(CHUNK_NODES // per_tree))
    parts = []
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        parts.append(_sample_chunk(rule, d, q0, t, m, rng))
        done += m
    if not parts:
        return np.zeros((0, t + 1), dtype=np.int8)
    return np.concatenate(parts)


def sample_story(rule, d, q0, t, seed) -> tuple[int, ...]:
    return tuple(int(x) for x in sample_stories(rule, d, q0, t, 1, seed)[0])


def marginal_check(rule, d, q0, t, samples, seed) -> float:
    """max over i <= t of TV(empirical law of entry i, Phi^i(q0))."""
    if samples < 1:
        raise ParameterError("samples must be positive")
    st = sample_stories(rule, d, q0, t, samples, seed)
    exact = iterates(rule, d, q0, t)
    worst = 0.0
    for i in range(t + 1):
        emp = np.bincount(st[:, i], minlength=rule.size) / samples
        worst = max(worst, tv_distance(emp, exact[i]))
    return worst


def story_histogram(stories: np.ndarray) -> dict[tuple[int, ...], int]:
    uniq, counts = np.unique(stories, axis=0, return_counts=True)
    return {tuple(int(x) for x in row): int(c) for row, c in zip(uniq, counts)}


# support -------------------------------------------------------------------

def _reachable_count_states(rule: UpdateRule, prev: list[tuple[int, ...]], length: int,
                            allow_children: bool):
    """Capped per-time count tuples reachable from multisets over ``prev``."""
    S, C = rule.size, rule.cap
    zero = (0,) * (length * S)
    states = {zero}
    if not allow_children:
        return states
    for w in prev:
        for _ in range(C):
            grown = set()
            for st in states:
                lst = list(st)
                for s in range(length):
                    i = s * S + w[s]
                    if lst[i] < C:
                        lst[i] += 1
                grown.add(tuple(lst))
            if grown <= states:
                break
            states |= grown
    return states


def _outputs(rule: UpdateRule, state, length: int) -> tuple[int, ...]:
    S = rule.size
    return tuple(int(rule.lookup(np.array(state[s * S:(s + 1) * S]))) for s in range(length))


def support_levels(rule: UpdateRule, q0, t: int, d: float | None = None) -> list[frozenset]:
    """Exact supports W_0..W_t. ``d=0`` means trees have no children."""
    q0 = as_dist(q0, rule.size)
    if rule.size ** (t + 1) > EXACT_SUPPORT_LIMIT:
        raise FeasibilityError(
            f"|alphabet|^(t+1) = {rule.size ** (t + 1)} exceeds {EXACT_SUPPORT_LIMIT}; use Monte Carlo"
        )
    has_kids = d is None or d > 0
    roots = [x for x in range(rule.size) if q0[x] > 0]
    levels = [frozenset((x,) for x in roots)]
    for level in range(1, t + 1):
        prev = sorted(levels[-1])
        states = _reachable_count_states(rule, prev, level, has_kids)
        tails = {_outputs(rule, st, level) for st in states}
        levels.append(frozenset((x,) + tail for x in roots for tail in tails))
    return levels


def story_support(rule, q0, t, d: float | None = None, approximate: bool = False,
                  samples: int = 100_000, seed=0) -> Support:
    """Stories of length t+1 with positive probability.

    Exact while ``|alphabet|^(t+1) <= 4096``. Beyond that, raises unless
    ``approximate`` is set, in which case the stories seen in ``samples``
    Monte Carlo draws are returned (a subset) with ``exact=False``.
    """
    try:
        return Support(support_levels(rule, q0, t, d)[-1], True)
    except FeasibilityError:
        if not approximate:
            raise
    st = sample_stories(rule, 1.0 if d is None else d, q0, t, samples, seed)
    return Support(frozenset(story_histogram(st)), False)


class PotentialChanges(NamedTuple):
    pairs: frozenset
    stable: bool
    levels: int


def _window_step(rule: UpdateRule, windows, has_kids: bool):
    """Last-two-entry pairs of parent stories from those of child stories."""
    S, C = rule.size, rule.cap
    states = {(0,) * (2 * S)}
    if has_kids:
        for a, b in sorted(windows):
            for _ in range(C):
                grown = set()
                for st in states:
                    lst = list(st)
                    if lst[a] < C:
                        lst[a] += 1
                    if lst[S + b] < C:
                        lst[S + b] += 1
                    grown.add(tuple(lst))
                if grown <= states:
                    break
                states |= grown
    out = set()
    for st in states:
        out.add((int(rule.lookup(np.array(st[:S]))), int(rule.lookup(np.array(st[S:])))))
    return frozenset(out)


def potential_changes(rule, d, q, t_max: int = 64) -> PotentialChanges:
    """Pairs (old, new), old != new, occurring as consecutive story entries.

    The last two entries of a parent's story depend only on the last two
    entries of its children's stories, so the set of achievable windows
    follows a recursion on a finite set. Once a window set repeats, every
    later level is known and ``stable`` is True.
    """
    q = as_dist(q, rule.size, atol=1e-9)
    has_kids = d is None or d > 0
    roots = [x for x in range(rule.size) if q[x] > 0]
    S, C = rule.size, rule.cap
    # level 1: (x0, rule(counts of children's round-0 messages))
    counts = {(0,) * S}
    if has_kids:
        for x in roots:
            for _ in range(C):
                grown = {tuple(min(c + (i == x), C) for i, c in enumerate(st)) for st in counts}
                if grown <= counts:
                    break
                counts |= grown
    firsts = {int(rule.lookup(np.array(c))) for c in counts}
    windows = frozenset((x, y) for x in roots for y in firsts)
    seen = {windows: 1}
    found = {ChangePair(a, b) for a, b in windows if a != b}
    stable = False
    level = 1
    while level < t_max:
        windows = _window_step(rule, windows, has_kids)
        level += 1
        found |= {ChangePair(a, b) for a, b in windows if a != b}
        if windows in seen:
            stable = True
            break
        seen[windows] = level
    return PotentialChanges(frozenset(found), stable, level)
