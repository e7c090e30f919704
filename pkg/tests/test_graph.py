import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import all_graphs, peel

from warnprop.errors import InputError, ParameterError, StateError
from warnprop.graph import (Graph, MessagedGraph, changes_between, count_near_short_cycles,
                            edge_components, extract_core_wp, gen_gnp, init_messages,
                            peel_kcore, read_edge_list, run_to_fixed_point,
                            short_cycle_vertices, wp_run, wp_step, write_edge_list,
                            write_stories)
from warnprop.rules import Alphabet, UpdateRule, constant_rule, kcore_rule

K2, K3 = kcore_rule(2), kcore_rule(3)


def all_ones(g):
    return MessagedGraph(g, np.ones(g.n_directed, dtype=np.int8))


def test_gnp_edge_cases():
    assert gen_gnp(1, 0.0, 0).n_edges == 0
    assert gen_gnp(50, 0.0, 0).n_edges == 0
    g = gen_gnp(5, 5.0, 0)
    assert g.n_edges == 10
    with pytest.raises(ParameterError):
        gen_gnp(5, 6.0, 0)
    with pytest.raises(ParameterError):
        gen_gnp(0, 1.0, 0)


def test_gnp_reproducible_and_simple():
    a, b = gen_gnp(2000, 3.0, 11), gen_gnp(2000, 3.0, 11)
    assert np.array_equal(a.edges(), b.edges())
    e = a.edges()
    assert (e[:, 0] != e[:, 1]).all()
    assert len({tuple(x) for x in e.tolist()}) == len(e)


def test_gnp_edge_count_and_degrees():
    n, d = 20000, 3.0
    sizes = [gen_gnp(n, d, s).n_edges for s in range(5)]
    mean = n * (n - 1) / 2 * d / n
    sd = math.sqrt(mean)
    assert abs(np.mean(sizes) - mean) < 4 * sd / math.sqrt(5)
    deg = gen_gnp(n, d, 99).degrees()
    freq = np.bincount(deg, minlength=12)[:8] / n
    from scipy.stats import poisson
    assert np.abs(freq - poisson.pmf(np.arange(8), d)).max() < 0.01


def test_csr_reverse_slots():
    g = gen_gnp(300, 4.0, 3)
    assert np.array_equal(g.rev[g.rev], np.arange(g.n_directed))
    assert np.array_equal(g.src[g.rev], g.dst)
    assert np.array_equal(g.dst[g.rev], g.src)
    assert g.degrees().sum() == 2 * g.n_edges


def test_from_edges_rejects_bad_input():
    with pytest.raises(InputError):
        Graph.from_edges(3, [(0, 0)])
    with pytest.raises(InputError):
        Graph.from_edges(3, [(0, 1), (1, 0)])
    with pytest.raises(InputError):
        Graph.from_edges(3, [(0, 3)])


def test_path_kcore2_all_zero():
    g = Graph.from_edges(3, [(0, 1), (1, 2)])
    sg, _ = wp_run(all_ones(g), K2, 10)
    assert sg.fixed_point
    assert (sg.message == 0).all()
    assert sg.horizon <= 3


def test_triangle_kcore2_all_one():
    g = Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)])
    sg, changes = wp_run(all_ones(g), K2, 10)
    assert sg.fixed_point and (sg.message == 1).all()
    assert changes == [0]


def test_isolated_vertex_constant_rule():
    g = Graph.from_edges(1, np.zeros((0, 2)))
    sg, _ = wp_run(MessagedGraph(g, np.zeros(0, dtype=np.int8)), constant_rule("a"), 5)
    assert sg.fixed_point and sg.graph.n == 1


def test_zero_rounds_returns_input():
    g = gen_gnp(100, 3.0, 1)
    mg = init_messages(g, [0.5, 0.5], 2)
    sg, changes = wp_run(mg, K3, 0)
    assert changes == [] and np.array_equal(sg.message, mg.message)


def test_period_two_orbit():
    # on a triangle each message sees one input; "flip" negates it
    flip = UpdateRule(Alphabet(("0", "1")), 1, np.array([[0, 0], [1, 0]]))
    g = Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)])
    sg, _ = wp_run(MessagedGraph(g, np.zeros(6, dtype=np.int8)), flip, 20)
    assert not sg.fixed_point and sg.cycle_period == 2
    assert np.array_equal(sg.messages_at(sg.horizon + 2), sg.message)


def test_wp_step_reads_snapshot():
    g = gen_gnp(200, 4.0, 5)
    msg = init_messages(g, [0.3, 0.7], 6).message
    new = wp_step(g, K3, msg)
    adj_in = {}
    for e in range(g.n_directed):
        adj_in.setdefault(int(g.dst[e]), []).append(e)
    for e in range(0, g.n_directed, 7):
        u, v = int(g.src[e]), int(g.dst[e])
        ones = sum(int(msg[f]) for f in adj_in.get(u, []) if g.src[f] != v)
        assert new[e] == (1 if ones >= 2 else 0)


def test_stories_shape_and_changes():
    g = gen_gnp(500, 4.0, 8)
    sg, changes = run_to_fixed_point(g, K3, [0.0, 1.0], 9)
    assert sg.stories().shape == (g.n_directed, sg.horizon + 1)
    for r in range(1, sg.horizon + 1):
        assert changes[r - 1] == changes_between(sg, r - 1, r)
    # monotone for kcore from all ones
    h = sg.history
    assert (h[1:] <= h[:-1]).all()


def test_extract_core_requires_fixed_point():
    g = gen_gnp(300, 4.0, 1)
    sg, _ = wp_run(all_ones(g), K3, 1)
    if not sg.fixed_point:
        with pytest.raises(StateError):
            extract_core_wp(sg, 3)


@pytest.mark.parametrize("k", [2, 3])
def test_wp_equals_peeling_exhaustive_small(k):
    rule = kcore_rule(k)
    for n in range(1, 6):
        for edges in all_graphs(n):
            g = Graph.from_edges(n, np.array(edges, dtype=np.int64).reshape(-1, 2))
            sg, _ = wp_run(all_ones(g), rule, 100)
            assert sg.fixed_point
            core = set(extract_core_wp(sg, k).tolist())
            assert core == set(peel(n, edges, k)) == set(peel_kcore(g, k).tolist())


@settings(max_examples=40, deadline=None)
@given(n=st.integers(6, 40), d=st.floats(1.0, 6.0), k=st.integers(2, 4), seed=st.integers(0, 10**6))
def test_wp_equals_peeling_random(n, d, k, seed):
    g = gen_gnp(n, min(d, n), seed)
    sg, _ = wp_run(all_ones(g), kcore_rule(k), 1000)
    assert set(extract_core_wp(sg, k).tolist()) == set(peel(n, g.edges().tolist(), k))


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 60), d=st.floats(0.5, 5.0), seed=st.integers(0, 10**6),
       q=st.floats(0, 1))
def test_messages_in_alphabet(n, d, seed, q):
    g = gen_gnp(n, min(d, n), seed)
    sg, _ = run_to_fixed_point(g, K3, [1 - q, q], seed + 1, t_max=50)
    assert set(np.unique(sg.history).tolist()) <= {0, 1}


def brute_short_cycle_vertices(n, edges, L):
    adj = {v: set() for v in range(n)}
    for u, v in edges:
        adj[u].add(v)
        adj[v].add(u)
    on = set()

    def dfs(start, v, path):
        for w in adj[v]:
            if w == start and len(path) >= 3:
                on.update(path)
            elif w not in path and len(path) < L:
                dfs(start, w, path + [w])

    for v in range(n):
        dfs(v, v, [v])
    return on


@settings(max_examples=40, deadline=None)
@given(n=st.integers(3, 14), d=st.floats(1.0, 4.0), L=st.integers(3, 7), seed=st.integers(0, 10**6))
def test_short_cycle_vertices_bruteforce(n, d, L, seed):
    g = gen_gnp(n, min(d, n), seed)
    expect = brute_short_cycle_vertices(n, g.edges().tolist(), L)
    assert set(short_cycle_vertices(g, L).tolist()) == expect


def test_count_near_short_cycles_small():
    # triangle with a pendant path 2-3-4-5
    g = Graph.from_edges(6, [(0, 1), (1, 2), (0, 2), (2, 3), (3, 4), (4, 5)])
    assert count_near_short_cycles(g, 2) == 0
    assert count_near_short_cycles(g, 3) == 6
    tree = Graph.from_edges(4, [(0, 1), (1, 2), (2, 3)])
    assert count_near_short_cycles(tree, 10) == 0


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="at n=1e5, d=4 about 1.8e3 vertices lie within distance 3 "
                   "of a triangle, far above n**(1/3)=46; the sublinear count is asymptotic")
def test_near_short_cycles_below_cube_root():
    n = 10**5
    g = gen_gnp(n, 4.0, 1)
    assert count_near_short_cycles(g, 3) <= n ** (1 / 3)


def test_near_short_cycles_sublinear():
    # the count grows much slower than n
    small = np.mean([count_near_short_cycles(gen_gnp(4000, 4.0, s), 3) for s in range(3)])
    big = np.mean([count_near_short_cycles(gen_gnp(40000, 4.0, s), 3) for s in range(3)])
    assert big < 3 * small + 50


def test_edge_components():
    g = Graph.from_edges(6, [(0, 1), (1, 2), (3, 4), (4, 5)])
    mask = np.zeros(g.n_directed, dtype=bool)
    mask[g.slot(0, 1)] = mask[g.slot(2, 1)] = mask[g.slot(3, 4)] = True
    labels, sizes = edge_components(g, mask)
    assert sorted(sizes.tolist()) == [1, 2]
    assert labels[g.slot(1, 0)] == labels[g.slot(1, 2)] != labels[g.slot(4, 3)]
    assert labels[g.slot(4, 5)] == -1


def test_edge_list_roundtrip(tmp_path):
    g = gen_gnp(100, 3.0, 4)
    p = tmp_path / "g.txt"
    write_edge_list(g, p)
    h = read_edge_list(p, n=100)
    assert np.array_equal(g.edges(), h.edges())
    sg, _ = run_to_fixed_point(g, K3, [0, 1], 1)
    write_stories(sg, tmp_path / "s.txt", K3.alphabet)
    lines = (tmp_path / "s.txt").read_text().splitlines()
    assert len(lines) == g.n_directed
    assert all(len(l.split()[2].split(",")) == sg.horizon + 1 for l in lines)
