"""Acceptance criteria, one test each. Tolerances are pinned below."""

import math
import time
from collections import Counter

import numpy as np
import pytest
from oracles import (consistent_simple_matchings, kcore_limit, kcore_threshold,
                     kcore_transition_entry, peel)
from scipy.stats import chisquare

from warnprop.cascade import alpha_from_report, run_marking, track_cascades
from warnprop.change import (estimate_transition_matrix, exact_transition_matrix,
                             simulate_change_tree, spectral_radius)
from warnprop.dist import iterate_to_fixed_point, iterates, threshold_scan
from warnprop.experiments import convergence_t0, post_changes
from warnprop.graph import (MessagedGraph, extract_core_wp, gen_gnp, init_messages, peel_kcore,
                            wp_run)
from warnprop.halfedge import (HalfEdgeEnsemble, conditioned_ensembles, estimate_match_probability,
                               expected_pair_probs, graph_statistics, random_consistent_matching,
                               sample_matching, statistics_match, story_distribution_exact,
                               story_marginals, story_statistics, verify_wp_consistency)
from warnprop.rng import stream
from warnprop.rules import constant_rule, kcore_rule
from warnprop.tree import ChangePair, marginal_check, sample_stories

pytestmark = pytest.mark.slow

K2, K3 = kcore_rule(2), kcore_rule(3)

# pinned tolerances
C1_N, C1_SEEDS, C1_SECONDS = 20_000, 10, 10.0
C2_TOL, C2_SECONDS = 1e-6, 1.0
C3_TOL, C3_N, C3_SEEDS, C3_SECONDS = 0.005, 10**5, 5, 60.0
C3_LOW_D, C3_LOW_MAX, C3_HIGH_D, C3_HIGH_MIN = 3.20, 0.01, 3.50, 0.20
C4_DELTA, C4_NS, C4_MAX_T0, C4_SLACK, C4_SEEDS = 0.01, (10**4, 10**5), 30, 2, 3
C5_TOL, C5_SAMPLES, C5_SECONDS = 0.01, 10**5, 30.0
C6_TOL, C6_SAMPLES, C6_MARGINAL_TOL = 0.005, 10**5, 1e-9
C7_TRIALS, C7_GENS, C7_EXTINCT, C7_SE, C7_SECONDS = 10**4, 50, 0.999, 3.0, 120.0
C8_N, C8_T0S, C8_MATCHINGS, C8_ENSEMBLES = 1000, (1, 2, 3), 100, 10
C9_N, C9_T0, C9_SEEDS, C9_NEEDED, C9_MIN_Q = 10**5, 3, 20, 18, 1e-4
C10_N, C10_D, C10_TRIALS, C10_TOL, C10_P = 1000, 3.0, 10**4, 0.02, 0.001
C11_N, C11_T0, C11_DELTA0, C11_SEEDS = 10**5, 10, 1e-4, 10


def ones(g):
    return MessagedGraph(g, np.ones(g.n_directed, dtype=np.int8))


def test_c01_kcore_equivalence(criterion):
    start = time.perf_counter()
    agree = 0
    for seed in range(C1_SEEDS):
        g = gen_gnp(C1_N, 4.0, stream(seed, "c1"))
        sg, _ = wp_run(ones(g), K3, 10_000, record_stories=False)
        agree += np.array_equal(extract_core_wp(sg, 3), peel_kcore(g, 3))
    elapsed = time.perf_counter() - start
    criterion(1, "WP core equals peeled 3-core", agree == C1_SEEDS and elapsed < C1_SECONDS,
              f"{agree}/{C1_SEEDS} seeds equal, {elapsed:.2f}s < {C1_SECONDS}s")


def test_c01_peel_oracle_spot_check():
    # the package peeler agrees with the independent one
    g = gen_gnp(3000, 4.0, 1)
    assert set(peel_kcore(g, 3).tolist()) == peel(3000, g.edges().tolist(), 3)


def test_c02_fixed_point_value(criterion):
    start = time.perf_counter()
    rep = iterate_to_fixed_point(K2, 2.0, [0, 1], tol=1e-12)
    elapsed = time.perf_counter() - start
    ref = kcore_limit(2, 2.0)
    err = abs(rep.limit[1] - ref)
    criterion(2, "kcore(2) d=2 fixed point", err <= C2_TOL and elapsed < C2_SECONDS,
              f"limit {rep.limit[1]:.9f} vs oracle {ref:.9f}, |err|={err:.2e} <= {C2_TOL}, "
              f"{elapsed:.3f}s < {C2_SECONDS}s")


def test_c03_threshold(criterion):
    start = time.perf_counter()
    rep = threshold_scan(K3, 3.0, 3.7, [0, 1])
    ref = kcore_threshold(3)
    low = [len(peel_kcore(gen_gnp(C3_N, C3_LOW_D, stream(s, "c3-low")), 3)) / C3_N
           for s in range(C3_SEEDS)]
    high = [len(peel_kcore(gen_gnp(C3_N, C3_HIGH_D, stream(s, "c3-high")), 3)) / C3_N
            for s in range(C3_SEEDS)]
    elapsed = time.perf_counter() - start
    low_ok = sum(f < C3_LOW_MAX for f in low) > C3_SEEDS // 2
    high_ok = sum(f > C3_HIGH_MIN for f in high) > C3_SEEDS // 2
    ok = abs(rep.d_star - ref) <= C3_TOL and low_ok and high_ok and elapsed < C3_SECONDS
    criterion(3, "3-core threshold", ok,
              f"d*={rep.d_star:.5f} vs oracle {ref:.5f} (tol {C3_TOL}); core fraction at "
              f"{C3_LOW_D}: {np.round(low, 4).tolist()}, at {C3_HIGH_D}: {np.round(high, 4).tolist()}; "
              f"{elapsed:.1f}s < {C3_SECONDS}s")


def test_c04_convergence_time(criterion):
    t0 = {}
    for n in C4_NS:
        runs = [convergence_t0(post_changes(K3, 4.0, [0, 1], n, 4, rep)[1], n, C4_DELTA)
                for rep in range(C4_SEEDS)]
        t0[n] = float(np.median(runs))
    small, big = t0[C4_NS[0]], t0[C4_NS[1]]
    ok = max(small, big) <= C4_MAX_T0 and big <= small + C4_SLACK
    criterion(4, "t0 bounded and n-independent", ok,
              f"median t0 {t0}, need <= {C4_MAX_T0} and t0(1e5) <= t0(1e4)+{C4_SLACK}")


def test_c05_story_marginals(criterion):
    start = time.perf_counter()
    tv = marginal_check(K3, 4.0, [0, 1], 5, C5_SAMPLES, 5)
    elapsed = time.perf_counter() - start
    criterion(5, "story marginals match iterates", tv < C5_TOL and elapsed < C5_SECONDS,
              f"max TV {tv:.5f} < {C5_TOL}, {elapsed:.1f}s < {C5_SECONDS}s")


def test_c06_story_dp(criterion):
    nu = story_distribution_exact(K2, 2.0, [0, 1], 3)
    st = sample_stories(K2, 2.0, [0, 1], 3, C6_SAMPLES, 6)
    emp = Counter(map(tuple, st.tolist()))
    keys = set(nu) | set(emp)
    diff = max(abs(emp.get(w, 0) / C6_SAMPLES - nu.get(w, 0.0)) for w in keys)
    marg = float(np.abs(story_marginals(nu, 2) - iterates(K2, 2.0, [0, 1], 3)).max())
    criterion(6, "exact story law", diff < C6_TOL and marg <= C6_MARGINAL_TOL,
              f"max |MC-DP| {diff:.5f} < {C6_TOL}, marginal error {marg:.1e} <= {C6_MARGINAL_TOL}")


def test_c07_subcriticality(criterion):
    start = time.perf_counter()
    p = iterate_to_fixed_point(K3, 4.0, [0, 1], tol=1e-13).limit
    T = estimate_transition_matrix(K3, 4.0, p, C7_TRIALS, 7)
    rep = spectral_radius(T, seed=7)
    E = exact_transition_matrix(K3, 4.0, p)
    idx = [E.types.index(t) for t in T.types]
    ex = E.entries[np.ix_(idx, idx)]
    within = bool((np.abs(T.entries - ex) <= C7_SE * T.stderr + 1e-12).all())
    # the enumeration oracle itself against the closed form
    closed = kcore_transition_entry(3, 4.0, p[1])
    i0 = E.types.index((ChangePair(1, 0), 0))
    i1 = E.types.index((ChangePair(1, 0), 1))
    oracle_ok = (abs(E.entries[i0, i0] - closed[0]) < 1e-9 and abs(E.entries[i1, i1] - closed[1]) < 1e-9)
    tree = simulate_change_tree(K3, 4.0, p, ChangePair(1, 0), C7_GENS, 10**6, C7_TRIALS, 7)
    ext = tree.extinct_fraction(C7_GENS)
    elapsed = time.perf_counter() - start
    ok = rep.ci[1] < 1 and ext >= C7_EXTINCT and within and oracle_ok and elapsed < C7_SECONDS
    criterion(7, "change process subcritical", ok,
              f"rho={rep.rho:.4f} CI=[{rep.ci[0]:.4f},{rep.ci[1]:.4f}] upper < 1; extinct by gen "
              f"{C7_GENS}: {ext:.4f} >= {C7_EXTINCT}; entries within {C7_SE} SE: {within}; "
              f"{elapsed:.1f}s < {C7_SECONDS}s")


def test_c08_wp_consistency(criterion):
    checked = failures = 0
    per = C8_MATCHINGS // C8_ENSEMBLES
    for t0 in C8_T0S:
        ens_list = conditioned_ensembles(K3, 4.0, [0, 1], t0, C8_N, C8_ENSEMBLES, stream(8, t0))
        for i, ens in enumerate(ens_list):
            for j in range(per):
                sg = sample_matching(ens, stream(8, t0, i, j))
                checked += 1
                failures += not verify_wp_consistency(sg, K3, t0)
    ok = failures == 0 and checked == C8_MATCHINGS * len(C8_T0S)
    criterion(8, "matched half-edge graphs are WP-consistent", ok,
              f"{checked - failures}/{checked} matchings reproduce every story entry exactly")


def test_c09_statistics_concentration(criterion):
    nu = story_distribution_exact(K3, 4.0, [0, 1], C9_T0)
    expected = expected_pair_probs(nu)
    bound = math.sqrt(C9_N) * math.log(C9_N)
    good, worst = 0, []
    for seed in range(C9_SEEDS):
        g = gen_gnp(C9_N, 4.0, stream(seed, "c9-graph"))
        sg, _ = wp_run(init_messages(g, [0, 1], stream(seed, "c9-init"), K3), K3, C9_T0,
                       stop_at_fixed_point=False)
        stats = graph_statistics(sg, C9_T0)
        dev = max(abs(stats.counts.get(k, 0) - 4.0 * C9_N * q)
                  for k, q in expected.items() if q >= C9_MIN_Q)
        worst.append(dev)
        good += dev <= bound
    criterion(9, "story-pair counts concentrate", good >= C9_NEEDED,
              f"{good}/{C9_SEEDS} seeds within sqrt(n)ln n={bound:.0f} (need {C9_NEEDED}); "
              f"worst deviation {max(worst):.0f}")


def test_c10_match_probability(criterion):
    mp = estimate_match_probability(constant_rule("a"), C10_D, [1.0], 0, C10_N, C10_TRIALS, 10)
    prob_ok = abs(mp.estimate - 0.5) <= C10_TOL
    pvals = []
    const = constant_rule("a", ["a", "b"])
    instances = [
        ([0, 1, 2, 3], [1, 1, 0, 0], [0, 0, 1, 1]),
        ([0, 1, 2, 3, 4, 0, 1, 3], [1, 1, 1, 0, 0, 0, 0, 0], [0, 0, 0, 1, 1, 1, 0, 0]),
        ([0, 1, 2, 3, 4, 5, 0, 3], [0, 0, 0, 0, 0, 0, 1, 0], [0, 0, 0, 0, 0, 0, 0, 1]),
    ]
    rng = np.random.default_rng(10)
    for vertex, ins, out0 in instances:
        ens = HalfEdgeEnsemble.from_arrays(const, 0, max(vertex) + 1, vertex, [[x] for x in ins], out0)
        assert statistics_match(story_statistics(ens))
        allowed = consistent_simple_matchings(ens.vertex.tolist(), ens.in_codes().tolist(),
                                              ens.out_codes().tolist())
        freq = Counter(tuple(random_consistent_matching(ens, rng).tolist())
                       for _ in range(2000 * len(allowed)))
        assert set(freq) <= set(allowed)
        pvals.append(float(chisquare([freq[p] for p in allowed]).pvalue))
    ok = prob_ok and min(pvals) > C10_P
    criterion(10, "statistics-matching probability and matching uniformity", ok,
              f"Pr(A)={mp.estimate:.4f} (CI {mp.ci[0]:.4f}..{mp.ci[1]:.4f}), need 0.5 +- {C10_TOL}; "
              f"chi-square p-values {np.round(pvals, 4).tolist()} > {C10_P}")


def test_c11_cascade_bound(criterion):
    p = iterate_to_fixed_point(K3, 4.0, [0, 1]).limit
    T = exact_transition_matrix(K3, 4.0, p)
    alpha = alpha_from_report(T.types, spectral_radius(T).alpha)
    limit_marked = math.sqrt(C11_DELTA0) * C11_N
    limit_comp = math.log(C11_N) ** 2
    rows, ok = [], True
    for seed in range(C11_SEEDS):
        g = gen_gnp(C11_N, 4.0, stream(seed, "c11-graph"))
        sg, _ = wp_run(init_messages(g, [0, 1], stream(seed, "c11-init"), K3), K3, 10_000)
        mk = run_marking(None, K3, [0, 1], C11_T0, C11_DELTA0, alpha, seed, sg=sg)
        tc = track_cascades(sg, C11_T0)
        rows.append((mk.stop, mk.total_marked, tc.largest))
        ok &= mk.stop == "exhaustion" and mk.total_marked <= limit_marked and tc.largest <= limit_comp
    criterion(11, "marking process exhausts with few marks", ok,
              f"(stop, marked, largest component) per seed {rows}; need exhaustion, marked <= "
              f"{limit_marked:.0f}, largest <= {limit_comp:.1f}")
