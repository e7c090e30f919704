import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import kcore_limit, kcore_transition_entry

from warnprop.change import (TypeSpace, children_of, draw_conditioned, estimate_transition_matrix,
                             exact_transition_matrix, perron, sample_change_step,
                             simulate_change_tree, spectral_radius)
from warnprop.dist import iterate_to_fixed_point
from warnprop.errors import ConditioningError, InputError, NumericalError, ParameterError
from warnprop.rules import Alphabet, UpdateRule, constant_rule, kcore_rule
from warnprop.tree import ChangePair

K3 = kcore_rule(3)
CONST = constant_rule("a", ["a", "b"])
P4 = np.array([1 - kcore_limit(3, 4.0), kcore_limit(3, 4.0)])
DOWN = ChangePair(1, 0)


def random_rule(seed, S, C):
    rng = np.random.default_rng(seed)
    return UpdateRule(Alphabet(tuple("abcd"[:S])), C, rng.integers(S, size=(C + 1,) * S))


def test_children_hand_evaluation():
    space = TypeSpace(2)
    rows, kinds, mult = children_of(K3, np.array([[0, 2]]), DOWN, space)
    assert rows.tolist() == [0]
    assert space.types[kinds[0]] == (DOWN, 1)
    assert mult.tolist() == [2]


def test_constant_rule_no_children():
    assert sample_change_step(CONST, 3.0, [0.5, 0.5], (1, 0), 0, 1) == {}


def test_conditioning_infeasible():
    with pytest.raises(ConditioningError) as info:
        sample_change_step(K3, 0.0, [1.0, 0.0], (1, 0), 1, 0)
    assert info.value.acceptance_rate == 0.0


def test_draw_conditioned_law():
    rng = np.random.default_rng(0)
    M, rate = draw_conditioned(K3, 4.0 * P4, 1, 20000, rng)
    assert (M[:, 1] >= 2).all()
    assert rate == pytest.approx(P4[1], abs=0.01)


def test_exact_matrix_closed_form():
    T = exact_transition_matrix(K3, 4.0, P4)
    ref = kcore_transition_entry(3, 4.0, P4[1])
    i0, i1 = T.types.index((DOWN, 0)), T.types.index((DOWN, 1))
    assert T.entries[i0, i0] == pytest.approx(ref[0], abs=1e-10)
    assert T.entries[i1, i1] == pytest.approx(ref[1], abs=1e-10)
    # chi is preserved for kcore
    assert T.entries[i0, i1] == 0 and T.entries[i1, i0] == 0


@pytest.mark.parametrize("k,d", [(3, 5.0), (4, 7.0), (2, 2.0)])
def test_exact_matrix_other_kcores(k, d):
    p1 = kcore_limit(k, d)
    T = exact_transition_matrix(kcore_rule(k), d, [1 - p1, p1], changes=[DOWN])
    ref = kcore_transition_entry(k, d, p1)
    for chi in (0, 1):
        i = T.types.index((DOWN, chi))
        assert T.entries[i, i] == pytest.approx(ref[chi], rel=1e-9)


def test_trivial_matrices():
    T = estimate_transition_matrix(CONST, 3.0, [0.5, 0.5], 500, 1)
    assert not T.entries.any()
    T = exact_transition_matrix(K3, 0.0, P4, changes=[DOWN])
    assert not T.entries.any()
    assert T.infeasible  # chi = 1 cannot happen without children
    with pytest.raises(InputError):
        exact_transition_matrix(CONST, 3.0, [1.0, 0.0])
    with pytest.raises(ParameterError):
        estimate_transition_matrix(K3, 4.0, P4, 0, 1)


def test_monte_carlo_within_three_se():
    E = exact_transition_matrix(K3, 4.0, P4)
    T = estimate_transition_matrix(K3, 4.0, P4, 20000, 3)
    assert set(T.types) == set(E.types)
    order = [E.types.index(t) for t in T.types]
    ex = E.entries[np.ix_(order, order)]
    assert (np.abs(T.entries - ex) <= 3 * T.stderr + 1e-12).all()
    assert (T.entries >= 0).all() and np.isfinite(T.stderr).all()


@settings(max_examples=12, deadline=None)
@given(seed=st.integers(0, 10**6), S=st.integers(2, 3), C=st.integers(1, 2), d=st.floats(0.5, 4))
def test_monte_carlo_matches_exact_random(seed, S, C, d):
    rule = random_rule(seed, S, C)
    p = np.random.default_rng(seed).dirichlet(np.ones(S))
    changes = [(a, b) for a in range(S) for b in range(S) if a != b]
    E = exact_transition_matrix(rule, d, p, changes=changes)
    T = estimate_transition_matrix(rule, d, p, 4000, seed, changes=changes)
    idx = {t: i for i, t in enumerate(E.types)}
    for j, tj in enumerate(T.types):
        if j in T.infeasible:
            continue
        for i, ti in enumerate(T.types):
            ex = E.entries[idx[ti], idx[tj]]
            # 5 standard errors plus a floor for entries too rare to have an SE
            assert abs(T.entries[i, j] - ex) <= 5 * T.stderr[i, j] + 5 * np.sqrt((ex + 1e-3) / 4000)


def test_offspring_mean_consistency():
    T = estimate_transition_matrix(K3, 4.0, P4, 10000, 5)
    space = TypeSpace(2)
    rng = np.random.default_rng(11)
    for j, (pair, chi) in enumerate(T.types):
        M, _ = draw_conditioned(K3, 4.0 * P4, chi, 10000, rng)
        _, kinds, mult = children_of(K3, M, pair, space)
        per = np.bincount(np.repeat(np.arange(len(M)), 1), minlength=len(M)) * 0.0
        totals = np.zeros(len(M))
        rows, _, mult = children_of(K3, M, pair, space)
        np.add.at(totals, rows, mult)
        se = totals.std() / np.sqrt(len(M))
        assert abs(totals.mean() - T.row_sums()[j]) <= 3 * np.hypot(se, T.stderr[:, j].sum()) + 1e-12


def test_kcore_reduction():
    T = exact_transition_matrix(K3, 4.0, P4, changes=[DOWN])
    assert T.pairs == [DOWN]
    assert all(t[0] == DOWN for t in T.types)
    full = exact_transition_matrix(K3, 4.0, P4)
    i, j = full.pairs.index(DOWN), full.pairs.index(ChangePair(0, 1))
    assert full.aggregated[i, j] == 0 and full.aggregated[j, i] == 0


def test_perron_examples():
    r = spectral_radius(np.zeros((3, 3)))
    assert r.rho == pytest.approx(3e-9, abs=1e-12) and r.verdict == "subcritical"
    r = spectral_radius(np.array([[0.5, 0.25], [0.25, 0.5]]))
    assert r.rho == pytest.approx(0.75, abs=1e-8)
    assert np.allclose(r.alpha, [0.5, 0.5])
    assert spectral_radius(np.diag([0.3, 0.9])).rho == pytest.approx(0.9, abs=1e-8)
    # the epsilon shift pushes a periodic unit root just above 1
    assert spectral_radius(np.array([[0.0, 1.0], [1.0, 0.0]])).rho == pytest.approx(1, abs=1e-8)
    assert spectral_radius(np.diag([0.99, 0.1])).verdict == "critical-band"
    assert spectral_radius(np.diag([1.5, 0.1])).verdict == "supercritical"
    with pytest.raises(InputError):
        perron(np.array([[-1.0]]))
    with pytest.raises(NumericalError):
        perron(np.array([[0.5, 0.4], [0.1, 0.2]]), max_iter=1)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 6), seed=st.integers(0, 10**6), scale=st.floats(0.01, 3))
def test_perron_properties(n, seed, scale):
    A = np.random.default_rng(seed).random((n, n)) * scale
    rho, alpha, _, res = perron(A)
    assert (alpha > 0).all() and abs(alpha.sum() - 1) < 1e-12
    assert np.abs((A + 1e-9) @ alpha - rho * alpha).sum() <= 1e-8 * max(1, rho)
    assert rho == pytest.approx(np.max(np.abs(np.linalg.eigvals(A + 1e-9))), rel=1e-7)


def test_kcore_subcritical_with_ci():
    T = estimate_transition_matrix(K3, 4.0, P4, 10000, 2)
    r = spectral_radius(T, seed=1)
    assert r.verdict == "subcritical" and r.ci[1] < 1
    # the maximum of two equal noisy roots sits a little above the truth
    assert abs(r.rho - 0.4465654) < 0.02


def test_change_tree_trivial():
    for rule, d in ((CONST, 3.0), (K3, 0.0)):
        p = [0.5, 0.5] if rule is CONST else [1.0, 0.0]
        rep = simulate_change_tree(rule, d, p, (1, 0), 5, 100, 200, 1)
        assert rep.extinct_fraction(1) == 1.0


def test_change_tree_kcore_extinction():
    rep = simulate_change_tree(K3, 4.0, P4, DOWN, 50, 10**6, 10**4, 7)
    assert rep.extinct_fraction(50) >= 0.999
    # mean population decays like rho**g
    rho = kcore_transition_entry(3, 4.0, P4[1])[0]
    # offspring is 0 or 2 for a chi=1 parent, so use the Galton-Watson variance
    sigma2 = 2 * rho * 2 - rho**2
    for g in range(1, 8):
        var = sigma2 * rho ** (g - 1) * (1 - rho**g) / (1 - rho)
        assert abs(rep.mean_population[g] - rho**g) <= 4 * np.sqrt(var / rep.trials)
    ratios = rep.mean_population[3:8] / rep.mean_population[2:7]
    assert (ratios <= rho + 0.1).all()


def test_change_tree_errors():
    with pytest.raises(ParameterError):
        simulate_change_tree(K3, 4.0, P4, DOWN, 0, 10, 10, 0)
    with pytest.raises(InputError):
        simulate_change_tree(K3, 4.0, P4, (1, 1), 5, 10, 10, 0)


def test_fixed_point_matches_oracle():
    assert iterate_to_fixed_point(K3, 4.0, [0, 1], tol=1e-13).limit[1] == pytest.approx(P4[1], abs=1e-10)
