"""Distributions on the alphabet and the Poissonized WP operator.

``poissonized_update(rule, d, p)`` is the law of ``rule(M)`` where ``M``
contains ``Po(d * p[s])`` copies of each symbol ``s``, independently. Since
the rule only sees counts capped at ``rule.cap``, the law is an exact finite
sum over ``(cap+1)^|alphabet|`` capped count vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammainc, gammaln, xlogy

from .errors import FeasibilityError, InputError, ParameterError
from .rules import Alphabet, UpdateRule

MAX_ENUMERATION = 10**7


def as_dist(p, size: int | None = None, atol: float = 1e-12) -> np.ndarray:
    q = np.asarray(p, dtype=float).reshape(-1)
    if size is not None and q.shape != (size,):
        raise InputError(f"distribution has {q.size} weights, alphabet has {size} symbols")
    if (q < 0).any() or not np.isfinite(q).all():
        raise InputError("distribution weights must be finite and nonnegative")
    if abs(q.sum() - 1.0) > atol:
        raise InputError(f"distribution weights sum to {q.sum()!r}, not 1")
    return q


def point_mass(alphabet: Alphabet, symbol) -> np.ndarray:
    q = np.zeros(alphabet.size)
    q[alphabet.index(symbol)] = 1.0
    return q


def parse_dist(text: str, alphabet: Alphabet) -> np.ndarray:
    """Parse ``"1"`` (point mass), ``"uniform"`` or ``"0:0.25,1:0.75"``."""
    text = text.strip()
    if text == "uniform":
        return np.full(alphabet.size, 1.0 / alphabet.size)
    if ":" not in text:
        return point_mass(alphabet, text)
    q = np.zeros(alphabet.size)
    for part in text.split(","):
        sym, _, w = part.rpartition(":")
        try:
            q[alphabet.index(sym)] += float(w)
        except ValueError:
            raise InputError(f"bad weight in distribution spec {text!r}") from None
    return as_dist(q, atol=1e-9) / q.sum()


def format_dist(p, alphabet: Alphabet) -> str:
    return ",".join(f"{s}:{w:.12g}" for s, w in zip(alphabet.symbols, p))


def capped_poisson_weights(lam, cap: int) -> np.ndarray:
    """Row ``s`` is the law of ``min(Po(lam[s]), cap)`` on ``0..cap``."""
    lam = np.asarray(lam, dtype=float)
    c = np.arange(cap)
    w = np.empty(lam.shape + (cap + 1,))
    w[..., :cap] = np.exp(xlogy(c, lam[..., None]) - lam[..., None] - gammaln(c + 1))
    w[..., cap] = gammainc(cap, lam) if cap > 0 else 1.0
    return w


def capped_count_law(rule: UpdateRule, lam) -> np.ndarray:
    """Probability of every capped count vector, flattened in table order."""
    if rule.n_states > MAX_ENUMERATION:
        raise FeasibilityError(
            f"(cap+1)^|alphabet| = {rule.n_states} exceeds {MAX_ENUMERATION}; use Monte Carlo"
        )
    w = capped_poisson_weights(lam, rule.cap)
    law = np.ones(1)
    for row in w:
        law = np.multiply.outer(law, row).reshape(-1)
    return law


def poissonized_update(rule: UpdateRule, d: float, p) -> np.ndarray:
    """Exact law of ``rule(Po(d p))``."""
    if d < 0:
        raise ParameterError("d must be nonnegative")
    p = as_dist(p, rule.size, atol=1e-9)
    law = capped_count_law(rule, d * p)
    out = np.bincount(rule._flat, weights=law, minlength=rule.size)
    return out / out.sum()


def tv_distance(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise InputError(f"alphabet mismatch: {p.shape} vs {q.shape}")
    return 0.5 * float(np.abs(p - q).sum())


@dataclass
class FixedPointReport:
    limit: np.ndarray
    iterations: int
    converged: bool
    final_step_tv: float


def iterate_to_fixed_point(rule, d, q0, tol=1e-12, max_iter=100_000) -> FixedPointReport:
    """Iterate the Poissonized operator from ``q0`` until successive TV <= tol."""
    if tol <= 0:
        raise ParameterError("tol must be positive")
    p = as_dist(q0, rule.size)
    step = np.inf
    for it in range(1, max_iter + 1):
        nxt = poissonized_update(rule, d, p)
        step = tv_distance(nxt, p)
        p = nxt
        if step <= tol:
            return FixedPointReport(p, it, True, step)
    return FixedPointReport(p, max_iter, False, step)


def iterates(rule, d, q0, t: int) -> np.ndarray:
    """Rows are ``Phi^0(q0), ..., Phi^t(q0)``."""
    out = [as_dist(q0, rule.size)]
    for _ in range(t):
        out.append(poissonized_update(rule, d, out[-1]))
    return np.array(out)


def stability_estimate(rule, d, p, eps: float = 1e-4) -> float:
    """Largest TV expansion ratio of the operator at ``p`` along simplex edges.

    Returns max over symbols a != b with p[a] >= eps of
    TV(Phi(p + eps (e_b - e_a)), Phi(p)) / eps. Below 1 means locally
    contracting at this scale.
    """
    p = as_dist(p, rule.size, atol=1e-9)
    base = poissonized_update(rule, d, p)
    best = None
    for a in range(rule.size):
        if p[a] < eps:
            continue
        for b in range(rule.size):
            if b == a:
                continue
            q = p.copy()
            q[a] -= eps
            q[b] += eps
            ratio = tv_distance(poissonized_update(rule, d, q), base) / eps
            best = ratio if best is None else max(best, ratio)
    if best is None:
        raise InputError("no feasible perturbation direction (alphabet of size 1 or eps too large)")
    return best


@dataclass
class ThresholdReport:
    d_star: float | None
    lo: float
    hi: float
    jump: float
    continuous: bool | None

    @property
    def found(self) -> bool:
        return self.d_star is not None


def threshold_scan(
    rule, d_min, d_max, q0=None, tol=1e-12, eta=0.1, xtol=1e-6, max_iter=1_000_000
) -> ThresholdReport:
    """Bisect on d for the point where the limit from ``q0`` moves more than
    ``eta`` (in TV) away from the limit at ``d_min``."""
    if not d_min < d_max:
        raise ParameterError("need d_min < d_max")
    if not 0 < eta < 1:
        raise ParameterError("eta must lie in (0, 1)")
    q0 = rule.default_init() if q0 is None else as_dist(q0, rule.size)

    def limit(d):
        return iterate_to_fixed_point(rule, d, q0, tol=tol, max_iter=max_iter).limit

    ref = limit(d_min)
    lim_hi = limit(d_max)
    if tv_distance(lim_hi, ref) <= eta:
        return ThresholdReport(None, d_min, d_max, 0.0, None)
    lo, hi, lim_lo = d_min, d_max, ref
    while hi - lo > xtol:
        mid = 0.5 * (lo + hi)
        lim_mid = limit(mid)
        if tv_distance(lim_mid, ref) > eta:
            hi, lim_hi = mid, lim_mid
        else:
            lo, lim_lo = mid, lim_mid
    jump = tv_distance(lim_hi, lim_lo)
    return ThresholdReport(0.5 * (lo + hi), lo, hi, jump, jump <= eta)
