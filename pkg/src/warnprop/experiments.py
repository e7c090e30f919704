"""Named experiments: each writes CSV tables plus a JSON manifest.

Every trial draws from ``rng.stream(seed, experiment, ...)`` keyed by its own
parameters, so results do not depend on the number of worker threads or the
order trials finish in.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .cascade import alpha_from_report, run_marking, track_cascades
from .change import estimate_transition_matrix, simulate_change_tree, spectral_radius
from .dist import iterate_to_fixed_point, threshold_scan
from .errors import ValidationError
from .graph import gen_gnp, init_messages, peel_kcore, wp_run
from .halfedge import compare_models, estimate_match_probability, qr_classes
from .rng import stream
from .rules import UpdateRule, load_rule
from .tree import potential_changes

EXPERIMENTS = ("convergence", "core-threshold", "subcriticality", "model-compare",
               "match-prob", "cascades")

REQUIRED = {
    "convergence": ("d", "delta", "ns"),
    "core-threshold": ("d_grid", "n"),
    "subcriticality": ("d", "trials"),
    "model-compare": ("d", "t0", "n"),
    "match-prob": ("d", "t0", "ns", "trials"),
    "cascades": ("d", "n", "t0", "delta0"),
}


@dataclass
class ExperimentConfig:
    name: str
    rule: str
    seed: int
    out: str
    params: dict = field(default_factory=dict)
    threads: int = 1

    def validate(self):
        if self.name not in EXPERIMENTS:
            raise ValidationError(f"unknown experiment {self.name!r}; choose from {', '.join(EXPERIMENTS)}")
        if self.seed is None:
            raise ValidationError("a seed is required")
        missing = [k for k in REQUIRED[self.name] if self.params.get(k) is None]
        if missing:
            raise ValidationError(f"experiment {self.name} needs {', '.join(missing)}")
        if self.threads < 1:
            raise ValidationError("threads must be positive")


def threads_from_env(default: int) -> int:
    env = os.environ.get("WP_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValidationError(f"WP_THREADS must be an integer, got {env!r}") from None
    return default


def _map(fn, items, threads):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(fn, items))


def _q0(rule: UpdateRule, params):
    from .dist import parse_dist

    spec = params.get("q0")
    return rule.default_init() if spec is None else parse_dist(str(spec), rule.alphabet)


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.10g}"
    if isinstance(x, np.integer):
        return int(x)
    return x


# experiments -----------------------------------------------------------------

def convergence_t0(changes_after: list[int], n: int, delta: float) -> int:
    """Smallest t0 with fewer than ``delta n`` directed edges still to change."""
    for t, c in enumerate(changes_after):
        if c < delta * n:
            return t
    return len(changes_after)


def post_changes(rule, d, q0, n, seed, rep=0, t_max=10_000) -> tuple[list[int], list[int]]:
    """Per-round change counts and, for every t, edges differing from the fixed point."""
    g = gen_gnp(n, d, stream(seed, "graph", n, rep))
    sg, changes = wp_run(init_messages(g, q0, stream(seed, "init", n, rep), rule), rule, t_max)
    final = sg.message
    after = [int((sg.messages_at(t) != final).sum()) for t in range(sg.horizon + 1)]
    return changes, after


def exp_convergence(cfg, rule, q0):
    P = cfg.params
    ns = [int(x) for x in P["ns"]]
    reps = int(P.get("reps", 3))
    jobs = [(n, r) for n in ns for r in range(reps)]

    def one(job):
        n, r = job
        changes, after = post_changes(rule, float(P["d"]), q0, n, cfg.seed, r)
        return n, r, changes, after, convergence_t0(after, n, float(P["delta"]))

    res = _map(one, jobs, cfg.threads)
    rounds = [(n, r, t + 1, c) for n, r, ch, _, _ in res for t, c in enumerate(ch)]
    t0s = [(n, r, t0) for n, r, _, _, t0 in res]
    summary = [(n, float(np.median([t for m, _, t in t0s if m == n]))) for n in ns]
    return {
        "rounds.csv": (("n", "rep", "round", "changes"), rounds),
        "t0.csv": (("n", "rep", "t0"), t0s),
        "t0_summary.csv": (("n", "median_t0"), summary),
    }


def exp_core_threshold(cfg, rule, q0):
    P = cfg.params
    k = rule.params.get("k")
    if rule.kind != "kcore":
        raise ValidationError("core-threshold needs a kcore rule")
    grid = [float(x) for x in P["d_grid"]]
    n = int(P["n"])
    reps = int(P.get("reps", 5))
    rep = threshold_scan(rule, min(grid), max(grid), q0)
    jobs = [(d, r) for d in grid for r in range(reps)]

    def one(job):
        d, r = job
        g = gen_gnp(n, d, stream(cfg.seed, "core", repr(d), r))
        return d, r, len(peel_kcore(g, k)) / n

    fr = _map(one, jobs, cfg.threads)
    limits = [(d, float(iterate_to_fixed_point(rule, d, q0).limit[1])) for d in grid]
    return {
        "threshold.csv": (("d_star", "lo", "hi", "jump", "continuous"),
                          [(rep.d_star, rep.lo, rep.hi, rep.jump, rep.continuous)]),
        "core_fraction.csv": (("d", "rep", "core_fraction"), fr),
        "limit.csv": (("d", "limit_one"), limits),
    }


def exp_subcriticality(cfg, rule, q0):
    P = cfg.params
    d, trials = float(P["d"]), int(P["trials"])
    p = iterate_to_fixed_point(rule, d, q0).limit
    T = estimate_transition_matrix(rule, d, p, trials, cfg.seed)
    rep = spectral_radius(T, seed=stream(cfg.seed, "boot"))
    a = rule.alphabet
    name = lambda t: f"{a.name(t[0].old)}>{a.name(t[0].new)}|{a.name(t[1])}"  # noqa: E731
    rows = [(name(T.types[j]), name(T.types[i]), T.entries[i, j], T.stderr[i, j])
            for j in range(len(T.types)) for i in range(len(T.types))]
    surv = []
    changes = sorted(potential_changes(rule, d, p).pairs)
    for c in changes:
        sim = simulate_change_tree(rule, d, p, c, int(P.get("max_gen", 50)),
                                   int(P.get("max_size", 10**5)), int(P.get("tree_trials", trials)),
                                   cfg.seed)
        for g in range(1, len(sim.extinct_by)):
            surv.append((f"{a.name(c.old)}>{a.name(c.new)}", g, sim.extinct_by[g], sim.mean_population[g]))
    return {
        "matrix.csv": (("from_type", "to_type", "mean", "stderr"), rows),
        "spectral.csv": (("rho", "ci_lo", "ci_hi", "gamma", "verdict"),
                         [(rep.rho, rep.ci[0], rep.ci[1], rep.gamma, rep.verdict)]),
        "alpha.csv": (("type", "alpha"), [(name(t), a) for t, a in zip(T.types, rep.alpha)]),
        "extinction.csv": (("change", "generation", "extinct_fraction", "mean_population"), surv),
    }


def exp_model_compare(cfg, rule, q0):
    P = cfg.params
    rep = compare_models(rule, float(P["d"]), q0, int(P["t0"]), int(P["n"]), stream(cfg.seed, "compare"))
    fs = rule.alphabet.format_story
    rows = [(fs(a), fs(b), e, cg, ch) for a, b, e, cg, ch in rep.pairs]
    return {
        "pairs.csv": (("in_story", "out_story", "expected", "count_graph", "count_halfedge"), rows),
        "summary.csv": (("k0", "graph_dev_over_sqrt_n", "halfedge_dev_over_sqrt_n", "high_degree_graph",
                         "high_degree_halfedge", "model_l1_discrepancy", "halfedge_match"),
                        [(rep.k0, rep.graph_dev_over_sqrt_n, rep.halfedge_dev_over_sqrt_n,
                          rep.high_degree_graph, rep.high_degree_halfedge, rep.l1_discrepancy,
                          rep.halfedge_match)]),
    }


def exp_match_prob(cfg, rule, q0):
    P = cfg.params
    d, t0, trials = float(P["d"]), int(P["t0"]), int(P["trials"])
    ns = [int(x) for x in P["ns"]]

    def one(n):
        return n, estimate_match_probability(rule, d, q0, t0, n, trials, stream(cfg.seed, "match", n))

    res = _map(one, ns, cfg.threads)
    rows = [(n, r.estimate, r.ci[0], r.ci[1], r.hits, r.trials) for n, r in res]
    cls = qr_classes(rule, d, q0, t0)
    good = [(math.log(n), math.log(r.estimate)) for n, r in res if r.hits > 0]
    slope = float(np.polyfit(*zip(*good), 1)[0]) if len(good) >= 2 else float("nan")
    return {
        "match_prob.csv": (("n", "estimate", "ci_lo", "ci_hi", "hits", "trials"), rows),
        "classes.csv": (("t", "S", "Q", "R"), [(t, s, q, r) for t, (s, q, r) in
                                              enumerate(zip(cls.S, cls.Q, cls.R))]),
        "scaling.csv": (("R_below", "exponent", "fitted_log_slope"), [(cls.R_below, cls.exponent, slope)]),
    }


def exp_cascades(cfg, rule, q0):
    P = cfg.params
    d, n, t0, delta0 = float(P["d"]), int(P["n"]), int(P["t0"]), float(P["delta0"])
    reps = int(P.get("reps", 3))
    p = iterate_to_fixed_point(rule, d, q0).limit
    from .change import exact_transition_matrix

    T = exact_transition_matrix(rule, d, p)
    alpha = alpha_from_report(T.types, spectral_radius(T).alpha)

    def one(r):
        g = gen_gnp(n, d, stream(cfg.seed, "cascade-graph", r))
        sg, _ = wp_run(init_messages(g, q0, stream(cfg.seed, "cascade-init", r), rule), rule, 10_000)
        tc = track_cascades(sg, t0)
        mk = run_marking(None, rule, q0, t0, delta0, alpha, None, sg=sg)
        return r, tc, mk

    res = _map(one, range(reps), cfg.threads)
    comp = [(r, s, c) for r, tc, _ in res for s, c in sorted(tc.size_histogram().items())]
    summ = [(r, mk.stop, mk.total_marked, mk.duplicates, mk.freaks, mk.spurious, tc.total_marked,
             tc.largest, mk.k0) for r, tc, mk in res]
    return {
        "components.csv": (("rep", "component_size", "count"), comp),
        "marking.csv": (("rep", "stop", "marked", "duplicates", "freaks", "spurious",
                         "changed_edges", "largest_component", "k0"), summ),
    }


RUNNERS = {
    "convergence": exp_convergence,
    "core-threshold": exp_core_threshold,
    "subcriticality": exp_subcriticality,
    "model-compare": exp_model_compare,
    "match-prob": exp_match_prob,
    "cascades": exp_cascades,
}


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def run_experiment(cfg: ExperimentConfig) -> Path:
    """Run ``cfg`` and return the manifest path."""
    cfg.validate()
    rule = load_rule(cfg.rule)
    q0 = _q0(rule, cfg.params)
    tables = RUNNERS[cfg.name](cfg, rule, q0)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for fname, (header, rows) in tables.items():
        path = out / fname
        write_csv(path, header, rows)
        files[fname] = sha256(path)
    manifest = {
        "experiment": cfg.name,
        "rule": rule.to_spec(),
        "seed": cfg.seed,
        "params": cfg.params,
        "seeding": "numpy SeedSequence(seed, spawn_key=(crc32(tag), ...)) per trial",
        "versions": {
            "warnprop": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "files": files,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path

