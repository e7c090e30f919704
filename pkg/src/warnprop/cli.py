"""Command line entry point ``wp``.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from .errors import InputError, WPError
from .experiments import EXPERIMENTS, ExperimentConfig, run_experiment, threads_from_env
from .rng import stream


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _out(path):
    return open(path, "w", newline="")


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def _kv(fh, **items):
    for k, v in items.items():
        if isinstance(v, float):
            v = f"{v:.10g}"
        fh.write(f"{k}={v}\n")


def _rule_and_q0(args):
    from .dist import parse_dist
    from .rules import load_rule

    rule = load_rule(args.rule)
    q0 = rule.default_init() if getattr(args, "q0", None) is None else parse_dist(args.q0, rule.alphabet)
    return rule, q0


def _type_name(rule, t):
    a = rule.alphabet
    return f"{a.name(t[0].old)}>{a.name(t[0].new)}|{a.name(t[1])}"


# subcommands -----------------------------------------------------------------

def cmd_run(args):
    from .graph import gen_gnp, init_messages, wp_run, write_stories

    rule, q0 = _rule_and_q0(args)
    g = gen_gnp(args.n, args.d, stream(args.seed, "graph"))
    mg = init_messages(g, q0, stream(args.seed, "init"), rule)
    sg, changes = wp_run(mg, rule, args.tmax, record_stories=args.stories is not None)
    w = _writer(sys.stdout)
    w.writerow(["round", "changes"])
    for r, c in enumerate(changes, 1):
        w.writerow([r, c])
    if args.stories:
        write_stories(sg, args.stories, rule.alphabet)
    return 0


def cmd_fixedpoint(args):
    from .dist import format_dist, iterate_to_fixed_point, stability_estimate

    rule, q0 = _rule_and_q0(args)
    rep = iterate_to_fixed_point(rule, args.d, q0, tol=args.tol, max_iter=args.max_iter)
    out = dict(limit=format_dist(rep.limit, rule.alphabet), iterations=rep.iterations,
               converged=rep.converged, final_step_tv=rep.final_step_tv)
    try:
        out["stability"] = stability_estimate(rule, args.d, rep.limit)
    except InputError:
        out["stability"] = "n/a"
    _kv(sys.stdout, **out)
    return 0 if rep.converged else 1


def cmd_threshold(args):
    from .dist import threshold_scan

    rule, q0 = _rule_and_q0(args)
    rep = threshold_scan(rule, args.dmin, args.dmax, q0, eta=args.eta, xtol=args.xtol)
    _kv(sys.stdout, found=rep.found, d_star=rep.d_star if rep.found else "none", lo=rep.lo, hi=rep.hi,
        jump=rep.jump, continuous=rep.continuous)
    return 0


def cmd_story(args):
    from .tree import sample_stories, story_histogram

    rule, q0 = _rule_and_q0(args)
    st = sample_stories(rule, args.d, q0, args.t, args.samples, args.seed)
    w = _writer(sys.stdout)
    w.writerow(["story", "count"])
    for story, c in sorted(story_histogram(st).items()):
        w.writerow([rule.alphabet.format_story(story), c])
    return 0


def cmd_subcrit(args):
    from .change import estimate_transition_matrix, spectral_radius
    from .dist import iterate_to_fixed_point

    rule, q0 = _rule_and_q0(args)
    p = iterate_to_fixed_point(rule, args.d, q0).limit
    changes = None
    if args.change:
        old, new = args.change.split(",")
        changes = [(rule.alphabet.index(old), rule.alphabet.index(new))]
    T = estimate_transition_matrix(rule, args.d, p, args.trials, args.seed, changes=changes)
    rep = spectral_radius(T, seed=args.seed)
    alpha = ",".join(f"{_type_name(rule, t)}:{a:.6g}" for t, a in zip(T.types, rep.alpha))
    _kv(sys.stdout, rho=rep.rho, ci_lo=rep.ci[0], ci_hi=rep.ci[1], gamma=rep.gamma, alpha=alpha,
        verdict=rep.verdict, types=len(T.types),
        infeasible=",".join(_type_name(rule, T.types[i]) for i in T.infeasible) or "none")
    if args.matrix:
        with _out(args.matrix) as fh:
            w = _writer(fh)
            w.writerow(["from_type", "to_type", "mean", "stderr"])
            for j, tj in enumerate(T.types):
                for i, ti in enumerate(T.types):
                    w.writerow([_type_name(rule, tj), _type_name(rule, ti),
                                f"{T.entries[i, j]:.10g}", f"{T.stderr[i, j]:.10g}"])
    return 0


def cmd_halfedge(args):
    from .halfedge import (compare_models, conditioned_ensembles, expected_pair_probs,
                           generate_ensemble, sample_matching, story_distribution_exact,
                           story_statistics)
    from .graph import write_stories

    rule, q0 = _rule_and_q0(args)
    if args.require_match:
        ens = conditioned_ensembles(rule, args.d, q0, args.t0, args.n, 1, args.seed)[0]
    else:
        ens = generate_ensemble(rule, args.d, q0, args.t0, args.n, args.seed)
    stats = story_statistics(ens)
    expected = expected_pair_probs(story_distribution_exact(rule, args.d, q0, args.t0))
    keys = sorted(set(expected) | set(stats.counts))
    fs = rule.alphabet.format_story
    w = _writer(sys.stdout)
    w.writerow(["in_story", "out_story", "count", "expected"])
    for a, b in keys:
        w.writerow([fs(a), fs(b), stats.counts.get((a, b), 0),
                    f"{args.d * args.n * expected.get((a, b), 0.0):.10g}"])
    if args.emit_graph:
        sg = sample_matching(ens, args.seed)
        write_stories(sg, args.emit_graph, rule.alphabet)
    rep = compare_models(rule, args.d, q0, args.t0, args.n, args.seed)
    err = sys.stderr if args.report is None else _out(args.report)
    _kv(err, method=ens.info.get("method", "unconditioned"), k0=rep.k0,
        graph_dev_over_sqrt_n=rep.graph_dev_over_sqrt_n,
        halfedge_dev_over_sqrt_n=rep.halfedge_dev_over_sqrt_n,
        high_degree_graph=rep.high_degree_graph, high_degree_halfedge=rep.high_degree_halfedge,
        unconditioned_match=rep.halfedge_match, model_l1_discrepancy=rep.l1_discrepancy)
    return 0


def cmd_cascade(args):
    from .cascade import alpha_from_report, run_marking, track_cascades
    from .change import exact_transition_matrix, spectral_radius
    from .dist import iterate_to_fixed_point
    from .errors import FeasibilityError
    from .graph import gen_gnp, init_messages, wp_run

    rule, q0 = _rule_and_q0(args)
    g = gen_gnp(args.n, args.d, stream(args.seed, "graph"))
    sg, _ = wp_run(init_messages(g, q0, stream(args.seed, "init"), rule), rule, args.tmax)
    p = iterate_to_fixed_point(rule, args.d, q0).limit
    try:
        T = exact_transition_matrix(rule, args.d, p)
        alpha = alpha_from_report(T.types, spectral_radius(T).alpha)
    except (FeasibilityError, InputError):
        alpha = None
    tc = track_cascades(sg, args.t0)
    mk = run_marking(None, rule, q0, args.t0, args.delta0, alpha, args.seed, sg=sg)
    w = _writer(sys.stdout)
    w.writerow(["component_size", "count"])
    for s, c in sorted(tc.size_histogram().items()):
        w.writerow([s, c])
    sys.stdout.write(mk.summary() + "\n")
    return 0


def cmd_experiment(args):
    params = {}
    if args.config:
        with open(args.config) as fh:
            params.update(json.load(fh))
    for kv in args.param or []:
        if "=" not in kv:
            raise UsageError(f"--param expects key=value, got {kv!r}")
        k, v = kv.split("=", 1)
        params[k.replace("-", "_")] = _parse_value(v)
    for key in ("n", "d", "t0", "tol", "trials", "delta0", "delta", "q0", "reps"):
        v = getattr(args, key, None)
        if v is not None:
            params[key] = v
    if args.ns:
        params["ns"] = [int(x) for x in args.ns.split(",")]
    if args.d_grid:
        params["d_grid"] = _grid(args.d_grid)
    cfg = ExperimentConfig(args.name, params.pop("rule", args.rule), args.seed, args.out, params,
                           threads_from_env(args.threads))
    path = run_experiment(cfg)
    sys.stdout.write(f"manifest={path}\n")
    return 0


def _parse_value(v: str):
    for conv in (int, float):
        try:
            return conv(v)
        except ValueError:
            pass
    if "," in v:
        return [_parse_value(x) for x in v.split(",")]
    return v


def _grid(text: str):
    """``a:b:step`` (inclusive) or a comma list."""
    if ":" in text:
        a, b, s = (float(x) for x in text.split(":"))
        k = int(round((b - a) / s))
        return [round(a + i * s, 10) for i in range(k + 1)]
    return [float(x) for x in text.split(",")]


# parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wp", description="Warning Propagation on sparse random graphs.")
    p.add_argument("--threads", type=int, default=1, help="worker threads (WP_THREADS overrides)")
    sub = p.add_subparsers(dest="cmd", parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(fn=fn)
        sp.add_argument("--threads", type=int, default=argparse.SUPPRESS)
        return sp

    s = add("run", cmd_run, "run WP on G(n, d/n) and print per-round change counts")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--d", type=float, required=True)
    s.add_argument("--rule", required=True)
    s.add_argument("--q0")
    s.add_argument("--tmax", type=int, default=1000)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--stories")

    s = add("fixedpoint", cmd_fixedpoint, "iterate the Poissonized operator to its limit")
    s.add_argument("--rule", required=True)
    s.add_argument("--d", type=float, required=True)
    s.add_argument("--q0")
    s.add_argument("--tol", type=float, default=1e-12)
    s.add_argument("--max-iter", type=int, default=100_000)

    s = add("threshold", cmd_threshold, "bisect on d for a jump of the limit")
    s.add_argument("--rule", required=True)
    s.add_argument("--dmin", type=float, required=True)
    s.add_argument("--dmax", type=float, required=True)
    s.add_argument("--eta", type=float, default=0.1)
    s.add_argument("--xtol", type=float, default=1e-6)
    s.add_argument("--q0")

    s = add("story", cmd_story, "histogram of sampled tree stories")
    s.add_argument("--rule", required=True)
    s.add_argument("--d", type=float, required=True)
    s.add_argument("--q0")
    s.add_argument("--t", type=int, required=True)
    s.add_argument("--samples", type=int, default=100_000)
    s.add_argument("--seed", type=int, required=True)

    s = add("subcrit", cmd_subcrit, "transition matrix and spectral radius of the change process")
    s.add_argument("--rule", required=True)
    s.add_argument("--d", type=float, required=True)
    s.add_argument("--q0")
    s.add_argument("--trials", type=int, default=10_000)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--change", help="restrict the root change, e.g. 1,0")
    s.add_argument("--matrix", help="write the typed matrix as CSV")

    s = add("halfedge", cmd_halfedge, "half-edge ensemble statistics and model comparison")
    s.add_argument("--rule", required=True)
    s.add_argument("--d", type=float, required=True)
    s.add_argument("--q0")
    s.add_argument("--t0", type=int, required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--require-match", action="store_true")
    s.add_argument("--emit-graph")
    s.add_argument("--report", help="write the comparison report here instead of stderr")

    s = add("cascade", cmd_cascade, "post-t0 cascades and the marking process")
    s.add_argument("--rule", required=True)
    s.add_argument("--d", type=float, required=True)
    s.add_argument("--q0")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--t0", type=int, required=True)
    s.add_argument("--delta0", type=float, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--tmax", type=int, default=10_000)

    s = add("experiment", cmd_experiment, "run a named experiment: " + ", ".join(EXPERIMENTS))
    s.add_argument("name")
    s.add_argument("--rule", default="kcore:3")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config", help="JSON file with parameters")
    s.add_argument("--param", action="append", help="extra key=value parameter")
    s.add_argument("--n", type=int)
    s.add_argument("--ns", help="comma-separated list of n")
    s.add_argument("--d", type=float)
    s.add_argument("--d-grid", help="a:b:step or comma list")
    s.add_argument("--q0")
    s.add_argument("--t0", type=int)
    s.add_argument("--tol", type=float)
    s.add_argument("--trials", type=int)
    s.add_argument("--reps", type=int)
    s.add_argument("--delta", type=float)
    s.add_argument("--delta0", type=float)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.cmd is None:
            raise UsageError(parser.format_usage().strip())
        np.seterr(all="ignore")
        return args.fn(args)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return 2
    except InputError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except (WPError, OSError, ValueError) as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
