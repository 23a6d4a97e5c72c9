"""Command-line interface.

Subcommands: ``ingest``, ``synth``, ``fit``, ``hierarchy``, ``cluster`` and
``gof``. Options may also come from a flat ``key = value`` file given with
``--config``; keys are option names without the leading dashes. Command
line values override the file, which overrides the defaults.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import analytics, ingest as ingest_mod, pipeline
from .em import FitConfig, NumericalError
from .model import Dataset, GroundTruth, ModelState, SyntheticSpec, generate_synthetic


class UsageError(ValueError):
    pass


# -- config file -------------------------------------------------------------

def read_config(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as f:
        for n, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key = value")
            k, v = (s.strip() for s in line.split("=", 1))
            out[k.replace("_", "-")] = v
    return out


def _config_argv(cfg, parser):
    """Turn config entries into option strings that argparse understands."""
    known = {}
    for a in parser._actions:
        for s in a.option_strings:
            known[s] = a
    argv = []
    for k, v in cfg.items():
        opt = "--" + k
        if opt not in known or k == "config":
            raise UsageError(f"unknown config key {k!r}")
        if isinstance(known[opt], argparse.BooleanOptionalAction):
            if v.lower() not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise UsageError(f"config key {k!r} needs a boolean, got {v!r}")
            argv.append(opt if v.lower() in ("1", "true", "yes", "on") else "--no-" + k)
        else:
            argv += [opt, v]
    return argv


# -- parser ------------------------------------------------------------------

def _int_list(s):
    try:
        return tuple(int(x) for x in s.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}")


def _fit_options(p):
    p.add_argument("--k", type=int, default=3, help="number of events")
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-6, help="relative objective change")
    p.add_argument("--qp-tol", type=float, default=1e-8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--kappa-solver", choices=("banerjee", "bisection"), default="banerjee")
    p.add_argument("--top", type=int, default=10, help="words/hashtags per event report")
    p.add_argument("--prune-threshold", type=float, default=0.8)


def build_parser():
    parser = argparse.ArgumentParser(prog="mmevents", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_input=True):
        p.add_argument("--config", help="key = value options file")
        # required-ness is checked after merging the config file
        if needs_input:
            p.add_argument("--input")
        p.add_argument("--output")

    p = sub.add_parser("ingest", help="JSONL tweets to a dataset file")
    common(p)
    p.add_argument("--min-geotags", type=int, default=1)
    p.add_argument("--min-words", type=int, default=1)
    p.add_argument("--min-doc-freq", type=int, default=1)
    p.add_argument("--dict-size", type=int, default=None)
    p.add_argument("--stopwords", help="file with one stopword per line")
    p.add_argument("--max-resultant", type=float, default=None,
                   help="drop hashtags whose mean geotag resultant exceeds this")
    p.add_argument("--keep-raw", action=argparse.BooleanOptionalAction, default=True)

    p = sub.add_parser("synth", help="sample a synthetic dataset")
    common(p, needs_input=False)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--hashtags", type=int, default=200)
    p.add_argument("--dict-size", type=int, default=50)
    p.add_argument("--words", type=int, default=200, help="words per hashtag")
    p.add_argument("--geotags", type=int, default=50, help="geotags per hashtag")
    p.add_argument("--kappa", type=float, default=50.0)
    p.add_argument("--min-angle", type=float, default=60.0)
    p.add_argument("--active", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("fit", help="fit the event model")
    common(p)
    _fit_options(p)

    p = sub.add_parser("hierarchy", help="multi-round fit with pruning and zoom")
    common(p)
    _fit_options(p)
    p.add_argument("--rounds", type=int, default=2)
    p.add_argument("--zoom", type=_int_list, default=(), help="round-1 events to refit, e.g. 0,2")
    p.add_argument("--zoom-k", type=int, default=2)

    p = sub.add_parser("cluster", help="k-means on the coefficients, plus MDS coordinates")
    common(p)
    p.add_argument("--model")
    p.add_argument("--clusters", type=int, default=None, help="default: number of events")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=False,
                   help="cluster c_i / sum(c_i) instead of c_i")
    p.add_argument("--truth", help="ground-truth file to score against")

    p = sub.add_parser("gof", help="goodness of fit against per-hashtag vMF fits")
    common(p)
    p.add_argument("--model")
    return parser


def parse_args(argv=None):
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        extra = _config_argv(read_config(args.config), parser._subparsers._group_actions[0]
                             .choices[args.command])
        pos = argv.index(args.command) + 1
        args = parser.parse_args(argv[:pos] + extra + argv[pos:])
    for name in ("input", "output", "model"):
        if hasattr(args, name) and getattr(args, name) is None:
            if name == "model" and args.command not in ("cluster", "gof"):
                continue
            raise UsageError(f"{args.command}: --{name} is required")
    return args


# -- commands ----------------------------------------------------------------

def _fit_config(a):
    return FitConfig(K=a.k, max_iters=a.max_iters, rel_tol=a.tol, qp_tol=a.qp_tol,
                     seed=a.seed, deterministic=a.deterministic, kappa_solver=a.kappa_solver)


def _out(a, name):
    return os.path.join(a.output, name)


def cmd_ingest(a):
    stop = ingest_mod.load_stopwords(a.stopwords) if a.stopwords else frozenset()
    cfg = ingest_mod.IngestConfig(a.min_geotags, a.min_words, a.min_doc_freq, a.dict_size,
                                  stop, a.max_resultant, a.keep_raw)
    data, rep = ingest_mod.ingest_file(a.input, cfg)
    os.makedirs(os.path.dirname(os.path.abspath(a.output)), exist_ok=True)
    data.save(a.output)
    return (f"ingested {rep.lines} lines ({rep.malformed} malformed): "
            f"{data.P} hashtags, {data.D} words")


def cmd_synth(a):
    spec = SyntheticSpec(K=a.k, P=a.hashtags, D=a.dict_size, M=a.words, N=a.geotags,
                         min_angle=a.min_angle, kappa_range=(a.kappa, a.kappa),
                         active=a.active, seed=a.seed)
    data, truth = generate_synthetic(spec)
    os.makedirs(a.output, exist_ok=True)
    data.save(_out(a, "dataset.json"))
    with open(_out(a, "truth.json"), "w") as f:
        json.dump(truth.to_json(), f)
    return f"synthetic dataset: {data.P} hashtags, {data.D} words, K={a.k}"


def _write_hierarchy(a, res):
    os.makedirs(a.output, exist_ok=True)
    for r in res.rounds:
        tag = ("" if r.round == 1 and r.parent is None
               else f"_zoom{r.parent}" if r.parent is not None else f"_round{r.round}")
        r.state.save(_out(a, f"model{tag}.json"))
        r.trace.to_csv(_out(a, f"trace{tag}.csv"))
    pipeline.write_reports(_out(a, "events.json"), pipeline.hierarchy_reports(res, a.top))
    pipeline.write_assignments(_out(a, "assignments.csv"), res.assignments())


def _run_hierarchy(a, rounds, zoom=(), zoom_k=2):
    data = Dataset.load(a.input)
    rc = pipeline.RoundConfig(_fit_config(a), rounds=rounds, prune_threshold=a.prune_threshold,
                              zoom=zoom, zoom_k=zoom_k)
    res = pipeline.hierarchical_fit(data, rc)
    _write_hierarchy(a, res)
    return data, res


def cmd_fit(a):
    data, res = _run_hierarchy(a, 1)
    r = res.rounds[0]
    status = "converged" if r.trace.converged else "stopped at max iterations"
    return (f"fit K={a.k} on {data.P} hashtags: {r.trace.n_iter} iterations, {status}, "
            f"objective {r.trace.objective[-1]:.6g}, {len(r.trace.warnings)} warnings")


def cmd_hierarchy(a):
    data, res = _run_hierarchy(a, a.rounds, a.zoom, a.zoom_k)
    n = len(res.assignments())
    msg = (f"{len(res.rounds)} fits, {n} assignments, "
           f"{len(res.residual)} of {data.P} hashtags unassigned")
    if res.stopped_early:
        msg += f"; stopped early ({res.stopped_early})"
    return msg


def _load_pair(a):
    data = Dataset.load(a.input)
    state = ModelState.load(a.model)
    if state.P != data.P or state.D != data.D:
        raise UsageError(f"model ({state.P} hashtags, {state.D} words) does not match "
                         f"dataset ({data.P}, {data.D})")
    return data, state


def cmd_cluster(a):
    data, state = _load_pair(a)
    pts = pipeline.normalized_coefficients(state.C).T if a.normalize else state.C.T
    k = a.clusters or state.K
    clus = analytics.kmeans(pts, k, seed=a.seed)
    mds = analytics.classical_mds(pts)
    os.makedirs(a.output, exist_ok=True)
    analytics.write_mds_csv(_out(a, "mds.csv"), data.ids, mds.coords, clus.labels)
    msg = f"{k} clusters over {data.P} hashtags"
    if mds.degenerate:
        msg += " (MDS rank < 2)"
    if a.truth:
        with open(a.truth) as f:
            truth = GroundTruth.from_json(json.load(f))
        ri = analytics.rand_index(clus, truth.labels)
        ari = analytics.adjusted_rand_index(clus, truth.labels)
        msg += f"; RI {ri:.4f}, ARI {ari:.4f}"
    return msg


def cmd_gof(a):
    data, state = _load_pair(a)
    rows, excluded = analytics.goodness_of_fit(state, data)
    os.makedirs(a.output, exist_ok=True)
    analytics.write_gof_csv(_out(a, "gof.csv"), rows)
    worst = min((r.baseline_mean - r.fused_mean for r in rows), default=0.0)
    return (f"goodness of fit for {len(rows)} events ({excluded} hashtags with < 2 geotags "
            f"excluded); smallest baseline - fused gap {worst:.4g}")


COMMANDS = {"ingest": cmd_ingest, "synth": cmd_synth, "fit": cmd_fit,
            "hierarchy": cmd_hierarchy, "cluster": cmd_cluster, "gof": cmd_gof}


def main(argv=None):
    try:
        args = parse_args(argv)
    except UsageError as e:
        print(f"mmevents: error: {e}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        msg = COMMANDS[args.command](args)
    except (OSError, ValueError, NumericalError, KeyError) as e:
        print(f"mmevents {args.command}: error: {e}", file=sys.stderr)
        return 2 if isinstance(e, UsageError) else 1
    print(msg)
    return 0


if __name__ == "__main__":
    sys.exit(main())
