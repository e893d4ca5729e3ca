"""Command-line interface.

Subcommands: sample, gd, se, estimate, meanfield, experiment, export.
Exit codes: 0 success, 2 configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys

import numpy as np

from .design import empirical_moments, kind_from_name, replication_seed, \
    sample_design
from .errors import ConfigError, GdseError, NumericError
from .estimator import EstimatorConfig, estimator_run
from .gd_engine import GdConfig, generate_response, run_gd
from .harness import (EXPERIMENT_CONFIGS, ResultTable, backend_from_spec,
                      emit_plotdata, parse_config_file, run_experiment)
from .meanfield import diagnostics_to_csv, mf_compare, mf_run
from .model import link_from_name, noise_from_name, single_index_model
from .state_evolution import SeGeometry, b_quantities, se_run


def _common_flags(parser):
    parser.add_argument("--config", metavar="PATH",
                        help="INI config file (sections per experiment)")
    parser.add_argument("--seed", type=int, default=None, metavar="U64",
                        help="base seed (overrides config)")
    parser.add_argument("--threads", type=int, default=1, metavar="K",
                        help="worker threads for replications")
    parser.add_argument("--out", default=".", metavar="DIR",
                        help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gdse",
        description="gradient descent dynamics in single-index models")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="sample a design matrix")
    _common_flags(p)
    p.add_argument("--kind", default="gaussian")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("gd", help="run empirical gradient descent")
    _common_flags(p)
    p.add_argument("--link", default="square")
    p.add_argument("--noise", default="zero")
    p.add_argument("--design", default="gaussian")
    p.add_argument("--m", type=int, default=3000)
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--eta", type=float, default=0.1)
    p.add_argument("--t-max", type=int, default=100)
    p.set_defaults(func=cmd_gd)

    p = sub.add_parser("se", help="run the deterministic state evolution")
    _common_flags(p)
    p.add_argument("--link", default="square")
    p.add_argument("--noise", default="zero")
    p.add_argument("--eta", type=float, default=0.1)
    p.add_argument("--t-max", type=int, default=100)
    p.add_argument("--mu0-norm", type=float, default=1.0)
    p.add_argument("--inner", type=float, default=0.1)
    p.add_argument("--mu-star-norm", type=float, default=1.0)
    p.add_argument("--nodes", type=int, default=60)
    p.set_defaults(func=cmd_se)

    p = sub.add_parser("estimate", help="run the data-free estimator")
    _common_flags(p)
    p.add_argument("--link", default="sigmoid")
    p.add_argument("--eta", type=float, default=0.5)
    p.add_argument("--t-max", type=int, default=60)
    p.add_argument("--mu-star-norm", type=float, default=1.0)
    p.add_argument("--gamma0", type=float, default=1.0)
    p.add_argument("--alpha0", type=float, default=0.0)
    p.add_argument("--backend", default="quadrature",
                   help="'quadrature' or 'mc:<draws>'")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("meanfield",
                       help="mean-field dynamics and degeneration diagnostics")
    _common_flags(p)
    p.add_argument("--link", default="identity")
    p.add_argument("--noise", default="zero")
    p.add_argument("--eta", type=float, default=0.5)
    p.add_argument("--phi", type=float, default=100.0)
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--t-max", type=int, default=3)
    p.add_argument("--draws", type=int, default=100000)
    p.add_argument("--p", type=int, default=2)
    p.set_defaults(func=cmd_meanfield)

    p = sub.add_parser("experiment", help="run a packaged experiment")
    _common_flags(p)
    p.add_argument("which", choices=sorted(EXPERIMENT_CONFIGS))
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("export", help="emit plot data (and render PNGs)")
    _common_flags(p)
    p.add_argument("--table", required=True, metavar="CSV")
    p.add_argument("--manifest", default=None, metavar="JSON")
    p.add_argument("--plot-id", required=True)
    p.add_argument("--no-render", action="store_true",
                   help="skip PNG rendering, emit CSV/JSON only")
    p.set_defaults(func=cmd_export)

    return parser


def _seed(args) -> int:
    return args.seed if args.seed is not None else 1


def _outdir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def cmd_sample(args) -> int:
    kind = kind_from_name(args.kind)
    X = sample_design(kind, args.m, args.n, _seed(args))
    out = _outdir(args)
    path = os.path.join(out, "design.csv")
    np.savetxt(path, X.entries, delimiter=",", fmt="%.17g")
    meta = {
        "kind": kind.name, "m": X.m, "n": X.n, "seed": _seed(args),
        "moments": {str(k): empirical_moments(X, k) for k in (1, 2, 3, 4)},
    }
    mpath = os.path.join(out, "design_meta.json")
    with open(mpath, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {path} and {mpath}")
    return 0


def cmd_gd(args) -> int:
    model = single_index_model(link_from_name(args.link),
                               noise_from_name(args.noise))
    kind = kind_from_name(args.design)
    seed = _seed(args)
    n = args.n
    mu_star = np.full(n, 1.0 / math.sqrt(n))
    rng = np.random.default_rng(replication_seed(seed, 1))
    mu0 = rng.standard_normal(n) / math.sqrt(n)
    X = sample_design(kind, args.m, n, replication_seed(seed, 2))
    y, _ = generate_response(X, mu_star, model, replication_seed(seed, 3))
    track = se_run(SeGeometry.from_vectors(mu0, mu_star), model, args.eta,
                   args.t_max)
    traj = run_gd(X, y, model,
                  GdConfig(step_sizes=args.eta, t_max=args.t_max, init=mu0),
                  mu_star=mu_star, se_track=track)
    out = _outdir(args)
    path = os.path.join(out, "trajectory.csv")
    traj.to_csv(path)
    final_corr = traj.corrs[-1] if traj.corrs.size else float("nan")
    status = ("diverged at t={}".format(traj.diverged_at)
              if traj.diverged_at is not None
              else f"final corr {final_corr:.6f}")
    print(f"wrote {path} ({status})")
    return 0


def cmd_se(args) -> int:
    model = single_index_model(link_from_name(args.link),
                               noise_from_name(args.noise))
    geometry = SeGeometry(mu0_norm=args.mu0_norm, inner=args.inner,
                          mu_star_norm=args.mu_star_norm)
    track = se_run(geometry, model, args.eta, args.t_max, nodes=args.nodes)
    bq = b_quantities(track, model=model)
    out = _outdir(args)
    path = os.path.join(out, "se.csv")
    track.to_csv(path, bq=bq)
    print(f"wrote {path}")
    return 0


def cmd_estimate(args) -> int:
    model = single_index_model(link_from_name(args.link),
                               noise_from_name("zero"))
    backend = backend_from_spec(args.backend, _seed(args))
    cfg = EstimatorConfig(mu_star_norm=args.mu_star_norm, eta=args.eta,
                          gamma0_hat=args.gamma0, alpha0_hat=args.alpha0,
                          backend=backend)
    track = estimator_run(cfg, model, args.t_max)
    out = _outdir(args)
    path = os.path.join(out, "estimator.csv")
    track.to_csv(path)
    if track.metadata.get("assumption_mismatch"):
        print("note: link is not globally bounded; estimator guarantees "
              "do not formally apply")
    print(f"wrote {path}")
    return 0


def cmd_meanfield(args) -> int:
    model = single_index_model(link_from_name(args.link),
                               noise_from_name(args.noise))
    seed = _seed(args)
    n = args.n
    mu_star = np.full(n, 1.0 / math.sqrt(n))
    rng = np.random.default_rng(replication_seed(seed, 0))
    mu0 = rng.standard_normal(n) / math.sqrt(n)
    track = se_run(SeGeometry.from_vectors(mu0, mu_star), model, args.eta,
                   args.t_max)
    run = mf_run(mu0, mu_star, model, args.eta, args.phi, args.t_max,
                 args.draws, replication_seed(seed, 1))
    diags = mf_compare(run.states, track, mu0, mu_star, p=args.p)
    out = _outdir(args)
    path = os.path.join(out, "mf_diagnostics.csv")
    diagnostics_to_csv(path, diags)
    for note in run.metadata.get("notes", []):
        print(f"note: {note}")
    print(f"wrote {path}")
    return 0


def cmd_experiment(args) -> int:
    which = args.which
    cfg = None
    if args.config:
        sections = parse_config_file(args.config)
        cfg = sections.get(which)
    if cfg is None:
        cfg = EXPERIMENT_CONFIGS[which]()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    table = run_experiment(which, cfg, threads=args.threads)
    out = _outdir(args)
    tpath = os.path.join(out, f"{which}_table.csv")
    mpath = os.path.join(out, f"{which}_manifest.json")
    table.to_csv(tpath)
    table.save_manifest(mpath)
    print(f"wrote {tpath} and {mpath} ({len(table.rows)} rows)")
    return 0


def cmd_export(args) -> int:
    table = ResultTable.load(args.table, args.manifest)
    out = _outdir(args)
    paths = emit_plotdata(table, args.plot_id, out)
    for p in paths:
        print(f"wrote {p}")
    if not args.no_render:
        from .plots import render_plotdata
        for png in render_plotdata(args.plot_id, paths, out):
            print(f"wrote {png}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except GdseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
