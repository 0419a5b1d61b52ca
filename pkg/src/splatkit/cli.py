"""Command line front end: ``splatkit <command> [options]``.

Commands: synth, pairs, align, densify, evaltraj, run, compare.
Global options (``--seed``, ``--threads``, ``--verbose``) may appear before
or after the command name.  Exit status is 0 on success and 1 when any stage
fails; usage errors exit with 2.
"""

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .alignment import AlignmentConfig, EdgeObservation, fuse_global_cloud, optimize_global_detailed
from .densification import KNNDensifier
from .exceptions import ConfigurationError, SplatkitError
from .io import (
    load_gaussians,
    load_graph,
    load_pointmap,
    load_trajectory,
    save_gaussians,
    save_graph,
    save_point_cloud,
    save_pointmap,
    save_trajectory,
)
from .pipeline import DEMO_CONFIG, compare_schemes, load_config, merge_config, read_report, run_sweep
from .synthetic import SceneSpec, gen_edge_observations, gen_gaussian_set, gen_scene, render_views
from .trajectory_eval import evaluate
from .view_grouping import PairingScheme, build_pair_graph, image_to_feature, pair_graph_stats

logger = logging.getLogger("splatkit")


def _size(text):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    return h, w


def _threshold(text):
    v = float(text)
    if math.isnan(v):
        raise argparse.ArgumentTypeError("threshold must not be NaN")
    return v


def _print_json(obj):
    print(json.dumps(obj, indent=2))


def _scheme(args):
    return PairingScheme(args.scheme, window=args.window, k=args.k, link_groups=args.link_groups)


def _add_scheme_flags(p):
    p.add_argument("--scheme", choices=("complete", "oneref", "swin", "group"), default="group")
    p.add_argument("--window", type=int, default=3, help="swin window")
    p.add_argument("--k", type=int, default=2, help="group split points")
    p.add_argument("--link-groups", action="store_true", help="also pair consecutive group references")
    p.add_argument("--downsample", type=int, default=16, help="feature side length for the group scheme")


def _load_images(directory):
    directory = Path(directory)
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in (".npy", ".png", ".jpg", ".jpeg"))
    if not files:
        raise ConfigurationError(f"no images (.npy/.png/.jpg) in {directory}")
    out = []
    for f in files:
        if f.suffix.lower() == ".npy":
            out.append(np.load(f))
        else:
            from PIL import Image  # optional: only needed for encoded images

            out.append(np.asarray(Image.open(f).convert("RGB"), dtype=np.float64) / 255.0)
    return out


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_synth(args):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = SceneSpec(
        n_views=args.views, motion=args.motion, n_points=args.points, image_size=args.size,
        noise_sigma=args.noise, seed=args.seed,
    )
    scene = gen_scene(spec)
    images = render_views(scene)
    (out / "images").mkdir(exist_ok=True)
    for v, im in enumerate(images):
        np.save(out / "images" / f"view_{v:04d}.npy", im)
    feats = [image_to_feature(im, args.downsample) for im in images]
    graph = build_pair_graph(_scheme(args), spec.n_views, feats)
    save_graph(graph, out / "graph.json")
    save_trajectory(scene.trajectory, out / "traj_gt.txt")
    for o in gen_edge_observations(scene, graph, dtype=np.float32):
        i, j = o.edge
        save_pointmap(o.pointmap_i, o.conf_i, out / f"edge_{i}_{j}_{i}.pmap")
        save_pointmap(o.pointmap_j, o.conf_j, out / f"edge_{i}_{j}_{j}.pmap")
    gs = gen_gaussian_set(args.gaussians, args.size_law, args.grad_law, seed=args.seed)
    save_gaussians(gs, out / "gaussians.ply")
    _print_json({"n_views": spec.n_views, "edges": len(graph.edges), "gaussians": len(gs), "out_dir": str(out)})


def cmd_pairs(args):
    feats = None
    if args.features:
        feats = list(np.load(args.features))
    elif args.images:
        feats = [image_to_feature(im, args.downsample) for im in _load_images(args.images)]
    n = len(feats) if feats is not None else args.views
    if n is None:
        raise ConfigurationError("give --views, --images or --features")
    graph = build_pair_graph(_scheme(args), n, feats)
    save_graph(graph, args.out)
    _print_json(pair_graph_stats(graph, args.bytes_per_edge))


def _load_observations(graph, obs_dir):
    obs_dir = Path(obs_dir)
    obs = []
    for i, j in graph.edges:
        pm_i, c_i = load_pointmap(obs_dir / f"edge_{i}_{j}_{i}.pmap")
        pm_j, c_j = load_pointmap(obs_dir / f"edge_{i}_{j}_{j}.pmap")
        obs.append(EdgeObservation((i, j), pm_i, pm_j, c_i, c_j))
    return obs


def cmd_align(args):
    graph = load_graph(args.graph)
    obs = _load_observations(graph, args.obs_dir)
    cfg = AlignmentConfig(
        max_iters=args.iters, step_size=args.step, convergence_tol=args.tol,
        subsample_stride=args.stride, squared=args.squared,
    )
    res = optimize_global_detailed(graph, obs, cfg)
    hist = list(res.energy_history)
    if args.out_traj:
        save_trajectory(res.trajectory, args.out_traj)
    if args.out_cloud:
        save_point_cloud(fuse_global_cloud(res.state, obs, args.conf_threshold), args.out_cloud)
    if args.energy_log:
        Path(args.energy_log).write_text("iteration,energy\n" + "".join(f"{i},{e!r}\n" for i, e in enumerate(hist)))
    _print_json({"iterations": res.iterations, "converged": res.converged, "initial": hist[0], "final": hist[-1]})


def cmd_densify(args):
    gs = load_gaussians(args.input)
    est = KNNDensifier(
        n_neighbors=args.n_neighbors, grad_threshold=args.tau_p, scale_threshold=args.tau_s,
        split_children=args.children, scale_divisor=args.divisor, opacity_prune_min=args.prune_min,
        shape_margin=args.margin, shape_stat=args.shape_stat, knn_ignore_grad=args.knn_ignore_grad,
        n_steps=args.steps, random_state=args.seed,
    )
    out = est.fit_transform(gs)
    save_gaussians(out, args.out)
    report = {"schema_version": 1, "steps": [r.to_dict() for r in est.reports_]}
    if args.report:
        Path(args.report).write_text(json.dumps(report, indent=2) + "\n")
    _print_json(report)


def cmd_evaltraj(args):
    metrics = evaluate(load_trajectory(args.est), load_trajectory(args.gt), delta=args.delta).to_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(metrics, indent=2) + "\n")
    _print_json(metrics)


def cmd_run(args):
    cfg = load_config(args.config) if args.config else load_config(DEMO_CONFIG)
    override = {}
    if args.seed_given:
        override["seed"] = args.seed
    if args.scheme:
        override["pairs"] = {"schemes": args.scheme}
    if args.views is not None:
        override.setdefault("scene", {})["n_views"] = args.views
    if args.noise is not None:
        override.setdefault("scene", {})["noise_sigma"] = args.noise
    if args.iters is not None:
        override["align"] = {"max_iters": args.iters}
    cfg = merge_config(cfg, override)
    reports = run_sweep(cfg, args.out_dir)
    # the table goes to stdout only: its runtime column is not reproducible
    print(compare_schemes(reports)[0], end="")


def cmd_compare(args):
    reports = []
    for p in args.reports:
        p = Path(p)
        reports.append(read_report(p / "report.json" if p.is_dir() else p))
    text, csv_text = compare_schemes(reports)
    if args.csv:
        Path(args.csv).write_text(csv_text)
    print(text, end="")


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def _global_flags(p, suppress):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=d, help="random seed (default 0)")
    p.add_argument("--threads", type=int, default=d, help="cap on worker threads")
    p.add_argument("-v", "--verbose", action="count", default=d, help="more logging (repeatable)")


def build_parser():
    parser = argparse.ArgumentParser(prog="splatkit", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic scene and its observations")
    p.add_argument("--views", type=int, default=20)
    p.add_argument("--motion", choices=("orbit", "linear"), default="orbit")
    p.add_argument("--points", type=int, default=4000)
    p.add_argument("--size", type=_size, default=(48, 64), help="HxW pointmap size")
    p.add_argument("--noise", type=float, default=0.0, help="noise std as a fraction of the scene diameter")
    p.add_argument("--gaussians", type=int, default=1000)
    p.add_argument("--size-law", default="heavy_tail:3")
    p.add_argument("--grad-law", default="constant:1")
    _add_scheme_flags(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pairs", parents=[common], help="build a pair graph")
    _add_scheme_flags(p)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--images", help="directory of .npy / .png images, sorted by name")
    src.add_argument("--features", help=".npy array of shape (n_views, d)")
    p.add_argument("--views", type=int, help="view count when no images or features are given")
    p.add_argument("--bytes-per-edge", type=float, default=2 * 48 * 64 * 4 * 4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pairs)

    p = sub.add_parser("align", parents=[common], help="global pointmap alignment")
    p.add_argument("--graph", required=True)
    p.add_argument("--obs-dir", required=True)
    p.add_argument("--iters", type=int, default=300)
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--stride", type=int, default=1, help="pixel subsampling stride")
    p.add_argument("--squared", action="store_true", help="square the residual norms")
    p.add_argument("--conf-threshold", type=float, default=0.0)
    p.add_argument("--out-traj")
    p.add_argument("--out-cloud")
    p.add_argument("--energy-log")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("densify", parents=[common], help="KNN-triggered densification")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-neighbors", type=int, default=64)
    p.add_argument("--tau-p", type=_threshold, default=2e-4)
    p.add_argument("--tau-s", type=_threshold, default=0.01, help="'inf' disables the size gate")
    p.add_argument("--margin", type=float, default=0.0)
    p.add_argument("--steps", type=int, default=1)
    p.add_argument("--children", type=int, default=2)
    p.add_argument("--divisor", type=float, default=1.6)
    p.add_argument("--prune-min", type=float, default=0.005)
    p.add_argument("--shape-stat", choices=("trace", "max_eig", "det"), default="trace")
    p.add_argument("--knn-ignore-grad", action="store_true")
    p.add_argument("--report")
    p.set_defaults(func=cmd_densify)

    p = sub.add_parser("evaltraj", parents=[common], help="ATE / RPE between two trajectories")
    p.add_argument("--est", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--delta", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaltraj)

    p = sub.add_parser("run", parents=[common], help="full pipeline from a JSON config")
    p.add_argument("--config", help="JSON config (default: bundled demo)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--scheme", action="append", choices=("complete", "oneref", "swin", "group"),
                   help="override pairs.schemes (repeatable)")
    p.add_argument("--views", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--iters", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", parents=[common], help="tabulate run reports")
    p.add_argument("reports", nargs="+", help="report.json files or run directories")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    args.seed_given = args.seed is not None
    args.seed = 0 if args.seed is None else args.seed
    verbose = args.verbose or 0
    logging.basicConfig(
        level=logging.WARNING - 10 * min(verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        with threadpool_limits(limits=args.threads):
            args.func(args)
    except (SplatkitError, OSError, ValueError) as exc:
        print(f"splatkit {args.command}: error: {exc}", file=sys.stderr)
        if verbose:
            logger.exception("traceback")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
