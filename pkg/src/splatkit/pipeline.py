"""End-to-end run: synthesize, pair, align, evaluate, densify; report.

Configuration is a JSON document (see ``DEFAULT_CONFIG`` for every key)::

    {
      "seed": 0,
      "scene":   {"n_views": 20, "motion": "orbit", "n_points": 4000,
                  "image_size": [48, 64], "noise_sigma": 0.0, ...},
      "pairs":   {"schemes": ["group"], "window": 3, "k": 2,
                  "link_groups": true, "downsample": 16,
                  "bytes_per_edge": null},
      "align":   {"enabled": true, "max_iters": 300, "step_size": 0.01,
                  "convergence_tol": 1e-6, "subsample_stride": 1,
                  "squared": false, "conf_threshold": 0.0},
      "densify": {"enabled": true, "n_gaussians": 1000,
                  "size_law": "heavy_tail:3", "grad_law": "constant:1",
                  "steps": 3, "n_neighbors": 64, ...}
    }

Keys left out fall back to the defaults.  ``pairs.schemes`` may list several
schemes; each gets its own report (and artifact sub-directory).

``bytes_per_edge`` defaults to the size of one edge's pointmaps and
confidences stored as float32: ``2 * H * W * 4 * 4`` bytes.
"""

import copy
import csv
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .alignment import AlignmentConfig, fuse_global_cloud, optimize_global_detailed
from .densification import DensifyConfig, densify_step
from .exceptions import ConfigurationError, SplatkitError
from .io import save_gaussians, save_graph, save_point_cloud, save_trajectory
from .synthetic import SceneSpec, gen_edge_observations, gen_gaussian_set, gen_scene, render_views
from .trajectory_eval import evaluate
from .view_grouping import PairingScheme, build_pair_graph, image_to_feature, pair_graph_stats

__all__ = [
    "SCHEMA_VERSION",
    "DEFAULT_CONFIG",
    "DEMO_CONFIG",
    "PipelineError",
    "RunReport",
    "load_config",
    "merge_config",
    "run_pipeline",
    "run_sweep",
    "compare_schemes",
    "write_report",
    "read_report",
]

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

DEFAULT_CONFIG = {
    "seed": 0,
    "scene": {
        "n_views": 20,
        "motion": "orbit",
        "orbit_radius": 1.0,
        "orbit_degrees": 360.0,
        "orbit_elevation": 0.3,
        "linear_step": 0.05,
        "n_points": 4000,
        "image_size": [48, 64],
        "noise_sigma": 0.0,
        "conf_model": "uniform",
        "conf_value": 1.0,
        "conf_decay": 1.0,
        "diameter": 1.0,
    },
    "pairs": {
        "schemes": ["group"],
        "window": 3,
        "k": 2,
        "link_groups": True,
        "downsample": 16,
        "bytes_per_edge": None,
    },
    "align": {
        "enabled": True,
        "max_iters": 300,
        "step_size": 0.01,
        "convergence_tol": 1e-6,
        "subsample_stride": 1,
        "squared": False,
        "conf_threshold": 0.0,
    },
    "densify": {
        "enabled": True,
        "n_gaussians": 1000,
        "size_law": "heavy_tail:3",
        "grad_law": "constant:1",
        "steps": 3,
        "n_neighbors": 64,
        "grad_threshold": 0.0002,
        "scale_threshold": 0.01,
        "shape_margin": 0.0,
        "shape_stat": "trace",
        "knn_ignore_grad": False,
    },
}


def merge_config(base, override):
    """Recursive dict merge; ``override`` wins.  Unknown keys are rejected."""
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if key not in out:
            raise ConfigurationError(f"unknown config key {key!r}")
        if isinstance(out[key], dict):
            if not isinstance(value, dict):
                raise ConfigurationError(f"config key {key!r} must be an object")
            out[key] = merge_config(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


# 20-view orbit, no noise, similarity-grouped pairs
DEMO_CONFIG = merge_config(DEFAULT_CONFIG, {"scene": {"n_views": 20, "noise_sigma": 0.0}, "pairs": {"schemes": ["group"]}})


def load_config(path_or_dict=None):
    """Read a JSON config (path or dict) and fill in defaults."""
    if path_or_dict is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    if isinstance(path_or_dict, dict):
        raw = path_or_dict
    else:
        try:
            raw = json.loads(Path(path_or_dict).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path_or_dict}: invalid JSON ({exc})") from exc
    cfg = merge_config(DEFAULT_CONFIG, raw)
    schemes = cfg["pairs"]["schemes"]
    if isinstance(schemes, str):
        cfg["pairs"]["schemes"] = [schemes]
    if not cfg["pairs"]["schemes"]:
        raise ConfigurationError("pairs.schemes is empty")
    return cfg


class PipelineError(SplatkitError):
    """A stage failed; ``stage`` names it and ``__cause__`` holds the error."""

    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage


@dataclass
class RunReport:
    scheme: str
    n_views: int
    edge_count: int
    mem_estimate: int
    energy: dict = None
    metrics: dict = None
    densify: list = None
    timings: dict = field(default_factory=dict)

    def to_dict(self, timings=False):
        """Stable key order; timings only on request (they vary run to run)."""
        out = {
            "schema_version": SCHEMA_VERSION,
            "scheme": self.scheme,
            "n_views": self.n_views,
            "edge_count": self.edge_count,
            "mem_estimate": self.mem_estimate,
            "energy": self.energy,
            "metrics": self.metrics,
            "densify": self.densify,
        }
        if timings:
            out["timings"] = dict(self.timings)
        return out

    @property
    def runtime(self):
        return float(sum(self.timings.values()))

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ConfigurationError(f"unsupported report schema {d.get('schema_version')!r}")
        return cls(
            scheme=d["scheme"], n_views=d["n_views"], edge_count=d["edge_count"],
            mem_estimate=d["mem_estimate"], energy=d.get("energy"), metrics=d.get("metrics"),
            densify=d.get("densify"), timings=d.get("timings") or {},
        )


def _dumps(obj):
    return json.dumps(obj, indent=2, allow_nan=True) + "\n"


def write_report(report, directory):
    """``report.json`` (deterministic) plus ``timings.json`` next to it."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "report.json").write_text(_dumps(report.to_dict()))
    (directory / "timings.json").write_text(_dumps(report.timings))


def read_report(path):
    """Load ``report.json``; a sibling ``timings.json`` is merged in if present."""
    path = Path(path)
    d = json.loads(path.read_text())
    t = path.with_name("timings.json")
    if "timings" not in d and t.exists():
        d["timings"] = json.loads(t.read_text())
    return RunReport.from_dict(d)


def _scheme_from(name, pairs):
    if name not in ("complete", "oneref", "swin", "group"):
        raise ConfigurationError(f"unknown scheme {name!r}")
    return PairingScheme(name, window=pairs["window"], k=pairs["k"], link_groups=bool(pairs["link_groups"]))


def _scene_spec(cfg):
    sc = dict(cfg["scene"])
    sc["image_size"] = tuple(sc["image_size"])
    return SceneSpec(seed=int(cfg["seed"]), **sc)


class _Stage:
    def __init__(self, name, timings):
        self.name = name
        self.timings = timings

    def __enter__(self):
        self.t0 = time.perf_counter()
        logger.info("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        self.timings[self.name] = self.timings.get(self.name, 0.0) + time.perf_counter() - self.t0
        if exc is not None and not isinstance(exc, PipelineError):
            raise PipelineError(self.name, exc) from exc
        return False


def run_pipeline(config=None, out_dir=None, scheme=None):
    """Run every stage for one scheme and return its :class:`RunReport`.

    ``scheme`` defaults to the first entry of ``pairs.schemes``.  Artifacts
    are written to ``out_dir`` as each stage finishes, so a failure leaves the
    earlier ones in place.
    """
    cfg = load_config(config)
    pairs = cfg["pairs"]
    scheme = _scheme_from(scheme or pairs["schemes"][0], pairs)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    timings = {}

    with _Stage("synth", timings):
        spec = _scene_spec(cfg)
        scene = gen_scene(spec)
        if out is not None:
            save_trajectory(scene.trajectory, out / "traj_gt.txt")

    with _Stage("pairs", timings):
        feats = None
        if scheme.name == "group":
            feats = [image_to_feature(im, pairs["downsample"]) for im in render_views(scene)]
        graph = build_pair_graph(scheme, spec.n_views, feats)
        h, w = spec.image_size
        bpe = pairs["bytes_per_edge"]
        bpe = 2 * h * w * 4 * 4 if bpe is None else bpe
        stats = pair_graph_stats(graph, bpe)
        if out is not None:
            save_graph(graph, out / "graph.json")

    report = RunReport(scheme.label, spec.n_views, stats["edge_count"], int(stats["memory_bytes"]), timings=timings)

    al = cfg["align"]
    if al["enabled"]:
        with _Stage("align", timings):
            obs = gen_edge_observations(scene, graph)
            acfg = AlignmentConfig(
                max_iters=al["max_iters"], step_size=al["step_size"], convergence_tol=al["convergence_tol"],
                subsample_stride=al["subsample_stride"], squared=bool(al["squared"]),
            )
            res = optimize_global_detailed(graph, obs, acfg)
            hist = list(res.energy_history)
            report.energy = {
                "initial": hist[0],
                "final": hist[-1],
                "iterations": res.iterations,
                "converged": res.converged,
                "monotone": all(b <= a for a, b in zip(hist, hist[1:])),
            }
            if out is not None:
                save_trajectory(res.trajectory, out / "traj_est.txt")
                (out / "energy.csv").write_text("iteration,energy\n" + "".join(f"{i},{e!r}\n" for i, e in enumerate(hist)))
                save_point_cloud(fuse_global_cloud(res.state, obs, al["conf_threshold"]), out / "cloud.ply")
        with _Stage("evaltraj", timings):
            report.metrics = evaluate(res.trajectory, scene.trajectory).to_dict()

    dn = cfg["densify"]
    if dn["enabled"]:
        with _Stage("densify", timings):
            dcfg = DensifyConfig(
                n_neighbors=dn["n_neighbors"], grad_threshold=dn["grad_threshold"],
                scale_threshold=_as_threshold(dn["scale_threshold"]), shape_margin=dn["shape_margin"],
                shape_stat=dn["shape_stat"], knn_ignore_grad=bool(dn["knn_ignore_grad"]),
            )
            gs = gen_gaussian_set(dn["n_gaussians"], dn["size_law"], dn["grad_law"], seed=int(cfg["seed"]))
            if out is not None:
                save_gaussians(gs, out / "gaussians_in.ply")
            seeds = np.random.SeedSequence(int(cfg["seed"])).generate_state(max(dn["steps"], 1))
            reports = []
            for step in range(dn["steps"]):
                gs, rep = densify_step(gs, dcfg, int(seeds[step]))
                reports.append(rep.to_dict())
            report.densify = reports
            if out is not None:
                save_gaussians(gs, out / "gaussians_out.ply")

    if out is not None:
        write_report(report, out)
    return report


def _as_threshold(v):
    # JSON has no infinity literal; accept null / "inf"
    if v is None or (isinstance(v, str) and v.lower() in ("inf", "infinity")):
        return math.inf
    return float(v)


def run_sweep(config=None, out_dir=None):
    """One :func:`run_pipeline` per entry of ``pairs.schemes``.

    With ``out_dir`` each scheme writes into ``out_dir/<scheme label>/``.
    """
    cfg = load_config(config)
    reports = []
    for name in cfg["pairs"]["schemes"]:
        label = _scheme_from(name, cfg["pairs"]).label
        sub = Path(out_dir) / label if out_dir is not None else None
        reports.append(run_pipeline(cfg, sub, scheme=name))
    return reports


COLUMNS = ("scheme", "edge_count", "mem_estimate", "ate", "rpe_t", "rpe_r", "runtime")


def _row(rep):
    m = rep.metrics or {}
    return {
        "scheme": rep.scheme,
        "edge_count": rep.edge_count,
        "mem_estimate": rep.mem_estimate,
        "ate": m.get("ate"),
        "rpe_t": m.get("rpe_t"),
        "rpe_r": m.get("rpe_r"),
        "runtime": rep.runtime,
    }


def compare_schemes(reports):
    """Side-by-side table of several runs, sorted by scheme name.

    Returns ``(text, csv_text)``.  Missing metrics are left blank.
    """
    reports = list(reports)
    if not reports:
        raise ConfigurationError("compare_schemes needs at least one report")
    rows = sorted((_row(r) for r in reports), key=lambda r: r["scheme"])

    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v) for k, v in r.items()})

    def cell(v):
        if v is None:
            return "-"
        if isinstance(v, float):
            return f"{v:.3g}"
        return str(v)

    table = [list(COLUMNS)] + [[cell(r[c]) for c in COLUMNS] for r in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(COLUMNS))]
    lines = ["  ".join(c.ljust(wd) if i == 0 else c.rjust(wd) for i, (c, wd) in enumerate(zip(row, widths))) for row in table]
    lines.insert(1, "  ".join("-" * wd for wd in widths))
    return "\n".join(lines) + "\n", buf.getvalue()
