"""Command-line entry point: simulate, refine, eval and render.

Exit codes: 0 success, 2 configuration error, 3 I/O or input-data error,
4 degenerate pipeline (no iteration could be calibrated).
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import re
import sys
from dataclasses import replace
from pathlib import Path

from . import metrics, pfm
from .config import ConfigError, ExperimentConfig, load_config
from .fusion import ABLATIONS, FieldViewSource, InjectedViewSource, refine
from .geometry import Pose
from .maps import DepthMap
from .simulate import corrupt_depth, ground_truth_depth
from .views import RenderedView
from .volume import render_depth_map

log = logging.getLogger("depthrefine")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DEGENERATE = 0, 2, 3, 4


class InputError(Exception):
    """Missing or unreadable input files, or inconsistent input data."""


class DegenerateError(Exception):
    pass


def _dump_json(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n").encode()


def _out_dir(cfg: ExperimentConfig) -> Path:
    try:
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {cfg.output_dir}: {exc.strerror}") from None
    return cfg.output_dir


def _read_depth(path) -> DepthMap:
    try:
        return pfm.read_depth(path)
    except FileNotFoundError:
        raise InputError(f"{path}: file not found") from None
    except (pfm.PFMError, ValueError) as exc:
        raise InputError(str(exc)) from None


def _read_variance(path):
    try:
        return pfm.read_variance(path)
    except FileNotFoundError:
        raise InputError(f"{path}: file not found") from None
    except (pfm.PFMError, ValueError) as exc:
        raise InputError(str(exc)) from None


def _require_scene(cfg: ExperimentConfig, command: str):
    if cfg.scene is None:
        raise ConfigError(f"{command} needs an analytic scene (scene.preset or scene.primitives)")
    return cfg.scene


_VIEW_FILE = re.compile(r"view_(\d+)_depth\.pfm$")


def load_injected_views(views_dir, shape) -> list[RenderedView]:
    """Read ``view_{i}_depth.pfm``, ``view_{i}_var.pfm`` and ``view_{i}_pose.json`` for i = 0, 1, ..."""
    views_dir = Path(views_dir)
    indices = sorted(int(m.group(1)) for p in views_dir.iterdir() if (m := _VIEW_FILE.match(p.name)))
    if not indices:
        raise InputError(f"{views_dir}: no view_<i>_depth.pfm files")
    if indices != list(range(len(indices))):
        raise InputError(f"{views_dir}: view indices must run 0..{len(indices) - 1} without gaps")
    out = []
    for i in indices:
        depth = _read_depth(views_dir / f"view_{i}_depth.pfm")
        var = _read_variance(views_dir / f"view_{i}_var.pfm")
        pose_path = views_dir / f"view_{i}_pose.json"
        try:
            pose = Pose.from_dict(json.loads(pose_path.read_text()))
        except FileNotFoundError:
            raise InputError(f"{pose_path}: file not found") from None
        except (ValueError, TypeError, AttributeError) as exc:
            raise InputError(f"{pose_path}: {exc}") from None
        if depth.shape != shape or var.shape != shape:
            raise InputError(f"view {i}: maps are {depth.shape}, expected {shape}")
        out.append(RenderedView(pose, depth, var))
    return out


def write_injected_views(views_dir, views: list[RenderedView]):
    views_dir = Path(views_dir)
    views_dir.mkdir(parents=True, exist_ok=True)
    for i, v in enumerate(views):
        pfm.write_map(views_dir / f"view_{i}_depth.pfm", v.depth)
        pfm.write_map(views_dir / f"view_{i}_var.pfm", v.variance)
        pfm.atomic_write_bytes(views_dir / f"view_{i}_pose.json", _dump_json(v.pose.to_dict()))


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: ExperimentConfig) -> dict:
    scene = _require_scene(cfg, "simulate")
    out = _out_dir(cfg)
    gt = ground_truth_depth(scene, cfg.intrinsics, cfg.pose)
    mono = corrupt_depth(gt, cfg.monocular, seed=cfg.seed)
    pfm.write_map(out / "gt_depth.pfm", gt)
    pfm.write_map(out / "mono_depth.pfm", mono)
    log.info("wrote %s and %s", out / "gt_depth.pfm", out / "mono_depth.pfm")
    return {"gt": gt, "mono": mono}


def make_view_source(cfg: ExperimentConfig):
    if cfg.views_dir is not None:
        return InjectedViewSource(load_injected_views(cfg.views_dir, cfg.intrinsics.shape))
    scene = _require_scene(cfg, "refine")
    s = cfg.sampling
    return FieldViewSource(
        scene,
        cfg.intrinsics,
        cfg.pose,
        cfg.perturbation,
        n_views=cfg.n_views,
        near=s.near,
        far=s.far,
        n_samples=s.n_samples,
        jitter=s.jitter,
        seed=cfg.seed,
        reconstruction_scale=cfg.reconstruction_scale,
    )


def cmd_refine(cfg: ExperimentConfig, mono_path=None):
    out = _out_dir(cfg)
    mono = _read_depth(mono_path or out / "mono_depth.pfm")
    if mono.shape != cfg.intrinsics.shape:
        raise InputError(f"monocular depth is {mono.shape}, camera expects {cfg.intrinsics.shape}")
    source = make_view_source(cfg)
    result = refine(mono, cfg.intrinsics, cfg.pose, source, cfg.fusion)
    diag = {
        "iterations": [d.to_dict() for d in result.diagnostics],
        "view_source": "injected" if cfg.views_dir is not None else "density_field",
        "n_views": len(source.views(0)) if cfg.views_dir is not None else cfg.n_views,
        "seed": cfg.seed,
    }
    if not any(d.calibrated for d in result.diagnostics):
        raise DegenerateError("calibration was degenerate in every iteration; no refinement produced")
    pfm.write_map(out / "refined_depth.pfm", result.depth)
    pfm.write_map(out / "refined_variance.pfm", result.variance)
    pfm.atomic_write_bytes(out / "diagnostics.json", _dump_json(diag))
    log.info("refined %d iteration(s); wrote results to %s", len(result.diagnostics), out)
    return result


def cmd_eval(pred_path, gt_path, baseline_path, var_path=None, out_dir=".", grad_threshold=None, match_radius=2.0):
    pred = _read_depth(pred_path)
    gt = _read_depth(gt_path)
    base = _read_depth(baseline_path)
    var = _read_variance(var_path) if var_path is not None else None
    shapes = {m.shape for m in (pred, gt, base) + ((var,) if var is not None else ())}
    if len(shapes) != 1:
        raise InputError(f"input maps have different dimensions: {sorted(shapes)}")
    try:
        report, curve = metrics.evaluate(pred, gt, base, var, grad_threshold, match_radius)
    except metrics.MetricError as exc:
        raise InputError(f"evaluation failed: {exc}") from None
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    buf.write("percentile,mean_abs_error\n")
    for pct, mae in curve:
        buf.write(f"{pct:g},{mae!r}\n")
    pfm.atomic_write_bytes(out / "metrics.json", _dump_json(report.to_dict()))
    pfm.atomic_write_bytes(out / "curve.csv", buf.getvalue().encode())
    return report, curve


def cmd_render(cfg: ExperimentConfig, pose: Pose | None = None):
    scene = _require_scene(cfg, "render")
    out = _out_dir(cfg)
    s = cfg.sampling
    depth, var = render_depth_map(
        scene, cfg.intrinsics, pose or cfg.pose, s.near, s.far, s.n_samples, rng_key=cfg.seed, jitter=s.jitter
    )
    pfm.write_map(out / "render_depth.pfm", depth)
    pfm.write_map(out / "render_variance.pfm", var)
    return depth, var


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="depthrefine", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def experiment(sp):
        sp.add_argument("--config", required=True, help="experiment JSON file")
        sp.add_argument("--seed", type=int, help="global seed (overrides config)")
        sp.add_argument("--samples", type=int, help="samples per ray M")
        sp.add_argument("--output-dir", help="output directory (overrides config)")

    sp = sub.add_parser("simulate", help="write ground-truth and corrupted monocular depth")
    experiment(sp)

    sp = sub.add_parser("refine", help="refine monocular depth with rendered views")
    experiment(sp)
    sp.add_argument("--iterations", type=int, help="refinement iterations")
    sp.add_argument("--ablate", action="append", choices=ABLATIONS, default=[], help="switch off one component")
    sp.add_argument("--views", type=int, help="rendered views per iteration N")
    sp.add_argument("--views-dir", help="injected per-view depth/variance/pose files (overrides the scene)")
    sp.add_argument("--mono", help="monocular depth PFM (default: <output_dir>/mono_depth.pfm)")

    sp = sub.add_parser("eval", help="compute metrics of a prediction against ground truth")
    sp.add_argument("pred", help="predicted depth PFM")
    sp.add_argument("var", nargs="?", help="predicted variance PFM (optional)")
    sp.add_argument("--gt", required=True, help="ground-truth depth PFM")
    sp.add_argument("--baseline", required=True, help="baseline depth PFM for the sharpness and F1 reference")
    sp.add_argument("--out", default=".", help="directory for metrics.json and curve.csv")
    sp.add_argument("--grad-threshold", type=float, help="edge threshold in m/pixel (default 5%% of GT range)")
    sp.add_argument("--match-radius", type=float, default=2.0, help="edge match radius in pixels")

    sp = sub.add_parser("render", help="render depth and variance of the scene at one pose")
    experiment(sp)
    sp.add_argument("--pose", help="pose JSON (default: the config's reference pose)")
    return p


def _run(args) -> int:
    if args.command == "eval":
        cmd_eval(args.pred, args.gt, args.baseline, args.var, args.out, args.grad_threshold, args.match_radius)
        return EXIT_OK

    cfg = load_config(args.config).with_overrides(
        seed=args.seed,
        n_samples=args.samples,
        output_dir=args.output_dir,
        iterations=getattr(args, "iterations", None),
        ablate=getattr(args, "ablate", None),
        n_views=getattr(args, "views", None),
    )
    if args.command == "simulate":
        cmd_simulate(cfg)
    elif args.command == "refine":
        if args.views_dir:
            views_dir = Path(args.views_dir).resolve()
            if not views_dir.is_dir():
                raise ConfigError(f"--views-dir: directory not found: {views_dir}")
            cfg = replace(cfg, views_dir=views_dir)
        cmd_refine(cfg, args.mono)
    elif args.command == "render":
        pose = None
        if args.pose:
            try:
                pose = Pose.from_dict(json.loads(Path(args.pose).read_text()))
            except FileNotFoundError:
                raise InputError(f"{args.pose}: file not found") from None
            except (ValueError, TypeError, AttributeError) as exc:
                raise ConfigError(f"{args.pose}: {exc}") from None
        cmd_render(cfg, pose)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InputError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DegenerateError as exc:
        print(f"degenerate: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE


if __name__ == "__main__":
    sys.exit(main())
