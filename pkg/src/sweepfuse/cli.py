"""Command-line interface.

Exit codes: 0 success, 1 validation or usage error, 2 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import io
from . import tensor as T
from .config import RunConfig, config_from_dict, load_config, resolve_seed
from .errors import FormatError, SweepfuseError
from .fusion import evaluate, fuse
from .geometry import DepthRange
from .networks import MVSModel, block_totals, summary
from .pipeline import DepthEstimate
from .pyramid import aggregate_pyramid
from .reconstruct import estimate_pyramid, estimate_views, filter_views, neighbor_table
from .synthetic import gt_cloud, load_scene, make_dataset, scene_from_manifest

logger = logging.getLogger("sweepfuse")


class UsageError(SweepfuseError):
    pass


class _Parser(argparse.ArgumentParser):
    """Reports usage problems as exit code 1 instead of argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# RunConfig overrides shared by every pipeline command: flag -> (dotted field, type)
_OVERRIDES = {
    "views_test": ("views_test", int),
    "views_train": ("views_train", int),
    "mode": ("mode", str),
    "d_min": ("depth_range.d_min", float),
    "d_max": ("depth_range.d_max", float),
    "depth_count": ("depth_range.count", int),
    "levels": ("pyramid.levels", int),
    "eta": ("pyramid.eta", float),
    "eps_low": ("multimetric.eps_low", float),
    "eps_high": ("multimetric.eps_high", float),
    "tau1": ("multimetric.tau1", float),
    "tau2": ("multimetric.tau2", float),
    "min_consistent_views": ("multimetric.min_consistent_views", int),
    "fusion_conf": ("fusion_conf", float),
    "checkpoint": ("checkpoint", str),
    "lr": ("train.lr", float),
    "decay": ("train.decay", float),
    "epochs": ("train.epochs", int),
    "max_steps": ("train.max_steps", int),
    "seed": ("seed", int),
    "jobs": ("jobs", int),
}


def _config_parent() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="JSON run configuration")
    for flag, (_, typ) in _OVERRIDES.items():
        p.add_argument("--" + flag.replace("_", "-"), dest=flag, type=typ, default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_config(args) -> RunConfig:
    data = load_config(args.config).to_dict() if args.config else RunConfig().to_dict()
    for flag, (path, _) in _OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        node = data
        *parents, leaf = path.split(".")
        for key in parents:
            node = node[key]
        node[leaf] = value
    config = config_from_dict(data)
    return replace(config, seed=resolve_seed(config.seed))


def _model(config: RunConfig) -> MVSModel | None:
    if config.mode == "photometric":
        return None
    model = MVSModel(config.seed)
    if config.checkpoint:
        model.load_state_dict(T.load_parameters(config.checkpoint))
    else:
        logger.warning("no checkpoint given; using freshly initialized weights")
    return model


def _scene_inputs(scene_dir):
    scene = load_scene(scene_dir)
    if len(scene.images) < 2:
        raise UsageError(f"{scene_dir}: need at least two views")
    return scene


def _write_estimate(out: Path, stem: str, est: DepthEstimate) -> None:
    io.write_pfm(out / f"{stem}.pfm", est.depth)
    io.write_pfm(out / f"{stem}_conf.pfm", est.confidence)


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# -- commands ---------------------------------------------------------------


def cmd_synth(args) -> int:
    seed = resolve_seed(args.seed if args.seed is not None else 0)
    dr = DepthRange(args.d_min or 425.0, args.d_max or 935.0, args.depth_count or 192)
    paths = make_dataset(args.out, args.scenes, args.width, args.height, seed, args.views, dr)
    for p in paths:
        print(p)
    return 0


def cmd_depth(args) -> int:
    config = build_config(args)
    scene = _scene_inputs(args.scene)
    if not 0 <= args.ref < len(scene.images):
        raise UsageError(f"reference view {args.ref} out of range (scene has {len(scene.images)} views)")
    est = estimate_views(scene.images, scene.cameras, config, _model(config), refs=[args.ref])[0]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_estimate(out, f"{args.ref:04d}", est)
    print(out / f"{args.ref:04d}.pfm")
    return 0


def cmd_pyramid(args) -> int:
    config = build_config(args)
    scene = _scene_inputs(args.scene)
    pset = estimate_pyramid(scene.images, scene.cameras, config, _model(config))
    table = neighbor_table(pset.cameras[0], config.views_test)
    refined, replaced = aggregate_pyramid(pset, config.multimetric, table)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, est in enumerate(refined):
        _write_estimate(out, f"{i:04d}", pset.estimates[0][i])
        _write_estimate(out, f"{i:04d}_refined", est)
    report = {
        "levels": config.pyramid.levels,
        "eta": config.pyramid.eta,
        "extents": [list(lvl[0].depth.shape[::-1]) for lvl in pset.estimates],
        "replaced": {str(k): v for k, v in sorted(replaced.items())},
        "replaced_total": int(sum(sum(v) for v in replaced.values())),
    }
    _write_json(out / "pyramid_report.json", report)
    print(out / "pyramid_report.json")
    return 0


def cmd_fuse(args) -> int:
    config = build_config(args)
    scene = _scene_inputs(args.scene)
    depth_dir = Path(args.depths)
    estimates = []
    for i in range(len(scene.images)):
        depth = io.read_pfm(depth_dir / f"{i:04d}_refined.pfm")
        conf = io.read_pfm(depth_dir / f"{i:04d}_refined_conf.pfm")
        estimates.append(DepthEstimate(depth, conf, 0))
    views = filter_views(estimates, scene.cameras, scene.images, config)
    cloud = fuse(views, config.multimetric)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.write_ply(out, cloud.points, cloud.colors)
    print(f"{out}: {len(cloud)} points")
    return 0


def cmd_eval(args) -> int:
    pred, _ = io.read_ply(args.pred)
    if args.gt:
        gt, _ = io.read_ply(args.gt)
    elif args.scene:
        scene = load_scene(args.scene)
        gt = gt_cloud(scene_from_manifest(scene.manifest, scene.cameras), args.gt_stride)
    else:
        raise UsageError("eval needs --gt or --scene")
    report = evaluate(pred, gt, args.threshold).to_dict()
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_train(args) -> int:
    from .train import train

    config = build_config(args)
    root = Path(args.data)
    names = json.loads((root / "dataset.json").read_text())["scenes"]
    scenes = [load_scene(root / n) for n in names]
    val = []
    if args.val_data:
        vroot = Path(args.val_data)
        val = [load_scene(vroot / n) for n in json.loads((vroot / "dataset.json").read_text())["scenes"]]
    result = train(config, scenes, val or None, args.out, resume_epoch=args.resume)
    summary_row = {
        "steps": len(result.step_losses),
        "initial_train_error_mm": result.initial_train_loss,
        "final_train_error_mm": result.final_train_loss,
        "initial_val_error_mm": result.initial_val_error,
        "final_val_error_mm": result.final_val_error,
    }
    _write_json(Path(args.out) / "summary.json", summary_row)
    print(json.dumps(summary_row, sort_keys=True))
    return 0


def cmd_gradcheck(args) -> int:
    from .gradsuite import TOLERANCE, run_suite

    seed = resolve_seed(args.seed if args.seed is not None else 0)
    results = run_suite(seed, include_blocks=not args.ops_only)
    failed = 0
    for r in results:
        status = "ok" if r.passed else "FAIL"
        failed += not r.passed
        print(f"{r.name:24s} {r.error:.3e} {r.seconds:7.2f}s {status}")
    print(f"{len(results) - failed}/{len(results)} checks below {TOLERANCE:g}")
    return 1 if failed else 0


def cmd_summary(args) -> int:
    model = MVSModel(0)
    if args.json:
        print(json.dumps({"parameters": summary(model), "totals": block_totals(model)}, indent=2))
        return 0
    for row in summary(model):
        print(f"{row['name']:36s} {row['shape']!s:20s} {row['count']:8d}")
    for block, total in block_totals(model).items():
        print(f"{block:36s} {'total':20s} {total:8d}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parent = _config_parent()
    parser = _Parser(prog="sweepfuse", description="Plane-sweep multi-view stereo with learned view aggregation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--out", default="data")
    p.add_argument("--scenes", type=int, default=1)
    p.add_argument("--views", type=int, default=5)
    p.add_argument("--width", type=int, default=160)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--d-min", dest="d_min", type=float, default=None)
    p.add_argument("--d-max", dest="d_max", type=float, default=None)
    p.add_argument("--depth-count", dest="depth_count", type=int, default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("depth", parents=[parent], help="depth and confidence for one reference view")
    p.add_argument("--scene", default="data/scene_0000")
    p.add_argument("--ref", type=int, default=0)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_depth)

    p = sub.add_parser("pyramid", parents=[parent], help="pyramid estimation and multi-metric refinement")
    p.add_argument("--scene", default="data/scene_0000")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_pyramid)

    p = sub.add_parser("fuse", parents=[parent], help="filter refined depth maps and fuse them into a PLY")
    p.add_argument("--scene", default="data/scene_0000")
    p.add_argument("--depths", default="out")
    p.add_argument("--out", default="out/cloud.ply")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="accuracy and completeness of a cloud")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt")
    p.add_argument("--scene", help="use the scene's analytic surface samples as ground truth")
    p.add_argument("--gt-stride", dest="gt_stride", type=int, default=1)
    p.add_argument("--threshold", type=float, default=20.0, help="outlier distance for accuracy (mm)")
    p.add_argument("--out")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("train", parents=[parent], help="train the learned blocks")
    p.add_argument("--data", default="data")
    p.add_argument("--val-data", dest="val_data")
    p.add_argument("--out", default="runs/train")
    p.add_argument("--resume", type=int, default=None, help="epoch checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--ops-only", dest="ops_only", action="store_true")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("summary", help="parameter table of the learned blocks")
    p.add_argument("--json", action="store_true")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_summary)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
        )
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SweepfuseError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
