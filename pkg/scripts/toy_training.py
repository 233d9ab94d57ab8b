"""Train voxel-wise and pixel-wise models on a small synthetic set and report depth errors.

Example:
    python3 scripts/toy_training.py --steps 200 --size 64 --out runs/toy
"""

from __future__ import annotations

import argparse
import json
import logging
import time
from pathlib import Path

import numpy as np

from sweepfuse.config import RunConfig, TrainConfig
from sweepfuse.geometry import DepthRange
from sweepfuse.synthetic import SceneData, box_scene, render
from sweepfuse.train import train

logger = logging.getLogger("toy_training")


def scenes(indices, depth_range: DepthRange, size: int, seed: int) -> list[SceneData]:
    out = []
    for k in indices:
        scene = box_scene(k, seed, n_views=5, width=size, height=size, depth_range=depth_range)
        views = render(scene)
        out.append(
            SceneData(
                [v.image.astype(np.float32) for v in views], scene.cameras, depth_range, [v.depth for v in views], {}
            )
        )
    return out


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--train-scenes", type=int, default=8)
    parser.add_argument("--val-scenes", type=int, default=2)
    parser.add_argument("--size", type=int, default=64, help="square image extent (multiple of 8)")
    parser.add_argument("--depths", type=int, default=32)
    parser.add_argument("--views", type=int, default=3)
    parser.add_argument("--steps", type=int, default=200)
    parser.add_argument("--lr", type=float, default=0.001)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--modes", nargs="+", default=["voxelwise", "pixelwise"])
    parser.add_argument("--out", type=Path, default=None, help="directory for checkpoints and results.json")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")

    dr = DepthRange(425.0, 935.0, args.depths)
    train_set = scenes(range(args.train_scenes), dr, args.size, args.seed)
    # validation geometry never appears in training
    val_set = scenes(range(100, 100 + args.val_scenes), dr, args.size, args.seed)
    results = {}
    for mode in args.modes:
        config = RunConfig(
            views_train=args.views,
            depth_range=dr,
            mode=mode,
            seed=args.seed,
            train=TrainConfig(lr=args.lr, epochs=10**6, max_steps=args.steps),
        )
        start = time.perf_counter()
        out_dir = args.out / mode if args.out else None
        r = train(config, train_set, val_set, out_dir)
        results[mode] = {
            "steps": len(r.step_losses),
            "initial_train_mm": r.initial_train_loss,
            "final_train_mm": r.final_train_loss,
            "initial_val_mm": r.initial_val_error,
            "final_val_mm": r.final_val_error,
            "seconds": round(time.perf_counter() - start, 1),
        }
        logger.info("%s: %s", mode, results[mode])
    text = json.dumps(results, indent=2)
    print(text)
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "results.json").write_text(text + "\n")


if __name__ == "__main__":
    main()
