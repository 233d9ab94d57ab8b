"""Training loop: Adam on the masked L1 depth loss with per-epoch learning-rate decay."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import RunConfig
from .errors import ConfigError
from .geometry import sample_inverse_depth
from .networks import MVSModel
from .pipeline import FEATURE_STRIDE, area_downsample, forward, select_views
from .synthetic import SceneData

logger = logging.getLogger(__name__)


@dataclass
class Sample:
    images: list[np.ndarray]
    cameras: list
    gt: np.ndarray  # quarter-resolution depth
    valid: np.ndarray


@dataclass
class TrainResult:
    model: MVSModel
    step_losses: list[float] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)
    initial_train_loss: float = float("nan")
    final_train_loss: float = float("nan")
    initial_val_error: float = float("nan")
    final_val_error: float = float("nan")


def quarter_gt(depth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Area-averaged GT on the estimate grid; a pixel is valid only if its whole block is."""
    valid = area_downsample((depth > 0).astype(np.float64), FEATURE_STRIDE) == 1.0
    gt = area_downsample(depth.astype(np.float64), FEATURE_STRIDE)
    return np.where(valid, gt, 0.0), valid


def make_samples(scenes: list[SceneData], n_views: int) -> list[Sample]:
    """Every view of every scene as reference, with its nearest ``n_views - 1`` neighbours."""
    samples = []
    for scene in scenes:
        if len(scene.images) < n_views:
            raise ConfigError(f"scene has {len(scene.images)} views, training needs {n_views}")
        for ref in range(len(scene.images)):
            order = select_views(scene.cameras, ref, n_views)
            gt, valid = quarter_gt(scene.gt_depths[ref])
            samples.append(Sample([scene.images[i] for i in order], [scene.cameras[i] for i in order], gt, valid))
    return samples


def mean_error(model: MVSModel, samples: list[Sample], depths: np.ndarray, mode: str) -> float:
    """Mean absolute depth error (mm) over all valid pixels of ``samples``."""
    total, count = 0.0, 0
    with T.no_grad():
        for s in samples:
            depth, _ = forward(s.images, s.cameras, depths, mode, model)
            err = np.abs(depth.data.astype(np.float64) - s.gt)[s.valid]
            total += float(err.sum())
            count += int(err.size)
    return total / max(count, 1)


def _save_state(out: Path, epoch: int, step: int, model: MVSModel, params) -> None:
    T.save_parameters(out / f"ckpt_epoch{epoch:03d}.swft", model.state_dict())
    moments = {}
    for p in params:
        moments[f"adam_m/{p.name}"] = p.adam_m
        moments[f"adam_v/{p.name}"] = p.adam_v
    T.save_parameters(out / f"optim_epoch{epoch:03d}.swft", moments)
    state = {"epoch": epoch, "step": step, "adam_t": {p.name: p.adam_t for p in params}}
    (out / f"state_epoch{epoch:03d}.json").write_text(json.dumps(state, sort_keys=True) + "\n")


def _load_state(out: Path, epoch: int, model: MVSModel, params) -> int:
    model.load_state_dict(T.load_parameters(out / f"ckpt_epoch{epoch:03d}.swft"))
    moments = T.load_parameters(out / f"optim_epoch{epoch:03d}.swft")
    state = json.loads((out / f"state_epoch{epoch:03d}.json").read_text())
    for p in params:
        p.adam_m = moments[f"adam_m/{p.name}"].astype(p.data.dtype)
        p.adam_v = moments[f"adam_v/{p.name}"].astype(p.data.dtype)
        p.adam_t = state["adam_t"][p.name]
    return state["step"]


def train(
    config: RunConfig,
    train_scenes: list[SceneData],
    val_scenes: list[SceneData] | None = None,
    out_dir=None,
    resume_epoch: int | None = None,
    evaluate: bool = True,
) -> TrainResult:
    """Train a fresh model (or resume one from ``out_dir``) and return its history.

    Each epoch visits every (scene, reference view) sample once in an order
    drawn from ``(seed, epoch)``; the learning rate is ``lr * decay**epoch``.
    Checkpoints and a JSON-lines metrics log go to ``out_dir`` when given.
    """
    tc = config.train
    mode = config.mode
    if mode == "photometric":
        raise ConfigError("photometric mode has nothing to train")
    depths = sample_inverse_depth(config.depth_range)
    samples = make_samples(train_scenes, config.views_train)
    val = make_samples(val_scenes, config.views_train) if val_scenes else []
    model = MVSModel(config.seed)
    params = model.trainable(mode)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    result = TrainResult(model)

    step, start_epoch = 0, 0
    if resume_epoch is not None:
        if out is None:
            raise ConfigError("resuming needs the checkpoint directory")
        step = _load_state(out, resume_epoch, model, params)
        start_epoch = resume_epoch + 1
    elif evaluate:
        result.initial_train_loss = mean_error(model, samples, depths, mode)
        if val:
            result.initial_val_error = mean_error(model, val, depths, mode)
        logger.info("step 0: train %.3f mm, val %.3f mm", result.initial_train_loss, result.initial_val_error)

    for epoch in range(start_epoch, tc.epochs):
        if tc.max_steps is not None and step >= tc.max_steps:
            break
        lr = tc.lr * tc.decay**epoch
        order = np.random.default_rng([config.seed, epoch]).permutation(len(samples))
        losses = []
        for k in order:
            if tc.max_steps is not None and step >= tc.max_steps:
                break
            s = samples[k]
            depth, _ = forward(s.images, s.cameras, depths, mode, model)
            loss = _masked_l1(depth, s)
            T.backward(loss)
            T.adam_step(params, lr, tc.beta1, tc.beta2, tc.eps)
            losses.append(loss.item())
            step += 1
        result.step_losses.extend(losses)
        record = {"epoch": epoch, "step": step, "lr": lr, "loss": float(np.mean(losses))}
        if val and evaluate:
            record["val_error"] = mean_error(model, val, depths, mode)
        result.epochs.append(record)
        logger.info("epoch %d: %s", epoch, record)
        if out is not None:
            _save_state(out, epoch, step, model, params)
            with open(out / "metrics.jsonl", "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    if evaluate:
        result.final_train_loss = mean_error(model, samples, depths, mode)
        if val:
            result.final_val_error = mean_error(model, val, depths, mode)
    return result


def _masked_l1(depth, sample: Sample):
    from .pipeline import l1_loss

    return l1_loss(depth, sample.gt, sample.valid)
