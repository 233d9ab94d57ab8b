"""Finite-difference gradient suite over every differentiable operation and network block.

All checks run in 64-bit mode on small randomized instances.
"""

from __future__ import annotations

import time
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import tensor as T
from .geometry import DepthRange, sample_inverse_depth
from .networks import FeatureNet2D, MVSModel, PANet, RegNet3D, VANet
from .pipeline import forward, l1_loss
from .synthetic import arc_cameras

TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.error < TOLERANCE


def _t(rng, *shape) -> T.Tensor:
    return T.Tensor(rng.standard_normal(shape), requires_grad=True)


def _weighted(out: T.Tensor, rng) -> T.Tensor:
    """Random linear functional of ``out`` so every output entry matters."""
    w = T.Tensor(rng.standard_normal(out.shape))
    return T.reduce("sum", T.reshape(T.mul(out, w), (-1,)), 0)


def _op_checks(rng) -> dict[str, Callable[[], float]]:
    def unary(fn, *shape):
        def run():
            x = _t(rng, *shape)
            return T.gradient_check(lambda: _weighted(fn(x), rng_fixed(x)), [x], rng)

        return run

    def binary(kind, a_shape, b_shape):
        def run():
            a, b = _t(rng, *a_shape), _t(rng, *b_shape)
            w = T.Tensor(rng.standard_normal(a_shape))
            fn = lambda: T.reduce("sum", T.reshape(T.mul(T.elementwise(kind, a, b), w), (-1,)), 0)
            return T.gradient_check(fn, [a, b], rng)

        return run

    def conv(nd, stride):
        def run():
            spatial = (5,) * nd
            x = _t(rng, 2, *spatial)
            wgt = _t(rng, 3, 2, *((3,) * nd))
            b = _t(rng, 3)
            return T.gradient_check(
                lambda: _weighted(T.conv(x, wgt, b, stride=stride, padding=1), rng_fixed(x)), [x, wgt, b], rng
            )

        return run

    def conv_t(nd):
        def run():
            x = _t(rng, 2, *((3,) * nd))
            wgt = _t(rng, 3, 2, *((3,) * nd))
            b = _t(rng, 3)
            target = (6,) * nd
            fn = lambda: _weighted(T.conv_transpose(x, wgt, b, stride=2, padding=1, target_shape=target), rng_fixed(x))
            return T.gradient_check(fn, [x, wgt, b], rng)

        return run

    def gn():
        x = _t(rng, 8, 3, 4)
        g, b = _t(rng, 8), _t(rng, 8)
        return T.gradient_check(lambda: _weighted(T.group_norm(x, 2, g, b), rng_fixed(x)), [x, g, b], rng)

    def sparse():
        x = _t(rng, 3, 4, 5)
        m = sp.random(12, 20, density=0.3, random_state=np.random.RandomState(1), format="csr")
        return T.gradient_check(lambda: _weighted(T.sparse_apply(x, m), rng_fixed(x)), [x], rng)

    def stack():
        a, b = _t(rng, 3, 4), _t(rng, 3, 4)
        return T.gradient_check(lambda: _weighted(T.stack([a, b], axis=1), rng_fixed(a)), [a, b], rng)

    checks = {
        "add": binary("add", (3, 4), (3, 4)),
        "sub": binary("sub", (3, 4), (3, 4)),
        "mul": binary("mul", (3, 4), (3, 4)),
        "mul_leading_broadcast": binary("mul", (2, 3, 4), (3, 4)),
        "abs": unary(T.abs, 3, 5),
        "relu": unary(T.relu, 3, 5),
        "sigmoid": unary(T.sigmoid, 3, 5),
        "reshape": unary(lambda x: T.reshape(x, (5, 3)), 3, 5),
        "softmax": unary(lambda x: T.softmax(x, 0), 7, 3),
        "stack": stack,
        "conv2d": conv(2, 1),
        "conv2d_stride2": conv(2, 2),
        "conv3d": conv(3, 1),
        "conv3d_stride2": conv(3, 2),
        "conv_transpose2d": conv_t(2),
        "conv_transpose3d": conv_t(3),
        "group_norm": gn,
        "sparse_apply": sparse,
    }
    for kind in ("max", "mean", "sum", "l1norm"):
        checks[f"reduce_{kind}"] = unary(lambda x, kind=kind: T.reduce(kind, x, 1), 3, 6)
    return checks


def rng_fixed(anchor: T.Tensor) -> np.random.Generator:
    """Generator tied to a tensor's shape so repeated loss evaluations use the same functional."""
    return np.random.default_rng(list(anchor.shape) + [17])


def block_checks(rng) -> dict[str, Callable[[], float]]:
    def make(net_cls, shape, entries=3):
        def run():
            net = net_cls(rng)
            net.randomize(rng, 0.3)
            x = _t(rng, *shape)
            params = net.parameters()
            return T.gradient_check(lambda: _weighted(net(x), rng_fixed(x)), [x, *params], rng, max_entries=entries)

        return run

    def end_to_end(mode):
        def run():
            model = MVSModel(int(rng.integers(1 << 30)))
            model.randomize(rng, 0.1)
            images = [rng.uniform(0, 1, (3, 32, 32)) for _ in range(3)]
            cams = arc_cameras(3, 32, 32)
            depths = sample_inverse_depth(DepthRange(425.0, 935.0, 8))
            gt = rng.uniform(500.0, 800.0, (8, 8))
            valid = rng.random((8, 8)) < 0.7
            params = model.trainable(mode)

            def loss():
                depth, _ = forward(images, cams, depths, mode, model)
                return l1_loss(depth, gt, valid)

            return T.gradient_check(loss, params, rng, max_entries=1)

        return run

    return {
        "featnet": make(FeatureNet2D, (3, 32, 32)),
        "panet": make(PANet, (2, 8, 8)),
        "vanet": make(VANet, (32, 4, 4, 4)),
        "regnet": make(RegNet3D, (32, 8, 8, 8)),
        "pipeline_pixelwise": end_to_end("pixelwise"),
        "pipeline_voxelwise": end_to_end("voxelwise"),
    }


def run_suite(seed: int = 0, include_blocks: bool = True) -> list[CheckResult]:
    """Run every check in 64-bit mode and return per-check worst relative errors."""
    rng = np.random.default_rng(seed)
    results = []
    with T.precision(np.float64):
        checks = dict(_op_checks(rng))
        if include_blocks:
            checks.update(block_checks(rng))
        for name, fn in checks.items():
            start = time.perf_counter()
            err = fn()
            results.append(CheckResult(name, float(err), time.perf_counter() - start))
    return results
