"""Learned blocks: 2D feature U-Net, PA-Net, VA-Net and the 3D regularization U-Net.

Layer layouts are single-sample: images ``[C, H, W]``, volumes ``[C, D, H, W]``.
"GR" layers are convolution (no bias), group normalization, then ReLU.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .tensor import Parameter, Tensor

FEATURE_CHANNELS = 32

# 16-channel layers use 4 groups and 32-channel layers 8; narrower layers follow the same 4-per-group ratio
_GROUPS = {1: 1, 8: 2, 16: 4, 32: 8}


def _groups(channels: int) -> int:
    return _GROUPS.get(channels, 1)


def _uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Container whose parameters are discovered from its attributes."""

    def named_parameters(self, prefix: str = ""):
        for key, value in vars(self).items():
            path = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(path + ".")

    def assign_names(self) -> None:
        """Stamp every parameter with its dotted path from this module."""
        for path, p in self.named_parameters():
            p.name = path

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            if name not in state:
                raise ConfigError(f"checkpoint has no entry for {name!r}")
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ConfigError(f"{name!r}: checkpoint shape {list(arr.shape)} != model {list(p.shape)}")
            p.data = arr.astype(p.data.dtype)

    def randomize(self, rng: np.random.Generator, scale: float = 0.5) -> None:
        """Fill every parameter with random values (for gradient checks)."""
        for _, p in self.named_parameters():
            p.data = (p.data + scale * rng.standard_normal(p.shape)).astype(p.data.dtype)


class Conv(Module):
    def __init__(self, rng, c_in, c_out, k=3, stride=1, dims=2, bias=True, zero=False):
        shape = (c_out, c_in) + (k,) * dims
        fan_in = c_in * k**dims
        self.weight = Parameter(np.zeros(shape) if zero else _uniform(rng, shape, fan_in))
        if bias:
            self.bias = Parameter(np.zeros(c_out))
        self.stride = stride
        self.padding = (k - 1) // 2

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv(x, self.weight, getattr(self, "bias", None), self.stride, self.padding)


class GroupNorm(Module):
    def __init__(self, channels):
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.groups = _groups(channels)

    def __call__(self, x: Tensor) -> Tensor:
        return T.group_norm(x, self.groups, self.gamma, self.beta, eps=1e-5)


class ConvGR(Module):
    def __init__(self, rng, c_in, c_out, k=3, stride=1, dims=2):
        self.conv = Conv(rng, c_in, c_out, k, stride, dims, bias=False)
        self.norm = GroupNorm(c_out)

    def __call__(self, x: Tensor) -> Tensor:
        return T.relu(self.norm(self.conv(x)))


class UpConvGR(Module):
    """Stride-2 transposed conv (k=3) + GN + ReLU whose output matches a skip tensor."""

    def __init__(self, rng, c_in, c_out, dims=2):
        shape = (c_out, c_in) + (3,) * dims
        self.weight = Parameter(_uniform(rng, shape, c_in * 3**dims / 2**dims))
        self.norm = GroupNorm(c_out)

    def __call__(self, x: Tensor, skip: Tensor) -> Tensor:
        up = T.conv_transpose(x, self.weight, None, stride=2, padding=1, target_shape=skip.shape[1:])
        return T.relu(self.norm(up)) + skip


class ResBlockGR(Module):
    def __init__(self, rng, channels):
        self.conv1 = ConvGR(rng, channels, channels)
        self.conv2 = ConvGR(rng, channels, channels)

    def __call__(self, x: Tensor) -> Tensor:
        return x + self.conv2(self.conv1(x))


def _require_divisible(extents, by: int, what: str) -> None:
    if any(n % by for n in extents):
        raise ConfigError(f"{what} extents {list(extents)} must be divisible by {by}")


class FeatureNet2D(Module):
    """Encoder-decoder producing 32-channel features at quarter resolution.

    Three stride-2 stages (8, 16, 32 channels) followed by one upsampling
    stage back to 1/4 that adds the 1/4 encoder features.
    """

    def __init__(self, rng):
        self.down1 = ConvGR(rng, 3, 8, stride=2)
        self.down2 = ConvGR(rng, 8, 16, stride=2)
        self.down3 = ConvGR(rng, 16, 32, stride=2)
        self.up2 = UpConvGR(rng, 32, 16)
        self.out = Conv(rng, 16, FEATURE_CHANNELS)

    def __call__(self, image: Tensor) -> Tensor:
        _require_divisible(image.shape[1:], 8, "image")
        c1 = self.down1(image)
        c2 = self.down2(c1)
        c3 = self.down3(c2)
        return self.out(self.up2(c3, c2))


class PANet(Module):
    """Pixel-wise attention: ConvGR(16), ResBlockGR(16), Conv(1), sigmoid."""

    def __init__(self, rng):
        self.conv0 = ConvGR(rng, 2, 16)
        self.res1 = ResBlockGR(rng, 16)
        self.conv2 = Conv(rng, 16, 1, zero=True)

    def __call__(self, f: Tensor) -> Tensor:
        return T.sigmoid(self.conv2(self.res1(self.conv0(f))))


class VANet(Module):
    """Voxel-wise attention: Conv3DGR(1), Conv3D(1), sigmoid."""

    def __init__(self, rng):
        self.conv0 = ConvGR(rng, FEATURE_CHANNELS, 1, dims=3)
        self.conv1 = Conv(rng, 1, 1, dims=3, zero=True)

    def __call__(self, v: Tensor) -> Tensor:
        return T.sigmoid(self.conv1(self.conv0(v)))


class RegNet3D(Module):
    """Three-level 3D U-Net (8/16/32 channels at scales 1, 1/2, 1/4) emitting depth logits."""

    def __init__(self, rng):
        self.enc0 = ConvGR(rng, FEATURE_CHANNELS, 8, dims=3)
        self.enc1 = ConvGR(rng, 8, 16, stride=2, dims=3)
        self.enc2 = ConvGR(rng, 16, 32, stride=2, dims=3)
        self.dec1 = UpConvGR(rng, 32, 16, dims=3)
        self.dec0 = UpConvGR(rng, 16, 8, dims=3)
        self.logits = Conv(rng, 8, 1, dims=3, zero=True)

    def __call__(self, cost: Tensor) -> Tensor:
        _require_divisible(cost.shape[1:], 8, "cost volume")
        e0 = self.enc0(cost)
        e1 = self.enc1(e0)
        e2 = self.enc2(e1)
        d1 = self.dec1(e2, e1)
        d0 = self.dec0(d1, e0)
        out = self.logits(d0)
        return out.reshape(out.shape[1:])


def extract_features(image: Tensor, net: FeatureNet2D) -> Tensor:
    return net(image)


def pa_weights(f: Tensor, net: PANet) -> Tensor:
    if f.ndim != 3 or f.shape[0] != 2:
        raise ConfigError(f"PA-Net expects [2, H, W] input, got {list(f.shape)}")
    return net(f)


def va_weights(v: Tensor, net: VANet) -> Tensor:
    if v.ndim != 4 or v.shape[0] != FEATURE_CHANNELS:
        raise ConfigError(f"VA-Net expects [{FEATURE_CHANNELS}, D, H, W] input, got {list(v.shape)}")
    return net(v)


def regularize(cost: Tensor, net: RegNet3D) -> Tensor:
    return net(cost)


class MVSModel(Module):
    """All learned blocks of the depth estimator under their checkpoint prefixes."""

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.featnet = FeatureNet2D(rng)
        self.panet = PANet(rng)
        self.vanet = VANet(rng)
        self.regnet = RegNet3D(rng)
        self.assign_names()

    def trainable(self, mode: str) -> list[Parameter]:
        """Parameters that receive gradients in the given aggregation mode."""
        blocks = {"featnet", "regnet"}
        if mode == "pixelwise":
            blocks.add("panet")
        elif mode == "voxelwise":
            blocks.add("vanet")
        return [p for name, p in self.named_parameters() if name.split(".")[0] in blocks]


def summary(model: MVSModel) -> list[dict]:
    """Per-parameter rows plus per-block totals, as emitted by the CLI."""
    rows = []
    for name, p in model.named_parameters():
        rows.append({"name": name, "shape": list(p.shape), "count": int(p.size)})
    return rows


def block_totals(model: MVSModel) -> dict[str, int]:
    totals: dict[str, int] = {}
    for row in summary(model):
        block = row["name"].split(".")[0]
        totals[block] = totals.get(block, 0) + row["count"]
    return totals
