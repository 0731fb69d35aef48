"""Configurable 3-D UNet built from the tape operations.

Layout for ``levels = L`` and channel widths ``c_l = min(c0 * 2**l, cap)``::

    enc0   : conv3 -> GN -> lrelu -> conv3 -> GN -> lrelu          (in -> c0)
    down_l : conv2/stride2 -> GN -> lrelu, then an enc block        (c_{l-1} -> c_l)
    up_l   : trilinear x2 -> conv3 -> GN -> lrelu                   (c_l -> c_{l-1})
    dec_l  : concat(up_l, enc_l) -> conv3 block                     (2 c_l -> c_l)
    head   : conv3 -> tanh (SDM) or logistic (segmentation)          (c0 -> N)

Every block holds two 3x3x3 convolutions.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigurationError
from . import ops
from .tensor import Tensor

__all__ = ["NetworkConfig", "UNet", "build_unet", "count_parameters", "FULL_SCALE", "DESK_SCALE"]

HEADS = ("sdm-tanh", "seg-sigmoid")


@dataclass(frozen=True)
class NetworkConfig:
    levels: int = 2
    init_channels: int = 4
    channel_cap: int = 384
    num_classes: int = 1
    in_channels: int = 1
    head: str = "sdm-tanh"
    max_groups: int = 8
    slope: float = 0.01
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        if self.levels < 1:
            raise ConfigurationError(f"levels must be >= 1, got {self.levels}")
        if self.init_channels < 1 or self.channel_cap < self.init_channels:
            raise ConfigurationError("need 1 <= init_channels <= channel_cap")
        if self.num_classes < 1 or self.in_channels < 1:
            raise ConfigurationError("num_classes and in_channels must be >= 1")
        if self.head not in HEADS:
            raise ConfigurationError(f"unknown head {self.head!r}; choose from {HEADS}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError(f"dtype must be float32 or float64, got {self.dtype!r}")

    def channels(self, level: int) -> int:
        return min(self.init_channels * 2**level, self.channel_cap)

    def groups(self, channels: int) -> int:
        g = min(self.max_groups, channels)
        return g if channels % g == 0 else 1

    @property
    def downsampling_factor(self) -> int:
        return 2**self.levels

    def check_input(self, spatial) -> None:
        f = self.downsampling_factor
        if len(spatial) != 3 or any(n % f for n in spatial):
            raise ConfigurationError(f"input dims {tuple(spatial)} must be divisible by 2**levels = {f}")

    def bottleneck_shape(self, spatial) -> tuple[int, int, int]:
        self.check_input(spatial)
        return tuple(n // self.downsampling_factor for n in spatial)

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **kw) -> "NetworkConfig":
        return NetworkConfig(**{**asdict(self), **kw})


DESK_SCALE = NetworkConfig()
FULL_SCALE = NetworkConfig(levels=6, init_channels=24, channel_cap=384)


class UNet:
    """Holds named parameters (insertion-ordered) and runs the forward pass."""

    def __init__(self, cfg: NetworkConfig):
        self.cfg = cfg
        self.params: dict[str, Tensor] = {}
        self._rng = np.random.Generator(np.random.PCG64(cfg.seed))
        self._dtype = np.dtype(cfg.dtype)
        c = cfg.channels
        self._block("enc0", cfg.in_channels, c(0))
        for lv in range(1, cfg.levels + 1):
            self._conv(f"down{lv}.conv", c(lv - 1), c(lv), 2)
            self._norm(f"down{lv}.gn", c(lv))
            self._block(f"enc{lv}", c(lv), c(lv))
        for lv in range(cfg.levels, 0, -1):
            self._conv(f"up{lv}.conv", c(lv), c(lv - 1), 3)
            self._norm(f"up{lv}.gn", c(lv - 1))
            self._block(f"dec{lv - 1}", 2 * c(lv - 1), c(lv - 1))
        self._conv("head.conv", c(0), cfg.num_classes, 3, gain=1.0)
        del self._rng

    # -- parameter construction
    def _conv(self, name, cin, cout, k, gain=None):
        if gain is None:
            gain = math.sqrt(2.0 / (1.0 + self.cfg.slope**2))
        fan_in = cin * k**3
        bound = gain * math.sqrt(3.0 / fan_in)
        w = self._rng.uniform(-bound, bound, size=(cout, cin, k, k, k))
        self.params[f"{name}.weight"] = Tensor(w.astype(self._dtype), requires_grad=True, name=f"{name}.weight")
        self.params[f"{name}.bias"] = Tensor(np.zeros(cout, self._dtype), requires_grad=True, name=f"{name}.bias")

    def _norm(self, name, ch):
        self.params[f"{name}.scale"] = Tensor(np.ones(ch, self._dtype), requires_grad=True, name=f"{name}.scale")
        self.params[f"{name}.shift"] = Tensor(np.zeros(ch, self._dtype), requires_grad=True, name=f"{name}.shift")

    def _block(self, name, cin, cout):
        self._conv(f"{name}.conv1", cin, cout, 3)
        self._norm(f"{name}.gn1", cout)
        self._conv(f"{name}.conv2", cout, cout, 3)
        self._norm(f"{name}.gn2", cout)

    # -- forward
    def _apply_conv(self, x, name, stride=1):
        p = self.params
        return ops.conv3d(x, p[f"{name}.weight"], p[f"{name}.bias"], stride=stride)

    def _apply_norm_act(self, x, name):
        p = self.params
        x = ops.group_norm(x, self.cfg.groups(x.shape[1]), p[f"{name}.scale"], p[f"{name}.shift"])
        return ops.leaky_relu(x, self.cfg.slope)

    def _apply_block(self, x, name):
        x = self._apply_norm_act(self._apply_conv(x, f"{name}.conv1"), f"{name}.gn1")
        return self._apply_norm_act(self._apply_conv(x, f"{name}.conv2"), f"{name}.gn2")

    def forward(self, x) -> Tensor:
        """Map a ``(batch, in_channels, x, y, z)`` input to head activations."""
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self._dtype))
        if x.ndim != 5 or x.shape[1] != self.cfg.in_channels:
            raise ConfigurationError(f"expected input (B, {self.cfg.in_channels}, x, y, z), got {x.shape}")
        self.cfg.check_input(x.shape[2:])
        skips = [self._apply_block(x, "enc0")]
        h = skips[0]
        for lv in range(1, self.cfg.levels + 1):
            h = self._apply_norm_act(self._apply_conv(h, f"down{lv}.conv", stride=2), f"down{lv}.gn")
            h = self._apply_block(h, f"enc{lv}")
            skips.append(h)
        for lv in range(self.cfg.levels, 0, -1):
            h = ops.trilinear_upsample(h)
            h = self._apply_norm_act(self._apply_conv(h, f"up{lv}.conv"), f"up{lv}.gn")
            h = ops.concat_channels(h, skips[lv - 1])
            h = self._apply_block(h, f"dec{lv - 1}")
        h = self._apply_conv(h, "head.conv")
        return ops.tanh(h) if self.cfg.head == "sdm-tanh" else ops.sigmoid(h)

    __call__ = forward

    def shape_trace(self, spatial) -> list[tuple[str, tuple[int, ...]]]:
        """Feature-map shapes ``(channels, x, y, z)`` at every encoder and decoder stage."""
        self.cfg.check_input(spatial)
        c = self.cfg.channels
        trace = [("enc0", (c(0),) + tuple(spatial))]
        for lv in range(1, self.cfg.levels + 1):
            trace.append((f"enc{lv}", (c(lv),) + tuple(n // 2**lv for n in spatial)))
        for lv in range(self.cfg.levels, 0, -1):
            trace.append((f"dec{lv - 1}", (c(lv - 1),) + tuple(n // 2 ** (lv - 1) for n in spatial)))
        trace.append(("head", (self.cfg.num_classes,) + tuple(spatial)))
        return trace

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        extra = set(arrays) - set(self.params)
        if missing or extra:
            raise ConfigurationError(f"parameter mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, t in self.params.items():
            a = np.asarray(arrays[k])
            if a.shape != t.shape:
                raise ConfigurationError(f"{k}: shape {a.shape} != {t.shape}")
            t.data = a.astype(self._dtype, copy=True)


def build_unet(cfg: NetworkConfig):
    """Return ``(forward, params)``; ``forward`` is the bound :meth:`UNet.forward`."""
    net = UNet(cfg)
    return net.forward, net.params


def count_parameters(params: dict[str, Tensor]) -> int:
    return int(sum(t.data.size for t in params.values()))
