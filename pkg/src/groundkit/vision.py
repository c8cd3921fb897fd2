"""Toy convolutional backbone producing a channel-normalized feature pyramid,
plus image resizing into the network's square input frame."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from . import tensor as T
from .errors import ConfigError, FormatError
from .tensor import Parameter, Tensor


@dataclass
class ImageTensor:
    planes: Tensor  # (3, S, S), values in [0, 1]
    source_size: tuple[int, int]  # original (W, H) in pixels


@dataclass
class FeaturePyramid:
    levels: list  # K tensors (C_v, n_j, n_j), n_j strictly decreasing
    strides: tuple[int, ...]


def resize_image(rgb: np.ndarray, target: int) -> ImageTensor:
    """Bilinear resample of an (H, W, 3) uint8 image to target x target."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise FormatError(f"resize_image: expected (H,W,3), got {rgb.shape}")
    h, w = rgb.shape[0], rgb.shape[1]
    if h < 8 or w < 8:
        raise FormatError(f"resize_image: degenerate input {w}x{h}")
    resized = kernels.bilinear_resize(rgb, target, target) / 255.0
    planes = np.clip(resized.transpose(2, 0, 1), 0.0, 1.0)
    return ImageTensor(planes=Tensor(planes), source_size=(w, h))


def _conv_param(rng, name, c_out, c_in, k):
    fan_in = c_in * k * k
    w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(c_out, c_in, k, k))
    return Parameter(name, Tensor(w.astype(np.float32)))


def _bias_param(name, c_out):
    return Parameter(name, Tensor.zeros((c_out,)))


def _conv(x, w: Parameter, b: Parameter, stride, padding):
    return T.conv2d(x, w.tensor, stride=stride, padding=padding, bias=b.tensor)


class Backbone:
    """Stem (stride-2 conv) then stride-2 blocks of two 3x3 convs; lateral 1x1
    convs unify the tapped levels to C_v; nearest-neighbor top-down pathway;
    each output level is L2-normalized across channels."""

    def __init__(self, image_size: int, c_v: int, strides=(8, 16, 32), rng=None):
        if rng is None:
            rng = np.random.default_rng(0)
        strides = tuple(int(s) for s in strides)
        if len(strides) < 2 or any(b <= a for a, b in zip(strides, strides[1:])):
            raise ConfigError(f"strides must be increasing, got {strides}")
        for s in strides:
            if image_size % s != 0:
                raise ConfigError(f"input size {image_size} not divisible by stride {s}")
            if s & (s - 1):
                raise ConfigError(f"strides must be powers of two, got {s}")
        self.image_size = image_size
        self.c_v = c_v
        self.strides = strides

        n_blocks = int(np.log2(strides[-1])) - 1  # stem supplies the first factor 2
        stem_c = max(8, c_v // 4)
        widths = []
        prev = stem_c
        for b in range(n_blocks):
            block_stride = 2 ** (b + 2)
            prev = c_v if block_stride >= strides[0] else min(c_v, prev * 2)
            widths.append(prev)

        self.params: dict[str, Parameter] = {}
        self.stem_w = self._add(_conv_param(rng, "backbone.stem.w", stem_c, 3, 3))
        self.stem_b = self._add(_bias_param("backbone.stem.b", stem_c))
        self.blocks = []
        c_in = stem_c
        for b, c_out in enumerate(widths):
            w1 = self._add(_conv_param(rng, f"backbone.b{b}.c1.w", c_out, c_in, 3))
            b1 = self._add(_bias_param(f"backbone.b{b}.c1.b", c_out))
            w2 = self._add(_conv_param(rng, f"backbone.b{b}.c2.w", c_out, c_out, 3))
            b2 = self._add(_bias_param(f"backbone.b{b}.c2.b", c_out))
            self.blocks.append((w1, b1, w2, b2, 2 ** (b + 2)))
            c_in = c_out
        self.taps = [b for b, (_, _, _, _, s) in enumerate(self.blocks) if s in strides]
        self.laterals = []
        for j, b in enumerate(self.taps):
            c_tap = widths[b]
            lw = self._add(_conv_param(rng, f"backbone.lat{j}.w", c_v, c_tap, 1))
            lb = self._add(_bias_param(f"backbone.lat{j}.b", c_v))
            self.laterals.append((lw, lb))

    def _add(self, p: Parameter) -> Parameter:
        self.params[p.name] = p
        return p

    def forward(self, image: ImageTensor) -> FeaturePyramid:
        x = T.relu(_conv(image.planes, self.stem_w, self.stem_b, 2, 1))
        taps = []
        for b, (w1, b1, w2, b2, _) in enumerate(self.blocks):
            x = T.relu(_conv(x, w1, b1, 2, 1))
            x = T.relu(_conv(x, w2, b2, 1, 1))
            if b in self.taps:
                taps.append(x)
        laterals = [
            _conv(t, lw, lb, 1, 0) for t, (lw, lb) in zip(taps, self.laterals)
        ]
        # top-down: coarser levels upsampled (nearest) into finer laterals
        merged = [None] * len(laterals)
        merged[-1] = laterals[-1]
        for j in range(len(laterals) - 2, -1, -1):
            merged[j] = T.add(laterals[j], _upsample2x(merged[j + 1]))
        levels = [T.l2_channel_normalize(m) for m in merged]
        return FeaturePyramid(levels=levels, strides=self.strides)

    def grid_sizes(self) -> tuple[int, ...]:
        return tuple(self.image_size // s for s in self.strides)


def _upsample2x(x: Tensor) -> Tensor:
    c, n, m = x.shape
    up = T.reshape(x, (c, n, 1, m, 1)).broadcast_to((c, n, 2, m, 2))
    return T.reshape(up, (c, 2 * n, 2 * m))
