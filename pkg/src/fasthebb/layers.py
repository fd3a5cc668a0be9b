"""Hebbian dense/conv layers, patch extraction, and fixed-function stages.

A convolutional Hebbian update is, by construction, the dense update applied
to the flattened patch batch: every window of every image becomes one row of
a single larger mini-batch, and aggregation runs over all of them.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import rules, tensor as tc
from .errors import GeometryError, NonFiniteWeights, ShapeMismatch
from .rules import LearningParams, UpdateResult
from .tensor import Tensor

__all__ = [
    "ConvGeometry",
    "HebbLayer",
    "PatchBatch",
    "ReLU",
    "MaxPool",
    "Flatten",
    "extract_patches",
    "conv_forward",
    "hebb_update",
    "apply_update",
    "relu",
    "max_pool",
    "init_weights",
]


@dataclass(frozen=True)
class ConvGeometry:
    kernel_h: int
    kernel_w: int
    in_channels: int
    stride: int = 1
    padding: int = 0

    @property
    def patch_size(self) -> int:
        return self.kernel_h * self.kernel_w * self.in_channels


@dataclass(frozen=True)
class PatchBatch:
    """All windows of all images flattened into one batch.

    ``patches`` is b_eff x 1 x S with b_eff = B * out_h * out_w; rows are
    enumerated image-major, then row-major over offsets, and each row holds
    the window values channel-major then row-major.
    """

    patches: Tensor
    origin: np.ndarray  # (b_eff, 3) of (image_index, row_offset, col_offset)
    source_shape: tuple[int, int, int, int]
    out_h: int
    out_w: int
    geometry: ConvGeometry


@dataclass(frozen=True)
class HebbLayer:
    """A Hebbian layer: weights + rule parameters + kernel flavor."""

    weights: Tensor  # 1 x N x S
    params: LearningParams
    geometry: Optional[ConvGeometry] = None  # None for dense layers
    update_impl: str = "fast"

    @property
    def kind(self) -> str:
        return "dense" if self.geometry is None else "conv"

    @property
    def num_neurons(self) -> int:
        return self.weights.shape[1]

    @property
    def input_size(self) -> int:
        return self.weights.shape[2]

    def forward(self, x: Tensor) -> Tensor:
        if self.geometry is None:
            b = x.shape[0]
            flat = tc.reshape(x, (b, 1, self.input_size))
            return tc.reshape(rules.forward_linear(self.weights, flat), (b, self.num_neurons))
        return conv_forward(self, x)


class ReLU:
    """Fixed-function rectifier stage."""

    def forward(self, x: Tensor) -> Tensor:
        return relu(x)


@dataclass(frozen=True)
class MaxPool:
    """Fixed-function max pooling over the trailing two dims."""

    window: int
    stride: int

    def forward(self, x: Tensor) -> Tensor:
        return max_pool(x, self.window, self.stride)


class Flatten:
    """Collapse everything but the batch dimension."""

    def forward(self, x: Tensor) -> Tensor:
        b = x.shape[0]
        return tc.reshape(x, (b, x.size // b))


def init_weights(n: int, s: int, seed: int, dtype=np.float64) -> Tensor:
    """Zero-mean Gaussian init with std 1/sqrt(S), seeded."""
    rng = np.random.default_rng(seed)
    return Tensor(rng.normal(0.0, 1.0 / np.sqrt(s), size=(1, n, s)), dtype=dtype)


def _out_extent(extent: int, kernel: int, stride: int, padding: int) -> int:
    span = extent + 2 * padding - kernel
    if span < 0:
        raise GeometryError(
            f"kernel {kernel} exceeds padded extent {extent + 2 * padding}"
        )
    return span // stride + 1


def extract_patches(images: Tensor, geometry: ConvGeometry) -> PatchBatch:
    """Flatten every window of every image into one large batch."""
    if images.ndim != 4:
        raise ShapeMismatch(f"expected BxCxHxW images, got {images.shape}")
    b, c, h, w = images.shape
    g = geometry
    if c != g.in_channels:
        raise ShapeMismatch(f"expected {g.in_channels} channels, got {c}")
    if g.stride < 1:
        raise GeometryError(f"stride must be >= 1, got {g.stride}")
    out_h = _out_extent(h, g.kernel_h, g.stride, g.padding)
    out_w = _out_extent(w, g.kernel_w, g.stride, g.padding)
    arr = images.data
    if g.padding:
        arr = np.pad(
            arr,
            ((0, 0), (0, 0), (g.padding, g.padding), (g.padding, g.padding)),
        )
    windows = np.lib.stride_tricks.sliding_window_view(
        arr, (g.kernel_h, g.kernel_w), axis=(2, 3)
    )[:, :, :: g.stride, :: g.stride]  # b, c, out_h, out_w, kh, kw
    # image-major over b, row-major over offsets; channel-major within a patch
    flat = np.transpose(windows, (0, 2, 3, 1, 4, 5)).reshape(
        b * out_h * out_w, 1, g.patch_size
    )
    img_idx, row_idx, col_idx = np.meshgrid(
        np.arange(b), np.arange(out_h) * g.stride, np.arange(out_w) * g.stride,
        indexing="ij",
    )
    origin = np.stack(
        [img_idx.ravel(), row_idx.ravel(), col_idx.ravel()], axis=1
    )
    return PatchBatch(
        patches=Tensor(flat, dtype=images.dtype),
        origin=origin,
        source_shape=(b, c, h, w),
        out_h=out_h,
        out_w=out_w,
        geometry=g,
    )


def conv_forward(layer: HebbLayer, images: Tensor) -> Tensor:
    """Convolution as patch extraction followed by the dense forward pass."""
    if layer.geometry is None:
        raise ShapeMismatch("conv_forward needs a conv layer")
    batch = extract_patches(images, layer.geometry)
    y = rules.forward_linear(layer.weights, batch.patches)  # b_eff x N x 1
    b = images.shape[0]
    n = layer.num_neurons
    grid = y.data.reshape(b, batch.out_h, batch.out_w, n)
    return Tensor(np.transpose(grid, (0, 3, 1, 2)), dtype=y.dtype)


def hebb_update(layer: HebbLayer, x: Tensor, keep_intermediates: bool = False) -> UpdateResult:
    """Compute (but do not apply) the layer's weight update from its input."""
    kernel = rules.update_fn(layer.params.rule, layer.update_impl)
    if layer.geometry is None:
        b = x.shape[0]
        flat = tc.reshape(x, (b, 1, layer.input_size))
        return kernel(layer.weights, flat, layer.params, keep_intermediates)
    batch = extract_patches(x, layer.geometry)
    return kernel(layer.weights, batch.patches, layer.params, keep_intermediates)


def apply_update(layer: HebbLayer, result: UpdateResult) -> HebbLayer:
    """W <- W + delta_w (learning rate already folded in); returns a new layer."""
    if result.delta_w.shape != layer.weights.shape:
        raise ShapeMismatch(
            f"update shape {result.delta_w.shape} != weights {layer.weights.shape}"
        )
    new_w = tc.elementwise("add", layer.weights, result.delta_w)
    if not np.all(np.isfinite(new_w.data)):
        raise NonFiniteWeights("weight update produced NaN or Inf entries")
    return replace(layer, weights=new_w)


def relu(x: Tensor) -> Tensor:
    return Tensor(np.maximum(x.data, 0.0), dtype=x.dtype)


def max_pool(x: Tensor, window: int, stride: int) -> Tensor:
    """Max pooling over the last two dims of a BxCxHxW tensor."""
    if x.ndim != 4:
        raise ShapeMismatch(f"expected BxCxHxW input, got {x.shape}")
    b, c, h, w = x.shape
    out_h = _out_extent(h, window, stride, 0)
    out_w = _out_extent(w, window, stride, 0)
    windows = np.lib.stride_tricks.sliding_window_view(
        x.data, (window, window), axis=(2, 3)
    )[:, :, ::stride, ::stride]
    return Tensor(windows.max(axis=(4, 5)), dtype=x.dtype)
