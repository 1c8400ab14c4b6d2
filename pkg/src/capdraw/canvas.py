"""Differentiable visual attention over the drawing canvas.

A 5-output linear head turns a hidden state into grid parameters (patch
center, filter stride, isotropic variance, intensity). Two banks of 1-D
Gaussian filters, one per image axis, then either place a generated p-by-p
patch onto the canvas (write) or extract a p-by-p patch from an image
(read). Pixel coordinates are 1-indexed along each axis, filter index i
runs 1..p, and filter i is centered at ``center + (i - p/2 - 0.5) * stride``.

Each filter is normalized to unit mass over its image axis. Normalization
is computed as a softmax of the (negated, scaled) squared distances with
max subtraction, which is algebraically the same division by the filter sum
but cannot underflow to an all-zero filter; a filter pushed entirely off
the image degrades to a spike at the nearest border pixel instead.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class LinearMap:
    weight: Tensor
    bias: Tensor

    def __call__(self, x: Tensor) -> Tensor:
        return ad.matmul(self.weight, x) + self.bias


@dataclass
class GridParams:
    """Attention grid for one step; every field is a scalar node.

    The log fields are the pre-exp head outputs, kept so downstream users
    can form reciprocals without re-taking logarithms.
    """

    center_col: Tensor
    center_row: Tensor
    stride: Tensor
    variance: Tensor
    intensity: Tensor
    log_variance: Tensor
    log_intensity: Tensor

    @classmethod
    def from_floats(cls, center_col, center_row, stride, variance, intensity):
        if stride <= 0 or variance <= 0 or intensity <= 0:
            raise ValueError("GridParams: stride, variance, intensity must be positive")
        c = ad.constant
        return cls(
            center_col=c(center_col),
            center_row=c(center_row),
            stride=c(stride),
            variance=c(variance),
            intensity=c(intensity),
            log_variance=c(np.log(variance)),
            log_intensity=c(np.log(intensity)),
        )

    def as_floats(self) -> dict:
        return {
            "center_col": self.center_col.item(),
            "center_row": self.center_row.item(),
            "stride": self.stride.item(),
            "variance": self.variance.item(),
            "intensity": self.intensity.item(),
        }


@dataclass
class FilterBanks:
    rows: Tensor  # (height, patch), each column a unit-mass filter
    cols: Tensor  # (width, patch)


@functools.lru_cache(maxsize=None)
def _pixel_grid(patch: int, extent: int) -> Tensor:
    # (patch, extent), every row the 1-indexed pixel coordinates
    return ad.constant(np.tile(np.arange(1, extent + 1, dtype=np.float64), (patch, 1)))


@functools.lru_cache(maxsize=None)
def _filter_offsets(patch: int) -> Tensor:
    # (i - p/2 - 0.5) for i = 1..p, symmetric around zero
    idx = np.arange(1, patch + 1, dtype=np.float64)
    return ad.constant(idx - patch / 2.0 - 0.5)


@functools.lru_cache(maxsize=None)
def _ones_row(extent: int) -> Tensor:
    return ad.constant(np.ones((1, extent)))


def _scalar(raw: Tensor, index: int) -> Tensor:
    return ad.reshape(ad.narrow(raw, 0, index, 1), ())


def grid_params_from_hidden(hidden: Tensor, head: LinearMap, height: int, width: int,
                            patch: int) -> GridParams:
    """Map a hidden state through a 5-output head to in-range grid params.

    Raw outputs are (col center in [-1,1] units, row center, log variance,
    log stride scale, log intensity); exp keeps stride/variance/intensity
    positive without clamping.
    """
    if patch < 1:
        raise ValueError(f"grid_params_from_hidden: patch size {patch} < 1")
    raw = head(hidden)
    if raw.shape != (5,):
        raise ad.ShapeMismatch(f"grid head produced {raw.shape}, expected (5,)")
    center_col = (_scalar(raw, 0) + 1.0) * ((width + 1) / 2.0)
    center_row = (_scalar(raw, 1) + 1.0) * ((height + 1) / 2.0)
    log_variance = _scalar(raw, 2)
    stride_scale = ad.exp(_scalar(raw, 3))
    if patch > 1:
        stride = stride_scale * ((max(height, width) - 1) / (patch - 1))
    else:
        stride = stride_scale
    log_intensity = _scalar(raw, 4)
    return GridParams(
        center_col=center_col,
        center_row=center_row,
        stride=stride,
        variance=ad.exp(log_variance),
        intensity=ad.exp(log_intensity),
        log_variance=log_variance,
        log_intensity=log_intensity,
    )


def _axis_filters(center: Tensor, gp: GridParams, extent: int, patch: int) -> Tensor:
    centers = center + _filter_offsets(patch) * gp.stride          # (p,)
    mu = ad.matmul(ad.reshape(centers, (patch, 1)), _ones_row(extent))
    diff = mu - _pixel_grid(patch, extent)                         # (p, extent)
    neg_half_inv_var = ad.exp(ad.neg(gp.log_variance)) * -0.5
    exponents = ad.mul(ad.mul(diff, diff), neg_half_inv_var)
    return ad.transpose(ad.softmax(exponents))                     # (extent, p)


def build_filterbanks(gp: GridParams, height: int, width: int, patch: int) -> FilterBanks:
    if height < 1 or width < 1:
        raise ValueError("build_filterbanks: image extents must be >= 1")
    return FilterBanks(
        rows=_axis_filters(gp.center_row, gp, height, patch),
        cols=_axis_filters(gp.center_col, gp, width, patch),
    )


def place_patch(banks: FilterBanks, patch: Tensor) -> Tensor:
    """Spread a p-by-p patch over the full image plane."""
    return ad.matmul(ad.matmul(banks.rows, patch), ad.transpose(banks.cols))


def extract_patch(banks: FilterBanks, image: Tensor) -> Tensor:
    """Adjoint of place_patch at the same grid: image plane down to p-by-p."""
    return ad.matmul(ad.matmul(ad.transpose(banks.rows), image), banks.cols)


def write(hidden: Tensor, patch_head: LinearMap, grid_head: LinearMap, height: int,
          width: int, patch: int, use_intensity: bool = True):
    """Canvas increment painted by one step; returns (delta, grid params)."""
    gp = grid_params_from_hidden(hidden, grid_head, height, width, patch)
    banks = build_filterbanks(gp, height, width, patch)
    content = ad.reshape(patch_head(hidden), (patch, patch))
    delta = place_patch(banks, content)
    if use_intensity:
        delta = delta * ad.exp(ad.neg(gp.log_intensity))
    return delta, gp


def read(image: Tensor, error_image: Tensor, hidden: Tensor, grid_head: LinearMap,
         patch: int, use_intensity: bool = True):
    """Attended patches of the target and the error image, flattened and
    concatenated into a single 2*p*p vector; returns (vector, grid params)."""
    if image.shape != error_image.shape:
        raise ad.ShapeMismatch(
            f"read: image {image.shape} and error image {error_image.shape} differ"
        )
    height, width = image.shape
    gp = grid_params_from_hidden(hidden, grid_head, height, width, patch)
    banks = build_filterbanks(gp, height, width, patch)
    first = ad.reshape(extract_patch(banks, image), (patch * patch,))
    second = ad.reshape(extract_patch(banks, error_image), (patch * patch,))
    out = ad.concat([first, second])
    if use_intensity:
        out = out * gp.intensity
    return out, gp
