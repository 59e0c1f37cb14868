"""Flow refinement toward a target field via a coarse correction grid.

The refiner stands in for per-scene fine-tuning of a flow network: a
zero-initialized residual grid at 1/stride resolution, Gaussian-smoothed
and bilinearly upsampled, is added to the base flow and trained with Adam
against the target under a smooth-L1 objective.  The smoothing plays the
role of a network's smoothness prior; early stopping (a small epoch
budget) keeps the refined flow from collapsing onto the target's errors.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil

import numpy as np

from .errors import InvalidInputError, NumericalError
from .geometry import FlowField
from .optim import _huber, adam_init, adam_step
from .raster import TargetFlow


@dataclass(frozen=True, eq=False)
class CorrectionGrid:
    """Residual flow values on a coarse grid, ``(gh, gw, 2)`` pixels."""

    values: np.ndarray
    stride: int
    sigma: float

    def __post_init__(self):
        if int(self.stride) < 1:
            raise InvalidInputError("stride must be >= 1")
        if self.sigma < 0:
            raise InvalidInputError("sigma must be >= 0")
        object.__setattr__(self, "stride", int(self.stride))
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != 2:
            raise InvalidInputError(f"values: expected (gh, gw, 2), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("values: non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def grid_shape(width: int, height: int, stride: int) -> tuple[int, int]:
    """Grid dimensions covering the image: ``ceil(dim / stride)``."""
    return ceil(height / stride), ceil(width / stride)


def init_refiner(width: int, height: int, stride: int = 8,
                 sigma: float = 1.0) -> CorrectionGrid:
    """Zero correction grid for the given image size; applying it is a no-op."""
    if width < 1 or height < 1:
        raise InvalidInputError("init_refiner: image dimensions must be positive")
    gh, gw = grid_shape(width, height, stride)
    return CorrectionGrid(np.zeros((gh, gw, 2)), stride, sigma)


def _gauss_kernel(sigma: float) -> np.ndarray:
    radius = max(1, ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _convolve_axis(arr: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    r = len(kernel) // 2
    moved = np.moveaxis(arr, axis, 0)
    n = moved.shape[0]
    padded = np.zeros((n + 2 * r,) + moved.shape[1:])
    padded[r:r + n] = moved
    out = np.zeros_like(moved)
    for i, w in enumerate(kernel):
        out += w * padded[i:i + n]
    return np.moveaxis(out, 0, axis)


def _axis_mass(n: int, kernel: np.ndarray) -> np.ndarray:
    # Kernel mass falling inside the grid at each position (border renormalization).
    return _convolve_axis(np.ones(n), kernel, 0)


def _smooth(values: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, renormalized at the borders.

    Each output is the kernel-weighted average of the in-range neighbors, so
    a constant grid stays exactly constant.
    """
    if sigma <= 0:
        return values
    k = _gauss_kernel(sigma)
    out = _convolve_axis(values, k, 0) / _axis_mass(values.shape[0], k)[:, None, None]
    return _convolve_axis(out, k, 1) / _axis_mass(values.shape[1], k)[None, :, None]


def _smooth_adjoint(values: np.ndarray, sigma: float) -> np.ndarray:
    """Transpose of ``_smooth``: divide by the mass, then convolve."""
    if sigma <= 0:
        return values
    k = _gauss_kernel(sigma)
    out = _convolve_axis(values / _axis_mass(values.shape[0], k)[:, None, None], k, 0)
    return _convolve_axis(out / _axis_mass(values.shape[1], k)[None, :, None], k, 1)


def _bilinear_coeffs(n_out: int, stride: int, n_in: int):
    # Output pixel centers land at (i + 0.5) / stride - 0.5 in grid units.
    c = (np.arange(n_out, dtype=np.float64) + 0.5) / stride - 0.5
    c = np.clip(c, 0.0, n_in - 1.0)
    i0 = np.minimum(np.floor(c).astype(np.intp), max(n_in - 2, 0))
    return i0, c - i0


def _upsample(values: np.ndarray, stride: int, height: int, width: int) -> np.ndarray:
    gh, gw = values.shape[:2]
    y0, fy = _bilinear_coeffs(height, stride, gh)
    x0, fx = _bilinear_coeffs(width, stride, gw)
    y1 = np.minimum(y0 + 1, gh - 1)
    x1 = np.minimum(x0 + 1, gw - 1)
    wy = fy[:, None, None]
    wx = fx[None, :, None]
    return ((1 - wy) * ((1 - wx) * values[y0][:, x0] + wx * values[y0][:, x1])
            + wy * ((1 - wx) * values[y1][:, x0] + wx * values[y1][:, x1]))


def _upsample_adjoint(grad_pix: np.ndarray, stride: int, gh: int, gw: int) -> np.ndarray:
    """Transpose of ``_upsample``: scatter-add pixel gradients into the grid."""
    height, width = grad_pix.shape[:2]
    y0, fy = _bilinear_coeffs(height, stride, gh)
    x0, fx = _bilinear_coeffs(width, stride, gw)
    y1 = np.minimum(y0 + 1, gh - 1)
    x1 = np.minimum(x0 + 1, gw - 1)
    out = np.zeros((gh, gw, 2))
    yy0 = np.broadcast_to(y0[:, None], (height, width))
    yy1 = np.broadcast_to(y1[:, None], (height, width))
    xx0 = np.broadcast_to(x0[None, :], (height, width))
    xx1 = np.broadcast_to(x1[None, :], (height, width))
    wy = fy[:, None, None]
    wx = fx[None, :, None]
    np.add.at(out, (yy0, xx0), (1 - wy) * (1 - wx) * grad_pix)
    np.add.at(out, (yy0, xx1), (1 - wy) * wx * grad_pix)
    np.add.at(out, (yy1, xx0), wy * (1 - wx) * grad_pix)
    np.add.at(out, (yy1, xx1), wy * wx * grad_pix)
    return out


def refiner_apply(grid: CorrectionGrid, base: FlowField) -> FlowField:
    """Base flow plus the smoothed, bilinearly upsampled correction."""
    expected = grid_shape(base.width, base.height, grid.stride)
    if grid.values.shape[:2] != expected:
        raise InvalidInputError(
            f"grid shape {grid.values.shape[:2]} does not match image "
            f"{base.width}x{base.height} at stride {grid.stride} (expected {expected})")
    corr = _upsample(_smooth(grid.values, grid.sigma), grid.stride,
                     base.height, base.width)
    return FlowField(base.uv + corr)


def flow_objective(grid_values: np.ndarray, base_uv: np.ndarray,
                   target_uv: np.ndarray, stride: int, sigma: float,
                   beta: float = 1.0) -> tuple[float, np.ndarray]:
    """Mean smooth-L1 between the corrected and target flow, with its gradient.

    The mean runs over pixels (components summed per pixel); the gradient is
    with respect to the grid values, backpropagated through the upsampling
    weights and the (self-adjoint) Gaussian smoothing.
    """
    height, width = base_uv.shape[:2]
    gh, gw = grid_values.shape[:2]
    corr = _upsample(_smooth(grid_values, sigma), stride, height, width)
    resid = base_uv + corr - target_uv
    n = height * width
    value, g = _huber(resid, beta)
    grad = _smooth_adjoint(_upsample_adjoint(g / n, stride, gh, gw), sigma)
    return value / n, grad


def refine_flow(base: FlowField, target: TargetFlow, epochs: int,
                lr: float = 0.05, stride: int = 8, sigma: float = 1.0,
                beta: float = 1.0) -> tuple[FlowField, np.ndarray]:
    """Run ``epochs`` Adam passes pulling the base flow toward the target.

    Returns the refined field and the per-epoch objective values (the value
    *before* each step).  ``epochs=0`` returns the base unchanged, and a
    target equal to the base is an exact fixed point for any epoch count.
    """
    if target.flow.uv.shape != base.uv.shape:
        raise InvalidInputError("target dimensions do not match the base flow")
    if epochs < 0:
        raise InvalidInputError("epochs must be >= 0")
    if stride < 1 or sigma < 0:
        raise InvalidInputError("stride must be >= 1 and sigma >= 0")
    if epochs == 0:
        return base, np.zeros(0)

    gh, gw = grid_shape(base.width, base.height, stride)
    values = np.zeros((gh, gw, 2))
    state = adam_init(values)
    losses = np.zeros(epochs)
    for e in range(epochs):
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grad = flow_objective(values, base.uv, target.flow.uv,
                                        stride, sigma, beta)
        if not np.isfinite(loss):
            raise NumericalError(f"flow refinement diverged at epoch {e}")
        losses[e] = loss
        values, state = adam_step(state, values, grad, lr)
    refined = refiner_apply(CorrectionGrid(values, stride, sigma), base)
    return refined, losses
