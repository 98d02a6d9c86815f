"""Dense grids, bilinear sampling, backward warping and flow composition.

Conventions used throughout the package:

* arrays are indexed ``[row, col]`` i.e. ``[y, x]``;
* pixel centres sit on integer coordinates, ``(0, 0)`` is the centre of the
  top-left pixel, so the sampling domain is ``[0, W-1] x [0, H-1]``;
* samples outside the domain are clamped to the border for their value, and
  the warp operators report the excursion in a :class:`ValidityMask`.

Stored arrays are float32; every computation is carried out in float64.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

Direction = Literal["forward", "backward"]


def _frozen(arr: np.ndarray, dtype) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class FrameGrid:
    """An H x W x C image (or proxy latent) with values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or not 1 <= data.shape[2] <= 4:
            raise ValueError(f"FrameGrid expects (H, W, C) with 1 <= C <= 4, got {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError("FrameGrid needs at least one pixel")
        if not np.all(np.isfinite(data)):
            raise ValueError("FrameGrid values must be finite")
        object.__setattr__(self, "data", _frozen(np.clip(data, 0.0, 1.0), np.float32))

    @classmethod
    def zeros(cls, width: int, height: int, channels: int = 1) -> "FrameGrid":
        return cls(np.zeros((height, width, channels), np.float32))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[:2]

    def __eq__(self, other):
        return isinstance(other, FrameGrid) and np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class MotionField:
    """Per-pixel displacement ``(u, v)`` in pixels between two frames."""

    u: np.ndarray
    v: np.ndarray
    direction: Direction = "forward"
    src_frame: int = 0
    dst_frame: int = 1

    def __post_init__(self):
        u, v = np.asarray(self.u), np.asarray(self.v)
        if u.ndim != 2 or u.shape != v.shape:
            raise ValueError(f"u and v must be matching 2-D arrays, got {u.shape} and {v.shape}")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ValueError("MotionField values must be finite")
        if self.direction not in ("forward", "backward"):
            raise ValueError(f"unknown direction {self.direction!r}")
        object.__setattr__(self, "u", _frozen(u, np.float32))
        object.__setattr__(self, "v", _frozen(v, np.float32))

    @classmethod
    def from_uv(cls, uv: np.ndarray, **kw) -> "MotionField":
        uv = np.asarray(uv)
        return cls(uv[..., 0], uv[..., 1], **kw)

    @classmethod
    def zeros(cls, width: int, height: int, **kw) -> "MotionField":
        return cls.uniform(width, height, 0.0, 0.0, **kw)

    @classmethod
    def uniform(cls, width: int, height: int, du: float, dv: float, **kw) -> "MotionField":
        return cls(np.full((height, width), du), np.full((height, width), dv), **kw)

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape

    @property
    def uv(self) -> np.ndarray:
        """(H, W, 2) float64 copy."""
        return np.stack([self.u, self.v], axis=-1).astype(np.float64)

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u.astype(np.float64), self.v.astype(np.float64))

    def with_frames(self, src_frame: int, dst_frame: int, direction: Direction | None = None):
        return MotionField(self.u, self.v, direction or self.direction, src_frame, dst_frame)

    def scaled(self, factor: float) -> "MotionField":
        return MotionField(
            self.u.astype(np.float64) * factor,
            self.v.astype(np.float64) * factor,
            self.direction,
            self.src_frame,
            self.dst_frame,
        )

    def __eq__(self, other):
        return (
            isinstance(other, MotionField)
            and np.array_equal(self.u, other.u)
            and np.array_equal(self.v, other.v)
            and (self.direction, self.src_frame, self.dst_frame)
            == (other.direction, other.src_frame, other.dst_frame)
        )


@dataclass(frozen=True, eq=False)
class ValidityMask:
    """Binary H x W mask; True marks a geometrically verifiable pixel."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2:
            raise ValueError(f"mask must be 2-D, got {bits.shape}")
        if bits.dtype != bool:
            if not np.all((bits == 0) | (bits == 1)):
                raise ValueError("mask entries must be 0 or 1")
        object.__setattr__(self, "bits", _frozen(bits, bool))

    @classmethod
    def ones(cls, width: int, height: int) -> "ValidityMask":
        return cls(np.ones((height, width), bool))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    @property
    def valid_count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def __and__(self, other: "ValidityMask") -> "ValidityMask":
        _check_shape(self.shape, other.shape)
        return ValidityMask(self.bits & other.bits)

    def __eq__(self, other):
        return isinstance(other, ValidityMask) and np.array_equal(self.bits, other.bits)


def _check_shape(a: tuple[int, int], b: tuple[int, int]) -> None:
    if tuple(a) != tuple(b):
        raise ValueError(f"dimension mismatch: {tuple(a)} vs {tuple(b)}")


def bilinear(values: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinearly sample ``values`` (H, W[, C]) at float coordinates.

    Coordinates are clamped to the domain first. At lattice points the stored
    value is reproduced exactly, including the last row/column.
    """
    h, w = values.shape[:2]
    x = np.clip(np.asarray(x, np.float64), 0.0, w - 1)
    y = np.clip(np.asarray(y, np.float64), 0.0, h - 1)
    x0 = np.minimum(np.floor(x), max(w - 2, 0)).astype(np.intp)
    y0 = np.minimum(np.floor(y), max(h - 2, 0)).astype(np.intp)
    dx = np.minimum(x0 + 1, w - 1) - x0
    dy = (np.minimum(y0 + 1, h - 1) - y0) * w
    fx = x - x0
    fy = y - y0
    vals = np.asarray(values, np.float64)
    flat = vals.reshape((h * w,) + vals.shape[2:])
    i00 = y0 * w + x0
    if vals.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = (1.0 - fx) * flat[i00] + fx * flat[i00 + dx]
    bot = (1.0 - fx) * flat[i00 + dy] + fx * flat[i00 + dy + dx]
    return (1.0 - fy) * top + fy * bot


def in_domain(x: np.ndarray, y: np.ndarray, width: int, height: int) -> np.ndarray:
    return (x >= 0) & (x <= width - 1) & (y >= 0) & (y <= height - 1)


def pixel_coords(width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Float64 (x, y) coordinate arrays of shape (H, W)."""
    ys, xs = np.mgrid[0:height, 0:width]
    return xs.astype(np.float64), ys.astype(np.float64)


def sample_bilinear(grid: FrameGrid, x: float, y: float, channel: int = 0) -> float:
    if not 0 <= channel < grid.channels:
        raise ValueError(f"channel {channel} out of range for {grid.channels}-channel grid")
    return float(bilinear(grid.data[:, :, channel], np.float64(x), np.float64(y)))


def warp_targets(flow: MotionField) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = pixel_coords(flow.width, flow.height)
    return xs + flow.u, ys + flow.v


def warp_backward(grid: FrameGrid, flow: MotionField) -> tuple[FrameGrid, ValidityMask]:
    """``out(x, y) = grid(x + u, y + v)``; the mask flags targets that left the domain."""
    _check_shape(grid.shape, flow.shape)
    tx, ty = warp_targets(flow)
    out = bilinear(grid.data, tx, ty)
    return FrameGrid(out), ValidityMask(in_domain(tx, ty, grid.width, grid.height))


def sample_field(field: MotionField, at: MotionField) -> MotionField:
    """Resample ``field`` at the positions ``at`` points to (border-clamped)."""
    _check_shape(field.shape, at.shape)
    tx, ty = warp_targets(at)
    uv = bilinear(np.stack([field.u, field.v], axis=-1), tx, ty)
    return MotionField(uv[..., 0], uv[..., 1], field.direction, field.src_frame, field.dst_frame)


def compose_flows(first: MotionField, second: MotionField) -> MotionField:
    """Chain ``first`` (a -> b) with ``second`` (b -> c) into a -> c."""
    _check_shape(first.shape, second.shape)
    if first.dst_frame != second.src_frame:
        raise ValueError(
            f"cannot compose {first.src_frame}->{first.dst_frame} with "
            f"{second.src_frame}->{second.dst_frame}"
        )
    tx, ty = warp_targets(first)
    uv = first.uv + bilinear(np.stack([second.u, second.v], axis=-1), tx, ty)
    return MotionField(uv[..., 0], uv[..., 1], first.direction, first.src_frame, second.dst_frame)


def invert_flow(flow: MotionField, iterations: int = 20, tol: float = 1e-9) -> MotionField:
    """Approximate inverse by fixed-point iteration ``w(y) = -f(y + w(y))``.

    Turns a forward displacement into the field a backward warp needs. Exact
    for uniform translations; inside occlusion boundaries the result is only
    one of the admissible preimages. Iteration stops early once no vector
    moves by more than ``tol``.
    """
    xs, ys = pixel_coords(flow.width, flow.height)
    f = flow.uv
    w = -f.reshape(-1, 2)
    xs, ys = xs.ravel(), ys.ravel()
    # only pixels that are still moving are re-evaluated
    live = np.arange(w.shape[0])
    for _ in range(iterations):
        nxt = -bilinear(f, xs[live] + w[live, 0], ys[live] + w[live, 1])
        moved = np.max(np.abs(nxt - w[live]), axis=-1) > tol
        w[live] = nxt
        live = live[moved]
        if live.size == 0:
            break
    w = w.reshape(f.shape)
    direction = "backward" if flow.direction == "forward" else "forward"
    return MotionField(w[..., 0], w[..., 1], direction, flow.dst_frame, flow.src_frame)
