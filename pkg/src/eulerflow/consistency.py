"""Forward-backward cycle energy, occlusion masking and the masked loss."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import (
    FrameGrid,
    MotionField,
    ValidityMask,
    _check_shape,
    bilinear,
    in_domain,
    warp_targets,
)


@dataclass(frozen=True)
class BgcParams:
    """Thresholds of the bidirectional consistency check.

    ``alpha1`` scales the motion-dependent part of the threshold, ``alpha2``
    (px^2) is the static floor, ``epsilon`` guards the loss normaliser and
    ``lambda_geo`` is only carried into reports.
    """

    alpha1: float = 0.01
    alpha2: float = 0.5
    epsilon: float = 1e-6
    lambda_geo: float = 1.0

    def __post_init__(self):
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ValueError("alpha1 and alpha2 must be non-negative")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True, eq=False)
class CycleEnergyGrid:
    energy: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.energy, np.float64)
        if not (np.all(np.isfinite(e)) and np.all(e >= 0)):
            raise ValueError("cycle energy must be finite and non-negative")
        e = e.copy()
        e.setflags(write=False)
        object.__setattr__(self, "energy", e)

    @property
    def width(self) -> int:
        return self.energy.shape[1]

    @property
    def height(self) -> int:
        return self.energy.shape[0]


def _check_pair(fwd: MotionField, bwd: MotionField) -> None:
    _check_shape(fwd.shape, bwd.shape)
    if fwd.direction != "forward" or bwd.direction != "backward":
        raise ValueError("expected a forward field and a backward field")
    if (fwd.src_frame, fwd.dst_frame) != (bwd.dst_frame, bwd.src_frame):
        raise ValueError(
            f"frame pair mismatch: fwd {fwd.src_frame}->{fwd.dst_frame}, "
            f"bwd {bwd.src_frame}->{bwd.dst_frame}"
        )


def _cycle_terms(fwd: MotionField, bwd: MotionField):
    """Forward vectors, backward vectors at the forward targets, and the in-domain flags."""
    tx, ty = warp_targets(fwd)
    f = fwd.uv
    b = bilinear(np.stack([bwd.u, bwd.v], axis=-1), tx, ty)
    return f, b, in_domain(tx, ty, fwd.width, fwd.height)


def cycle_energy(fwd: MotionField, bwd: MotionField) -> CycleEnergyGrid:
    _check_pair(fwd, bwd)
    f, b, _ = _cycle_terms(fwd, bwd)
    r = f + b
    return CycleEnergyGrid(r[..., 0] ** 2 + r[..., 1] ** 2)


def occlusion_mask(
    fwd: MotionField, bwd: MotionField, params: BgcParams = BgcParams()
) -> ValidityMask:
    """1 where the round trip closes within ``alpha1*(|f|^2 + |b|^2) + alpha2``.

    Pixels whose forward target leaves the image are always 0.
    """
    _check_pair(fwd, bwd)
    f, b, inside = _cycle_terms(fwd, bwd)
    r = f + b
    energy = r[..., 0] ** 2 + r[..., 1] ** 2
    mags = (f**2).sum(-1) + (b**2).sum(-1)
    return ValidityMask((energy < params.alpha1 * mags + params.alpha2) & inside)


def forward_only_mask(fwd: MotionField, params: BgcParams = BgcParams()) -> ValidityMask:
    """Ablation variant that only looks at the forward flow.

    The cycle energy is replaced by ``|f|^2`` and the backward terms dropped,
    so a pixel survives iff ``|f|^2 < alpha1*|f|^2 + alpha2``: everything slower
    than ``sqrt(alpha2 / (1 - alpha1))`` px/frame is trusted.
    """
    tx, ty = warp_targets(fwd)
    mag2 = (fwd.uv**2).sum(-1)
    keep = mag2 < params.alpha1 * mag2 + params.alpha2
    return ValidityMask(keep & in_domain(tx, ty, fwd.width, fwd.height))


def geometric_loss(
    z_t: FrameGrid,
    z_next: FrameGrid,
    fwd: MotionField,
    mask: ValidityMask,
    params: BgcParams = BgcParams(),
) -> float:
    """Masked mean L1 residual between ``warp_backward(z_t, fwd)`` and ``z_next``.

    The per-pixel L1 norm sums over channels. The flow is applied as a
    backward warp, so for a forward flow ``t -> t+1`` on the frame-t grid the
    frame being sampled (frame t+1) goes in ``z_t`` and the reference frame in
    ``z_next``.
    """
    _check_shape(z_t.shape, z_next.shape)
    _check_shape(z_t.shape, fwd.shape)
    _check_shape(z_t.shape, mask.shape)
    if z_t.channels != z_next.channels:
        raise ValueError("channel count mismatch")
    tx, ty = warp_targets(fwd)
    warped = bilinear(z_t.data, tx, ty)
    resid = np.abs(warped - z_next.data.astype(np.float64)).sum(-1)
    m = mask.bits.astype(np.float64)
    # fsum is correctly rounded, hence independent of summation order
    num = math.fsum((m * resid).ravel().tolist())
    den = float(mask.valid_count)
    return num / (den + params.epsilon)


def masked_region_partition(mask: ValidityMask) -> tuple[float, list[tuple[int, int]]]:
    """Valid fraction and the row-major list of occluded ``(x, y)`` coordinates."""
    frac = mask.valid_count / mask.bits.size
    ys, xs = np.nonzero(~mask.bits)
    return frac, [(int(x), int(y)) for y, x in zip(ys, xs)]


def mask_iou(predicted_occluded: np.ndarray, true_occluded: np.ndarray) -> float:
    """Intersection over union of two occluded sets (1.0 when both are empty)."""
    p = np.asarray(predicted_occluded, bool)
    t = np.asarray(true_occluded, bool)
    union = np.count_nonzero(p | t)
    if union == 0:
        return 1.0
    return np.count_nonzero(p & t) / union
