"""Motion sequences, trajectory integration, hint densification and the proxy chain.

An *eulerian* sequence stores per-step fields ``f_{t -> t+1}`` on the grid of
frame t; a *lagrangian* one stores displacements ``u_{0 -> t}`` anchored on
frame 0. Chaining the former with :func:`compose_flows` gives the latter.

:func:`autoregressive_chain` is a stand-in for a frame generator: each frame
is the previous (or the first) frame carried along a noisy flow, plus
additive pixel noise. Flow noise is a random scalar gain per field,
``f * (1 + eta)``, whose standard deviation follows the noise model's
variance law for the temporal baseline the field spans (1 for an adjacent
step, t for a frame-0 anchor).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .grid import (
    FrameGrid,
    MotionField,
    bilinear,
    compose_flows,
    invert_flow,
    pixel_coords,
    warp_backward,
)
from .noise import NoiseModel

Mode = Literal["lagrangian", "eulerian"]
Refresh = Literal["lagrangian_anchor", "eulerian_step"]


@dataclass(frozen=True)
class Hint:
    """A sparse motion cue: velocity ``velocity`` at ``position`` on frames [start, stop)."""

    position: tuple[float, float]
    velocity: tuple[float, float]
    span: tuple[int, int] = (0, 1)

    def __post_init__(self):
        start, stop = self.span
        if not 0 <= start < stop:
            raise ValueError(f"active span must be a non-empty [start, stop), got {self.span}")

    def active(self, frame: int) -> bool:
        return self.span[0] <= frame < self.span[1]


@dataclass(frozen=True)
class TrajectorySet:
    hints: tuple[Hint, ...]
    horizon: int

    def __post_init__(self):
        object.__setattr__(self, "hints", tuple(self.hints))
        for h in self.hints:
            if h.span[1] > self.horizon:
                raise ValueError(f"hint span {h.span} exceeds horizon {self.horizon}")

    def active(self, frame: int) -> list[Hint]:
        return [h for h in self.hints if h.active(frame)]


@dataclass(frozen=True)
class MotionSequence:
    mode: Mode
    fields: tuple[MotionField, ...]

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(self.fields))
        if self.mode not in ("lagrangian", "eulerian"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not self.fields:
            raise ValueError("a motion sequence needs at least one field")
        for k, f in enumerate(self.fields):
            if f.shape != self.fields[0].shape:
                raise ValueError("all fields must share one grid")
            want = (0, k + 1) if self.mode == "lagrangian" else (k, k + 1)
            if (f.src_frame, f.dst_frame) != want:
                raise ValueError(
                    f"{self.mode} field {k} must map {want[0]}->{want[1]}, "
                    f"got {f.src_frame}->{f.dst_frame}"
                )

    @property
    def horizon(self) -> int:
        """Number of frames the sequence spans."""
        return len(self.fields) + 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.fields[0].shape


def eulerian_to_lagrangian(seq: MotionSequence) -> MotionSequence:
    """Chain per-step fields into frame-0 anchored displacements."""
    if seq.mode != "eulerian":
        raise ValueError(f"expected an eulerian sequence, got {seq.mode}")
    out = [seq.fields[0]]
    for f in seq.fields[1:]:
        out.append(compose_flows(out[-1], f))
    return MotionSequence("lagrangian", out)


def integrate_points(points: np.ndarray, seq: MotionSequence) -> np.ndarray:
    """Positions (T, N, 2) of ``points`` (N, 2) given at frame 0.

    Eulerian sequences are integrated with explicit Euler steps
    ``x_{t+1} = x_t + f_t(x_t)``; lagrangian ones are read off directly as
    ``x_t = x_0 + u_{0->t}(x_0)``.
    """
    p0 = np.asarray(points, np.float64).reshape(-1, 2)
    out = np.empty((seq.horizon,) + p0.shape)
    out[0] = p0
    for k, f in enumerate(seq.fields):
        uv = np.stack([f.u, f.v], axis=-1)
        base = out[k] if seq.mode == "eulerian" else p0
        out[k + 1] = base + bilinear(uv, base[:, 0], base[:, 1])
    return out


def densify_hints(
    hints: TrajectorySet | Sequence[Hint],
    width: int,
    height: int,
    bandwidth: float | None = None,
    frame: int = 0,
) -> MotionField:
    """Dense field from the hints active on ``frame`` by Gaussian-weighted averaging.

    ``bandwidth`` defaults to a tenth of the shorter canvas side. With no
    active hint the field is zero.
    """
    if bandwidth is None:
        bandwidth = 0.1 * min(width, height)
    if not bandwidth > 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    pool = hints.hints if isinstance(hints, TrajectorySet) else tuple(hints)
    for h in pool:
        x, y = h.position
        if not (0 <= x <= width - 1 and 0 <= y <= height - 1):
            raise ValueError(f"hint at {h.position} lies outside the {width}x{height} canvas")
    active = [h for h in pool if h.active(frame)]
    if not active:
        return MotionField.zeros(width, height, src_frame=frame, dst_frame=frame + 1)

    xs, ys = pixel_coords(width, height)
    pos = np.array([h.position for h in active], np.float64)
    vel = np.array([h.velocity for h in active], np.float64)
    d2 = (xs[..., None] - pos[:, 0]) ** 2 + (ys[..., None] - pos[:, 1]) ** 2
    # shifting by the nearest hint's distance leaves the ratio unchanged but
    # keeps the largest weight at 1, so far-away pixels cannot underflow to 0/0
    w = np.exp(-(d2 - d2.min(axis=-1, keepdims=True)) / (2.0 * bandwidth**2))
    w /= w.sum(axis=-1, keepdims=True)
    return MotionField(w @ vel[:, 0], w @ vel[:, 1], "forward", frame, frame + 1)


# --------------------------------------------------------------------------
# proxy generator chain


def _streams(noise: NoiseModel) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent flow-noise and pixel-noise generators derived from the seed."""
    flow_ss, pixel_ss = np.random.SeedSequence(noise.seed).spawn(2)
    return np.random.default_rng(flow_ss), np.random.default_rng(pixel_ss)


def noisy_fields(seq: MotionSequence, noise: NoiseModel | None, refresh: Refresh) -> MotionSequence:
    """The perturbed fields a chain with this seed actually follows.

    Step k draws one standard scalar ``xi_k`` regardless of ``refresh``, so
    the two refresh modes see matched randomness. The gain applied to the
    field is ``1 + scale * xi_k`` with the noise model's scale at baseline 1
    (eulerian step) or k+1 (lagrangian anchor).
    """
    if refresh not in ("lagrangian_anchor", "eulerian_step"):
        raise ValueError(f"unknown refresh mode {refresh!r}")
    if refresh == "eulerian_step":
        if seq.mode != "eulerian":
            raise ValueError("eulerian_step needs an eulerian sequence")
        base = seq
    else:
        base = eulerian_to_lagrangian(seq) if seq.mode == "eulerian" else seq
    if noise is None:
        return base
    rng, _ = _streams(noise)
    xi = noise.standard_scalars(rng, len(base.fields))
    out = []
    for k, f in enumerate(base.fields):
        baseline = 1 if refresh == "eulerian_step" else k + 1
        out.append(f.scaled(1.0 + noise.scale_at(baseline) * xi[k]))
    return MotionSequence(base.mode, out)


def autoregressive_chain(
    z0: FrameGrid,
    seq: MotionSequence,
    noise: NoiseModel | None,
    refresh: Refresh,
    pixel_sigma: float = 0.0,
) -> list[FrameGrid]:
    """Frames ``z_0 .. z_T`` produced by carrying content along noisy flows.

    ``eulerian_step`` advects the previous output by one step;
    ``lagrangian_anchor`` re-derives every frame from ``z0`` with the
    cumulative displacement. Forward displacements are inverted before
    backward warping so content travels with the flow. ``pixel_sigma`` adds
    i.i.d. Gaussian noise to every output pixel; values are clamped to [0, 1].
    """
    if z0.shape != seq.shape:
        raise ValueError(f"dimension mismatch: {z0.shape} vs {seq.shape}")
    if pixel_sigma < 0:
        raise ValueError("pixel_sigma must be non-negative")
    fields = noisy_fields(seq, noise, refresh).fields
    pixel_rng = _streams(noise)[1] if noise is not None else np.random.default_rng(0)
    frames = [z0]
    for f in fields:
        src = frames[-1] if refresh == "eulerian_step" else z0
        warped, _ = warp_backward(src, invert_flow(f))
        data = warped.data.astype(np.float64)
        if pixel_sigma > 0:
            data = data + pixel_sigma * pixel_rng.standard_normal(data.shape)
        frames.append(FrameGrid(np.clip(data, 0.0, 1.0)))
    return frames
