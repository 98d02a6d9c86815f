"""Synthetic rigid-sprite scenes with analytic flows and occlusion sets.

A scene is a static value-noise background plus textured rectangles and
disks, each moving rigidly with constant velocity and angular rate. Since
every sprite pose is closed-form, the per-pixel flows, the frame-0 tracks and
the set of pixels whose correspondence survives can all be computed exactly.

Occlusion ground truth comes from forward-projecting 2x2 subsamples of each
pixel with a depth test; a pixel is occluded when most of its subsamples
land out of view or under a nearer surface.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .grid import FrameGrid, MotionField, ValidityMask, in_domain

Shape = Literal["rectangle", "disk"]
BACKGROUND = -1
SUPERSAMPLE = 4


@dataclass(frozen=True)
class Sprite:
    """A rigid textured shape.

    ``size`` is (width, height) for rectangles and (diameter, diameter) for
    disks. Pose at frame t: centre ``center + t*velocity``, angle
    ``angle + t*omega`` (radians, about the centre). Lower ``depth`` is nearer.
    """

    shape: Shape = "rectangle"
    center: tuple[float, float] = (16.0, 16.0)
    size: tuple[float, float] = (16.0, 16.0)
    velocity: tuple[float, float] = (0.0, 0.0)
    omega: float = 0.0
    angle: float = 0.0
    depth: int = 0
    texture_seed: int = 1
    tone: tuple[float, float] = (0.5, 1.0)

    def __post_init__(self):
        if self.shape not in ("rectangle", "disk"):
            raise ValueError(f"unknown sprite shape {self.shape!r}")
        if min(self.size) <= 0:
            raise ValueError("sprite size must be positive")

    def pose(self, t: float) -> tuple[np.ndarray, float]:
        c = np.asarray(self.center, np.float64) + t * np.asarray(self.velocity, np.float64)
        return c, self.angle + t * self.omega

    def to_local(self, x: np.ndarray, y: np.ndarray, t: float):
        c, th = self.pose(t)
        dx, dy = x - c[0], y - c[1]
        cs, sn = np.cos(th), np.sin(th)
        return cs * dx + sn * dy, -sn * dx + cs * dy

    def contains(self, x: np.ndarray, y: np.ndarray, t: float) -> np.ndarray:
        lx, ly = self.to_local(x, y, t)
        if self.shape == "disk":
            r = self.size[0] / 2.0
            return lx * lx + ly * ly < r * r
        hw, hh = self.size[0] / 2.0, self.size[1] / 2.0
        return (lx >= -hw) & (lx < hw) & (ly >= -hh) & (ly < hh)

    def move(self, x: np.ndarray, y: np.ndarray, t_from: float, t_to: float):
        """Carry surface points at (x, y), frame ``t_from``, to frame ``t_to``."""
        c0, a0 = self.pose(t_from)
        c1, a1 = self.pose(t_to)
        d = a1 - a0
        cs, sn = np.cos(d), np.sin(d)
        dx, dy = x - c0[0], y - c0[1]
        return c1[0] + cs * dx - sn * dy, c1[1] + sn * dx + cs * dy

    def bounds_at_zero(self) -> tuple[float, float, float, float]:
        if self.shape == "disk":
            r = self.size[0] / 2.0
            cx, cy = self.center
            return cx - r, cy - r, cx + r, cy + r
        hw, hh = self.size[0] / 2.0, self.size[1] / 2.0
        corners = np.array([[-hw, -hh], [hw, -hh], [hw, hh], [-hw, hh]])
        cs, sn = np.cos(self.angle), np.sin(self.angle)
        xs = self.center[0] + cs * corners[:, 0] - sn * corners[:, 1]
        ys = self.center[1] + sn * corners[:, 0] + cs * corners[:, 1]
        return xs.min(), ys.min(), xs.max(), ys.max()

    def track_points(self, margin: float = 2.0) -> np.ndarray:
        """Four points near the sprite's corners, ``margin`` px inside, at t=0."""
        if self.shape == "disk":
            r = self.size[0] / 2.0 - margin
            ang = self.angle + np.pi / 4 + np.arange(4) * np.pi / 2
            local = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=-1)
        else:
            hw, hh = self.size[0] / 2.0 - margin, self.size[1] / 2.0 - margin
            local = np.array([[-hw, -hh], [hw, -hh], [hw, hh], [-hw, hh]], np.float64)
            cs, sn = np.cos(self.angle), np.sin(self.angle)
            local = np.stack(
                [cs * local[:, 0] - sn * local[:, 1], sn * local[:, 0] + cs * local[:, 1]], -1
            )
        return local + np.asarray(self.center, np.float64)


@dataclass(frozen=True)
class SceneSpec:
    width: int = 64
    height: int = 64
    background_seed: int = 0
    sprites: tuple[Sprite, ...] = ()
    channels: int = 1
    texture_scale: float = 4.0
    background_tone: tuple[float, float] = (0.0, 0.5)

    def __post_init__(self):
        object.__setattr__(self, "sprites", tuple(self.sprites))
        if self.width < 2 or self.height < 2:
            raise ValueError("canvas must be at least 2x2")
        if not 1 <= self.channels <= 4:
            raise ValueError("channels must be in 1..4")
        depths = [s.depth for s in self.sprites]
        if len(set(depths)) != len(depths):
            raise ValueError("sprite depths must be distinct")


@dataclass
class GroundTruthBundle:
    """Everything :func:`render` derives for a horizon of T frames.

    ``fwd_flows[t]`` maps frame t to t+1 and ``bwd_flows[t]`` maps t+1 back to
    t. ``occlusion[t]`` is the geometric validity of ``fwd_flows[t]`` on
    frame t (0 = occluded or out of view), decided by depth-tested forward
    projection of 2x2 subsamples per pixel. ``strict_valid[t]`` further
    requires the bilinear footprint of the target to lie on the same surface;
    it is the set on which the analytic flow pair closes exactly.
    ``cum_flows[t]`` is the frame-0 to frame-t displacement and
    ``reference_valid[t]`` marks frame-0 pixels whose track survived every
    step up to t.
    """

    spec: SceneSpec
    frames: list[FrameGrid]
    fwd_flows: list[MotionField]
    bwd_flows: list[MotionField]
    cum_flows: list[MotionField]
    occlusion: list[ValidityMask]
    reference_valid: list[ValidityMask]
    strict_valid: list[ValidityMask] = field(default_factory=list)
    valid_area: list[float] = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return len(self.frames)


# --------------------------------------------------------------------------
# procedural texture


def _hash01(ix: np.ndarray, iy: np.ndarray, seed: int) -> np.ndarray:
    h = (
        ix.astype(np.int64).astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
        ^ iy.astype(np.int64).astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
        ^ np.uint64((seed * 0x165667B19E3779F9 + 0x27D4EB2F165667C5) % 2**64)
    )
    h ^= h >> np.uint64(30)
    h *= np.uint64(0xBF58476D1CE4E5B9)
    h ^= h >> np.uint64(27)
    h *= np.uint64(0x94D049BB133111EB)
    h ^= h >> np.uint64(31)
    return (h >> np.uint64(11)).astype(np.float64) * 2.0**-53


def _value_noise_octave(x: np.ndarray, y: np.ndarray, seed: int) -> np.ndarray:
    fx, fy = np.floor(x), np.floor(y)
    tx, ty = x - fx, y - fy
    tx = tx * tx * (3 - 2 * tx)
    ty = ty * ty * (3 - 2 * ty)
    ix, iy = fx.astype(np.int64), fy.astype(np.int64)
    v00 = _hash01(ix, iy, seed)
    v10 = _hash01(ix + 1, iy, seed)
    v01 = _hash01(ix, iy + 1, seed)
    v11 = _hash01(ix + 1, iy + 1, seed)
    return (1 - ty) * ((1 - tx) * v00 + tx * v10) + ty * ((1 - tx) * v01 + tx * v11)


def value_noise(x: np.ndarray, y: np.ndarray, seed: int, scale: float = 4.0) -> np.ndarray:
    """Deterministic two-octave value noise in [0, 1] with feature size ``scale`` px."""
    x = np.asarray(x, np.float64) / scale
    y = np.asarray(y, np.float64) / scale
    with np.errstate(over="ignore"):
        a = _value_noise_octave(x, y, seed)
        b = _value_noise_octave(2 * x + 17.3, 2 * y - 5.1, seed + 7919)
    return 0.6 * a + 0.4 * b


# --------------------------------------------------------------------------
# rendering


def _nearest_first(spec: SceneSpec) -> list[tuple[int, Sprite]]:
    return sorted(enumerate(spec.sprites), key=lambda kv: kv[1].depth)


def surface_ids(spec: SceneSpec, x: np.ndarray, y: np.ndarray, t: float) -> np.ndarray:
    """Index of the topmost sprite at each point, or ``BACKGROUND``."""
    ids = np.full(np.shape(x), BACKGROUND, np.int64)
    for idx, sprite in reversed(_nearest_first(spec)):
        ids[sprite.contains(x, y, t)] = idx
    return ids


def _shade(spec: SceneSpec, x: np.ndarray, y: np.ndarray, ids: np.ndarray, t: float) -> np.ndarray:
    out = np.empty(np.shape(x) + (spec.channels,), np.float64)
    for ch in range(spec.channels):
        lo, hi = spec.background_tone
        vals = lo + (hi - lo) * value_noise(x, y, spec.background_seed * 31 + ch, spec.texture_scale)
        for idx, sprite in enumerate(spec.sprites):
            sel = ids == idx
            if not np.any(sel):
                continue
            lx, ly = sprite.to_local(x[sel], y[sel], t)
            lo, hi = sprite.tone
            vals[sel] = lo + (hi - lo) * value_noise(
                lx, ly, sprite.texture_seed * 31 + ch + 1000, spec.texture_scale
            )
        out[..., ch] = vals
    return out


def render_frame(spec: SceneSpec, t: float) -> FrameGrid:
    """Anti-aliased frame: mean of a ``SUPERSAMPLE`` x ``SUPERSAMPLE`` sample grid per pixel."""
    s = SUPERSAMPLE
    offs = (np.arange(s) + 0.5) / s - 0.5
    xs = (np.arange(spec.width)[:, None] + offs[None, :]).ravel()
    ys = (np.arange(spec.height)[:, None] + offs[None, :]).ravel()
    X, Y = np.meshgrid(xs, ys)
    vals = _shade(spec, X, Y, surface_ids(spec, X, Y, t), t)
    vals = vals.reshape(spec.height, s, spec.width, s, spec.channels).mean(axis=(1, 3))
    return FrameGrid(vals)


def _centres(spec: SceneSpec):
    ys, xs = np.mgrid[0 : spec.height, 0 : spec.width]
    return xs.astype(np.float64), ys.astype(np.float64)


def _carry(spec: SceneSpec, ids: np.ndarray, x, y, t_from: float, t_to: float):
    """Positions at ``t_to`` of the surface points ``(x, y, ids)`` seen at ``t_from``."""
    nx, ny = np.array(x, np.float64), np.array(y, np.float64)
    for idx, sprite in enumerate(spec.sprites):
        sel = ids == idx
        if np.any(sel):
            nx[sel], ny[sel] = sprite.move(x[sel], y[sel], t_from, t_to)
    return nx, ny


def _footprint_agrees(spec: SceneSpec, ids_next: np.ndarray, ids: np.ndarray, tx, ty) -> np.ndarray:
    """True where every weighted bilinear neighbour of (tx, ty) shows surface ``ids``."""
    w, h = spec.width, spec.height
    ok = in_domain(tx, ty, w, h)
    cx = np.clip(tx, 0, w - 1)
    cy = np.clip(ty, 0, h - 1)
    x0 = np.minimum(np.floor(cx), w - 2).astype(np.intp)
    y0 = np.minimum(np.floor(cy), h - 2).astype(np.intp)
    fx, fy = cx - x0, cy - y0
    for dx, wx in ((0, fx < 1), (1, fx > 0)):
        for dy, wy in ((0, fy < 1), (1, fy > 0)):
            used = wx & wy
            ok &= ~used | (ids_next[y0 + dy, x0 + dx] == ids)
    return ok


_SUB = np.array([(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)])


def _projection_survives(spec: SceneSpec, X, Y, t_from: float, t_to: float) -> np.ndarray:
    """Per-subsample flags (4, H, W): carried point stays in view and on top at ``t_to``."""
    out = np.empty((len(_SUB),) + X.shape, bool)
    for k, (ox, oy) in enumerate(_SUB):
        sx, sy = X + ox, Y + oy
        ids = surface_ids(spec, sx, sy, t_from)
        tx, ty = _carry(spec, ids, sx, sy, t_from, t_to)
        inside = in_domain(tx - ox, ty - oy, spec.width, spec.height)
        out[k] = inside & (surface_ids(spec, tx, ty, t_to) == ids)
    return out


def _majority(flags: np.ndarray) -> np.ndarray:
    return 2 * flags.sum(axis=0) > flags.shape[0]


def render(spec: SceneSpec, T: int) -> GroundTruthBundle:
    if T < 2:
        raise ValueError("need at least two frames")
    for sprite in spec.sprites:
        x0, y0, x1, y1 = sprite.bounds_at_zero()
        if x0 < -0.5 or y0 < -0.5 or x1 > spec.width - 0.5 or y1 > spec.height - 0.5:
            raise ValueError(f"sprite at {sprite.center} does not fit the canvas at t=0")

    X, Y = _centres(spec)
    ids = [surface_ids(spec, X, Y, t) for t in range(T)]
    frames = [render_frame(spec, t) for t in range(T)]

    fwd, bwd, occ, strict = [], [], [], []
    for t in range(T - 1):
        tx, ty = _carry(spec, ids[t], X, Y, t, t + 1)
        fwd.append(MotionField(tx - X, ty - Y, "forward", t, t + 1))
        geo = _majority(_projection_survives(spec, X, Y, t, t + 1))
        occ.append(ValidityMask(geo))
        strict.append(ValidityMask(geo & _footprint_agrees(spec, ids[t + 1], ids[t], tx, ty)))
        bx, by = _carry(spec, ids[t + 1], X, Y, t + 1, t)
        bwd.append(MotionField(bx - X, by - Y, "backward", t + 1, t))

    cum = [MotionField.zeros(spec.width, spec.height, src_frame=0, dst_frame=0)]
    ref = [ValidityMask.ones(spec.width, spec.height)]
    alive = np.ones((len(_SUB), spec.height, spec.width), bool)
    for t in range(1, T):
        tx, ty = _carry(spec, ids[0], X, Y, 0, t)
        cum.append(MotionField(tx - X, ty - Y, "forward", 0, t))
        alive &= _projection_survives(spec, X, Y, 0, t)
        ref.append(ValidityMask(_majority(alive)))

    bundle = GroundTruthBundle(spec, frames, fwd, bwd, cum, occ, ref, strict_valid=strict)
    bundle.valid_area = [m.valid_count / m.bits.size for m in occ]
    return bundle


def valid_area_curve(bundle: GroundTruthBundle, anchor: str = "reference") -> list[float]:
    """Valid fraction per frame t = 0..T-1, anchored at frame 0 or at frame t-1.

    Frame 0 has nothing to correspond to and reports 1.0 in both modes.
    """
    if anchor == "reference":
        return [m.valid_count / m.bits.size for m in bundle.reference_valid]
    if anchor == "adjacent":
        return [1.0] + list(bundle.valid_area)
    raise ValueError(f"anchor must be 'reference' or 'adjacent', got {anchor!r}")


def sprite_track(sprite: Sprite, points: np.ndarray, T: int) -> np.ndarray:
    """Analytic positions (T, N, 2) of surface points given at t=0."""
    out = np.empty((T,) + points.shape, np.float64)
    for t in range(T):
        px, py = sprite.move(points[:, 0], points[:, 1], 0, t)
        out[t, :, 0], out[t, :, 1] = px, py
    return out


def rotation_field(
    width: int, height: int, omega: float, steps: int = 1, center: tuple[float, float] | None = None
) -> MotionField:
    """Displacement of a rigid rotation by ``omega*steps`` about ``center``."""
    cx, cy = center if center is not None else ((width - 1) / 2.0, (height - 1) / 2.0)
    X, Y = np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))
    th = omega * steps
    cs, sn = np.cos(th), np.sin(th)
    dx, dy = X - cx, Y - cy
    return MotionField(cx + cs * dx - sn * dy - X, cy + sn * dx + cs * dy - Y, "forward", 0, steps)


# --------------------------------------------------------------------------
# shipped scenes


def static_scene(width: int = 32, height: int = 32) -> SceneSpec:
    return SceneSpec(
        width, height, background_seed=3,
        sprites=(Sprite("rectangle", (width / 2, height / 2), (10, 8), texture_seed=5),),
    )


def translating_rectangle(
    width: int = 64,
    height: int = 64,
    velocity: tuple[float, float] = (2.0, 0.0),
    size: tuple[float, float] = (16.0, 20.0),
    left: float = 4.0,
) -> SceneSpec:
    """One rectangle sliding over a static background, edges on half-pixels."""
    cx = left - 0.5 + size[0] / 2.0
    cy = height / 2.0 - 0.5 + (size[1] % 2) / 2.0
    return SceneSpec(
        width, height, background_seed=11,
        sprites=(Sprite("rectangle", (cx, cy), size, velocity, texture_seed=4),),
    )


def rotating_disk(width: int = 48, height: int = 48, omega: float = 0.05, radius: float = 14.0) -> SceneSpec:
    return SceneSpec(
        width, height, background_seed=21,
        sprites=(
            Sprite("disk", ((width - 1) / 2, (height - 1) / 2), (2 * radius, 2 * radius),
                   omega=omega, texture_seed=8),
        ),
    )


def crossing_sprites(width: int = 64, height: int = 48) -> SceneSpec:
    """A disk passing in front of a slower rectangle."""
    return SceneSpec(
        width, height, background_seed=5,
        sprites=(
            Sprite("rectangle", (20.5, 24.5), (14, 18), (1.0, 0.0), depth=1, texture_seed=2,
                   tone=(0.45, 0.85)),
            Sprite("disk", (12.0, 24.0), (14, 14), (2.0, 0.0), omega=0.03, depth=0,
                   texture_seed=9, tone=(0.6, 1.0)),
        ),
    )


def default_scene() -> SceneSpec:
    return translating_rectangle()


SHIPPED_SCENES = {
    "static": static_scene,
    "translating_rectangle": translating_rectangle,
    "rotating_disk": rotating_disk,
    "crossing_sprites": crossing_sprites,
}
