"""Coarse-to-fine block-matching flow estimator and batched dyad estimation.

Per pyramid level every pixel searches integer displacements within
``search`` of its initial guess (twice the coarser level's answer) and keeps
the one with the smallest sum of absolute differences over a
``(2*patch+1)^2`` block (with ``shiftable`` on, the cheapest such block
among all blocks containing the pixel, which keeps motion boundaries from
bleeding into the slower side). Exact ties go to the displacement of smallest
magnitude, then to the lexicographically smallest ``(u, v)``. On the finest
level a parabola through the neighbouring costs optionally refines each
component to sub-pixel precision.

Box sums are accumulated as explicit shifted adds in a fixed order, so equal
difference images give bit-identical costs and the tie rule is reliable.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
from scipy.ndimage import minimum_filter

from .grid import FrameGrid, MotionField, _check_shape

MIN_COARSE = 8
OUTSIDE_COST = 1.0  # per channel; the largest difference two values in [0, 1] can have


@dataclass(frozen=True)
class EstimatorParams:
    levels: int = 3
    patch: int = 2
    search: int = 2
    subpixel_refine: bool = True
    shiftable: bool = True

    def __post_init__(self):
        if self.levels < 1 or self.patch < 1 or self.search < 1:
            raise ValueError("levels, patch and search must all be >= 1")


@dataclass(frozen=True)
class DyadBatch:
    pairs: tuple[tuple[int, int], ...]
    direction: Literal["forward", "backward"]

    def __len__(self):
        return len(self.pairs)


def build_dyads(T: int) -> tuple[DyadBatch, DyadBatch]:
    """Forward pairs ``(t, t+1)`` and backward pairs ``(t+1, t)`` for t = 0..T-2."""
    if T < 2:
        raise ValueError(f"need at least two frames, got {T}")
    fwd = tuple((t, t + 1) for t in range(T - 1))
    return DyadBatch(fwd, "forward"), DyadBatch(tuple((b, a) for a, b in fwd), "backward")


# --------------------------------------------------------------------------
# pyramid


def _downsample(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    if h % 2:
        img = np.concatenate([img, img[-1:]], axis=0)
    if w % 2:
        img = np.concatenate([img, img[:, -1:]], axis=1)
    return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])


def _pyramid(img: np.ndarray, levels: int) -> list[np.ndarray]:
    pyr = [img]
    while len(pyr) < levels:
        h, w = pyr[-1].shape[:2]
        if (h + 1) // 2 < MIN_COARSE or (w + 1) // 2 < MIN_COARSE:
            break
        pyr.append(_downsample(pyr[-1]))
    return pyr


# --------------------------------------------------------------------------
# cost volume


def _box_sum(img: np.ndarray, r: int) -> np.ndarray:
    p = np.pad(img, r, mode="edge")
    h, w = img.shape
    rows = p[:, 0:w].copy()
    for k in range(1, 2 * r + 1):
        rows += p[:, k : k + w]
    out = rows[0:h].copy()
    for k in range(1, 2 * r + 1):
        out += rows[k : k + h]
    return out


def _shifted(img: np.ndarray, du: int, dv: int) -> np.ndarray:
    """``img[y + dv, x + du]`` with edge clamping."""
    h, w = img.shape[:2]
    xs = np.clip(np.arange(w) + du, 0, w - 1)
    ys = np.clip(np.arange(h) + dv, 0, h - 1)
    return img[ys][:, xs]


def _outside(h: int, w: int, du: int, dv: int) -> np.ndarray:
    xs = np.arange(w) + du
    ys = np.arange(h) + dv
    return ((ys < 0) | (ys >= h))[:, None] | ((xs < 0) | (xs >= w))[None, :]


def _cost_volume(a: np.ndarray, b: np.ndarray, us: range, vs: range, r: int, shiftable: bool):
    """Centred-block SAD volume and the volume used for selection."""
    h, w = a.shape[:2]
    vol = np.empty((len(vs), len(us), h, w), np.float64)
    for j, dv in enumerate(vs):
        for i, du in enumerate(us):
            diff = np.abs(a - _shifted(b, du, dv)).sum(axis=-1)
            # a sample from beyond the border is the worst possible match, not
            # a copy of the edge pixel
            diff[_outside(h, w, du, dv)] = OUTSIDE_COST * a.shape[2]
            vol[j, i] = _box_sum(diff, r)
    if not shiftable:
        return vol, vol
    # best block among all blocks containing the pixel; curbs foreground fattening
    return vol, minimum_filter(vol, size=(1, 1, 2 * r + 1, 2 * r + 1), mode="nearest")


def _match_level(a, b, init_u, init_v, params: EstimatorParams, refine: bool):
    s, r = params.search, params.patch
    pad = 1 if refine else 0
    us = range(int(init_u.min()) - s - pad, int(init_u.max()) + s + pad + 1)
    vs = range(int(init_v.min()) - s - pad, int(init_v.max()) + s + pad + 1)
    raw, vol = _cost_volume(a, b, us, vs, r, params.shiftable)

    # rank of each absolute displacement under the tie rule
    U, V = np.meshgrid(np.array(us), np.array(vs))
    order = np.lexsort((V.ravel(), U.ravel(), (U * U + V * V).ravel()))
    rank = np.empty(order.size, np.int64)
    rank[order] = np.arange(order.size)
    rank = rank.reshape(U.shape)

    h, w = a.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w]
    best_cost = np.full((h, w), np.inf)
    best_rank = np.full((h, w), np.iinfo(np.int64).max)
    best_u = np.zeros((h, w), np.int64)
    best_v = np.zeros((h, w), np.int64)
    for dv in range(-s, s + 1):
        for du in range(-s, s + 1):
            cu = init_u + du
            cv = init_v + dv
            iu, iv = cu - us.start, cv - vs.start
            cost = vol[iv, iu, yy, xx]
            rk = rank[iv, iu]
            take = (cost < best_cost) | ((cost == best_cost) & (rk < best_rank))
            best_cost = np.where(take, cost, best_cost)
            best_rank = np.where(take, rk, best_rank)
            best_u = np.where(take, cu, best_u)
            best_v = np.where(take, cv, best_v)

    fu = best_u.astype(np.float64)
    fv = best_v.astype(np.float64)
    if refine:
        iu, iv = best_u - us.start, best_v - vs.start
        by, bx = _winning_block(raw, iu, iv, yy, xx, r if params.shiftable else 0)
        c0 = raw[iv, iu, by, bx]
        fu += _parabola(raw[iv, iu - 1, by, bx], c0, raw[iv, iu + 1, by, bx])
        fv += _parabola(raw[iv - 1, iu, by, bx], c0, raw[iv + 1, iu, by, bx])
    return best_u, best_v, fu, fv


def _winning_block(raw, iu, iv, yy, xx, r: int):
    """Centre of the block that realised the selected cost, nearest-to-pixel first."""
    h, w = yy.shape
    offs = [(oy, ox) for oy in range(-r, r + 1) for ox in range(-r, r + 1)]
    offs.sort(key=lambda o: (o[0] ** 2 + o[1] ** 2, o))
    best = np.full((h, w), np.inf)
    by, bx = yy.copy(), xx.copy()
    for oy, ox in offs:
        cy = np.clip(yy + oy, 0, h - 1)
        cx = np.clip(xx + ox, 0, w - 1)
        c = raw[iv, iu, cy, cx]
        take = c < best
        best = np.where(take, c, best)
        by = np.where(take, cy, by)
        bx = np.where(take, cx, bx)
    return by, bx


def _parabola(cm: np.ndarray, c0: np.ndarray, cp: np.ndarray) -> np.ndarray:
    den = cm - 2.0 * c0 + cp
    with np.errstate(divide="ignore", invalid="ignore"):
        off = np.where(den > 0, (cm - cp) / (2.0 * den), 0.0)
    # a zero-cost block is an exact integer match, and a sample that is not a
    # local minimum along this axis has no vertex between its neighbours
    off = np.where((c0 > 0) & (cm >= c0) & (cp >= c0), off, 0.0)
    return np.clip(off, -0.5, 0.5)


def _upsample_init(u: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    up = np.repeat(np.repeat(2 * u, 2, axis=0), 2, axis=1)
    return up[: shape[0], : shape[1]]


def _as_array(frame) -> np.ndarray:
    data = frame.data if isinstance(frame, FrameGrid) else np.asarray(frame)
    data = np.asarray(data, np.float64)
    return data[:, :, None] if data.ndim == 2 else data


def estimate_flow(
    a: FrameGrid,
    b: FrameGrid,
    params: EstimatorParams = EstimatorParams(),
    src_frame: int = 0,
    dst_frame: int = 1,
) -> MotionField:
    """Flow on ``a``'s grid pointing to where each pixel is found in ``b``."""
    _check_shape(a.shape, b.shape)
    if a.channels != b.channels:
        raise ValueError("channel count mismatch")
    pa = _pyramid(_as_array(a), params.levels)
    pb = _pyramid(_as_array(b), params.levels)
    u = np.zeros(pa[-1].shape[:2], np.int64)
    v = np.zeros_like(u)
    for lvl in range(len(pa) - 1, -1, -1):
        if lvl < len(pa) - 1:
            u = _upsample_init(u, pa[lvl].shape[:2])
            v = _upsample_init(v, pa[lvl].shape[:2])
        refine = params.subpixel_refine and lvl == 0
        u, v, fu, fv = _match_level(pa[lvl], pb[lvl], u, v, params, refine)
    direction = "forward" if dst_frame >= src_frame else "backward"
    return MotionField(fu, fv, direction, src_frame, dst_frame)


# --------------------------------------------------------------------------
# batched dyads


def _dyad_task(args):
    a, b, params, src, dst = args
    f = estimate_flow(a, b, params, src, dst)
    return np.asarray(f.u), np.asarray(f.v)


def estimate_batched(
    frames: Sequence[FrameGrid],
    params: EstimatorParams = EstimatorParams(),
    parallelism: int = 1,
) -> tuple[list[MotionField], list[MotionField]]:
    """Estimate every forward and backward dyad; results in dyad order.

    Each dyad is an independent pure task, so the output does not depend on
    ``parallelism`` (the worker-process count).
    """
    if len(frames) < 2:
        raise ValueError("need at least two frames")
    for f in frames[1:]:
        _check_shape(frames[0].shape, f.shape)
    fwd_batch, bwd_batch = build_dyads(len(frames))
    pairs = list(fwd_batch.pairs) + list(bwd_batch.pairs)
    tasks = [(frames[s], frames[d], params, s, d) for s, d in pairs]
    if parallelism <= 1:
        results = [_dyad_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(_dyad_task, tasks))
    fields = [
        MotionField(u, v, "forward" if d > s else "backward", s, d)
        for (u, v), (s, d) in zip(results, pairs)
    ]
    n = len(fwd_batch)
    return fields[:n], fields[n:]
