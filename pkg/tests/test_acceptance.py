"""Acceptance checks; each test prints one PASS/FAIL line for its criterion."""

import os
import time

import numpy as np
import pytest

from eulerflow.consistency import BgcParams, cycle_energy, geometric_loss, occlusion_mask
from eulerflow.estimator import estimate_batched
from eulerflow.grid import FrameGrid, MotionField, ValidityMask
from eulerflow.harness import (
    PROOF_CONSTANT,
    SWEEP_ALPHA1,
    SWEEP_ALPHA2,
    drift_experiment,
    linear_slope,
    loglog_slope,
    sensitivity_sweep,
    sequence_iou,
    verify_theorem1,
    verify_theorem2,
)
from eulerflow.io import decode_flo, decode_pnm, encode_flo, encode_pnm
from eulerflow.noise import NoiseModel
from eulerflow.synth import (
    SHIPPED_SCENES,
    SceneSpec,
    Sprite,
    default_scene,
    render,
    translating_rectangle,
    valid_area_curve,
)

from test_consistency import reference_loss


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, detail
    return emit


def test_criterion_01_adjacent_error_uniformly_bounded(report):
    start = time.perf_counter()
    s = verify_theorem2(sigma=1.0, T=256, trials=1000, seed=0)
    elapsed = time.perf_counter() - start
    peak, slope = float(s.mean_epe.max()), linear_slope(s.t, s.mean_epe)
    ok = peak <= 1.10 and abs(slope) <= 0.02 and elapsed < 30
    report(1, ok, f"max {peak:.4f} px, slope {slope:.2e} px/step, {elapsed:.2f} s")


def test_criterion_02_anchored_error_grows_as_sqrt_t(report):
    start = time.perf_counter()
    s = verify_theorem1(sigma=1.0, T=256, trials=1000, seed=0)
    elapsed = time.perf_counter() - start
    slope = loglog_slope(s.t, s.mean_epe)
    # kurtosis is undefined at t = 0 where every error is zero
    t = s.t[1:]
    lower = 1.0 * np.sqrt(t) * PROOF_CONSTANT / s.kappa[1:]
    bound_ok = bool(np.all(s.mean_epe[1:] >= lower)) and s.bound_holds()
    ok = 0.4 <= slope <= 0.6 and bound_ok and elapsed < 30
    report(2, ok, f"log-log slope {slope:.3f}, lower bound at every t: {bound_ok}, {elapsed:.2f} s")


def translation_scenes():
    rng = np.random.default_rng(3)
    scenes = [translating_rectangle(), translating_rectangle(48, 40, (-1.5, 0.5), (10, 12), 20)]
    for k in range(6):
        w, h = int(rng.integers(40, 72)), int(rng.integers(40, 72))
        sprites = []
        for d in range(int(rng.integers(1, 3))):
            size = tuple(float(s) for s in rng.integers(6, 12, 2))
            centre = (float(rng.uniform(size[0], w - size[0])), float(rng.uniform(size[1], h - size[1])))
            vel = tuple(float(v) for v in rng.uniform(-2.5, 2.5, 2))
            shape = "disk" if d else "rectangle"
            sprites.append(Sprite(shape, centre, size, vel, depth=d, texture_seed=k + d))
        scenes.append(SceneSpec(w, h, background_seed=k, sprites=tuple(sprites)))
    return scenes


def test_criterion_03_cycle_exactness_on_translations(report):
    worst, all_on = 0.0, True
    for spec in translation_scenes():
        b = render(spec, 6)
        for t in range(5):
            keep = b.strict_valid[t].bits
            e = cycle_energy(b.fwd_flows[t], b.bwd_flows[t]).energy
            worst = max(worst, float(e[keep].max()))
            all_on &= bool(occlusion_mask(b.fwd_flows[t], b.bwd_flows[t]).bits[keep].all())
    report(3, worst < 1e-6 and all_on, f"max energy {worst:.2e}, mask all ones on valid set: {all_on}")


def test_criterion_04_mask_fidelity_with_estimated_flows(report):
    start = time.perf_counter()
    b = render(translating_rectangle(), 30)
    fwd, bwd = estimate_batched(b.frames)
    iou = sequence_iou(fwd, bwd, b.occlusion)
    elapsed = time.perf_counter() - start
    report(4, iou >= 0.9 and elapsed < 60, f"IoU {iou:.4f}, {elapsed:.1f} s")


def test_criterion_05_loss_oracle_and_masked_invariance(report):
    rng = np.random.default_rng(5)
    worst, invariant = 0.0, True
    for _ in range(100):
        c = int(rng.integers(1, 4))
        a, z = rng.random((4, 4, c)), rng.random((4, 4, c))
        u, v = rng.uniform(-2, 2, (4, 4)), rng.uniform(-2, 2, (4, 4))
        bits = rng.random((4, 4)) < 0.6
        f, m = MotionField(u, v), ValidityMask(bits)
        eps = BgcParams().epsilon
        # compare against the float32-rounded inputs the grids actually store
        got = geometric_loss(FrameGrid(a), FrameGrid(z), f, m)
        want = reference_loss(FrameGrid(a).data.astype(float), FrameGrid(z).data.astype(float),
                              f.u.astype(float), f.v.astype(float), bits, eps)
        worst = max(worst, abs(got - want))
        z2 = z.copy()
        z2[~bits] = rng.random((int((~bits).sum()), c))
        invariant &= geometric_loss(FrameGrid(a), FrameGrid(z2), f, m) == got
    report(5, worst <= 1e-12 and invariant, f"max deviation {worst:.1e}, masked-out invariance: {invariant}")


def test_criterion_06_parallel_determinism(report):
    b = render(translating_rectangle(128, 128, size=(24, 24)), 24)
    runs = {}
    times = {}
    for workers in (1, 2, 8):
        start = time.perf_counter()
        fwd, bwd = estimate_batched(b.frames, parallelism=workers)
        times[workers] = time.perf_counter() - start
        runs[workers] = [encode_flo(f) for f in fwd + bwd]
    same = runs[1] == runs[2] == runs[8]
    cores = os.cpu_count() or 1
    if cores < 8:
        report(6, same, f"byte-identical for 1/2/8 workers: {same}; speedup not measurable on {cores} core(s)")
        pytest.skip(f"speedup needs >= 8 cores, host has {cores}")
    ratio = times[8] / times[1]
    report(6, same and ratio <= 0.5, f"byte-identical: {same}, 8-worker time ratio {ratio:.2f}")


def test_criterion_07_eulerian_chain_drifts_less(report):
    spec = SceneSpec(96, 64, background_seed=7,
                     sprites=(Sprite("rectangle", (15.5, 31.5), (16, 16), (0.6, 0.0), texture_seed=4),))
    start = time.perf_counter()
    r = drift_experiment(spec, NoiseModel(sigma=0.05, variance_law="linear_in_t"), T=100, seeds=50)
    elapsed = time.perf_counter() - start
    win = r.win_fraction if r.win_fraction is not None else 0.0
    report(7, win >= 0.8 and elapsed < 300, f"Eulerian wins on {win:.0%} of 50 seeds, {elapsed:.1f} s")


def test_criterion_08_reference_valid_area_decays(report):
    bad = []
    for name, make in sorted(SHIPPED_SCENES.items()):
        b = render(make(), 30)
        ref, adj = valid_area_curve(b, "reference"), valid_area_curve(b, "adjacent")
        if np.any(np.diff(ref) > 0) or any(r > a for r, a in zip(ref, adj)):
            bad.append(name)
    report(8, not bad, f"violations: {bad or 'none'} over {len(SHIPPED_SCENES)} scenes")


def test_criterion_09_format_round_trips(report):
    rng = np.random.default_rng(9)
    flo_ok = pnm_ok = True
    for k in range(1000):
        h, w = (int(n) for n in rng.integers(1, 10, 2))
        f = MotionField(rng.normal(0, 20, (h, w)), rng.normal(0, 20, (h, w)))
        g = decode_flo(encode_flo(f))
        flo_ok &= f.u.tobytes() == g.u.tobytes() and f.v.tobytes() == g.v.tobytes()
        img = FrameGrid(rng.random((h, w, 1 if k % 2 else 3)))
        back = decode_pnm(encode_pnm(img))
        err = np.abs(back.data.astype(float) - img.data.astype(float)).max()
        pnm_ok &= back.shape == img.shape and err <= 1 / 255
    report(9, flo_ok and pnm_ok, f"flo bitwise: {flo_ok}, PNM within 1/255: {pnm_ok}")


def test_criterion_10_sweep_peaks_near_default(report):
    rows = sensitivity_sweep(spec=default_scene(), T=30)
    grid = [(r["alpha1"], r["alpha2"]) for r in rows]
    assert grid == [(a, b) for a in SWEEP_ALPHA1 for b in SWEEP_ALPHA2]
    best = max(rows, key=lambda r: r["iou"])
    i, j = SWEEP_ALPHA1.index(best["alpha1"]), SWEEP_ALPHA2.index(best["alpha2"])
    ci, cj = SWEEP_ALPHA1.index(0.01), SWEEP_ALPHA2.index(0.5)
    # adjacency is the 4-neighbourhood of grid cells
    ok = abs(i - ci) + abs(j - cj) <= 1
    centre = next(r["iou"] for r in rows if (r["alpha1"], r["alpha2"]) == (0.01, 0.5))
    report(10, ok, f"argmax at ({best['alpha1']}, {best['alpha2']}) IoU {best['iou']:.4f}; "
                   f"(0.01, 0.5) IoU {centre:.4f}")
