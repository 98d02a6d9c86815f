import numpy as np
import pytest

from eulerflow.grid import FrameGrid, MotionField, warp_backward
from eulerflow.motion import (
    Hint,
    MotionSequence,
    TrajectorySet,
    autoregressive_chain,
    densify_hints,
    eulerian_to_lagrangian,
    integrate_points,
    noisy_fields,
)
from eulerflow.noise import NoiseModel
from eulerflow.synth import rotation_field


def steps(fields):
    return MotionSequence("eulerian", [f.with_frames(k, k + 1) for k, f in enumerate(fields)])


def textured(w, h, seed=0):
    return FrameGrid(np.random.default_rng(seed).random((h, w)))


def test_sequence_frame_invariants():
    with pytest.raises(ValueError):
        MotionSequence("eulerian", [MotionField.zeros(4, 4, src_frame=0, dst_frame=2)])
    with pytest.raises(ValueError):
        MotionSequence("lagrangian", [MotionField.zeros(4, 4, src_frame=1, dst_frame=2)])
    with pytest.raises(ValueError):
        MotionSequence("eulerian", [])
    assert steps([MotionField.zeros(4, 4)] * 3).horizon == 4


def test_single_step_is_identity():
    f = MotionField(np.random.default_rng(0).normal(size=(5, 5)), np.ones((5, 5)))
    lag = eulerian_to_lagrangian(steps([f]))
    assert lag.mode == "lagrangian" and lag.fields[0] == f


def test_translations_accumulate():
    lag = eulerian_to_lagrangian(steps([MotionField.uniform(8, 8, 0.5, -0.25)] * 6))
    assert np.all(lag.fields[-1].u == 3.0) and np.all(lag.fields[-1].v == -1.5)
    assert (lag.fields[-1].src_frame, lag.fields[-1].dst_frame) == (0, 6)


def test_wrong_mode_rejected():
    lag = eulerian_to_lagrangian(steps([MotionField.zeros(4, 4)]))
    with pytest.raises(ValueError):
        eulerian_to_lagrangian(lag)


def test_ten_step_rotation():
    omega = 0.02
    lag = eulerian_to_lagrangian(steps([rotation_field(40, 40, omega)] * 10))
    truth = rotation_field(40, 40, omega, 10)
    err = np.hypot(lag.fields[-1].u - truth.u, lag.fields[-1].v - truth.v)[8:-8, 8:-8]
    assert err.max() < 0.2


def test_composed_matches_euler_integration():
    rng = np.random.default_rng(1)
    seq = steps([MotionField(rng.uniform(-0.6, 0.6, (12, 12)), rng.uniform(-0.6, 0.6, (12, 12)))
                 for _ in range(4)])
    pts = np.array([[5.0, 5.0], [6.0, 4.0], [4.0, 7.0]])
    euler = integrate_points(pts, seq)
    lag = integrate_points(pts, eulerian_to_lagrangian(seq))
    assert np.allclose(euler, lag, atol=1e-5)


def test_compose_then_warp_equals_iterated_warp():
    img = textured(16, 12, 2)
    f = MotionField.uniform(16, 12, 1.0, 0.0)
    lag = eulerian_to_lagrangian(steps([f, f, f]))
    once, _ = warp_backward(img, lag.fields[-1])
    it = img
    for _ in range(3):
        it, _ = warp_backward(it, f)
    assert np.array_equal(once.data[:, :13], it.data[:, :13])


def test_densify_one_and_equal_hints():
    one = densify_hints([Hint((3.0, 4.0), (1.5, -2.0))], 10, 8, bandwidth=2.0)
    assert np.allclose(one.u, 1.5) and np.allclose(one.v, -2.0)
    two = densify_hints([Hint((0.0, 0.0), (0.5, 0.5)), Hint((9.0, 7.0), (0.5, 0.5))], 10, 8)
    assert np.allclose(two.u, 0.5) and np.allclose(two.v, 0.5)


def test_densify_symmetric_cancel():
    f = densify_hints([Hint((0.0, 0.0), (1.0, 0.0)), Hint((10.0, 0.0), (-1.0, 0.0))],
                      11, 3, bandwidth=2.0)
    assert abs(f.u[0, 5]) < 1e-7 and f.v[0, 5] == 0


def test_densify_is_convex():
    rng = np.random.default_rng(3)
    hints = [Hint(tuple(rng.uniform(0, 19, 2)), tuple(rng.uniform(-3, 3, 2))) for _ in range(5)]
    f = densify_hints(hints, 20, 20, bandwidth=1.0)
    vel = np.array([h.velocity for h in hints])
    assert f.u.min() >= vel[:, 0].min() - 1e-6 and f.u.max() <= vel[:, 0].max() + 1e-6
    assert f.v.min() >= vel[:, 1].min() - 1e-6 and f.v.max() <= vel[:, 1].max() + 1e-6
    assert np.all(np.isfinite(f.u))


def test_densify_inactive_and_bad_bandwidth():
    hints = TrajectorySet([Hint((1.0, 1.0), (2.0, 0.0), span=(3, 5))], horizon=10)
    assert np.all(densify_hints(hints, 6, 6, frame=0).u == 0)
    assert np.all(densify_hints(hints, 6, 6, frame=4).u == 2.0)
    with pytest.raises(ValueError):
        densify_hints(hints, 6, 6, bandwidth=0)
    with pytest.raises(ValueError):
        densify_hints([Hint((9.0, 1.0), (0.0, 0.0))], 6, 6)
    with pytest.raises(ValueError):
        Hint((0.0, 0.0), (0.0, 0.0), span=(2, 2))


def test_chain_zero_flow_zero_noise():
    z0 = textured(9, 7)
    seq = steps([MotionField.zeros(9, 7)] * 4)
    for mode in ("eulerian_step", "lagrangian_anchor"):
        out = autoregressive_chain(z0, seq, None, mode)
        assert len(out) == 5 and all(f == z0 for f in out)


def test_chain_translates_content_forward():
    z0 = textured(12, 6, 4)
    seq = steps([MotionField.uniform(12, 6, 1.0, 0.0)] * 3)
    out = autoregressive_chain(z0, seq, None, "lagrangian_anchor")
    assert np.array_equal(out[3].data[:, 3:], z0.data[:, :-3])


def test_pixel_noise_random_walk():
    z0 = FrameGrid(np.full((40, 40), 0.5))
    sigma = 0.01
    out = autoregressive_chain(z0, steps([MotionField.zeros(40, 40)] * 16),
                               NoiseModel(seed=5), "eulerian_step", pixel_sigma=sigma)
    for t in (1, 4, 16):
        rms = np.sqrt(np.mean((out[t].data.astype(float) - 0.5) ** 2))
        assert rms == pytest.approx(sigma * np.sqrt(t), rel=0.1)


def test_chain_is_deterministic():
    z0 = textured(10, 10, 6)
    seq = steps([MotionField.uniform(10, 10, 0.4, 0.1)] * 5)
    noise = NoiseModel(sigma=0.2, variance_law="linear_in_t", seed=9)
    a = autoregressive_chain(z0, seq, noise, "eulerian_step", pixel_sigma=0.02)
    b = autoregressive_chain(z0, seq, noise, "eulerian_step", pixel_sigma=0.02)
    assert all(x == y for x, y in zip(a, b))


def test_noisy_fields_share_draws_across_modes():
    seq = steps([MotionField.uniform(6, 6, 1.0, 0.0)] * 5)
    noise = NoiseModel(sigma=0.1, variance_law="linear_in_t", seed=2)
    eul = noisy_fields(seq, noise, "eulerian_step")
    lag = noisy_fields(seq, noise, "lagrangian_anchor")
    for k in range(5):
        g_e = eul.fields[k].u[0, 0] - 1.0
        g_l = lag.fields[k].u[0, 0] / (k + 1) - 1.0
        assert g_l == pytest.approx(g_e * np.sqrt(k + 1), rel=1e-5)
