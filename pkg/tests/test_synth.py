import numpy as np
import pytest

from eulerflow.consistency import cycle_energy, occlusion_mask
from eulerflow.grid import MotionField, warp_backward
from eulerflow.synth import (
    SHIPPED_SCENES,
    SceneSpec,
    Sprite,
    crossing_sprites,
    render,
    rotating_disk,
    static_scene,
    translating_rectangle,
    valid_area_curve,
)


def test_scene_validation():
    with pytest.raises(ValueError):
        SceneSpec(sprites=(Sprite(depth=1), Sprite(depth=1)))
    with pytest.raises(ValueError):
        Sprite(shape="triangle")
    with pytest.raises(ValueError):
        render(SceneSpec(32, 32, sprites=(Sprite(center=(2.0, 2.0), size=(10, 10)),)), 3)
    with pytest.raises(ValueError):
        render(static_scene(), 1)


def test_render_is_deterministic():
    a, b = render(crossing_sprites(), 3), render(crossing_sprites(), 3)
    assert all(x == y for x, y in zip(a.frames, b.frames))


def test_bundle_lengths():
    b = render(translating_rectangle(), 5)
    assert b.horizon == 5
    assert len(b.fwd_flows) == len(b.bwd_flows) == len(b.occlusion) == 4
    assert len(b.cum_flows) == len(b.reference_valid) == 5


def test_static_scene():
    b = render(static_scene(), 4)
    assert all(not f.u.any() and not f.v.any() for f in b.fwd_flows + b.bwd_flows)
    assert all(m.valid_count == m.bits.size for m in b.occlusion)
    assert valid_area_curve(b, "reference") == [1.0] * 4
    assert valid_area_curve(b, "adjacent") == [1.0] * 4


def test_translating_band_area():
    spec = translating_rectangle()
    b = render(spec, 6)
    w, h = spec.width, spec.height
    rect_h = spec.sprites[0].size[1]
    for t in range(5):
        occluded = 1.0 - b.valid_area[t]
        assert occluded == pytest.approx(2 * rect_h / (w * h))


def test_reference_curve_decreases_until_exit_then_settles():
    spec = translating_rectangle(64, 32, velocity=(4.0, 0.0), size=(8, 10), left=4)
    b = render(spec, 20)
    ref = valid_area_curve(b, "reference")
    adj = valid_area_curve(b, "adjacent")
    steps = np.diff(ref)
    assert np.all(steps <= 0)
    # sprite right edge leaves the canvas at t = (64 - 12) / 4 = 13; once the
    # sprite and everything it covered are gone the curve stops changing
    assert np.all(steps[:12] < 0)
    assert np.all(steps[-4:] == 0)
    assert all(a >= r for a, r in zip(adj, ref))
    assert np.ptp(adj[1:12]) == 0


def test_rotating_disk_reference_monotone():
    b = render(rotating_disk(), 30)
    ref = valid_area_curve(b, "reference")
    assert np.all(np.diff(ref) <= 0)
    # a disk spinning in place covers and uncovers nothing
    assert ref[-1] == 1.0


@pytest.mark.parametrize("name", sorted(SHIPPED_SCENES))
def test_self_consistency_and_cycle_exactness(name):
    b = render(SHIPPED_SCENES[name](), 6)
    for t in range(5):
        f, bw = b.fwd_flows[t], b.bwd_flows[t]
        warped, _ = warp_backward(b.frames[t + 1], f)
        keep = b.occlusion[t].bits
        diff = np.abs(warped.data - b.frames[t].data).sum(-1)
        assert diff[keep].mean() < 0.02
        e = cycle_energy(f, bw).energy
        assert e[b.strict_valid[t].bits].max() < 1e-6


@pytest.mark.parametrize("name", ["translating_rectangle", "crossing_sprites"])
def test_energy_flags_most_of_the_occluded_set(name):
    b = render(SHIPPED_SCENES[name](), 6)
    hit = total = 0
    for t in range(5):
        occ = ~b.occlusion[t].bits
        flagged = ~occlusion_mask(b.fwd_flows[t], b.bwd_flows[t]).bits
        hit += np.count_nonzero(flagged & occ)
        total += np.count_nonzero(occ)
    assert hit >= 0.9 * total


def test_cumulative_flow_matches_motion():
    spec = translating_rectangle(48, 32, velocity=(1.5, 0.5), size=(8, 8), left=6)
    b = render(spec, 5)
    s = spec.sprites[0]
    X, Y = np.meshgrid(np.arange(48.0), np.arange(32.0))
    on = s.contains(X, Y, 0)
    assert np.allclose(b.cum_flows[4].u[on], 6.0) and np.allclose(b.cum_flows[4].v[on], 2.0)
    assert not b.cum_flows[4].u[~on].any()


def test_unknown_anchor():
    with pytest.raises(ValueError):
        valid_area_curve(render(static_scene(), 2), "sideways")
