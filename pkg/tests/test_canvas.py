import numpy as np
import pytest

from texweave.canvas import (CanvasSession, CompositingError, SessionError,
                             _stamp_points, build_palette, dissolve,
                             hybridize, interpolate_sparse,
                             session_from_arrays, session_to_arrays)
from texweave.data import synth_texture
from texweave.latent import LatentPair


def texture(family, seed, size=32, **params):
    return synth_texture(family, params, size, seed)


@pytest.fixture()
def session(untrained_bundle):
    bg = texture("blobs", 3)
    return CanvasSession(untrained_bundle, 12, 16, bg, seed=7)


class TestSession:
    def test_create_deterministic(self, untrained_bundle):
        bg = texture("blobs", 3)
        a = CanvasSession(untrained_bundle, 10, 10, bg, seed=5)
        b = CanvasSession(untrained_bundle, 10, 10, bg, seed=5)
        assert np.array_equal(a.field.local, b.field.local)
        assert np.array_equal(a.field.global_, b.field.global_)

    def test_render_shape(self, session):
        img = session.render()
        assert img.shape == (12 * 4, 16 * 4, 3)

    def test_wrong_background_size_rejected(self, untrained_bundle):
        with pytest.raises(SessionError, match="32x32"):
            CanvasSession(untrained_bundle, 8, 8,
                          texture("blobs", 3, size=64))

    def test_pin_alignment_validated(self, session):
        patch = texture("stripes", 5)
        with pytest.raises(SessionError, match="multiple"):
            session.pin_texture(patch, (3, 8))

    def test_pin_out_of_bounds(self, session):
        patch = texture("stripes", 5)
        with pytest.raises(SessionError, match="outside"):
            session.pin_texture(patch, (40, 60))

    def test_pin_writes_latents(self, session, untrained_bundle):
        patch = texture("stripes", 5)
        session.pin_texture(patch, (8, 16))
        pair = untrained_bundle.encode(patch)
        assert np.array_equal(session.field.local[2:10, 4:12], pair.local)
        assert np.allclose(session.field.global_[2:10, 4:12], pair.global_)

    def test_non_overlapping_pins_commute(self, untrained_bundle):
        bg = texture("blobs", 3)
        p1 = texture("stripes", 5)
        p2 = texture("noise-octaves", 6)
        a = CanvasSession(untrained_bundle, 16, 16, bg, seed=7)
        a.pin_texture(p1, (0, 0)).pin_texture(p2, (32, 32))
        b = CanvasSession(untrained_bundle, 16, 16, bg, seed=7)
        b.pin_texture(p2, (32, 32)).pin_texture(p1, (0, 0))
        assert np.array_equal(a.render(), b.render())

    def test_undo_restores_bit_exact(self, session):
        before = session.render()
        hash_before = session.render_hash()
        session.pin_texture(texture("stripes", 5), (8, 16))
        assert not np.array_equal(session.render(), before)
        session.undo()
        assert np.array_equal(session.render(), before)
        assert session.render_hash() == hash_before

    def test_replay_reproduces_live_canvas(self, session,
                                           untrained_bundle):
        session.pin_texture(texture("stripes", 5), (8, 16))
        brush = untrained_bundle.encode(texture("dots", 9))
        session.brush_stroke(brush, [(10.0, 10.0), (30.0, 40.0)],
                             radius_px=8.0, strength=0.8)
        live_local = session.field.local.copy()
        live_global = session.field.global_.copy()
        session.replay()
        assert np.array_equal(session.field.local, live_local)
        assert np.array_equal(session.field.global_, live_global)


class TestBrush:
    def test_full_strength_stamp_replaces_cell(self, untrained_bundle):
        bg = texture("blobs", 3)
        session = CanvasSession(untrained_bundle, 12, 12, bg, seed=1)
        brush_patch = texture("stripes", 5)
        brush = untrained_bundle.encode(brush_patch)
        # single stamp centered on cell (5, 5): pixel (22, 22), cell 5.5
        session.brush_stroke(brush, [(5 * 4 + 2, 5 * 4 + 2)],
                             radius_px=4.0, strength=1.0)
        # stamp center cell carries exactly the tiled brush latent
        tiled = brush.local[np.arange(12) % 8][:, np.arange(12) % 8]
        assert np.allclose(session.field.local[5, 5], tiled[5, 5],
                           atol=1e-5)

    def test_stroke_outside_canvas_rejected(self, session,
                                            untrained_bundle):
        brush = untrained_bundle.encode(texture("dots", 9))
        with pytest.raises(SessionError, match="outside"):
            session.brush_stroke(brush, [(500.0, 500.0)], 8.0, 1.0)

    def test_stamp_spacing_half_radius(self):
        pts = _stamp_points([(0.0, 0.0), (0.0, 10.0)], spacing=2.0)
        xs = [p[1] for p in pts]
        assert xs == pytest.approx([0, 2, 4, 6, 8, 10])

    def test_changed_pixels_localized(self, untrained_bundle):
        bg = texture("blobs", 3)
        session = CanvasSession(untrained_bundle, 16, 16, bg, seed=1)
        before = session.render(composite_pins=False)
        brush = untrained_bundle.encode(texture("stripes", 5))
        session.brush_stroke(brush, [(32.0, 32.0)], radius_px=4.0,
                             strength=1.0)
        after = session.render(composite_pins=False)
        diff = np.abs(after - before).sum(axis=2)
        changed = np.argwhere(diff > 1e-4)
        assert len(changed) > 0
        # stroke at pixel (32, 32): changes confined to the stamped
        # region dilated by the generator receptive field
        dists = np.abs(changed - np.array([32, 32])).max(axis=1)
        assert dists.max() <= 4 + 4 * (1 + 10 + 4)  # kernel + RF margin


class TestSparseInterpolation:
    def test_requires_pins(self, session):
        with pytest.raises(SessionError, match="no pinned"):
            interpolate_sparse(session)

    def test_single_pin_uniform_synthesis(self, untrained_bundle):
        bg = texture("blobs", 3)
        session = CanvasSession(untrained_bundle, 8, 8, bg, seed=1)
        session.pin_texture(texture("stripes", 5), (0, 0))
        img = interpolate_sparse(session, postprocess=False)
        assert img.shape == (32, 32, 3)

    def test_four_corner_bilinear(self, untrained_bundle):
        bg = texture("blobs", 3)
        session = CanvasSession(untrained_bundle, 16, 16, bg, seed=1)
        for pos in ((0, 0), (0, 32), (32, 0), (32, 32)):
            session.pin_texture(texture("stripes", sum(pos) + 1), pos)
        img = interpolate_sparse(session, weight_law="bilinear",
                                 postprocess=False)
        assert img.shape == (64, 64, 3)

    def test_bilinear_needs_four_pins(self, untrained_bundle):
        bg = texture("blobs", 3)
        session = CanvasSession(untrained_bundle, 8, 8, bg, seed=1)
        session.pin_texture(texture("stripes", 5), (0, 0))
        with pytest.raises(SessionError, match="four"):
            interpolate_sparse(session, weight_law="bilinear")


class TestPalette:
    def test_palette_build_and_pick(self, untrained_bundle):
        corners = [texture("stripes", 1), texture("blobs", 2),
                   texture("dots", 3), texture("noise-octaves", 4)]
        pal = build_palette(untrained_bundle, corners, 16, seed=2)
        assert pal.image.shape == (64, 64, 3)
        # corner picks return the exact corner latents
        for k, (u, v) in enumerate([(0, 0), (0, 1), (1, 0), (1, 1)]):
            pair = pal.pick(u, v)
            assert np.allclose(pair.local, pal.corners[k].local, atol=1e-6)
        center = pal.pick(0.5, 0.5)
        expected = sum(c.local for c in pal.corners) / 4.0
        assert np.allclose(center.local, expected, atol=1e-5)

    def test_palette_needs_four_corners(self, untrained_bundle):
        with pytest.raises(SessionError):
            build_palette(untrained_bundle, [texture("stripes", 1)], 16)

    def test_pick_out_of_range(self, untrained_bundle):
        corners = [texture("stripes", k) for k in range(4)]
        pal = build_palette(untrained_bundle, corners, 16)
        with pytest.raises(SessionError):
            pal.pick(1.5, 0.0)


class TestDissolve:
    def test_frame_count_and_shapes(self, untrained_bundle):
        frames = dissolve(untrained_bundle, texture("stripes", 1),
                          texture("blobs", 2), 5, seed=3)
        assert len(frames) == 5
        assert all(f.shape == (96, 96, 3) for f in frames)

    def test_endpoints_are_pure_syntheses(self, untrained_bundle):
        a, b = texture("stripes", 1), texture("blobs", 2)
        c = texture("dots", 9)
        frames = dissolve(untrained_bundle, a, b, 4, seed=3)
        # frame 0 depends only on src2, the last frame only on src1
        assert np.array_equal(frames[0],
                              dissolve(untrained_bundle, c, b, 4, seed=3)[0])
        assert np.array_equal(frames[-1],
                              dissolve(untrained_bundle, a, c, 4,
                                       seed=3)[-1])
        assert not np.array_equal(frames[0], frames[-1])

    def test_two_frames_minimum(self, untrained_bundle):
        with pytest.raises(SessionError):
            dissolve(untrained_bundle, texture("stripes", 1),
                     texture("blobs", 2), 1)

    def test_latents_affine_in_frame_index(self, untrained_bundle):
        # with a fixed seed, frame k's latent is a convex combination:
        # check the decoded midpoint differs from endpoint average but
        # adjacent-frame latent deltas are constant via re-deriving
        from texweave.canvas import make_shuffle_plan
        from texweave.latent import apply_shuffle, corner_override, tile

        a, b = texture("stripes", 1), texture("blobs", 2)
        za = untrained_bundle.encode(a)
        zb = untrained_bundle.encode(b)
        plan_a = make_shuffle_plan(24, 24, 3, local_extent=8)
        plan_b = make_shuffle_plan(24, 24, 4, local_extent=8)
        loc_a = corner_override(apply_shuffle(plan_a, tile(za.local, 3)),
                                za.local)
        loc_b = corner_override(apply_shuffle(plan_b, tile(zb.local, 3)),
                                zb.local)
        n = 5
        deltas = []
        for k in range(n - 1):
            a0 = k / (n - 1)
            a1 = (k + 1) / (n - 1)
            l0 = a0 * loc_a + (1 - a0) * loc_b
            l1 = a1 * loc_a + (1 - a1) * loc_b
            deltas.append(np.abs(l1 - l0).max())
        endpoint_delta = np.abs(loc_a - loc_b).max()
        for d in deltas:
            assert d <= endpoint_delta / (n - 1) + 1e-6


class TestHybridize:
    def test_empty_hole_returns_input(self, untrained_bundle):
        a = texture("stripes", 1, size=64)
        b = texture("blobs", 2, size=64)
        hole = np.zeros((64, 64), bool)
        out = hybridize(untrained_bundle, a, b, hole)
        assert np.array_equal(out, a)

    def test_fills_hole_between_two_sides(self, untrained_bundle):
        a = np.tile(texture("stripes", 1, size=64), (2, 2, 1))
        b = np.tile(texture("blobs", 2, size=64), (2, 2, 1))
        hole = np.zeros((128, 128), bool)
        hole[:, 48:80] = True
        out = hybridize(untrained_bundle, a, b, hole, seed=5,
                        postprocess=False)
        # sides keep their own sources
        assert np.array_equal(out[:, :48], a[:, :48])
        assert np.array_equal(out[:, 80:], b[:, 80:])
        assert not np.array_equal(out[:, 48:80], a[:, 48:80])

    def test_hole_without_two_sides_rejected(self, untrained_bundle):
        a = texture("stripes", 1, size=64)
        b = texture("blobs", 2, size=64)
        hole = np.zeros((64, 64), bool)
        hole[:32] = True  # splits nothing: one remaining component
        with pytest.raises(CompositingError, match="two source regions"):
            hybridize(untrained_bundle, a, b, hole)

    def test_weight_near_boundary_favors_that_side(self):
        from texweave.latent import inverse_distance_weights

        wf = inverse_distance_weights(8, 8, [(0, 0), (7, 7)])
        assert wf.weights[0][0, 1] > 0.9
        assert wf.weights[1][7, 6] > 0.9


class TestPersistence:
    def test_session_round_trip(self, session, untrained_bundle):
        session.pin_texture(texture("stripes", 5), (8, 16))
        brush = untrained_bundle.encode(texture("dots", 9))
        session.brush_stroke(brush, [(10.0, 10.0)], 8.0, 0.7,
                             stroke_id="s-1")
        meta, arrays = session_to_arrays(session)
        clone = session_from_arrays(untrained_bundle, meta, arrays)
        assert clone.session_id == session.session_id
        assert np.array_equal(clone.field.local, session.field.local)
        assert clone.render_hash() == session.render_hash()
        assert clone.seq == session.seq
