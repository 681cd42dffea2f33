import numpy as np
import pytest

from texweave.classifiers import (GateNotMet, GatedClassifier,
                                  make_repetition_examples,
                                  make_seam_examples,
                                  train_binary_classifier,
                                  train_family_classifier)
from texweave.data import synth_texture
from texweave.metrics import (ccd, ccd_from_features, cgd, cis, cswd,
                              format_table, gram_distance, horizontal_alpha,
                              naive_blend_canvas, radar_data,
                              sliced_wasserstein, spd, task_from_canvas)


def texture(family, seed, size=64, **params):
    return synth_texture(family, params, size, seed)


@pytest.fixture(scope="module")
def source_images():
    imgs = [texture("stripes", s) for s in range(4)]
    imgs += [texture("blobs", s) for s in range(4, 8)]
    return imgs


class TestHorizontalGeometry:
    def test_alpha_ramp_midpoint_half(self):
        for width, end in ((64, 8), (32, 4), (256, 32)):
            alpha = horizontal_alpha(width, end)
            assert alpha[0] == 1.0 and alpha[-1] == 0.0
            assert alpha[end - 1] == 1.0
            assert alpha[width - end] == 0.0
            mid = 0.5 * (alpha[width // 2 - 1] + alpha[width // 2])
            assert mid == pytest.approx(0.5, abs=1e-7)

    def test_naive_canvas_shape_and_sides(self):
        l, r = texture("stripes", 1, size=32), texture("blobs", 2, size=32)
        canvas = naive_blend_canvas(l, r, aspect=8)
        assert canvas.shape == (32, 256, 3)
        assert np.array_equal(canvas[:, :32], l)
        assert np.array_equal(canvas[:, -32:], r)

    def test_naive_spd_is_zero(self):
        # the copy baseline reproduces the side textures exactly
        l, r = texture("stripes", 1, size=32), texture("blobs", 2, size=32)
        task = task_from_canvas(l, r, naive_blend_canvas(l, r))
        assert spd(task) == pytest.approx(0.0, abs=1e-9)

    def test_degenerate_pair_flagged(self):
        l = texture("stripes", 1, size=32)
        task = task_from_canvas(l, l.copy(),
                                naive_blend_canvas(l, l.copy()))
        assert task.degenerate


class TestCGD:
    def test_center_equal_to_one_source_gives_one(self):
        l, r = texture("stripes", 1, size=32), texture("blobs", 2, size=32)
        canvas = naive_blend_canvas(l, r)
        p = 32
        off = (canvas.shape[1] - p) // 2
        canvas[:, off:off + p] = l  # plant the left texture at center
        task = task_from_canvas(l, r, canvas)
        assert cgd(task) == pytest.approx(1.0, rel=1e-5)

    def test_degenerate_guard(self):
        l = texture("stripes", 1, size=32)
        task = task_from_canvas(l, l.copy(), naive_blend_canvas(l, l.copy()))
        assert cgd(task) is None

    def test_gram_distance_symmetric(self):
        a, b = texture("stripes", 3, size=32), texture("dots", 4, size=32)
        assert gram_distance(a, b) == pytest.approx(gram_distance(b, a))


class TestCCD:
    def test_zero_at_feature_midpoint(self, rng):
        g_l = rng.standard_normal(50)
        g_r = rng.standard_normal(50)
        mid = (g_l + g_r) / 2.0
        assert ccd_from_features(g_l, mid, g_r) == pytest.approx(0.0,
                                                                 abs=1e-12)

    def test_two_at_antiparallel(self, rng):
        g_l = rng.standard_normal(50)
        step = rng.standard_normal(50)
        # walking away from the segment then back: v2 = -v1
        assert ccd_from_features(g_l, g_l + step, g_l) == \
            pytest.approx(2.0, abs=1e-12)

    def test_degenerate_zero_vector(self, rng):
        g = rng.standard_normal(50)
        assert ccd_from_features(g, g, g + 1.0) is None

    def test_image_level_range(self):
        l, r = texture("stripes", 1, size=32), texture("blobs", 2, size=32)
        task = task_from_canvas(l, r, naive_blend_canvas(l, r))
        val = ccd(task)
        assert 0.0 <= val <= 2.0


class TestClassifierGates:
    def test_seam_classifier_meets_gate(self, seam_classifier,
                                        desk_sources):
        assert seam_classifier.val_accuracy > 0.95
        images, labels = desk_sources
        pos, neg = make_seam_examples(images, 32, 24,
                                      np.random.default_rng(99),
                                      labels=labels)
        assert seam_classifier.score(list(pos)).mean() > 0.8
        assert seam_classifier.score(list(neg)).mean() < 0.2

    def test_repetition_classifier_meets_gate(self, repetition_classifier,
                                              desk_sources):
        assert repetition_classifier.val_accuracy > 0.95
        images, _ = desk_sources
        pos, neg = make_repetition_examples(images, 32, 24,
                                            np.random.default_rng(77))
        assert repetition_classifier.score(list(pos)).mean() > 0.8
        assert repetition_classifier.score(list(neg)).mean() < 0.2

    def test_untrusted_classifier_refuses_to_score(self):
        from texweave.classifiers import TextureClassifier

        clf = GatedClassifier(TextureClassifier((32, 32)), 0.5, 0.95, "seam")
        with pytest.raises(GateNotMet):
            clf.require_gate()

    def test_family_classifier(self, family_classifier, desk_sources):
        from texweave.classifiers import random_crop

        assert family_classifier.val_accuracy > 0.95
        images, labels = desk_sources
        rng = np.random.default_rng(5)
        for family in family_classifier.class_names:
            fam_imgs = [im for im, l in zip(images, labels) if l == family]
            crops = [random_crop(fam_imgs[k % len(fam_imgs)], 32, 32, rng)
                     for k in range(8)]
            probs = family_classifier.predict_proba(crops)
            idx = family_classifier.class_names.index(family)
            assert probs[:, idx].mean() > 0.8


class FakeClassifier:
    def __init__(self, prob_rows):
        self.rows = np.asarray(prob_rows, np.float64)

    def predict_proba(self, images):
        reps = int(np.ceil(len(images) / len(self.rows)))
        return np.tile(self.rows, (reps, 1))[:len(images)]


class TestCIS:
    def test_constant_classifier_gives_one(self, rng):
        imgs = [rng.uniform(-1, 1, (8, 8, 3)) for _ in range(6)]
        clf = FakeClassifier([[0.25, 0.25, 0.5]])
        assert cis(imgs, clf) == pytest.approx(1.0)

    def test_confident_uniform_gives_class_count(self, rng):
        imgs = [rng.uniform(-1, 1, (8, 8, 3)) for _ in range(4)]
        clf = FakeClassifier(np.eye(4))
        assert cis(imgs, clf) == pytest.approx(4.0, rel=1e-6)

    def test_subset_of_identical_distribution_invariant(self, rng):
        rows = [[0.7, 0.2, 0.1]]
        clf = FakeClassifier(rows)
        a = [rng.uniform(-1, 1, (8, 8, 3)) for _ in range(8)]
        assert cis(a, clf) == pytest.approx(cis(a[:3], clf))


class TestCSWD:
    def test_identical_sets_zero(self, rng):
        imgs = [rng.uniform(-1, 1, (32, 32, 3)).astype(np.float32)
                for _ in range(3)]
        assert cswd(imgs, [i.copy() for i in imgs], seed=1) == 0.0

    def test_symmetric(self, rng):
        a = [rng.uniform(-1, 1, (32, 32, 3)).astype(np.float32)
             for _ in range(3)]
        b = [rng.uniform(-1, 1, (32, 32, 3)).astype(np.float32)
             for _ in range(3)]
        assert cswd(a, b, seed=5) == pytest.approx(cswd(b, a, seed=5))

    def test_nonnegative(self, rng):
        a = [texture("stripes", 1, size=32)]
        b = [texture("blobs", 2, size=32)]
        assert cswd(a, b, seed=3) >= 0.0

    def test_shifted_descriptor_sets_monotone(self, rng):
        # synthetic descriptor sets: a constant offset moves every
        # projection by ~|c| on average, so the distance grows with c
        base = rng.standard_normal((256, 147))
        dists = []
        for c in (0.1, 0.2, 0.4):
            shifted = base + c
            d = sliced_wasserstein(base, shifted, 64,
                                   np.random.default_rng(0))
            dists.append(d)
        assert dists[0] < dists[1] < dists[2]
        # expectation per projection is |c| * E|<1, u>| for unit u
        assert dists[2] == pytest.approx(
            2 * dists[1], rel=0.05) or dists[2] > dists[1]


class TestReportShape:
    def test_table_column_order(self):
        from texweave.metrics import MetricsReport

        rows = {"ours": MetricsReport(values={m: 0.5 for m in
                                              ("spd", "cgd", "ccd", "css",
                                               "crs", "cis", "cswd")})}
        table = format_table(rows)
        header = table.splitlines()[0]
        cols = header.split()
        assert cols[1:] == ["SPD", "CGD", "CCD", "CSS", "CRS", "CIS",
                            "CSWD"]

    def test_radar_normalized_and_inverted(self):
        from texweave.metrics import MetricsReport

        vals_a = {"spd": 0.0, "cgd": 1.0, "ccd": 0.0, "css": 0.0,
                  "crs": 0.0, "cis": 4.0, "cswd": 1.0}
        vals_b = {"spd": 1.0, "cgd": 2.0, "ccd": 2.0, "css": 1.0,
                  "crs": 1.0, "cis": 1.0, "cswd": 3.0}
        rows = {"a": MetricsReport(values=vals_a),
                "b": MetricsReport(values=vals_b)}
        radar = radar_data(rows)
        # lower-better metrics invert: the better method gets 1.0
        assert radar["a"]["spd"] == 1.0 and radar["b"]["spd"] == 0.0
        # higher-better CIS does not invert
        assert radar["a"]["cis"] == 1.0 and radar["b"]["cis"] == 0.0
