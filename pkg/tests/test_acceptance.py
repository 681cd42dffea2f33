"""Acceptance suite: one test per sign-off criterion.

Each test prints a PASS line with its runtime; the desk-scale training
criteria share one cached 2000-step checkpoint (first run trains it,
later runs reuse it).
"""

import itertools
import os
import time

import numpy as np
import pytest
import torch

from conftest import CACHE_DIR

REPORT_PATH = os.path.join(CACHE_DIR, "acceptance_report.txt")


def _report(name, t0, limit=None, detail=""):
    dt = time.time() - t0
    line = f"ACCEPTANCE PASS {name} ({dt:.1f}s{' ' + detail if detail else ''})"
    print(line)
    os.makedirs(CACHE_DIR, exist_ok=True)
    with open(REPORT_PATH, "a") as f:
        f.write(line + "\n")
    if limit is not None:
        assert dt < limit, f"{name} exceeded its {limit}s budget ({dt:.0f}s)"


# ---------------------------------------------------------------------------
# Latent-ops property suite: >= 1000 random seeds/extents, < 1 min


def test_latent_ops_property_suite():
    from texweave.latent import (apply_shuffle, blend_global, blend_local,
                                 corner_override, make_shuffle_plan,
                                 palette_weights, tile)

    t0 = time.time()
    rng = np.random.default_rng(0)
    extents = [(4, 4), (6, 6), (8, 8), (4, 8), (8, 16), (12, 12)]
    for trial in range(1000):
        h, w = extents[trial % len(extents)]
        seed = int(rng.integers(0, 2**62))
        x = rng.standard_normal((h, w, 3)).astype(np.float32)

        plan = make_shuffle_plan(h, w, seed, scales=(1, 2))
        out = apply_shuffle(plan, x)
        assert np.array_equal(np.sort(out.reshape(-1, 3), axis=0),
                              np.sort(x.reshape(-1, 3), axis=0))

        if h % 3 == 0 and w % 3 == 0:
            orig = rng.standard_normal((h // 3, w // 3, 3)) \
                .astype(np.float32)
            shuf = rng.standard_normal((h, w, 3)).astype(np.float32)
            fixed = corner_override(shuf, orig)
            hh, ww = h // 3, w // 3
            for r0 in (0, h - hh):
                for c0 in (0, w - ww):
                    assert np.array_equal(fixed[r0:r0 + hh, c0:c0 + ww],
                                          orig)
            interior = fixed[hh:h - hh]
            assert np.array_equal(interior, shuf[hh:h - hh])

        wgt = rng.uniform(0, 1, size=(h, w)).astype(np.float32)
        blended = blend_local([x, x], [wgt, 1 - wgt])
        assert np.abs(blended - x).max() < 1e-5

        v = rng.standard_normal(5).astype(np.float32)
        bg = blend_global([v, v], [wgt, 1 - wgt])
        assert np.abs(bg - v).max() < 1e-5

        pw = palette_weights(h, w)
        assert np.abs(sum(pw.weights) - 1.0).max() <= 1e-6
    _report("latent-ops-property-suite", t0, limit=60,
            detail="1000 seeds x 6 extents")


# ---------------------------------------------------------------------------
# Shuffle reachability: enumeration equals 1e5 sampled seeds, < 5 min


def test_shuffle_reachability():
    from test_latent import enumerate_axis_perms

    from texweave.latent import make_shuffle_plan

    t0 = time.time()
    reachable = enumerate_axis_perms(4, (2, 1))
    seen_rows, seen_cols = set(), set()
    for seed in range(100_000):
        plan = make_shuffle_plan(4, 4, seed, scales=(1, 2))
        seen_rows.add(tuple(plan.row_perm))
        seen_cols.add(tuple(plan.col_perm))
    assert seen_rows == reachable
    assert seen_cols == reachable
    _report("shuffle-reachability", t0, limit=300,
            detail=f"{len(reachable)} reachable row perms")


# ---------------------------------------------------------------------------
# Gradient check, < 2 min


def test_gradient_check():
    from test_losses import finite_difference_check, mixed_precision_fd_check

    t0 = time.time()
    worst64 = finite_difference_check(torch.float64, h=1e-5)
    assert worst64 <= 1e-6, f"float64 worst {worst64:.3g}"
    worst32 = mixed_precision_fd_check(h=1e-5)
    assert worst32 <= 1e-3, f"float32 worst {worst32:.3g}"
    _report("gradient-check", t0, limit=120,
            detail=f"worst rel err f64 {worst64:.2e}, f32 {worst32:.2e}")


# ---------------------------------------------------------------------------
# WGAN-GP analytic cases (exact)


def test_wgan_gp_analytic_cases():
    from test_losses import constant_critic, one_hot_critic

    from texweave.losses import gradient_penalty

    t0 = time.time()
    rng = np.random.default_rng(3)
    a = torch.from_numpy(rng.uniform(-1, 1, (4, 3, 8, 8)))
    b = torch.from_numpy(rng.uniform(-1, 1, (4, 3, 8, 8)))
    u = torch.from_numpy(rng.uniform(0, 1, 4))
    assert float(gradient_penalty(a, b, one_hot_critic((3, 8, 8)), u)) == 0.0
    assert float(gradient_penalty(a, b, constant_critic(), u)) == 10.0
    _report("wgan-gp-analytic", t0)


# ---------------------------------------------------------------------------
# Graph-cut brute-force oracle: >= 500 instances up to 3x4, < 2 min


def test_graph_cut_oracle():
    from texweave.compositing import (graph_cut_seam, labeling_cost,
                                      seam_edge_costs)

    t0 = time.time()
    rng = np.random.default_rng(11)
    n_instances = 0
    for shape in ((2, 3), (3, 3), (3, 4)):
        h, w = shape
        labelings = []
        for bits in itertools.product([False, True], repeat=h * w):
            labelings.append(np.array(bits).reshape(h, w))
        anchor_variants = []
        left = np.zeros(shape, bool)
        left[:, 0] = True
        right = np.zeros(shape, bool)
        right[:, -1] = True
        anchor_variants.append((left, right))
        top = np.zeros(shape, bool)
        top[0, :] = True
        bottom = np.zeros(shape, bool)
        bottom[-1, :] = True
        anchor_variants.append((top, bottom))
        for k in range(90):
            cost = rng.integers(0, 9, shape).astype(np.float64)
            anc_s, anc_r = anchor_variants[k % 2]
            cap_r, cap_d = seam_edge_costs(cost)
            best = min(labeling_cost(lab, cap_r, cap_d) for lab in labelings
                       if lab[anc_s].all() and not lab[anc_r].any())
            seam = graph_cut_seam(None, None, anc_s, anc_r, node_cost=cost)
            assert seam.cut_cost == pytest.approx(best)
            n_instances += 1
    assert n_instances >= 500
    _report("graph-cut-oracle", t0, limit=120,
            detail=f"{n_instances} instances")


# ---------------------------------------------------------------------------
# Poisson suite


def test_poisson_suite():
    from texweave.compositing import poisson_blend

    t0 = time.time()
    rng = np.random.default_rng(5)

    img = rng.uniform(-1, 1, (10, 10, 3)).astype(np.float32)
    mask = np.zeros((10, 10), bool)
    mask[3:7, 3:7] = True
    assert np.array_equal(poisson_blend(img, img, mask), img)
    other = rng.uniform(-1, 1, (10, 10, 3)).astype(np.float32)
    assert np.array_equal(poisson_blend(img, other,
                                        np.zeros((10, 10), bool)), img)

    target = np.zeros((1, 5, 1))
    target[0, 4] = 4.0
    m = np.zeros((1, 5), bool)
    m[0, 1:4] = True
    out = poisson_blend(target, np.zeros((1, 5, 1)), m)
    assert np.abs(out[0, :, 0] - [0, 1, 2, 3, 4]).max() <= 1e-6

    for _ in range(100):
        tgt = rng.uniform(-1, 1, (8, 9, 1))
        msk = np.zeros((8, 9), bool)
        msk[2:6, 2:7] = True
        out = poisson_blend(tgt, np.zeros_like(tgt), msk)
        from scipy import ndimage
        border = tgt[~msk & ndimage.binary_dilation(msk)]
        assert out[msk].max() <= border.max() + 1e-8
        assert out[msk].min() >= border.min() - 1e-8
    _report("poisson-suite", t0)


# ---------------------------------------------------------------------------
# Fully convolutional contract (m = 4)


def test_fully_convolutional_contract(untrained_bundle):
    t0 = time.time()
    c = untrained_bundle.config.gen_in_channels
    for (h, w) in ((8, 8), (8, 64), (24, 24)):
        z = torch.randn(1, c, h, w)
        out = untrained_bundle.model.generate(z)
        assert out.shape == (1, 3, 4 * h, 4 * w)
    # (8, 64) is the 1:8 horizontal-task canvas at desk scale
    _report("fully-convolutional-contract", t0)


# ---------------------------------------------------------------------------
# Desk-scale training run


@pytest.fixture(scope="module")
def heldout(desk_datasets):
    from texweave.training import build_patch_bank

    _, test_ds = desk_datasets
    bank, labels = build_patch_bank(test_ds, 32, seed=41)
    return bank, labels


@pytest.fixture(scope="module")
def convergence(trained_bundle, untrained_bundle, heldout):
    from texweave.training import toy_convergence_check

    bank, _ = heldout
    patches = list(bank[:24])
    pairs = [(bank[i], bank[-(i + 1)]) for i in range(8)]
    trained = toy_convergence_check(trained_bundle, patches, pairs)
    untrained = toy_convergence_check(untrained_bundle, patches, pairs)
    return trained, untrained


def test_training_reconstruction_improves(convergence):
    t0 = time.time()
    trained, untrained = convergence
    ratio = untrained["recon_l1"] / trained["recon_l1"]
    assert ratio >= 5.0, f"improvement only {ratio:.2f}x"
    assert trained["recon_l1"] < 0.15, \
        f"held-out recon L1 {trained['recon_l1']:.3f}"
    _report("desk-training-reconstruction", t0,
            detail=f"L1 {trained['recon_l1']:.4f}, {ratio:.1f}x better "
                   f"than untrained")


def test_training_interpolation_gram_ordering(convergence):
    t0 = time.time()
    trained, _ = convergence
    assert trained["itp_gram_to_a"] < trained["gram_between_sources"]
    assert trained["itp_gram_to_b"] < trained["gram_between_sources"]
    _report("desk-training-gram-ordering", t0,
            detail=f"to_a {trained['itp_gram_to_a']:.3f}, to_b "
                   f"{trained['itp_gram_to_b']:.3f} < between "
                   f"{trained['gram_between_sources']:.3f}")


def test_training_beats_naive_on_css_and_crs(trained_bundle, heldout,
                                             seam_classifier,
                                             repetition_classifier):
    from texweave.metrics import (crs, css, naive_blend_canvas,
                                  run_horizontal_task, task_from_canvas)

    t0 = time.time()
    seam_classifier.require_gate()
    repetition_classifier.require_gate()
    bank, _ = heldout
    rng = np.random.default_rng(17)
    ours_css, naive_css, ours_crs, naive_crs = [], [], [], []
    for k in range(8):
        s_l, s_r = bank[rng.integers(0, len(bank))], \
            bank[rng.integers(0, len(bank))]
        task = run_horizontal_task(trained_bundle, s_l, s_r,
                                   seed=int(rng.integers(0, 2**31)))
        if task.degenerate:
            continue
        naive = task_from_canvas(s_l, s_r, naive_blend_canvas(s_l, s_r))
        ours_css.append(css(task, seam_classifier))
        naive_css.append(css(naive, seam_classifier))
        ours_crs.append(crs(task, repetition_classifier))
        naive_crs.append(crs(naive, repetition_classifier))
    m_ours_css, m_naive_css = np.mean(ours_css), np.mean(naive_css)
    m_ours_crs, m_naive_crs = np.mean(ours_crs), np.mean(naive_crs)
    assert m_naive_css >= 2.0 * m_ours_css, \
        f"CSS ours {m_ours_css:.4f} vs naive {m_naive_css:.4f}"
    assert m_naive_crs >= 2.0 * m_ours_crs, \
        f"CRS ours {m_ours_crs:.4f} vs naive {m_naive_crs:.4f}"
    _report("desk-training-css-crs-ordering", t0,
            detail=f"CSS {m_ours_css:.4f} vs naive {m_naive_css:.4f}; "
                   f"CRS {m_ours_crs:.4f} vs naive {m_naive_crs:.4f}")


# ---------------------------------------------------------------------------
# Metric self-tests


def test_metric_self_tests(seam_classifier, repetition_classifier, rng):
    from test_metrics import FakeClassifier

    from texweave.metrics import ccd_from_features, cgd, cis, cswd, \
        naive_blend_canvas, task_from_canvas

    t0 = time.time()
    imgs = [rng.uniform(-1, 1, (32, 32, 3)).astype(np.float32)
            for _ in range(3)]
    assert cswd(imgs, [i.copy() for i in imgs], seed=2) == 0.0
    other = [rng.uniform(-1, 1, (32, 32, 3)).astype(np.float32)
             for _ in range(3)]
    assert cswd(imgs, other, seed=2) == pytest.approx(
        cswd(other, imgs, seed=2))

    probe = [rng.uniform(-1, 1, (8, 8, 3)) for _ in range(4)]
    assert cis(probe, FakeClassifier([[0.2, 0.3, 0.5]])) == \
        pytest.approx(1.0)
    assert cis(probe, FakeClassifier(np.eye(4))) == pytest.approx(4.0)

    g_l, g_r = rng.standard_normal(40), rng.standard_normal(40)
    assert ccd_from_features(g_l, (g_l + g_r) / 2, g_r) == \
        pytest.approx(0.0, abs=1e-12)

    from texweave.data import synth_texture
    s_l = synth_texture("stripes", {}, 32, 1)
    s_r = synth_texture("blobs", {}, 32, 2)
    canvas = naive_blend_canvas(s_l, s_r)
    p = 32
    off = (canvas.shape[1] - p) // 2
    canvas[:, off:off + p] = s_l
    assert cgd(task_from_canvas(s_l, s_r, canvas)) == \
        pytest.approx(1.0, rel=1e-5)

    assert seam_classifier.val_accuracy > 0.95
    assert repetition_classifier.val_accuracy > 0.95
    _report("metric-self-tests", t0,
            detail=f"seam gate {seam_classifier.val_accuracy:.3f}, "
                   f"repetition gate "
                   f"{repetition_classifier.val_accuracy:.3f}")


# ---------------------------------------------------------------------------
# Ablation switches (instrumented single steps)


def test_ablation_switches(desk_datasets, tmp_path):
    from texweave.models import desk_config
    from texweave.training import TrainConfig, Trainer

    t0 = time.time()
    train_ds, _ = desk_datasets

    def one_step(ablation, out):
        cfg = TrainConfig(steps=1, batch_size=4, seed=5, ablation=ablation,
                          checkpoint_every=10_000)
        tr = Trainer(desk_config(seed=1), cfg, train_ds,
                     str(tmp_path / out))
        trace = {}
        tr.generator_step(trace=trace)
        return tr, trace

    base_tr, base_trace = one_step(None, "base")
    _, shuffle_trace = one_step("no_shuffling", "nosh")
    for plan in shuffle_trace["plans"]:
        assert np.array_equal(plan.row_perm, np.arange(24))
        assert np.array_equal(plan.col_perm, np.arange(24))
    assert any(not np.array_equal(p.row_perm, np.arange(24))
               for p in base_trace["plans"])

    _, blend_trace = one_step("no_blending", "nobl")
    assert blend_trace["blended_second_source"] == "s1"
    assert base_trace["blended_second_source"] == "s2"

    ng_tr, ng_trace = one_step("no_global", "nogl")
    c_g = base_tr.model_config.c_global
    assert base_trace["gen_in_channels"] - ng_trace["gen_in_channels"] == c_g
    assert ng_tr.model.global_enc is None
    _report("ablation-switches", t0)


# ---------------------------------------------------------------------------
# Service contract over HTTP


def test_service_contract(untrained_bundle, tmp_path):
    import threading

    import httpx
    import uvicorn

    from test_service import free_port, make_session, render, texture

    from texweave.imgio import b64_to_image, png_to_b64
    from texweave.service import create_app

    t0 = time.time()
    app = create_app(untrained_bundle, state_dir=str(tmp_path))
    port = free_port()
    server = uvicorn.Server(uvicorn.Config(app, host="127.0.0.1",
                                           port=port, log_level="error"))
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    url = f"http://127.0.0.1:{port}"
    deadline = time.time() + 30
    while time.time() < deadline:
        try:
            if httpx.get(url + "/health", timeout=2).status_code == 200:
                break
        except Exception:
            time.sleep(0.1)

    try:
        # encode -> blend -> decode round trip: stroke blends an encoded
        # brush into the canvas latents, render decodes them
        sid = make_session(url)
        h0 = render(url, sid)["hash"]
        img0 = b64_to_image(render(url, sid)["png"])
        assert img0.shape == (48, 64, 3)
        brush = png_to_b64(texture("stripes", 5))
        r = httpx.post(f"{url}/sessions/{sid}/stroke", json={
            "brush": brush, "path": [[16.0, 16.0], [16.0, 40.0]],
            "radius": 8.0, "strength": 1.0}, timeout=120)
        assert r.status_code == 200
        h1 = render(url, sid)["hash"]
        assert h1 != h0

        # session isolation
        sid2 = make_session(url, seed=9)
        h2 = render(url, sid2)["hash"]
        httpx.post(f"{url}/sessions/{sid}/stroke", json={
            "brush": brush, "path": [[30.0, 30.0]], "radius": 6.0,
            "strength": 0.7}, timeout=120)
        assert render(url, sid2)["hash"] == h2

        # undo restores bit-identical renders, stroke by stroke
        httpx.post(f"{url}/sessions/{sid}/undo", timeout=120)
        assert render(url, sid)["hash"] == h1
        httpx.post(f"{url}/sessions/{sid}/undo", timeout=120)
        assert render(url, sid)["hash"] == h0

        # edit-log replay equivalence: the persisted session reloads to
        # the same render hash
        service_state = app.state.service
        session = service_state.get_session(sid)
        from texweave.canvas import session_from_arrays, session_to_arrays
        meta, arrays = session_to_arrays(session)
        clone = session_from_arrays(untrained_bundle, meta, arrays)
        assert clone.render_hash() == session.render_hash()
    finally:
        server.should_exit = True
        thread.join(timeout=10)
    _report("service-contract", t0)
