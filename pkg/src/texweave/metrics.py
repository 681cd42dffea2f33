"""Evaluation harness: the horizontal interpolation task and seven metrics.

Every quantitative number comes from one protocol: two side textures
pinned at the ends of a 1:8 canvas, a linear blend-weight ramp between
them, synthesis through the latent path, and compositing at the ends.
Controllability is measured by the side perceptual distance (SPD) and
center Gram distance (CGD); smoothness by the center cosine distance
(CCD) and center seam score (CSS); realism by the center repetition
score (CRS), a center inception score (CIS) from a family classifier,
and a center sliced Wasserstein distance (CSWD) over Laplacian-pyramid
patch descriptors. Classifier-backed scores are reported only when the
classifier passed its validation gate.

At desk scale the perceptual-distance backend for SPD is the Gram
feature distance (reported as ``spd_backend: gram``); those numbers are
not comparable to published full-scale figures.
"""

import json
from dataclasses import dataclass, field

import numpy as np
import torch

from .compositing import replace_and_blend
from .features import default_extractor
from .latent import (LatentField, apply_shuffle, blend_global, blend_local,
                     default_scales, make_shuffle_plan)
from .losses import gram_loss, gram_matrix
from .models import image_to_tensor

METRIC_COLUMNS = ("spd", "cgd", "ccd", "css", "crs", "cis", "cswd")
LOWER_BETTER = {"spd": True, "cgd": True, "ccd": True, "css": True,
                "crs": True, "cis": False, "cswd": True}
DEGENERATE_EPS = 1e-12


class MetricError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Gram feature helpers (shared with the loss implementation)


def gram_feature_vector(image, extractor=None):
    """Flattened multi-scale Gram features of one image."""
    extractor = extractor or default_extractor()
    with torch.no_grad():
        feats = extractor(image_to_tensor(image))
        return np.concatenate(
            [gram_matrix(f)[0].reshape(-1).numpy() for f in feats])


def gram_distance(a, b, extractor=None):
    """Square root of the summed squared Frobenius Gram distances."""
    extractor = extractor or default_extractor()
    with torch.no_grad():
        val = float(gram_loss(image_to_tensor(a), image_to_tensor(b),
                              extractor))
    return float(np.sqrt(max(val, 0.0)))


# ---------------------------------------------------------------------------
# The horizontal interpolation task


@dataclass
class HorizontalTask:
    """One evaluated canvas plus its measurement crops."""

    s_left: np.ndarray
    s_right: np.ndarray
    canvas: np.ndarray
    side_left: np.ndarray
    side_right: np.ndarray
    center: np.ndarray
    alpha_columns: np.ndarray  # per-latent-column weight of the left source
    degenerate: bool = False


def horizontal_alpha(width_cells, end_cells):
    """Left-source weight per latent column: 1 on the left constraint,
    0 on the right constraint, linear ramp between."""
    c_l1 = end_cells - 1
    c_r0 = width_cells - end_cells
    cols = np.arange(width_cells, dtype=np.float64)
    alpha = (c_r0 - cols) / float(c_r0 - c_l1)
    return np.clip(alpha, 0.0, 1.0).astype(np.float32)


def run_horizontal_task(bundle, s_left, s_right, seed=0, aspect=8,
                        postprocess=True, extractor=None):
    """Interpolate linearly between two textures across a 1:8 canvas."""
    p = bundle.patch_size
    ext = bundle.latent_extent
    width = aspect * ext

    za = bundle.encode(s_left)
    zb = bundle.encode(s_right)
    reps = aspect
    tiled_a = np.tile(za.local, (1, reps, 1))
    tiled_b = np.tile(zb.local, (1, reps, 1))
    scales = [s for s in default_scales(ext) if ext % s == 0 and width % s == 0]
    plan_a = make_shuffle_plan(ext, width, seed, scales=scales)
    plan_b = make_shuffle_plan(ext, width, seed + 1, scales=scales)
    loc_a = apply_shuffle(plan_a, tiled_a)
    loc_b = apply_shuffle(plan_b, tiled_b)
    # constraint regions: restore the unshuffled latents at both ends
    loc_a[:, :ext] = za.local
    loc_a[:, -ext:] = za.local
    loc_b[:, :ext] = zb.local
    loc_b[:, -ext:] = zb.local

    alpha_cols = horizontal_alpha(width, ext)
    w_a = np.broadcast_to(alpha_cols[None, :], (ext, width)).copy()
    weights = [w_a, 1.0 - w_a]
    local = blend_local([loc_a, loc_b], weights)
    glob = blend_global([za.global_, zb.global_], weights)
    canvas = bundle.decode_field(LatentField(local, glob))

    if postprocess:
        canvas = replace_and_blend(
            canvas, [(s_left, (0, 0)), (s_right, (0, canvas.shape[1] - p))])

    center_off = (canvas.shape[1] - p) // 2
    task = HorizontalTask(
        s_left=s_left, s_right=s_right, canvas=canvas,
        side_left=canvas[:, :p], side_right=canvas[:, -p:],
        center=canvas[:, center_off:center_off + p],
        alpha_columns=alpha_cols,
        degenerate=gram_distance(s_left, s_right, extractor) < DEGENERATE_EPS,
    )
    return task


def naive_blend_canvas(s_left, s_right, aspect=8):
    """Per-pixel alpha blend of tiled copies of the two side textures.

    The reference lower bar: end tiles are copied as-is and every
    intervening tile is a copy of the boundaries blended by the global
    horizontal ramp, so it ghosts and repeats by construction.
    """
    p = s_left.shape[0]
    tiled_l = np.tile(s_left, (1, aspect, 1))
    tiled_r = np.tile(s_right, (1, aspect, 1))
    width = aspect * p
    x = np.arange(width, dtype=np.float32)
    alpha = 1.0 - x / (width - 1)
    canvas = alpha[None, :, None] * tiled_l \
        + (1.0 - alpha)[None, :, None] * tiled_r
    canvas[:, :p] = s_left
    canvas[:, -p:] = s_right
    return canvas.astype(np.float32)


def task_from_canvas(s_left, s_right, canvas, extractor=None):
    """Wrap an externally produced canvas in the measurement crops."""
    p = s_left.shape[0]
    center_off = (canvas.shape[1] - p) // 2
    return HorizontalTask(
        s_left=s_left, s_right=s_right, canvas=canvas,
        side_left=canvas[:, :p], side_right=canvas[:, -p:],
        center=canvas[:, center_off:center_off + p],
        alpha_columns=horizontal_alpha(canvas.shape[1], p),
        degenerate=gram_distance(s_left, s_right, extractor) < DEGENERATE_EPS,
    )


# ---------------------------------------------------------------------------
# Controllability


def spd(task, distance_fn=None, extractor=None):
    """Side perceptual distance: mean distance of side crops to sources."""
    if distance_fn is None:
        distance_fn = lambda a, b: gram_distance(a, b, extractor)
    return 0.5 * (distance_fn(task.side_left, task.s_left)
                  + distance_fn(task.side_right, task.s_right))


def cgd(task, extractor=None):
    """Center Gram distance, normalized by the sources' mutual distance.

    Returns None for degenerate pairs (near-identical sources)."""
    denom = gram_distance(task.s_left, task.s_right, extractor)
    if denom < DEGENERATE_EPS:
        return None
    num = gram_distance(task.center, task.s_left, extractor) \
        + gram_distance(task.center, task.s_right, extractor)
    return num / denom


# ---------------------------------------------------------------------------
# Smoothness


def ccd_from_features(g_left, g_center, g_right):
    """Cosine distance between the two feature difference vectors.

    Zero when the center sits exactly on the segment's midpoint
    direction, two when the steps are antiparallel; None (degenerate)
    when either difference vanishes.
    """
    v1 = np.asarray(g_center, np.float64) - np.asarray(g_left, np.float64)
    v2 = np.asarray(g_right, np.float64) - np.asarray(g_center, np.float64)
    n1, n2 = np.linalg.norm(v1), np.linalg.norm(v2)
    if n1 < DEGENERATE_EPS or n2 < DEGENERATE_EPS:
        return None
    return float(1.0 - np.dot(v1, v2) / (n1 * n2))


def ccd(task, extractor=None):
    """Cosine distance between the two Gram-feature difference vectors."""
    return ccd_from_features(gram_feature_vector(task.s_left, extractor),
                             gram_feature_vector(task.center, extractor),
                             gram_feature_vector(task.s_right, extractor))


def css(task, seam_classifier):
    """Center seam score: the gated seam classifier's sigmoid output."""
    seam_classifier.require_gate()
    return float(seam_classifier.score([task.center])[0])


# ---------------------------------------------------------------------------
# Realism


def crs(task, repetition_classifier):
    """Center repetition score on the double-width center region."""
    repetition_classifier.require_gate()
    p = task.s_left.shape[0]
    off = (task.canvas.shape[1] - 2 * p) // 2
    double = task.canvas[:, off:off + 2 * p]
    return float(repetition_classifier.score([double])[0])


def cis(center_crops, family_classifier):
    """Inception-style score of the center crops under a family classifier."""
    probs = family_classifier.predict_proba(center_crops)
    probs = np.clip(probs, 1e-12, 1.0)
    marginal = probs.mean(axis=0, keepdims=True)
    kl = (probs * (np.log(probs) - np.log(marginal))).sum(axis=1)
    return float(np.exp(kl.mean()))


def _laplacian_levels(img, n_levels):
    levels = []
    cur = img
    for _ in range(n_levels - 1):
        h, w = cur.shape[:2]
        down = cur[:h - h % 2, :w - w % 2].reshape(
            h // 2, 2, w // 2, 2, -1).mean(axis=(1, 3))
        up = np.repeat(np.repeat(down, 2, axis=0), 2, axis=1)
        levels.append(cur - up[:cur.shape[0], :cur.shape[1]])
        cur = down
    levels.append(cur)
    return levels


def _patch_descriptors(images, level, n_per_image, rng, patch=7):
    descs = []
    for img in images:
        lv = _laplacian_levels(img, level + 1)[level]
        h, w = lv.shape[:2]
        if h < patch or w < patch:
            raise MetricError(f"image too small for {patch}x{patch} "
                              f"descriptors at pyramid level {level}")
        for _ in range(n_per_image):
            r = int(rng.integers(0, h - patch + 1))
            c = int(rng.integers(0, w - patch + 1))
            d = lv[r:r + patch, c:c + patch].astype(np.float64)
            d = d - d.mean(axis=(0, 1), keepdims=True)  # per-channel mean
            descs.append(d.reshape(-1))
    return np.stack(descs)


def sliced_wasserstein(desc_a, desc_b, n_projections, rng):
    """SWD of two equal-size descriptor sets over random projections.

    Per projection both sets are sorted and matched order statistics
    contribute their mean absolute difference.
    """
    desc_a = np.asarray(desc_a, np.float64)
    desc_b = np.asarray(desc_b, np.float64)
    n = min(len(desc_a), len(desc_b))
    da, db = desc_a[:n], desc_b[:n]
    dirs = rng.standard_normal((n_projections, da.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pa = np.sort(da @ dirs.T, axis=0)
    pb = np.sort(db @ dirs.T, axis=0)
    return float(np.abs(pa - pb).mean())


def cswd(real_crops, generated_crops, n_projections=128, n_levels=2,
         n_per_image=64, seed=0):
    """Sliced Wasserstein distance over 7x7x3 pyramid patch descriptors.

    Both sets sample patch locations from the same child seed, so
    identical sets yield identical descriptors and a distance of
    exactly zero, and the measure is symmetric in its arguments.
    """
    total = 0.0
    for level in range(n_levels):
        da = _patch_descriptors(real_crops, level, n_per_image,
                                np.random.default_rng([seed, level, 1]))
        db = _patch_descriptors(generated_crops, level, n_per_image,
                                np.random.default_rng([seed, level, 1]))
        total += sliced_wasserstein(
            da, db, n_projections, np.random.default_rng([seed, level, 2]))
    return total / n_levels


# ---------------------------------------------------------------------------
# The full suite


@dataclass
class MetricsReport:
    values: dict
    directions: dict = field(default_factory=lambda: dict(LOWER_BETTER))
    n_pairs: int = 0
    n_degenerate: int = 0
    spd_backend: str = "gram"

    def to_dict(self):
        return {
            "values": self.values,
            "directions": {k: ("lower" if v else "higher")
                           for k, v in self.directions.items()},
            "n_pairs": self.n_pairs,
            "n_degenerate": self.n_degenerate,
            "spd_backend": self.spd_backend,
        }


def evaluate(bundle, test_pairs, seam_classifier, repetition_classifier,
             family_classifier, seed=0, extractor=None,
             include_naive=True, postprocess=True):
    """Run the seven-metric suite over test pairs; returns report rows.

    Produces one averaged row for the model and (optionally) one for
    the naive per-pixel blending baseline, plus per-pair records.
    Degenerate pairs are excluded from averages and counted.
    """
    rows = {"ours": [], "naive": []} if include_naive else {"ours": []}
    per_pair = []
    n_degenerate = 0
    rng = np.random.default_rng(seed)
    for k, (s_l, s_r) in enumerate(test_pairs):
        task = run_horizontal_task(bundle, s_l, s_r,
                                   seed=int(rng.integers(0, 2**31)),
                                   postprocess=postprocess,
                                   extractor=extractor)
        if task.degenerate:
            n_degenerate += 1
            per_pair.append({"pair": k, "degenerate": True})
            continue
        variants = {"ours": task}
        if include_naive:
            variants["naive"] = task_from_canvas(
                s_l, s_r, naive_blend_canvas(s_l, s_r), extractor)
        rec = {"pair": k, "degenerate": False}
        for name, t in variants.items():
            vals = {
                "spd": spd(t, extractor=extractor),
                "cgd": cgd(t, extractor=extractor),
                "ccd": ccd(t, extractor=extractor),
                "css": css(t, seam_classifier),
                "crs": crs(t, repetition_classifier),
            }
            rec[name] = vals
            rows[name].append(t)
        per_pair.append(rec)

    report_rows = {}
    for name, tasks in rows.items():
        if not tasks:
            continue
        vals = {}
        for metric in ("spd", "cgd", "ccd", "css", "crs"):
            pair_vals = [r[name][metric] for r in per_pair
                         if not r.get("degenerate") and
                         r[name][metric] is not None]
            vals[metric] = float(np.mean(pair_vals)) if pair_vals else None
        centers = [t.center for t in tasks]
        real_crops = [t.s_left for t in tasks] + [t.s_right for t in tasks]
        vals["cis"] = cis(centers, family_classifier)
        vals["cswd"] = cswd(real_crops, centers, seed=seed)
        report_rows[name] = MetricsReport(
            values=vals, n_pairs=len(tasks), n_degenerate=n_degenerate)
    return report_rows, per_pair


# ---------------------------------------------------------------------------
# Rendering


def format_table(report_rows):
    """Plain-text table in the canonical column order."""
    header = "method  " + "  ".join(f"{m.upper():>8s}" for m in METRIC_COLUMNS)
    lines = [header, "-" * len(header)]
    for name, report in report_rows.items():
        cells = []
        for m in METRIC_COLUMNS:
            v = report.values.get(m)
            cells.append(f"{v:8.4f}" if v is not None else "     n/a")
        lines.append(f"{name:6s}  " + "  ".join(cells))
    return "\n".join(lines)


def radar_data(report_rows):
    """Unit-normalized, direction-corrected values for radar charts."""
    out = {name: {} for name in report_rows}
    for m in METRIC_COLUMNS:
        vals = {n: r.values.get(m) for n, r in report_rows.items()}
        present = {n: v for n, v in vals.items() if v is not None}
        if not present:
            continue
        lo, hi = min(present.values()), max(present.values())
        span = (hi - lo) or 1.0
        for n, v in present.items():
            unit = (v - lo) / span
            out[n][m] = 1.0 - unit if LOWER_BETTER[m] else unit
    return out


def write_report(path, report_rows, per_pair):
    payload = {
        "columns": list(METRIC_COLUMNS),
        "rows": {n: r.to_dict() for n, r in report_rows.items()},
        "radar": radar_data(report_rows),
        "per_pair": per_pair,
        "table": format_table(report_rows),
    }
    with open(path, "w") as f:
        json.dump(payload, f, indent=2)
    return payload
