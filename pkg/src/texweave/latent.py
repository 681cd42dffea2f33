"""Latent-space operations: tiling, multi-scale shuffling, blending, brushes.

A texture is encoded as a LatentPair (spatial local tensor + global
vector). Synthesis enlarges the local tensor by periodic tiling, breaks
the resulting repetition with a multi-scale random strip-swapping
permutation, optionally restores the original tensor at the four corner
tiles, and convex-blends any number of sources under a spatially
varying weight field. All operations are pure functions of their inputs
and seeds; shuffle plans are realized as explicit row/column
permutations so they compose and invert exactly.
"""

from dataclasses import dataclass, field

import numpy as np

WEIGHT_TOL = 1e-6


class LatentError(ValueError):
    pass


@dataclass
class LatentPair:
    """Encoding of one texture: local h x w x C_l tensor, global C_g vector."""

    local: np.ndarray
    global_: np.ndarray

    def __post_init__(self):
        self.local = np.asarray(self.local, dtype=np.float32)
        self.global_ = np.asarray(self.global_, dtype=np.float32)
        if self.local.ndim != 3:
            raise LatentError(f"local tensor must be h x w x C, got "
                              f"{self.local.shape}")
        if self.global_.ndim != 1:
            raise LatentError("global latent must be a vector")


@dataclass
class LatentField:
    """Spatially varying local and global tensors over one grid."""

    local: np.ndarray
    global_: np.ndarray

    def __post_init__(self):
        self.local = np.asarray(self.local, dtype=np.float32)
        self.global_ = np.asarray(self.global_, dtype=np.float32)
        if self.local.shape[:2] != self.global_.shape[:2]:
            raise LatentError(
                f"local {self.local.shape[:2]} and global "
                f"{self.global_.shape[:2]} grids differ")

    @property
    def grid_shape(self):
        return self.local.shape[:2]

    def copy(self):
        return LatentField(self.local.copy(), self.global_.copy())


@dataclass
class WeightField:
    """Per-source convex weights over a grid; sums to 1 at every cell."""

    weights: list

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float32) for w in self.weights]
        shapes = {w.shape for w in self.weights}
        if len(shapes) != 1:
            raise LatentError(f"weight arrays disagree on shape: {shapes}")
        validate_partition(self.weights)

    @property
    def grid_shape(self):
        return self.weights[0].shape


def validate_partition(weights, tol=WEIGHT_TOL):
    total = np.sum(np.stack(weights, axis=0), axis=0)
    err = np.abs(total - 1.0).max()
    if err > tol:
        raise LatentError(f"weights must sum to 1 everywhere "
                          f"(max deviation {err:.3g})")
    for w in weights:
        if w.min() < -tol or w.max() > 1.0 + tol:
            raise LatentError("weights must lie in [0, 1]")


# ---------------------------------------------------------------------------
# Tiling


def tile(local, factor=3):
    """Periodically repeat a local tensor `factor` times per axis."""
    if factor < 1 or int(factor) != factor:
        raise LatentError(f"tile factor must be a positive integer, "
                          f"got {factor}")
    return np.tile(local, (int(factor), int(factor), 1))


# ---------------------------------------------------------------------------
# Multi-scale shuffling


@dataclass
class ShufflePlan:
    """A realized multi-scale strip-swap permutation of a tiled grid.

    `row_perm` / `col_perm` are index arrays: applying the plan reads
    row i of the output from row row_perm[i] of the input.
    """

    seed: int
    h: int
    w: int
    scales: tuple
    row_perm: np.ndarray
    col_perm: np.ndarray

    def inverse(self):
        return ShufflePlan(self.seed, self.h, self.w, self.scales,
                           np.argsort(self.row_perm),
                           np.argsort(self.col_perm))


def default_scales(local_extent):
    """Powers of two from 1 up to half the untiled local extent."""
    if local_extent < 2:
        return (1,)
    scales = []
    s = 1
    while s <= local_extent // 2:
        scales.append(s)
        s *= 2
    return tuple(scales)


def _sweep_swaps(n_strips, flips):
    """Strip permutation from one down-sweep and one up-sweep of coin flips.

    Each visited strip is swapped with its successor in the sweep
    direction when the corresponding flip is True. `flips` holds the
    down-sweep flips followed by the up-sweep flips, 2*(n_strips-1) in
    total; returns an index array over strips.
    """
    perm = list(range(n_strips))
    it = iter(flips)
    for k in range(n_strips - 1):
        if next(it):
            perm[k], perm[k + 1] = perm[k + 1], perm[k]
    for k in range(n_strips - 1, 0, -1):
        if next(it):
            perm[k], perm[k - 1] = perm[k - 1], perm[k]
    return np.asarray(perm, dtype=np.int64)


def _strip_to_cell_perm(strip_perm, strip_size):
    base = np.arange(strip_size, dtype=np.int64)
    return (strip_perm[:, None] * strip_size + base[None, :]).ravel()


def _axis_perm_from_flips(extent, scales_coarse_first, flips_per_scale):
    """Compose per-scale strip swaps into one cell permutation of an axis."""
    total = np.arange(extent, dtype=np.int64)
    for s, flips in zip(scales_coarse_first, flips_per_scale):
        strip_perm = _sweep_swaps(extent // s, flips)
        cell_perm = _strip_to_cell_perm(strip_perm, s)
        # finer permutation acts on the already-permuted tensor
        total = total[cell_perm]
    return total


def make_shuffle_plan(h_tiled, w_tiled, seed, scales=None, local_extent=None):
    """Sample a multi-scale strip-swap permutation for an h x w grid.

    Scales run coarse to fine; each scale partitions rows (then columns)
    into strips of that size and sweeps them top-down, bottom-up (resp.
    left-right, right-left), swapping each strip with its successor with
    probability 0.5. When `scales` is omitted it defaults to powers of
    two up to half the untiled local extent.
    """
    if scales is None:
        if local_extent is None:
            local_extent = min(h_tiled, w_tiled) // 3  # 3x3 tiling default
        scales = default_scales(local_extent)
    scales = tuple(sorted(set(int(s) for s in scales)))
    if not scales:
        raise LatentError("scale list is empty")
    for s in scales:
        if h_tiled % s or w_tiled % s:
            raise LatentError(
                f"extents {h_tiled}x{w_tiled} not divisible by scale {s}")
    coarse_first = tuple(reversed(scales))
    rng = np.random.default_rng(seed)

    def draw(extent):
        out = []
        for s in coarse_first:
            n = extent // s
            out.append(rng.random(2 * (n - 1)) < 0.5)
        return out

    row_perm = _axis_perm_from_flips(h_tiled, coarse_first, draw(h_tiled))
    col_perm = _axis_perm_from_flips(w_tiled, coarse_first, draw(w_tiled))
    return ShufflePlan(seed, h_tiled, w_tiled, scales, row_perm, col_perm)


def identity_plan(h_tiled, w_tiled):
    return ShufflePlan(0, h_tiled, w_tiled, (1,),
                       np.arange(h_tiled, dtype=np.int64),
                       np.arange(w_tiled, dtype=np.int64))


def apply_shuffle(plan, tiled_local):
    """Permute rows and columns of a tensor per the realized plan."""
    t = np.asarray(tiled_local)
    if t.shape[0] != plan.h or t.shape[1] != plan.w:
        raise LatentError(
            f"tensor extent {t.shape[:2]} does not match plan "
            f"({plan.h}, {plan.w})")
    return t[plan.row_perm][:, plan.col_perm]


def corner_override(shuffled, original):
    """Restore the original latent at the four corner tiles of a 3x3 tiling."""
    shuffled = np.asarray(shuffled)
    original = np.asarray(original)
    h, w = original.shape[:2]
    if shuffled.shape[0] != 3 * h or shuffled.shape[1] != 3 * w:
        raise LatentError(
            f"shuffled extent {shuffled.shape[:2]} is not 3x the original "
            f"{original.shape[:2]}")
    out = shuffled.copy()
    for r0 in (0, 2 * h):
        for c0 in (0, 2 * w):
            out[r0:r0 + h, c0:c0 + w] = original
    return out


# ---------------------------------------------------------------------------
# Blending


def _as_weight_list(weights):
    if isinstance(weights, WeightField):
        return weights.weights
    ws = [np.asarray(w, dtype=np.float32) for w in weights]
    validate_partition(ws)
    return ws


def blend_local(tensors, weights):
    """Cellwise convex combination of local tensors under a weight field."""
    ws = _as_weight_list(weights)
    if len(tensors) != len(ws):
        raise LatentError(f"{len(tensors)} tensors vs {len(ws)} weights")
    out = np.zeros_like(np.asarray(tensors[0], dtype=np.float32))
    for t, w in zip(tensors, ws):
        t = np.asarray(t, dtype=np.float32)
        if t.shape[:2] != w.shape:
            raise LatentError(f"tensor grid {t.shape[:2]} vs weight grid "
                              f"{w.shape}")
        out += w[..., None] * t
    return out


def blend_global(vectors, weights):
    """Blend global latents into a spatial field, broadcasting vectors."""
    ws = _as_weight_list(weights)
    if len(vectors) != len(ws):
        raise LatentError(f"{len(vectors)} vectors vs {len(ws)} weights")
    h, w = ws[0].shape
    out = None
    for v, wt in zip(vectors, ws):
        v = np.asarray(v, dtype=np.float32)
        if v.ndim == 1:
            v = np.broadcast_to(v, (h, w, v.shape[0]))
        elif v.shape[:2] != (h, w):
            raise LatentError(f"global field grid {v.shape[:2]} vs weights "
                              f"{(h, w)}")
        term = wt[..., None] * v
        out = term if out is None else out + term
    return out


def broadcast_global(vector, h, w):
    v = np.asarray(vector, dtype=np.float32)
    return np.ascontiguousarray(np.broadcast_to(v, (h, w, v.shape[0])))


# ---------------------------------------------------------------------------
# Weight fields


def uniform_weights(h, w, alpha):
    """Two-source spatially uniform weights (alpha for the first source)."""
    a = np.full((h, w), float(alpha), dtype=np.float32)
    return WeightField([a, 1.0 - a])


def palette_weights(h, w):
    """Bilinear four-corner weights (TL, TR, BL, BR order)."""
    if h < 2 or w < 2:
        raise LatentError("palette grid must be at least 2x2")
    u = np.linspace(0.0, 1.0, h, dtype=np.float32)[:, None]
    v = np.linspace(0.0, 1.0, w, dtype=np.float32)[None, :]
    tl = (1.0 - u) * (1.0 - v)
    tr = (1.0 - u) * v
    bl = u * (1.0 - v)
    br = u * v
    return WeightField([tl, tr, bl, br])


def inverse_distance_weights(h, w, anchors, power=2.0):
    """Normalized inverse-distance-to-anchor weights, one per anchor.

    `anchors` are (row, col) cell coordinates. A cell coincident with an
    anchor gets weight 1 for it.
    """
    if not anchors:
        raise LatentError("need at least one anchor")
    rr, cc = np.mgrid[0:h, 0:w].astype(np.float32)
    raw = []
    for (ar, ac) in anchors:
        d2 = (rr - ar) ** 2 + (cc - ac) ** 2
        raw.append(1.0 / np.maximum(d2, 1e-12) ** (power / 2.0))
    stack = np.stack(raw, axis=0)
    # cells sitting exactly on an anchor resolve to that anchor alone
    on_anchor = stack > 1e11
    hit = on_anchor.any(axis=0)
    stack[:, hit] = on_anchor[:, hit].astype(np.float32)
    stack /= stack.sum(axis=0, keepdims=True)
    return WeightField([stack[k] for k in range(len(anchors))])


# ---------------------------------------------------------------------------
# Brush


def brush_kernel(h, w, center, radius, strength):
    """Gaussian brush weights over a grid, sigma = radius/2, cut at 3 sigma."""
    if radius <= 0:
        raise LatentError("brush radius must be positive")
    if not (0.0 < strength <= 1.0):
        raise LatentError("brush strength must lie in (0, 1]")
    cr, cc = center
    if not (0 <= cr < h and 0 <= cc < w):
        raise LatentError(f"brush center {center} outside canvas {h}x{w}")
    rr, cc_ = np.mgrid[0:h, 0:w].astype(np.float32)
    d2 = (rr - cr) ** 2 + (cc_ - cc) ** 2
    sigma = radius / 2.0
    g = strength * np.exp(-d2 / (2.0 * sigma * sigma))
    g[d2 > (3.0 * sigma) ** 2] = 0.0
    return np.clip(g, 0.0, 1.0).astype(np.float32)


def brush_apply(canvas, brush, center, radius, strength):
    """Convex-mix a brush texture's latents into a canvas around a center.

    Full strength at the center replaces the canvas latent with the
    brush latent outright; weights fall off as a Gaussian of distance.
    """
    h, w = canvas.grid_shape
    g = brush_kernel(h, w, center, radius, strength)[..., None]
    bh, bw = brush.local.shape[:2]
    rows = np.arange(h) % bh
    cols = np.arange(w) % bw
    brush_local = brush.local[rows][:, cols]
    brush_global = broadcast_global(brush.global_, h, w)
    return LatentField(
        (1.0 - g) * canvas.local + g * brush_local,
        (1.0 - g) * canvas.global_ + g * brush_global,
    )
