"""Classical postprocessing: graph-cut seams and Poisson blending.

When a user pins a source texture onto a synthesized canvas, the pinned
region is pasted verbatim, an optimal seam between source and
reconstruction is found by min-cut on the pixel grid, and the seam is
hidden by solving the discrete Poisson equation across it.

The min-cut kernel has a compiled backend (``texweave._maxflow``,
Cython) and a pure-Python fallback selected at import; set
``TEXWEAVE_PURE_PYTHON=1`` to force the fallback.
"""

import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse
from scipy import ndimage
from scipy.sparse.linalg import cg, spsolve

from . import _maxflow_py

if os.environ.get("TEXWEAVE_PURE_PYTHON"):
    _backend = _maxflow_py
else:
    try:
        from . import _maxflow as _backend
    except ImportError:  # extension not built; fall back silently
        _backend = _maxflow_py

MAXFLOW_BACKEND = _backend.__name__.rsplit(".", 1)[-1].lstrip("_")

DIRECT_SOLVE_LIMIT = 100_000
POISSON_RESIDUAL_TOL = 1e-5
SEAM_BAND = 16


class CompositingError(ValueError):
    pass


@dataclass
class SeamMask:
    """Binary labeling of an overlap region: 1 = source pixel, 0 = recon."""

    mask: np.ndarray
    cut_cost: float
    flow: float


def _pixel_disagreement(source, recon):
    diff = np.asarray(source, dtype=np.float64) - np.asarray(recon,
                                                             dtype=np.float64)
    if diff.ndim == 2:
        diff = diff[..., None]
    return np.sqrt((diff ** 2).sum(axis=2))


def seam_edge_costs(node_cost):
    """Kwatra-style edge weights M(s,t) = cost(s) + cost(t), 4-connected."""
    cap_right = node_cost[:, :-1] + node_cost[:, 1:]
    cap_down = node_cost[:-1, :] + node_cost[1:, :]
    return cap_right, cap_down


def labeling_cost(labels, cap_right, cap_down):
    """Total weight of grid edges crossing a labeling boundary."""
    cut_r = labels[:, :-1] != labels[:, 1:]
    cut_d = labels[:-1, :] != labels[1:, :]
    return float(cap_right[cut_r].sum() + cap_down[cut_d].sum())


def _check_anchor(mask, name):
    if not mask.any():
        raise CompositingError(f"{name} anchor set is empty")
    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    _, n = ndimage.label(mask, structure=structure)
    if n != 1:
        raise CompositingError(f"{name} anchor set is disconnected "
                               f"({n} components)")


def graph_cut_seam(source, recon, anchor_source, anchor_recon,
                   node_cost=None):
    """Optimal seam between two aligned images over their overlap.

    Minimizes the summed color-difference edge weights over the cut,
    subject to hard anchor constraints; among minimum cuts the
    source-labeled region is maximal. `node_cost` overrides the default
    per-pixel disagreement (used for rings where one image is absent).
    """
    anchor_source = np.asarray(anchor_source, dtype=bool)
    anchor_recon = np.asarray(anchor_recon, dtype=bool)
    if anchor_source.shape != anchor_recon.shape:
        raise CompositingError("anchor masks disagree on shape")
    if (anchor_source & anchor_recon).any():
        raise CompositingError("a pixel is anchored to both labels")
    _check_anchor(anchor_source, "source")
    _check_anchor(anchor_recon, "recon")

    if node_cost is None:
        node_cost = _pixel_disagreement(source, recon)
    node_cost = np.asarray(node_cost, dtype=np.float64)
    if node_cost.shape != anchor_source.shape:
        raise CompositingError(
            f"cost grid {node_cost.shape} vs anchors {anchor_source.shape}")

    cap_right, cap_down = seam_edge_costs(node_cost)
    flow, labels = _backend.grid_mincut(cap_right, cap_down,
                                        anchor_source, anchor_recon)
    return SeamMask(mask=labels,
                    cut_cost=labeling_cost(labels, cap_right, cap_down),
                    flow=float(flow))


# ---------------------------------------------------------------------------
# Poisson blending


def poisson_blend(target, source, mask):
    """Solve the discrete Poisson equation inside a mask, per channel.

    The solution matches the source image's Laplacian inside the mask
    with Dirichlet boundary values taken from the target; outside the
    mask the target is returned untouched. Pixels on the image border
    use only their in-bounds neighbors.
    """
    target = np.asarray(target, dtype=np.float64)
    source = np.asarray(source, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if target.shape != source.shape:
        raise CompositingError("target and source disagree on shape")
    if mask.shape != target.shape[:2]:
        raise CompositingError("mask shape does not match images")
    out = target.copy()
    if not mask.any():
        return out.astype(np.float32)

    # nothing to solve when the images already agree on and around the mask
    probe = ndimage.binary_dilation(mask)
    if np.array_equal(source[probe], target[probe]):
        return out.astype(np.float32)

    h, w = mask.shape
    idx = -np.ones((h, w), dtype=np.int64)
    ys, xs = np.nonzero(mask)
    n = len(ys)
    idx[ys, xs] = np.arange(n)

    offsets = ((-1, 0), (1, 0), (0, -1), (0, 1))
    rows, cols, vals = [], [], []
    deg = np.zeros(n)
    chans = target.shape[2] if target.ndim == 3 else 1
    tgt = target.reshape(h, w, -1)
    src = source.reshape(h, w, -1)
    b = np.zeros((n, chans))

    has_boundary = np.zeros(n, dtype=bool)
    for k, (y, x) in enumerate(zip(ys, xs)):
        for dy, dx in offsets:
            yy, xx = y + dy, x + dx
            if not (0 <= yy < h and 0 <= xx < w):
                continue
            deg[k] += 1
            b[k] += src[y, x] - src[yy, xx]
            if mask[yy, xx]:
                rows.append(k)
                cols.append(idx[yy, xx])
                vals.append(-1.0)
            else:
                has_boundary[k] = True
                b[k] += tgt[yy, xx]

    # every connected unknown component needs at least one boundary pixel
    lab, n_comp = ndimage.label(mask)
    anchored = set(lab[ys[has_boundary], xs[has_boundary]].tolist())
    for comp in range(1, n_comp + 1):
        if comp not in anchored:
            raise CompositingError(
                f"mask component {comp} has no boundary values to anchor it")

    rows.extend(range(n))
    cols.extend(range(n))
    vals.extend(deg.tolist())
    a_mat = scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))

    sol = np.empty_like(b)
    for ch in range(chans):
        if n <= DIRECT_SOLVE_LIMIT:
            sol[:, ch] = spsolve(a_mat.tocsc(), b[:, ch])
        else:
            x0, info = cg(a_mat, b[:, ch], rtol=1e-6, maxiter=10 * n)
            if info != 0:
                res = np.abs(a_mat @ x0 - b[:, ch]).max()
                raise CompositingError(
                    f"Poisson solver did not converge (info={info}, "
                    f"residual {res:.3g})")
            sol[:, ch] = x0
        res = np.abs(a_mat @ sol[:, ch] - b[:, ch]).max()
        if res > POISSON_RESIDUAL_TOL:
            raise CompositingError(
                f"Poisson residual {res:.3g} exceeds "
                f"{POISSON_RESIDUAL_TOL:.0e} on channel {ch}")

    out_flat = out.reshape(h, w, -1)
    out_flat[ys, xs] = sol
    return out.astype(np.float32)


# ---------------------------------------------------------------------------
# Patch replacement


def _band_width(patch_size):
    return min(SEAM_BAND, patch_size // 4)


def replace_and_blend(canvas_image, source_patches, recon_image=None,
                      align=4, return_provenance=False, debug_dir=None):
    """Paste source patches over their reconstructions and hide the seams.

    `source_patches` is a list of (patch, (y, x)) with pixel positions
    aligned to the latent grid (multiples of `align`). For each patch an
    optimal seam is cut in a band around its border, the composite takes
    source pixels inside the seam and reconstruction outside, and the
    recon side of the band is Poisson-blended to the seam.
    """
    canvas = np.asarray(canvas_image, dtype=np.float32)
    recon = canvas if recon_image is None else np.asarray(recon_image,
                                                          dtype=np.float32)
    h, w = canvas.shape[:2]
    occupied = np.zeros((h, w), dtype=bool)
    provenance = np.zeros((h, w), dtype=bool)
    out = canvas.copy()

    for i, (patch, (y, x)) in enumerate(source_patches):
        patch = np.asarray(patch, dtype=np.float32)
        ph, pw = patch.shape[:2]
        if y % align or x % align:
            raise CompositingError(
                f"patch position ({y}, {x}) not aligned to {align}px grid")
        if y < 0 or x < 0 or y + ph > h or x + pw > w:
            raise CompositingError(f"patch {i} exceeds canvas bounds")
        if occupied[y:y + ph, x:x + pw].any():
            raise CompositingError(f"patch {i} overlaps an earlier patch")
        occupied[y:y + ph, x:x + pw] = True

        band = _band_width(min(ph, pw))
        # work region: the patch rect plus a 1px recon-anchored ring
        y0, x0 = max(y - 1, 0), max(x - 1, 0)
        y1, x1 = min(y + ph + 1, h), min(x + pw + 1, w)
        rect = np.zeros((y1 - y0, x1 - x0), dtype=bool)
        rect[y - y0:y - y0 + ph, x - x0:x - x0 + pw] = True
        ring = ~rect
        core = np.zeros_like(rect)
        core[y - y0 + band:y - y0 + ph - band,
             x - x0 + band:x - x0 + pw - band] = True
        if not core.any():
            raise CompositingError(
                f"patch {i} too small for a {band}px seam band")

        if not ring.any():
            # the patch covers the whole canvas: nothing to blend into
            out[y:y + ph, x:x + pw] = patch
            provenance[y:y + ph, x:x + pw] = True
            continue
        node_cost = np.zeros(rect.shape, dtype=np.float64)
        region_recon = recon[y0:y1, x0:x1]
        node_cost[rect] = _pixel_disagreement(
            patch, recon[y:y + ph, x:x + pw]).ravel()

        seam = graph_cut_seam(None, None, core, ring, node_cost=node_cost)
        take_source = seam.mask & rect

        region_out = region_recon.copy()
        patch_full = np.zeros_like(region_out)
        patch_full[y - y0:y - y0 + ph, x - x0:x - x0 + pw] = patch
        region_out[take_source] = patch_full[take_source]

        # bridge the recon side of the band between the seam (source
        # values) and the surrounding canvas, following recon gradients
        blend_mask = (~seam.mask) & rect
        region_out = poisson_blend(region_out, region_recon, blend_mask)

        # all modifications live inside the rect; writing only it keeps
        # adjacent patches from clobbering each other's anchor rings
        out[y:y + ph, x:x + pw] = \
            region_out[y - y0:y - y0 + ph, x - x0:x - x0 + pw]
        provenance[y:y + ph, x:x + pw] |= \
            take_source[y - y0:y - y0 + ph, x - x0:x - x0 + pw]

        if debug_dir is not None:
            from .imgio import save_image
            os.makedirs(debug_dir, exist_ok=True)
            dump = np.repeat(take_source[:, :, None].astype(np.float32) * 2
                             - 1, 3, axis=2)
            save_image(dump, os.path.join(debug_dir, f"seam_{i:02d}.png"))

    if return_provenance:
        return out, provenance
    return out
