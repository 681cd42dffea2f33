"""Application engine: canvases, pins, brushes, palettes, dissolves.

A CanvasSession holds a latent-space canvas created by tiling an
encoded background texture (shuffled once with a stored seed so later
edits are stable). Users pin source textures at latent-aligned
positions, paint with a Gaussian latent brush, and render; pinned
regions are composited back verbatim with seam/Poisson cleanup. Every
edit appends to a replayable log, so undo restores the canvas
bit-exactly.
"""

import hashlib
import uuid
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .compositing import CompositingError, graph_cut_seam, poisson_blend, \
    replace_and_blend
from .latent import (LatentError, LatentField, LatentPair, apply_shuffle,
                     blend_global, blend_local, broadcast_global,
                     brush_apply, default_scales, inverse_distance_weights,
                     make_shuffle_plan, palette_weights, tile)
from .models import LATENT_FACTOR


class SessionError(ValueError):
    pass


def _canvas_scales(bg_extent, h, w):
    return tuple(s for s in default_scales(bg_extent)
                 if h % s == 0 and w % s == 0) or (1,)


def tile_to_grid(local, h, w):
    """Tile a local tensor periodically to an arbitrary h x w grid."""
    rows = np.arange(h) % local.shape[0]
    cols = np.arange(w) % local.shape[1]
    return local[rows][:, cols]


def shuffled_field(pair, h, w, seed):
    """Tile one LatentPair over a grid and shuffle it once."""
    base = tile_to_grid(pair.local, h, w)
    scales = _canvas_scales(min(pair.local.shape[:2]), h, w)
    plan = make_shuffle_plan(h, w, seed, scales=scales)
    return LatentField(apply_shuffle(plan, base),
                       broadcast_global(pair.global_, h, w))


@dataclass
class PinRecord:
    patch: np.ndarray
    cell_rc: tuple
    pixel_rc: tuple


class CanvasSession:
    """One editable latent canvas bound to a read-only model bundle."""

    def __init__(self, bundle, h_cells, w_cells, background_patch, seed=0,
                 session_id=None):
        if h_cells < 1 or w_cells < 1:
            raise SessionError("canvas extent must be positive")
        self.bundle = bundle
        self.session_id = session_id or uuid.uuid4().hex
        self.h = int(h_cells)
        self.w = int(w_cells)
        self.seed = int(seed)
        self.background_patch = np.asarray(background_patch, np.float32)
        p = bundle.patch_size
        if self.background_patch.shape[:2] != (p, p):
            raise SessionError(
                f"background texture must be {p}x{p} for this model, got "
                f"{self.background_patch.shape[:2]}")
        self.background = bundle.encode(self.background_patch)
        self.edit_log = []
        self.pins = []
        self.seq = 0
        self.field = self._base_field()

    def _base_field(self):
        return shuffled_field(self.background, self.h, self.w, self.seed)

    # -- edit operations ----------------------------------------------------

    def pin_texture(self, patch, position_px):
        y, x = position_px
        if y % LATENT_FACTOR or x % LATENT_FACTOR:
            raise SessionError(
                f"pin position {position_px} must be a multiple of "
                f"{LATENT_FACTOR} pixels")
        patch = np.asarray(patch, np.float32)
        ph, pw = patch.shape[:2]
        if ph % LATENT_FACTOR or pw % LATENT_FACTOR:
            raise SessionError("pinned patch size must align to the grid")
        r, c = y // LATENT_FACTOR, x // LATENT_FACTOR
        hh, ww = ph // LATENT_FACTOR, pw // LATENT_FACTOR
        if r < 0 or c < 0 or r + hh > self.h or c + ww > self.w:
            raise SessionError(f"pin at {position_px} falls outside canvas")
        self.edit_log.append({"op": "pin", "patch": patch.copy(),
                              "position": (int(y), int(x))})
        self._apply_pin(patch, (int(y), int(x)))
        self.seq += 1
        return self

    def _apply_pin(self, patch, position_px):
        y, x = position_px
        pair = self.bundle.encode(patch)
        r, c = y // LATENT_FACTOR, x // LATENT_FACTOR
        hh, ww = pair.local.shape[:2]
        self.field.local[r:r + hh, c:c + ww] = pair.local
        self.field.global_[r:r + hh, c:c + ww] = pair.global_
        self.pins.append(PinRecord(patch, (r, c), (y, x)))

    def brush_stroke(self, brush_pair, path_px, radius_px, strength,
                     stroke_id=None):
        """Stamp a Gaussian latent brush along a pixel path.

        Stamps are spaced radius/2 apart along the path segments; the
        brush latents replace the canvas outright at full strength.
        """
        if not path_px:
            raise SessionError("stroke path is empty")
        for (y, x) in path_px:
            if not (0 <= y < self.h * LATENT_FACTOR
                    and 0 <= x < self.w * LATENT_FACTOR):
                raise SessionError(f"stroke point ({y}, {x}) outside canvas")
        entry = {"op": "stroke",
                 "brush_local": brush_pair.local.copy(),
                 "brush_global": brush_pair.global_.copy(),
                 "path": [(float(y), float(x)) for y, x in path_px],
                 "radius": float(radius_px), "strength": float(strength)}
        if stroke_id is not None:
            entry["stroke_id"] = stroke_id
        self.edit_log.append(entry)
        self._apply_stroke(entry)
        self.seq += 1
        return self

    def _apply_stroke(self, entry):
        pair = LatentPair(entry["brush_local"], entry["brush_global"])
        radius_cells = max(entry["radius"] / LATENT_FACTOR, 1e-3)
        for (y, x) in _stamp_points(entry["path"], entry["radius"] / 2.0):
            # latent cell r covers pixels [4r, 4r+4): its center, pixel
            # 4r+2, maps to cell coordinate r
            center = (y / LATENT_FACTOR - 0.5, x / LATENT_FACTOR - 0.5)
            center = (min(max(center[0], 0.0), self.h - 1),
                      min(max(center[1], 0.0), self.w - 1))
            self.field = brush_apply(self.field, pair, center, radius_cells,
                                     entry["strength"])

    def undo(self):
        """Drop the last edit and replay the log from creation."""
        if not self.edit_log:
            return self
        self.edit_log.pop()
        self.replay()
        self.seq += 1
        return self

    def replay(self):
        """Rebuild the live canvas from the edit log, bit-exactly."""
        self.field = self._base_field()
        self.pins = []
        for entry in self.edit_log:
            if entry["op"] == "pin":
                self._apply_pin(entry["patch"], entry["position"])
            elif entry["op"] == "stroke":
                self._apply_stroke(entry)
            else:
                raise SessionError(f"unknown edit op {entry['op']!r}")
        return self

    # -- output -------------------------------------------------------------

    def render(self, composite_pins=True):
        img = self.bundle.decode_field(self.field)
        if composite_pins and self.pins:
            img = replace_and_blend(
                img, [(p.patch, p.pixel_rc) for p in self.pins])
        return img

    def render_hash(self, composite_pins=True):
        img = self.render(composite_pins)
        return hashlib.sha256(img.tobytes()).hexdigest()


def _stamp_points(path, spacing):
    """Resample a polyline at fixed arc-length spacing (pixel units)."""
    pts = [tuple(path[0])]
    if len(path) == 1 or spacing <= 0:
        return pts
    dist_since = 0.0
    for (y0, x0), (y1, x1) in zip(path[:-1], path[1:]):
        seg = float(np.hypot(y1 - y0, x1 - x0))
        if seg == 0:
            continue
        t = 0.0
        while True:
            need = spacing - dist_since
            if t + need > seg:
                dist_since += seg - t
                break
            t += need
            dist_since = 0.0
            pts.append((y0 + (y1 - y0) * t / seg,
                        x0 + (x1 - x0) * t / seg))
    if pts[-1] != tuple(path[-1]):
        pts.append(tuple(path[-1]))
    return pts


# ---------------------------------------------------------------------------
# Sparse interpolation and palettes


def interpolate_sparse(session, weight_law="idw", postprocess=True):
    """Blend the session's pinned textures over the whole canvas.

    Per-cell weights come from normalized inverse squared distance to
    the pins (or bilinear weights for a four-corner layout); each pin's
    latent is tiled and shuffled over the grid, restored verbatim at
    its own cells, and the weighted blend is decoded and composited.
    """
    if not session.pins:
        raise SessionError("no pinned textures to interpolate")
    h, w = session.h, session.w
    pairs = [session.bundle.encode(p.patch) for p in session.pins]
    anchors = []
    for p, pair in zip(session.pins, pairs):
        hh, ww = pair.local.shape[:2]
        anchors.append((p.cell_rc[0] + (hh - 1) / 2.0,
                        p.cell_rc[1] + (ww - 1) / 2.0))

    if weight_law == "bilinear":
        if len(session.pins) != 4:
            raise SessionError("bilinear weights need exactly four pins")
        wf = palette_weights(h, w)
    elif weight_law == "idw":
        wf = inverse_distance_weights(h, w, anchors)
    else:
        raise SessionError(f"unknown weight law {weight_law!r}")

    locals_, globals_ = [], []
    for k, (p, pair) in enumerate(zip(session.pins, pairs)):
        f = shuffled_field(pair, h, w, session.seed + 1000 + k)
        lo = f.local.copy()
        hh, ww = pair.local.shape[:2]
        r, c = p.cell_rc
        lo[r:r + hh, c:c + ww] = pair.local
        locals_.append(lo)
        globals_.append(pair.global_)
    field = LatentField(blend_local(locals_, wf),
                        blend_global(globals_, wf))
    img = session.bundle.decode_field(field)
    if postprocess:
        img = replace_and_blend(
            img, [(p.patch, p.pixel_rc) for p in session.pins])
    return img


@dataclass
class Palette:
    """Four corner textures blended bilinearly over a square canvas."""

    palette_id: str
    corners: list          # LatentPairs in TL, TR, BL, BR order
    corner_patches: list
    size_cells: int
    seed: int
    image: np.ndarray = None

    def pick(self, u, v):
        """Brush latent at normalized palette coordinates (u=row, v=col)."""
        if not (0.0 <= u <= 1.0 and 0.0 <= v <= 1.0):
            raise SessionError("palette coordinates must lie in [0, 1]")
        w_tl = (1 - u) * (1 - v)
        w_tr = (1 - u) * v
        w_bl = u * (1 - v)
        w_br = u * v
        ws = (w_tl, w_tr, w_bl, w_br)
        local = sum(w * c.local for w, c in zip(ws, self.corners))
        glob = sum(w * c.global_ for w, c in zip(ws, self.corners))
        return LatentPair(local.astype(np.float32),
                          glob.astype(np.float32))


def build_palette(bundle, corner_patches, size_cells, seed=0):
    """Render the four-corner interpolation palette."""
    if len(corner_patches) != 4:
        raise SessionError("a palette needs exactly four corner textures")
    pairs = [bundle.encode(p) for p in corner_patches]
    wf = palette_weights(size_cells, size_cells)
    locals_ = []
    for k, pair in enumerate(pairs):
        f = shuffled_field(pair, size_cells, size_cells, seed + k)
        locals_.append(f.local)
    ext = pairs[0].local.shape[0]
    # keep the exact corner latents at the four corner blocks
    locals_[0][:ext, :ext] = pairs[0].local
    locals_[1][:ext, -ext:] = pairs[1].local
    locals_[2][-ext:, :ext] = pairs[2].local
    locals_[3][-ext:, -ext:] = pairs[3].local
    field = LatentField(blend_local(locals_, wf),
                        blend_global([p.global_ for p in pairs], wf))
    img = bundle.decode_field(field)
    return Palette(uuid.uuid4().hex, pairs, list(corner_patches),
                   size_cells, seed, image=img)


# ---------------------------------------------------------------------------
# Dissolve


def dissolve(bundle, src1, src2, frames, seed=0, tile_factor=3):
    """Cross-dissolve: uniform-weight blends at a fixed shuffle seed.

    Frame k of N uses alpha = k/(N-1) as the weight of src1, so frame 0
    is a pure synthesis of src2 and frame N-1 of src1; the shared seed
    keeps per-cell latents affine in k across the sequence.
    """
    if frames < 2:
        raise SessionError("a dissolve needs at least two frames")
    za = bundle.encode(src1)
    zb = bundle.encode(src2)
    ext = za.local.shape[0]
    size = ext * tile_factor
    plan_a = make_shuffle_plan(size, size, seed, local_extent=ext)
    plan_b = make_shuffle_plan(size, size, seed + 1, local_extent=ext)
    from .latent import corner_override
    loc_a = corner_override(apply_shuffle(plan_a, tile(za.local, tile_factor)),
                            za.local)
    loc_b = corner_override(apply_shuffle(plan_b, tile(zb.local, tile_factor)),
                            zb.local)
    out = []
    for k in range(frames):
        alpha = k / (frames - 1)
        local = alpha * loc_a + (1 - alpha) * loc_b
        glob = alpha * za.global_ + (1 - alpha) * zb.global_
        field = LatentField(local, broadcast_global(glob, size, size))
        out.append(bundle.decode_field(field))
    return out


# ---------------------------------------------------------------------------
# Hybridization


def _split_sides(hole):
    """Assign the non-hole area to two sides split by the hole."""
    lab, n = ndimage.label(~hole)
    if n < 2:
        raise CompositingError(
            "the hole must separate the canvas into two source regions")
    sizes = ndimage.sum(np.ones_like(lab), lab, index=range(1, n + 1))
    main = np.argsort(sizes)[::-1][:2] + 1
    side_a = lab == min(main)
    side_b = lab == max(main)
    return side_a, side_b


def _sample_side_patches(image, side_mask, hole, patch, max_samples, rng):
    """Patch-sized windows inside one side's region, adjacent to the hole."""
    h, w = hole.shape
    near = ndimage.binary_dilation(hole, iterations=patch) & side_mask
    ys, xs = np.nonzero(near)
    if len(ys) == 0:
        return []
    found = []
    order = rng.permutation(len(ys))
    for k in order:
        y = min(max(ys[k] - patch // 2, 0), h - patch)
        x = min(max(xs[k] - patch // 2, 0), w - patch)
        window = side_mask[y:y + patch, x:x + patch]
        if window.all():
            if all(abs(y - fy) + abs(x - fx) > patch // 2
                   for fy, fx, _ in found):
                found.append((y, x, image[y:y + patch, x:x + patch]))
        if len(found) >= max_samples:
            break
    return found


def hybridize(bundle, image_a, image_b, hole_mask, seed=0, max_samples=4,
              postprocess=True):
    """Fill a transition hole between two aligned images by interpolation.

    Source patches adjacent to the hole are sampled on both sides,
    encoded, and blended across the hole with inverse-distance weights;
    the decoded fill is composited into the hole and the boundary is
    cleaned with a graph-cut seam and Poisson blending. Images must be
    pre-aligned and pre-masked; the hole must have source material on
    both of its sides.
    """
    a = np.asarray(image_a, np.float32)
    b = np.asarray(image_b, np.float32)
    hole = np.asarray(hole_mask, bool)
    if a.shape != b.shape or hole.shape != a.shape[:2]:
        raise CompositingError("images and hole mask disagree on shape")
    if not hole.any():
        return a.copy()

    side_a, side_b = _split_sides(hole)
    base = np.where(side_b[..., None], b, a)
    patch = bundle.patch_size
    rng = np.random.default_rng(seed)
    samples_a = _sample_side_patches(a, side_a, hole, patch, max_samples, rng)
    samples_b = _sample_side_patches(b, side_b, hole, patch, max_samples, rng)
    if not samples_a or not samples_b:
        raise CompositingError(
            "need source patches adjacent to the hole on both sides")

    # latent grid covering the hole's bounding box, aligned to the factor
    ys, xs = np.nonzero(hole)
    pad = patch // 2
    y0 = max(ys.min() - pad, 0) // LATENT_FACTOR * LATENT_FACTOR
    x0 = max(xs.min() - pad, 0) // LATENT_FACTOR * LATENT_FACTOR
    y1 = min(ys.max() + pad + 1, hole.shape[0])
    x1 = min(xs.max() + pad + 1, hole.shape[1])
    gh = max((y1 - y0) // LATENT_FACTOR, 1)
    gw = max((x1 - x0) // LATENT_FACTOR, 1)
    y1, x1 = y0 + gh * LATENT_FACTOR, x0 + gw * LATENT_FACTOR

    anchors, locals_, globals_ = [], [], []
    for k, (y, x, patch_img) in enumerate(samples_a + samples_b):
        pair = bundle.encode(patch_img)
        cy = (y + patch / 2 - y0) / LATENT_FACTOR
        cx = (x + patch / 2 - x0) / LATENT_FACTOR
        anchors.append((cy, cx))
        f = shuffled_field(pair, gh, gw, seed + 7 * k)
        locals_.append(f.local)
        globals_.append(pair.global_)
    wf = inverse_distance_weights(gh, gw, anchors)
    field = LatentField(blend_local(locals_, wf), blend_global(globals_, wf))
    fill = bundle.decode_field(field)

    out = base.copy()
    hole_box = hole[y0:y1, x0:x1]
    region = out[y0:y1, x0:x1]
    region[hole_box] = fill[:y1 - y0, :x1 - x0][hole_box]

    if postprocess:
        # refine the fill boundary with a seam cut, then hide the seam
        interior = ndimage.binary_erosion(hole,
                                          iterations=max(patch // 8, 2))
        outside = ndimage.binary_dilation(hole) & ~hole
        if interior.any() and outside.any():
            box = (slice(max(y0 - 1, 0), min(y1 + 1, hole.shape[0])),
                   slice(max(x0 - 1, 0), min(x1 + 1, hole.shape[1])))
            try:
                seam = graph_cut_seam(out[box], base[box],
                                      interior[box], outside[box])
                keep_fill = seam.mask & hole[box]
                region = np.where(keep_fill[..., None], out[box], base[box])
                # fill gradients inside the cut, base values at its border
                region = poisson_blend(region, out[box], keep_fill)
                out[box] = region
            except CompositingError:
                pass  # degenerate geometry; keep the raw composite
    return out


# ---------------------------------------------------------------------------
# Session persistence (checkpoint container format)


def session_to_arrays(session):
    """Flatten a session into (meta, arrays) for the container writer."""
    arrays = {"background_patch": session.background_patch}
    log_meta = []
    for i, entry in enumerate(session.edit_log):
        e = {"op": entry["op"]}
        if entry["op"] == "pin":
            arrays[f"editlog/{i}/patch"] = entry["patch"]
            e["position"] = list(entry["position"])
        else:
            arrays[f"editlog/{i}/brush_local"] = entry["brush_local"]
            arrays[f"editlog/{i}/brush_global"] = entry["brush_global"]
            e.update(path=[list(p) for p in entry["path"]],
                     radius=entry["radius"], strength=entry["strength"],
                     stroke_id=entry.get("stroke_id"))
        log_meta.append(e)
    meta = {
        "kind": "texweave-session",
        "session_id": session.session_id,
        "h": session.h, "w": session.w, "seed": session.seed,
        "seq": session.seq,
        "checkpoint_id": session.bundle.checkpoint_id,
        "edit_log": log_meta,
    }
    return meta, arrays


def session_from_arrays(bundle, meta, arrays):
    """Rebuild a session by replaying its persisted edit log."""
    session = CanvasSession(bundle, meta["h"], meta["w"],
                            arrays["background_patch"], seed=meta["seed"],
                            session_id=meta["session_id"])
    for i, e in enumerate(meta["edit_log"]):
        if e["op"] == "pin":
            entry = {"op": "pin", "patch": arrays[f"editlog/{i}/patch"],
                     "position": tuple(e["position"])}
        else:
            entry = {"op": "stroke",
                     "brush_local": arrays[f"editlog/{i}/brush_local"],
                     "brush_global": arrays[f"editlog/{i}/brush_global"],
                     "path": [tuple(p) for p in e["path"]],
                     "radius": e["radius"], "strength": e["strength"]}
            if e.get("stroke_id"):
                entry["stroke_id"] = e["stroke_id"]
        session.edit_log.append(entry)
    session.replay()
    session.seq = meta["seq"]
    return session
