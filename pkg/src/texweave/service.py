"""HTTP service exposing the painting engine.

JSON in, JSON out; images travel as base64 PNG. The model checkpoint is
loaded read-only at startup; each session is single-writer (requests on
one session are serialized by a lock) while different sessions and all
decodes run concurrently in the worker pool. Sessions are persisted to
a state directory as edit-log containers when one is configured.
"""

import hashlib
import os
import threading
from typing import List, Optional, Union

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import canvas as canvas_mod
from .canvas import (CanvasSession, Palette, build_palette, dissolve,
                     hybridize, session_from_arrays, session_to_arrays)
from .checkpoint import read_container, write_container
from .imgio import b64_to_image, decode_mask_png, png_to_b64
from .latent import LatentPair
from .models import LATENT_FACTOR, ModelBundle


class CreateSessionRequest(BaseModel):
    width: int = Field(gt=0, description="canvas width in pixels")
    height: int = Field(gt=0)
    background_png: str
    seed: int = 0


class PinRequest(BaseModel):
    png: str
    x: int
    y: int


class PalettePoint(BaseModel):
    palette_id: str
    u: float = Field(ge=0.0, le=1.0)
    v: float = Field(ge=0.0, le=1.0)


class StrokeRequest(BaseModel):
    brush: Union[str, PalettePoint]  # base64 png or a palette pick
    path: List[List[float]]
    radius: float = Field(gt=0)
    strength: float = Field(gt=0.0, le=1.0)
    stroke_id: Optional[str] = None


class PaletteRequest(BaseModel):
    corner_pngs: List[str] = Field(min_length=4, max_length=4)
    size: int = Field(gt=0, description="palette side length in pixels")
    seed: int = 0


class DissolveRequest(BaseModel):
    png_a: str
    png_b: str
    frames: int = Field(default=8, ge=2, le=128)
    seed: int = 0


class HybridizeRequest(BaseModel):
    png_a: str
    png_b: str
    hole_mask_png: str
    seed: int = 0


class ServiceState:
    def __init__(self, bundle, state_dir=None):
        self.bundle = bundle
        self.state_dir = state_dir
        self.sessions = {}
        self.palettes = {}
        self.locks = {}
        self.applied_strokes = {}
        self.global_lock = threading.Lock()
        if state_dir:
            os.makedirs(state_dir, exist_ok=True)
            self._load_sessions()

    def _load_sessions(self):
        for name in os.listdir(self.state_dir):
            if not name.endswith(".session"):
                continue
            meta, arrays = read_container(os.path.join(self.state_dir, name))
            session = session_from_arrays(self.bundle, meta, arrays)
            self.sessions[session.session_id] = session
            self.locks[session.session_id] = threading.Lock()
            self.applied_strokes[session.session_id] = set(
                e.get("stroke_id") for e in session.edit_log
                if e.get("stroke_id"))

    def persist(self, session):
        if not self.state_dir:
            return
        meta, arrays = session_to_arrays(session)
        write_container(
            os.path.join(self.state_dir, f"{session.session_id}.session"),
            meta, arrays)

    def get_session(self, session_id):
        session = self.sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404,
                                detail=f"unknown session {session_id}")
        return session

    def lock_for(self, session_id):
        return self.locks[session_id]


def _patch_or_400(payload, name):
    try:
        return b64_to_image(payload)
    except Exception as exc:
        raise HTTPException(status_code=422,
                            detail=f"field {name}: not a decodable "
                                   f"PNG ({exc})")


def create_app(bundle, state_dir=None):
    state = ServiceState(bundle, state_dir)
    app = FastAPI(title="texweave", version="0.1.0")
    app.state.service = state

    @app.get("/health")
    def health():
        return {"status": "ok", "checkpoint": bundle.checkpoint_id,
                "patch_size": bundle.patch_size}

    @app.post("/sessions")
    def create_session(req: CreateSessionRequest):
        if req.width % LATENT_FACTOR or req.height % LATENT_FACTOR:
            raise HTTPException(
                status_code=422,
                detail=f"field width/height: must be multiples of "
                       f"{LATENT_FACTOR}")
        background = _patch_or_400(req.background_png, "background_png")
        try:
            session = CanvasSession(
                bundle, req.height // LATENT_FACTOR,
                req.width // LATENT_FACTOR, background, seed=req.seed)
        except Exception as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        with state.global_lock:
            state.sessions[session.session_id] = session
            state.locks[session.session_id] = threading.Lock()
            state.applied_strokes[session.session_id] = set()
        state.persist(session)
        return {"session_id": session.session_id, "seq": session.seq}

    @app.post("/sessions/{session_id}/pin")
    def pin(session_id: str, req: PinRequest):
        session = state.get_session(session_id)
        patch = _patch_or_400(req.png, "png")
        with state.lock_for(session_id):
            try:
                session.pin_texture(patch, (req.y, req.x))
            except Exception as exc:
                raise HTTPException(status_code=422, detail=str(exc))
            state.persist(session)
            return {"seq": session.seq}

    @app.post("/sessions/{session_id}/stroke")
    def stroke(session_id: str, req: StrokeRequest):
        session = state.get_session(session_id)
        with state.lock_for(session_id):
            applied = state.applied_strokes[session_id]
            if req.stroke_id and req.stroke_id in applied:
                return {"seq": session.seq, "deduplicated": True}
            if isinstance(req.brush, PalettePoint):
                palette = state.palettes.get(req.brush.palette_id)
                if palette is None:
                    raise HTTPException(status_code=404,
                                        detail="unknown palette "
                                               f"{req.brush.palette_id}")
                brush_pair = palette.pick(req.brush.u, req.brush.v)
            else:
                brush_img = _patch_or_400(req.brush, "brush")
                try:
                    brush_pair = bundle.encode(brush_img)
                except Exception as exc:
                    raise HTTPException(status_code=422, detail=str(exc))
            try:
                session.brush_stroke(
                    brush_pair, [tuple(p) for p in req.path],
                    req.radius, req.strength, stroke_id=req.stroke_id)
            except Exception as exc:
                raise HTTPException(status_code=422, detail=str(exc))
            if req.stroke_id:
                applied.add(req.stroke_id)
            state.persist(session)
            return {"seq": session.seq, "deduplicated": False}

    @app.post("/sessions/{session_id}/undo")
    def undo(session_id: str):
        session = state.get_session(session_id)
        with state.lock_for(session_id):
            dropped = session.edit_log[-1] if session.edit_log else None
            session.undo()
            if dropped is not None and dropped.get("stroke_id"):
                state.applied_strokes[session_id].discard(
                    dropped["stroke_id"])
            state.persist(session)
            return {"seq": session.seq}

    @app.get("/sessions/{session_id}/render")
    def render(session_id: str, composite: bool = True):
        session = state.get_session(session_id)
        with state.lock_for(session_id):
            img = session.render(composite_pins=composite)
            seq = session.seq
        png = png_to_b64(img)
        return {"png": png,
                "hash": hashlib.sha256(img.tobytes()).hexdigest(),
                "seq": seq}

    @app.post("/palette")
    def palette(req: PaletteRequest):
        if req.size % LATENT_FACTOR:
            raise HTTPException(status_code=422,
                                detail="field size: must be a multiple "
                                       f"of {LATENT_FACTOR}")
        corners = [_patch_or_400(p, f"corner_pngs[{i}]")
                   for i, p in enumerate(req.corner_pngs)]
        try:
            pal = build_palette(bundle, corners,
                                req.size // LATENT_FACTOR, seed=req.seed)
        except Exception as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        with state.global_lock:
            state.palettes[pal.palette_id] = pal
        return {"palette_png": png_to_b64(pal.image),
                "palette_id": pal.palette_id}

    @app.post("/dissolve")
    def do_dissolve(req: DissolveRequest):
        a = _patch_or_400(req.png_a, "png_a")
        b = _patch_or_400(req.png_b, "png_b")
        try:
            frames = dissolve(bundle, a, b, req.frames, seed=req.seed)
        except Exception as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return {"pngs": [png_to_b64(f) for f in frames]}

    @app.post("/hybridize")
    def do_hybridize(req: HybridizeRequest):
        import base64

        a = _patch_or_400(req.png_a, "png_a")
        b = _patch_or_400(req.png_b, "png_b")
        try:
            mask = decode_mask_png(base64.b64decode(req.hole_mask_png))
        except Exception as exc:
            raise HTTPException(status_code=422,
                                detail=f"field hole_mask_png: {exc}")
        try:
            out = hybridize(bundle, a, b, mask, seed=req.seed)
        except Exception as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return {"png": png_to_b64(out)}

    return app


def load_bundle(checkpoint_path):
    """Load a checkpoint read-only for serving; refuses bad files."""
    from .checkpoint import load_model_checkpoint

    model, meta, _ = load_model_checkpoint(checkpoint_path)
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    ckpt_id = os.path.basename(checkpoint_path)
    return ModelBundle(model, checkpoint_id=ckpt_id)


def serve(checkpoint_path, port, host="127.0.0.1", state_dir=None):
    """Start the HTTP service on a checkpoint (blocking)."""
    import uvicorn

    bundle = load_bundle(checkpoint_path)
    app = create_app(bundle, state_dir=state_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")
