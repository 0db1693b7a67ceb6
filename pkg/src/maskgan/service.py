"""HTTP inference service for interactive mask editing.

Only the mapping network is needed at test time. A session pins a target
(image, mask) pair and caches its style parameters once; every edit just
re-renders the cached style over the edited mask, so the target is never
mutated and identical edits give identical bytes.

Endpoints: POST /sessions (multipart image + optional mask), POST
/sessions/{id}/edits (PNG body in, PNG body out), GET /sessions/{id},
GET /palette, GET /healthz. Sessions live in memory with LRU eviction;
with a session directory configured the uploaded pair is persisted and a
restarted service lazily rebuilds the style cache on first touch.
"""
from __future__ import annotations

import base64
import threading
import time
import uuid
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from fastapi import FastAPI, File, Request, UploadFile
from fastapi.responses import JSONResponse, Response

from .checkpoint import load_checkpoint
from .config import TrainConfig
from .data import oracle_parse, resize_image
from .dmn import DenseMappingNetwork, StyleParams
from .masks import (
    CodecError,
    ImageTensor,
    LabelMask,
    decode_image_png,
    decode_mask_png,
    encode_image_png,
    encode_mask_png,
    image_to_uint8,
    resize_mask,
)
from .palette import CategoryPalette


class ServiceError(Exception):
    def __init__(self, status_code: int, detail):
        super().__init__(detail)
        self.status_code = status_code
        self.detail = detail


class InferenceEngine:
    """A loaded mapping network plus its palette and working resolution."""

    def __init__(self, dmn: DenseMappingNetwork, palette: CategoryPalette,
                 config: TrainConfig):
        self.dmn = dmn.eval()
        for p in self.dmn.parameters():
            p.requires_grad_(False)
        self.palette = palette
        self.config = config
        self.resolution = config.resolution

    @classmethod
    def load(cls, ckpt_path) -> "InferenceEngine":
        from .training import scaled_depth

        ckpt = load_checkpoint(ckpt_path)
        config = TrainConfig.from_dict(ckpt.config)
        palette = CategoryPalette.from_json(ckpt.extras["palette"])
        dmn = DenseMappingNetwork(palette.count, config.width_scale, config.residual_blocks,
                                  config.fusion_mode, downs=scaled_depth(config.resolution),
                                  up_norm=config.decoder_norm == "in")
        dmn.load_state_dict(ckpt.namespace("dmn"))
        return cls(dmn, palette, config)

    def _to_tensors(self, image: ImageTensor, mask: LabelMask):
        img = torch.from_numpy(np.ascontiguousarray(image.values.transpose(2, 0, 1))).unsqueeze(0)
        labels = torch.from_numpy(mask.labels.astype(np.int64)).unsqueeze(0)
        onehot = torch.zeros(1, self.palette.count, *mask.labels.shape)
        onehot.scatter_(1, labels.unsqueeze(1), 1.0)
        return img, onehot

    @torch.no_grad()
    def compute_style(self, image: ImageTensor, mask: LabelMask) -> StyleParams:
        img, onehot = self._to_tensors(image, mask)
        return self.dmn.style(img, onehot)

    @torch.no_grad()
    def render(self, style: StyleParams, mask: LabelMask) -> ImageTensor:
        _, onehot = self._to_tensors(
            ImageTensor(np.zeros((mask.height, mask.width, 3), dtype=np.float32)), mask)
        out = self.dmn.generate(style, onehot)
        return ImageTensor(out[0].numpy().transpose(1, 2, 0))

    def parse_image(self, image: ImageTensor) -> LabelMask:
        """Bundled fallback parser: nearest palette display color per pixel."""
        return oracle_parse(image_to_uint8(image), self.palette.color_array())

    def fit_image(self, image: ImageTensor) -> ImageTensor:
        if (image.height, image.width) != (self.resolution, self.resolution):
            image = resize_image(image, self.resolution, self.resolution)
        return image

    def fit_mask(self, mask: LabelMask) -> LabelMask:
        if (mask.height, mask.width) != (self.resolution, self.resolution):
            mask = resize_mask(mask, self.resolution, self.resolution)
        return mask


@dataclass
class EditSession:
    id: str
    image: ImageTensor
    mask: LabelMask
    style: StyleParams
    created: float = field(default_factory=time.time)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    edits: int = 0


class SessionStore:
    """LRU session map, optionally mirrored to a directory for rebuilds."""

    def __init__(self, engine: InferenceEngine, capacity: int = 64,
                 session_dir: Optional[Path] = None):
        self.engine = engine
        self.capacity = capacity
        self.session_dir = Path(session_dir) if session_dir else None
        self._sessions: "OrderedDict[str, EditSession]" = OrderedDict()
        self._lock = threading.Lock()

    def create(self, image: ImageTensor, mask: LabelMask) -> EditSession:
        session = EditSession(
            id=uuid.uuid4().hex, image=image, mask=mask,
            style=self.engine.compute_style(image, mask),
        )
        self._persist(session)
        with self._lock:
            self._sessions[session.id] = session
            while len(self._sessions) > self.capacity:
                self._sessions.popitem(last=False)
        return session

    def get(self, session_id: str) -> EditSession:
        with self._lock:
            session = self._sessions.get(session_id)
            if session is not None:
                self._sessions.move_to_end(session_id)
                return session
        session = self._rebuild(session_id)
        if session is None:
            raise ServiceError(404, f"unknown session {session_id}")
        with self._lock:
            self._sessions[session_id] = session
            while len(self._sessions) > self.capacity:
                self._sessions.popitem(last=False)
        return session

    def _persist(self, session: EditSession) -> None:
        if self.session_dir is None:
            return
        root = self.session_dir / session.id
        root.mkdir(parents=True, exist_ok=True)
        (root / "image.png").write_bytes(encode_image_png(session.image))
        (root / "mask.png").write_bytes(encode_mask_png(session.mask, self.engine.palette))

    def _rebuild(self, session_id: str) -> Optional[EditSession]:
        if self.session_dir is None:
            return None
        root = self.session_dir / session_id
        if not (root / "image.png").exists():
            return None
        image = decode_image_png((root / "image.png").read_bytes())
        mask = decode_mask_png((root / "mask.png").read_bytes(), self.engine.palette)
        return EditSession(id=session_id, image=image, mask=mask,
                           style=self.engine.compute_style(image, mask))

    def __len__(self):
        with self._lock:
            return len(self._sessions)


def _png_b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def create_app(engine: Optional[InferenceEngine],
               session_dir: Optional[Path] = None, capacity: int = 64) -> FastAPI:
    app = FastAPI(title="maskgan inference service")
    store = SessionStore(engine, capacity, session_dir) if engine else None
    app.state.store = store
    app.state.engine = engine

    @app.exception_handler(ServiceError)
    async def service_error_handler(request, exc: ServiceError):
        return JSONResponse(status_code=exc.status_code, content={"detail": exc.detail})

    def need_engine() -> InferenceEngine:
        if engine is None:
            raise ServiceError(503, "no model loaded")
        return engine

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "model_loaded": engine is not None}

    @app.get("/palette")
    def palette():
        return {**need_engine().palette.to_json(), "resolution": engine.resolution}

    @app.post("/sessions")
    async def create_session(image: UploadFile = File(...),
                             mask: UploadFile = File(default=None)):
        eng = need_engine()
        try:
            img = eng.fit_image(decode_image_png(await image.read()))
        except CodecError as exc:
            raise ServiceError(400, f"bad image upload: {exc}")
        if mask is not None:
            try:
                decoded = decode_mask_png(await mask.read(), eng.palette,
                                          check_embedded_palette=True)
            except CodecError as exc:
                raise ServiceError(422, f"bad mask upload: {exc}")
            m = eng.fit_mask(decoded)
        else:
            m = eng.parse_image(img)
        session = app.state.store.create(img, m)
        render = eng.render(session.style, session.mask)
        return {
            "id": session.id,
            "height": eng.resolution,
            "width": eng.resolution,
            "palette": eng.palette.to_json(),
            "mask_png": _png_b64(encode_mask_png(session.mask, eng.palette)),
            "render_png": _png_b64(encode_image_png(render)),
        }

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        need_engine()
        session = app.state.store.get(session_id)
        return {
            "id": session.id,
            "created": session.created,
            "edits": session.edits,
            "height": session.mask.height,
            "width": session.mask.width,
        }

    @app.post("/sessions/{session_id}/edits")
    async def apply_edit(session_id: str, request: Request):
        eng = need_engine()
        session = app.state.store.get(session_id)
        body = await request.body()
        try:
            edited = decode_mask_png(body, eng.palette, check_embedded_palette=True)
        except CodecError as exc:
            raise ServiceError(422, str(exc))
        if (edited.height, edited.width) != (eng.resolution, eng.resolution):
            raise ServiceError(
                422, f"mask must be {eng.resolution}x{eng.resolution}, "
                     f"got {edited.height}x{edited.width}")
        with session.lock:  # edits to one session serialize; others untouched
            render = eng.render(session.style, edited)
            session.edits += 1
        return Response(content=encode_image_png(render), media_type="image/png")

    return app


def infer_once(engine: InferenceEngine, target_image: ImageTensor, target_mask: LabelMask,
               source_mask: LabelMask) -> bytes:
    """Single-shot equivalent of create_session + apply_edit; returns PNG."""
    image = engine.fit_image(target_image)
    mask = engine.fit_mask(target_mask)
    style = engine.compute_style(image, mask)
    render = engine.render(style, engine.fit_mask(source_mask))
    return encode_image_png(render)
