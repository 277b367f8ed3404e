"""HTTP service for the interactive studio.

One generator and one clustered bank are loaded for the process; fields are
created, edited, and refined against them. Every field has a single-writer
lock: edits and refinement steps serialize on it, while tile rendering and
event streaming read consistent snapshots between writes. Tiles are a pure
function of the field bytes, so responses carry the field revision as ETag.

Events go out as line-delimited JSON on /fields/{id}/events: `dirty` records
a pixel/cell rect to re-fetch, `energy` the trace of the background
refinement, `refine` its start/stop transitions.
"""

from __future__ import annotations

import base64
import json
import math
import queue
import threading
import time
import uuid

import numpy as np
from fastapi import FastAPI, HTTPException, Request, Response
from fastapi.responses import JSONResponse, StreamingResponse
from pydantic import BaseModel

from .bank import SampleBank
from .editor import EditCommand, Editor, dirty_for
from .errors import CompatibilityError, FormatError, StateError
from .generator import Generator, halo_for, pixel_scale, render_region
from .service_io import decode_png, downsample_u8, encode_png, to_uint8
from .synthesis import (
    EnergyParams,
    FieldState,
    GuidanceMap,
    _pick_cell,
    better_match,
    initial_tiling,
    load_field,
)
from .tensor import Rng

TILE_SIZE = 256


class CreateFieldBody(BaseModel):
    guidance_png_b64: str | None = None
    field_b64: str | None = None
    cells: str | list | None = None
    theta: float | None = 0.85
    top_k: int = 10
    max_refine_steps: int | None = None


class EditBody(BaseModel):
    kind: str
    rect: list
    params: dict = {}
    seed: int = 0


class RefineBody(BaseModel):
    action: str


class FieldSession:
    """Server-side state for one open field."""

    def __init__(self, fid: str, state: FieldState, editor: Editor, params: EnergyParams,
                 refine_seed: int = 1):
        self.id = fid
        self.state = state
        self.editor = editor
        self.params = params
        self.lock = threading.RLock()
        self.subscribers: list = []
        self.refine_running = False
        self.refine_steps = 0
        self.refine_reason: str | None = None
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._rng = Rng(refine_seed)

    def publish(self, event: dict):
        for q in list(self.subscribers):
            q.put(event)

    # -- background refinement --------------------------------------------

    def start_refine(self, gen: Generator, bank: SampleBank):
        with self.lock:
            if self.refine_running:
                return
            if self.state.guidance is None or self.state.energy is None:
                raise StateError("field has no guidance map; nothing to refine against")
            self.refine_running = True
            self.refine_reason = None
            self._stop.clear()
            self._thread = threading.Thread(
                target=self._refine_loop, args=(gen, bank), daemon=True)
            self._thread.start()
        self.publish({"type": "refine", "status": "running"})

    def stop_refine(self):
        self._stop.set()
        t = self._thread
        if t is not None:
            t.join(timeout=5.0)

    def _refine_loop(self, gen: Generator, bank: SampleBank):
        state = self.state
        cap = (self.params.max_refine_steps if self.params.max_refine_steps is not None
               else 20 * state.n_cells)
        reason = "stopped"
        while not self._stop.is_set():
            with self.lock:
                if state.energy.e <= state.theta_abs:
                    reason = "energy"
                    break
                if self.refine_steps >= cap:
                    reason = "step-cap"
                    break
                cell = _pick_cell(state, self._rng)
                decision = better_match(state, cell, bank, state.guidance, self.params)
                state.last_refined = cell
                self.refine_steps += 1
                events = [{"type": "energy", "energy": state.energy.e,
                           "step": self.refine_steps}]
                if decision.changed:
                    cx, cy = cell
                    dirty = dirty_for(gen.spec, state.field, (cx, cy, cx + 1, cy + 1))
                    events.append({
                        "type": "dirty",
                        "cell_rect": list(dirty.cell_rect),
                        "pixel_rect": list(dirty.pixel_rect),
                        "revision": state.revision,
                    })
            for ev in events:
                self.publish(ev)
            time.sleep(0)  # let API requests interleave
        with self.lock:
            self.refine_running = False
            self.refine_reason = reason
        self.publish({"type": "refine", "status": "idle", "reason": reason})


def create_app(gen: Generator, bank: SampleBank, ui_dir: str | None = None) -> FastAPI:
    if not bank.clustered:
        raise ValueError("the server needs a clustered bank")
    app = FastAPI(title="tilegan service")
    sessions: dict[str, FieldSession] = {}
    scale = pixel_scale(gen.spec, bank.level)

    def get_session(fid: str) -> FieldSession:
        fs = sessions.get(fid)
        if fs is None:
            raise HTTPException(404, f"no field {fid!r}")
        return fs

    @app.exception_handler(ValueError)
    async def _value_error(request: Request, exc: ValueError):
        status = 409 if isinstance(exc, CompatibilityError) else 400
        return JSONResponse(status_code=status, content={"detail": str(exc)})

    @app.exception_handler(StateError)
    async def _state_error(request: Request, exc: StateError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    # -- fields -------------------------------------------------------------

    @app.post("/fields", status_code=201)
    def create_field(body: CreateFieldBody):
        params = EnergyParams(
            theta_frac=math.inf if body.theta is None else body.theta,
            top_k=body.top_k, max_refine_steps=body.max_refine_steps)
        if body.field_b64 is not None:
            field = load_field(base64.b64decode(body.field_b64), bank)
            state = FieldState(field=field, spec=gen.spec)
        else:
            if not body.guidance_png_b64 or body.cells is None:
                raise HTTPException(400, "need guidance_png_b64 and cells (or field_b64)")
            if isinstance(body.cells, str):
                try:
                    cw, ch = (int(v) for v in body.cells.lower().split("x"))
                except ValueError:
                    raise HTTPException(400, f"cells must be WxH, got {body.cells!r}")
            else:
                cw, ch = int(body.cells[0]), int(body.cells[1])
            guidance = GuidanceMap(image=decode_png(base64.b64decode(body.guidance_png_b64)),
                                   cells_x=cw, cells_y=ch)
            state = initial_tiling(bank, guidance, params)
            state.spec = gen.spec
        fid = uuid.uuid4().hex[:12]
        editor = Editor(state, bank, gen.spec, params)
        sessions[fid] = FieldSession(fid, state, editor, params)
        return field_info(fid)

    def _finite(x):
        return None if x is None or not math.isfinite(x) else x

    def field_info(fid: str) -> dict:
        fs = get_session(fid)
        st = fs.state
        energy = None
        if st.energy is not None:
            energy = {"e": st.energy.e, "e_m": st.energy.e_m, "e_n": st.energy.e_n,
                      "initial": _finite(st.e_initial), "threshold": _finite(st.theta_abs)}
        return {
            "id": fid,
            "level": st.field.level,
            "cell_size": st.field.cell_size,
            "cells_x": st.cells_x,
            "cells_y": st.cells_y,
            "pixel_width": st.field.width * scale,
            "pixel_height": st.field.height * scale,
            "tile_size": TILE_SIZE,
            "revision": st.revision,
            "energy": energy,
            "refine": {"running": fs.refine_running, "steps": fs.refine_steps,
                       "reason": fs.refine_reason},
        }

    @app.get("/fields/{fid}")
    def get_field(fid: str):
        fs = get_session(fid)
        with fs.lock:
            return field_info(fid)

    # -- edits ----------------------------------------------------------------

    @app.post("/fields/{fid}/edits")
    def post_edit(fid: str, body: EditBody):
        fs = get_session(fid)
        try:
            cmd = EditCommand(kind=body.kind, rect=tuple(body.rect),
                              params=body.params, seed=body.seed)
        except ValueError as e:
            raise HTTPException(400, str(e))
        with fs.lock:
            dirty = fs.editor.apply(cmd)
            st = fs.state
            cells = []
            x0, y0, x1, y1 = dirty.cell_rect
            for yy in range(y0, y1):
                for xx in range(x0, x1):
                    cells.append({"cell": [xx, yy],
                                  "sample_id": int(st.field.sample_ids[yy, xx]),
                                  "cluster": int(st.field.cluster_ids[yy, xx])})
            result = {
                "dirty": {"cell_rect": list(dirty.cell_rect),
                          "pixel_rect": list(dirty.pixel_rect)},
                "revision": st.revision,
                "cells": cells,
                "affected_cells": sorted(list(fs.editor.last_affected_cells)),
                "energy": None if st.energy is None else st.energy.e,
            }
        if not dirty.empty:
            fs.publish({"type": "dirty", "cell_rect": list(dirty.cell_rect),
                        "pixel_rect": list(dirty.pixel_rect), "revision": result["revision"]})
        if result["energy"] is not None:
            fs.publish({"type": "energy", "energy": result["energy"], "step": fs.refine_steps})
        return result

    # -- refinement -------------------------------------------------------------

    @app.post("/fields/{fid}/refine")
    def post_refine(fid: str, body: RefineBody):
        fs = get_session(fid)
        if body.action == "start":
            fs.start_refine(gen, bank)
        elif body.action == "stop":
            fs.stop_refine()
        else:
            raise HTTPException(400, f"action must be start or stop, got {body.action!r}")
        with fs.lock:
            return {"running": fs.refine_running, "steps": fs.refine_steps,
                    "reason": fs.refine_reason}

    # -- tiles --------------------------------------------------------------------

    @app.get("/fields/{fid}/tiles/{z}/{tx}/{ty}")
    def get_tile(fid: str, z: int, tx: int, ty: int, request: Request):
        fs = get_session(fid)
        if z < 0 or tx < 0 or ty < 0:
            raise HTTPException(404, "tile out of range")
        factor = 2 ** z
        with fs.lock:
            st = fs.state
            revision = st.revision
            w_px, h_px = st.field.width * scale, st.field.height * scale
            nx0 = tx * TILE_SIZE * factor
            ny0 = ty * TILE_SIZE * factor
            if nx0 >= w_px or ny0 >= h_px:
                raise HTTPException(404, "tile out of range")
            etag = f'"{revision}"'
            if request.headers.get("if-none-match") == etag:
                return Response(status_code=304)
            nx1 = min(nx0 + TILE_SIZE * factor, w_px)
            ny1 = min(ny0 + TILE_SIZE * factor, h_px)
            patch = render_region(gen, st.field, (nx0, ny0, nx1, ny1))
        tile = downsample_u8(to_uint8(patch), factor)
        from PIL import Image
        import io as _io
        pil = Image.fromarray(tile.transpose(1, 2, 0), mode="RGB")
        buf = _io.BytesIO()
        pil.save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png",
                        headers={"ETag": etag, "Cache-Control": "private, max-age=0"})

    # -- clusters -----------------------------------------------------------------

    @app.get("/clusters")
    def get_clusters():
        out = []
        for j in range(bank.k):
            thumb = encode_png(bank.centers[j].astype(np.float32))
            out.append({
                "cluster": j,
                "size": len(bank.cluster_members(j)),
                "thumb_png_b64": base64.b64encode(thumb).decode("ascii"),
            })
        return out

    # -- events ------------------------------------------------------------------

    @app.get("/fields/{fid}/events")
    def get_events(fid: str, limit: int | None = None, timeout: float = 30.0):
        fs = get_session(fid)
        q: queue.Queue = queue.Queue()
        fs.subscribers.append(q)

        def stream():
            try:
                with fs.lock:
                    hello = {"type": "hello", "revision": fs.state.revision,
                             "refine": {"running": fs.refine_running, "steps": fs.refine_steps}}
                yield json.dumps(hello) + "\n"
                sent = 0
                while limit is None or sent < limit:
                    try:
                        ev = q.get(timeout=timeout)
                    except queue.Empty:
                        break
                    yield json.dumps(ev) + "\n"
                    sent += 1
            finally:
                if q in fs.subscribers:
                    fs.subscribers.remove(q)

        return StreamingResponse(stream(), media_type="application/x-ndjson")

    if ui_dir:
        from fastapi.staticfiles import StaticFiles
        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
