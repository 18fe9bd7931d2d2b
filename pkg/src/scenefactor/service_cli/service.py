"""HTTP edit service: scene sessions over a JSON API.

One server process holds the loaded model set and any number of scene
sessions.  Synthesis and edit resampling run on background threads — one
in-flight job per session — while reads always serve the last committed
state (grids, meshes, snapshots), so a long resynthesis never blocks the
UI.  Session ids are handed out by the server; all state is in-process.

Status codes: 404 unknown session, 409 for an edit while a job is
running (or reads before the first commit), 422 for requests that fail
validation.
"""
from __future__ import annotations

import base64
import itertools
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from fastapi import FastAPI, HTTPException, Response
from pydantic import BaseModel, Field

from ..grids.core import GeometryGrid, SemanticGrid
from ..metrics import EmptySurfaceError
from ..scenegen import (
    EditRequest,
    SceneModels,
    SceneSession,
    apply_edit,
    save_snapshot,
    synthesize,
    validate_edit,
)
from ..synthdata.scenes import CHANNEL_CATEGORY
from .meshes import mesh_arrays, mesh_payload, stl_bytes
from .training import load_scene_models

#: Wire names for the ten semantic channels, in channel order.
CATEGORY_LABELS = {0: "free", 1: "wall/floor", **CHANNEL_CATEGORY}

Region = tuple[tuple[int, int, int], tuple[int, int, int]]


class SceneCreateBody(BaseModel):
    captions: list[str] = Field(min_length=1)
    layout: tuple[int, int] = (1, 1)
    seed: int = 0
    edit_steps: Optional[int] = None


class EditBody(BaseModel):
    op: Literal["add", "remove", "replace", "resize", "move"]
    region: Region
    category: Optional[int] = None
    target_region: Optional[Region] = None

    def to_request(self) -> EditRequest:
        return EditRequest(
            op=self.op,
            region=tuple(tuple(int(c) for c in corner) for corner in self.region),
            category=self.category,
            target_region=None if self.target_region is None else tuple(
                tuple(int(c) for c in corner) for corner in self.target_region),
        )


@dataclass
class _Committed:
    semantic: SemanticGrid
    geometry: GeometryGrid
    snapshot: bytes


class _Record:
    """One scene session plus its job state; mutations are serialized."""

    def __init__(self, sid: str, session: SceneSession):
        self.id = sid
        self.session = session
        self.state = "synthesizing"
        self.error: Optional[str] = None
        self.progress: tuple[str, int, int] = ("queued", 0, 1)
        self.committed: Optional[_Committed] = None
        self.edits_applied = 0
        self.lock = threading.Lock()


class SessionStore:
    def __init__(self):
        self._records: dict[str, _Record] = {}
        self._lock = threading.Lock()
        self._counter = itertools.count(1)

    def create(self, session: SceneSession) -> _Record:
        with self._lock:
            record = _Record(f"scene-{next(self._counter):04d}", session)
            self._records[record.id] = record
            return record

    def get(self, sid: str) -> _Record:
        with self._lock:
            record = self._records.get(sid)
        if record is None:
            raise HTTPException(status_code=404, detail=f"unknown session {sid!r}")
        return record


def _snapshot_bytes(session: SceneSession) -> bytes:
    with tempfile.TemporaryDirectory(prefix="scenefactor-snap-") as tmp:
        path = save_snapshot(session, Path(tmp) / "snapshot.sfcb")
        return path.read_bytes()


def _commit(record: _Record) -> None:
    session = record.session
    record.committed = _Committed(
        semantic=session.semantic_scene,
        geometry=session.geometry_scene,
        snapshot=_snapshot_bytes(session),
    )


def _run_job(record: _Record, work, stage_total: int) -> None:
    try:
        work()
        _commit(record)
        record.progress = ("done", stage_total, stage_total)
        record.state = "ready"
    except Exception as exc:  # surfaced via /progress, session stays inspectable
        record.error = f"{type(exc).__name__}: {exc}"
        record.state = "error"


def _b64(array: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(array).tobytes()).decode("ascii")


def create_app(models: Optional[SceneModels] = None,
               home: Optional[str] = None,
               checkpoint_paths: Optional[dict] = None) -> FastAPI:
    """Build the service; models load from checkpoints unless given directly."""
    if models is None:
        models = load_scene_models(home, paths=checkpoint_paths)
    app = FastAPI(title="scenefactor", description=__doc__ or "")
    store = SessionStore()
    app.state.models = models
    app.state.store = store

    def _describe(record: _Record) -> dict:
        session = record.session
        return {
            "id": record.id,
            "state": record.state,
            "error": record.error,
            "captions": list(session.captions),
            "layout": list(session.scene_chunks),
            "seed": session.seed,
            "edit_steps": session.edit_steps,
            "preset": models.preset.name,
            "semantic_dims": list(session.sem_voxel_layout.scene_dims_vox),
            "geometric_dims": list(session.geo_voxel_layout.scene_dims_vox),
            "sem_voxel_m": models.preset.sem_voxel_m,
            "geo_voxel_m": models.preset.geo_voxel_m,
            "committed": record.committed is not None,
            "edits_applied": record.edits_applied,
        }

    def _committed_or_409(record: _Record) -> _Committed:
        committed = record.committed
        if committed is None:
            raise HTTPException(
                status_code=409,
                detail="no committed scene state yet; poll /progress until ready")
        return committed

    @app.post("/scenes", status_code=201)
    def create_scene(body: SceneCreateBody) -> dict:
        try:
            session = SceneSession(
                models, tuple(body.layout), list(body.captions),
                seed=body.seed, edit_steps=body.edit_steps)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        record = store.create(session)

        def work():
            def on_progress(stage: str, done: int, total: int) -> None:
                record.progress = (stage, done, total)
            synthesize(session, progress=on_progress)

        threading.Thread(target=_run_job, args=(record, work, 4),
                         daemon=True).start()
        return _describe(record)

    @app.get("/scenes/{sid}")
    def get_scene(sid: str) -> dict:
        return _describe(store.get(sid))

    @app.get("/scenes/{sid}/progress")
    def get_progress(sid: str) -> dict:
        record = store.get(sid)
        stage, done, total = record.progress
        return {"state": record.state, "stage": stage, "completed": done,
                "total": total, "error": record.error}

    @app.get("/scenes/{sid}/semantic")
    def get_semantic(sid: str) -> dict:
        committed = _committed_or_409(store.get(sid))
        grid = committed.semantic
        labels = grid.labels()
        return {
            "dims": list(labels.shape),
            "voxel_size_m": float(grid.voxel_size_m),
            "origin": list(grid.origin),
            "dtype": "uint8",
            "order": "C",
            "labels_b64": _b64(labels.astype(np.uint8)),
            "categories": {str(k): v for k, v in CATEGORY_LABELS.items()},
        }

    @app.get("/scenes/{sid}/geometry")
    def get_geometry(sid: str, format: str = "udf"):
        committed = _committed_or_409(store.get(sid))
        grid = committed.geometry
        if format == "udf":
            return {
                "dims": list(grid.data.shape),
                "voxel_size_m": float(grid.voxel_size_m),
                "origin": list(grid.origin),
                "trunc_voxels": float(grid.trunc_voxels),
                "dtype": "float32",
                "order": "C",
                "values_b64": _b64(grid.data.astype("<f4")),
            }
        if format in ("mesh", "stl"):
            try:
                if format == "mesh":
                    return mesh_payload(grid)
                verts, faces = mesh_arrays(grid)
                return Response(content=stl_bytes(verts, faces),
                                media_type="application/octet-stream")
            except EmptySurfaceError as exc:
                raise HTTPException(status_code=409, detail=str(exc)) from exc
        raise HTTPException(status_code=422,
                            detail=f"format must be udf|mesh|stl, got {format!r}")

    @app.get("/scenes/{sid}/snapshot")
    def get_snapshot(sid: str) -> Response:
        committed = _committed_or_409(store.get(sid))
        return Response(
            content=committed.snapshot,
            media_type="application/octet-stream",
            headers={"Content-Disposition":
                     f'attachment; filename="{sid}.sfcb"'})

    @app.post("/scenes/{sid}/edits", status_code=202)
    def post_edit(sid: str, body: EditBody) -> dict:
        record = store.get(sid)
        request = body.to_request()
        with record.lock:
            if record.state == "synthesizing":
                raise HTTPException(
                    status_code=409,
                    detail="a synthesis job is already running for this session")
            if record.state == "error":
                raise HTTPException(
                    status_code=409,
                    detail=f"session is in error state: {record.error}")
            try:
                validate_edit(record.session, request)
            except ValueError as exc:  # EditError included
                raise HTTPException(status_code=422, detail=str(exc)) from exc
            record.state = "synthesizing"
            record.progress = ("edit", 0, 1)

        def work():
            apply_edit(record.session, request)
            record.edits_applied += 1

        threading.Thread(target=_run_job, args=(record, work, 1),
                         daemon=True).start()
        return {"id": record.id, "state": record.state, "op": request.op}

    return app
