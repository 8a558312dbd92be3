"""HTTP backend for the labeling UI.

Endpoints live under ``/api/v1``: clip listing, frame serving, taxonomy
and rule introspection for building the element panels, court-region
lookup for click-to-position entry, annotation put with validation,
conflict reporting and manifest export.  Writes are last-writer-wins with
a version echo; export works on the store's current snapshot so the
service stays responsive.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Header, HTTPException, Query, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from ..dataset_io import (ClipManifest, load_clip_payload, read_manifest,
                          write_manifest)
from ..rulebook import load_rules
from ..taxonomy import TaxonomyError
from .court import CourtCalibration, court_region, default_calibration
from .store import AnnotationError, AnnotationRecord, AnnotationStore, resolve_majority


class EventIn(BaseModel):
    frame: int
    type: str                      # event-type string, any field order
    click: tuple[float, float] | None = None


class AnnotationIn(BaseModel):
    annotator: str
    status: str = "submitted"
    base_version: int = 0
    override: bool = False
    events: list[EventIn]


def create_app(data_dir, log_path=None, frontend_dir=None):
    """Build the FastAPI app serving one dataset directory."""
    root = Path(data_dir)
    clips, taxonomy = read_manifest(root / "manifest.f3")
    rules = load_rules(taxonomy)
    by_id = {c.clip_id: c for c in clips}
    store = AnnotationStore(
        taxonomy, log_path or root / "annotations.f3log")
    payload_cache = {}
    calibration = default_calibration(
        256, 256, tuple(taxonomy.subclass("court").elements))

    app = FastAPI(title="f3 annotation service")
    api = "/api/v1"

    def clip_or_404(clip_id) -> ClipManifest:
        clip = by_id.get(clip_id)
        if clip is None:
            raise HTTPException(404, f"unknown clip {clip_id!r}")
        return clip

    @app.get(api + "/clips")
    def list_clips():
        return [{
            "clip_id": c.clip_id,
            "video_id": c.video_id,
            "fps": c.fps,
            "num_frames": c.num_frames,
            "split": c.split,
            "annotators": store.annotators(c.clip_id),
        } for c in clips]

    @app.get(api + "/clips/{clip_id}")
    def clip_detail(clip_id: str, annotator: str | None = None):
        clip = clip_or_404(clip_id)
        out = {
            "clip_id": clip.clip_id,
            "fps": clip.fps,
            "num_frames": clip.num_frames,
            "near_hand": clip.ctx.near_hand,
            "far_hand": clip.ctx.far_hand,
            "serving": clip.ctx.serving,
        }
        if annotator:
            rec = store.get(clip_id, annotator)
            if rec:
                out["annotation"] = _record_out(rec)
        return out

    @app.get(api + "/clips/{clip_id}/frames/{index}")
    def get_frame(clip_id: str, index: int):
        clip = clip_or_404(clip_id)
        if not (0 <= index < clip.num_frames):
            raise HTTPException(404, f"frame {index} out of range")
        png = _frame_png(clip, index)
        return Response(content=png, media_type="image/png")

    @app.get(api + "/clips/{clip_id}/court-region")
    def region(clip_id: str, x: float = Query(...), y: float = Query(...)):
        clip_or_404(clip_id)
        name = court_region(x, y, calibration)
        end, _, court = name.partition("-")
        if name == "out":
            return {"region": "out", "court": None, "end": None}
        return {"region": name, "court": court, "end": end}

    @app.get(api + "/taxonomy")
    def taxonomy_doc():
        return {
            "name": taxonomy.name,
            "subclasses": [{
                "index": sc.index,
                "name": sc.name,
                "always_one": sc.always_one,
                "elements": list(sc.elements),
            } for sc in taxonomy.subclasses],
            "granularities": {name: sorted(g.indices)
                              for name, g in taxonomy.granularities.items()},
        }

    @app.get(api + "/rules/combination")
    def combination_rules():
        return [{
            "id": rule.id,
            "when": cond_sc,
            "when_elements": sorted(cond_els),
            "mode": mode,
            "target": target_sc,
            "allowed": sorted(allowed),
        } for rule, cond_sc, cond_els, mode, target_sc, allowed
            in rules.combinations if rule.hard]

    @app.put(api + "/clips/{clip_id}/annotations")
    def put_annotation(clip_id: str, body: AnnotationIn):
        clip = clip_or_404(clip_id)
        events = []
        for i, ev in enumerate(body.events):
            if not (0 <= ev.frame < clip.num_frames):
                raise HTTPException(422, detail=[
                    f"events[{i}].frame: outside [0, {clip.num_frames})"])
            try:
                vec = taxonomy.parse_event(ev.type)
            except TaxonomyError as exc:
                raise HTTPException(422, detail=[f"events[{i}].type: {exc}"])
            events.append((ev.frame, vec, ev.click))
        record = AnnotationRecord(clip_id, body.annotator, events,
                                  status=body.status)
        try:
            version = store.put(record, rules=rules, override=body.override)
        except AnnotationError as exc:
            raise HTTPException(422, detail=exc.details or [str(exc)])
        return {"clip_id": clip_id, "annotator": body.annotator,
                "version": version,
                "superseded": body.base_version not in (0, version - 1)}

    @app.get(api + "/conflicts")
    def conflicts():
        out = []
        for clip_id in store.clips():
            records = store.records_for(clip_id)
            if not records:
                continue
            _events, conf = resolve_majority(records, taxonomy)
            for c in conf:
                out.append({"clip_id": clip_id, **c,
                            "unresolved": [[sc, votes]
                                           for sc, votes in c["unresolved"]]})
        return out

    @app.post(api + "/export")
    def export(path: str | None = None):
        exported = []
        for clip in clips:
            records = store.records_for(clip.clip_id)
            if not records:
                continue
            events, _conf = resolve_majority(records, taxonomy)
            exported.append(ClipManifest(
                clip.clip_id, clip.fps, clip.num_frames, events,
                video_id=clip.video_id, split=clip.split,
                source_kind=clip.source_kind, source_path=clip.source_path,
                ctx=clip.ctx))
        target = Path(path) if path else root / "annotated-manifest.f3"
        write_manifest(exported, target, taxonomy)
        return {"path": str(target), "clips": len(exported),
                "events": sum(len(c.events) for c in exported),
                "manifest": target.read_text()}

    if frontend_dir and Path(frontend_dir).is_dir():
        app.mount("/", StaticFiles(directory=frontend_dir, html=True),
                  name="frontend")

    def _record_out(rec):
        return {
            "version": rec.version,
            "status": rec.status,
            "events": [{
                "frame": f,
                "type": taxonomy.decode(vec),
                "click": list(click) if click else None,
            } for f, vec, click in rec.events],
        }

    def _frame_png(clip, index):
        from PIL import Image

        if clip.source_kind == "frames":
            path = root / clip.source_path / f"{index:06d}.png"
            return path.read_bytes()
        if clip.clip_id not in payload_cache:
            payload_cache.clear()
            payload_cache[clip.clip_id] = load_clip_payload(clip, root)
        payload = payload_cache[clip.clip_id]
        # feature clips have no imagery; draw the feature row as a tile map
        row = np.asarray(payload[index], dtype=np.float64)
        side = int(np.ceil(np.sqrt(row.size)))
        tile = np.zeros(side * side)
        tile[:row.size] = row
        lo, hi = tile.min(), tile.max()
        tile = (tile - lo) / (hi - lo) if hi > lo else tile * 0
        img = Image.fromarray((tile.reshape(side, side) * 255).astype(np.uint8))
        img = img.resize((256, 256), Image.NEAREST).convert("RGB")
        buf = io.BytesIO()
        img.save(buf, format="PNG")
        return buf.getvalue()

    app.state.store = store
    app.state.taxonomy = taxonomy
    app.state.clips = clips
    return app
