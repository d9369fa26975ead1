"""HTTP labelling service over a pipeline store.

Serves the chip projection, on-demand segment projections (as pollable
jobs), chip thumbnails, RLE segment masks, and an append-only label log
with CSV / mask exports.

Endpoints (UTF-8 JSON unless noted):
    GET  /api/meta
    GET  /api/projection/chips
    POST /api/projection/segments   {"chip_ids": [...]} -> {"job_id": ...}
    GET  /api/jobs/{job_id}
    GET  /api/chips/{chip_id}/thumbnail.png      (image/png)
    GET  /api/chips/{chip_id}/segments
    POST /api/labels
    GET  /api/labels/export?format=csv|masks     (text/csv | application/zip)

Segment masks use run-length encoding over the row-major flattened label
image: ``[start, length, start, length, ...]`` with ascending starts.
"""
from __future__ import annotations

import csv
import datetime as _dt
import io
import json
import logging
import os
import threading
import uuid
import zipfile
from pathlib import Path

import numpy as np
from fastapi import Body, FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import PlainTextResponse, Response
from PIL import Image

from . import ingest, pipeline, superpixels
from .config import PipelineConfig
from .pipeline import StorePaths
from .projection import Projection2D, read_projection

__all__ = ["ServiceError", "create_app", "serve", "thumbnail_png",
           "rle_encode", "rle_decode"]

log = logging.getLogger(__name__)

THUMBNAIL_SIZE = 256
CSV_HEADER = ["timestamp", "level", "chip_id", "segment_id", "label", "session"]


class ServiceError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# thumbnails
# ---------------------------------------------------------------------------

def _stretch_band(band: np.ndarray) -> np.ndarray:
    """2-98 percentile stretch to uint8; the percentile values themselves map
    to exactly 0 and 255. A flat band becomes uniform mid-grey."""
    lo, hi = np.percentile(band, [2.0, 98.0])
    if not np.isfinite(lo) or not np.isfinite(hi) or hi <= lo:
        return np.full(band.shape, 128, dtype=np.uint8)
    scaled = np.clip((band.astype(np.float64) - lo) / (hi - lo), 0.0, 1.0)
    return np.round(scaled * 255.0).astype(np.uint8)


def thumbnail_png(chip_data: np.ndarray,
                  display_bands: tuple[int, int, int] = (4, 3, 2),
                  size: int = THUMBNAIL_SIZE) -> bytes:
    """RGB PNG composite of three 1-based band numbers.

    Band numbers beyond the chip's band count clamp to the last band, so
    low-band stores degrade to a grey composite instead of failing.
    """
    bands = chip_data.shape[0]
    idx = [min(int(b), bands) - 1 for b in display_bands]
    rgb = np.stack([_stretch_band(chip_data[i]) for i in idx], axis=-1)
    img = Image.fromarray(rgb, mode="RGB")
    if img.size != (size, size):
        img = img.resize((size, size), Image.NEAREST)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# RLE masks
# ---------------------------------------------------------------------------

def rle_encode(labels: np.ndarray) -> dict[int, list[int]]:
    """Per-segment run-length encoding of a label image.

    Returns {segment_id: [start, length, ...]} over the row-major flattened
    image; every pixel belongs to exactly one run list.
    """
    flat = labels.ravel()
    if flat.size == 0:
        return {}
    boundaries = np.flatnonzero(np.diff(flat)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [flat.size]])
    out: dict[int, list[int]] = {}
    for start, end in zip(starts, ends):
        out.setdefault(int(flat[start]), []).extend([int(start), int(end - start)])
    return out


def rle_decode(runs: list[int], shape: tuple[int, int]) -> np.ndarray:
    """Boolean mask for one segment's ``[start, length, ...]`` run list."""
    mask = np.zeros(shape[0] * shape[1], dtype=bool)
    for i in range(0, len(runs), 2):
        start, length = runs[i], runs[i + 1]
        mask[start:start + length] = True
    return mask.reshape(shape)


# ---------------------------------------------------------------------------
# label log
# ---------------------------------------------------------------------------

class _LabelLog:
    """Append-only JSONL label store; one fsynced line per record."""

    def __init__(self, path: Path):
        self.path = path
        self._lock = threading.Lock()

    def append(self, record: dict) -> None:
        line = json.dumps(record, ensure_ascii=False)
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(line + "\n")
                f.flush()
                os.fsync(f.fileno())

    def read_all(self) -> list[dict]:
        if not self.path.exists():
            return []
        records = []
        with open(self.path, encoding="utf-8") as f:
            for n, line in enumerate(f, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError:
                    # only a crash mid-write can truncate a line; prior
                    # records stay valid
                    log.warning("skipping malformed label line %d", n)
        return records


# ---------------------------------------------------------------------------
# background jobs
# ---------------------------------------------------------------------------

class _Jobs:
    """Background segment-projection jobs, deduplicated per chip set."""

    def __init__(self):
        self._lock = threading.Lock()
        self._jobs: dict[str, dict] = {}
        self._by_key: dict[tuple, str] = {}

    def submit(self, key: tuple, work) -> str:
        with self._lock:
            existing = self._by_key.get(key)
            if existing is not None:
                return existing
            job_id = uuid.uuid4().hex[:12]
            self._jobs[job_id] = {"id": job_id, "status": "running",
                                  "result": None, "error": None}
            self._by_key[key] = job_id

        def run():
            try:
                result = work()
                with self._lock:
                    self._jobs[job_id].update(status="done", result=result)
            except Exception as err:  # surfaced through the job status
                with self._lock:
                    self._jobs[job_id].update(status="error", error=str(err))

        threading.Thread(target=run, daemon=True).start()
        return job_id

    def get(self, job_id: str) -> dict | None:
        with self._lock:
            job = self._jobs.get(job_id)
            return dict(job) if job else None


# ---------------------------------------------------------------------------
# app
# ---------------------------------------------------------------------------

def _projection_payload(proj: Projection2D) -> dict:
    return {"level": proj.level, "params": proj.params,
            "points": [{"id": pid, "x": float(x), "y": float(y)}
                       for pid, (x, y) in zip(proj.ids, proj.coords)]}


def _utc_now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def create_app(store: ingest.ChipStore,
               cfg: PipelineConfig | None = None) -> FastAPI:
    """Build the FastAPI app; raises ServiceError listing missing artifacts."""
    cfg = cfg or PipelineConfig(store=str(store.root))
    paths = StorePaths(store.root)
    missing = [p for p in (store.root / "manifest.json", paths.chip_projection)
               if not p.exists()]
    if missing:
        raise ServiceError(
            "cannot serve, missing artifacts: "
            + ", ".join(str(p) for p in missing))

    chip_projection = read_projection(paths.chip_projection)
    known_chips = set(store.chip_ids())
    labels = _LabelLog(paths.labels)
    jobs = _Jobs()
    thumb_cache: dict[str, bytes] = {}
    seg_lock = threading.Lock()

    app = FastAPI(title="terralabel", version="0.1.0")
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])
    app.state.store = store
    app.state.cfg = cfg

    def require_chip(cid: str) -> None:
        if cid not in known_chips:
            raise HTTPException(status_code=404, detail=f"unknown chip {cid!r}")

    def segment_map(cid: str) -> superpixels.SegmentMap:
        """Stored segment map, computed (and persisted) on first demand."""
        with seg_lock:
            path = paths.segments(cid)
            if not path.exists():
                seg = superpixels.slic(store.load_chip(cid).data,
                                       n_segments=cfg.n_segments,
                                       compactness=cfg.compactness,
                                       iters=cfg.slic_iters)
                path.parent.mkdir(parents=True, exist_ok=True)
                superpixels.write_segm(seg, path)
            return superpixels.read_segm(path)

    # -- meta ---------------------------------------------------------------

    @app.get("/api/meta")
    def meta() -> dict:
        splits = store.manifest.get("splits", {})
        return {
            "chip_count": len(known_chips),
            "bands": store.bands,
            "chip_size": store.chip_size,
            "display_bands": list(cfg.display_bands),
            "splits": {name: sum(1 for s in splits.values() if s == name)
                       for name in ("train", "test")},
            "label_count": len(labels.read_all()),
        }

    # -- projections ----------------------------------------------------------

    @app.get("/api/projection/chips")
    def projection_chips() -> dict:
        return _projection_payload(chip_projection)

    @app.post("/api/projection/segments")
    def projection_segments(payload: dict = Body(...)) -> dict:
        chip_ids = payload.get("chip_ids")
        if not isinstance(chip_ids, list) or not chip_ids:
            raise HTTPException(status_code=422,
                                detail="chip_ids must be a non-empty list")
        unknown = sorted(set(map(str, chip_ids)) - known_chips)
        if unknown:
            raise HTTPException(status_code=404,
                                detail=f"unknown chips: {', '.join(unknown)}")
        ordered = sorted(set(map(str, chip_ids)))
        for cid in ordered:  # the projection needs segment maps either way
            segment_map(cid)
        job_id = jobs.submit(
            tuple(ordered),
            lambda: _projection_payload(
                pipeline.project_segments(store, cfg, ordered)))
        return {"job_id": job_id}

    @app.get("/api/jobs/{job_id}")
    def job_status(job_id: str) -> dict:
        job = jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"unknown job {job_id!r}")
        return job

    # -- chip imagery ---------------------------------------------------------

    @app.get("/api/chips/{cid}/thumbnail.png")
    def thumbnail(cid: str) -> Response:
        require_chip(cid)
        if cid not in thumb_cache:
            thumb_cache[cid] = thumbnail_png(store.load_chip(cid).data,
                                             cfg.display_bands)
        return Response(content=thumb_cache[cid], media_type="image/png")

    @app.get("/api/chips/{cid}/segments")
    def chip_segments(cid: str) -> dict:
        require_chip(cid)
        seg = segment_map(cid)
        runs = rle_encode(seg.labels)
        return {
            "chip_id": cid,
            "height": int(seg.labels.shape[0]),
            "width": int(seg.labels.shape[1]),
            "segments": [{
                "id": int(info.id),
                "pixel_count": int(info.pixel_count),
                "centroid": [float(info.centroid_rc[0]), float(info.centroid_rc[1])],
                "rle": runs[int(info.id)],
            } for info in seg.segments],
        }

    # -- labels ---------------------------------------------------------------

    @app.post("/api/labels", status_code=201)
    def post_label(payload: dict = Body(...)) -> dict:
        problems = []
        level = payload.get("level")
        if level not in ("chip", "segment"):
            problems.append("level must be 'chip' or 'segment'")
        label = payload.get("label")
        if not isinstance(label, str) or not label.strip():
            problems.append("label must be a non-empty string")
        session = payload.get("session")
        if not isinstance(session, str) or not session:
            problems.append("session must be a non-empty string")
        segment_id = payload.get("segment_id")
        if level == "segment":
            if not isinstance(segment_id, int) or isinstance(segment_id, bool):
                problems.append("segment_id (integer) required for level=segment")
        elif level == "chip" and segment_id is not None:
            problems.append("segment_id must be absent for level=chip")
        if problems:
            raise HTTPException(status_code=422, detail="; ".join(problems))

        cid = str(payload.get("chip_id", ""))
        require_chip(cid)
        if level == "segment":
            seg = segment_map(cid)
            if not (0 <= segment_id < seg.n_segments):
                raise HTTPException(
                    status_code=422,
                    detail=f"segment_id {segment_id} out of range "
                           f"[0, {seg.n_segments}) for chip {cid}")

        record = {
            "timestamp": str(payload.get("timestamp") or _utc_now()),
            "level": level,
            "chip_id": cid,
            "segment_id": int(segment_id) if level == "segment" else None,
            "label": label.strip(),
            "session": session,
        }
        labels.append(record)
        return {"ok": True, "record": record}

    # -- exports ---------------------------------------------------------------

    def export_csv() -> PlainTextResponse:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for rec in labels.read_all():
            writer.writerow([
                rec.get("timestamp", ""), rec.get("level", ""),
                rec.get("chip_id", ""),
                "" if rec.get("segment_id") is None else rec["segment_id"],
                rec.get("label", ""), rec.get("session", ""),
            ])
        return PlainTextResponse(buf.getvalue(), media_type="text/csv")

    def export_masks() -> Response:
        records = [r for r in labels.read_all() if r.get("level") == "segment"]
        # later timestamp wins per (chip, segment); ties fall to file order
        winner: dict[tuple[str, int], dict] = {}
        for rec in records:
            key = (rec["chip_id"], int(rec["segment_id"]))
            prev = winner.get(key)
            if prev is None or rec["timestamp"] >= prev["timestamp"]:
                winner[key] = rec
        label_names = sorted({rec["label"] for rec in winner.values()})
        label_ids = {name: i + 1 for i, name in enumerate(label_names)}

        by_chip: dict[str, list[dict]] = {}
        for rec in winner.values():
            by_chip.setdefault(rec["chip_id"], []).append(rec)

        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
            zf.writestr("labels.json", json.dumps({"label_ids": label_ids},
                                                  indent=1))
            for cid, recs in sorted(by_chip.items()):
                seg = segment_map(cid)
                mask = np.zeros(seg.labels.shape, dtype=np.uint8)
                for rec in recs:
                    mask[seg.labels == int(rec["segment_id"])] = \
                        label_ids[rec["label"]]
                img_buf = io.BytesIO()
                Image.fromarray(mask, mode="L").save(img_buf, format="PNG")
                zf.writestr(f"{cid}.png", img_buf.getvalue())
        return Response(content=buf.getvalue(), media_type="application/zip")

    @app.get("/api/labels/export")
    def export_labels(format: str = "csv"):
        if format == "csv":
            return export_csv()
        if format == "masks":
            return export_masks()
        raise HTTPException(status_code=422,
                            detail=f"format must be csv or masks, got {format!r}")

    return app


def serve(store_root, cfg: PipelineConfig | None = None,
          host: str = "127.0.0.1", port: int = 8008) -> None:
    """Open the store and run the service until interrupted."""
    import uvicorn

    store = ingest.ChipStore.open(store_root)
    app = create_app(store, cfg)
    uvicorn.run(app, host=host, port=port, log_level="info")
