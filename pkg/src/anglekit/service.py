"""HTTP service backing the ground-truth annotation workflow.

A human reviews each B-mode image in the browser, draws a line parallel to
the vessel wall, and submits the endpoints. The angle is always recomputed
server-side from the endpoints (one source of truth for the orientation
convention) and persisted to the label CSV before the response goes out.
The on-disk file is rewritten atomically and mirrors memory after every
write, so a restart loses nothing.
"""

from __future__ import annotations

import os
import tempfile
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from fastapi import FastAPI, HTTPException, Response
from fastapi.responses import HTMLResponse
from fastapi.staticfiles import StaticFiles

from .dataset import LABEL_COLUMNS
from .errors import IngestionError
from .geometry import LineSegment, angle_from_endpoints
from .schemas import ImageInfo, LabelRequest, LabelResponse, VelocityRequest, VelocityResponse

LABEL_HEADER = ",".join(LABEL_COLUMNS)

_FALLBACK_PAGE = """<!doctype html>
<html><head><title>anglekit annotation</title></head>
<body><h1>anglekit annotation service</h1>
<p>The browser UI bundle is not built. The JSON API is live:</p>
<ul>
<li>GET /api/images</li>
<li>GET /api/images/{id}</li>
<li>POST /api/images/{id}/label</li>
<li>GET /api/labels</li>
</ul>
<p>Build the UI with <code>cd frontend && npm install && npm run build</code>
and restart with <code>--ui-dir frontend/dist</code>.</p>
</body></html>
"""


@dataclass(frozen=True)
class AnnotationRecord:
    """One stored ground-truth line; theta is recomputed, never client-sent."""

    image_id: str
    segment: LineSegment
    theta_deg: float
    annotated_at: str  # informational only; not persisted to the CSV


class LabelStore:
    """image_id -> AnnotationRecord, mirrored to a CSV on every write.

    Mutations are serialized by a lock; the file is replaced atomically
    (temp file + rename) before a submit call returns, so any response the
    client saw is already on disk.
    """

    def __init__(self, path: Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._records: dict[str, AnnotationRecord] = {}
        if self.path.exists():
            self._load()

    def _load(self) -> None:
        lines = self.path.read_text(encoding="utf-8").splitlines()
        if not lines:
            return
        if lines[0] != LABEL_HEADER:
            raise IngestionError(f"{self.path}: bad label header {lines[0]!r}")
        for line in lines[1:]:
            parts = line.split(",")
            if len(parts) != 6:
                raise IngestionError(f"{self.path}: bad label row {line!r}")
            image_id = parts[0]
            try:
                x1, y1, x2, y2, theta = (float(v) for v in parts[1:])
            except ValueError as exc:
                raise IngestionError(f"{self.path}: bad label row {line!r}") from exc
            seg = LineSegment(x1, y1, x2, y2)
            self._records[image_id] = AnnotationRecord(
                image_id=image_id, segment=seg, theta_deg=theta,
                annotated_at="",
            )

    def to_csv(self) -> str:
        lines = [LABEL_HEADER]
        for image_id in sorted(self._records):
            r = self._records[image_id]
            s = r.segment
            lines.append(
                f"{image_id},{s.x1!r},{s.y1!r},{s.x2!r},{s.y2!r},{r.theta_deg!r}"
            )
        return "\n".join(lines) + "\n"

    def submit(self, image_id: str, segment: LineSegment) -> AnnotationRecord:
        theta = angle_from_endpoints(segment)
        record = AnnotationRecord(
            image_id=image_id, segment=segment, theta_deg=theta,
            annotated_at=datetime.now(timezone.utc).isoformat(),
        )
        with self._lock:
            self._records[image_id] = record  # resubmission overwrites
            self._write()
        return record

    def _write(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=self.path.parent, prefix=".labels-")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
                f.write(self.to_csv())
            os.replace(tmp, self.path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def labeled(self, image_id: str) -> bool:
        return image_id in self._records

    def get(self, image_id: str) -> AnnotationRecord | None:
        return self._records.get(image_id)


class ImageRegistry:
    """PNG/PGM files in a directory, addressed by filename stem."""

    def __init__(self, directory: Path):
        self.directory = Path(directory)
        self._paths: dict[str, Path] = {}
        self._dims: dict[str, tuple[int, int]] = {}
        if self.directory.is_dir():
            for p in sorted(self.directory.iterdir()):
                if p.suffix.lower() in (".png", ".pgm") and p.stem not in self._paths:
                    self._paths[p.stem] = p

    def ids(self) -> list[str]:
        return sorted(self._paths)

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._paths

    def load(self, image_id: str):
        from .imaging import load_image

        return load_image(self._paths[image_id])

    def dims(self, image_id: str) -> tuple[int, int]:
        if image_id not in self._dims:
            arr = self.load(image_id)
            self._dims[image_id] = (arr.shape[1], arr.shape[0])  # (width, height)
        return self._dims[image_id]


def create_app(images_dir, labels_path, ui_dir=None) -> FastAPI:
    app = FastAPI(title="anglekit annotation service")
    registry = ImageRegistry(Path(images_dir))
    store = LabelStore(Path(labels_path))
    app.state.registry = registry
    app.state.store = store

    @app.get("/api/images", response_model=list[ImageInfo])
    def list_images():
        out = []
        for image_id in registry.ids():
            width, height = registry.dims(image_id)
            out.append(ImageInfo(image_id=image_id, width=width, height=height,
                                 labeled=store.labeled(image_id)))
        return out

    @app.get("/api/images/{image_id}")
    def get_image(image_id: str):
        from .imaging import encode_png

        if image_id not in registry:
            raise HTTPException(status_code=404, detail=f"unknown image {image_id!r}")
        return Response(content=encode_png(registry.load(image_id)),
                        media_type="image/png")

    @app.post("/api/images/{image_id}/label", response_model=LabelResponse)
    def submit_label(image_id: str, req: LabelRequest):
        if image_id not in registry:
            raise HTTPException(status_code=404, detail=f"unknown image {image_id!r}")
        if (req.x1, req.y1) == (req.x2, req.y2):
            raise HTTPException(status_code=422, detail="segment endpoints coincide")
        width, height = registry.dims(image_id)
        for name, value, bound in (("x1", req.x1, width), ("x2", req.x2, width),
                                   ("y1", req.y1, height), ("y2", req.y2, height)):
            if not 0.0 <= value <= bound:
                raise HTTPException(
                    status_code=422,
                    detail=f"{name}={value} outside image bounds [0, {bound}]",
                )
        record = store.submit(image_id, LineSegment(req.x1, req.y1, req.x2, req.y2))
        return LabelResponse(theta_deg=record.theta_deg)

    @app.get("/api/labels")
    def export_labels():
        return Response(content=store.to_csv(), media_type="text/csv",
                        headers={"Content-Disposition": "attachment; filename=labels.csv"})

    @app.post("/api/velocity", response_model=VelocityResponse)
    def velocity(req: VelocityRequest):
        from .errors import AngleSingularError, InvalidArgumentError
        from .geometry import DopplerParams, doppler_velocity

        try:
            v = doppler_velocity(DopplerParams(f0=req.f0, c=req.c, fd=req.fd),
                                 req.theta_deg)
        except (AngleSingularError, InvalidArgumentError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return VelocityResponse(velocity_m_s=v)

    if ui_dir is not None and Path(ui_dir, "index.html").exists():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    else:
        @app.get("/", response_class=HTMLResponse)
        def index():
            return _FALLBACK_PAGE

    return app
