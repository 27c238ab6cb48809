"""HTTP diagnosis service: upload a leaf photo, get a disease call back.

The app loads one immutable model at startup, validates that the
recommendation table covers every class the model can emit (so a missing
entry is a startup failure, never a runtime surprise), and serves:

* ``POST /diagnose`` — multipart field ``image``; responds with the
  predicted class, its confidence, the detections, and the treatment text.
* ``GET /health`` — model identity and label set.

Confidence is serialized as a fraction in [0, 1]; rendering it as a
percentage is the client's job.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, File, UploadFile
from fastapi.responses import JSONResponse
from PIL import Image

from .model import CapsuleYolo, load_model

DEFAULT_CONFIDENCE_THRESHOLD = 0.5
DEFAULT_DETECTION_THRESHOLD = 0.25
DEFAULT_IOU_THRESHOLD = 0.45
DEFAULT_MAX_UPLOAD_BYTES = 5 * 1024 * 1024

ENV_PREFIX = "CAPSYOLO_"


@dataclass(frozen=True)
class ServiceConfig:
    model_path: str
    recommendations_path: str
    confidence_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD
    detection_threshold: float = DEFAULT_DETECTION_THRESHOLD
    iou_threshold: float = DEFAULT_IOU_THRESHOLD
    max_upload_bytes: int = DEFAULT_MAX_UPLOAD_BYTES
    host: str = "127.0.0.1"
    port: int = 8000

    @classmethod
    def from_file(cls, path) -> "ServiceConfig":
        """Read the [service] section of an INI file, then apply env overrides.

        Environment variables CAPSYOLO_MODEL, CAPSYOLO_RECOMMENDATIONS,
        CAPSYOLO_CONFIDENCE_THRESHOLD, CAPSYOLO_MAX_UPLOAD_BYTES,
        CAPSYOLO_HOST, and CAPSYOLO_PORT take precedence over the file.
        """
        import configparser

        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise FileNotFoundError(f"service config {path} not found")
        section = parser["service"]
        values = {
            "model_path": section.get("model"),
            "recommendations_path": section.get("recommendations"),
            "confidence_threshold": section.getfloat("confidence_threshold",
                                                     DEFAULT_CONFIDENCE_THRESHOLD),
            "detection_threshold": section.getfloat("detection_threshold",
                                                    DEFAULT_DETECTION_THRESHOLD),
            "iou_threshold": section.getfloat("iou_threshold", DEFAULT_IOU_THRESHOLD),
            "max_upload_bytes": section.getint("max_upload_bytes", DEFAULT_MAX_UPLOAD_BYTES),
            "host": section.get("host", "127.0.0.1"),
            "port": section.getint("port", 8000),
        }
        env = {
            "model_path": os.environ.get(ENV_PREFIX + "MODEL"),
            "recommendations_path": os.environ.get(ENV_PREFIX + "RECOMMENDATIONS"),
            "confidence_threshold": os.environ.get(ENV_PREFIX + "CONFIDENCE_THRESHOLD"),
            "max_upload_bytes": os.environ.get(ENV_PREFIX + "MAX_UPLOAD_BYTES"),
            "host": os.environ.get(ENV_PREFIX + "HOST"),
            "port": os.environ.get(ENV_PREFIX + "PORT"),
        }
        for key, raw in env.items():
            if raw is None:
                continue
            if key in ("confidence_threshold",):
                values[key] = float(raw)
            elif key in ("max_upload_bytes", "port"):
                values[key] = int(raw)
            else:
                values[key] = raw
        if not values["model_path"] or not values["recommendations_path"]:
            raise ValueError("service config must name a model and a recommendation table")
        return cls(**values)


@dataclass
class RecommendationTable:
    """Per-class treatment texts plus the fallback for uncertain calls."""

    treatments: dict
    uncertain_text: str

    @classmethod
    def from_file(cls, path) -> "RecommendationTable":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        treatments = raw.get("treatments")
        uncertain = raw.get("uncertain")
        if not isinstance(treatments, dict) or not uncertain:
            raise ValueError(f"{path}: expected keys 'treatments' (object) and 'uncertain' (text)")
        empty = [k for k, v in treatments.items() if not str(v).strip()]
        if empty:
            raise ValueError(f"{path}: empty treatment text for {', '.join(empty)}")
        return cls(treatments=dict(treatments), uncertain_text=str(uncertain))

    def validate_classes(self, class_names) -> None:
        missing = [c for c in class_names if c not in self.treatments]
        if missing:
            raise ValueError(
                "recommendation table is missing classes: " + ", ".join(missing)
            )


def recommend(disease_class: str, confidence: float, table: RecommendationTable,
              threshold: float = DEFAULT_CONFIDENCE_THRESHOLD, strict: bool = True) -> str:
    """Treatment text for a diagnosis; below-threshold confidence gets the
    uncertainty guidance instead."""
    if confidence < threshold:
        return table.uncertain_text
    if disease_class not in table.treatments:
        if strict:
            raise ValueError(f"no recommendation configured for class {disease_class!r}")
        return table.uncertain_text
    return table.treatments[disease_class]


@dataclass
class DiagnosisReport:
    disease_class: str
    confidence: float
    detections: list
    recommendation: str
    model_version: str
    uncertain: bool

    def to_dict(self) -> dict:
        return {
            "disease_class": self.disease_class,
            "confidence": self.confidence,
            "detections": self.detections,
            "recommendation": self.recommendation,
            "model_version": self.model_version,
            "uncertain": self.uncertain,
        }


class DiagnosisEngine:
    """Model + recommendation table behind the HTTP handlers.

    Inference is pure: the loaded model is never mutated, so identical
    uploads produce identical reports.
    """

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.model: CapsuleYolo = load_model(config.model_path)
        self.table = RecommendationTable.from_file(config.recommendations_path)
        self.table.validate_classes(self.model.config.class_names)
        digest = hashlib.sha256(Path(config.model_path).read_bytes()).hexdigest()
        self.model_version = f"capsyolo-1/{digest[:12]}"

    @property
    def class_names(self):
        return list(self.model.config.class_names)

    def diagnose_bytes(self, payload: bytes) -> DiagnosisReport:
        try:
            with Image.open(io.BytesIO(payload)) as img:
                rgb = img.convert("RGB").resize(
                    (self.model.config.image_size[1], self.model.config.image_size[0]),
                    Image.BILINEAR)
        except Exception as exc:
            raise UndecodableImage(str(exc)) from exc
        array = (np.asarray(rgb, dtype=np.float64) / 255.0).transpose(2, 0, 1)

        norms, detections = self.model.predict(
            array,
            conf_threshold=self.config.detection_threshold,
            iou_threshold=self.config.iou_threshold,
        )
        if detections:
            top = detections[0]
            disease = self.class_names[top.class_id]
            confidence = top.score
        else:
            best = int(np.argmax(norms))
            disease = self.class_names[best]
            confidence = float(norms[best])
        uncertain = confidence < self.config.confidence_threshold
        text = recommend(disease, confidence, self.table,
                         threshold=self.config.confidence_threshold)
        return DiagnosisReport(
            disease_class=disease,
            confidence=confidence,
            detections=[
                {
                    "box": {"x_min": d.box.x_min, "y_min": d.box.y_min,
                            "x_max": d.box.x_max, "y_max": d.box.y_max},
                    "objectness": d.objectness,
                    "class_id": d.class_id,
                    "class_name": self.class_names[d.class_id],
                    "score": d.score,
                }
                for d in detections
            ],
            recommendation=text,
            model_version=self.model_version,
            uncertain=uncertain,
        )


class UndecodableImage(ValueError):
    pass


def create_app(config: ServiceConfig) -> FastAPI:
    """Build the FastAPI app; any load/validation failure raises here."""
    engine = DiagnosisEngine(config)
    app = FastAPI(title="capsyolo diagnosis service")
    app.state.engine = engine

    def client_error(status: int, code: str, message: str) -> JSONResponse:
        return JSONResponse(status_code=status,
                            content={"error": {"code": code, "message": message}})

    @app.get("/health")
    def health():
        return {
            "status": "ok",
            "model_version": engine.model_version,
            "classes": engine.class_names,
        }

    @app.post("/diagnose")
    async def diagnose(image: UploadFile = File(...)):
        payload = await image.read()
        if len(payload) > config.max_upload_bytes:
            return client_error(413, "upload_too_large",
                                f"upload exceeds {config.max_upload_bytes} bytes")
        if not payload:
            return client_error(400, "empty_upload", "no image data received")
        try:
            report = engine.diagnose_bytes(payload)
        except UndecodableImage as exc:
            return client_error(400, "undecodable_image",
                                f"could not decode the uploaded image: {exc}")
        return report.to_dict()

    return app
