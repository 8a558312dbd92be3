"""Annotation backend: scene-cut segmentation, court-click geometry,
append-only annotation storage with majority-vote resolution, and the
HTTP service the labeling UI talks to."""

from .cuts import detect_cuts
from .court import CourtCalibration, court_region, default_calibration
from .store import AnnotationRecord, AnnotationStore, resolve_majority
from .service import create_app

__all__ = [
    "AnnotationRecord",
    "AnnotationStore",
    "CourtCalibration",
    "court_region",
    "create_app",
    "default_calibration",
    "detect_cuts",
    "resolve_majority",
]
