"""Mapping annotator clicks on the video to court regions.

A calibration is a set of labeled polygons in image coordinates, grouped
by court end.  Lookup is deterministic: polygons are tested in region
index order and the first containing polygon wins, so boundary points
always resolve to the lowest-index region.
"""

from __future__ import annotations

from dataclasses import dataclass


def point_in_polygon(x, y, polygon):
    """Ray-casting test, inclusive of edges and vertices."""
    n = len(polygon)
    inside = False
    for i in range(n):
        x1, y1 = polygon[i]
        x2, y2 = polygon[(i + 1) % n]
        # on-segment check keeps boundary points inside
        cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
        if abs(cross) < 1e-12 and min(x1, x2) - 1e-12 <= x <= max(x1, x2) + 1e-12 \
                and min(y1, y2) - 1e-12 <= y <= max(y1, y2) + 1e-12:
            return True
        if (y1 > y) != (y2 > y):
            xin = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < xin:
                inside = not inside
    return inside


@dataclass
class CourtCalibration:
    """Ordered (region_name, polygon) pairs; earlier entries win ties."""

    regions: list    # [(name, [(x, y), ...])]

    def to_dict(self):
        return {"regions": [[name, [list(p) for p in poly]]
                            for name, poly in self.regions]}

    @classmethod
    def from_dict(cls, data):
        return cls([(name, [tuple(p) for p in poly])
                    for name, poly in data["regions"]])


def court_region(x, y, calibration: CourtCalibration):
    """Region name containing the click, or "out" when outside all."""
    if calibration is None:
        raise ValueError("no court calibration for this clip")
    for name, polygon in calibration.regions:
        if point_in_polygon(x, y, polygon):
            return name
    return "out"


def default_calibration(width, height, court_names=("deuce", "middle", "ad")):
    """Three vertical bands per court end covering the frame.

    Matches the synthetic renderer's layout: the near end is the lower
    half of the image and courts run right to left from the near player's
    point of view.
    """
    thirds = [0.0, 1 / 3, 2 / 3, 1.0]
    regions = []
    # near end: lower half; the near player's right side is image-right
    for i, name in enumerate(court_names):
        x0, x1 = thirds[2 - i] * width, thirds[3 - i] * width
        regions.append((f"near-{name}",
                        [(x0, height / 2), (x1, height / 2),
                         (x1, height), (x0, height)]))
    # far end mirrors left-right
    for i, name in enumerate(court_names):
        x0, x1 = thirds[i] * width, thirds[i + 1] * width
        regions.append((f"far-{name}",
                        [(x0, 0.0), (x1, 0.0), (x1, height / 2), (x0, height / 2)]))
    return CourtCalibration(regions)
