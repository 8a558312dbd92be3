"""Scene-cut detection by color-histogram differencing.

A deliberately simple, deterministic stand-in for a full scene detector:
a boundary is reported wherever the histogram distance between adjacent
frames exceeds the threshold.  The scorer is pluggable so a learned
similarity can replace the histogram without touching callers.
"""

from __future__ import annotations

import numpy as np


def frame_histogram(frame, bins=16):
    """Concatenated per-channel histograms, normalized to sum 1."""
    frame = np.asarray(frame)
    if frame.ndim == 2:
        frame = frame[..., None]
    parts = []
    for c in range(frame.shape[-1]):
        h, _ = np.histogram(frame[..., c], bins=bins, range=(0.0, 1.0))
        parts.append(h)
    h = np.concatenate(parts).astype(np.float64)
    total = h.sum()
    return h / total if total else h


def histogram_distance(a, b, bins=16):
    """L1 distance between frame histograms, in [0, 2]."""
    return float(np.abs(frame_histogram(a, bins) - frame_histogram(b, bins)).sum())


def detect_cuts(frames, threshold, distance=None):
    """Frame indices where a new shot begins.

    `frames` is an [N, H, W, C] array or an iterable of frames; a cut at
    index i means frame i starts a new segment.  Deterministic.
    """
    dist = distance or histogram_distance
    cuts = []
    prev = None
    for i, frame in enumerate(frames):
        if prev is not None and dist(prev, frame) > threshold:
            cuts.append(i)
        prev = frame
    return cuts


def segment_bounds(num_frames, cuts):
    """(start, end) clip ranges implied by a cut list."""
    edges = [0] + list(cuts) + [num_frames]
    return [(a, b) for a, b in zip(edges, edges[1:]) if b > a]
