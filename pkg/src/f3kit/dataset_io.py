"""Clip manifests, frame/feature payloads, splits and training windows.

The on-disk layout of a dataset directory is::

    manifest.f3            one structured-text record per clip
    splits.f3              clip-id to split assignment
    <clip-id>.feat         per-frame feature matrix (feature mode)
    frames/<clip-id>/<index>.png   per-frame images (pixel mode)

Manifest records are written with canonical key order so a read/write
round trip is byte stable.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .rulebook import RallyContext
from .taxonomy import Taxonomy, TaxonomyError, load_taxonomy

SPLITS = ("train", "val", "test", "unassigned")


class ManifestError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


@dataclass
class ClipManifest:
    """One clip: identity, geometry, frame source and its event sequence."""

    clip_id: str
    fps: float
    num_frames: int
    events: list            # [(frame_index, event_vector)] ordered by frame
    video_id: str = ""
    split: str = "unassigned"
    source_kind: str = "none"      # none | features | frames
    source_path: str = ""          # relative to the manifest directory
    ctx: RallyContext = field(default_factory=RallyContext)

    def validate(self, taxonomy: Taxonomy):
        if self.fps <= 0:
            raise ManifestError(f"{self.clip_id}: fps must be positive")
        if self.num_frames < 1:
            raise ManifestError(f"{self.clip_id}: num-frames must be >= 1")
        if self.split not in SPLITS:
            raise ManifestError(f"{self.clip_id}: unknown split {self.split!r}")
        prev = -1
        for t, vec in self.events:
            if t <= prev:
                raise ManifestError(
                    f"{self.clip_id}: event frames must be strictly increasing")
            if not (0 <= t < self.num_frames):
                raise ManifestError(
                    f"{self.clip_id}: event frame {t} outside [0, {self.num_frames})")
            taxonomy.validate_vector(vec, taxonomy.full)
            prev = t
        return self

    @property
    def event_frames(self):
        return [t for t, _ in self.events]


# ----------------------------------------------------------------------
# manifest text format

def _fmt_num(x):
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def write_manifest(clips, path, taxonomy: Taxonomy):
    lines = ["f3-manifest v1", f"taxonomy {taxonomy.name}", ""]
    for clip in clips:
        clip.validate(taxonomy)
        lines.append(f"clip {clip.clip_id}")
        if clip.video_id:
            lines.append(f"video {clip.video_id}")
        lines.append(f"fps {_fmt_num(clip.fps)}")
        lines.append(f"frames {clip.num_frames}")
        lines.append(f"split {clip.split}")
        if clip.source_kind != "none":
            lines.append(f"source {clip.source_kind} {clip.source_path}")
        ctx = clip.ctx
        if (ctx.near_hand, ctx.far_hand, ctx.serving) != ("right", "right", "near"):
            lines.append(f"near-hand {ctx.near_hand}")
            lines.append(f"far-hand {ctx.far_hand}")
            lines.append(f"serving {ctx.serving}")
        for t, vec in clip.events:
            lines.append(f"event {t} {taxonomy.decode(vec)}")
        lines.append("end")
        lines.append("")
    Path(path).write_text("\n".join(lines))


def read_manifest(path, taxonomy: Taxonomy | None = None):
    """Parse a manifest file; returns (clips, taxonomy)."""
    text = Path(path).read_text()
    clips = []
    cur = None
    tax = taxonomy
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        key = fields[0]
        try:
            if key == "f3-manifest":
                if fields[1:] != ["v1"]:
                    raise ManifestError(f"unsupported version {fields[1:]}", lineno)
            elif key == "taxonomy":
                if tax is None:
                    tax = load_taxonomy(fields[1])
                elif tax.name != fields[1]:
                    raise ManifestError(
                        f"manifest taxonomy {fields[1]!r} != {tax.name!r}", lineno)
            elif key == "clip":
                if cur is not None:
                    raise ManifestError("clip record not closed with 'end'", lineno)
                cur = ClipManifest(fields[1], 0.0, 0, [])
            elif cur is None:
                raise ManifestError(f"directive {key!r} outside clip record", lineno)
            elif key == "video":
                cur.video_id = fields[1]
            elif key == "fps":
                cur.fps = float(fields[1])
            elif key == "frames":
                cur.num_frames = int(fields[1])
            elif key == "split":
                cur.split = fields[1]
            elif key == "source":
                cur.source_kind, cur.source_path = fields[1], fields[2]
            elif key == "near-hand":
                cur.ctx.near_hand = fields[1]
            elif key == "far-hand":
                cur.ctx.far_hand = fields[1]
            elif key == "serving":
                cur.ctx.serving = fields[1]
            elif key == "event":
                if tax is None:
                    raise ManifestError("event before taxonomy line", lineno)
                frame = int(fields[1])
                if cur.events and frame <= cur.events[-1][0]:
                    raise ManifestError(
                        f"{cur.clip_id}: event frames must be strictly increasing",
                        lineno)
                if cur.num_frames and not 0 <= frame < cur.num_frames:
                    raise ManifestError(
                        f"{cur.clip_id}: event frame {frame} outside "
                        f"[0, {cur.num_frames})", lineno)
                cur.events.append((frame, tax.parse_event(fields[2])))
            elif key == "end":
                try:
                    cur.validate(tax)
                except ManifestError as exc:
                    raise ManifestError(str(exc), lineno) from None
                clips.append(cur)
                cur = None
            else:
                raise ManifestError(f"unknown directive {key!r}", lineno)
        except (TaxonomyError, ValueError, IndexError) as exc:
            if isinstance(exc, ManifestError):
                raise
            raise ManifestError(str(exc), lineno) from exc
    if cur is not None:
        raise ManifestError("unterminated clip record")
    if tax is None:
        raise ManifestError("manifest has no taxonomy line")
    return clips, tax


def write_splits(clips, path):
    lines = ["f3-splits v1"]
    lines += [f"{c.clip_id} {c.split}" for c in clips]
    Path(path).write_text("\n".join(lines) + "\n")


def read_splits(path):
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith("f3-splits"):
            continue
        fields = line.split()
        if len(fields) != 2 or fields[1] not in SPLITS:
            raise ManifestError(f"bad split line {raw!r}", lineno)
        out[fields[0]] = fields[1]
    return out


def write_predictions(predictions, path, taxonomy: Taxonomy):
    """Write detected events with per-element probabilities.

    `predictions` maps clip-id to event dicts with keys frame, vector,
    probs and conf (the format produced by inference)."""
    lines = ["f3-predictions v1", f"taxonomy {taxonomy.name}", ""]
    for clip_id in sorted(predictions):
        lines.append(f"clip {clip_id}")
        for ev in predictions[clip_id]:
            lines.append(f"event {ev['frame']} {taxonomy.decode(ev['vector'])}")
            lines.append(f"conf {ev.get('conf', 0.0):.6f}")
            probs = np.asarray(ev.get("probs", np.zeros(taxonomy.K)))
            lines.append("probs " + " ".join(f"{p:.6f}" for p in probs))
        lines.append("end")
        lines.append("")
    Path(path).write_text("\n".join(lines))


def read_predictions(path, taxonomy: Taxonomy | None = None):
    """Parse a predictions file into {clip_id: [(frame, vector, probs, conf)]}."""
    tax = taxonomy
    out = {}
    cur = None
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith("f3-predictions"):
            continue
        fields = line.split()
        key = fields[0]
        try:
            if key == "taxonomy":
                if tax is None:
                    tax = load_taxonomy(fields[1])
            elif key == "clip":
                cur = out.setdefault(fields[1], [])
            elif key == "event":
                cur.append([int(fields[1]), tax.parse_event(fields[2]),
                            np.zeros(tax.K), 0.0])
            elif key == "conf":
                cur[-1][3] = float(fields[1])
            elif key == "probs":
                cur[-1][2] = np.array([float(v) for v in fields[1:]])
            elif key == "end":
                cur = None
            else:
                raise ManifestError(f"unknown directive {key!r}", lineno)
        except (TaxonomyError, ValueError, IndexError, AttributeError) as exc:
            if isinstance(exc, ManifestError):
                raise
            raise ManifestError(str(exc), lineno) from exc
    return {cid: [tuple(ev) for ev in evs] for cid, evs in out.items()}


# ----------------------------------------------------------------------
# split assignment

def make_splits(clips, ratios=(3, 1, 1), seed=0):
    """Assign train/val/test tags.

    The test portion is made of whole videos disjoint from the rest; the
    train and validation portions are drawn clip-wise from the remaining
    shared video pool.  Deterministic for a given seed.
    """
    total = float(sum(ratios))
    r_train, r_val, r_test = (r / total for r in ratios)
    videos = {}
    for c in clips:
        videos.setdefault(c.video_id or c.clip_id, []).append(c)
    if len(videos) < 2:
        raise ManifestError(
            "need at least two distinct videos for a disjoint test split")

    rng = np.random.default_rng(seed)
    names = sorted(videos)
    rng.shuffle(names)
    n_clips = len(clips)
    want_test = int(round(n_clips * r_test))
    test_videos, test_count = [], 0
    for name in names:
        if len(test_videos) == len(names) - 1:
            break
        new_count = test_count + len(videos[name])
        if abs(new_count - want_test) > abs(test_count - want_test):
            break
        test_videos.append(name)
        test_count = new_count
    if not test_videos:
        test_videos, test_count = [names[0]], len(videos[names[0]])

    test_set = set(test_videos)
    pool = [c for name in names if name not in test_set for c in videos[name]]
    order = rng.permutation(len(pool))
    want_val = int(round(n_clips * r_val))
    assigned = {}
    for rank, idx in enumerate(order):
        assigned[pool[idx].clip_id] = "val" if rank < want_val else "train"

    out = []
    for c in clips:
        if (c.video_id or c.clip_id) in test_set:
            out.append(replace(c, split="test"))
        else:
            out.append(replace(c, split=assigned[c.clip_id]))
    return out


# ----------------------------------------------------------------------
# feature and frame payloads

_FEAT_MAGIC = b"F3FT"


def save_features(arr, path):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError("feature array must be [frames, channels]")
    with open(path, "wb") as fh:
        fh.write(_FEAT_MAGIC)
        fh.write(struct.pack("<II", *arr.shape))
        fh.write(arr.tobytes())


def load_features(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _FEAT_MAGIC:
            raise ValueError(f"{path}: not a feature file")
        n, d = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(n * d * 4), dtype="<f4")
    if data.size != n * d:
        raise ValueError(f"{path}: truncated feature file")
    return data.reshape(n, d)


def save_frames(frames, folder):
    """Write [N,H,W,3] unit-interval pixels as frames/<index>.png."""
    from PIL import Image

    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    arr = np.clip(np.asarray(frames), 0.0, 1.0)
    for i, frame in enumerate(arr):
        img = Image.fromarray((frame * 255).astype(np.uint8), mode="RGB")
        img.save(folder / f"{i:06d}.png")


def load_frames(folder, num_frames):
    from PIL import Image

    folder = Path(folder)
    out = []
    for i in range(num_frames):
        with Image.open(folder / f"{i:06d}.png") as img:
            out.append(np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0)
    return np.stack(out)


def load_clip_payload(clip: ClipManifest, root):
    """Load the frame data referenced by a manifest record."""
    root = Path(root)
    if clip.source_kind == "features":
        return load_features(root / clip.source_path)
    if clip.source_kind == "frames":
        return load_frames(root / clip.source_path, clip.num_frames)
    raise ValueError(f"{clip.clip_id}: no frame source")


# ----------------------------------------------------------------------
# training windows

@dataclass
class Window:
    """A strided slice of one clip with dense per-position targets.

    Sampled frame indices are ``start + stride * arange(length)``; positions
    past the clip end are zero-padded and masked out of losses and metrics.
    """

    clip_id: str
    start: int
    length: int
    stride: int
    valid: np.ndarray        # [L] bool, False on padded tail positions
    foreground: np.ndarray   # [L] float, 1.0 exactly at event positions
    elements: np.ndarray     # [L, K] float targets, zero off events
    events: list             # [(position, original_frame, vector)]

    @property
    def frames(self):
        return self.start + self.stride * np.arange(self.length)


def windowize(clip: ClipManifest, K, length, stride, overlap=0.5):
    """Cut a clip into overlapping strided windows covering every frame.

    With stride > 1 an event at an unsampled frame is assigned to the
    nearest sampled position, ties toward the later one: the event's
    visual evidence begins at the hit moment, so on a tie the later
    sample is the first one that can carry it.
    """
    if length < 1 or stride < 1:
        raise ValueError("window length and stride must be >= 1")
    span = length * stride
    hop = max(1, int(round(span * (1.0 - overlap))))
    starts = [0]
    while starts[-1] + span < clip.num_frames:
        starts.append(starts[-1] + hop)

    out = []
    for start in starts:
        positions = start + stride * np.arange(length)
        valid = positions < clip.num_frames
        last_valid = int(valid.sum()) - 1
        fg = np.zeros(length, dtype=np.float64)
        el = np.zeros((length, K), dtype=np.float64)
        evs = []
        for t, vec in clip.events:
            d = t - start
            if d < 0 or d > span - 1:
                continue
            pos = (d + stride // 2) // stride
            # rounding near the span or clip end lands on the last real sample
            pos = min(pos, length - 1, last_valid)
            if fg[pos] == 0.0:   # keep the earlier event on a collision
                el[pos] = vec
                evs.append((int(pos), t, np.asarray(vec)))
            fg[pos] = 1.0
        out.append(Window(clip.clip_id, start, length, stride,
                          valid, fg, el, evs))
    return out
