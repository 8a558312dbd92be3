"""Annotation persistence and conflict resolution.

Storage is an append-only log of annotation records plus an in-memory
current state (latest version per clip and annotator); replaying the log
always reproduces the state.  Majority voting aligns events across
annotators by frame proximity and resolves each sub-class independently;
ties are never guessed, they are reported for re-annotation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..rulebook import hard_only
from ..taxonomy import Taxonomy, TaxonomyError


class AnnotationError(ValueError):
    def __init__(self, message, details=None):
        super().__init__(message)
        self.details = details or []


@dataclass
class AnnotationRecord:
    clip_id: str
    annotator_id: str
    events: list                 # [(frame, vector, click)] click = (x, y) | None
    status: str = "draft"        # draft | submitted
    submitted_at: float = 0.0
    version: int = 0

    def validate(self, taxonomy: Taxonomy):
        errors = []
        if self.status not in ("draft", "submitted"):
            errors.append(f"status: unknown value {self.status!r}")
        prev = -1
        for i, (frame, vec, _click) in enumerate(self.events):
            if frame <= prev:
                errors.append(f"events[{i}].frame: must be strictly increasing")
            prev = frame
            try:
                taxonomy.validate_vector(vec, taxonomy.full)
            except TaxonomyError as exc:
                errors.append(f"events[{i}].type: {exc}")
        if errors:
            raise AnnotationError("invalid annotation record", errors)
        return self


class AnnotationStore:
    """Latest record per (clip, annotator), backed by an append-only log."""

    def __init__(self, taxonomy: Taxonomy, log_path=None):
        self.taxonomy = taxonomy
        self.log_path = Path(log_path) if log_path else None
        self._state = {}          # (clip_id, annotator_id) -> AnnotationRecord
        if self.log_path and self.log_path.exists():
            self._replay()

    # -- state access ---------------------------------------------------

    def get(self, clip_id, annotator_id):
        return self._state.get((clip_id, annotator_id))

    def records_for(self, clip_id, submitted_only=True):
        out = [r for (cid, _), r in sorted(self._state.items())
               if cid == clip_id and (not submitted_only or r.status == "submitted")]
        return out

    def annotators(self, clip_id):
        return sorted(a for (cid, a) in self._state if cid == clip_id)

    def clips(self):
        return sorted({cid for cid, _ in self._state})

    # -- writes ----------------------------------------------------------

    def put(self, record: AnnotationRecord, rules=None, override=False):
        """Validate and persist; returns the new version (last writer wins).

        Hard rule violations block the write unless `override` is set, in
        which case the override is recorded in the log.
        """
        record.validate(self.taxonomy)
        violations = []
        if rules is not None:
            for i, (_f, vec, _c) in enumerate(record.events):
                for v in hard_only(rules.check_combination(vec)):
                    violations.append(f"events[{i}].type: {v.message}")
            for v in hard_only(rules.validate_sequence(
                    [vec for _f, vec, _c in record.events])):
                violations.append(f"sequence: {v.message}")
        if violations and not override:
            raise AnnotationError("annotation violates hard rules", violations)

        prev = self._state.get((record.clip_id, record.annotator_id))
        version = (prev.version if prev else 0) + 1
        stored = replace(record, version=version,
                         submitted_at=record.submitted_at or time.time())
        self._state[(record.clip_id, record.annotator_id)] = stored
        self._append_log(stored, override=bool(violations))
        return version

    # -- log -------------------------------------------------------------

    def _record_lines(self, record, override=False):
        flag = " override" if override else ""
        lines = [f"record {record.clip_id} {record.annotator_id} "
                 f"{record.version} {record.submitted_at!r} {record.status}{flag}"]
        for frame, vec, click in record.events:
            cx, cy = (f"{click[0]!r}", f"{click[1]!r}") if click else ("-", "-")
            lines.append(f"event {frame} {self.taxonomy.decode(vec)} {cx} {cy}")
        lines.append("endrecord")
        return lines

    def _append_log(self, record, override=False):
        if not self.log_path:
            return
        new = not self.log_path.exists()
        with open(self.log_path, "a") as fh:
            if new:
                fh.write(f"f3-annlog v1\ntaxonomy {self.taxonomy.name}\n")
            fh.write("\n".join(self._record_lines(record, override)) + "\n")

    def _replay(self):
        cur = None
        for raw in self.log_path.read_text().splitlines():
            fields = raw.split()
            if not fields or fields[0] in ("f3-annlog", "taxonomy", "#"):
                continue
            if fields[0] == "record":
                cur = AnnotationRecord(fields[1], fields[2], [],
                                       status=fields[5],
                                       submitted_at=float(fields[4]),
                                       version=int(fields[3]))
            elif fields[0] == "event" and cur is not None:
                click = None
                if fields[3] != "-":
                    click = (float(fields[3]), float(fields[4]))
                cur.events.append((int(fields[1]),
                                   self.taxonomy.parse_event(fields[2]), click))
            elif fields[0] == "endrecord" and cur is not None:
                self._state[(cur.clip_id, cur.annotator_id)] = cur
                cur = None

    def snapshot(self, path):
        """Write the current state as a fresh, compacted log."""
        lines = [f"f3-annlog v1", f"taxonomy {self.taxonomy.name}"]
        for key in sorted(self._state):
            lines += self._record_lines(self._state[key])
        Path(path).write_text("\n".join(lines) + "\n")


# ----------------------------------------------------------------------
# majority vote

def resolve_majority(records, taxonomy: Taxonomy, tol=1):
    """Merge one clip's submitted records into a final event list.

    Events are pooled and clustered by frame proximity (within `tol`,
    transitively); each cluster resolves every sub-class by unique-mode
    vote over the participating annotators, with absence being a votable
    value, and takes the median frame.  Any tie marks the cluster
    unresolved.  The result is independent of record order.

    Returns (events, conflicts) where events is [(frame, vector)] and
    conflicts is a list of dicts describing unresolved clusters.
    """
    pool = []
    for rec in records:
        for frame, vec, _click in rec.events:
            pool.append((frame, rec.annotator_id, np.asarray(vec)))
    pool.sort(key=lambda e: (e[0], e[1]))
    if not pool:
        return [], []

    clusters = []
    for entry in pool:
        if clusters and entry[0] - clusters[-1][-1][0] <= tol:
            clusters[-1].append(entry)
        else:
            clusters.append([entry])

    n_annotators = len({rec.annotator_id for rec in records})
    events, conflicts = [], []
    for cluster in clusters:
        frames = sorted(e[0] for e in cluster)
        median_frame = frames[(len(frames) - 1) // 2]
        by_annotator = {}
        duplicate = False
        for frame, annotator, vec in cluster:
            if annotator in by_annotator:
                duplicate = True
            else:
                by_annotator[annotator] = vec
        unresolved = []
        assign = {}
        for sc in taxonomy.subclasses:
            votes = {}
            for vec in by_annotator.values():
                value = taxonomy.subclass_value(vec, sc.index)
                votes[value] = votes.get(value, 0) + 1
            ranked = sorted(votes.items(), key=lambda kv: (-kv[1], str(kv[0])))
            if len(ranked) > 1 and ranked[0][1] == ranked[1][1]:
                unresolved.append((sc.name, dict(votes)))
            else:
                assign[sc.name] = ranked[0][0] or "-"
        if duplicate:
            unresolved.append(("alignment", {"duplicate-annotator-event": 1}))
        if unresolved:
            conflicts.append({
                "frame": median_frame,
                "frames": frames,
                "annotators": sorted(by_annotator),
                "unresolved": unresolved,
            })
        else:
            events.append((median_frame, taxonomy.encode(assign)))
    events.sort(key=lambda fv: fv[0])
    return events, conflicts
