"""Benchmark evaluation: edit score and tolerance-matched F1 families.

Sequences compare as event-type token strings at a chosen granularity for
the edit score, and as (frame, type) / (frame, element-vector) pairs for
the F1 metrics.  A prediction only counts as a true positive when it is
matched one-to-one to a ground-truth event within ``tol`` frames (and, for
the class-strict variants, with an identical type string).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rulebook import hard_only


def levenshtein(a, b):
    """Unit-cost insert/delete/substitute edit distance between token
    sequences, by dynamic programming in O(len(a) * len(b))."""
    n, m = len(a), len(b)
    if n == 0:
        return m
    if m == 0:
        return n
    prev = list(range(m + 1))
    for i in range(1, n + 1):
        cur = [i] + [0] * m
        ai = a[i - 1]
        for j in range(1, m + 1):
            cur[j] = min(prev[j] + 1,
                         cur[j - 1] + 1,
                         prev[j - 1] + (ai != b[j - 1]))
        prev = cur
    return prev[m]


def edit_score(pred_types, gt_types):
    """100 * (1 - levenshtein / max(len, 1)); timestamps are ignored."""
    denom = max(len(pred_types), len(gt_types), 1)
    return 100.0 * (1.0 - levenshtein(pred_types, gt_types) / denom)


@dataclass
class Matching:
    """One-to-one alignment between predicted and ground-truth events."""

    pairs: list            # (pred_index, gt_index, |frame delta|)
    unmatched_pred: list
    unmatched_gt: list


def match_events(pred, gt, tol, class_strict=False):
    """Greedy one-to-one matching.

    Predictions are visited in ascending frame order; each one takes the
    nearest still-unmatched ground-truth event within `tol` frames (equal
    in type when `class_strict`), distance ties going to the earlier
    ground-truth event.  `pred` and `gt` are sequences of (frame, key).
    """
    if tol < 0:
        raise ValueError("tolerance must be >= 0")
    taken = [False] * len(gt)
    pairs, unmatched_pred = [], []
    order = sorted(range(len(pred)), key=lambda i: (pred[i][0], i))
    for pi in order:
        pf, pk = pred[pi]
        best = None
        for gi, (gf, gk) in enumerate(gt):
            if taken[gi]:
                continue
            if class_strict and pk != gk:
                continue
            d = abs(pf - gf)
            if d <= tol and (best is None or d < best[0]):
                best = (d, gi)
        if best is None:
            unmatched_pred.append(pi)
        else:
            taken[best[1]] = True
            pairs.append((pi, best[1], best[0]))
    unmatched_gt = [gi for gi, t in enumerate(taken) if not t]
    return Matching(pairs, sorted(unmatched_pred), unmatched_gt)


def _f1(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom else 0.0


def f1_evt(pred_clips, gt_clips, tol):
    """Macro F1 over event types with class-strict matching.

    `pred_clips` / `gt_clips` are parallel lists of event sequences, each a
    list of (frame, type_string).  Counts are pooled across clips; the
    class universe is the union of types appearing in ground truth or
    predictions, so hallucinated classes pull the mean down.
    Returns (macro_f1, per_class) where per_class maps the type string to
    (tp, fp, fn, f1).
    """
    counts = {}
    for pred, gt in zip(pred_clips, gt_clips):
        m = match_events(pred, gt, tol, class_strict=True)
        for pi, gi, _ in m.pairs:
            c = counts.setdefault(pred[pi][1], [0, 0, 0])
            c[0] += 1
        for pi in m.unmatched_pred:
            counts.setdefault(pred[pi][1], [0, 0, 0])[1] += 1
        for gi in m.unmatched_gt:
            counts.setdefault(gt[gi][1], [0, 0, 0])[2] += 1
    if not counts:
        return 0.0, {}
    per_class = {k: (tp, fp, fn, _f1(tp, fp, fn))
                 for k, (tp, fp, fn) in sorted(counts.items())}
    macro = float(np.mean([v[3] for v in per_class.values()]))
    return macro, per_class


def f1_elm(pred_clips, gt_clips, tol, taxonomy, g=None):
    """Macro F1 over the elements of granularity `g`.

    Events are matched by location only; matched pairs then compare
    bitwise, while every set bit of an unmatched prediction counts as a
    false positive and of an unmatched ground-truth event as a false
    negative.  Elements never touched by either side are left out of the
    mean.  Sequences are lists of (frame, element_vector).
    """
    g = taxonomy.full if g is None else taxonomy.granularity(g)
    keep = np.zeros(taxonomy.K, dtype=bool)
    for i in g.ordered():
        for el in taxonomy.subclass(i).elements:
            keep[taxonomy.element(el, i).global_index - 1] = True
    idx = np.flatnonzero(keep)

    tp = np.zeros(taxonomy.K)
    fp = np.zeros(taxonomy.K)
    fn = np.zeros(taxonomy.K)
    for pred, gt in zip(pred_clips, gt_clips):
        m = match_events([(f, None) for f, _ in pred],
                         [(f, None) for f, _ in gt], tol)
        for pi, gi, _ in m.pairs:
            pv = np.asarray(pred[pi][1], dtype=bool)
            gv = np.asarray(gt[gi][1], dtype=bool)
            tp += pv & gv
            fp += pv & ~gv
            fn += ~pv & gv
        for pi in m.unmatched_pred:
            fp += np.asarray(pred[pi][1], dtype=bool)
        for gi in m.unmatched_gt:
            fn += np.asarray(gt[gi][1], dtype=bool)

    scores = []
    per_element = {}
    for j in idx:
        total = tp[j] + fp[j] + fn[j]
        if total == 0:
            continue
        s = _f1(tp[j], fp[j], fn[j])
        per_element[taxonomy.elements[j].name] = s
        scores.append(s)
    return (float(np.mean(scores)) if scores else 0.0), per_element


def f1_lcl(pred_clips, gt_clips, tol):
    """Micro F1 of event-moment localization, ignoring classes.

    Sequences are lists of frames (or (frame, anything) pairs)."""
    tp = fp = fn = 0
    for pred, gt in zip(pred_clips, gt_clips):
        pf = [(p[0], None) if isinstance(p, (tuple, list)) else (p, None) for p in pred]
        gf = [(p[0], None) if isinstance(p, (tuple, list)) else (p, None) for p in gt]
        m = match_events(pf, gf, tol)
        tp += len(m.pairs)
        fp += len(m.unmatched_pred)
        fn += len(m.unmatched_gt)
    return _f1(tp, fp, fn)


@dataclass
class EvalReport:
    granularity: str
    tol: int
    num_clips: int
    edit: float                    # [0, 100]
    f1_evt: float                  # [0, 1]
    f1_elm: float
    f1_lcl: float
    per_class: dict = field(default_factory=dict)
    per_element: dict = field(default_factory=dict)
    hard_violations: int = 0
    soft_violations: int = 0

    def summary_lines(self):
        return [
            f"granularity {self.granularity} (tol ±{self.tol}, {self.num_clips} clips)",
            f"  edit score   {self.edit:7.3f}",
            f"  F1_evt       {self.f1_evt:7.4f}",
            f"  F1_elm       {self.f1_elm:7.4f}",
            f"  F1_lcl       {self.f1_lcl:7.4f}",
            f"  rule violations: {self.hard_violations} hard, "
            f"{self.soft_violations} soft",
        ]


def evaluate(predictions, ground_truth, taxonomy, tol=1, granularities=None,
             rules=None, contexts=None):
    """Full evaluation across granularity levels.

    `predictions` and `ground_truth` map clip-id to event lists of
    (frame, element_vector); both must cover the same clips.  When a
    rulebook is given, hard/soft violation counts of the predicted
    sequences are reported as diagnostics.
    """
    if set(predictions) != set(ground_truth):
        missing = set(predictions) ^ set(ground_truth)
        raise ValueError(f"clip ids differ between files: {sorted(missing)[:5]}")
    clip_ids = sorted(ground_truth)
    if granularities is None:
        granularities = sorted(taxonomy.granularities) or ["full"]

    reports = {}
    for gname in granularities:
        g = taxonomy.granularity(gname)
        pred_typed, gt_typed, pred_vec, gt_vec = [], [], [], []
        edits = []
        for cid in clip_ids:
            pt, pv, gt_t, gv = [], [], [], []
            for f, vec in predictions[cid]:
                proj = taxonomy.project(vec, g)
                pt.append((f, taxonomy.decode(proj, g)))
                pv.append((f, proj))
            for f, vec in ground_truth[cid]:
                proj = taxonomy.project(vec, g)
                gt_t.append((f, taxonomy.decode(proj, g)))
                gv.append((f, proj))
            pred_typed.append(pt)
            gt_typed.append(gt_t)
            pred_vec.append(pv)
            gt_vec.append(gv)
            edits.append(edit_score([k for _, k in pt], [k for _, k in gt_t]))

        macro_evt, per_class = f1_evt(pred_typed, gt_typed, tol)
        macro_elm, per_element = f1_elm(pred_vec, gt_vec, tol, taxonomy, g)
        lcl = f1_lcl(pred_typed, gt_typed, tol)

        hard = soft = 0
        if rules is not None:
            for cid in clip_ids:
                ctx = (contexts or {}).get(cid)
                vs = rules.validate_sequence(
                    [vec for _, vec in predictions[cid]], ctx)
                for v in [x for x in vs]:
                    if v.hard:
                        hard += 1
                    else:
                        soft += 1
                for _, vec in predictions[cid]:
                    hard += len(hard_only(rules.check_combination(vec)))

        reports[gname] = EvalReport(
            granularity=gname, tol=tol, num_clips=len(clip_ids),
            edit=float(np.mean(edits)) if edits else 100.0,
            f1_evt=macro_evt, f1_elm=macro_elm, f1_lcl=lcl,
            per_class=per_class, per_element=per_element,
            hard_violations=hard, soft_violations=soft)
    return reports
