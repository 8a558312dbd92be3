"""Sliding-window inference: score fusion, peak picking, per-event
classification, contextual refinement and constrained decoding."""

from __future__ import annotations

import numpy as np

from ..dataset_io import load_clip_payload
from ..rulebook import Rulebook
from .model import F3EDModel


def peak_pick(scores, threshold, min_separation, frames=None):
    """Frames that are strict local maxima with score >= threshold,
    greedily suppressed within `min_separation` frames (the higher score
    wins; ties go to the earlier frame).

    `scores` is a dense per-frame array; with `frames` given, `scores[i]`
    belongs to original frame index `frames[i]` (used for strided
    sampling) and locality is judged on the subsampled sequence.
    """
    scores = np.asarray(scores, dtype=float)
    n = len(scores)
    if frames is None:
        frames = np.arange(n)
    candidates = []
    for i in range(n):
        if scores[i] < threshold:
            continue
        left = scores[i - 1] if i > 0 else -np.inf
        right = scores[i + 1] if i + 1 < n else -np.inf
        if scores[i] > left and scores[i] > right:
            candidates.append(i)
    picked = []
    for i in sorted(candidates, key=lambda i: (-scores[i], frames[i])):
        if all(abs(frames[i] - frames[j]) > min_separation for j in picked):
            picked.append(i)
    return sorted(int(frames[i]) for i in picked)


def constrained_decode(probs, taxonomy, g, rules: Rulebook | None = None):
    """Per-sub-class argmax under the granularity, then a repair pass.

    Always-one sub-classes take their highest-probability element; a
    conditional sub-class stays absent unless its best element reaches 0.5.
    Combination rules then repair only the offending sub-class, replacing
    its value with the best rule-satisfying one.
    """
    g = taxonomy.granularity(g)
    probs = np.asarray(probs, dtype=float)
    choice = {}
    for i in g.ordered():
        sc = taxonomy.subclass(i)
        idx = [taxonomy.element(el, i).global_index - 1 for el in sc.elements]
        best = int(np.argmax(probs[idx]))
        if sc.always_one or probs[idx[best]] >= 0.5:
            choice[sc.name] = sc.elements[best]
        else:
            choice[sc.name] = None

    if rules is not None:
        for _ in range(2):
            changed = False
            for rule, cond_sc, cond_els, mode, target_sc, allowed in rules.combinations:
                if not rule.hard:
                    continue
                if taxonomy.subclass(cond_sc).index not in g.indices:
                    continue
                if taxonomy.subclass(target_sc).index not in g.indices:
                    continue
                if choice.get(cond_sc) not in cond_els:
                    continue
                sc = taxonomy.subclass(target_sc)
                idx = {el: taxonomy.element(el, sc.index).global_index - 1
                       for el in sc.elements}
                value = choice.get(target_sc)
                if mode == "allow" and value is not None and value not in allowed:
                    legal = [el for el in sc.elements if el in allowed]
                    choice[target_sc] = max(legal, key=lambda el: probs[idx[el]])
                    changed = True
                elif mode == "require" and value is None:
                    choice[target_sc] = max(sc.elements, key=lambda el: probs[idx[el]])
                    changed = True
                elif mode == "forbid" and value is not None:
                    choice[target_sc] = None
                    changed = True
            if not changed:
                break

    assign = {name: (el if el is not None else "-") for name, el in choice.items()}
    for sc in taxonomy.subclasses:
        assign.setdefault(sc.name, "-")
    return taxonomy.encode(assign)


def infer_clip(model: F3EDModel, payload, num_frames, rules=None,
               window_overlap=None):
    """Detect the event sequence of one clip.

    Sliding windows are scored, overlapping per-frame scores averaged,
    peaks picked, element probabilities read at the peak rows, the
    sequence refined by CTX, and each event decoded under the model's
    granularity with rule repair.  Returns a list of dicts sorted by frame.
    """
    cfg = model.config
    L, s = cfg.clip_length, cfg.stride
    span = L * s
    overlap = cfg.window_overlap if window_overlap is None else window_overlap
    hop = max(1, int(round(span * (1.0 - overlap))))
    starts = [0]
    while starts[-1] + span < num_frames:
        starts.append(starts[-1] + hop)

    dt = cfg.np_dtype()
    score_sum = np.zeros(num_frames)
    score_cnt = np.zeros(num_frames)
    multiclass = cfg.head_mode == "multi-class"
    class_sum = np.zeros((num_frames, len(model.class_list) + 1)) \
        if multiclass else None
    per_window = []

    for start in starts:
        frames = start + s * np.arange(L)
        valid = frames < num_frames
        n_valid = int(valid.sum())
        x = np.zeros((1, L) + payload.shape[1:], dtype=dt)
        x[0, :n_valid] = payload[frames[:n_valid]]
        F, scores = model.frame_scores(x, np.array([n_valid]))
        if multiclass:
            class_sum[frames[:n_valid]] += scores[0, :n_valid]
        else:
            score_sum[frames[:n_valid]] += scores[0, :n_valid]
        score_cnt[frames[:n_valid]] += 1.0
        per_window.append((start, n_valid, F[0]))

    sampled = np.flatnonzero(score_cnt > 0)
    if multiclass:
        return _decode_multiclass(model, class_sum, score_cnt, sampled)

    mean_scores = score_sum[sampled] / score_cnt[sampled]
    peaks = peak_pick(mean_scores, cfg.threshold, cfg.min_separation,
                      frames=sampled)
    if not peaks:
        return []

    rows = []
    confs = []
    mean_by_frame = dict(zip(sampled.tolist(), mean_scores.tolist()))
    for f in peaks:
        # read the embedding from the window covering f most centrally
        best = None
        for start, n_valid, F in per_window:
            pos = (f - start) // s
            if 0 <= pos < n_valid and (f - start) % s == 0:
                margin = min(pos, n_valid - 1 - pos)
                if best is None or margin > best[0]:
                    best = (margin, F[pos])
        rows.append(best[1])
        confs.append(mean_by_frame[f])
    e_hat, e_logit = model.element_scores(np.stack(rows))
    refined = model.refine_sequence(e_logit, e_hat, confs)

    out = []
    for i, f in enumerate(peaks):
        vec = constrained_decode(refined[i], model.taxonomy, model.g, rules)
        out.append({"frame": int(f), "vector": vec,
                    "probs": np.asarray(refined[i], dtype=float),
                    "visual_probs": np.asarray(e_hat[i], dtype=float),
                    "conf": float(confs[i])})
    return out


def _decode_multiclass(model, class_sum, score_cnt, sampled):
    cfg = model.config
    probs = class_sum[sampled] / score_cnt[sampled, None]
    argmax = probs.argmax(axis=1)            # ties resolve to background (0)
    fg = argmax > 0
    if not fg.any():
        return []
    fg_scores = probs[np.arange(len(sampled)), argmax] * fg
    peaks = peak_pick(fg_scores, 1e-9, cfg.min_separation, frames=sampled)
    frame_to_i = {int(f): i for i, f in enumerate(sampled)}
    out = []
    for f in peaks:
        i = frame_to_i[f]
        cls = int(argmax[i])
        if cls == 0:
            continue
        name = model.class_list[cls - 1]
        vec = model.taxonomy.parse_event(name, model.g)
        out.append({"frame": int(f), "vector": vec,
                    "probs": np.zeros(model.taxonomy.K),
                    "visual_probs": np.zeros(model.taxonomy.K),
                    "conf": float(probs[i, cls])})
    return out


def infer_dataset(model, clips, root, rules=None, split=None):
    """Run inference over a manifest's clips; returns {clip_id: events}."""
    out = {}
    for clip in clips:
        if split is not None and clip.split != split:
            continue
        payload = load_clip_payload(clip, root)
        out[clip.clip_id] = infer_clip(model, payload, clip.num_frames, rules)
    return out
