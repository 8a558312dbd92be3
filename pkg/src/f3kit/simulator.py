"""Synthetic rally datasets: rule-consistent event sequences plus
renderable frame data.

Sequences are sampled by walking the rulebook's legal continuations, so
every generated rally passes hard validation by construction.  Rendering
in feature mode plants an additive signature (a fixed linear embedding of
the event vector) on each hit frame; the direction and outcome components
are planted only on frames *after* the hit, so recovering them requires
temporal context.  Pixel mode draws a minimal court with player blobs and
a ball dot.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .dataset_io import (ClipManifest, make_splits, save_features,
                         save_frames, write_manifest, write_splits)
from .rulebook import RallyContext, Rulebook, load_rules
from .taxonomy import ABSENT, Taxonomy, load_taxonomy

# Empirical per-element frequencies on broadcast tennis; used as sampling
# targets so synthetic datasets reproduce the real long-tail regime.
TENNIS_ELEMENT_FREQUENCIES = {
    "near": 0.501, "far": 0.499,
    "deuce": 0.338, "middle": 0.281, "ad": 0.381,
    "fh": 0.649, "bh": 0.351,
    "serve": 0.270, "return": 0.192, "stroke": 0.538,
    "T": 0.103, "B": 0.052, "W": 0.115,
    "CC": 0.279, "DL": 0.082, "DM": 0.258, "II": 0.014, "IO": 0.097,
    "gs": 0.894, "slice": 0.078, "volley": 0.012,
    "lob": 0.008, "drop": 0.005, "smash": 0.003,
    "apr": 0.023,
    "in": 0.730, "winner": 0.087, "forced-err": 0.065, "unforced-err": 0.118,
}
NO_MOVEMENT_FREQUENCY = 0.977


@dataclass
class SimConfig:
    seed: int = 0
    num_clips: int = 100
    taxonomy_name: str = "tennis-singles"
    fps: float = 25.0
    events_per_second: float = 1.0
    min_gap_frames: int = 10
    gap_jitter: float = 0.25          # relative std of inter-event gaps
    lead_in_seconds: float = 1.5
    tail_seconds: float = 2.0
    max_clip_frames: int = 2048
    rally_continue_p: float = 0.73    # geometric rally length, mean ~3.7
    max_rally_shots: int = 34
    clips_per_video: int = 5
    left_handed_rate: float = 0.1
    render_mode: str = "features"     # features | pixels
    feature_dim: int = 64
    pixel_size: int = 32
    signature_scale: float = 1.0
    outcome_scale: float = 0.75       # outcome cues are visually subtler
    noise_sigma: float = 0.5
    distractor_rate: float = 0.005
    hit_offsets: tuple = (0, 1, 2, 3)       # swing plus follow-through
    post_event_offsets: tuple = (4, 5, 6, 7)  # ball flight and landing
    post_event_subclasses: tuple = ("direction", "outcome")
    marginals: dict = field(default_factory=lambda: dict(TENNIS_ELEMENT_FREQUENCIES))

    def validate(self, taxonomy):
        if self.render_mode not in ("features", "pixels"):
            raise ValueError(f"unknown render mode {self.render_mode!r}")
        if self.render_mode == "features" and self.feature_dim < taxonomy.K:
            raise ValueError("feature_dim must be >= the taxonomy element count")
        if not 0 < self.rally_continue_p < 1:
            raise ValueError("rally_continue_p must be in (0, 1)")
        return self


def _weighted_choice(rng, names, weights_table):
    names = sorted(names)
    w = np.array([max(weights_table.get(n, 1.0), 1e-9) for n in names])
    return names[rng.choice(len(names), p=w / w.sum())]


def sample_rally(ctx: RallyContext, config: SimConfig, rng,
                 taxonomy: Taxonomy, rules: Rulebook):
    """One rule-consistent rally: returns (events, trace).

    `events` is an ordered list of (frame, event_vector); `trace` records
    the sampled path (length, truncation, context).
    """
    marg = config.marginals
    # rally length: geometric, truncated at the configured maximum
    length = 1
    while length < config.max_rally_shots and rng.random() < config.rally_continue_p:
        length += 1

    gap_mean = config.fps / config.events_per_second
    t = int(round(config.lead_in_seconds * config.fps))
    events = []
    truncated = False
    last_vec = None
    frame_budget = config.max_clip_frames - int(config.tail_seconds * config.fps)

    for i in range(length):
        if t > frame_budget:
            truncated = True
            break
        domains = rules.legal_followups(last_vec, ctx)
        if not domains and last_vec is not None:
            break
        assign = {}
        player = _pick(domains, "player", taxonomy, rng, marg)
        assign["player"] = player
        hand = ctx.hand_of(player)
        shot = _pick(domains, "shot", taxonomy, rng, marg)
        assign["shot"] = shot
        is_serve = shot in ("serve", "serve-short", "serve-long")

        court_domain = domains.get("court")
        if court_domain is None:
            court_domain = set(taxonomy.subclass("court").elements)
        court_domain = _restrict_by_combination(rules, "court", shot, court_domain)
        court = _weighted_choice(rng, court_domain, marg)
        assign["court"] = court

        side = None
        if _subclass_applies(rules, "side", shot, taxonomy):
            side = _weighted_choice(rng, taxonomy.subclass("side").elements, marg)
            assign["side"] = side

        directions = rules.direction_domain(shot, court=court, side=side, hand=hand)
        assign["direction"] = _weighted_choice(rng, directions, marg)

        if taxonomy.has_subclass("technique") and \
                _subclass_applies(rules, "technique", shot, taxonomy):
            techs = _restrict_by_combination(
                rules, "technique", shot, set(taxonomy.subclass("technique").elements))
            assign["technique"] = _weighted_choice(rng, techs, marg)

        if taxonomy.has_subclass("movement") and not is_serve:
            if rng.random() < marg.get("apr", 0.0):
                assign["movement"] = "apr"

        outcomes = _restrict_by_combination(
            rules, "outcome", shot, set(taxonomy.subclass("outcome").elements))
        if i + 1 < length:
            assign["outcome"] = "in"
        else:
            terminal = sorted(outcomes & rules.terminal_outcomes)
            assign["outcome"] = _weighted_choice(rng, terminal, marg)

        for sc in taxonomy.subclasses:
            assign.setdefault(sc.name, ABSENT)
        vec = taxonomy.encode(assign)
        events.append((t, vec))
        last_vec = vec

        gap = int(round(rng.normal(gap_mean, gap_mean * config.gap_jitter)))
        t += max(config.min_gap_frames, gap)

    trace = {"length": length, "emitted": len(events), "truncated": truncated,
             "near_hand": ctx.near_hand, "far_hand": ctx.far_hand,
             "serving": ctx.serving}
    return events, trace


def _pick(domains, sc_name, taxonomy, rng, marg):
    domain = domains.get(sc_name)
    if domain is None:
        domain = set(taxonomy.subclass(sc_name).elements)
    return _weighted_choice(rng, domain, marg)


def _restrict_by_combination(rules, target_sc, shot, domain):
    for rule, cond_sc, cond_els, mode, tsc, allowed in rules.combinations:
        if not rule.hard or tsc != target_sc or mode != "allow":
            continue
        if cond_sc == "shot" and shot in cond_els:
            domain = domain & set(allowed)
    return domain


def _subclass_applies(rules, sc_name, shot, taxonomy):
    """False when a hard rule forbids the sub-class for this shot type."""
    if not taxonomy.has_subclass(sc_name):
        return False
    for rule, cond_sc, cond_els, mode, tsc, _ in rules.combinations:
        if rule.hard and mode == "forbid" and tsc == sc_name \
                and cond_sc == "shot" and shot in cond_els:
            return False
    return True


# ----------------------------------------------------------------------
# rendering

def make_signature(config: SimConfig, taxonomy: Taxonomy):
    """Fixed [K, D] embedding with unit rows; deterministic per seed."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x517]))
    mat = rng.standard_normal((taxonomy.K, config.feature_dim))
    mat /= np.linalg.norm(mat, axis=1, keepdims=True)
    return mat * config.signature_scale


def signature_frames(events, num_frames, config, taxonomy, signature):
    """Noise-free additive signal: per-frame sum of signature rows.

    The hit offsets carry the elements of the at-hit sub-classes (the
    motion evidence spans the hit moment and the following frame); the
    post-event offsets carry the direction/outcome elements, scaled by
    `outcome_scale` for the outcome, so those sub-classes can only be
    read from frames after the hit."""
    post_idx = np.zeros(taxonomy.K, dtype=bool)
    outcome_idx = np.zeros(taxonomy.K, dtype=bool)
    for sc_name in config.post_event_subclasses:
        if not taxonomy.has_subclass(sc_name):
            continue
        sc = taxonomy.subclass(sc_name)
        for el in sc.elements:
            post_idx[taxonomy.element(el, sc.index).global_index - 1] = True
    if taxonomy.has_subclass("outcome"):
        sc = taxonomy.subclass("outcome")
        for el in sc.elements:
            outcome_idx[taxonomy.element(el, sc.index).global_index - 1] = True

    clean = np.zeros((num_frames, config.feature_dim))
    for t, vec in events:
        bits = np.asarray(vec, dtype=bool)
        athit = bits & ~post_idx
        post = bits & post_idx
        scale = np.where(outcome_idx, config.outcome_scale, 1.0)
        for off in config.hit_offsets:
            if t + off < num_frames:
                clean[t + off] += signature[athit].sum(axis=0)
        for off in config.post_event_offsets:
            if t + off < num_frames:
                clean[t + off] += (signature * (post * scale)[:, None]).sum(axis=0)
    return clean


def render(events, num_frames, config: SimConfig, rng, taxonomy, signature=None):
    """Frame tensor for one clip: [N, D] features or [N, H, W, 3] pixels."""
    if config.render_mode == "features":
        if signature is None:
            signature = make_signature(config, taxonomy)
        frames = signature_frames(events, num_frames, config, taxonomy, signature)
        if config.noise_sigma > 0:
            frames = frames + rng.normal(
                0.0, config.noise_sigma, frames.shape)
        if config.distractor_rate > 0:
            event_frames = {t for t, _ in events}
            n_spur = rng.binomial(num_frames, config.distractor_rate)
            for t in rng.choice(num_frames, size=n_spur, replace=False):
                if int(t) in event_frames:
                    continue
                v = rng.standard_normal(config.feature_dim)
                frames[t] += v / np.linalg.norm(v) * config.signature_scale
        return frames.astype(np.float32)
    return _render_pixels(events, num_frames, config, rng, taxonomy)


_COURT_X = {"deuce": 0.75, "middle": 0.5, "ad": 0.25,
            "left": 0.25, "right": 0.75}


def _render_pixels(events, num_frames, config, rng, taxonomy):
    size = config.pixel_size
    frames = np.zeros((num_frames, size, size, 3), dtype=np.float32)
    frames[..., 1] = 0.35                        # court green
    frames[:, size // 2, :, :] = 0.8             # net line
    frames[:, :, (2, size - 3), :] = 0.6         # side lines

    def blob(img, y, x, color, radius=1):
        y0, y1 = max(0, y - radius), min(size, y + radius + 1)
        x0, x1 = max(0, x - radius), min(size, x + radius + 1)
        img[y0:y1, x0:x1] = color

    ball_path = {}
    for t, vec in events:
        player = taxonomy.subclass_value(vec, "player")
        court = taxonomy.subclass_value(vec, "court") or "middle"
        x = int(_COURT_X.get(court, 0.5) * size)
        y = int(size * (0.85 if player == "near" else 0.15))
        for dt in range(-1, 2):
            if 0 <= t + dt < num_frames:
                ball_path.setdefault(t + dt, []).append((y, x, dt))
        # ball travels away from the hitter on following frames
        direction = taxonomy.subclass_value(vec, "direction")
        for off in config.post_event_offsets:
            if t + off < num_frames:
                frac = off / (max(config.post_event_offsets) + 1)
                ty = int(y + (size * (0.15 if player == "near" else 0.85) - y) * frac)
                shift = {"CC": -4, "DL": 4, "II": 2, "IO": -2}.get(direction, 0)
                ball_path.setdefault(t + off, []).append((ty, x + shift, off))

    for t in range(num_frames):
        img = frames[t]
        blob(img, int(size * 0.9), size // 2, np.array([0.9, 0.2, 0.2]))   # near player
        blob(img, int(size * 0.1), size // 2, np.array([0.2, 0.2, 0.9]))   # far player
        for y, x, _ in ball_path.get(t, []):
            blob(img, int(np.clip(y, 0, size - 1)), int(np.clip(x, 0, size - 1)),
                 np.array([1.0, 1.0, 0.2]), radius=0)
        if config.noise_sigma > 0:
            img += rng.normal(0.0, config.noise_sigma * 0.05, img.shape)
    return np.clip(frames, 0.0, 1.0)


# ----------------------------------------------------------------------
# dataset generation

def generate(config: SimConfig, out_dir, taxonomy=None, rules=None):
    """Write a full synthetic dataset (manifest, splits, frame payloads).

    Per-clip RNG streams are spawned from the master seed, so generation
    is deterministic and clips are independent."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    taxonomy = taxonomy or load_taxonomy(config.taxonomy_name)
    rules = rules or load_rules(taxonomy)
    config.validate(taxonomy)

    master = np.random.SeedSequence(config.seed)
    clip_seeds = master.spawn(config.num_clips)
    aux = master.spawn(2)
    video_rng = np.random.default_rng(aux[0])
    signature = make_signature(config, taxonomy) \
        if config.render_mode == "features" else None

    num_videos = max(1, -(-config.num_clips // config.clips_per_video))
    video_ctx = []
    for v in range(num_videos):
        video_ctx.append((
            "left" if video_rng.random() < config.left_handed_rate else "right",
            "left" if video_rng.random() < config.left_handed_rate else "right"))

    clips = []
    traces = {}
    for i in range(config.num_clips):
        rng = np.random.default_rng(clip_seeds[i])
        vid = i // config.clips_per_video
        near_hand, far_hand = video_ctx[vid]
        ctx = RallyContext(near_hand, far_hand,
                           serving="near" if i % 2 == 0 else "far")
        events, trace = sample_rally(ctx, config, rng, taxonomy, rules)
        last_t = events[-1][0] if events else int(config.lead_in_seconds * config.fps)
        num_frames = min(config.max_clip_frames,
                         last_t + int(round(config.tail_seconds * config.fps)))
        clip_id = f"sim{i:05d}"
        payload = render(events, num_frames, config, rng, taxonomy, signature)
        if config.render_mode == "features":
            source_kind, source_path = "features", f"{clip_id}.feat"
            save_features(payload, out / source_path)
        else:
            source_kind, source_path = "frames", f"frames/{clip_id}"
            save_frames(payload, out / source_path)
        clips.append(ClipManifest(
            clip_id, config.fps, num_frames, events,
            video_id=f"video{vid:04d}", source_kind=source_kind,
            source_path=source_path, ctx=ctx))
        traces[clip_id] = trace

    clips = make_splits(clips, (3, 1, 1), seed=int(aux[1].generate_state(1)[0]) % (2**31))
    write_manifest(clips, out / "manifest.f3", taxonomy)
    write_splits(clips, out / "splits.f3")
    write_simconfig(config, out / "simconfig.f3")
    return clips, traces


def write_simconfig(config, path):
    lines = ["f3-simconfig v1"]
    for key, value in asdict(config).items():
        if key == "marginals":
            continue
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} {value}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_simconfig(path):
    config = SimConfig()
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith("f3-simconfig"):
            continue
        key, _, value = line.partition(" ")
        if not hasattr(config, key):
            raise ValueError(f"unknown simconfig key {key!r}")
        current = getattr(config, key)
        if isinstance(current, tuple):
            parsed = tuple(
                s if key == "post_event_subclasses" else int(s)
                for s in value.split(",") if s)
        elif isinstance(current, bool):
            parsed = value == "True"
        elif isinstance(current, int):
            parsed = int(value)
        elif isinstance(current, float):
            parsed = float(value)
        else:
            parsed = value
        setattr(config, key, parsed)
    return config
