import hashlib

import numpy as np
import pytest

from f3kit import RallyContext
from f3kit.dataset_io import read_manifest
from f3kit.rulebook import hard_only
from f3kit.simulator import (SimConfig, generate, make_signature, render,
                             sample_rally, signature_frames)


def test_rally_final_outcome_is_terminal(tennis, tennis_rules):
    cfg = SimConfig(seed=1)
    rng = np.random.default_rng(0)
    for i in range(100):
        events, trace = sample_rally(RallyContext(), cfg, rng, tennis, tennis_rules)
        last = events[-1][1]
        outcome = tennis.subclass_value(last, "outcome")
        if trace["truncated"]:
            assert outcome == "in"
        else:
            assert outcome in ("winner", "forced-err", "unforced-err")
        for _t, vec in events[:-1]:
            assert tennis.subclass_value(vec, "outcome") == "in"


def test_rally_deterministic_per_seed(tennis, tennis_rules):
    cfg = SimConfig(seed=1)
    a, _ = sample_rally(RallyContext(), cfg, np.random.default_rng(5),
                        tennis, tennis_rules)
    b, _ = sample_rally(RallyContext(), cfg, np.random.default_rng(5),
                        tennis, tennis_rules)
    assert [(t, tennis.decode(v)) for t, v in a] == \
        [(t, tennis.decode(v)) for t, v in b]


def test_forehand_fraction_matches_target(tennis, tennis_rules):
    cfg = SimConfig(seed=1)
    rng = np.random.default_rng(11)
    fh = sided = 0
    shots = 0
    while shots < 10000:
        events, _ = sample_rally(RallyContext(), cfg, rng, tennis, tennis_rules)
        shots += len(events)
        for _t, vec in events:
            side = tennis.subclass_value(vec, "side")
            if side is not None:
                sided += 1
                fh += side == "fh"
    assert abs(fh / sided - 0.649) < 0.05


def test_mean_gap_near_one_event_per_second(tennis, tennis_rules):
    cfg = SimConfig(seed=1, fps=25, events_per_second=1.0)
    rng = np.random.default_rng(2)
    gaps = []
    for _ in range(1000):
        events, _ = sample_rally(RallyContext(), cfg, rng, tennis, tennis_rules)
        frames = [t for t, _ in events]
        gaps += [b - a for a, b in zip(frames, frames[1:])]
    mean = np.mean(gaps)
    assert abs(mean - 25.0) / 25.0 < 0.10


def test_render_noiseless_signature_exact(tennis):
    cfg = SimConfig(seed=3, noise_sigma=0.0, distractor_rate=0.0)
    sig = make_signature(cfg, tennis)
    vec = tennis.parse_event("far_ad_bh_stroke_DL_slice_apr_in")
    events = [(20, vec)]
    frames = render(events, 60, cfg, np.random.default_rng(0), tennis, sig)
    clean = signature_frames(events, 60, cfg, tennis, sig)
    assert np.allclose(frames, clean.astype(np.float32))
    assert np.allclose(frames[0], 0.0)          # background is silent at sigma=0


def test_render_same_type_differs_only_in_placement(tennis):
    cfg = SimConfig(seed=3, noise_sigma=0.0, distractor_rate=0.0)
    sig = make_signature(cfg, tennis)
    vec = tennis.parse_event("near_deuce_serve_-_-_T_-_in")
    f1 = render([(10, vec)], 60, cfg, np.random.default_rng(0), tennis, sig)
    f2 = render([(30, vec)], 60, cfg, np.random.default_rng(0), tennis, sig)
    assert np.allclose(f1[10:18], f2[30:38])


def test_least_squares_recovers_bits_at_sigma_zero(tennis):
    cfg = SimConfig(seed=3, noise_sigma=0.0, distractor_rate=0.0)
    sig = make_signature(cfg, tennis)
    post = np.zeros(tennis.K, dtype=bool)
    for scn in cfg.post_event_subclasses:
        sc = tennis.subclass(scn)
        for el in sc.elements:
            post[tennis.element(el, sc.index).global_index - 1] = True
    outcome = np.zeros(tennis.K, dtype=bool)
    sc = tennis.subclass("outcome")
    for el in sc.elements:
        outcome[tennis.element(el, sc.index).global_index - 1] = True
    scale = np.where(outcome, cfg.outcome_scale, 1.0)

    vec = tennis.parse_event("far_ad_bh_stroke_DL_slice_apr_in")
    t = 20
    frames = render([(t, vec)], 60, cfg, np.random.default_rng(0), tennis, sig)
    # at-hit bits from the hit frame
    coef, *_ = np.linalg.lstsq(sig.T, frames[t].astype(np.float64), rcond=None)
    assert np.array_equal((coef > 0.5).astype(np.uint8),
                          (np.asarray(vec, bool) & ~post).astype(np.uint8))
    # direction and outcome bits from a post-event frame
    off = cfg.post_event_offsets[0]
    coef2, *_ = np.linalg.lstsq(sig.T, frames[t + off].astype(np.float64), rcond=None)
    got = (coef2 / scale > 0.5).astype(np.uint8)
    assert np.array_equal(got, (np.asarray(vec, bool) & post).astype(np.uint8))


def test_generate_layout_and_split(tennis, tiny_dataset):
    clips, tax = read_manifest(tiny_dataset / "manifest.f3")
    assert len(clips) == 30
    from collections import Counter

    # whole 5-clip videos go to test, so the closest 3:1:1 split is 19/6/5
    counts = Counter(c.split for c in clips)
    assert counts["val"] == 6 and counts["test"] == 5
    assert counts["train"] == 19
    assert (tiny_dataset / "splits.f3").exists()
    assert (tiny_dataset / "simconfig.f3").exists()
    assert (tiny_dataset / clips[0].source_path).exists()


def test_generate_byte_identical_per_seed(tmp_path):
    cfg = SimConfig(seed=77, num_clips=20)
    generate(cfg, tmp_path / "a")
    generate(SimConfig(seed=77, num_clips=20), tmp_path / "b")

    def digest(p):
        return hashlib.sha256(p.read_bytes()).hexdigest()

    assert digest(tmp_path / "a/manifest.f3") == digest(tmp_path / "b/manifest.f3")
    assert digest(tmp_path / "a/sim00007.feat") == digest(tmp_path / "b/sim00007.feat")


def test_generated_sequences_pass_rules(tennis, tennis_rules, tiny_dataset):
    clips, _ = read_manifest(tiny_dataset / "manifest.f3")
    for clip in clips:
        vecs = [v for _t, v in clip.events]
        assert hard_only(tennis_rules.validate_sequence(vecs, clip.ctx)) == []
        for v in vecs:
            assert hard_only(tennis_rules.check_combination(v)) == []


def test_foreground_fraction_below_three_percent(tiny_dataset):
    clips, _ = read_manifest(tiny_dataset / "manifest.f3")
    events = sum(len(c.events) for c in clips)
    frames = sum(c.num_frames for c in clips)
    assert events / frames < 0.03


def test_simconfig_round_trip(tmp_path):
    from f3kit.simulator import read_simconfig, write_simconfig

    cfg = SimConfig(seed=9, num_clips=12, noise_sigma=0.25,
                    post_event_offsets=(3, 4), render_mode="pixels")
    write_simconfig(cfg, tmp_path / "sim.f3")
    back = read_simconfig(tmp_path / "sim.f3")
    assert back.seed == 9 and back.num_clips == 12
    assert back.noise_sigma == 0.25
    assert back.post_event_offsets == (3, 4)
    assert back.render_mode == "pixels"


def test_pixel_mode_renders_unit_interval(tennis, tennis_rules):
    cfg = SimConfig(seed=5, render_mode="pixels", pixel_size=24)
    rng = np.random.default_rng(1)
    events, _ = sample_rally(RallyContext(), cfg, rng, tennis, tennis_rules)
    n = events[-1][0] + 30
    frames = render(events, n, cfg, rng, tennis)
    assert frames.shape == (n, 24, 24, 3)
    assert frames.min() >= 0.0 and frames.max() <= 1.0


def test_feature_dim_must_cover_elements(tennis):
    with pytest.raises(ValueError):
        SimConfig(feature_dim=8).validate(tennis)
