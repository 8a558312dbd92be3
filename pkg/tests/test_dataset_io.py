import numpy as np
import pytest

from f3kit.dataset_io import (ClipManifest, ManifestError, load_features,
                              make_splits, read_manifest, read_predictions,
                              read_splits, save_features, windowize,
                              write_manifest, write_predictions, write_splits)


def make_clips(tennis, n_videos=5, clips_per_video=20):
    serve = tennis.parse_event("near_deuce_serve_-_-_T_-_in")
    ret = tennis.parse_event("far_middle_return_bh_gs_DM_-_winner")
    clips = []
    for v in range(n_videos):
        for c in range(clips_per_video):
            clips.append(ClipManifest(
                f"v{v}c{c}", 25, 120, [(10, serve), (40, ret)],
                video_id=f"vid{v}"))
    return clips


def test_manifest_round_trip(tennis, tmp_path):
    clips = make_clips(tennis)
    p1, p2 = tmp_path / "a.f3", tmp_path / "b.f3"
    write_manifest(clips, p1, tennis)
    back, tax = read_manifest(p1)
    write_manifest(back, p2, tax)
    assert p1.read_text() == p2.read_text()
    assert len(back) == len(clips)
    assert back[0].events[0][0] == 10


def test_manifest_rejects_event_at_num_frames(tennis):
    serve = tennis.parse_event("near_deuce_serve_-_-_T_-_in")
    clip = ClipManifest("x", 25, 50, [(50, serve)])
    with pytest.raises(ManifestError):
        clip.validate(tennis)


def test_manifest_rejects_unsorted_events(tennis, tmp_path):
    text = """f3-manifest v1
taxonomy tennis-singles

clip bad
fps 25
frames 100
split train
event 40 near_deuce_serve_-_-_T_-_in
event 10 far_middle_return_bh_gs_DM_-_in
end
"""
    path = tmp_path / "bad.f3"
    path.write_text(text)
    with pytest.raises(ManifestError) as err:
        read_manifest(path)
    assert err.value.line is not None


def test_manifest_rejects_unknown_element(tennis, tmp_path):
    text = """f3-manifest v1
taxonomy tennis-singles

clip bad
fps 25
frames 100
split train
event 10 near_deuce_smorgasbord_-_-_T_-_in
end
"""
    path = tmp_path / "bad.f3"
    path.write_text(text)
    with pytest.raises(ManifestError):
        read_manifest(path)


def test_long_rally_accepted(tennis, tmp_path):
    # rallies up to 34 shots occur in the corpus
    types = tennis.canonical_types
    rng = np.random.default_rng(0)
    events = []
    t = 5
    for i in range(34):
        events.append((t, tennis.parse_event(types[rng.integers(len(types))])))
        t += 25
    clip = ClipManifest("long", 25, t + 50, events, video_id="v")
    clip.validate(tennis)
    write_manifest([clip, ClipManifest("short", 25, 60, [], video_id="w")],
                   tmp_path / "m.f3", tennis)
    back, _ = read_manifest(tmp_path / "m.f3")
    assert len(back[0].events) == 34


def test_make_splits_ratio_and_disjoint_videos(tennis):
    clips = make_splits(make_clips(tennis), (3, 1, 1), seed=7)
    from collections import Counter

    counts = Counter(c.split for c in clips)
    assert counts == {"train": 60, "val": 20, "test": 20}
    test_videos = {c.video_id for c in clips if c.split == "test"}
    rest = {c.video_id for c in clips if c.split != "test"}
    assert not (test_videos & rest)


def test_make_splits_deterministic(tennis):
    a = make_splits(make_clips(tennis), seed=3)
    b = make_splits(make_clips(tennis), seed=3)
    assert [(c.clip_id, c.split) for c in a] == [(c.clip_id, c.split) for c in b]


def test_make_splits_single_video_fails(tennis):
    clips = make_clips(tennis, n_videos=1)
    with pytest.raises(ManifestError):
        make_splits(clips)


def test_splits_file_round_trip(tennis, tmp_path):
    clips = make_splits(make_clips(tennis), seed=1)
    write_splits(clips, tmp_path / "splits.f3")
    table = read_splits(tmp_path / "splits.f3")
    assert all(table[c.clip_id] == c.split for c in clips)


def test_features_round_trip(tmp_path):
    x = np.random.default_rng(0).normal(size=(50, 16)).astype(np.float32)
    save_features(x, tmp_path / "a.feat")
    assert np.array_equal(load_features(tmp_path / "a.feat"), x)


def test_features_reject_garbage(tmp_path):
    (tmp_path / "bad.feat").write_bytes(b"NOPE" + b"\0" * 16)
    with pytest.raises(ValueError):
        load_features(tmp_path / "bad.feat")


def test_windowize_exact_fit(tennis):
    serve = tennis.parse_event("near_deuce_serve_-_-_T_-_in")
    clip = ClipManifest("c", 25, 96, [(10, serve)], video_id="v")
    ws = windowize(clip, tennis.K, 96, 1, overlap=0.5)
    assert len(ws) == 1
    w = ws[0]
    assert w.valid.all()
    assert w.foreground.sum() == 1 and w.foreground[10] == 1


def test_windowize_event_positions(tennis):
    serve = tennis.parse_event("near_deuce_serve_-_-_T_-_in")
    ret = tennis.parse_event("far_middle_return_bh_gs_DM_-_in")
    clip = ClipManifest("c", 25, 120, [(10, serve), (40, ret)], video_id="v")
    (w,) = windowize(clip, tennis.K, 96, 2, overlap=0.5)
    flagged = np.flatnonzero(w.foreground)
    assert list(flagged) == [5, 20]
    assert np.array_equal(w.elements[5], serve)
    assert np.array_equal(w.elements[20], ret)


def test_windowize_odd_frame_ties_later(tennis):
    serve = tennis.parse_event("near_deuce_serve_-_-_T_-_in")
    clip = ClipManifest("c", 25, 60, [(11, serve)], video_id="v")
    (w,) = windowize(clip, tennis.K, 30, 2, overlap=0.5)
    # frame 11 sits between samples 10 and 12; the later one carries it
    assert np.flatnonzero(w.foreground).tolist() == [6]


def test_windowize_covers_all_frames(tennis):
    clip = ClipManifest("c", 25, 500, [], video_id="v")
    for stride, overlap in ((1, 0.5), (2, 0.5), (2, 0.0), (4, 0.25)):
        ws = windowize(clip, tennis.K, 96, stride, overlap)
        covered = np.zeros(500, dtype=bool)
        for w in ws:
            span = w.length * w.stride
            covered[w.start:min(w.start + span, 500)] = True
        assert covered.all()


def test_windowize_every_event_lands_in_a_window(tennis):
    # events at realistic separation (two per second at most); events
    # closer than the stride may legitimately share a sampled position
    rng = np.random.default_rng(4)
    types = tennis.canonical_types
    for trial in range(20):
        n = int(rng.integers(1, 12))
        frames = np.sort(rng.choice(np.arange(0, 400, 8), size=n, replace=False))
        events = [(int(f), tennis.parse_event(types[rng.integers(len(types))]))
                  for f in frames]
        clip = ClipManifest("c", 25, 400, events, video_id="v")
        stride = int(rng.choice([1, 2, 4]))
        ws = windowize(clip, tennis.K, 48, stride, 0.5)
        seen = set()
        for w in ws:
            for _pos, frame, _vec in w.events:
                seen.add(frame)
        assert seen == {int(f) for f in frames}


def test_windowize_short_clip_padded(tennis):
    clip = ClipManifest("c", 25, 30, [], video_id="v")
    (w,) = windowize(clip, tennis.K, 96, 2)
    assert w.valid.sum() == 15
    assert not w.valid[15:].any()


def test_predictions_round_trip(tennis, tmp_path):
    vec = tennis.parse_event("near_deuce_serve_-_-_T_-_in")
    preds = {"c1": [{"frame": 10, "vector": vec,
                     "probs": np.linspace(0, 1, tennis.K), "conf": 0.75}]}
    write_predictions(preds, tmp_path / "p.f3", tennis)
    back = read_predictions(tmp_path / "p.f3")
    (frame, vec2, probs, conf) = back["c1"][0]
    assert frame == 10 and conf == 0.75
    assert np.array_equal(vec, vec2)
    assert np.allclose(probs, np.linspace(0, 1, tennis.K), atol=1e-6)
