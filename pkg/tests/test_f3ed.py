import numpy as np
import pytest

from f3kit.f3ed import (F3EDConfig, F3EDModel, constrained_decode, infer_clip,
                        infer_dataset, load_checkpoint, peak_pick,
                        save_checkpoint, train)
from f3kit.f3ed.train import collate, evaluate_loss, prepare_windows
from f3kit.dataset_io import read_manifest
from f3kit.neural import weighted_bce


def tiny_config(**kw):
    base = dict(clip_length=8, stride=1, input_dim=6, ve_hidden=4,
                ctx_hidden=4, dtype="float64", seed=0)
    base.update(kw)
    return F3EDConfig(**base)


def make_batch(model, rng, events_per_window=((2, 5), (4,))):
    K = model.taxonomy.K
    L = model.config.clip_length
    items = []
    strings = ["near_deuce_serve_-_-_T_-_in", "far_middle_return_bh_gs_DM_-_in",
               "near_middle_fh_stroke_CC_gs_-_winner"]
    for b, positions in enumerate(events_per_window):
        fg = np.zeros(L)
        el = np.zeros((L, K))
        evs = []
        for j, p in enumerate(positions):
            fg[p] = 1.0
            vec = model.taxonomy.parse_event(strings[(b + j) % len(strings)])
            el[p] = vec
            evs.append((p, vec))
        items.append({"clip_id": f"c{b}", "x": rng.standard_normal((L, 6)),
                      "valid": np.ones(L), "length": L, "fg": fg, "el": el,
                      "events": evs})
    return collate(items, model.config)


def test_ve_output_shape():
    model = F3EDModel(tiny_config())
    x = np.random.default_rng(0).standard_normal((3, 8, 6))
    F, _ = model.encode(x, np.full(3, 8))
    assert F.shape == (3, 8, model.config.embed_dim)


def test_zero_params_zero_embedding():
    model = F3EDModel(tiny_config())
    for name in model.params:
        model.params[name] = np.zeros_like(model.params[name])
    x = np.random.default_rng(0).standard_normal((2, 8, 6))
    F, _ = model.encode(x, np.full(2, 8))
    assert np.allclose(F, 0.0)


def test_localizer_length_matches_window():
    model = F3EDModel(tiny_config())
    x = np.random.default_rng(0).standard_normal((2, 8, 6))
    F, _ = model.encode(x, np.full(2, 8))
    p, _ = model.localize(F)
    assert p.shape == (2, 8)
    assert (p > 0).all() and (p < 1).all()


def test_lcl_loss_uniform_half_closed_form():
    p = np.full(96, 0.5)
    t = np.zeros(96)
    t[[10, 40]] = 1.0
    loss, _ = weighted_bce(p, t, 5.0)
    want = (2 * 5 * np.log(2) + 94 * np.log(2)) / 96
    assert abs(loss - want) < 1e-12


def test_mlc_loss_zero_events_is_zero():
    model = F3EDModel(tiny_config())
    rng = np.random.default_rng(1)
    batch = make_batch(model, rng, events_per_window=((), ()))
    losses = model.forward_backward(batch, accumulate=False)
    assert losses["mlc"] == 0.0 and losses["ctx"] == 0.0


def test_mlc_loss_uniform_half_is_ln2():
    model = F3EDModel(tiny_config(ctx_enabled=False))
    rng = np.random.default_rng(2)
    # force the classifier to output exactly 0.5 everywhere
    model.params["mlc.W"] = np.zeros_like(model.params["mlc.W"])
    model.params["mlc.b"] = np.zeros_like(model.params["mlc.b"])
    batch = make_batch(model, rng, events_per_window=((3,),))
    losses = model.forward_backward(batch, accumulate=False)
    assert abs(losses["mlc"] - np.log(2)) < 1e-12


def test_ctx_empty_and_single_event_shapes():
    model = F3EDModel(tiny_config())
    assert model.refine_sequence(np.zeros((0, 29)), np.zeros((0, 29)), []).shape[0] == 0
    e = np.full((1, 29), 0.4)
    logit = np.zeros((1, 29))
    out = model.refine_sequence(logit, e, [0.9])
    assert out.shape == (1, 29)


def test_total_loss_is_sum_of_terms():
    model = F3EDModel(tiny_config())
    rng = np.random.default_rng(3)
    batch = make_batch(model, rng)
    losses = model.forward_backward(batch, accumulate=False)
    assert abs(losses["total"] - (losses["lcl"] + losses["mlc"] + losses["ctx"])) < 1e-12


def test_ctx_disabled_drops_term():
    model = F3EDModel(tiny_config(ctx_enabled=False))
    rng = np.random.default_rng(3)
    batch = make_batch(model, rng)
    losses = model.forward_backward(batch, accumulate=False)
    assert losses["ctx"] == 0.0
    assert abs(losses["total"] - (losses["lcl"] + losses["mlc"])) < 1e-12


def test_batch_permutation_equivariance():
    model = F3EDModel(tiny_config())
    rng = np.random.default_rng(4)
    batch = make_batch(model, rng)
    loss_a = model.forward_backward(batch, accumulate=False)["total"]
    # swap the two windows
    swapped = {
        "x": batch["x"][::-1].copy(),
        "valid": batch["valid"][::-1].copy(),
        "lengths": batch["lengths"][::-1].copy(),
        "fg": batch["fg"][::-1].copy(),
        "el": batch["el"][::-1].copy(),
    }
    wi, pos, order, sl = batch["events"]
    B = 2
    swapped["events"] = (np.array([B - 1 - b for b in wi]), pos,
                         [(B - 1 - b, s) for b, s in order], sl[::-1])
    loss_b = model.forward_backward(swapped, accumulate=False)["total"]
    assert abs(loss_a - loss_b) < 1e-9


# ----------------------------------------------------------------------
# peak picking and decoding

def test_peak_pick_all_below_threshold():
    assert peak_pick(np.full(50, 0.2), 0.5, 5) == []


def test_peak_pick_single_spike():
    s = np.zeros(50)
    s[17] = 0.9
    assert peak_pick(s, 0.5, 5) == [17]


def test_peak_pick_suppression():
    s = np.zeros(50)
    s[10] = 0.7
    s[13] = 0.9
    assert peak_pick(s, 0.5, 5) == [13]
    s2 = np.zeros(50)
    s2[10] = 0.7
    s2[18] = 0.9
    assert peak_pick(s2, 0.5, 5) == [10, 18]


def test_peak_pick_tie_prefers_earlier():
    s = np.zeros(50)
    s[10] = 0.8
    s[13] = 0.8
    assert peak_pick(s, 0.5, 5) == [10]


def test_peak_pick_strided_frames():
    frames = np.arange(0, 40, 2)
    s = np.zeros(20)
    s[5] = 0.9          # original frame 10
    assert peak_pick(s, 0.5, 4, frames=frames) == [10]


def test_constrained_decode_respects_structure(tennis, tennis_rules):
    rng = np.random.default_rng(5)
    for _ in range(200):
        probs = rng.uniform(0, 1, size=tennis.K)
        vec = constrained_decode(probs, tennis, "high", tennis_rules)
        tennis.validate_vector(vec, "high")      # structural invariants hold
        assert tennis_rules.check_combination(vec) == []


def test_constrained_decode_repairs_serve_direction(tennis, tennis_rules):
    probs = np.zeros(tennis.K)
    for name in ("near", "deuce", "serve", "in"):
        probs[tennis.element(name).global_index - 1] = 0.9
    probs[tennis.element("CC").global_index - 1] = 0.95   # illegal for serves
    probs[tennis.element("T").global_index - 1] = 0.6
    vec = constrained_decode(probs, tennis, "high", tennis_rules)
    assert tennis.subclass_value(vec, "direction") == "T"
    assert tennis.subclass_value(vec, "side") is None


def test_constrained_decode_conditional_threshold(tennis, tennis_rules):
    probs = np.zeros(tennis.K)
    for name, p in (("near", 0.9), ("deuce", 0.9), ("fh", 0.9), ("stroke", 0.9),
                    ("CC", 0.9), ("gs", 0.9), ("in", 0.9)):
        probs[tennis.element(name).global_index - 1] = p
    probs[tennis.element("apr").global_index - 1] = 0.4   # below 0.5: absent
    vec = constrained_decode(probs, tennis, "high", tennis_rules)
    assert tennis.subclass_value(vec, "movement") is None
    probs[tennis.element("apr").global_index - 1] = 0.6
    vec = constrained_decode(probs, tennis, "high", tennis_rules)
    assert tennis.subclass_value(vec, "movement") == "apr"


# ----------------------------------------------------------------------
# training on the tiny dataset

@pytest.fixture(scope="module")
def trained(tiny_dataset):
    cfg = F3EDConfig(epochs=2, seed=0)
    result = train(cfg, tiny_dataset)
    return cfg, result


def test_training_smoke_and_log(trained):
    cfg, result = trained
    assert len(result.log) == 2
    for entry in result.log:
        assert entry["teacher_forcing"] is True
        assert np.isfinite(entry["train_loss"])


def test_training_deterministic(tiny_dataset, trained):
    cfg, result = trained
    again = train(F3EDConfig(epochs=2, seed=0), tiny_dataset)
    assert again.log[-1]["train_loss"] == result.log[-1]["train_loss"]
    assert again.log[-1]["val_loss"] == result.log[-1]["val_loss"]


def test_loss_decreases_on_noiseless_data(tmp_path):
    from f3kit.simulator import SimConfig, generate

    generate(SimConfig(seed=5, num_clips=20, noise_sigma=0.0,
                       distractor_rate=0.0), tmp_path / "clean")
    result = train(F3EDConfig(epochs=5, seed=0, noise_augment=0.0),
                   tmp_path / "clean")
    losses = [e["train_loss"] for e in result.log]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_checkpoint_round_trip(tiny_dataset, trained, tmp_path):
    cfg, result = trained
    path = tmp_path / "model.f3ck"
    save_checkpoint(path, result.params, cfg)
    model2, cfg2 = load_checkpoint(path)
    clips, tax = read_manifest(tiny_dataset / "manifest.f3")
    val = [c for c in clips if c.split == "val"]
    items = prepare_windows(val, tiny_dataset, cfg, model2)
    model1 = F3EDModel(cfg, tax)
    model1.params = result.params
    l1 = evaluate_loss(model1, items, cfg)
    l2 = evaluate_loss(model2, items, cfg2)
    assert l1 == l2


def test_infer_empty_when_nothing_scores(tiny_dataset):
    cfg = F3EDConfig(seed=0)
    model = F3EDModel(cfg)
    # an untrained localizer bias pushed far negative scores nothing
    model.params["lcl.b"] = np.full_like(model.params["lcl.b"], -20.0)
    clips, _ = read_manifest(tiny_dataset / "manifest.f3")
    from f3kit.dataset_io import load_clip_payload

    payload = load_clip_payload(clips[0], tiny_dataset)
    events = infer_clip(model, payload, clips[0].num_frames)
    assert events == []


def test_infer_output_structurally_valid(tiny_dataset, trained, tennis_rules):
    cfg, result = trained
    clips, tax = read_manifest(tiny_dataset / "manifest.f3")
    model = F3EDModel(cfg, tax)
    model.params = result.params
    preds = infer_dataset(model, clips[:4], tiny_dataset, tennis_rules)
    for evs in preds.values():
        frames = [e["frame"] for e in evs]
        assert frames == sorted(frames)
        for e in evs:
            tax.validate_vector(e["vector"], "high")
            assert tennis_rules.check_combination(e["vector"]) == []


def test_multiclass_head_width(tiny_dataset):
    cfg = F3EDConfig(head_mode="multi-class", granularity="low", seed=0)
    model = F3EDModel(cfg)
    assert len(model.class_list) + 1 == 39
