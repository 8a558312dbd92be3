import numpy as np
import pytest

from f3kit import RallyContext, load_rules, load_taxonomy
from f3kit.rulebook import hard_only

# the two documented error sequences used in the benchmark's error analysis
EX1_PREDICTED = [
    "near_deuce_serve_-_-_W_-_in",
    "far_deuce_return_fh_gs_CC_-_in",
    "near_deuce_stroke_fh_gs_DL_-_winner",
    "far_ad_stroke_bh_slice_DL_-_forced-err",
]
EX1_TRUTH = [
    "near_deuce_serve_-_-_W_-_in",
    "far_deuce_return_fh_gs_CC_-_in",
    "near_deuce_stroke_fh_gs_DL_-_in",
    "far_ad_stroke_bh_slice_DL_-_forced-err",
]
EX2_PREDICTED = [
    "near_deuce_serve_-_-_T_-_in",
    "far_middle_return_bh_gs_DM_-_in",
    "near_middle_stroke_fh_gs_CC_-_in",
    "far_deuce_stroke_fh_gs_DM_-_in",
    "near_deuce_stroke_fh_gs_DL_-_winner",
]
EX2_TRUTH = [
    "near_deuce_serve_-_-_T_-_in",
    "far_middle_return_bh_gs_DM_-_in",
    "near_middle_stroke_fh_gs_CC_-_in",
    "far_deuce_stroke_fh_gs_DM_-_in",
    "near_middle_stroke_fh_gs_IO_-_winner",
]
# a left-handed far player returning a T serve with the backhand is
# uncommon practice, not an error
EX3_PREDICTED = [
    "near_deuce_serve_-_-_T_-_in",
    "far_middle_return_bh_gs_CC_-_in",
    "near_ad_stroke_bh_gs_CC_-_winner",
]
EX3_TRUTH = [
    "near_deuce_serve_-_-_T_-_in",
    "far_middle_return_fh_gs_CC_-_in",
    "near_ad_stroke_bh_gs_CC_-_winner",
]


def test_combination_serve_ok(tennis, tennis_rules, parse_seq):
    (vec,) = parse_seq(tennis, ["near_deuce_serve_-_-_T_-_in"])
    assert tennis_rules.check_combination(vec) == []


def test_combination_serve_bad_direction(tennis, tennis_rules):
    vec = tennis.parse_event("near_deuce_serve_-_-_CC_-_in")
    violations = hard_only(tennis_rules.check_combination(vec))
    assert len(violations) == 1
    assert violations[0].kind == "combination"


def test_combination_stroke_bad_direction(tennis, tennis_rules):
    vec = tennis.parse_event("near_deuce_fh_stroke_T_gs_-_in")
    assert len(hard_only(tennis_rules.check_combination(vec))) == 1


def test_whole_canonical_list_is_rule_clean(tennis, tennis_rules):
    for s in tennis.canonical_types:
        assert tennis_rules.check_combination(tennis.parse_event(s)) == []


def test_example1_predicted_has_one_terminal_violation(tennis, tennis_rules, parse_seq):
    vs = hard_only(tennis_rules.validate_sequence(
        parse_seq(tennis, EX1_PREDICTED), RallyContext()))
    assert len(vs) == 1
    assert vs[0].kind == "terminal"
    assert vs[0].index == 2


def test_example2_predicted_has_one_transition_violation(tennis, tennis_rules, parse_seq):
    vs = hard_only(tennis_rules.validate_sequence(
        parse_seq(tennis, EX2_PREDICTED), RallyContext()))
    assert len(vs) == 1
    assert vs[0].kind == "transition"
    assert vs[0].index == 4


@pytest.mark.parametrize("strings", [EX1_TRUTH, EX2_TRUTH])
def test_truth_sequences_are_clean(tennis, tennis_rules, parse_seq, strings):
    vs = hard_only(tennis_rules.validate_sequence(
        parse_seq(tennis, strings), RallyContext()))
    assert vs == []
    for vec in parse_seq(tennis, strings):
        assert hard_only(tennis_rules.check_combination(vec)) == []


def test_example3_uncommon_practice_is_soft_only(tennis, tennis_rules, parse_seq):
    ctx = RallyContext(near_hand="right", far_hand="left")
    vs = tennis_rules.validate_sequence(parse_seq(tennis, EX3_PREDICTED), ctx)
    assert hard_only(vs) == []
    soft = [v for v in vs if not v.hard]
    assert len(soft) == 1 and soft[0].index == 1
    # the corrected forehand return carries no flag at all
    assert tennis_rules.validate_sequence(parse_seq(tennis, EX3_TRUTH), ctx) == []


def test_order_sensitivity(tennis, tennis_rules, parse_seq):
    vecs = parse_seq(tennis, EX1_TRUTH)
    assert hard_only(tennis_rules.validate_sequence(vecs)) == []
    assert len(hard_only(tennis_rules.validate_sequence(vecs[::-1]))) >= 1


def test_handedness_rule(tennis, tennis_rules, parse_seq):
    # a right-hander cannot hit a forehand inside-out from the deuce court
    strings = [
        "near_deuce_serve_-_-_W_-_in",
        "far_deuce_return_fh_gs_CC_-_in",
        "near_deuce_fh_stroke_IO_gs_-_winner",
    ]
    vs = hard_only(tennis_rules.validate_sequence(
        parse_seq(tennis, strings), RallyContext()))
    assert any(v.kind == "handedness" for v in vs)
    # the mirrored left-hander may
    vs2 = hard_only(tennis_rules.validate_sequence(
        parse_seq(tennis, strings), RallyContext(near_hand="left")))
    assert not any(v.kind == "handedness" for v in vs2)


def test_followups_after_terminal_is_empty(tennis, tennis_rules):
    vec = tennis.parse_event("near_deuce_fh_stroke_CC_gs_-_winner")
    assert tennis_rules.legal_followups(vec) == {}


def test_followups_fresh_rally_is_serve(tennis, tennis_rules):
    domains = tennis_rules.legal_followups(None, RallyContext(serving="far"))
    assert domains["shot"] == {"serve"}
    assert domains["player"] == {"far"}


def test_followups_after_down_the_middle(tennis, tennis_rules):
    vec = tennis.parse_event("near_deuce_fh_stroke_DM_gs_-_in")
    domains = tennis_rules.legal_followups(vec)
    assert domains["player"] == {"far"}
    assert domains["court"] == {"middle"}
    assert domains["shot"] == {"stroke"}


def test_direction_domain(tennis, tennis_rules):
    assert tennis_rules.direction_domain("serve") == {"T", "B", "W"}
    d = tennis_rules.direction_domain("stroke", court="middle")
    assert d == {"CC", "DM", "IO"}     # no line shots from the middle
    d2 = tennis_rules.direction_domain("stroke", court="deuce", side="fh",
                                       hand="right")
    assert d2 == {"CC", "DL", "DM"}    # inside shots need the off wing


def test_sampled_followup_chains_validate(tennis, tennis_rules):
    # sampling within legal_followups domains always yields clean rallies
    from f3kit.simulator import SimConfig, sample_rally

    cfg = SimConfig(seed=0)
    rng = np.random.default_rng(99)
    for i in range(200):
        ctx = RallyContext(
            near_hand="left" if i % 7 == 0 else "right",
            serving="near" if i % 2 == 0 else "far")
        events, _ = sample_rally(ctx, cfg, rng, tennis, tennis_rules)
        vecs = [v for _, v in events]
        assert hard_only(tennis_rules.validate_sequence(vecs, ctx)) == []
        for v in vecs:
            assert hard_only(tennis_rules.check_combination(v)) == []


def test_reduced_granularity_combination_check(tennis, tennis_rules):
    # at low granularity the direction rules cannot apply
    vec = tennis.parse_event("near_deuce_serve_-_-_T_-_in")
    low = tennis.project(vec, "low")
    assert tennis_rules.check_combination(low, within="low") == []
