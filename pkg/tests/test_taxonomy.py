import numpy as np
import pytest

from f3kit import load_taxonomy
from f3kit.taxonomy import Granularity, TaxonomyError, load_taxonomy as load


def test_shipped_tennis_counts(tennis):
    assert tennis.S == 8
    assert tennis.K == 29
    assert tennis.element_count("low") == 11
    assert tennis.element_count("mid") == 24
    assert tennis.element_count("high") == 29


def test_shipped_other_sports():
    bad = load_taxonomy("badminton")
    assert (bad.S, bad.K) == (6, 26)
    tt = load_taxonomy("table-tennis")
    assert (tt.S, tt.K) == (7, 23)
    dbl = load_taxonomy("tennis-doubles")
    assert (dbl.S, dbl.K) == (7, 26)


def test_element_indices_follow_document_order(tennis):
    # global indices 1..K partition by sub-class in order
    assert [e.global_index for e in tennis.elements] == list(range(1, 30))
    assert tennis.element("near").global_index == 1
    assert tennis.element("unforced-err").global_index == 29
    assert tennis.element("T").subclass_index == 5


def test_zero_element_subclass_rejected():
    doc = """f3-taxonomy v1
name broken
subclass a always-one
element x
subclass empty always-one
"""
    with pytest.raises(TaxonomyError):
        load(doc)


def test_duplicate_element_in_subclass_rejected():
    doc = """f3-taxonomy v1
name broken
subclass a always-one
element x
element x
"""
    with pytest.raises(TaxonomyError):
        load(doc)


def test_malformed_document_rejected():
    with pytest.raises(TaxonomyError):
        load("f3-taxonomy v1\nname x\nwhatisthis line\n")


def test_encode_decode_round_trip(tennis):
    s = "far_ad_bh_stroke_DL_slice_apr_in"
    vec = tennis.parse_event(s)
    assert tennis.decode(vec) == s
    # encode from per-sub-class names
    vec2 = tennis.encode(("far", "ad", "bh", "stroke", "DL", "slice", "apr", "in"))
    assert np.array_equal(vec, vec2)


def test_serve_vector_has_five_bits(tennis):
    vec = tennis.encode(("near", "deuce", "-", "serve", "T", "-", "-", "in"))
    assert int(vec.sum()) == 5


def test_variant_field_order_accepted(tennis):
    # the same event written with type before side and technique before
    # direction parses to the identical vector
    a = tennis.parse_event("far_ad_stroke_bh_slice_DL_-_forced-err")
    b = tennis.parse_event("far_ad_bh_stroke_DL_slice_-_forced-err")
    assert np.array_equal(a, b)
    assert tennis.decode(a) == "far_ad_bh_stroke_DL_slice_-_forced-err"


def test_encode_rejects_unknown_and_duplicates(tennis):
    with pytest.raises(TaxonomyError):
        tennis.encode(("near", "deuce", "-", "serve", "XX", "-", "-", "in"))
    with pytest.raises(TaxonomyError):
        tennis.encode({"player": "near", "court": "near"})
    with pytest.raises(TaxonomyError):
        tennis.parse_event("near_near_-_serve_T_-_-_in")


def test_decode_rejects_double_bit(tennis):
    vec = tennis.parse_event("near_deuce_-_serve_T_-_-_in")
    vec[tennis.element("far").global_index - 1] = 1
    with pytest.raises(TaxonomyError):
        tennis.decode(vec)


def test_projection(tennis):
    vec = tennis.parse_event("near_deuce_serve_-_-_T_-_in")
    low = tennis.project(vec, "low")
    assert tennis.decode(low, "low") == "near_-_serve_in"
    # identity at full granularity, idempotent at any
    assert np.array_equal(tennis.project(vec, "high"), vec)
    twice = tennis.project(tennis.project(vec, "low"), "low")
    assert np.array_equal(twice, low)


def test_projection_keeps_always_one_bits(tennis):
    rng = np.random.default_rng(5)
    types = rng.choice(len(tennis.canonical_types), size=50, replace=False)
    for g in ("low", "mid", "high"):
        gran = tennis.granularity(g)
        for i in types:
            vec = tennis.parse_event(tennis.canonical_types[i])
            proj = tennis.project(vec, gran)
            tennis.validate_vector(proj, gran)   # exactly one bit per always-one


def test_granularity_validation(tennis):
    with pytest.raises(TaxonomyError):
        Granularity(frozenset())
    with pytest.raises(TaxonomyError):
        tennis.granularity(["player", "nonexistent"])
    with pytest.raises(TaxonomyError):
        tennis.element_count(Granularity(frozenset({99})))


def test_event_type_counts_from_canonical_list(tennis):
    assert len(tennis.event_types("high")) == 1108
    assert len(tennis.event_types("mid")) == 365
    assert len(tennis.event_types("low")) == 38


def test_event_type_counts_other_sports():
    for name, want in (("badminton", 1008), ("table-tennis", 1296),
                       ("tennis-doubles", 744)):
        tax = load_taxonomy(name)
        assert len(tax.event_types()) == want


def test_constraint_enumeration_matches_shipped_lists():
    # for the sports whose lists are pure rule products, brute-force
    # enumeration under the rulebook reproduces the shipped file exactly
    from f3kit import load_rules

    for name in ("badminton", "table-tennis", "tennis-doubles"):
        tax = load_taxonomy(name)
        shipped = set(tax.canonical_types)
        tax_blank = load_taxonomy(name)
        tax_blank.canonical_types = None
        enum = set(tax_blank.event_types(None, load_rules(tax)))
        assert enum == shipped


def test_enumeration_single_subclass_no_constraints():
    doc = """f3-taxonomy v1
name toy
subclass only always-one
element a
element b
element c
"""
    tax = load(doc)

    class NoRules:
        def check_combination(self, vec, within=None):
            return []

    assert tax.event_types(None, NoRules()) == ("a", "b", "c")


def test_enumeration_requires_constraints_or_list():
    doc = "f3-taxonomy v1\nname toy\nsubclass only always-one\nelement a\n"
    tax = load(doc)
    with pytest.raises(TaxonomyError):
        tax.event_types()


def test_type_count_monotone_under_projection(tennis):
    counts = [len(tennis.event_types(g)) for g in ("high", "mid", "low")]
    assert counts[0] >= counts[1] >= counts[2]


def test_low_plus_rest_equals_high_element_count(tennis):
    rest = tennis.granularity(["court", "direction", "technique", "movement"])
    assert tennis.element_count("low") + tennis.element_count(rest) == 29
