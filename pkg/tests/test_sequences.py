import math

import pytest

from fml.sequences import Kind, Membership, ParameterError, classify_family, make_sequence, \
    partial_lp_sum, parse_rule
from hypothesis import example, given
from hypothesis.strategies import floats, integers, sampled_from


# This can be run from the top-level directory with:
#  pytest -s -v -x --cov

GEOMETRIC_HALF = {"kind": "geometric", "params": {"c": 0.5}}
CONSTANT_THIRD = {"kind": "constant", "params": {"c": 1 / 3}}
HARMONIC = {"kind": "power-decay", "params": {"s": 1.0}}

FAMILIES = [
    GEOMETRIC_HALF,
    CONSTANT_THIRD,
    {"kind": "power-decay", "params": {"s": 2.0, "c": 0.5}},
    {"kind": "reciprocal-odd", "params": {"k": 2, "m": 1}},
    {"kind": "stretched-exponential", "params": {"c": 2.0, "gamma": 0.5}},
]


def test_make_sequence_values():
    assert make_sequence(GEOMETRIC_HALF).value(3) == 1 / 8
    assert all(make_sequence(CONSTANT_THIRD).value(n) == 1 / 3 for n in range(1, 20))
    assert parse_rule("odd:2n+1").value(2) == pytest.approx(1 / 5)
    assert parse_rule("odd:2n+1").base(2) == 5


def test_make_sequence_rejects_values_outside_unit_interval():
    with pytest.raises(ParameterError):
        make_sequence({"kind": "constant", "params": {"c": 1.5}})
    with pytest.raises(ParameterError):
        make_sequence({"kind": "geometric", "params": {"c": 0.0}})
    with pytest.raises(ParameterError):
        make_sequence({"kind": "reciprocal-odd", "params": {"k": 2, "m": 2}})
    with pytest.raises(ValueError):
        make_sequence({"kind": "no-such-family"})


def test_sequences_are_indexed_from_one():
    with pytest.raises(ValueError):
        make_sequence(GEOMETRIC_HALF).value(0)


def test_explicit_list_has_a_length_limit():
    seq = parse_rule("3,5,7")
    assert seq.kind is Kind.EXPLICIT
    assert seq.length_limit == 3
    assert seq.base(3) == 7
    with pytest.raises(ValueError):
        seq.value(4)


def test_parse_rule_shorthands():
    assert parse_rule("constant:1/3").value(5) == pytest.approx(1 / 3)
    assert parse_rule("geometric:0.5").value(2) == 0.25
    assert parse_rule("power:1.5").value(4) == pytest.approx(4 ** -1.5)
    assert parse_rule("stretched:1,0.5").value(4) == pytest.approx(math.exp(-2.0))
    with pytest.raises(ValueError):
        parse_rule("zigzag:3")
    with pytest.raises(ValueError):
        parse_rule("geometric:0.5,2")


def test_partial_lp_sum_examples():
    assert partial_lp_sum(make_sequence(GEOMETRIC_HALF), 1.0, 10) == pytest.approx(1023 / 1024, abs=1e-15)
    assert partial_lp_sum(make_sequence(CONSTANT_THIRD), 2.0, 9) == pytest.approx(1.0, abs=1e-15)
    assert partial_lp_sum(make_sequence(HARMONIC), 2.0, 100) == pytest.approx(1.634984, abs=1e-6)


def test_partial_lp_sum_needs_positive_arguments():
    with pytest.raises(ValueError):
        partial_lp_sum(make_sequence(GEOMETRIC_HALF), 0.0, 10)
    with pytest.raises(ValueError):
        partial_lp_sum(make_sequence(GEOMETRIC_HALF), 1.0, 0)


@given(sampled_from(FAMILIES), floats(min_value=0.25, max_value=4.0), integers(min_value=1, max_value=200))
@example(HARMONIC, 2.0, 1)
def test_partial_lp_sum_monotone(family, p, N):
    seq = make_sequence(family)
    here = partial_lp_sum(seq, p, N)
    assert partial_lp_sum(seq, p, N + 1) >= here
    assert partial_lp_sum(seq, p * 1.5, N) <= here * (1 + 1e-12)


def test_classify_family_examples():
    report = classify_family(GEOMETRIC_HALF)
    assert report.membership is Membership.ELL0
    assert report.prediction == "fat"

    report = classify_family(CONSTANT_THIRD)
    assert report.membership is Membership.NEITHER
    assert report.prediction == "thin"

    report = classify_family(HARMONIC)
    assert report.membership is Membership.ELL_INFINITY
    assert report.witness_p == 2.0


def test_explicit_lists_are_never_decided():
    report = classify_family(parse_rule("3,5,7"))
    assert report.membership is Membership.UNKNOWN
    assert report.prediction == "unknown"
    assert report.truncated_sums == [(p, 3, partial_lp_sum(parse_rule("3,5,7"), p, 3)) for p in (0.5, 1.0, 2.0)]


@given(sampled_from([GEOMETRIC_HALF, FAMILIES[-1]]))
def test_ell0_truncations_are_cauchy(family):
    report = classify_family(family)
    assert report.membership is Membership.ELL0
    sums = {}
    for p, N, value in report.truncated_sums:
        sums.setdefault(p, []).append(value)
    for values in sums.values():
        assert all(abs(b - a) <= 1e-6 for a, b in zip(values, values[1:]))


def test_converges_and_tail_sum():
    wallis = parse_rule("odd:2n+1")
    assert wallis.converges(2.0) is True
    assert wallis.converges(1.0) is False
    assert parse_rule("3,5,7").converges(1.0) is None
    # Sum over odd k >= 13 of 1/k^2.
    exact_tail = math.pi ** 2 / 8 - sum(1 / k ** 2 for k in range(1, 12, 2))
    assert wallis.tail_sum(2.0, 5) == pytest.approx(exact_tail, rel=1e-2)
    assert make_sequence(GEOMETRIC_HALF).tail_sum(1.0, 10) == pytest.approx(2.0 ** -10)
    assert make_sequence(CONSTANT_THIRD).tail_sum(1.0, 10) == math.inf


def test_sequence_dict_round_trip():
    for family in FAMILIES:
        seq = make_sequence(family)
        assert make_sequence(seq.to_dict()) == seq
