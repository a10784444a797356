from decimal import Decimal
from fractions import Fraction

from hypothesis import given, strategies as st

from tcmdw.values import canonical_json, coerce, render_avg, render_fraction, round_half_up, value_sort_key


def test_round_half_up_ties_go_away_from_zero():
    assert round_half_up(Fraction(5, 2)) == 3
    assert round_half_up(Fraction(-5, 2)) == -3
    assert round_half_up(Decimal("2.5")) == 3
    assert round_half_up(Decimal("2.4999")) == 2
    assert round_half_up(Fraction(7, 3)) == 2


@given(st.integers(-10**12, 10**12), st.integers(1, 10**6))
def test_round_half_up_matches_decimal_quantize(n, d):
    # independent reference: Decimal with ROUND_HALF_UP at high precision
    from decimal import ROUND_HALF_UP, localcontext
    with localcontext() as ctx:
        ctx.prec = 60
        ref = int((Decimal(n) / Decimal(d)).quantize(Decimal(1), rounding=ROUND_HALF_UP))
    assert round_half_up(Fraction(n, d)) == ref


def test_render_avg_six_places():
    assert render_avg(9000, 1) == "9000.000000"
    assert render_avg(1, 3) == "0.333333"
    assert render_avg(2, 3) == "0.666667"
    assert render_avg(1, 8) == "0.125000"


def test_render_fraction_negative_and_small():
    assert render_fraction(Fraction(-1, 200), 2) == "-0.01"
    assert render_fraction(Fraction(1, 300), 2) == "0.00"
    assert render_fraction(Fraction(1234, 10), 0) == "123"


@given(st.integers(0, 10**9), st.integers(1, 10**5))
def test_render_avg_within_half_ulp(total, count):
    shown = Fraction(render_avg(total, count))
    assert abs(shown - Fraction(total, count)) <= Fraction(1, 2 * 10**6)


def test_value_sort_key_orders_mixed_types():
    vals = ["UNKNOWN", 2010, "2009Q1", 2009, None]
    assert sorted(vals, key=value_sort_key) == [2009, 2010, "2009Q1", "UNKNOWN", None]


def test_coerce_kinds():
    assert coerce("integer", " 2010 ") == 2010
    assert coerce("integer", "UNKNOWN") == "UNKNOWN"
    assert coerce("integer", 3.0) == 3
    assert coerce("text", 12) == "12"
    assert coerce("decimal", "1.50") == 1.5


def test_canonical_json_is_key_sorted_without_spaces():
    assert canonical_json({"b": 1, "a": [1, 2]}) == '{"a":[1,2],"b":1}'
