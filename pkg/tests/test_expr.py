import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coordkit.errors import ExpressionError, ParseError
from coordkit.expr import TimeExpr, parse_expr, parse_tree, to_string


def test_reference_speed_value_and_slope():
    e = parse_expr("2*sin(5*t/4)")
    assert e(0.0) == 0.0
    assert e.deriv(0.0) == pytest.approx(2.5, abs=1e-15)


def test_leader_speed_at_zero():
    assert parse_expr("1+0.1*sin(t)")(0.0) == 1.0


def test_truncated_call_reports_offset():
    with pytest.raises(ParseError) as ei:
        parse_expr("2*sin(")
    assert ei.value.offset == 6
    assert "t" in ei.value.expected


@pytest.mark.parametrize("src, t, value", [
    ("-t^2", 3.0, -9.0),
    ("(-t)^2", 3.0, 9.0),
    ("2*3+4", 0.0, 10.0),
    ("2+3*4", 0.0, 14.0),
    ("8/4/2", 0.0, 1.0),
    ("5-3-1", 0.0, 1.0),
    ("2^-1", 0.0, 0.5),
    ("t**3", 2.0, 8.0),
    ("  cos( pi )  ", 0.0, -1.0),
    ("exp(0)", 0.0, 1.0),
    ("sqrt(t)", 4.0, 2.0),
])
def test_precedence_and_values(src, t, value):
    assert parse_expr(src)(t) == pytest.approx(value, rel=1e-15)


@pytest.mark.parametrize("src, offset", [
    ("", 0), ("t +", 3), ("foo(t)", 0), ("abs(t)", 0), ("t^0.5", 2), ("t^t", 2),
    ("(t", 2), ("t t", 2), ("t^2^3", 3), ("min(t, 1)", 0), ("2 # 3", 2),
])
def test_parse_errors(src, offset):
    with pytest.raises(ParseError) as ei:
        parse_expr(src)
    assert ei.value.offset == offset
    assert ei.value.expected


def test_offsets_count_bytes():
    with pytest.raises(ParseError) as ei:
        parse_expr("t + é")
    assert ei.value.offset == 4


@pytest.mark.parametrize("src, t", [("tan(pi/2)", 0.0), ("sqrt(t-2)", 1.0), ("1/(t-1)", 1.0),
                                    ("exp(t)", 1e4), ("t^-1", 0.0)])
def test_evaluation_guards(src, t):
    with pytest.raises(ExpressionError):
        parse_expr(src)(t)


def test_constant_detection_and_json():
    assert parse_expr("3").is_constant
    assert parse_expr("3").to_json() == 3.0
    assert parse_expr("2*t").to_json() == "2.0 * t"
    assert TimeExpr.coerce(1.5)(7.0) == 1.5
    assert TimeExpr.coerce("t")(2.0) == 2.0
    with pytest.raises(TypeError):
        TimeExpr.coerce(True)


# --------------------------------------------------------------------------
# properties

_leaf = st.one_of(st.just("t"), st.floats(0.1, 5.0).map(lambda v: f"{v:.3f}"))


def _grow(children):
    return st.one_of(
        st.tuples(children, st.sampled_from(["+", "-", "*"]), children).map(lambda a: f"({a[0]} {a[1]} {a[2]})"),
        st.tuples(children, _leaf).map(lambda a: f"({a[0]}) / (2 + ({a[1]})^2)"),
        children.map(lambda a: f"-({a})"),
        st.tuples(children, st.integers(0, 3)).map(lambda a: f"({a[0]})^{a[1]}"),
        st.tuples(st.sampled_from(["sin", "cos"]), children).map(lambda a: f"{a[0]}({a[1]})"),
        children.map(lambda a: f"exp(sin({a}))"),
        children.map(lambda a: f"sqrt(1 + ({a})^2)"),
    )


smooth_exprs = st.recursive(_leaf, _grow, max_leaves=8)


@settings(max_examples=200, deadline=None)
@given(smooth_exprs)
def test_print_parse_round_trip(src):
    tree = parse_tree(src)
    assert parse_tree(to_string(tree)) == tree
    assert parse_expr(parse_expr(src).pretty()) == parse_expr(src)


@settings(max_examples=100, deadline=None)
@given(smooth_exprs, st.lists(st.floats(0.0, 3.0), min_size=10, max_size=10))
def test_symbolic_derivative_matches_central_difference(src, ts):
    e = parse_expr(src)
    for t in ts:
        h = 1e-5
        num = (e(t + h) - e(t - h)) / (2 * h)
        assert abs(e.deriv(t) - num) / max(1.0, abs(num)) < 1e-7, (src, t)


@settings(max_examples=100, deadline=None)
@given(smooth_exprs)
def test_whitespace_insensitive(src):
    assert parse_tree(src.replace(" ", "")) == parse_tree("  " + src.replace("(", " ( ") + " ")


def test_derivative_of_power_and_chain():
    e = parse_expr("sin(t)^2")
    for t in (0.0, 0.3, 1.7):
        assert e.deriv(t) == pytest.approx(2 * math.sin(t) * math.cos(t), rel=1e-14, abs=1e-15)
