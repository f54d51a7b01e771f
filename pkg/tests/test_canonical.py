"""Canonical documents and comparison predicates."""
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from contractengine import canonical
from contractengine.canonical import CanonicalError
from contractengine.predicates import Comparison, EnumDomain, IntDomain, PredicateError, satisfiable
from oracles.matcher import _conditions_ok

json_values = st.recursive(
    st.none() | st.booleans() | st.integers() | st.text(),
    lambda inner: st.lists(inner, max_size=4) | st.dictionaries(st.text(), inner, max_size=4),
    max_leaves=20,
)


@given(json_values)
def test_canonical_round_trip(value):
    data = canonical.dumps(value)
    assert canonical.dumps(canonical.loads(data)) == data
    assert canonical.canonicalize(data) == data


def test_canonical_layout():
    assert canonical.dumps({"b": 1, "a": [1, "x"]}) == b'{"a":[1,"x"],"b":1}'
    with pytest.raises(CanonicalError):
        canonical.dumps({"a": 1.5})
    with pytest.raises(CanonicalError):
        canonical.loads(b'{"a": 1.5}')
    with pytest.raises(CanonicalError):
        canonical.loads(b"{")


@given(st.fractions())
def test_fraction_text_round_trip(q):
    assert canonical.parse_fraction(canonical.fraction_str(q)) == q


def test_fraction_text_rejects_garbage():
    for bad in ("1", "1/0", "a/b"):
        with pytest.raises(CanonicalError):
            canonical.parse_fraction(bad)
    assert canonical.fraction_str(Fraction(1, 10)) == "1/10"


ops = st.sampled_from(["=", "!=", "<", "<=", ">", ">="])
int_comp = st.builds(Comparison, st.sampled_from(["x", "y"]), ops, st.integers(-4, 4))
enum_comp = st.builds(Comparison, st.just("e"), st.sampled_from(["=", "!="]), st.sampled_from(["a", "b", "c"]))


@given(st.lists(st.one_of(int_comp, enum_comp), max_size=6))
def test_satisfiable_matches_enumeration(conds):
    docs = [c.to_doc() for c in conds]
    assert satisfiable(conds) == _conditions_ok(docs)


@given(st.lists(int_comp, max_size=5))
def test_satisfiable_bounded_domain(conds):
    dom = IntDomain(0, 3)
    brute = any(all(c.holds(v) for c in conds if c.param == p) for p in ("x",) for v in range(4))
    only_x = [c for c in conds if c.param == "x"]
    assert satisfiable(only_x, {"x": dom}) == (brute if only_x else True)


def test_enum_domain_and_errors():
    dom = {"e": EnumDomain(frozenset({"a", "b"}))}
    assert not satisfiable([Comparison("e", "!=", "a"), Comparison("e", "!=", "b")], dom)
    assert not satisfiable([Comparison("e", "=", "z")], dom)
    assert not satisfiable([Comparison("v", "=", 1), Comparison("v", "=", "a")])
    with pytest.raises(PredicateError):
        Comparison("e", "<", "a")
    with pytest.raises(PredicateError):
        Comparison("x", "~", 1)
    assert not Comparison("x", "=", 1).holds("1")
