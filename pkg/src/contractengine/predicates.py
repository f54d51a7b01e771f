"""Conjunctions of comparisons over typed parameters.

Used for DFA triggers and for exchange conditions.  Satisfiability is
decided exactly: numeric parameters reduce to an integer interval minus a
finite exclusion set, enumerations to a candidate set.
"""
from __future__ import annotations

import operator
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Union

from .errors import EngineError

OPS = {
    "=": operator.eq,
    "!=": operator.ne,
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}
ORDERED_OPS = {"<", "<=", ">", ">="}

Value = Union[int, str]


class PredicateError(EngineError):
    pass


@dataclass(frozen=True)
class Comparison:
    param: str
    op: str
    value: Value

    def __post_init__(self):
        if self.op not in OPS:
            raise PredicateError(f"unknown comparator {self.op!r}")
        if isinstance(self.value, bool) or not isinstance(self.value, (int, str)):
            raise PredicateError(f"comparison value must be an integer or string, got {self.value!r}")
        if isinstance(self.value, str) and self.op in ORDERED_OPS:
            raise PredicateError(f"ordered comparator {self.op!r} on enum value {self.value!r}")

    def holds(self, observed: Value) -> bool:
        if isinstance(observed, bool) or type(observed) is not type(self.value):
            return False
        return OPS[self.op](observed, self.value)

    def to_doc(self) -> dict:
        return {"param": self.param, "op": self.op, "value": self.value}

    @classmethod
    def from_doc(cls, doc: Mapping) -> "Comparison":
        try:
            return cls(doc["param"], doc["op"], doc["value"])
        except KeyError as exc:
            raise PredicateError(f"comparison missing field {exc}") from exc


@dataclass(frozen=True)
class IntDomain:
    lo: Optional[int] = None
    hi: Optional[int] = None

    def admits(self, value: Value) -> bool:
        if isinstance(value, bool) or not isinstance(value, int):
            return False
        return (self.lo is None or value >= self.lo) and (self.hi is None or value <= self.hi)


@dataclass(frozen=True)
class EnumDomain:
    values: Optional[frozenset] = None  # None: open set of strings

    def admits(self, value: Value) -> bool:
        return isinstance(value, str) and (self.values is None or value in self.values)


Domain = Union[IntDomain, EnumDomain]


def holds_all(conjunction: Iterable[Comparison], observed: Mapping[str, Value]) -> bool:
    return all(c.holds(observed[c.param]) for c in conjunction)


def infer_domain(value: Value) -> Domain:
    return EnumDomain() if isinstance(value, str) else IntDomain()


def _int_satisfiable(dom: IntDomain, comps: list[Comparison]) -> bool:
    lo, hi = dom.lo, dom.hi
    excluded = set()
    for c in comps:
        v = c.value
        if not isinstance(v, int):
            return False
        if c.op == "=":
            lo = v if lo is None else max(lo, v)
            hi = v if hi is None else min(hi, v)
        elif c.op == "!=":
            excluded.add(v)
        elif c.op == "<":
            hi = v - 1 if hi is None else min(hi, v - 1)
        elif c.op == "<=":
            hi = v if hi is None else min(hi, v)
        elif c.op == ">":
            lo = v + 1 if lo is None else max(lo, v + 1)
        else:
            lo = v if lo is None else max(lo, v)
    if lo is None or hi is None:
        return True
    if lo > hi:
        return False
    blocked = sum(1 for e in excluded if lo <= e <= hi)
    return hi - lo + 1 > blocked


def _enum_satisfiable(dom: EnumDomain, comps: list[Comparison]) -> bool:
    required = set()
    excluded = set()
    for c in comps:
        if not isinstance(c.value, str):
            return False
        (required if c.op == "=" else excluded).add(c.value)
    if len(required) > 1:
        return False
    if required:
        (value,) = required
        return value not in excluded and dom.admits(value)
    if dom.values is None:
        return True
    return bool(dom.values - excluded)


def satisfiable(conjunction: Iterable[Comparison], domains: Optional[Mapping[str, Domain]] = None) -> bool:
    """True iff some assignment within ``domains`` satisfies every comparison.

    Parameters missing from ``domains`` get an unbounded domain inferred
    from the comparison values; mixing integers and strings on one
    parameter is unsatisfiable.
    """
    by_param: dict[str, list[Comparison]] = {}
    for c in conjunction:
        by_param.setdefault(c.param, []).append(c)
    for param, comps in by_param.items():
        dom = (domains or {}).get(param)
        if dom is None:
            kinds = {isinstance(c.value, str) for c in comps}
            if len(kinds) > 1:
                return False
            dom = infer_domain(comps[0].value)
        ok = _enum_satisfiable(dom, comps) if isinstance(dom, EnumDomain) else _int_satisfiable(dom, comps)
        if not ok:
            return False
    return True
