"""Canonical document encoding.

Documents are UTF-8 JSON with lexicographically sorted keys, no
insignificant whitespace and integer-only numbers, so that equal documents
always hash to equal bytes.
"""
from __future__ import annotations

import hashlib
import json
from fractions import Fraction
from typing import Any

from .errors import EngineError


class CanonicalError(EngineError):
    """Raised when a value cannot be put in canonical form."""


def _check(value: Any, where: str = "$") -> None:
    if isinstance(value, bool) or value is None or isinstance(value, (int, str)):
        return
    if isinstance(value, float):
        raise CanonicalError(f"{where}: floats are not allowed in canonical documents")
    if isinstance(value, dict):
        for key, item in value.items():
            if not isinstance(key, str):
                raise CanonicalError(f"{where}: object keys must be strings")
            _check(item, f"{where}.{key}")
        return
    if isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            _check(item, f"{where}[{i}]")
        return
    raise CanonicalError(f"{where}: unsupported type {type(value).__name__}")


def dumps(value: Any) -> bytes:
    _check(value)
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def loads(data: bytes | str) -> Any:
    if isinstance(data, bytes):
        data = data.decode("utf-8")

    def no_floats(text: str):
        raise CanonicalError(f"non-integer number {text!r} in canonical document")

    try:
        return json.loads(data, parse_float=no_floats)
    except json.JSONDecodeError as exc:
        raise CanonicalError(f"malformed document: {exc}") from exc


def canonicalize(data: bytes | str) -> bytes:
    return dumps(loads(data))


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def digest_hex(value: Any) -> str:
    return sha256(dumps(value)).hex()


def fraction_str(q: Fraction) -> str:
    return f"{q.numerator}/{q.denominator}"


def parse_fraction(text: str) -> Fraction:
    try:
        num, den = text.split("/")
        return Fraction(int(num), int(den))
    except (ValueError, ZeroDivisionError) as exc:
        raise CanonicalError(f"bad rational {text!r}; expected 'num/den'") from exc
