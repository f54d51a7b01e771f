"""Short-Weierstrass elliptic curve group used by the key hierarchies.

Points are immutable ``Point`` values; the point at infinity is ``None``.
Group arithmetic is delegated to :mod:`ecdsa.ellipticcurve`, which uses
Jacobian coordinates and gmpy2 when available.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

from ecdsa import ellipticcurve

from .errors import EngineError


class InvalidPoint(EngineError):
    """Raised for encodings or coordinates that are not on the curve."""


@dataclass(frozen=True)
class Point:
    x: int
    y: int


@dataclass(frozen=True)
class Curve:
    """Curve ``y^2 = x^3 + a*x + b`` over GF(p) with a prime-order group."""

    name: str
    p: int
    a: int
    b: int
    n: int
    gx: int
    gy: int

    @property
    def generator(self) -> Point:
        return Point(self.gx, self.gy)

    def contains(self, pt: Optional[Point]) -> bool:
        if pt is None:
            return True
        if not (0 <= pt.x < self.p and 0 <= pt.y < self.p):
            return False
        return (pt.y * pt.y - (pt.x ** 3 + self.a * pt.x + self.b)) % self.p == 0

    def validate(self, pt: Optional[Point]) -> Point:
        """Return ``pt`` if it is a finite point on this curve."""
        if pt is None:
            raise InvalidPoint("point at infinity is not a valid key or base point")
        if not self.contains(pt):
            raise InvalidPoint(f"point ({pt.x:#x}, {pt.y:#x}) is not on {self.name}")
        return pt

    def add(self, p1: Optional[Point], p2: Optional[Point]) -> Optional[Point]:
        if p1 is None:
            return p2
        if p2 is None:
            return p1
        return _from_jacobian(_jacobian(self, p1, False) + _jacobian(self, p2, False))

    def neg(self, pt: Optional[Point]) -> Optional[Point]:
        if pt is None:
            return None
        return Point(pt.x, (-pt.y) % self.p)

    def mul(self, k: int, pt: Optional[Point]) -> Optional[Point]:
        """Scalar multiple ``k * pt``; ``k`` is reduced modulo the group order."""
        k %= self.n
        if k == 0 or pt is None:
            return None
        return _from_jacobian(_jacobian(self, pt, True) * k)

    # -- encodings ---------------------------------------------------------

    def encode(self, pt: Optional[Point]) -> bytes:
        """33-byte SEC1 compressed encoding."""
        pt = self.validate(pt)
        return bytes([2 | (pt.y & 1)]) + pt.x.to_bytes(32, "big")

    def decode(self, data: bytes) -> Point:
        if len(data) != 33 or data[0] not in (2, 3):
            raise InvalidPoint("expected a 33-byte compressed point")
        x = int.from_bytes(data[1:], "big")
        if x >= self.p:
            raise InvalidPoint("x coordinate out of range")
        rhs = (pow(x, 3, self.p) + self.a * x + self.b) % self.p
        y = _sqrt_mod(rhs, self.p)
        if y is None:
            raise InvalidPoint("x coordinate has no point on the curve")
        if (y & 1) != (data[0] & 1):
            y = self.p - y
        return Point(x, y)

    def is_point_encoding(self, data: bytes) -> bool:
        try:
            self.decode(data)
        except InvalidPoint:
            return False
        return True


def _sqrt_mod(a: int, p: int) -> Optional[int]:
    if p % 4 != 3:
        raise NotImplementedError("square roots implemented only for p = 3 mod 4")
    y = pow(a, (p + 1) // 4, p)
    return y if y * y % p == a % p else None


@lru_cache(maxsize=None)
def _curve_fp(curve: Curve) -> ellipticcurve.CurveFp:
    return ellipticcurve.CurveFp(curve.p, curve.a, curve.b, 1)


@lru_cache(maxsize=64)
def _base_jacobian(curve: Curve, pt: Point) -> ellipticcurve.PointJacobi:
    # precomputation pays off for points that are multiplied repeatedly
    return ellipticcurve.PointJacobi(_curve_fp(curve), pt.x, pt.y, 1, curve.n, generator=True)


def _jacobian(curve: Curve, pt: Point, for_mul: bool) -> ellipticcurve.PointJacobi:
    if for_mul and (curve, pt) in _registered_bases:
        return _base_jacobian(curve, pt)
    return ellipticcurve.PointJacobi(_curve_fp(curve), pt.x, pt.y, 1, curve.n)


_registered_bases: set[tuple[Curve, Point]] = set()


def register_base(curve: Curve, pt: Point) -> None:
    """Mark ``pt`` as a base point so its multiples use a precomputed table."""
    curve.validate(pt)
    _registered_bases.add((curve, pt))
    _base_jacobian(curve, pt)


def _from_jacobian(jp) -> Optional[Point]:
    if jp == ellipticcurve.INFINITY:
        return None
    x, y = jp.x(), jp.y()
    return Point(int(x), int(y))


SECP256K1 = Curve(
    name="secp256k1",
    p=0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEFFFFFC2F,
    a=0,
    b=7,
    n=0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141,
    gx=0x79BE667EF9DCBBAC55A06295CE870B07029BFCDB2DCE28D959F2815B16F81798,
    gy=0x483ADA7726A3C4655DA4FBFC0E1108A8FD17B448A68554199C47D08FFB10D4B8,
)

register_base(SECP256K1, SECP256K1.generator)
