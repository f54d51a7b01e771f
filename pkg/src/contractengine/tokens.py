"""Three-parameter tokens for transferable rights.

``total_units`` is the number of units available overall (0 when unlimited
or irrelevant), ``transfer_units`` the quantity moved, and ``pegging_rate``
the fraction of the underlying represented by one unit.  A zero pegging rate
marks a non-divisible right transferred in whole units.  All arithmetic is
exact (``fractions.Fraction``).
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational
from typing import Iterable, Union

from .canonical import fraction_str, parse_fraction
from .errors import EngineError

RationalLike = Union[int, Fraction, str]


class TokenError(EngineError):
    pass


class UnitsExceedTotal(TokenError):
    pass


class FractionalNonDivisible(TokenError):
    pass


class NotDivisible(TokenError):
    pass


class QuantityMismatch(TokenError):
    pass


class ZeroTotal(TokenError):
    pass


class RedeemedExceedsIssued(TokenError):
    pass


def as_fraction(value: RationalLike) -> Fraction:
    if isinstance(value, bool):
        raise TokenError("booleans are not quantities")
    if isinstance(value, str):
        text = value.strip()
        if text.endswith("%"):
            return Fraction(text[:-1]) / 100
        return parse_fraction(text) if "/" in text else Fraction(text)
    if isinstance(value, (int, Rational)):
        return Fraction(value)
    raise TokenError(f"expected an exact rational, got {type(value).__name__}")


@dataclass(frozen=True)
class TokenMetadata:
    total_units: int
    transfer_units: Fraction
    pegging_rate: Fraction

    def to_doc(self) -> dict:
        return {
            "tu": self.total_units,
            "xu": fraction_str(self.transfer_units),
            "pr": fraction_str(self.pegging_rate),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "TokenMetadata":
        return make_token(doc["tu"], parse_fraction(doc["xu"]), parse_fraction(doc["pr"]))

    def to_block(self) -> bytes:
        """Pack into one 32-byte metadata block.

        Layout: total_units (8 bytes) then numerator/denominator of
        transfer_units and pegging_rate (6 bytes each), all big-endian.
        """
        fields = [(self.total_units, 8),
                  (self.transfer_units.numerator, 6), (self.transfer_units.denominator, 6),
                  (self.pegging_rate.numerator, 6), (self.pegging_rate.denominator, 6)]
        try:
            return b"".join(v.to_bytes(width, "big") for v, width in fields)
        except OverflowError as exc:
            raise TokenError("token parameters too large for a metadata block") from exc

    @classmethod
    def from_block(cls, block: bytes) -> "TokenMetadata":
        if len(block) != 32:
            raise TokenError("token metadata block must be 32 bytes")
        num = lambda a, b: int.from_bytes(block[a:b], "big")  # noqa: E731
        return make_token(num(0, 8), Fraction(num(8, 14), num(14, 20)), Fraction(num(20, 26), num(26, 32)))

    def describe(self) -> str:
        rate = "non-divisible" if not self.pegging_rate else f"{float(self.pegging_rate * 100):g}%"
        total = "unlimited" if not self.total_units else str(self.total_units)
        return f"{self.transfer_units} of {total} units @ {rate}"


def make_token(total_units: int, transfer_units: RationalLike, pegging_rate: RationalLike) -> TokenMetadata:
    if isinstance(total_units, bool) or not isinstance(total_units, int) or total_units < 0:
        raise TokenError("total_units must be a non-negative integer")
    xu = as_fraction(transfer_units)
    pr = as_fraction(pegging_rate)
    if xu <= 0:
        raise TokenError("transfer_units must be positive")
    if pr < 0:
        raise TokenError("pegging_rate must be non-negative")
    if pr == 0 and xu.denominator != 1:
        raise FractionalNonDivisible("non-divisible rights transfer in whole units")
    if total_units > 0 and xu > total_units:
        raise UnitsExceedTotal(f"transfer of {xu} units exceeds the total of {total_units}")
    return TokenMetadata(total_units, xu, pr)


def is_divisible(token: TokenMetadata) -> bool:
    return token.pegging_rate > 0


def bearer_share_rate(current_total: int) -> Fraction:
    """Pegging rate of one bearer share when ``current_total`` are outstanding."""
    if current_total < 1:
        raise ZeroTotal("no outstanding shares")
    return Fraction(1, current_total)


def track_total_units(issued: int, redeemed: int) -> int:
    if issued < 0 or redeemed < 0:
        raise TokenError("share counts cannot be negative")
    if redeemed > issued:
        raise RedeemedExceedsIssued(f"{redeemed} redeemed but only {issued} issued")
    return issued - redeemed


def token_value(token: TokenMetadata) -> Fraction:
    if not is_divisible(token):
        raise NotDivisible("a non-divisible token carries the whole named right, not a fraction")
    return token.transfer_units * token.pegging_rate


def split_token(token: TokenMetadata, quantities: Iterable[RationalLike]) -> list[TokenMetadata]:
    if not is_divisible(token):
        raise NotDivisible("only divisible tokens can be split")
    parts = [as_fraction(q) for q in quantities]
    if not parts or any(q <= 0 for q in parts):
        raise QuantityMismatch("split quantities must be positive")
    if sum(parts) != token.transfer_units:
        raise QuantityMismatch(f"quantities sum to {sum(parts)}, token carries {token.transfer_units}")
    return [TokenMetadata(token.total_units, q, token.pegging_rate) for q in parts]


def pegged_amount(token: TokenMetadata, base_amount: int) -> int:
    """Output amount for a divisible token: ``base_amount`` per whole underlying, rounded down."""
    return int(token_value(token) * base_amount)
