"""Building and signing spends of P2PKH coins and P2SH multisig outputs."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

from ..curve import SECP256K1, Curve, Point
from .script import RedeemScript
from .tx import LedgerError, Transaction, sign_digest, sighash, verify_digest


class SigningError(LedgerError):
    pass


def p2pkh_script_sig(tx: Transaction, index: int, sk: int, pk: Point,
                     curve: Curve = SECP256K1, base: Optional[Point] = None) -> tuple[bytes, bytes]:
    return sign_digest(sighash(tx, index), sk, curve, base), curve.encode(pk)


@dataclass
class PendingSpend:
    """A transaction spending one multisig output, collecting signatures slot by slot.

    Signatures commit to the whole transaction, so the body is fixed once the
    first signature is added.
    """

    tx: Transaction
    redeem: RedeemScript
    input_index: int = 0
    signatures: dict[int, bytes] = field(default_factory=dict)

    def key_slot(self, pk: Point) -> Optional[int]:
        for i, key in enumerate(self.redeem.keys):
            if key == pk:
                return i
        return None

    def sign(self, sk: int, pk: Point, base: Optional[Point] = None) -> int:
        slot = self.key_slot(pk)
        if slot is None:
            raise SigningError("key is not part of the redeem script")
        digest = sighash(self.tx, self.input_index)
        sig = sign_digest(digest, sk, self.redeem.curve, base)
        self.signatures[slot] = sig
        return slot

    def add_signature(self, pk: Point, sig: bytes, base: Optional[Point] = None) -> int:
        slot = self.key_slot(pk)
        if slot is None or not verify_digest(sighash(self.tx, self.input_index), sig, pk, self.redeem.curve, base):
            raise SigningError("signature does not verify for any key of the redeem script")
        self.signatures[slot] = sig
        return slot

    def signed_slots(self) -> list[int]:
        return sorted(self.signatures)

    @property
    def complete(self) -> bool:
        return len(self.signatures) >= self.redeem.m

    def script_sig(self) -> tuple[bytes, ...]:
        return (*(self.signatures[s] for s in self.signed_slots()), self.redeem.serialize())

    def finalized(self) -> Transaction:
        """The transaction carrying every collected signature, complete or not."""
        return self.tx.with_script_sig(self.input_index, self.script_sig())


def multisig_script_sig(tx: Transaction, index: int, redeem: RedeemScript,
                        signers: Iterable[tuple[int, Point]], base: Optional[Point] = None) -> tuple[bytes, ...]:
    pending = PendingSpend(tx, redeem, index)
    for sk, pk in signers:
        pending.sign(sk, pk, base)
    return pending.script_sig()
