"""Transactions, their canonical serialization, and input signatures."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from typing import Optional, Sequence

from ecdsa import ellipticcurve
from ecdsa import ecdsa as _ecdsa
from ecdsa.rfc6979 import generate_k

from ..curve import SECP256K1, Curve, Point, _base_jacobian, _curve_fp
from ..errors import EngineError
from .script import (
    P2PKH,
    P2SH,
    ScriptItem,
    ScriptPubKey,
    hash160,
    parse,
    script_pubkey_from_doc,
    serialize,
)

COINBASE_TXID = bytes(32)
COINBASE_INDEX = 0xFFFFFFFF


class LedgerError(EngineError):
    pass


class UnknownPrevOut(LedgerError):
    pass


def _varint(n: int) -> bytes:
    if n < 0xFD:
        return bytes([n])
    if n <= 0xFFFF:
        return b"\xfd" + n.to_bytes(2, "little")
    return b"\xfe" + n.to_bytes(4, "little")


@dataclass(frozen=True)
class TxInput:
    prev_txid: bytes
    prev_index: int
    script_sig: tuple[ScriptItem, ...] = ()

    @property
    def outpoint(self) -> tuple[bytes, int]:
        return self.prev_txid, self.prev_index

    @property
    def is_coinbase(self) -> bool:
        return self.prev_txid == COINBASE_TXID and self.prev_index == COINBASE_INDEX


@dataclass(frozen=True)
class TxOutput:
    value: int
    script_pubkey: ScriptPubKey


@dataclass(frozen=True)
class Transaction:
    inputs: tuple[TxInput, ...]
    outputs: tuple[TxOutput, ...]
    lock_time: int = 0
    version: int = 1

    def serialize(self) -> bytes:
        out = bytearray(self.version.to_bytes(4, "little"))
        out += _varint(len(self.inputs))
        for txin in self.inputs:
            sig = serialize(txin.script_sig)
            out += txin.prev_txid + txin.prev_index.to_bytes(4, "little") + _varint(len(sig)) + sig
        out += _varint(len(self.outputs))
        for txout in self.outputs:
            spk = serialize(txout.script_pubkey.script())
            out += txout.value.to_bytes(8, "little") + _varint(len(spk)) + spk
        out += self.lock_time.to_bytes(4, "little")
        return bytes(out)

    @property
    def txid(self) -> bytes:
        return hashlib.sha256(self.serialize()).digest()

    @property
    def is_coinbase(self) -> bool:
        return len(self.inputs) == 1 and self.inputs[0].is_coinbase

    def with_script_sig(self, index: int, script_sig: Sequence[ScriptItem]) -> "Transaction":
        inputs = list(self.inputs)
        inputs[index] = replace(inputs[index], script_sig=tuple(script_sig))
        return replace(self, inputs=tuple(inputs))

    def stripped(self) -> "Transaction":
        return replace(self, inputs=tuple(replace(i, script_sig=()) for i in self.inputs))

    def to_doc(self) -> dict:
        return {
            "version": self.version,
            "inputs": [{"prev_txid": i.prev_txid.hex(), "prev_index": i.prev_index,
                        "script_sig": serialize(i.script_sig).hex()} for i in self.inputs],
            "outputs": [{"value": o.value, "script": o.script_pubkey.to_doc()} for o in self.outputs],
            "lock_time": self.lock_time,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "Transaction":
        return cls(
            tuple(TxInput(bytes.fromhex(i["prev_txid"]), i["prev_index"],
                          parse(bytes.fromhex(i["script_sig"]))) for i in doc["inputs"]),
            tuple(TxOutput(o["value"], script_pubkey_from_doc(o["script"])) for o in doc["outputs"]),
            doc["lock_time"],
            doc["version"],
        )


def coinbase(script_pubkey: ScriptPubKey, value: int, nonce: int) -> Transaction:
    """Funding transaction minting ``value``; ``nonce`` keeps txids unique."""
    marker = nonce.to_bytes(8, "big")
    return Transaction((TxInput(COINBASE_TXID, COINBASE_INDEX, (marker,)),), (TxOutput(value, script_pubkey),))


def p2pkh_for(pk: Point, curve: Curve = SECP256K1) -> P2PKH:
    return P2PKH(hash160(curve.encode(pk)))


# -- signatures --------------------------------------------------------------------


def sighash(tx: Transaction, input_index: int) -> bytes:
    """Digest committing to every input and output of ``tx`` and the signed input."""
    return hashlib.sha256(tx.stripped().serialize() + input_index.to_bytes(4, "little")).digest()


def _generator(curve: Curve, base: Optional[Point]) -> ellipticcurve.PointJacobi:
    return _base_jacobian(curve, curve.validate(base or curve.generator))


def sign_digest(digest: bytes, sk: int, curve: Curve = SECP256K1, base: Optional[Point] = None) -> bytes:
    """Deterministic (RFC 6979) ECDSA signature as 64 bytes ``r || s``, low-s."""
    gen = _generator(curve, base)
    pub = _ecdsa.Public_key(gen, gen * sk, verify=False)
    priv = _ecdsa.Private_key(pub, sk)
    k = generate_k(curve.n, sk, hashlib.sha256, digest)
    sig = priv.sign(int.from_bytes(digest, "big"), k)
    s = min(sig.s, curve.n - sig.s)
    return sig.r.to_bytes(32, "big") + s.to_bytes(32, "big")


def verify_digest(digest: bytes, signature: bytes, pk: Point, curve: Curve = SECP256K1,
                  base: Optional[Point] = None) -> bool:
    if len(signature) != 64 or pk is None or not curve.contains(pk):
        return False
    r, s = int.from_bytes(signature[:32], "big"), int.from_bytes(signature[32:], "big")
    if not (0 < r < curve.n and 0 < s < curve.n):
        return False
    gen = _generator(curve, base)
    point = ellipticcurve.PointJacobi(_curve_fp(curve), pk.x, pk.y, 1, curve.n)
    pub = _ecdsa.Public_key(gen, point, verify=False)
    return pub.verifies(int.from_bytes(digest, "big"), _ecdsa.Signature(r, s))


def sign_input(tx: Transaction, input_index: int, sk: int, chain=None,
               curve: Curve = SECP256K1, base: Optional[Point] = None) -> bytes:
    """Signature for one input; with ``chain`` given, the spent output must exist."""
    if not 0 <= input_index < len(tx.inputs):
        raise UnknownPrevOut(f"transaction has no input {input_index}")
    if chain is not None:
        chain.output(*tx.inputs[input_index].outpoint)
        curve, base = chain.curve, chain.base
    return sign_digest(sighash(tx, input_index), sk, curve, base)


def verify_input(tx: Transaction, input_index: int, signature: bytes, pk: Point,
                 curve: Curve = SECP256K1, base: Optional[Point] = None) -> bool:
    return verify_digest(sighash(tx, input_index), signature, pk, curve, base)


__all__ = [
    "COINBASE_INDEX", "COINBASE_TXID", "LedgerError", "P2PKH", "P2SH", "Transaction", "TxInput",
    "TxOutput", "UnknownPrevOut", "coinbase", "p2pkh_for", "sighash", "sign_digest", "sign_input",
    "verify_digest", "verify_input",
]
