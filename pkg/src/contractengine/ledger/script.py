"""Minimal script language: data pushes, small-integer constants, and the
hash/equality/signature opcodes needed for P2PKH and P2SH multisig.

A script is a tuple of items; ``bytes`` items are data pushes and ``Op``
items are opcodes.  Evaluation is total: malformed input yields ``False``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import IntEnum
from typing import Callable, Iterable, Optional, Sequence, Union

from Crypto.Hash import RIPEMD160

from ..curve import SECP256K1, Curve, Point
from ..errors import EngineError


class Op(IntEnum):
    OP_0 = 0x00
    OP_PUSHDATA1 = 0x4C
    OP_PUSHDATA2 = 0x4D
    OP_1 = 0x51
    OP_16 = 0x60
    OP_DUP = 0x76
    OP_EQUAL = 0x87
    OP_EQUALVERIFY = 0x88
    OP_HASH160 = 0xA9
    OP_CHECKSIG = 0xAC
    OP_CHECKMULTISIG = 0xAE


ScriptItem = Union[bytes, int]
Script = tuple

MAX_MULTISIG_ITEMS = 15


class ScriptError(EngineError):
    pass


class TooManyItems(ScriptError):
    pass


class InvalidM(ScriptError):
    pass


def hash160(data: bytes) -> bytes:
    return RIPEMD160.new(hashlib.sha256(data).digest()).digest()


def small_int(n: int) -> int:
    """Opcode pushing the integer ``n`` (0..16)."""
    if n == 0:
        return Op.OP_0
    if 1 <= n <= 16:
        return Op.OP_1 + n - 1
    raise ScriptError(f"{n} has no small-integer opcode")


def op_name(code: int) -> str:
    if code == Op.OP_0:
        return "OP_0"
    if Op.OP_1 <= code <= Op.OP_16:
        return f"OP_{code - Op.OP_1 + 1}"
    try:
        return Op(code).name
    except ValueError:
        return f"OP_UNKNOWN_{code:02x}"


# -- serialization ------------------------------------------------------------------


def serialize(script: Iterable[ScriptItem]) -> bytes:
    out = bytearray()
    for item in script:
        if isinstance(item, (bytes, bytearray)):
            n = len(item)
            if n < Op.OP_PUSHDATA1:
                out.append(n)
            elif n <= 0xFF:
                out += bytes([Op.OP_PUSHDATA1, n])
            elif n <= 0xFFFF:
                out += bytes([Op.OP_PUSHDATA2]) + n.to_bytes(2, "little")
            else:
                raise ScriptError("data push too large")
            out += item
        else:
            out.append(int(item))
    return bytes(out)


def parse(data: bytes) -> Script:
    items: list[ScriptItem] = []
    i = 0
    while i < len(data):
        code = data[i]
        i += 1
        if 0 < code < Op.OP_PUSHDATA1:
            n = code
        elif code == Op.OP_PUSHDATA1:
            if i >= len(data):
                raise ScriptError("truncated PUSHDATA1")
            n, i = data[i], i + 1
        elif code == Op.OP_PUSHDATA2:
            if i + 2 > len(data):
                raise ScriptError("truncated PUSHDATA2")
            n, i = int.from_bytes(data[i:i + 2], "little"), i + 2
        else:
            items.append(Op(code) if code in Op._value2member_map_ else code)
            continue
        if i + n > len(data):
            raise ScriptError("data push runs past end of script")
        items.append(bytes(data[i:i + n]))
        i += n
    return tuple(items)


def render(script: Iterable[ScriptItem]) -> str:
    parts = []
    for item in script:
        parts.append(item.hex() if isinstance(item, (bytes, bytearray)) else op_name(int(item)))
    return " ".join(parts)


# -- standard scripts ------------------------------------------------------------------


@dataclass(frozen=True)
class P2PKH:
    pubkey_hash: bytes

    def script(self) -> Script:
        return (Op.OP_DUP, Op.OP_HASH160, self.pubkey_hash, Op.OP_EQUALVERIFY, Op.OP_CHECKSIG)

    def to_doc(self) -> dict:
        return {"type": "p2pkh", "hash": self.pubkey_hash.hex()}


@dataclass(frozen=True)
class P2SH:
    script_hash: bytes

    def script(self) -> Script:
        return (Op.OP_HASH160, self.script_hash, Op.OP_EQUAL)

    def to_doc(self) -> dict:
        return {"type": "p2sh", "hash": self.script_hash.hex()}


ScriptPubKey = Union[P2PKH, P2SH]


def script_pubkey_from_doc(doc: dict) -> ScriptPubKey:
    cls = {"p2pkh": P2PKH, "p2sh": P2SH}[doc["type"]]
    return cls(bytes.fromhex(doc["hash"]))


@dataclass(frozen=True)
class RedeemScript:
    """``m``-of-``n`` multisig whose ``n`` slots hold metadata blocks then keys."""

    m: int
    keys: tuple[Point, ...]
    metadata_blocks: tuple[bytes, ...] = ()
    curve: Curve = SECP256K1

    @property
    def n(self) -> int:
        return len(self.keys) + len(self.metadata_blocks)

    def items(self) -> Script:
        return (small_int(self.m), *self.metadata_blocks,
                *(self.curve.encode(k) for k in self.keys),
                small_int(self.n), Op.OP_CHECKMULTISIG)

    def serialize(self) -> bytes:
        return serialize(self.items())

    def address(self) -> bytes:
        return p2sh_address(self)

    def script_pubkey(self) -> P2SH:
        return P2SH(self.address())

    @classmethod
    def from_bytes(cls, data: bytes, curve: Curve = SECP256K1) -> "RedeemScript":
        items = parse(data)
        if len(items) < 3 or items[-1] != Op.OP_CHECKMULTISIG:
            raise ScriptError("not a multisig redeem script")
        m, n = _decode_small(items[0]), _decode_small(items[-2])
        slots = items[1:-2]
        if m is None or n is None or n != len(slots) or not all(isinstance(s, bytes) for s in slots):
            raise ScriptError("malformed multisig redeem script")
        blocks = tuple(s for s in slots if not curve.is_point_encoding(s))
        keys = tuple(curve.decode(s) for s in slots if curve.is_point_encoding(s))
        script = build_redeem_script(m, keys, blocks, curve)
        if script.serialize() != data:
            raise ScriptError("redeem script is not in canonical order")
        return script


def _decode_small(item) -> Optional[int]:
    if isinstance(item, bytes):
        return None
    if item == Op.OP_0:
        return 0
    if Op.OP_1 <= item <= Op.OP_16:
        return item - Op.OP_1 + 1
    return None


def build_redeem_script(m: int, keys: Sequence[Point], metadata_blocks: Sequence[bytes] = (),
                        curve: Curve = SECP256K1) -> RedeemScript:
    keys = tuple(curve.validate(k) for k in keys)
    blocks = tuple(bytes(b) for b in metadata_blocks)
    for b in blocks:
        if len(b) != 32:
            raise ScriptError("metadata blocks must be 32 bytes")
    if isinstance(m, bool) or not isinstance(m, int) or not 1 <= m <= len(keys):
        raise InvalidM(f"m={m} must satisfy 1 <= m <= {len(keys)} keys")
    if len(keys) + len(blocks) > MAX_MULTISIG_ITEMS:
        raise TooManyItems(f"{len(keys) + len(blocks)} slots exceed the limit of {MAX_MULTISIG_ITEMS}")
    return RedeemScript(m, keys, blocks, curve)


def p2sh_address(script: RedeemScript) -> bytes:
    return hash160(script.serialize())


# -- evaluation ----------------------------------------------------------------------

SigChecker = Callable[[bytes, bytes], bool]
TRUE = b"\x01"
FALSE = b""


def _truthy(item: bytes) -> bool:
    return any(item)


class _Fail(Exception):
    pass


def _pop(stack: list) -> bytes:
    if not stack:
        raise _Fail("stack underflow")
    return stack.pop()


def _num(item: bytes) -> int:
    if len(item) > 1:
        raise _Fail("number too wide")
    return item[0] if item else 0


def run(script: Iterable[ScriptItem], stack: list, check_sig: SigChecker) -> bool:
    """Execute ``script`` against ``stack`` in place; True iff it completed."""
    try:
        for item in script:
            if isinstance(item, (bytes, bytearray)):
                stack.append(bytes(item))
                continue
            code = int(item)
            if code == Op.OP_0:
                stack.append(FALSE)
            elif Op.OP_1 <= code <= Op.OP_16:
                stack.append(bytes([code - Op.OP_1 + 1]))
            elif code == Op.OP_DUP:
                top = _pop(stack)
                stack += [top, top]
            elif code == Op.OP_HASH160:
                stack.append(hash160(_pop(stack)))
            elif code in (Op.OP_EQUAL, Op.OP_EQUALVERIFY):
                equal = _pop(stack) == _pop(stack)
                if code == Op.OP_EQUALVERIFY:
                    if not equal:
                        return False
                else:
                    stack.append(TRUE if equal else FALSE)
            elif code == Op.OP_CHECKSIG:
                pubkey, sig = _pop(stack), _pop(stack)
                stack.append(TRUE if check_sig(sig, pubkey) else FALSE)
            elif code == Op.OP_CHECKMULTISIG:
                stack.append(TRUE if _checkmultisig(stack, check_sig) else FALSE)
            else:
                return False
    except _Fail:
        return False
    return True


def _checkmultisig(stack: list, check_sig: SigChecker) -> bool:
    n = _num(_pop(stack))
    if n > MAX_MULTISIG_ITEMS or n > len(stack):
        raise _Fail("bad key count")
    slots = [_pop(stack) for _ in range(n)][::-1]
    m = _num(_pop(stack))
    # every remaining item is a signature, in the order the signers pushed them
    sigs = stack[:]
    del stack[:]
    if m < 1 or len(sigs) < m:
        return False
    k = 0
    for sig in sigs:
        while k < len(slots) and not (len(slots[k]) == 33 and check_sig(sig, slots[k])):
            k += 1
        if k == len(slots):
            return False
        k += 1
    return True


def eval_scripts(script_sig: Sequence[ScriptItem], script_pubkey: ScriptPubKey, check_sig: SigChecker) -> bool:
    if any(not isinstance(item, (bytes, bytearray)) for item in script_sig):
        return False  # unlocking scripts are push-only
    stack = [bytes(x) for x in script_sig]
    if isinstance(script_pubkey, P2PKH):
        return run(script_pubkey.script(), stack, check_sig) and bool(stack) and _truthy(stack[-1])
    if not stack:
        return False
    redeem_bytes = stack[-1]
    outer = list(stack)
    if not (run(script_pubkey.script(), outer, check_sig) and outer and _truthy(outer[-1])):
        return False
    try:
        redeem = parse(redeem_bytes)
    except (ScriptError, ValueError):
        return False
    inner = stack[:-1]
    return run(redeem, inner, check_sig) and bool(inner) and _truthy(inner[-1])
