"""Exchange of contract underlyings through published invitations.

An invitation script (offered entity, wanted entity, conditions, scope, plus
the issuer's and managing agent's derived keys) lives in an invitation store
under its content hash.  An invitation transaction on chain commits to that
hash.  Two invitations whose metadata match settle atomically in a single
exchange transaction spending both invitation outputs.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Any, Mapping, Optional

from . import canonical
from .agents import Agent, InsufficientBudget, pay_outputs
from .curve import SECP256K1, Point
from .dht import DhtStore, UnknownKey
from .errors import EngineError
from .keys import KeyPair, KeyPath, common_secret, derive_path, symmetric_key_from_cs
from .ledger import (
    Chain,
    PendingSpend,
    RedeemScript,
    Transaction,
    TxInput,
    TxOutput,
    build_redeem_script,
    sighash,
    verify_digest,
)
from .predicates import Comparison, satisfiable
from .tokens import TokenMetadata, make_token


class ExchangeError(EngineError):
    pass


class InvalidInvitation(ExchangeError):
    pass


class InsufficientFunding(ExchangeError):
    pass


class UnpublishedInvitation(ExchangeError):
    pass


class InvitationSpent(ExchangeError):
    pass


class BadSignature(ExchangeError):
    pass


class QuantityOutOfRange(ExchangeError):
    pass


@dataclass(frozen=True)
class EntityDescriptor:
    """An entity plus the quantity range acceptable for it.

    ``contract_ref`` is the repository key of the contract the entity
    underlies; ``None`` on a wanted entity accepts any contract.
    """

    entity_type: str
    quantity: TokenMetadata
    contract_ref: Optional[bytes] = None
    min_units: Optional[Fraction] = None
    max_units: Optional[Fraction] = None

    def __post_init__(self):
        lo, hi = self.bounds
        if lo > hi:
            raise InvalidInvitation(f"empty quantity range [{lo}, {hi}]")

    @property
    def bounds(self) -> tuple[Fraction, Fraction]:
        xu = self.quantity.transfer_units
        lo = Fraction(self.min_units) if self.min_units is not None else xu
        hi = Fraction(self.max_units) if self.max_units is not None else xu
        return lo, hi

    def to_doc(self) -> dict:
        lo, hi = self.bounds
        return {
            "type": self.entity_type,
            "token": self.quantity.to_doc(),
            "ref": self.contract_ref.hex() if self.contract_ref else None,
            "min": canonical.fraction_str(lo),
            "max": canonical.fraction_str(hi),
        }

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any]) -> "EntityDescriptor":
        return cls(doc["type"], TokenMetadata.from_doc(doc["token"]),
                   bytes.fromhex(doc["ref"]) if doc.get("ref") else None,
                   canonical.parse_fraction(doc["min"]), canonical.parse_fraction(doc["max"]))

    def tag_block(self) -> bytes:
        """32-byte digest of the type and quantity bounds, embedded on chain."""
        lo, hi = self.bounds
        return hashlib.sha256(canonical.dumps({"type": self.entity_type, "min": canonical.fraction_str(lo),
                                               "max": canonical.fraction_str(hi)})).digest()


@dataclass(frozen=True)
class InvitationMetadata:
    offered: EntityDescriptor
    wanted: EntityDescriptor
    conditions: tuple[Comparison, ...] = ()
    scope: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "conditions", tuple(self.conditions))
        if (self.offered.entity_type, self.offered.contract_ref) == (self.wanted.entity_type, self.wanted.contract_ref):
            raise InvalidInvitation("an invitation must offer something other than what it wants")

    def to_doc(self) -> dict:
        return {
            "offered": self.offered.to_doc(),
            "wanted": self.wanted.to_doc(),
            "conditions": [c.to_doc() for c in self.conditions],
            "scope": self.scope,
        }

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any]) -> "InvitationMetadata":
        return cls(EntityDescriptor.from_doc(doc["offered"]), EntityDescriptor.from_doc(doc["wanted"]),
                   tuple(Comparison.from_doc(c) for c in doc.get("conditions", [])), doc.get("scope"))


@dataclass(frozen=True)
class InvitationScript:
    metadata: InvitationMetadata
    issuer_pk: Point
    agent_pk: Point

    def to_doc(self) -> dict:
        return {
            "d": self.metadata.to_doc(),
            "ci": SECP256K1.encode(self.issuer_pk).hex(),
            "ma": SECP256K1.encode(self.agent_pk).hex(),
        }

    def serialize(self) -> bytes:
        return canonical.dumps(self.to_doc())

    @property
    def dht_key(self) -> bytes:
        return canonical.sha256(self.serialize())

    @classmethod
    def parse(cls, body: bytes) -> "InvitationScript":
        doc = canonical.loads(body)
        return cls(InvitationMetadata.from_doc(doc["d"]), SECP256K1.decode(bytes.fromhex(doc["ci"])),
                   SECP256K1.decode(bytes.fromhex(doc["ma"])))

    def redeem(self) -> RedeemScript:
        """Invitation output: either key may sign; metadata names the script and the wanted entity."""
        return build_redeem_script(1, [self.agent_pk, self.issuer_pk],
                                   [self.dht_key, self.metadata.wanted.tag_block()])


@dataclass(frozen=True)
class InvitationRecord:
    script: InvitationScript
    dht_key: bytes
    invitation_txid: bytes
    index: int = 0

    @property
    def outpoint(self) -> tuple[bytes, int]:
        return self.invitation_txid, self.index


def make_invitation_script(issuer_master: KeyPair, agent_master: KeyPair, path: KeyPath,
                           metadata: InvitationMetadata) -> InvitationScript:
    return InvitationScript(metadata, derive_path(issuer_master, path).pk, derive_path(agent_master, path).pk)


def publish_invitation(exchange_dht: DhtStore, chain: Chain, script: InvitationScript, payer: Agent,
                       amount: int, fee: int = 0) -> InvitationRecord:
    """Store ``script`` in the invitation store and commit to it on chain."""
    try:
        tx = pay_outputs(payer, chain, [TxOutput(amount, script.redeem().script_pubkey())], fee)
    except InsufficientBudget as exc:
        raise InsufficientFunding(str(exc)) from exc
    key = exchange_dht.put(script.serialize())
    exchange_dht.append_line(key, {"txid": tx.txid.hex(), "index": 0})
    return InvitationRecord(script, key, tx.txid, 0)


@lru_cache(maxsize=8192)
def _parse_body(body: bytes) -> InvitationScript:
    return InvitationScript.parse(body)


def records(exchange_dht: DhtStore, key: bytes) -> list[InvitationRecord]:
    script = _parse_body(exchange_dht.require(key))
    return [InvitationRecord(script, key, bytes.fromhex(line["txid"]), line["index"])
            for line in exchange_dht.lines(key)]


# -- matching ---------------------------------------------------------------------------


def _corresponds(wanted: EntityDescriptor, offered: EntityDescriptor) -> bool:
    if wanted.entity_type != offered.entity_type:
        return False
    if wanted.contract_ref is not None and wanted.contract_ref != offered.contract_ref:
        return False
    (wl, wh), (ol, oh) = wanted.bounds, offered.bounds
    return max(wl, ol) <= min(wh, oh)


def invitations_match(a: InvitationMetadata, b: InvitationMetadata) -> bool:
    if not (_corresponds(a.wanted, b.offered) and _corresponds(b.wanted, a.offered)):
        return False
    if not satisfiable(a.conditions + b.conditions):
        return False
    return a.scope is None or b.scope is None or a.scope == b.scope


def shared_conditions(a: InvitationMetadata, b: InvitationMetadata) -> int:
    """Conditions stated identically on both sides."""
    return len(set(a.conditions) & set(b.conditions))


def match_invitations(exchange_dht: DhtStore, record: InvitationRecord) -> list[InvitationRecord]:
    if record.dht_key not in exchange_dht:
        raise UnpublishedInvitation("invitation is not in the invitation store")
    mine = record.script.metadata
    found = []
    for key, body in exchange_dht.items():
        if key == record.dht_key:
            continue
        other = _parse_body(body)
        if invitations_match(mine, other.metadata):
            rank = shared_conditions(mine, other.metadata)
            found += [(-rank, key, r.invitation_txid, r.index, r) for r in records(exchange_dht, key)]
    return [r for *_, r in sorted(found, key=lambda t: t[:4])]


# -- exchange -------------------------------------------------------------------------


def _verify(tx: Transaction, index: int, sig: Optional[bytes], pk: Point, chain: Chain) -> bool:
    return sig is not None and verify_digest(sighash(tx, index), sig, pk, chain.curve, chain.base)


@dataclass
class ExchangeProposal:
    """Unsigned exchange transaction plus the signatures collected for it."""

    tx: Transaction
    record_k: InvitationRecord
    record_m: InvitationRecord
    signatures: dict[tuple[int, str], bytes] = field(default_factory=dict)

    def sign(self, side: int, role: str, kp: KeyPair, chain: Chain) -> None:
        record = (self.record_k, self.record_m)[side]
        expected = record.script.agent_pk if role == "agent" else record.script.issuer_pk
        if kp.pk != expected:
            raise BadSignature(f"{role} key does not belong to invitation {record.dht_key.hex()[:12]}")
        pending = PendingSpend(self.tx, record.script.redeem(), side)
        pending.sign(kp.sk, kp.pk, chain.base)
        self.signatures[(side, role)] = pending.signatures[pending.key_slot(kp.pk)]


def propose_exchange(chain: Chain, record_k: InvitationRecord, record_m: InvitationRecord,
                     quantities: Optional[tuple[Any, Any]] = None, fee: int = 0) -> ExchangeProposal:
    """Lay out the exchange transaction for two matched invitations.

    Output 0 hands the entity offered by ``k`` to ``m``'s agent and issuer;
    output 1 does the reverse.  Each output embeds the transferred token and
    the contract it underlies.
    """
    for record in (record_k, record_m):
        if not chain.is_unspent(*record.outpoint):
            raise InvitationSpent(f"invitation output {record.invitation_txid.hex()[:12]} is not spendable")
    dk, dm = record_k.script.metadata, record_m.script.metadata
    qk, qm = quantities or (dk.offered.quantity.transfer_units, dm.offered.quantity.transfer_units)
    qk, qm = Fraction(qk), Fraction(qm)
    for q, offered, wanted in ((qk, dk.offered, dm.wanted), (qm, dm.offered, dk.wanted)):
        lo = max(offered.bounds[0], wanted.bounds[0])
        hi = min(offered.bounds[1], wanted.bounds[1])
        if not lo <= q <= hi:
            raise QuantityOutOfRange(f"{q} units of {offered.entity_type} outside [{lo}, {hi}]")
    vk = chain.output(*record_k.outpoint).value
    vm = chain.output(*record_m.outpoint).value
    fee_k = fee // 2
    if vk - fee_k < 0 or vm - (fee - fee_k) < 0:
        raise ExchangeError("invitation outputs do not cover the fee")

    def token_output(value: int, offered: EntityDescriptor, q: Fraction, to: InvitationScript) -> TxOutput:
        token = make_token(offered.quantity.total_units, q, offered.quantity.pegging_rate)
        ref = offered.contract_ref or bytes(32)
        redeem = build_redeem_script(2, [to.agent_pk, to.issuer_pk], [token.to_block(), ref])
        return TxOutput(value, redeem.script_pubkey())

    tx = Transaction(
        (TxInput(*record_k.outpoint), TxInput(*record_m.outpoint)),
        (token_output(vk - fee_k, dk.offered, qk, record_m.script),
         token_output(vm - (fee - fee_k), dm.offered, qm, record_k.script)),
    )
    return ExchangeProposal(tx, record_k, record_m)


def build_exchange_tx(proposal: ExchangeProposal, chain: Chain, strict: bool = False) -> Transaction:
    """Check the collected signatures and assemble the final transaction.

    Side ``k`` needs its agent's signature (its issuer's too when ``strict``);
    side ``m`` needs both.
    """
    tx = proposal.tx
    for side, record in enumerate((proposal.record_k, proposal.record_m)):
        if not chain.is_unspent(*record.outpoint):
            raise InvitationSpent(f"invitation output {record.invitation_txid.hex()[:12]} is not spendable")
        required = ("agent", "issuer") if side == 1 or strict else ("agent",)
        keys = {"agent": record.script.agent_pk, "issuer": record.script.issuer_pk}
        for role in required:
            if not _verify(tx, side, proposal.signatures.get((side, role)), keys[role], chain):
                raise BadSignature(f"missing or invalid {role} signature on side {'km'[side]}")
        sigs = [proposal.signatures[(side, r)] for r in ("agent", "issuer") if (side, r) in proposal.signatures
                and _verify(tx, side, proposal.signatures[(side, r)], keys[r], chain)]
        tx = tx.with_script_sig(side, (*sigs, record.script.redeem().serialize()))
    return tx


def entity_channel_key(issuer_side: KeyPair, agent_side_pk: Point) -> bytes:
    return symmetric_key_from_cs(common_secret(issuer_side.sk, agent_side_pk))


__all__ = [
    "BadSignature", "EntityDescriptor", "ExchangeError", "ExchangeProposal", "InsufficientFunding",
    "InvalidInvitation", "InvitationMetadata", "InvitationRecord", "InvitationScript",
    "InvitationSpent", "QuantityOutOfRange", "UnknownKey", "UnpublishedInvitation",
    "build_exchange_tx", "entity_channel_key", "invitations_match", "make_invitation_script",
    "match_invitations", "propose_exchange", "publish_invitation", "records", "shared_conditions",
]
