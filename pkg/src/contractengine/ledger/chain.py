"""Simulated UTXO chain.

Each successful ``broadcast`` (or batch) confirms one block; ``tick``
appends empty blocks.  Lock-times are block heights: a transaction with
``lock_time`` L confirms only once ``height >= L``.  Funding operations mint
value through coinbase-style transactions so that value conservation can be
audited: total unspent + total fees == total funded.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Iterable, Optional

from .. import canonical
from ..curve import SECP256K1, Curve, Point
from .script import ScriptPubKey, eval_scripts, render
from .tx import (
    LedgerError,
    Transaction,
    TxOutput,
    UnknownPrevOut,
    coinbase,
    sighash,
    verify_digest,
)


class DoubleSpend(LedgerError):
    pass


class ScriptFailure(LedgerError):
    pass


class Immature(LedgerError):
    pass


class InvalidTransaction(LedgerError):
    pass


@dataclass(frozen=True)
class UtxoStatus:
    state: str  # "Unspent" | "Spent" | "Unknown"
    spent_by: Optional[bytes] = None

    def __str__(self) -> str:
        return f"Spent({self.spent_by.hex()})" if self.state == "Spent" else self.state


UNSPENT = UtxoStatus("Unspent")
UNKNOWN = UtxoStatus("Unknown")


def eval_script(script_sig, script_pubkey: ScriptPubKey, tx: Transaction, input_index: int,
                height: Optional[int] = None, curve: Curve = SECP256K1,
                base: Optional[Point] = None) -> bool:
    """Evaluate an input's unlocking data against the output it spends."""
    if height is not None and tx.lock_time > height:
        return False
    try:
        digest = sighash(tx, input_index)
    except (IndexError, ValueError, OverflowError):
        return False

    def check_sig(sig: bytes, pubkey: bytes) -> bool:
        try:
            pk = curve.decode(pubkey)
        except Exception:
            return False
        return verify_digest(digest, sig, pk, curve, base)

    try:
        return eval_scripts(tuple(script_sig), script_pubkey, check_sig)
    except Exception:
        return False


class Chain:
    def __init__(self, curve: Curve = SECP256K1, base: Optional[Point] = None):
        self.curve = curve
        self.base = curve.validate(base) if base is not None else curve.generator
        self.blocks: list[list[Transaction]] = []
        self.transactions: dict[bytes, Transaction] = {}
        self.outputs: dict[tuple[bytes, int], TxOutput] = {}
        self.spent: dict[tuple[bytes, int], bytes] = {}
        self.funded_total = 0
        self.fees_total = 0
        self._funding_nonce = 0
        self._lock = threading.Lock()

    @property
    def height(self) -> int:
        return len(self.blocks)

    # -- queries -----------------------------------------------------------------

    def output(self, txid: bytes, index: int) -> TxOutput:
        try:
            return self.outputs[(txid, index)]
        except KeyError:
            raise UnknownPrevOut(f"no confirmed output {txid.hex()}:{index}") from None

    def utxo_status(self, txid: bytes, index: int) -> UtxoStatus:
        if (txid, index) not in self.outputs:
            return UNKNOWN
        spender = self.spent.get((txid, index))
        return UtxoStatus("Spent", spender) if spender else UNSPENT

    def is_unspent(self, txid: bytes, index: int) -> bool:
        return self.utxo_status(txid, index) == UNSPENT

    def unspent(self) -> dict[tuple[bytes, int], TxOutput]:
        return {op: out for op, out in self.outputs.items() if op not in self.spent}

    def unspent_total(self) -> int:
        return sum(o.value for o in self.unspent().values())

    def confirmed(self, txid: bytes) -> bool:
        return txid in self.transactions

    def block_of(self, txid: bytes) -> Optional[int]:
        for height, block in enumerate(self.blocks, start=1):
            if any(tx.txid == txid for tx in block):
                return height
        return None

    # -- validation ------------------------------------------------------------------

    def check(self, tx: Transaction, pending_spent: Optional[dict] = None,
              pending_outputs: Optional[dict] = None) -> int:
        """Validate ``tx`` for the next block; returns its fee."""
        pending_spent = pending_spent or {}
        pending_outputs = pending_outputs or {}
        if not tx.inputs or not tx.outputs:
            raise InvalidTransaction("transaction needs at least one input and one output")
        if any(o.value < 0 for o in tx.outputs):
            raise InvalidTransaction("negative output value")
        if tx.is_coinbase or any(i.is_coinbase for i in tx.inputs):
            raise InvalidTransaction("funding transactions are created by the chain only")
        txid = tx.txid
        if txid in self.transactions or txid in pending_outputs.values():
            raise InvalidTransaction(f"transaction {txid.hex()} already confirmed")
        seen = set()
        total_in = 0
        for idx, txin in enumerate(tx.inputs):
            op = txin.outpoint
            if op in seen or op in self.spent or op in pending_spent:
                raise DoubleSpend(f"output {op[0].hex()}:{op[1]} already spent")
            seen.add(op)
            prev = self.outputs.get(op) or pending_outputs.get(op)
            if prev is None:
                raise UnknownPrevOut(f"no confirmed output {op[0].hex()}:{op[1]}")
            total_in += prev.value
        if tx.lock_time > self.height:
            raise Immature(f"lock-time {tx.lock_time} is above the current height {self.height}")
        for idx, txin in enumerate(tx.inputs):
            prev = self.outputs.get(txin.outpoint) or pending_outputs.get(txin.outpoint)
            if not eval_script(txin.script_sig, prev.script_pubkey, tx, idx, self.height, self.curve, self.base):
                raise ScriptFailure(f"input {idx} does not satisfy {render(prev.script_pubkey.script())}")
        total_out = sum(o.value for o in tx.outputs)
        if total_out > total_in:
            raise InvalidTransaction(f"outputs ({total_out}) exceed inputs ({total_in})")
        return total_in - total_out

    # -- mutation --------------------------------------------------------------------

    def _confirm(self, block: list[Transaction], fees: int) -> None:
        for tx in block:
            txid = tx.txid
            self.transactions[txid] = tx
            if not tx.is_coinbase:
                for txin in tx.inputs:
                    self.spent[txin.outpoint] = txid
            for i, out in enumerate(tx.outputs):
                self.outputs[(txid, i)] = out
        self.fees_total += fees
        self.blocks.append(block)

    def broadcast(self, tx: Transaction) -> bytes:
        with self._lock:
            fee = self.check(tx)
            self._confirm([tx], fee)
        return tx.txid

    def broadcast_batch(self, txs: Iterable[Transaction]) -> tuple[list[bytes], list[tuple[Transaction, LedgerError]]]:
        """Confirm every valid transaction of ``txs`` in one block, in order.

        Later transactions may spend earlier ones from the same batch.  Rejected
        transactions are returned with their errors; nothing about them is recorded.
        """
        accepted: list[Transaction] = []
        rejected: list[tuple[Transaction, LedgerError]] = []
        with self._lock:
            pending_spent: dict = {}
            pending_outputs: dict = {}
            fees = 0
            for tx in txs:
                try:
                    fee = self.check(tx, pending_spent, pending_outputs)
                except LedgerError as exc:
                    rejected.append((tx, exc))
                    continue
                fees += fee
                accepted.append(tx)
                for txin in tx.inputs:
                    pending_spent[txin.outpoint] = tx.txid
                for i, out in enumerate(tx.outputs):
                    pending_outputs[(tx.txid, i)] = out
            if accepted:
                self._confirm(accepted, fees)
        return [tx.txid for tx in accepted], rejected

    def fund(self, script_pubkey: ScriptPubKey, value: int) -> tuple[bytes, int]:
        """Mint ``value`` to ``script_pubkey`` in a new block; returns the outpoint."""
        if value <= 0:
            raise InvalidTransaction("funding value must be positive")
        with self._lock:
            self._funding_nonce += 1
            tx = coinbase(script_pubkey, value, self._funding_nonce)
            self.funded_total += value
            self._confirm([tx], 0)
        return tx.txid, 0

    def tick(self, blocks: int = 1) -> int:
        with self._lock:
            for _ in range(blocks):
                self.blocks.append([])
        return self.height

    # -- audit ----------------------------------------------------------------------

    def audit(self) -> dict:
        """Recompute spend and value invariants from the confirmed blocks alone."""
        spends: dict[tuple[bytes, int], list[bytes]] = {}
        created = 0
        fees = 0
        outputs: dict[tuple[bytes, int], int] = {}
        for block in self.blocks:
            for tx in block:
                txid = tx.txid
                if tx.is_coinbase:
                    created += sum(o.value for o in tx.outputs)
                else:
                    total_in = 0
                    for txin in tx.inputs:
                        spends.setdefault(txin.outpoint, []).append(txid)
                        total_in += outputs[txin.outpoint]
                    fees += total_in - sum(o.value for o in tx.outputs)
                for i, o in enumerate(tx.outputs):
                    outputs[(txid, i)] = o.value
        double = {op: ids for op, ids in spends.items() if len(ids) > 1}
        unspent = sum(v for op, v in outputs.items() if op not in spends)
        return {
            "double_spends": double,
            "unspent_total": unspent,
            "fees_total": fees,
            "funded_total": created,
            "conserved": unspent + fees == created,
        }

    # -- persistence -------------------------------------------------------------------

    def to_doc(self) -> dict:
        return {
            "curve": self.curve.name,
            "base": self.curve.encode(self.base).hex(),
            "blocks": [[tx.to_doc() for tx in block] for block in self.blocks],
        }

    def dump(self) -> bytes:
        return canonical.dumps(self.to_doc())

    @classmethod
    def load(cls, data: bytes, curve: Curve = SECP256K1) -> "Chain":
        doc = canonical.loads(data)
        if doc.get("curve", curve.name) != curve.name:
            raise LedgerError(f"chain uses curve {doc['curve']}, expected {curve.name}")
        chain = cls(curve, curve.decode(bytes.fromhex(doc["base"])))
        for raw in doc["blocks"]:
            block = [Transaction.from_doc(t) for t in raw]
            if not block:
                chain.tick()
                continue
            fees = 0
            for tx in block:
                if tx.is_coinbase:
                    chain._funding_nonce += 1
                    chain.funded_total += sum(o.value for o in tx.outputs)
            pending_spent: dict = {}
            pending_outputs: dict = {}
            for tx in block:
                if tx.is_coinbase:
                    continue
                fees += chain.check(tx, pending_spent, pending_outputs)
                for txin in tx.inputs:
                    pending_spent[txin.outpoint] = tx.txid
                for i, out in enumerate(tx.outputs):
                    pending_outputs[(tx.txid, i)] = out
            chain._confirm(block, fees)
        return chain
