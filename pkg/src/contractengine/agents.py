"""Agents that announce contracts, issue subcontracts, watch checkpoints and
manage crypto-currency budgets.

An agent's ``budget`` counts everything it may spend: coins already held in
its wallet plus an allowance not yet drawn on chain.  Spending consumes
wallet coins first and draws any shortfall from the allowance as a new
funding coin.  Change returns to the wallet, so only amounts paid away and
fees reduce the budget.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Any, Mapping, Optional, Sequence, Union

from .contract import (
    AgentProgram,
    ContractModel,
    append_instance_line,
    compile_model,
    load_entry,
    step_dfa,
    store_model,
)
from .curve import SECP256K1, Point
from .dht import DhtStore
from .errors import EngineError
from .keys import KeyPair, KeyPath, Parallel, derive_path, keypair_from_seed
from .ledger import (
    Chain,
    LedgerError,
    PendingSpend,
    RedeemScript,
    Transaction,
    TxInput,
    TxOutput,
    build_redeem_script,
    p2pkh_for,
    p2pkh_script_sig,
)


class AgentError(EngineError):
    pass


class InsufficientBudget(AgentError):
    pass


class ParentComplete(AgentError):
    pass


class AlreadyPaid(AgentError):
    pass


class PoolTooSmall(AgentError):
    pass


class BadShares(AgentError):
    pass


class Role(str, Enum):
    MASTER = "Master"
    SUBORDINATE = "Subordinate"
    TEMPLATES_MANAGER = "TemplatesManager"


@dataclass
class Party:
    """Anyone holding a key hierarchy: issuers, counterparties, agents."""

    name: str
    master: KeyPair
    derived_keys: dict[str, KeyPair] = field(default_factory=dict)

    @classmethod
    def from_seed(cls, name: str, seed: Union[str, bytes], **kwargs) -> "Party":
        return cls(name, keypair_from_seed(seed), **kwargs)

    def derive(self, path: KeyPath) -> KeyPair:
        key = str(path)
        if key not in self.derived_keys:
            self.derived_keys[key] = derive_path(self.master, path)
        return self.derived_keys[key]

    def keys_for(self, path: KeyPath) -> list[KeyPair]:
        """Key pairs this party might sign with for an output derived at ``path``."""
        out = [self.derive(path)]
        if len(path):
            out.append(self.master)
        return out

    @property
    def pk(self) -> Point:
        return self.master.pk


@dataclass
class Agent(Party):
    role: Role = Role.MASTER
    budget: int = 0
    wallet: list[tuple[bytes, int]] = field(default_factory=list)
    program: Optional[AgentProgram] = None

    def load_program(self, model: ContractModel) -> AgentProgram:
        if self.role is Role.TEMPLATES_MANAGER:
            raise AgentError("a templates manager runs no contract program")
        self.program, _ = compile_model(model)
        return self.program

    def wallet_value(self, chain: Chain) -> int:
        return sum(chain.output(*op).value for op in self.wallet if chain.is_unspent(*op))

    def allowance(self, chain: Chain) -> int:
        return max(0, self.budget - self.wallet_value(chain))


# -- paying from an agent's funds ------------------------------------------------------


def pay_outputs(agent: Agent, chain: Chain, outputs: Sequence[TxOutput], fee: int,
                draw: Optional[int] = None, lock_time: int = 0) -> Transaction:
    """Broadcast a transaction paying ``outputs`` plus ``fee`` from ``agent``'s funds.

    ``draw`` sets the size of a fresh funding coin when the wallet falls short
    (at least the shortfall).  Change goes back to the agent as the last output.
    """
    spend = sum(o.value for o in outputs) + fee
    if fee < 0 or any(o.value <= 0 for o in outputs):
        raise AgentError("outputs must be positive and the fee non-negative")
    if agent.budget < spend:
        raise InsufficientBudget(f"{agent.name} has {agent.budget}, needs {spend}")
    agent.wallet = [op for op in agent.wallet if chain.is_unspent(*op)]
    coins, have = [], 0
    for op in agent.wallet:
        if have >= spend:
            break
        coins.append(op)
        have += chain.output(*op).value
    if have < spend:
        amount = max(spend - have, draw or 0)
        if amount > agent.allowance(chain):
            raise InsufficientBudget(f"{agent.name} cannot draw {amount} beyond its wallet")
        coin = chain.fund(p2pkh_for(agent.pk, chain.curve), amount)
        agent.wallet.append(coin)
        coins.append(coin)
        have += amount
    outs = list(outputs)
    if have > spend:
        outs.append(TxOutput(have - spend, p2pkh_for(agent.pk, chain.curve)))
    tx = Transaction(tuple(TxInput(*op) for op in coins), tuple(outs), lock_time)
    for i in range(len(coins)):
        tx = tx.with_script_sig(i, p2pkh_script_sig(tx, i, agent.master.sk, agent.pk, chain.curve, chain.base))
    txid = chain.broadcast(tx)
    agent.wallet = [op for op in agent.wallet if op not in coins]
    if have > spend:
        agent.wallet.append((txid, len(outs) - 1))
    agent.budget -= spend
    return tx


# -- contract handles --------------------------------------------------------------------


@dataclass
class ContractHandle:
    repo_key: bytes
    existence_utxo: tuple[bytes, int]
    issuer_pk: Point
    agent_pk: Point
    redeem: RedeemScript
    value: int
    path: KeyPath = field(default_factory=KeyPath)
    parent: Optional[tuple[bytes, int]] = None
    repay: Optional[PendingSpend] = None

    @property
    def txid(self) -> bytes:
        return self.existence_utxo[0]

    def status(self, chain: Chain) -> str:
        state = chain.utxo_status(*self.existence_utxo).state
        return {"Unspent": "Active", "Spent": "Complete"}.get(state, "Unknown")

    def to_doc(self) -> dict:
        return {
            "repo_key": self.repo_key.hex(),
            "utxo": [self.existence_utxo[0].hex(), self.existence_utxo[1]],
            "issuer_pk": SECP256K1.encode(self.issuer_pk).hex(),
            "agent_pk": SECP256K1.encode(self.agent_pk).hex(),
            "redeem": self.redeem.serialize().hex(),
            "value": self.value,
            "path": str(self.path),
            "parent": [self.parent[0].hex(), self.parent[1]] if self.parent else None,
        }

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any]) -> "ContractHandle":
        parent = doc.get("parent")
        return cls(
            bytes.fromhex(doc["repo_key"]),
            (bytes.fromhex(doc["utxo"][0]), doc["utxo"][1]),
            SECP256K1.decode(bytes.fromhex(doc["issuer_pk"])),
            SECP256K1.decode(bytes.fromhex(doc["agent_pk"])),
            RedeemScript.from_bytes(bytes.fromhex(doc["redeem"])),
            doc["value"],
            KeyPath.parse(doc["path"]),
            (bytes.fromhex(parent[0]), parent[1]) if parent else None,
        )


def instance_block(line_index: Optional[int]) -> bytes:
    """Metadata block naming the repository instance line (all zero when none)."""
    return bytes(32) if line_index is None else (line_index + 1).to_bytes(32, "big")


def announce_contract(agent: Agent, issuer: Party, chain: Chain, repo: DhtStore,
                      model: Union[ContractModel, bytes], nominal: int, fee: int,
                      funding: Optional[int] = None, line_index: Optional[int] = None,
                      instance_params: Optional[Mapping[str, Any]] = None) -> ContractHandle:
    """Record a contract's existence as a 2-of-2 P2SH output carrying its repository key.

    ``instance_params`` appends a fresh instance line first; ``line_index``
    refers to an existing one.
    """
    if agent.budget < nominal + fee:
        raise InsufficientBudget(f"{agent.name} has {agent.budget}, needs {nominal + fee}")
    if isinstance(model, ContractModel):
        key = store_model(repo, model)
    else:
        key = model
        repo.require(key)
    if instance_params is not None:
        line_index = append_instance_line(repo, key, instance_params)
    elif line_index is not None:
        repo.line(key, line_index)
    redeem = build_redeem_script(2, [agent.pk, issuer.pk], [key, instance_block(line_index)], chain.curve)
    tx = pay_outputs(agent, chain, [TxOutput(nominal, redeem.script_pubkey())], fee, draw=funding)
    return ContractHandle(key, (tx.txid, 0), issuer.pk, agent.pk, redeem, nominal)


# -- subcontracts ------------------------------------------------------------------------


@dataclass(frozen=True)
class FixedUntil:
    height: int
    m: int = 2
    repay_to: str = "agent"  # or "issuer"
    repay_fee: int = 0


@dataclass(frozen=True)
class OpenEnded:
    monitor: Party
    extra_signers: tuple[Party, ...] = ()
    m: Optional[int] = None  # default: every key must sign
    monitor_fee: int = 0
    repay_fee: int = 0


def subcontract_seed(parent: ContractHandle, seed_mode: str = "txid") -> bytes:
    if seed_mode == "txid":
        return parent.txid
    if seed_mode == "redeem_script_hash":
        return hashlib.sha256(parent.redeem.serialize()).digest()
    raise AgentError(f"unknown seed mode {seed_mode!r}")


def subcontract_path(parent: ContractHandle, sub_key: bytes, seed_mode: str = "txid") -> KeyPath:
    return parent.path / Parallel(subcontract_seed(parent, seed_mode), sub_key)


def _spend_existence(handle: ContractHandle, outputs: Sequence[TxOutput], lock_time: int = 0) -> PendingSpend:
    tx = Transaction((TxInput(*handle.existence_utxo),), tuple(o for o in outputs if o.value > 0), lock_time)
    return PendingSpend(tx, handle.redeem)


def issue_subcontract(agent: Agent, issuer: Party, chain: Chain, repo: DhtStore, parent: ContractHandle,
                      sub_model: Union[ContractModel, bytes], duration: Union[FixedUntil, OpenEnded],
                      nominal: int, fee: int, counterparties: Sequence[Party] = (),
                      seed_mode: str = "txid") -> ContractHandle:
    if parent.status(chain) != "Active":
        raise ParentComplete("the parent contract is no longer active")
    if agent.budget < nominal + fee:
        raise InsufficientBudget(f"{agent.name} has {agent.budget}, needs {nominal + fee}")
    # step two: the subcontract entry links to the parent entry
    if isinstance(sub_model, ContractModel):
        sub_key = store_model(repo, sub_model, master_ref=parent.repo_key)
    else:
        sub_key = sub_model
        if load_entry(repo, sub_key).master_ref is None:
            raise AgentError("subcontract entry does not link to a master entry")
    # step one: both sides derive with the same seed
    path = subcontract_path(parent, sub_key, seed_mode)
    agent_sub, issuer_sub = agent.derive(path), issuer.derive(path)
    # step three: m-of-n script over keys and both repository references
    if isinstance(duration, OpenEnded):
        middle = [duration.monitor.pk, *(p.pk for p in duration.extra_signers)]
    else:
        middle = [p.pk for p in counterparties]
    keys = [agent_sub.pk, *middle, issuer_sub.pk]
    m = duration.m if duration.m is not None else len(keys)
    redeem = build_redeem_script(m, keys, [parent.repo_key, sub_key], chain.curve)
    # steps four and five: pay the nominal amount and wait for confirmation
    tx = pay_outputs(agent, chain, [TxOutput(nominal, redeem.script_pubkey())], fee)
    if not chain.confirmed(tx.txid):
        raise LedgerError("subcontract transaction was not confirmed")
    handle = ContractHandle(sub_key, (tx.txid, 0), issuer_sub.pk, agent_sub.pk, redeem, nominal,
                            path, parent.existence_utxo)
    # step six: pre-create the repay transaction
    if isinstance(duration, FixedUntil):
        payee = agent.pk if duration.repay_to == "agent" else issuer.pk
        pending = _spend_existence(handle, [TxOutput(nominal - duration.repay_fee, p2pkh_for(payee, chain.curve))],
                                   lock_time=duration.height)
        pending.sign(agent_sub.sk, agent_sub.pk, chain.base)
        pending.sign(issuer_sub.sk, issuer_sub.pk, chain.base)
    else:
        rest = nominal - duration.monitor_fee - duration.repay_fee
        if rest < 0:
            raise InsufficientBudget("nominal amount does not cover the monitor's fee")
        pending = _spend_existence(handle, [TxOutput(duration.monitor_fee, p2pkh_for(duration.monitor.pk, chain.curve)),
                                            TxOutput(rest, p2pkh_for(agent.pk, chain.curve))])
        pending.sign(agent_sub.sk, agent_sub.pk, chain.base)
        pending.sign(issuer_sub.sk, issuer_sub.pk, chain.base)
    handle.repay = pending
    return handle


def cosign(pending: PendingSpend, party: Party, path: KeyPath, chain: Chain) -> bool:
    """Add ``party``'s signature if one of its keys sits in the script."""
    for kp in party.keys_for(path):
        if pending.key_slot(kp.pk) is not None:
            pending.sign(kp.sk, kp.pk, chain.base)
            return True
    return False


def broadcast_repay(handle: ContractHandle, chain: Chain) -> bytes:
    if handle.repay is None:
        raise AgentError("handle has no repay transaction")
    return chain.broadcast(handle.repay.finalized())


# -- checkpoints ---------------------------------------------------------------------


@dataclass
class Checkpoint:
    index: int
    amount: int
    subcontract: ContractHandle
    payee: Point
    state: Optional[str] = None
    paid_txid: Optional[bytes] = None

    @property
    def paid(self) -> bool:
        return self.paid_txid is not None


def monitor_and_trigger(sub_agent: Agent, chain: Chain, repo: DhtStore, checkpoint: Checkpoint,
                        observations: Mapping[str, Any], signers: Sequence[Party] = (),
                        fee: int = 0) -> Optional[bytes]:
    """Step the subcontract's automaton; on completion pay ``checkpoint.amount``.

    The payment spends the subcontract's existence output, so the subcontract
    reads as complete on chain afterwards.  Signatures come from ``signers``
    (the circulated co-signers); the sub-agent adds its own only if they fall short.
    """
    if checkpoint.paid:
        raise AlreadyPaid(f"checkpoint {checkpoint.index} already paid")
    handle = checkpoint.subcontract
    model = load_entry(repo, handle.repo_key).model
    state = checkpoint.state or model.initial_state
    new_state, _actions = step_dfa(model, state, observations)
    if new_state not in model.terminal_states:
        checkpoint.state = new_state
        return None
    rest = handle.value - checkpoint.amount - fee
    if rest < 0:
        raise AgentError("checkpoint amount and fee exceed the subcontract value")
    pending = _spend_existence(handle, [TxOutput(checkpoint.amount, p2pkh_for(checkpoint.payee, chain.curve)),
                                        TxOutput(rest, p2pkh_for(sub_agent.pk, chain.curve))])
    for party in signers:
        cosign(pending, party, handle.path, chain)
    if not pending.complete:
        cosign(pending, sub_agent, handle.path, chain)
    if not pending.complete:
        return None
    try:
        txid = chain.broadcast(pending.finalized())
    except LedgerError:
        return None
    checkpoint.state = new_state
    checkpoint.paid_txid = txid
    return txid


# -- budgets ----------------------------------------------------------------------------


def allocate_budgets(manager: Agent, masters: Sequence[tuple[Agent, Any]], pool: int,
                     floor: int) -> list[tuple[Agent, int]]:
    """Split ``pool`` from the manager's budget: a floor each, the rest by share."""
    if not masters:
        raise BadShares("no masters to allocate to")
    shares = [Fraction(s) for _, s in masters]
    if sum(shares) != 1 or any(s < 0 for s in shares):
        raise BadShares("usage shares must be non-negative and sum to 1")
    if pool < len(masters) * floor:
        raise PoolTooSmall(f"pool {pool} cannot give {len(masters)} masters a floor of {floor}")
    if manager.budget < pool:
        raise InsufficientBudget(f"{manager.name} holds {manager.budget}, pool is {pool}")
    spare = pool - len(masters) * floor
    amounts = [floor + int(s * spare) for s in shares]
    top = max(range(len(masters)),
              key=lambda i: (shares[i], [-b for b in SECP256K1.encode(masters[i][0].pk)]))
    amounts[top] += pool - sum(amounts)
    manager.budget -= pool
    for (agent, _), amount in zip(masters, amounts):
        agent.budget += amount
    return [(agent, amount) for (agent, _), amount in zip(masters, amounts)]


def close_interval(manager: Agent, master: Agent, minimum: int) -> int:
    returned = max(0, master.budget - minimum)
    master.budget -= returned
    manager.budget += returned
    return returned


__all__ = [
    "Agent", "AgentError", "AlreadyPaid", "BadShares", "Checkpoint", "ContractHandle", "FixedUntil",
    "InsufficientBudget", "OpenEnded", "ParentComplete", "Party", "PoolTooSmall", "Role",
    "allocate_budgets", "announce_contract", "broadcast_repay", "close_interval", "cosign",
    "instance_block", "issue_subcontract", "monitor_and_trigger", "pay_outputs", "subcontract_path",
    "subcontract_seed",
]
