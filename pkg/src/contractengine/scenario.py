"""Replayable scenarios: an event list driven through agents, ledger and stores.

A scenario document names its parties (with seed material), contract models
and an ordered list of events.  Running it yields a textual trace listing
every confirmed transaction plus status lines.  Everything is derived from
the document, so a replay produces byte-identical output.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Mapping, Optional

from . import canonical
from .agents import (
    Agent,
    Checkpoint,
    ContractHandle,
    FixedUntil,
    OpenEnded,
    Party,
    Role,
    allocate_budgets,
    announce_contract,
    broadcast_repay,
    close_interval,
    cosign,
    issue_subcontract,
    monitor_and_trigger,
)
from .contract import append_instance_line, derive_semi_template, store_model, validate_model
from .dht import DhtStore
from .errors import EngineError
from .exchange import (
    InvitationMetadata,
    InvitationRecord,
    build_exchange_tx,
    make_invitation_script,
    match_invitations,
    propose_exchange,
    publish_invitation,
)
from .keys import KeyPath, derive_path
from .ledger import Chain, LedgerError, format_transaction


class ParseError(EngineError):
    pass


class ScenarioError(EngineError):
    def __init__(self, index: int, op: str, cause: EngineError):
        super().__init__(f"event {index} ({op}): {cause.tag}: {cause}")
        self.index, self.op, self.cause = index, op, cause


@dataclass
class ScenarioState:
    chain: Chain = field(default_factory=Chain)
    repo: DhtStore = field(default_factory=lambda: DhtStore(name="contracts"))
    invitations: DhtStore = field(default_factory=lambda: DhtStore(name="invitations"))
    parties: dict[str, Party] = field(default_factory=dict)
    models: dict[str, Any] = field(default_factory=dict)
    entries: dict[str, bytes] = field(default_factory=dict)
    handles: dict[str, ContractHandle] = field(default_factory=dict)
    checkpoints: dict[str, Checkpoint] = field(default_factory=dict)
    records: dict[str, InvitationRecord] = field(default_factory=dict)
    redeem_scripts: dict[bytes, Any] = field(default_factory=dict)
    trace: list[str] = field(default_factory=list)

    def agent(self, name: str) -> Agent:
        party = self.party(name)
        if not isinstance(party, Agent):
            raise ParseError(f"{name!r} is not an agent")
        return party

    def party(self, name: str) -> Party:
        try:
            return self.parties[name]
        except KeyError:
            raise ParseError(f"unknown party {name!r}") from None

    def handle(self, name: str) -> ContractHandle:
        try:
            return self.handles[name]
        except KeyError:
            raise ParseError(f"unknown contract handle {name!r}") from None

    def remember(self, handle: ContractHandle) -> None:
        self.redeem_scripts[handle.redeem.address()] = handle.redeem

    def emit(self, line: str) -> None:
        self.trace.append(line)

    def text(self) -> str:
        return "\n".join(self.trace) + ("\n" if self.trace else "")


def load_document(data: bytes | str) -> dict:
    try:
        doc = canonical.loads(data)
    except (ValueError, EngineError) as exc:
        raise ParseError(f"scenario is not a canonical document: {exc}") from exc
    if isinstance(doc, list):
        doc = {"events": doc}
    if not isinstance(doc, dict) or not isinstance(doc.get("events", []), list):
        raise ParseError("scenario must be an object with an 'events' list")
    return doc


def _entry_key(state: ScenarioState, name: str) -> bytes:
    if name in state.entries:
        return state.entries[name]
    try:
        return bytes.fromhex(name)
    except ValueError:
        raise ParseError(f"unknown repository entry {name!r}") from None


def _model(state: ScenarioState, ev: Mapping) -> Any:
    if "model" in ev:
        name = ev["model"]
        if isinstance(name, dict):
            return validate_model(name)
        if name not in state.models:
            raise ParseError(f"unknown model {name!r}")
        return state.models[name]
    return _entry_key(state, ev["entry"])


# -- event handlers ---------------------------------------------------------------------


def _put_model(state, ev):
    master = _entry_key(state, ev["master"]) if ev.get("master") else None
    key = store_model(state.repo, _model(state, ev), master)
    state.entries[ev["as"]] = key
    state.emit(f"entry {ev['as']} {key.hex()}")


def _semi_template(state, ev):
    key = derive_semi_template(state.repo, _entry_key(state, ev["from"]), ev.get("amend", {}))
    state.entries[ev["as"]] = key
    state.emit(f"entry {ev['as']} {key.hex()} (from {ev['from']})")


def _append_line(state, ev):
    idx = append_instance_line(state.repo, _entry_key(state, ev["entry"]), ev["params"])
    state.emit(f"instance line {ev['entry']}[{idx}]")


def _announce(state, ev):
    handle = announce_contract(
        state.agent(ev["agent"]), state.party(ev["issuer"]), state.chain, state.repo, _model(state, ev),
        ev["nominal"], ev["fee"], ev.get("funding"), ev.get("line"))
    state.handles[ev["as"]] = handle
    state.remember(handle)


def _duration(state, ev) -> FixedUntil | OpenEnded:
    spec = ev["duration"]
    if "open_ended" in spec:
        oe = spec["open_ended"]
        return OpenEnded(state.party(oe["monitor"]), tuple(state.party(p) for p in oe.get("extra_signers", [])),
                         oe.get("m"), oe.get("monitor_fee", 0), oe.get("repay_fee", 0))
    height = spec["fixed_until"] if "fixed_until" in spec else state.chain.height + spec["expires_in"]
    return FixedUntil(height, spec.get("m", 2), spec.get("repay_to", "agent"), spec.get("repay_fee", 0))


def _issue(state, ev):
    handle = issue_subcontract(
        state.agent(ev["agent"]), state.party(ev["issuer"]), state.chain, state.repo,
        state.handle(ev["parent"]), _model(state, ev), _duration(state, ev), ev["nominal"], ev["fee"],
        tuple(state.party(p) for p in ev.get("counterparties", [])), ev.get("seed_mode", "txid"))
    state.handles[ev["as"]] = handle
    state.remember(handle)
    if handle.repay is not None:
        state.emit(f"repay {ev['as']} prepared lock_time={handle.repay.tx.lock_time} "
                   f"signed_slots={handle.repay.signed_slots()}")


def _checkpoint(state, ev):
    state.checkpoints[ev["as"]] = Checkpoint(ev["index"], ev["amount"], state.handle(ev["handle"]),
                                             state.party(ev["payee"]).pk)


def _observe(state, ev):
    cp = state.checkpoints[ev["checkpoint"]]
    txid = monitor_and_trigger(state.agent(ev["agent"]), state.chain, state.repo, cp, ev["observations"],
                               tuple(state.party(p) for p in ev.get("signers", [])), ev.get("fee", 0))
    state.emit(f"checkpoint {ev['checkpoint']} state={cp.state} paid={'yes' if txid else 'no'}")


def _tick(state, ev):
    state.emit(f"height {state.chain.tick(ev.get('blocks', 1))}")


def _broadcast_repay(state, ev):
    handle = state.handle(ev["handle"])
    for name in ev.get("cosigners", []):
        cosign(handle.repay, state.party(name), handle.path, state.chain)
    try:
        broadcast_repay(handle, state.chain)
    except LedgerError as exc:
        if ev.get("expect") != exc.tag:
            raise
        state.emit(f"repay {ev['handle']} rejected {exc.tag}")
        return
    if ev.get("expect"):
        raise ParseError(f"expected {ev['expect']} but the repay confirmed")


def _resolve_refs(state, value):
    """Replace ``"@entry"`` strings with the named repository key."""
    if isinstance(value, str) and value.startswith("@"):
        return _entry_key(state, value[1:]).hex()
    if isinstance(value, dict):
        return {k: _resolve_refs(state, v) for k, v in value.items()}
    if isinstance(value, list):
        return [_resolve_refs(state, v) for v in value]
    return value


def _invite(state, ev):
    issuer, agent = state.party(ev["issuer"]), state.party(ev["agent"])
    path = KeyPath.parse(ev.get("path", ""))
    metadata = _resolve_refs(state, ev["metadata"])
    for side in ("offered", "wanted"):
        if metadata[side].get("ref"):
            state.repo.require(bytes.fromhex(metadata[side]["ref"]))
    script = make_invitation_script(issuer.master, agent.master, path, InvitationMetadata.from_doc(metadata))
    record = publish_invitation(state.invitations, state.chain, script, state.agent(ev.get("payer", ev["agent"])),
                                ev.get("amount", 1000), ev.get("fee", 0))
    state.records[ev["as"]] = record
    state.redeem_scripts[script.redeem().address()] = script.redeem()
    state.emit(f"invitation {ev['as']} {record.dht_key.hex()}")


def _record_name(state, record: InvitationRecord) -> str:
    for name, r in state.records.items():
        if r.outpoint == record.outpoint:
            return name
    return f"{record.dht_key.hex()[:16]}:{record.invitation_txid.hex()[:16]}"


def _match(state, ev):
    found = match_invitations(state.invitations, state.records[ev["invitation"]])
    names = [_record_name(state, r) for r in found]
    state.emit(f"match {ev['invitation']} -> [{', '.join(names)}]")
    if "expect" in ev and names != ev["expect"]:
        raise ParseError(f"expected candidates {ev['expect']}, got {names}")


def _exchange(state, ev):
    rk, rm = state.records[ev["k"]], state.records[ev["m"]]
    proposal = propose_exchange(state.chain, rk, rm, None, ev.get("fee", 0))
    for side, label, default in ((0, "k", ["agent"]), (1, "m", ["agent", "issuer"])):
        side_doc = ev["parties"][label]
        path = KeyPath.parse(side_doc.get("path", ""))
        for role in side_doc.get("sign", default):
            owner = state.party(side_doc[role])
            proposal.sign(side, role, derive_path(owner.master, path), state.chain)
    tx = build_exchange_tx(proposal, state.chain, ev.get("strict", False))
    state.chain.broadcast(tx)
    state.emit(f"exchange {ev['k']}<->{ev['m']} {tx.txid.hex()}")


def _status(state, ev):
    for name in ev.get("handles", [ev.get("handle")] if ev.get("handle") else []):
        state.emit(f"status {name} {state.handle(name).status(state.chain)}")
    for name in ev.get("invitations", []):
        st = state.chain.utxo_status(*state.records[name].outpoint)
        state.emit(f"status {name} {st}")


def _allocate(state, ev):
    out = allocate_budgets(state.agent(ev["manager"]),
                           [(state.agent(n), Fraction(canonical.parse_fraction(s) if "/" in str(s) else s))
                            for n, s in ev["masters"]], ev["pool"], ev["floor"])
    state.emit("allocate " + " ".join(f"{a.name}={amt}" for a, amt in out))


def _close(state, ev):
    returned = close_interval(state.agent(ev["manager"]), state.agent(ev["master"]), ev["minimum"])
    state.emit(f"close {ev['master']} returned={returned}")


def _audit(state, ev):
    report = state.chain.audit()
    state.emit(f"audit double_spends={len(report['double_spends'])} unspent={report['unspent_total']} "
               f"fees={report['fees_total']} funded={report['funded_total']} conserved={report['conserved']}")


HANDLERS: dict[str, Callable[[ScenarioState, Mapping], None]] = {
    "put_model": _put_model,
    "semi_template": _semi_template,
    "append_instance_line": _append_line,
    "announce": _announce,
    "issue_subcontract": _issue,
    "checkpoint": _checkpoint,
    "observe": _observe,
    "tick": _tick,
    "broadcast_repay": _broadcast_repay,
    "invite": _invite,
    "match": _match,
    "exchange": _exchange,
    "status": _status,
    "allocate": _allocate,
    "close_interval": _close,
    "audit": _audit,
}


def _setup(doc: Mapping, state: ScenarioState) -> None:
    for p in doc.get("parties", []):
        role = p.get("role")
        if role is None:
            state.parties[p["name"]] = Party.from_seed(p["name"], p["seed"])
        else:
            state.parties[p["name"]] = Agent.from_seed(p["name"], p["seed"], role=Role(role),
                                                       budget=p.get("budget", 0))
    for name, model in doc.get("models", {}).items():
        state.models[name] = validate_model(model)


def run_scenario(document: bytes | str | Mapping, state: Optional[ScenarioState] = None,
                 on_event: Optional[Callable[[int, ScenarioState], None]] = None) -> ScenarioState:
    """Replay a scenario; ``on_event`` is called after every event (for invariant checks)."""
    doc = load_document(document) if isinstance(document, (bytes, str)) else dict(document)
    state = state or ScenarioState()
    try:
        _setup(doc, state)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad scenario header: {exc}") from exc
    for index, ev in enumerate(doc.get("events", [])):
        op = ev.get("op") if isinstance(ev, dict) else None
        if op not in HANDLERS:
            raise ScenarioError(index, str(op), ParseError(f"unknown event {op!r}"))
        seen = set(state.chain.transactions)
        mark = len(state.trace)
        try:
            HANDLERS[op](state, ev)
        except EngineError as exc:
            raise ScenarioError(index, op, exc) from exc
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioError(index, op, ParseError(f"malformed event: {exc!r}")) from exc
        state.trace[mark:mark] = _new_transactions(state, seen, ev.get("as", op))
        if on_event:
            on_event(index, state)
    return state


def _new_transactions(state: ScenarioState, seen: set, label: str) -> list[str]:
    out, count = [], 0
    for tx in (tx for block in state.chain.blocks for tx in block if tx.txid not in seen):
        if tx.is_coinbase:
            title = "Funding"
        else:
            count += 1
            title = label if count == 1 else f"{label}#{count}"
        out.append(format_transaction(tx, f"== {title} ==", state.redeem_scripts))
    return out


__all__ = ["HANDLERS", "ParseError", "ScenarioError", "ScenarioState", "load_document", "run_scenario"]
