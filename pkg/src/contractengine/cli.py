"""Command-line interface.

State lives in two places: ``--store DIR`` holds the contract repository and
the invitation store (one dump directory each), ``--chain FILE`` holds the
chain plus named contract handles.  Both are created on first use.  Errors
print ``error: <Tag>: <message>`` and exit with status 1 (2 for usage errors).
"""
from __future__ import annotations

import sys
from pathlib import Path
from typing import Optional

import click

from . import canonical
from .agents import Agent, ContractHandle, FixedUntil, OpenEnded, Party, announce_contract, issue_subcontract
from .contract import store_model, validate_model
from .curve import SECP256K1
from .dht import DhtStore
from .errors import EngineError
from .exchange import (
    InvitationMetadata,
    build_exchange_tx,
    make_invitation_script,
    match_invitations,
    propose_exchange,
    publish_invitation,
    records,
)
from .keys import KeyPath, common_secret, derive_path, keypair_from_seed, symmetric_key_from_cs
from .ledger import Chain, format_transaction
from .scenario import run_scenario
from .tokens import make_token, split_token, token_value


class Session:
    def __init__(self, store: Optional[str], chain_file: Optional[str], fmt: str):
        self.store_dir = Path(store) if store else None
        self.chain_file = Path(chain_file) if chain_file else None
        self.fmt = fmt
        self._repo = self._invitations = self._chain = None
        self._handles: Optional[dict] = None

    # -- stores ----------------------------------------------------------------------

    def _dht(self, sub: str) -> DhtStore:
        if self.store_dir and (self.store_dir / sub).is_dir():
            return DhtStore.load(self.store_dir / sub, sub)
        return DhtStore(name=sub)

    @property
    def repo(self) -> DhtStore:
        if self._repo is None:
            self._repo = self._dht("contracts")
        return self._repo

    @property
    def invitations(self) -> DhtStore:
        if self._invitations is None:
            self._invitations = self._dht("invitations")
        return self._invitations

    def _chain_doc(self) -> dict:
        if self.chain_file and self.chain_file.exists():
            return canonical.loads(self.chain_file.read_bytes())
        return {}

    @property
    def chain(self) -> Chain:
        if self._chain is None:
            doc = self._chain_doc()
            self._chain = Chain.load(canonical.dumps(doc)) if doc else Chain()
            self._handles = doc.get("handles", {})
        return self._chain

    @property
    def handles(self) -> dict:
        self.chain
        return self._handles

    def handle(self, label: str) -> ContractHandle:
        if label not in self.handles:
            raise click.UsageError(f"no contract handle named {label!r}")
        return ContractHandle.from_doc(self.handles[label])

    def save(self) -> None:
        if self.store_dir:
            for sub, store in (("contracts", self._repo), ("invitations", self._invitations)):
                if store is not None:
                    store.dump(self.store_dir / sub)
        if self.chain_file and self._chain is not None:
            doc = self._chain.to_doc()
            doc["handles"] = self._handles
            self.chain_file.parent.mkdir(parents=True, exist_ok=True)
            self.chain_file.write_bytes(canonical.dumps(doc))

    # -- output ------------------------------------------------------------------------

    def report(self, doc: dict, text: Optional[str] = None) -> None:
        if self.fmt == "canonical":
            click.echo(canonical.dumps(doc).decode())
        else:
            click.echo(text if text is not None else "\n".join(f"{k}: {v}" for k, v in doc.items()))


pass_session = click.make_pass_decorator(Session)


def _pk_hex(pt) -> str:
    return SECP256K1.encode(pt).hex()


@click.group()
@click.option("--store", type=click.Path(file_okay=False), help="DHT dump directory.")
@click.option("--chain", "chain_file", type=click.Path(dir_okay=False), help="Chain state file.")
@click.option("--format", "fmt", type=click.Choice(["text", "canonical"]), default="text")
@click.pass_context
def cli(ctx, store, chain_file, fmt):
    ctx.obj = Session(store, chain_file, fmt)


# -- keys ----------------------------------------------------------------------------


@cli.command()
@click.option("--seed", required=True, help="Seed material for the master key.")
@pass_session
def keygen(s: Session, seed):
    kp = keypair_from_seed(seed)
    s.report({"sk": f"{kp.sk:064x}", "pk": _pk_hex(kp.pk)})


@cli.command()
@click.option("--seed", required=True)
@click.option("--path", "path_text", default="", help="e.g. p:<seed hex>:<label hex>/s:<seed hex>:<depth>")
@pass_session
def derive(s: Session, seed, path_text):
    kp = derive_path(keypair_from_seed(seed), KeyPath.parse(path_text))
    s.report({"path": str(kp.path), "pk": _pk_hex(kp.pk)})


@cli.command()
@click.option("--seed", required=True, help="Own seed.")
@click.option("--other-pk", required=True, help="Counterparty public key (hex, compressed).")
@click.option("--path", "path_text", default="")
@pass_session
def secret(s: Session, seed, other_pk, path_text):
    path = KeyPath.parse(path_text)
    own = derive_path(keypair_from_seed(seed), path)
    cs = common_secret(own.sk, SECP256K1.decode(bytes.fromhex(other_pk)), path)
    s.report({"point": _pk_hex(cs.point), "key": symmetric_key_from_cs(cs).hex()})


# -- contracts -------------------------------------------------------------------------


@cli.command("contract-create")
@click.argument("model_file", type=click.File("rb"))
@click.option("--master-ref", default=None, help="Repository key of the master entry.")
@pass_session
def contract_create(s: Session, model_file, master_ref):
    model = validate_model(model_file.read())
    key = store_model(s.repo, model, bytes.fromhex(master_ref) if master_ref else None)
    s.save()
    s.report({"entry": key.hex()})


def _agent(seed: str, budget: int) -> Agent:
    return Agent.from_seed("agent", seed, budget=budget)


@cli.command("contract-announce")
@click.option("--agent-seed", required=True)
@click.option("--issuer-seed", required=True)
@click.option("--entry", required=True, help="Repository key of the contract.")
@click.option("--nominal", type=int, required=True)
@click.option("--fee", type=int, default=0)
@click.option("--funding", type=int, default=None, help="Size of the funding coin.")
@click.option("--line", type=int, default=None, help="Instance line index.")
@click.option("--label", required=True, help="Name to store the handle under.")
@pass_session
def contract_announce(s: Session, agent_seed, issuer_seed, entry, nominal, fee, funding, line, label):
    agent = _agent(agent_seed, max(funding or 0, nominal + fee))
    handle = announce_contract(agent, Party.from_seed("issuer", issuer_seed), s.chain, s.repo,
                               bytes.fromhex(entry), nominal, fee, funding, line)
    s.handles[label] = handle.to_doc()
    s.save()
    s.report({"label": label, "txid": handle.txid.hex(), "index": 0, "status": handle.status(s.chain)})


@cli.command("subcontract-issue")
@click.option("--agent-seed", required=True)
@click.option("--issuer-seed", required=True)
@click.option("--parent", required=True, help="Label of the parent handle.")
@click.option("--model", "model_file", type=click.File("rb"), required=True)
@click.option("--nominal", type=int, required=True)
@click.option("--fee", type=int, default=0)
@click.option("--until", type=int, default=None, help="Expiry height (fixed duration).")
@click.option("--monitor-seed", default=None, help="Monitor's seed (open-ended).")
@click.option("--monitor-fee", type=int, default=0)
@click.option("-m", "m", type=int, default=None)
@click.option("--seed-mode", type=click.Choice(["txid", "redeem_script_hash"]), default="txid")
@click.option("--label", required=True)
@pass_session
def subcontract_issue(s: Session, agent_seed, issuer_seed, parent, model_file, nominal, fee, until,
                      monitor_seed, monitor_fee, m, seed_mode, label):
    if (until is None) == (monitor_seed is None):
        raise click.UsageError("give exactly one of --until or --monitor-seed")
    duration = (FixedUntil(until, m or 2) if until is not None
                else OpenEnded(Party.from_seed("monitor", monitor_seed), (), m, monitor_fee))
    handle = issue_subcontract(_agent(agent_seed, nominal + fee), Party.from_seed("issuer", issuer_seed), s.chain,
                               s.repo, s.handle(parent), validate_model(model_file.read()), duration, nominal, fee,
                               seed_mode=seed_mode)
    s.handles[label] = handle.to_doc()
    s.save()
    s.report({"label": label, "txid": handle.txid.hex(), "index": 0, "path": str(handle.path),
              "repay": handle.repay.finalized().serialize().hex()})


@cli.command()
@click.argument("target")
@click.argument("index", type=int, required=False)
@pass_session
def status(s: Session, target, index):
    """Status of an output (TXID INDEX) or of a named contract handle."""
    if index is None and target in s.handles:
        s.report({"label": target, "status": s.handle(target).status(s.chain)})
        return
    try:
        txid = bytes.fromhex(target)
    except ValueError:
        raise click.UsageError(f"{target!r} is neither a handle nor a txid") from None
    st = s.chain.utxo_status(txid, index or 0)
    s.report({"status": st.state, "spent_by": st.spent_by.hex() if st.spent_by else None}, str(st))


# -- tokens ---------------------------------------------------------------------------


@cli.command()
@click.option("--total-units", type=int, required=True)
@click.option("--transfer-units", required=True)
@click.option("--pegging-rate", required=True, help="e.g. 10%, 1/25 or 0 for non-divisible.")
@click.option("--split", default=None, help="Comma-separated quantities.")
@pass_session
def token(s: Session, total_units, transfer_units, pegging_rate, split):
    tok = make_token(total_units, transfer_units, pegging_rate)
    doc = {"token": tok.to_doc(), "block": tok.to_block().hex(), "describe": tok.describe()}
    if tok.pegging_rate:
        doc["value"] = canonical.fraction_str(token_value(tok))
        if total_units:
            doc["complete"] = total_units * tok.pegging_rate == 1
    if split:
        doc["split"] = [p.to_doc() for p in split_token(tok, split.split(","))]
    s.report(doc)


# -- exchange --------------------------------------------------------------------------


@cli.command()
@click.argument("metadata_file", type=click.File("rb"))
@click.option("--issuer-seed", required=True)
@click.option("--agent-seed", required=True)
@click.option("--path", "path_text", default="")
@click.option("--amount", type=int, default=1000)
@click.option("--fee", type=int, default=0)
@pass_session
def invite(s: Session, metadata_file, issuer_seed, agent_seed, path_text, amount, fee):
    meta = InvitationMetadata.from_doc(canonical.loads(metadata_file.read()))
    issuer, agent = keypair_from_seed(issuer_seed), _agent(agent_seed, amount + fee)
    script = make_invitation_script(issuer, agent.master, KeyPath.parse(path_text), meta)
    record = publish_invitation(s.invitations, s.chain, script, agent, amount, fee)
    s.save()
    s.report({"dht_key": record.dht_key.hex(), "txid": record.invitation_txid.hex()})


@cli.command()
@click.argument("dht_key")
@pass_session
def match(s: Session, dht_key):
    record = records(s.invitations, bytes.fromhex(dht_key))[0]
    found = match_invitations(s.invitations, record)
    doc = {"candidates": [[r.dht_key.hex(), r.invitation_txid.hex()] for r in found]}
    s.report(doc, "\n".join(f"{k} {t}" for k, t in doc["candidates"]))


def _first_unspent(s: Session, key: str):
    for r in records(s.invitations, bytes.fromhex(key)):
        if s.chain.is_unspent(*r.outpoint):
            return r
    raise click.UsageError(f"invitation {key[:16]} has no unspent invitation output")


@cli.command()
@click.argument("key_k")
@click.argument("key_m")
@click.option("--k-agent-seed", required=True)
@click.option("--k-issuer-seed", default=None)
@click.option("--k-path", default="")
@click.option("--m-agent-seed", required=True)
@click.option("--m-issuer-seed", default=None)
@click.option("--m-path", default="")
@click.option("--fee", type=int, default=0)
@click.option("--strict", is_flag=True)
@pass_session
def exchange(s: Session, key_k, key_m, k_agent_seed, k_issuer_seed, k_path, m_agent_seed, m_issuer_seed,
             m_path, fee, strict):
    proposal = propose_exchange(s.chain, _first_unspent(s, key_k), _first_unspent(s, key_m), None, fee)
    for side, agent_seed, issuer_seed, path_text in ((0, k_agent_seed, k_issuer_seed, k_path),
                                                      (1, m_agent_seed, m_issuer_seed, m_path)):
        path = KeyPath.parse(path_text)
        proposal.sign(side, "agent", derive_path(keypair_from_seed(agent_seed), path), s.chain)
        if issuer_seed:
            proposal.sign(side, "issuer", derive_path(keypair_from_seed(issuer_seed), path), s.chain)
    tx = build_exchange_tx(proposal, s.chain, strict)
    s.chain.broadcast(tx)
    s.save()
    s.report({"txid": tx.txid.hex()})


# -- chain ------------------------------------------------------------------------------


@cli.command("chain-tick")
@click.argument("blocks", type=int, default=1)
@pass_session
def chain_tick(s: Session, blocks):
    height = s.chain.tick(blocks)
    s.save()
    s.report({"height": height})


@cli.command("chain-dump")
@pass_session
def chain_dump(s: Session):
    if s.fmt == "canonical":
        click.echo(s.chain.dump().decode())
        return
    parts = [f"height: {s.chain.height}"]
    for h, block in enumerate(s.chain.blocks, start=1):
        for tx in block:
            parts.append(format_transaction(tx, f"== block {h} =="))
    click.echo("\n".join(parts))


@cli.command("scenario-run")
@click.argument("scenario_file", type=click.File("rb"))
@pass_session
def scenario_run(s: Session, scenario_file):
    state = run_scenario(scenario_file.read())
    if s.store_dir:
        state.repo.dump(s.store_dir / "contracts")
        state.invitations.dump(s.store_dir / "invitations")
    if s.chain_file:
        doc = state.chain.to_doc()
        doc["handles"] = {k: h.to_doc() for k, h in state.handles.items()}
        s.chain_file.parent.mkdir(parents=True, exist_ok=True)
        s.chain_file.write_bytes(canonical.dumps(doc))
    if s.fmt == "canonical":
        click.echo(canonical.dumps({"trace": state.trace}).decode())
    else:
        click.echo(state.text(), nl=False)


def main(argv: Optional[list[str]] = None) -> int:
    try:
        cli.main(args=argv, prog_name="contractengine", standalone_mode=False)
    except click.UsageError as exc:
        click.echo(f"error: UsageError: {exc.format_message()}", err=True)
        return 2
    except click.ClickException as exc:
        click.echo(f"error: {type(exc).__name__}: {exc.format_message()}", err=True)
        return 2
    except EngineError as exc:
        tag = getattr(exc, "cause", exc).tag
        click.echo(f"error: {tag}: {exc}", err=True)
        return 1
    except (ValueError, OSError) as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
