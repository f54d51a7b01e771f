"""Invitations, matching and atomic exchange."""
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from contractengine.agents import Agent
from contractengine.dht import DhtStore
from contractengine.exchange import (
    BadSignature,
    EntityDescriptor,
    InsufficientFunding,
    InvalidInvitation,
    InvitationMetadata,
    InvitationRecord,
    InvitationSpent,
    QuantityOutOfRange,
    UnpublishedInvitation,
    build_exchange_tx,
    entity_channel_key,
    make_invitation_script,
    match_invitations,
    propose_exchange,
    publish_invitation,
)
from contractengine.keys import KeyPath, Parallel, derive_path, keypair_from_seed, master_keypair
from contractengine.ledger import Chain, DoubleSpend, build_redeem_script
from contractengine.predicates import Comparison
from contractengine.tokens import TokenMetadata, make_token
from oracles import matcher
from population import publish_population

EQUITY, BONDS = b"\xe1" * 32, b"\xb0" * 32
CLIENT_C, AGENT_C = keypair_from_seed("client C"), keypair_from_seed("agent C")
CLIENT_D, AGENT_D = keypair_from_seed("client D"), keypair_from_seed("agent D")
PATH_K = KeyPath((Parallel(b"\x11" * 32, b"\xc1" * 32),))
PATH_M = KeyPath((Parallel(b"\x22" * 32, b"\xd1" * 32),))


def pension(offer_ref, want_ref, units=5, lo=None, hi=None, conditions=(), scope=None):
    token = make_token(100, units, "1%")
    offered = EntityDescriptor("pension", token, offer_ref)
    wanted = EntityDescriptor("pension", token, want_ref, lo, hi)
    return InvitationMetadata(offered, wanted, conditions, scope)


@pytest.fixture
def market():
    chain, store = Chain(), DhtStore(name="invitations")
    payer_c = Agent.from_seed("agent_c", "agent C", budget=20000)
    payer_d = Agent.from_seed("agent_d", "agent D", budget=20000)
    sk = make_invitation_script(CLIENT_C, AGENT_C, PATH_K, pension(EQUITY, BONDS, conditions=(Comparison("age", ">=", 60),)))
    sm = make_invitation_script(CLIENT_D, AGENT_D, PATH_M, pension(BONDS, EQUITY, conditions=(Comparison("age", "<", 70),)))
    rk = publish_invitation(store, chain, sk, payer_c, 1000)
    rm = publish_invitation(store, chain, sm, payer_d, 1000)
    return chain, store, rk, rm


def sign_all(proposal, chain, k_issuer=True, m_issuer=True):
    proposal.sign(0, "agent", derive_path(AGENT_C, PATH_K), chain)
    if k_issuer:
        proposal.sign(0, "issuer", derive_path(CLIENT_C, PATH_K), chain)
    proposal.sign(1, "agent", derive_path(AGENT_D, PATH_M), chain)
    if m_issuer:
        proposal.sign(1, "issuer", derive_path(CLIENT_D, PATH_M), chain)


def test_invitation_script_keys():
    meta = pension(EQUITY, BONDS)
    a = make_invitation_script(CLIENT_C, AGENT_C, PATH_K, meta)
    b = make_invitation_script(CLIENT_C, AGENT_C, PATH_M, meta)
    assert a.serialize() == make_invitation_script(CLIENT_C, AGENT_C, PATH_K, meta).serialize()
    assert {a.issuer_pk, a.agent_pk}.isdisjoint({b.issuer_pk, b.agent_pk})
    assert a.issuer_pk != CLIENT_C.pk and a.agent_pk != AGENT_C.pk


def test_offer_must_differ_from_want():
    with pytest.raises(InvalidInvitation):
        pension(EQUITY, EQUITY)


def test_publish(market):
    chain, store, rk, _ = market
    assert store.get(rk.dht_key) == rk.script.serialize()
    assert chain.utxo_status(*rk.outpoint).state == "Unspent"
    assert rk.dht_key in rk.script.redeem().metadata_blocks
    payer = Agent.from_seed("again", "again", budget=5000)
    again = publish_invitation(store, chain, rk.script, payer, 1000)
    assert again.dht_key == rk.dht_key and again.invitation_txid != rk.invitation_txid
    with pytest.raises(InsufficientFunding):
        publish_invitation(store, chain, rk.script, Agent.from_seed("poor", "poor"), 1000)


def test_complementary_match(market):
    _, store, rk, rm = market
    assert [r.outpoint for r in match_invitations(store, rk)] == [rm.outpoint]
    assert [r.outpoint for r in match_invitations(store, rm)] == [rk.outpoint]


def test_disjoint_quantities_do_not_match():
    chain, store = Chain(), DhtStore()
    payer = Agent.from_seed("p", "p", budget=10**6)
    a = publish_invitation(store, chain, make_invitation_script(CLIENT_C, AGENT_C, PATH_K,
                           pension(EQUITY, BONDS, units=5, lo=8, hi=9)), payer, 1000)
    publish_invitation(store, chain, make_invitation_script(CLIENT_D, AGENT_D, PATH_M,
                       pension(BONDS, EQUITY, units=5)), payer, 1000)
    assert match_invitations(store, a) == []


def test_conditions_and_scope_block_matches():
    chain, store = Chain(), DhtStore()
    payer = Agent.from_seed("p", "p", budget=10**6)
    a = publish_invitation(store, chain, make_invitation_script(CLIENT_C, AGENT_C, PATH_K,
                           pension(EQUITY, BONDS, conditions=(Comparison("age", ">", 65),))), payer, 1000)
    publish_invitation(store, chain, make_invitation_script(CLIENT_D, AGENT_D, PATH_M,
                       pension(BONDS, EQUITY, conditions=(Comparison("age", "<", 60),))), payer, 1000)
    publish_invitation(store, chain, make_invitation_script(CLIENT_D, AGENT_D, PATH_K,
                       pension(BONDS, EQUITY, scope="us")), payer, 1000)
    b = publish_invitation(store, chain, make_invitation_script(CLIENT_C, AGENT_C, PATH_M,
                           pension(EQUITY, BONDS, conditions=(Comparison("age", ">", 65),), scope="eu")), payer, 1000)
    assert len(match_invitations(store, a)) == 1
    assert match_invitations(store, b) == []


def test_ranking_by_shared_conditions():
    chain, store = Chain(), DhtStore()
    payer = Agent.from_seed("p", "p", budget=10**6)
    shared = Comparison("region", "=", "eu")
    a = publish_invitation(store, chain, make_invitation_script(CLIENT_C, AGENT_C, PATH_K,
                           pension(EQUITY, BONDS, conditions=(shared,))), payer, 1000)
    plain = publish_invitation(store, chain, make_invitation_script(CLIENT_D, AGENT_D, PATH_M,
                               pension(BONDS, EQUITY)), payer, 1000)
    ranked = publish_invitation(store, chain, make_invitation_script(CLIENT_D, AGENT_D, PATH_K,
                                pension(BONDS, EQUITY, conditions=(shared,))), payer, 1000)
    assert [r.outpoint for r in match_invitations(store, a)] == [ranked.outpoint, plain.outpoint]


def test_unpublished():
    rec = InvitationRecord(make_invitation_script(CLIENT_C, AGENT_C, PATH_K, pension(EQUITY, BONDS)),
                           b"\x00" * 32, b"\x00" * 32)
    with pytest.raises(UnpublishedInvitation):
        match_invitations(DhtStore(), rec)


def test_population_against_oracle():
    _, store, _, recs = publish_population(seed=7, size=100)
    expected = matcher.candidates(dict(store.items()))
    for rec in recs:
        assert {r.dht_key for r in match_invitations(store, rec)} == expected[rec.dht_key]


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 40))
def test_matching_symmetric(seed, size):
    _, store, _, recs = publish_population(seed, size)
    found = {r.dht_key: {c.dht_key for c in match_invitations(store, r)} for r in recs}
    for k, cands in found.items():
        assert all(k in found[c] for c in cands)


# -- exchange ------------------------------------------------------------------------


def test_exchange(market):
    chain, _, rk, rm = market
    proposal = propose_exchange(chain, rk, rm, fee=200)
    sign_all(proposal, chain)
    tx = build_exchange_tx(proposal, chain)
    txid = chain.broadcast(tx)
    assert chain.utxo_status(*rk.outpoint).spent_by == txid
    assert chain.utxo_status(*rm.outpoint).spent_by == txid
    assert [o.value for o in tx.outputs] == [900, 900]
    assert all(chain.utxo_status(txid, i).state == "Unspent" for i in (0, 1))
    # the first output hands k's entity to m's keys, the second the reverse
    rs = proposal.record_m.script
    from_k = TokenMetadata.from_block(_redeem_blocks(proposal, 0)[0])
    assert from_k.transfer_units == rk.script.metadata.offered.quantity.transfer_units
    assert _redeem_blocks(proposal, 0)[1] == EQUITY and _redeem_blocks(proposal, 1)[1] == BONDS
    assert rs.agent_pk in _redeem_keys(proposal, 0)
    with pytest.raises(InvitationSpent):
        propose_exchange(chain, rk, rm)


def _redeem(proposal, i):
    outputs = proposal.tx.outputs
    to = (proposal.record_m, proposal.record_k)[i].script
    offered = (proposal.record_k, proposal.record_m)[i].script.metadata.offered
    token = make_token(offered.quantity.total_units, offered.quantity.transfer_units, offered.quantity.pegging_rate)
    rs = build_redeem_script(2, [to.agent_pk, to.issuer_pk], [token.to_block(), offered.contract_ref])
    assert rs.script_pubkey() == outputs[i].script_pubkey
    return rs


def _redeem_blocks(proposal, i):
    return _redeem(proposal, i).metadata_blocks


def _redeem_keys(proposal, i):
    return _redeem(proposal, i).keys


def test_missing_side_m_issuer(market):
    chain, _, rk, rm = market
    proposal = propose_exchange(chain, rk, rm)
    sign_all(proposal, chain, m_issuer=False)
    with pytest.raises(BadSignature):
        build_exchange_tx(proposal, chain)


def test_side_k_issuer_optional_unless_strict(market):
    chain, _, rk, rm = market
    proposal = propose_exchange(chain, rk, rm)
    sign_all(proposal, chain, k_issuer=False)
    build_exchange_tx(proposal, chain)
    with pytest.raises(BadSignature):
        build_exchange_tx(proposal, chain, strict=True)


def test_wrong_key_rejected(market):
    chain, _, rk, rm = market
    proposal = propose_exchange(chain, rk, rm)
    with pytest.raises(BadSignature):
        proposal.sign(0, "agent", AGENT_C, chain)


def test_quantity_range(market):
    chain, _, rk, rm = market
    with pytest.raises(QuantityOutOfRange):
        propose_exchange(chain, rk, rm, quantities=(Fraction(6), Fraction(5)))


def test_competing_exchanges_one_winner(market):
    chain, store, rk, rm = market
    payer = Agent.from_seed("third", "third", budget=10**5)
    third = publish_invitation(store, chain, make_invitation_script(CLIENT_D, AGENT_D, PATH_M,
                               pension(BONDS, EQUITY, units=5, conditions=(Comparison("age", "=", 65),))), payer, 1000)
    p1 = propose_exchange(chain, rk, rm)
    sign_all(p1, chain)
    p2 = propose_exchange(chain, rk, third)
    sign_all(p2, chain)
    t1, t2 = build_exchange_tx(p1, chain), build_exchange_tx(p2, chain)
    ids, rejected = chain.broadcast_batch([t2, t1])
    assert ids == [t2.txid] and isinstance(rejected[0][1], DoubleSpend)
    assert chain.utxo_status(*rm.outpoint).state == "Unspent"


def test_entity_channel_key():
    ik, ak = derive_path(CLIENT_C, PATH_K), derive_path(AGENT_C, PATH_K)
    key = entity_channel_key(ik, ak.pk)
    assert key == entity_channel_key(ak, ik.pk) and len(key) == 32
    other = entity_channel_key(derive_path(CLIENT_C, PATH_M), derive_path(AGENT_C, PATH_M).pk)
    assert other != key
    one = keypair_from_seed("x")
    unit = master_keypair(1)
    assert entity_channel_key(unit, one.pk) == entity_channel_key(one, unit.pk)
