"""Key hierarchies: derivation, homomorphism, common secrets."""
import hashlib
import json
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from contractengine.curve import SECP256K1, InvalidPoint, Point
from contractengine.keys import (
    BadKeyPath,
    DegenerateChildKey,
    KeyPath,
    Parallel,
    Sequential,
    common_secret,
    conditionality_tree,
    derive_child_private,
    derive_child_public,
    derive_path,
    derive_public_path,
    generator_value,
    iterated_hash,
    keypair_from_seed,
    master_keypair,
    public_from_private,
    symmetric_key_from_cs,
)
from oracles import ecref

N = SECP256K1.n
G = SECP256K1.generator
VECTORS = json.loads((Path(__file__).parent / "data" / "key_vectors.json").read_text())

hash32 = st.binary(min_size=32, max_size=32)
scalars = st.integers(min_value=1, max_value=N - 1)
steps = st.one_of(
    st.builds(Parallel, hash32, hash32),
    st.builds(Sequential, hash32, st.integers(min_value=2, max_value=5)),
)
paths = st.lists(steps, max_size=4).map(lambda s: KeyPath(tuple(s)))


def to_ref(pt: Point):
    return (pt.x, pt.y)


def test_generator_value_zero_inputs():
    # frozen from an independent sha256 + bignum computation
    expected = 0xF5A5FD42D16A20302798EF6ED309979B43003D2320D9F0E8EA9831A92759FB4B
    assert generator_value(bytes(32), bytes(32)) == expected


def test_generator_value_order_matters():
    m, l1, l2 = b"\x01" * 32, b"\x02" * 32, b"\x03" * 32
    assert generator_value(m, l1) != generator_value(l1, m)
    assert generator_value(m, l1) != generator_value(m, l2)


def test_iterated_hash():
    seed = b"\x07" * 32
    assert iterated_hash(seed, 1) == hashlib.sha256(seed).digest()
    assert iterated_hash(seed, 3) == hashlib.sha256(hashlib.sha256(hashlib.sha256(seed).digest()).digest()).digest()
    frozen = "2b32db6c2c0a6235fb1397e8225ea85e0f0e6e8c7b126d0016ccbde0e667151e"
    assert iterated_hash(bytes(32), 2).hex() == frozen
    with pytest.raises(ValueError):
        iterated_hash(seed, 0)


def test_derive_child_private_examples():
    assert derive_child_private(5, 7) == 12
    assert derive_child_private(N - 1, 2) == 1
    with pytest.raises(DegenerateChildKey):
        derive_child_private(N - 1, 1)


def test_public_from_private_small():
    assert public_from_private(1) == G
    assert public_from_private(2) == SECP256K1.add(G, G)
    assert to_ref(public_from_private(2)) == ecref.add(ecref.G, ecref.G)


@settings(max_examples=25, deadline=None)
@given(scalars)
def test_public_from_private_matches_double_and_add(k):
    assert to_ref(public_from_private(k)) == ecref.mul(k, ecref.G)


def test_derive_child_public_infinity():
    with pytest.raises(DegenerateChildKey):
        derive_child_public(G, N - 1)


@settings(max_examples=50, deadline=None)
@given(scalars, scalars)
def test_child_public_equals_public_of_child(sk, gv):
    if (sk + gv) % N == 0:
        return
    via_public = derive_child_public(public_from_private(sk), gv)
    via_private = public_from_private(derive_child_private(sk, gv))
    assert SECP256K1.encode(via_public) == SECP256K1.encode(via_private)


def test_derive_path_identity_and_single_step():
    master = keypair_from_seed("m")
    assert derive_path(master, KeyPath()).sk == master.sk
    m, lab = b"\x11" * 32, b"\x22" * 32
    child = derive_path(master, KeyPath((Parallel(m, lab),)))
    gv = int.from_bytes(hashlib.sha256(m + lab).digest(), "big") % N
    assert child.sk == (master.sk + gv) % N


def test_derive_path_parallel_then_sequential():
    master = keypair_from_seed("m")
    m, l1 = b"\x11" * 32, b"\x22" * 32
    child = derive_path(master, KeyPath((Parallel(m, l1), Sequential(m, 3))))
    h1 = hashlib.sha256(m).digest()
    h2 = hashlib.sha256(h1).digest()
    expected = (master.sk + int.from_bytes(hashlib.sha256(m + l1).digest(), "big")
                + int.from_bytes(h1, "big") + int.from_bytes(h2, "big")) % N
    assert child.sk == expected


@pytest.mark.parametrize("vector", VECTORS, ids=lambda v: f"{v['seed']}-{len(v['path'])}")
def test_oracle_vectors(vector):
    base = SECP256K1.decode(bytes.fromhex(vector["base"]))
    master = keypair_from_seed(vector["seed"], base)
    path = KeyPath.parse(vector["path"])
    kp = derive_path(master, path, base)
    assert f"{kp.sk:064x}" == vector["sk"]
    assert SECP256K1.encode(kp.pk).hex() == vector["pk"]
    assert SECP256K1.encode(derive_public_path(master.pk, path, base)).hex() == vector["pk"]
    peer = keypair_from_seed(vector["peer_seed"], base)
    cs = common_secret(kp.sk, peer.pk)
    assert SECP256K1.encode(cs.point).hex() == vector["common_secret"]
    assert symmetric_key_from_cs(cs).hex() == vector["symmetric_key"]


@settings(max_examples=30, deadline=None)
@given(scalars, paths)
def test_public_derivation_needs_no_private_key(sk, path):
    master = master_keypair(sk)
    # only the public key and the path are passed
    assert derive_public_path(master.pk, path) == derive_path(master, path).pk


@settings(max_examples=20, deadline=None)
@given(scalars, scalars, paths)
def test_common_secret_symmetry(a, b, path):
    ka, kb = derive_path(master_keypair(a), path), derive_path(master_keypair(b), path)
    assert common_secret(ka.sk, kb.pk).point == common_secret(kb.sk, ka.pk).point


def test_common_secret_identity_scalar():
    pk = keypair_from_seed("x").pk
    assert common_secret(1, pk).point == pk


def test_siblings_and_depths_distinct():
    master = keypair_from_seed("distinct")
    m = b"\x05" * 32
    sibs = {derive_path(master, KeyPath((Parallel(m, bytes([i]) * 32),))).pk for i in range(8)}
    depths = {derive_path(master, KeyPath((Sequential(m, d),))).pk for d in range(2, 10)}
    assert len(sibs) == 8 and len(depths) == 8


def test_path_text_round_trip():
    path = KeyPath((Parallel(b"\x01" * 32, b"\x02" * 32), Sequential(b"\x03" * 32, 4)))
    text = str(path)
    assert text == f"p:{'01' * 32}:{'02' * 32}/s:{'03' * 32}:4"
    assert KeyPath.parse(text) == path
    for bad in ("q:00:00", "s:" + "00" * 32 + ":1", "p:zz:00"):
        with pytest.raises(BadKeyPath):
            KeyPath.parse(bad)


def test_custom_base_point():
    base = public_from_private(12345)
    kp = keypair_from_seed("b", base)
    assert kp.pk == SECP256K1.mul(kp.sk, base)
    with pytest.raises(InvalidPoint):
        keypair_from_seed("b", Point(1, 1))


def test_tree_shape_and_secrets():
    tree = conditionality_tree(b"\x09" * 32, 3, 3, 2, 2)
    assert len(tree) == 29
    a, b = keypair_from_seed("issuer"), keypair_from_seed("agent")
    keys = set()
    for path in tree.values():
        ka, kb = derive_path(a, path), derive_path(b, path)
        cs = common_secret(ka.sk, kb.pk)
        assert cs.point == common_secret(kb.sk, ka.pk).point
        keys.add(symmetric_key_from_cs(cs))
    assert len(keys) == 29
