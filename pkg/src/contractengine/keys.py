"""Hierarchical key pairs and common secrets.

A child key is its parent plus a hash-derived *generator value*; because
scalar multiplication distributes over addition, anyone holding the parent
public key and the (public) seed material computes the child public key
without the private key.  Two parties deriving along the same path produce
the same ECDH common secret at every node.

Path steps come in two kinds:

* ``Parallel(seed, label)`` adds ``SHA256(seed || label)``; siblings that
  may run concurrently use the same seed with distinct labels.
* ``Sequential(seed, depth)`` walks a chain: depth ``d`` (2 <= d) adds
  ``SHA256^(d-1)(seed)``, so the key at depth ``d`` is the sum over every
  depth from 2 up to ``d``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Union

from .curve import SECP256K1, Curve, Point
from .errors import EngineError


class KeyDerivationError(EngineError):
    pass


class DegenerateGenerator(KeyDerivationError):
    """A hash reduced to zero modulo the group order."""


class DegenerateChildKey(KeyDerivationError):
    """A derived private key is zero, or a derived public key is infinity."""


class DegenerateSecret(KeyDerivationError):
    """A common secret came out as the point at infinity."""


class InvalidScalar(KeyDerivationError):
    pass


class BadKeyPath(KeyDerivationError):
    pass


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def _hash32(value: bytes, what: str) -> bytes:
    if not isinstance(value, (bytes, bytearray)) or len(value) != 32:
        raise BadKeyPath(f"{what} must be exactly 32 bytes")
    return bytes(value)


def check_scalar(value: int, curve: Curve = SECP256K1) -> int:
    if not isinstance(value, int) or not 0 < value < curve.n:
        raise InvalidScalar("scalar must satisfy 0 < value < n")
    return value


# -- paths ------------------------------------------------------------------


@dataclass(frozen=True)
class Parallel:
    seed: bytes
    label: bytes

    def __post_init__(self):
        object.__setattr__(self, "seed", _hash32(self.seed, "seed"))
        object.__setattr__(self, "label", _hash32(self.label, "label"))

    def __str__(self) -> str:
        return f"p:{self.seed.hex()}:{self.label.hex()}"


@dataclass(frozen=True)
class Sequential:
    seed: bytes
    depth: int

    def __post_init__(self):
        object.__setattr__(self, "seed", _hash32(self.seed, "seed"))
        if isinstance(self.depth, bool) or not isinstance(self.depth, int) or self.depth < 2:
            raise BadKeyPath("sequential depth must be an integer >= 2")

    def __str__(self) -> str:
        return f"s:{self.seed.hex()}:{self.depth}"


Step = Union[Parallel, Sequential]


@dataclass(frozen=True)
class KeyPath:
    steps: tuple[Step, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))

    def __truediv__(self, step: Step) -> "KeyPath":
        return KeyPath(self.steps + (step,))

    def __len__(self) -> int:
        return len(self.steps)

    def __iter__(self) -> Iterator[Step]:
        return iter(self.steps)

    def __str__(self) -> str:
        return "/".join(str(s) for s in self.steps)

    @classmethod
    def parse(cls, text: str) -> "KeyPath":
        text = text.strip()
        if text in ("", "m"):
            return cls()
        steps: list[Step] = []
        for part in text.split("/"):
            fields = part.split(":")
            try:
                if fields[0] == "p" and len(fields) == 3:
                    steps.append(Parallel(bytes.fromhex(fields[1]), bytes.fromhex(fields[2])))
                elif fields[0] == "s" and len(fields) == 3:
                    steps.append(Sequential(bytes.fromhex(fields[1]), int(fields[2])))
                else:
                    raise BadKeyPath(f"unrecognised path step {part!r}")
            except ValueError as exc:
                raise BadKeyPath(f"bad path step {part!r}: {exc}") from exc
        return cls(tuple(steps))


@dataclass(frozen=True)
class KeyPair:
    sk: int
    pk: Point
    path: KeyPath = field(default_factory=KeyPath)


@dataclass(frozen=True)
class CommonSecret:
    point: Point
    path: KeyPath = field(default_factory=KeyPath)


# -- primitives ----------------------------------------------------------------


def _hash_to_scalar(digest: bytes, curve: Curve) -> int:
    value = int.from_bytes(digest, "big") % curve.n
    if value == 0:
        raise DegenerateGenerator("hash reduced to zero modulo the group order")
    return value


def generator_value(seed: bytes, label: bytes, curve: Curve = SECP256K1) -> int:
    """``SHA256(seed || label)`` as a scalar."""
    data = _hash32(seed, "seed") + _hash32(label, "label")
    return _hash_to_scalar(sha256(data), curve)


def iterated_hash(seed: bytes, r: int) -> bytes:
    """SHA-256 applied ``r`` times to ``seed``."""
    if r < 1:
        raise ValueError("iteration count must be >= 1")
    out = seed
    for _ in range(r):
        out = sha256(out)
    return out


def derive_child_private(parent: int, gv: int, curve: Curve = SECP256K1) -> int:
    child = (parent + gv) % curve.n
    if child == 0:
        raise DegenerateChildKey("child private key is zero")
    return child


def public_from_private(sk: int, base: Optional[Point] = None, curve: Curve = SECP256K1) -> Point:
    base = curve.validate(base or curve.generator)
    pt = curve.mul(check_scalar(sk, curve), base)
    assert pt is not None  # prime-order group, 0 < sk < n
    return pt


def derive_child_public(parent_pk: Point, gv: int, base: Optional[Point] = None,
                        curve: Curve = SECP256K1) -> Point:
    base = curve.validate(base or curve.generator)
    child = curve.add(curve.validate(parent_pk), curve.mul(gv, base))
    if child is None:
        raise DegenerateChildKey("child public key is the point at infinity")
    return child


def step_generator_values(step: Step, curve: Curve = SECP256K1) -> list[int]:
    """Generator values a single path step adds, in application order."""
    if isinstance(step, Parallel):
        return [generator_value(step.seed, step.label, curve)]
    return [_hash_to_scalar(iterated_hash(step.seed, d - 1), curve) for d in range(2, step.depth + 1)]


def master_keypair(sk: int, base: Optional[Point] = None, curve: Curve = SECP256K1) -> KeyPair:
    return KeyPair(check_scalar(sk, curve), public_from_private(sk, base, curve))


def keypair_from_seed(seed: bytes | str, base: Optional[Point] = None,
                      curve: Curve = SECP256K1) -> KeyPair:
    """Deterministic master key pair from caller-supplied seed material."""
    if isinstance(seed, str):
        seed = seed.encode("utf-8")
    sk = int.from_bytes(sha256(seed), "big") % curve.n
    return master_keypair(sk or 1, base, curve)


def derive_path(master: KeyPair, path: KeyPath, base: Optional[Point] = None,
                curve: Curve = SECP256K1) -> KeyPair:
    """Derive the private side along ``path`` and complete the pair."""
    sk = master.sk
    for step in path:
        for gv in step_generator_values(step, curve):
            sk = derive_child_private(sk, gv, curve)
    return KeyPair(sk, public_from_private(sk, base, curve), KeyPath(master.path.steps + path.steps))


def derive_public_path(master_pk: Point, path: KeyPath, base: Optional[Point] = None,
                       curve: Curve = SECP256K1) -> Point:
    """Public-only derivation; needs no private key at any level."""
    pk = master_pk
    for step in path:
        for gv in step_generator_values(step, curve):
            pk = derive_child_public(pk, gv, base, curve)
    return pk


def common_secret(own_sk: int, other_pk: Point, path: KeyPath = KeyPath(),
                  curve: Curve = SECP256K1) -> CommonSecret:
    point = curve.mul(check_scalar(own_sk, curve), curve.validate(other_pk))
    if point is None:
        raise DegenerateSecret("common secret is the point at infinity")
    return CommonSecret(point, path)


def symmetric_key_from_cs(cs: CommonSecret, curve: Curve = SECP256K1) -> bytes:
    return sha256(curve.encode(cs.point))


# -- tree construction ---------------------------------------------------------


def _coord_hash(tag: bytes, root: bytes, coord: tuple[int, ...]) -> bytes:
    return sha256(tag + root + ",".join(map(str, coord)).encode())


def conditionality_tree(
    master_seed: bytes,
    n: int,
    i: int,
    k: int,
    p: int,
    label_for: Optional[Callable[[tuple[int, ...]], bytes]] = None,
    submaster_seed_for: Optional[Callable[[tuple[int, ...]], bytes]] = None,
) -> dict[tuple[int, ...], KeyPath]:
    """Paths for every node of a hierarchical conditionality structure.

    Coordinates follow the subcontract numbering:

    * ``(r, 1)`` for ``1 <= r <= n``: parallel subcontracts off the master seed;
    * ``(r, c)`` for ``2 <= c <= i``: the sequential chain continuing each of them;
    * ``(r, c, s, 1)`` for ``1 <= s <= k``: parallel sub-subcontracts under
      every subcontract, seeded by that subcontract's sub-master seed;
    * ``(n, i, k, c)`` for ``2 <= c <= p``: a sequential sub-subcontract chain
      under the last branch.

    The master node is ``()`` with the empty path.  For ``(3, 3, 2, 2)`` the
    tree has 29 nodes including the master.
    """
    label_for = label_for or (lambda coord: _coord_hash(b"label", master_seed, coord))
    submaster_seed_for = submaster_seed_for or (lambda coord: _coord_hash(b"submaster", master_seed, coord))
    tree: dict[tuple[int, ...], KeyPath] = {(): KeyPath()}
    for r in range(1, n + 1):
        first = KeyPath((Parallel(master_seed, label_for((r, 1))),))
        tree[(r, 1)] = first
        for c in range(2, i + 1):
            tree[(r, c)] = first / Sequential(master_seed, c)
    for (r, c), parent in [(coord, path) for coord, path in tree.items() if len(coord) == 2]:
        sm = submaster_seed_for((r, c))
        for s in range(1, k + 1):
            tree[(r, c, s, 1)] = parent / Parallel(sm, label_for((r, c, s, 1)))
    if n and i and k:
        head = tree[(n, i, k, 1)]
        sm = submaster_seed_for((n, i))
        for c in range(2, p + 1):
            tree[(n, i, k, c)] = head / Sequential(sm, c)
    return tree
