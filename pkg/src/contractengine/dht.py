"""Content-addressed repositories (contracts and exchange invitations).

Bodies are immutable and stored under ``SHA256(body)``; each key may carry an
append-only list of side lines that live beside the body and never change
its key.  Keys are routed to one of ``nodes`` virtual nodes by their first
byte, simulating a partitioned key space in a single process.
"""
from __future__ import annotations

import hashlib
import os
import threading
from pathlib import Path
from typing import Any, Callable, Optional

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from . import canonical
from .errors import EngineError


class UnknownKey(EngineError):
    pass


class AccessDenied(EngineError):
    pass


class DhtStore:
    def __init__(self, nodes: int = 4, name: str = "dht"):
        if nodes < 1:
            raise ValueError("virtual node count must be positive")
        self.name = name
        self.nodes = nodes
        self._buckets: list[dict[bytes, bytes]] = [{} for _ in range(nodes)]
        self._lines: dict[bytes, list[Any]] = {}
        self._lock = threading.Lock()

    def route(self, key: bytes) -> int:
        return key[0] % self.nodes

    def put(self, body: bytes) -> bytes:
        key = hashlib.sha256(body).digest()
        with self._lock:
            self._buckets[self.route(key)].setdefault(key, bytes(body))
        return key

    def get(self, key: bytes) -> Optional[bytes]:
        return self._buckets[self.route(key)].get(key)

    def __contains__(self, key: bytes) -> bool:
        return self.get(key) is not None

    def __len__(self) -> int:
        return sum(len(b) for b in self._buckets)

    def require(self, key: bytes) -> bytes:
        body = self.get(key)
        if body is None:
            raise UnknownKey(f"{self.name}: no entry {key.hex()}")
        return body

    def items(self) -> list[tuple[bytes, bytes]]:
        return sorted(kv for bucket in self._buckets for kv in bucket.items())

    def scan(self, predicate: Callable[[bytes], bool]) -> list[tuple[bytes, bytes]]:
        return [(k, body) for k, body in self.items() if predicate(body)]

    # -- side lines ------------------------------------------------------------

    def append_line(self, key: bytes, line: Any) -> int:
        self.require(key)
        canonical.dumps(line)  # reject values with no canonical form up front
        with self._lock:
            lines = self._lines.setdefault(key, [])
            lines.append(line)
            return len(lines) - 1

    def lines(self, key: bytes) -> tuple:
        self.require(key)
        return tuple(self._lines.get(key, ()))

    def line(self, key: bytes, index: int) -> Any:
        lines = self.lines(key)
        if not 0 <= index < len(lines):
            raise UnknownKey(f"{self.name}: entry {key.hex()} has no line {index}")
        return lines[index]

    # -- sealed bodies -----------------------------------------------------------

    def put_sealed(self, body: bytes, access_key: bytes) -> bytes:
        """Store ``body`` encrypted under a 32-byte symmetric access key."""
        return self.put(seal(body, access_key))

    def get_sealed(self, key: bytes, access_key: bytes) -> bytes:
        return unseal(self.require(key), access_key)

    # -- dump / load -------------------------------------------------------------

    def dump(self, directory: str | os.PathLike) -> None:
        """Write one file per entry named by hex key, plus ``<key>.lines``."""
        path = Path(directory)
        path.mkdir(parents=True, exist_ok=True)
        for key, body in self.items():
            (path / key.hex()).write_bytes(body)
            lines = self._lines.get(key)
            if lines:
                (path / f"{key.hex()}.lines").write_bytes(b"".join(canonical.dumps(x) + b"\n" for x in lines))
        (path / "NODES").write_text(f"{self.nodes}\n")

    @classmethod
    def load(cls, directory: str | os.PathLike, name: str = "dht") -> "DhtStore":
        path = Path(directory)
        nodes_file = path / "NODES"
        store = cls(int(nodes_file.read_text()) if nodes_file.exists() else 4, name)
        if not path.exists():
            return store
        for entry in sorted(path.iterdir()):
            if len(entry.name) == 64 and entry.is_file():
                key = store.put(entry.read_bytes())
                if key.hex() != entry.name:
                    raise EngineError(f"corrupt entry {entry.name}: content hash mismatch")
        for entry in sorted(path.glob("*.lines")):
            key = bytes.fromhex(entry.name[:64])
            for raw in entry.read_bytes().splitlines():
                store.append_line(key, canonical.loads(raw))
        return store


def seal(body: bytes, access_key: bytes) -> bytes:
    # nonce is derived from key and body so identical bodies seal identically
    nonce = hashlib.sha256(access_key + body).digest()[:12]
    return nonce + AESGCM(access_key).encrypt(nonce, body, None)


def unseal(blob: bytes, access_key: bytes) -> bytes:
    try:
        return AESGCM(access_key).decrypt(blob[:12], blob[12:], None)
    except InvalidTag as exc:
        raise AccessDenied("access key does not open this entry") from exc
