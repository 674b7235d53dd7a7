"""Balanced binary hash tree over 32-byte leaf digests.

Domain-separated node hashing (0x00 leaf / 0x01 inner); an odd node at
any level is paired with itself. Clients audit inclusion by recomputing
the root from the broadcast leaf list.
"""

from __future__ import annotations

import hashlib

__all__ = ["leaf_hash", "merkle_root"]

_EMPTY = hashlib.sha256(b"uavfed/merkle/empty").digest()


def leaf_hash(data: bytes) -> bytes:
    return hashlib.sha256(b"\x00" + data).digest()


def _node_hash(left: bytes, right: bytes) -> bytes:
    return hashlib.sha256(b"\x01" + left + right).digest()


def merkle_root(leaves: list[bytes]) -> bytes:
    """Root over already-hashed leaves; the empty tree has a fixed root."""
    if not leaves:
        return _EMPTY
    level = list(leaves)
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level), 2):
            left = level[i]
            right = level[i + 1] if i + 1 < len(level) else left
            nxt.append(_node_hash(left, right))
        level = nxt
    return level[0]
