"""Hashing, keyed chunk encryption and Merkle commitments.

Everything here is a pure function of its inputs. SHA-256 is used
throughout and the tree shape is fixed so roots are reproducible
bit-for-bit:

    leaf  = H(0x00 || data)
    node  = H(0x01 || left || right)

An odd level is padded by pairing its last node with itself.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

WORD_SIZE = 32
ZERO_WORD = bytes(WORD_SIZE)

_LEAF = b"\x00"
_NODE = b"\x01"


class EmptyLeaves(ValueError):
    pass


class IndexOutOfRange(IndexError):
    pass


def hash(data: bytes) -> bytes:  # noqa: A001 - module-level name is part of the API
    return hashlib.sha256(data).digest()


def xor(a: bytes, b: bytes) -> bytes:
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} != {len(b)}")
    return (int.from_bytes(a, "big") ^ int.from_bytes(b, "big")).to_bytes(len(a), "big")


def keystream(key: bytes, index: int) -> bytes:
    """One 32-byte keystream block: H(key || index as u64 big-endian)."""
    if index < 0:
        raise ValueError("keystream index must be non-negative")
    return hashlib.sha256(key + index.to_bytes(8, "big")).digest()


def _pad(keyblock: bytes, clear_mask: bytes | None) -> bytes:
    if clear_mask is None:
        return keyblock
    # bits set in the mask stay in the clear
    k = int.from_bytes(keyblock, "big")
    m = int.from_bytes(clear_mask, "big")
    return (k & ~m & ((1 << 256) - 1)).to_bytes(WORD_SIZE, "big")


def encrypt_chunk(key: bytes, index: int, chunk: bytes, clear_mask: bytes | None = None) -> bytes:
    """XOR ``chunk`` with the keystream block at ``index``.

    ``clear_mask`` marks bytes that are left unencrypted (selective
    encryption of tabular columns); ``None`` encrypts the whole word.
    """
    if len(chunk) != WORD_SIZE:
        raise ValueError(f"chunk must be {WORD_SIZE} bytes, got {len(chunk)}")
    return xor(chunk, _pad(keystream(key, index), clear_mask))


# XOR stream: decryption is the same operation
decrypt_chunk = encrypt_chunk


def leaf_hash(leaf: bytes) -> bytes:
    return hash(_LEAF + leaf)


def node_hash(left: bytes, right: bytes) -> bytes:
    return hash(_NODE + left + right)


def _next_level(level: list[bytes]) -> list[bytes]:
    if len(level) % 2:
        level = level + [level[-1]]
    return [node_hash(level[i], level[i + 1]) for i in range(0, len(level), 2)]


def merkle_levels(leaves: Sequence[bytes]) -> list[list[bytes]]:
    """All tree levels, leaf hashes first and the root level last."""
    if not leaves:
        raise EmptyLeaves("cannot commit to an empty leaf list")
    levels = [[leaf_hash(x) for x in leaves]]
    while len(levels[-1]) > 1:
        levels.append(_next_level(levels[-1]))
    return levels


def merkle_root(leaves: Sequence[bytes]) -> bytes:
    return merkle_levels(leaves)[-1][0]


def proof_length(leaf_count: int) -> int:
    """ceil(log2(leaf_count)); zero for a single leaf."""
    return (leaf_count - 1).bit_length()


@dataclass(frozen=True)
class MerkleProof:
    leaf_index: int
    # (sibling digest, side) where side 1 means the sibling sits on the left
    path: tuple[tuple[bytes, int], ...]

    def to_json(self) -> dict:
        return {
            "leaf_index": self.leaf_index,
            "path": [[sib.hex(), side] for sib, side in self.path],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MerkleProof":
        return cls(
            leaf_index=int(obj["leaf_index"]),
            path=tuple((bytes.fromhex(s), int(side)) for s, side in obj["path"]),
        )


def prove_from_levels(levels: list[list[bytes]], index: int) -> MerkleProof:
    if not 0 <= index < len(levels[0]):
        raise IndexOutOfRange(f"leaf index {index} not in [0, {len(levels[0])})")
    path = []
    i = index
    for level in levels[:-1]:
        if i % 2:
            path.append((level[i - 1], 1))
        else:
            sib = level[i + 1] if i + 1 < len(level) else level[i]
            path.append((sib, 0))
        i //= 2
    return MerkleProof(index, tuple(path))


def merkle_prove(leaves: Sequence[bytes], index: int) -> MerkleProof:
    if not leaves:
        raise EmptyLeaves("cannot prove against an empty leaf list")
    return prove_from_levels(merkle_levels(leaves), index)


def merkle_verify(root: bytes, leaf: bytes, proof: MerkleProof, leaf_count: int | None = None) -> bool:
    """Check an inclusion proof.

    Side bits must agree with the bits of ``leaf_index``. When the
    tree size is known, the path length and index range are checked too.
    """
    if proof.leaf_index < 0:
        return False
    if leaf_count is not None:
        if not 0 <= proof.leaf_index < leaf_count:
            return False
        if len(proof.path) != proof_length(leaf_count):
            return False
    if proof.leaf_index >> len(proof.path):
        return False
    acc = leaf_hash(leaf)
    i = proof.leaf_index
    for sibling, side in proof.path:
        if len(sibling) != 32 or side != (i & 1):
            return False
        acc = node_hash(sibling, acc) if side else node_hash(acc, sibling)
        i >>= 1
    return acc == root
