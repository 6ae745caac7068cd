"""Fixed-size chunking and a single-level Merkle DAG over the chunks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Tuple

from .ident import Cid, CidVersion, make_cid, varint_encode

CHUNK_SIZE = 262_144


@dataclass(frozen=True)
class Block:
    data: bytes
    cid: Cid


@dataclass(frozen=True)
class DagNode:
    links: Tuple[Cid, ...]
    cid: Cid

    def serialize(self) -> bytes:
        return serialize_links(self.links)


def chunk(content: bytes, size: int = CHUNK_SIZE) -> List[Block]:
    content = bytes(content)
    if not content:
        return [Block(b"", make_cid(b"", CidVersion.V0))]
    return [
        Block(content[i:i + size], make_cid(content[i:i + size], CidVersion.V0))
        for i in range(0, len(content), size)
    ]


def serialize_links(links: Iterable[Cid]) -> bytes:
    out = bytearray()
    for link in links:
        raw = link.to_bytes()
        out += varint_encode(len(raw))
        out += raw
    return bytes(out)


def build_root(blocks: List[Block]) -> DagNode:
    if not blocks:
        raise ValueError("cannot build a DAG root from zero blocks")
    links = tuple(b.cid for b in blocks)
    return DagNode(links, make_cid(serialize_links(links), CidVersion.V0))


def root_cid(content: bytes) -> Cid:
    return build_root(chunk(content)).cid


def dedup_count(contents: Iterable[bytes]) -> Tuple[int, int]:
    """Return ``(total blocks, distinct blocks by cid)`` across ``contents``."""
    total = 0
    seen = set()
    for content in contents:
        for block in chunk(content):
            total += 1
            seen.add(block.cid.multihash.digest)
    return total, len(seen)
