import hashlib
import random

import pytest

from kadmesh.dag import CHUNK_SIZE, build_root, chunk, dedup_count, root_cid
from kadmesh.ident import make_cid


def test_chunk_boundaries():
    assert len(chunk(bytes(CHUNK_SIZE))) == 1
    blocks = chunk(bytes(CHUNK_SIZE + 1))
    assert [len(b.data) for b in blocks] == [CHUNK_SIZE, 1]
    assert len(chunk(bytes(1 << 20))) == 4


def test_empty_content_single_block():
    blocks = chunk(b"")
    assert len(blocks) == 1 and blocks[0].data == b""


def test_block_cid_matches_data():
    for block in chunk(random.Random(0).randbytes(600_000)):
        assert block.cid == make_cid(block.data)


def test_reassembly_up_to_8mib():
    rng = random.Random(1)
    for size in (0, 1, CHUNK_SIZE - 1, CHUNK_SIZE, 8 << 20, rng.randrange(8 << 20)):
        content = rng.randbytes(size)
        assert b"".join(b.data for b in chunk(content)) == content


def test_build_root_single_and_deterministic():
    blocks = chunk(b"abc")
    root = build_root(blocks)
    assert root.links == (blocks[0].cid,)
    assert build_root(chunk(b"abc")).cid == root.cid


def test_build_root_serialization():
    blocks = chunk(bytes(CHUNK_SIZE + 5))
    root = build_root(blocks)
    # varint(34) = 0x22, then 0x12 0x20 ‖ digest, per link
    want = b"".join(b"\x22\x12\x20" + hashlib.sha256(b.data).digest() for b in blocks)
    assert root.serialize() == want
    assert root.cid == make_cid(want)


def test_build_root_rejects_empty():
    with pytest.raises(ValueError):
        build_root([])


def test_flip_changes_root():
    content = bytearray(random.Random(2).randbytes(700_000))
    before = root_cid(bytes(content))
    content[500_000] ^= 0x01
    assert root_cid(bytes(content)) != before


def test_single_bit_flips_100():
    rng = random.Random(3)
    content = rng.randbytes(rng.randrange(1, 1 << 20))
    base = root_cid(content)
    for _ in range(100):
        bit = rng.randrange(len(content) * 8)
        flipped = bytearray(content)
        flipped[bit // 8] ^= 1 << (bit % 8)
        assert root_cid(bytes(flipped)) != base


def test_dedup_identical_and_disjoint():
    rng = random.Random(4)
    a = rng.randbytes(3 * CHUNK_SIZE)
    b = rng.randbytes(2 * CHUNK_SIZE)
    assert dedup_count([a, a]) == (6, 3)
    assert dedup_count([a, b]) == (5, 5)


def test_dedup_last_chunk_changed():
    rng = random.Random(5)
    a = rng.randbytes(3 * CHUNK_SIZE + 100)
    b = bytearray(a)
    b[-1] ^= 0xFF
    # oracle: distinct chunk hashes computed directly
    hashes = {hashlib.sha256(x[i:i + CHUNK_SIZE]).digest()
              for x in (a, bytes(b)) for i in range(0, len(x), CHUNK_SIZE)}
    total, unique = dedup_count([a, bytes(b)])
    assert total == 8
    assert unique == len(hashes) == 4 + 1
