"""Identifiers in the 256-bit XOR key space, multihashes and CIDs.

Peers and content share one key space: a node id is a sha2-256 digest and
a content key is the digest inside its CID's multihash.
"""
from __future__ import annotations

import base64
import hashlib
import random
from dataclasses import dataclass
from enum import IntEnum
from typing import Tuple

ID_BYTES = 32
ID_BITS = ID_BYTES * 8

SHA2_256 = 0x12
RAW_CODEC = 0x55
MAX_DIFFICULTY = 24

B58_ALPHABET = "123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz"
_B58_INDEX = {c: i for i, c in enumerate(B58_ALPHABET)}

NodeId = bytes
Key = bytes
Distance = bytes


class CidError(ValueError):
    pass


def _check_id(x: bytes, name: str = "id") -> None:
    if len(x) != ID_BYTES:
        raise ValueError(f"{name} must be {ID_BYTES} bytes, got {len(x)}")


def xor_distance(a: bytes, b: bytes) -> Distance:
    _check_id(a, "a")
    _check_id(b, "b")
    return (int.from_bytes(a, "big") ^ int.from_bytes(b, "big")).to_bytes(ID_BYTES, "big")


def common_prefix_len(a: bytes, b: bytes) -> int:
    """Number of leading bits shared by ``a`` and ``b`` (256 when equal)."""
    _check_id(a, "a")
    _check_id(b, "b")
    x = int.from_bytes(a, "big") ^ int.from_bytes(b, "big")
    return ID_BITS - x.bit_length()


# -- base encodings ---------------------------------------------------------

def b58encode(data: bytes) -> str:
    n = int.from_bytes(data, "big")
    out = []
    while n:
        n, r = divmod(n, 58)
        out.append(B58_ALPHABET[r])
    pad = len(data) - len(data.lstrip(b"\0"))
    return "1" * pad + "".join(reversed(out))


def b58decode(text: str) -> bytes:
    n = 0
    for ch in text:
        try:
            n = n * 58 + _B58_INDEX[ch]
        except KeyError:
            raise CidError(f"invalid base58 character {ch!r}") from None
    pad = len(text) - len(text.lstrip("1"))
    body = n.to_bytes((n.bit_length() + 7) // 8, "big") if n else b""
    return b"\0" * pad + body


def b32encode(data: bytes, lower: bool = True) -> str:
    text = base64.b32encode(data).decode("ascii").rstrip("=")
    return text.lower() if lower else text


def b32decode(text: str) -> bytes:
    padded = text.upper() + "=" * (-len(text) % 8)
    try:
        return base64.b32decode(padded)
    except (ValueError, base64.binascii.Error) as exc:
        raise CidError(f"invalid base32 text {text!r}") from exc


def varint_encode(n: int) -> bytes:
    """Unsigned LEB128."""
    if 0 <= n < 0x80:
        return bytes((n,))
    if n < 0:
        raise ValueError("varint must be non-negative")
    out = bytearray()
    while True:
        byte = n & 0x7F
        n >>= 7
        if n:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def varint_decode(data: bytes, offset: int = 0) -> Tuple[int, int]:
    """Decode one varint at ``offset``; returns ``(value, next_offset)``."""
    value = shift = 0
    while True:
        if offset >= len(data):
            raise ValueError("truncated varint")
        byte = data[offset]
        offset += 1
        value |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return value, offset
        shift += 7


# -- multihash / CID --------------------------------------------------------

@dataclass(frozen=True)
class Multihash:
    code: int
    digest: bytes

    def __post_init__(self):
        if self.code == SHA2_256 and len(self.digest) != 32:
            raise CidError("sha2-256 digest must be 32 bytes")

    @property
    def length(self) -> int:
        return len(self.digest)

    def encode(self) -> bytes:
        return varint_encode(self.code) + varint_encode(self.length) + self.digest

    @classmethod
    def decode(cls, data: bytes) -> "Multihash":
        code, i = varint_decode(data)
        length, i = varint_decode(data, i)
        digest = data[i:]
        if len(digest) != length:
            raise CidError(f"multihash length {length} does not match digest ({len(digest)} bytes)")
        if code != SHA2_256:
            raise CidError(f"unsupported multihash code 0x{code:x}")
        return cls(code, digest)

    @classmethod
    def sha256(cls, data: bytes) -> "Multihash":
        return cls(SHA2_256, hashlib.sha256(data).digest())


class CidVersion(IntEnum):
    V0 = 0
    V1 = 1


@dataclass(frozen=True)
class Cid:
    version: CidVersion
    multihash: Multihash
    codec: int = RAW_CODEC

    @property
    def key(self) -> Key:
        """Position of the content in the XOR key space."""
        return self.multihash.digest

    def to_bytes(self) -> bytes:
        if self.version == CidVersion.V0:
            return self.multihash.encode()
        return varint_encode(1) + varint_encode(self.codec) + self.multihash.encode()

    @property
    def text(self) -> str:
        if self.version == CidVersion.V0:
            return b58encode(self.multihash.encode())
        return b32encode(self.to_bytes())

    def __str__(self) -> str:
        return self.text

    @classmethod
    def from_key(cls, key: Key, version: CidVersion = CidVersion.V0) -> "Cid":
        _check_id(key, "key")
        return cls(CidVersion(version), Multihash(SHA2_256, bytes(key)))


def make_cid(content: bytes, version: CidVersion | int = CidVersion.V0) -> Cid:
    if isinstance(content, str):
        content = content.encode("utf-8")
    return Cid(CidVersion(version), Multihash.sha256(bytes(content)))


def parse_cid(text: str) -> Cid:
    """Inverse of ``Cid.text``. A leading multibase ``b`` is also accepted for v1."""
    if len(text) == 46 and text.startswith("Qm"):
        return Cid(CidVersion.V0, Multihash.decode(b58decode(text)))
    body = text[1:] if text.startswith("b") and len(text) == 59 else text
    data = b32decode(body)
    version, i = varint_decode(data)
    if version != 1:
        raise CidError(f"unsupported CID version {version}")
    codec, i = varint_decode(data, i)
    return Cid(CidVersion.V1, Multihash.decode(data[i:]), codec)


def peer_id_text(node_id: NodeId) -> str:
    """Base58 multihash form of a node id (the familiar ``Qm...`` peer id)."""
    return b58encode(Multihash(SHA2_256, node_id).encode())


# -- node identity ----------------------------------------------------------

def leading_zero_bits(data: bytes) -> int:
    n = int.from_bytes(data, "big")
    return len(data) * 8 - n.bit_length()


def mine_node_id(rng: random.Random, difficulty: int = 0) -> Tuple[NodeId, int]:
    """Hash random 16-byte seeds until the digest has ``difficulty`` leading
    zero bits. Returns the id and the number of hash evaluations."""
    if not 0 <= difficulty <= MAX_DIFFICULTY:
        raise ValueError(f"difficulty must be in [0, {MAX_DIFFICULTY}]")
    attempts = 0
    while True:
        attempts += 1
        digest = hashlib.sha256(rng.randbytes(16)).digest()
        if leading_zero_bits(digest) >= difficulty:
            return digest, attempts


def generate_node_id(seed: int, difficulty: int = 0) -> NodeId:
    return mine_node_id(random.Random(seed), difficulty)[0]


def random_key(rng: random.Random) -> Key:
    """Random walk target: digest of 16 random bytes."""
    return hashlib.sha256(rng.randbytes(16)).digest()
