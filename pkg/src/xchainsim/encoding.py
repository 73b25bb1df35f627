"""Canonical byte encoding and the single digest function used everywhere.

Every hashed structure (transactions, blocks, receipts, bytecode, message ids)
goes through :func:`encode`. The format is little-endian and length-prefixed
with a one-byte type tag, so equal values always produce equal bytes and the
decoder never needs a schema. The layout is documented in ``docs/encoding.md``.
"""

from __future__ import annotations

import hashlib
import struct

TAG_NONE = 0x00
TAG_BOOL = 0x01
TAG_UINT = 0x02
TAG_NEG = 0x03
TAG_BYTES = 0x04
TAG_STR = 0x05
TAG_LIST = 0x06
TAG_DICT = 0x07

DIGEST_SIZE = 32


class DecodeError(ValueError):
    pass


def _u32(n: int) -> bytes:
    return struct.pack("<I", n)


def _int_body(n: int) -> bytes:
    raw = n.to_bytes(max(1, (n.bit_length() + 7) // 8), "little")
    return bytes([len(raw)]) + raw


def encode(value) -> bytes:
    """Encode a nested value of None/bool/int/bytes/str/list/tuple/dict."""
    out = bytearray()
    _encode_into(value, out)
    return bytes(out)


def _encode_into(value, out: bytearray) -> None:
    if value is None:
        out.append(TAG_NONE)
    elif isinstance(value, bool):
        out.append(TAG_BOOL)
        out.append(1 if value else 0)
    elif isinstance(value, int):
        if value >= 0:
            out.append(TAG_UINT)
            out += _int_body(value)
        else:
            out.append(TAG_NEG)
            out += _int_body(-value)
    elif isinstance(value, (bytes, bytearray)):
        out.append(TAG_BYTES)
        out += _u32(len(value))
        out += value
    elif isinstance(value, str):
        raw = value.encode("utf-8")
        out.append(TAG_STR)
        out += _u32(len(raw))
        out += raw
    elif isinstance(value, (list, tuple)):
        out.append(TAG_LIST)
        out += _u32(len(value))
        for item in value:
            _encode_into(item, out)
    elif isinstance(value, dict):
        items = sorted((encode(k), v) for k, v in value.items())
        out.append(TAG_DICT)
        out += _u32(len(items))
        for key_bytes, v in items:
            out += key_bytes
            _encode_into(v, out)
    else:
        raise TypeError(f"cannot encode {type(value).__name__}")


def decode(data: bytes):
    """Inverse of :func:`encode`. Lists come back as lists, never tuples."""
    value, pos = _decode_at(bytes(data), 0)
    if pos != len(data):
        raise DecodeError("trailing bytes")
    return value


def _take(data: bytes, pos: int, n: int) -> tuple[bytes, int]:
    if pos + n > len(data):
        raise DecodeError("truncated input")
    return data[pos:pos + n], pos + n


def _decode_at(data: bytes, pos: int):
    tag_b, pos = _take(data, pos, 1)
    tag = tag_b[0]
    if tag == TAG_NONE:
        return None, pos
    if tag == TAG_BOOL:
        b, pos = _take(data, pos, 1)
        if b[0] > 1:
            raise DecodeError("bad bool")
        return bool(b[0]), pos
    if tag in (TAG_UINT, TAG_NEG):
        ln, pos = _take(data, pos, 1)
        raw, pos = _take(data, pos, ln[0])
        n = int.from_bytes(raw, "little")
        return (n if tag == TAG_UINT else -n), pos
    if tag in (TAG_BYTES, TAG_STR, TAG_LIST, TAG_DICT):
        hdr, pos = _take(data, pos, 4)
        (n,) = struct.unpack("<I", hdr)
        if tag == TAG_BYTES:
            raw, pos = _take(data, pos, n)
            return raw, pos
        if tag == TAG_STR:
            raw, pos = _take(data, pos, n)
            try:
                return raw.decode("utf-8"), pos
            except UnicodeDecodeError as exc:
                raise DecodeError(str(exc)) from None
        if tag == TAG_LIST:
            items = []
            for _ in range(n):
                item, pos = _decode_at(data, pos)
                items.append(item)
            return items, pos
        result = {}
        for _ in range(n):
            k, pos = _decode_at(data, pos)
            v, pos = _decode_at(data, pos)
            if isinstance(k, list):
                k = tuple(k)
            result[k] = v
        return result, pos
    raise DecodeError(f"unknown tag 0x{tag:02x}")


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def digest(*parts) -> bytes:
    """Digest of the canonical encoding of ``parts`` (as a list)."""
    return sha256(encode(list(parts)))


def short_hex(d: bytes, n: int = 8) -> str:
    return d.hex()[:n]


def address_from(*parts) -> str:
    """20-byte hex address derived from a digest, e.g. for contract creation."""
    return "0x" + digest("addr", *parts)[:20].hex()


def account_key(account_id: str) -> int:
    """Integer key used for per-account map slots inside the mini-VM."""
    return int.from_bytes(digest("acct", account_id)[:8], "little")
