"""Pure-Python LZ4 block and frame codec.

Implements the interoperable LZ4 Frame format (magic ``0x184D2204``) on top
of a from-scratch block codec, so serialization files can be produced and
consumed without a native lz4 binding.

Frames written here always use the same fixed parameters, which keeps the
output a pure function of (content bytes, compression level):

- independent blocks, 4 MiB maximum block size
- content checksum (xxHash32) enabled
- no block checksums, no content-size field, no dictionary

The reader is more liberal: it accepts linked blocks, block checksums, and a
content-size field, and verifies every checksum it finds.

Compression levels 1-12 trade speed for match-search depth. Level 1 is the
classic single-probe fast path with skip acceleration; higher levels keep a
bounded chain of previous positions per hash bucket and pick the longest
match among them. Output is deterministic for a given (input, level).
"""

from __future__ import annotations

import io
import struct
from typing import BinaryIO

import xxhash

from .errors import DecodeError

MAGIC = 0x184D2204
_MAGIC_BYTES = struct.pack("<I", MAGIC)

_MIN_MATCH = 4
# A match may not start within the final 12 bytes of a block, and the final
# 5 bytes are always literals (end-of-block guarantees of the block format).
_MFLIMIT = 12
_LAST_LITERALS = 5
_MAX_OFFSET = 0xFFFF

_HASH_MULT = 2654435761
_SKIP_TRIGGER = 6

# Frame descriptor FLG bits.
_FLG_VERSION = 0x40
_FLG_B_INDEP = 0x20
_FLG_B_CHECKSUM = 0x10
_FLG_C_SIZE = 0x08
_FLG_C_CHECKSUM = 0x04
_FLG_DICT_ID = 0x01

_BLOCK_SIZES = {4: 1 << 16, 5: 1 << 18, 6: 1 << 20, 7: 1 << 22}
_DEFAULT_BLOCK_ID = 7
BLOCK_SIZE = _BLOCK_SIZES[_DEFAULT_BLOCK_ID]

_UNCOMPRESSED_BIT = 0x80000000

_u32 = struct.Struct("<I")
_u32_unpack = _u32.unpack_from
_u32_pack = _u32.pack


def _match_length(data: bytes, a: int, b: int, b_limit: int) -> int:
    """Length of the common run data[a:] == data[b:], capped at b_limit."""
    max_k = b_limit - b
    k = 0
    step = 512
    while k + step <= max_k and data[a + k:a + k + step] == data[b + k:b + k + step]:
        k += step
        step = min(step * 2, 1 << 20)
    while k < max_k and data[a + k] == data[b + k]:
        k += 1
    return k


def _emit(out: bytearray, data: bytes, lit_start: int, lit_end: int,
          offset: int, match_len: int) -> None:
    lit_len = lit_end - lit_start
    ml_code = match_len - _MIN_MATCH
    out.append((min(lit_len, 15) << 4) | min(ml_code, 15))
    if lit_len >= 15:
        rem = lit_len - 15
        while rem >= 255:
            out.append(255)
            rem -= 255
        out.append(rem)
    out += data[lit_start:lit_end]
    out.append(offset & 0xFF)
    out.append(offset >> 8)
    if ml_code >= 15:
        rem = ml_code - 15
        while rem >= 255:
            out.append(255)
            rem -= 255
        out.append(rem)


def _emit_tail(out: bytearray, data: bytes, lit_start: int) -> None:
    lit_len = len(data) - lit_start
    out.append(min(lit_len, 15) << 4)
    if lit_len >= 15:
        rem = lit_len - 15
        while rem >= 255:
            out.append(255)
            rem -= 255
        out.append(rem)
    out += data[lit_start:]


def compress_block(data: bytes, level: int = 1) -> bytes | None:
    """Compress one block; returns None when compression does not shrink it."""
    n = len(data)
    if n <= _MFLIMIT:
        return None
    depth = max(1, min(int(level), 12))
    out = bytearray()
    anchor = 0
    pos = 0
    limit = n - _MFLIMIT
    match_limit = n - _LAST_LITERALS
    search_nb = 1 << _SKIP_TRIGGER

    if depth == 1:
        table: dict[int, int] = {}
        get = table.get
        while pos < limit:
            seq = _u32_unpack(data, pos)[0]
            h = ((seq * _HASH_MULT) & 0xFFFFFFFF) >> 16
            cand = get(h, -1)
            table[h] = pos
            if cand >= 0 and pos - cand <= _MAX_OFFSET and _u32_unpack(data, cand)[0] == seq:
                while pos > anchor and cand > 0 and data[pos - 1] == data[cand - 1]:
                    pos -= 1
                    cand -= 1
                length = _match_length(data, cand + _MIN_MATCH, pos + _MIN_MATCH,
                                       match_limit) + _MIN_MATCH
                _emit(out, data, anchor, pos, pos - cand, length)
                pos += length
                anchor = pos
                if len(out) >= n:
                    return None
                if pos < limit:
                    p2 = pos - 2
                    s2 = _u32_unpack(data, p2)[0]
                    table[((s2 * _HASH_MULT) & 0xFFFFFFFF) >> 16] = p2
                search_nb = 1 << _SKIP_TRIGGER
            else:
                pos += search_nb >> _SKIP_TRIGGER
                search_nb += 1
    else:
        chains: dict[int, list[int]] = {}
        cget = chains.get
        while pos < limit:
            seq = _u32_unpack(data, pos)[0]
            h = ((seq * _HASH_MULT) & 0xFFFFFFFF) >> 16
            cands = cget(h)
            best_len = 0
            best_cand = -1
            if cands:
                for cand in reversed(cands[-depth:]):
                    if pos - cand > _MAX_OFFSET:
                        break
                    if _u32_unpack(data, cand)[0] != seq:
                        continue
                    length = _match_length(data, cand + _MIN_MATCH, pos + _MIN_MATCH,
                                           match_limit) + _MIN_MATCH
                    if length > best_len:
                        best_len = length
                        best_cand = cand
                cands.append(pos)
                if len(cands) > depth * 8:
                    del cands[:-depth]
            else:
                chains[h] = [pos]
            if best_cand >= 0:
                cand = best_cand
                while pos > anchor and cand > 0 and data[pos - 1] == data[cand - 1]:
                    pos -= 1
                    cand -= 1
                    best_len += 1
                _emit(out, data, anchor, pos, pos - cand, best_len)
                pos += best_len
                anchor = pos
                if len(out) >= n:
                    return None
                search_nb = 1 << _SKIP_TRIGGER
            else:
                pos += search_nb >> _SKIP_TRIGGER
                search_nb += 1

    _emit_tail(out, data, anchor)
    if len(out) >= n:
        return None
    return bytes(out)


def decompress_block(data: bytes, prefix: bytes = b"", max_out: int | None = None) -> bytes:
    """Decompress one block; prefix supplies the window for linked blocks."""
    dst = bytearray(prefix)
    base = len(prefix)
    i = 0
    n = len(data)
    cap = None if max_out is None else base + max_out
    while i < n:
        token = data[i]
        i += 1
        lit_len = token >> 4
        if lit_len == 15:
            while True:
                if i >= n:
                    raise DecodeError("block truncated in literal length")
                b = data[i]
                i += 1
                lit_len += b
                if b != 255:
                    break
        if lit_len:
            if i + lit_len > n:
                raise DecodeError("block truncated in literals")
            dst += data[i:i + lit_len]
            i += lit_len
        if i == n:
            break
        if i + 2 > n:
            raise DecodeError("block truncated at match offset")
        offset = data[i] | (data[i + 1] << 8)
        i += 2
        if offset == 0:
            raise DecodeError("zero match offset")
        match_len = token & 15
        if match_len == 15:
            while True:
                if i >= n:
                    raise DecodeError("block truncated in match length")
                b = data[i]
                i += 1
                match_len += b
                if b != 255:
                    break
        match_len += _MIN_MATCH
        start = len(dst) - offset
        if start < 0:
            raise DecodeError("match offset beyond output start")
        if offset >= match_len:
            dst += dst[start:start + match_len]
        else:
            pattern = bytes(dst[start:])
            dst += (pattern * (match_len // offset + 1))[:match_len]
        if cap is not None and len(dst) > cap:
            raise DecodeError("block expands past declared block size")
    return bytes(dst[base:])


class FrameWriter:
    """File-like sink that wraps written bytes into an LZ4 frame."""

    def __init__(self, sink: BinaryIO, level: int = 1):
        self._sink = sink
        self._level = level
        self._buffer = bytearray()
        self._hasher = xxhash.xxh32()
        self._closed = False
        flg = _FLG_VERSION | _FLG_B_INDEP | _FLG_C_CHECKSUM
        bd = _DEFAULT_BLOCK_ID << 4
        header = bytes([flg, bd])
        hc = (xxhash.xxh32(header).intdigest() >> 8) & 0xFF
        sink.write(_MAGIC_BYTES + header + bytes([hc]))

    def write(self, data: bytes) -> int:
        if self._closed:
            raise ValueError("write to closed FrameWriter")
        self._buffer += data
        while len(self._buffer) >= BLOCK_SIZE:
            self._flush_block(bytes(self._buffer[:BLOCK_SIZE]))
            del self._buffer[:BLOCK_SIZE]
        return len(data)

    def _flush_block(self, chunk: bytes) -> None:
        self._hasher.update(chunk)
        comp = compress_block(chunk, self._level)
        if comp is None:
            self._sink.write(_u32_pack(len(chunk) | _UNCOMPRESSED_BIT))
            self._sink.write(chunk)
        else:
            self._sink.write(_u32_pack(len(comp)))
            self._sink.write(comp)

    def close(self) -> None:
        if self._closed:
            return
        if self._buffer:
            self._flush_block(bytes(self._buffer))
            self._buffer.clear()
        self._sink.write(_u32_pack(0))
        self._sink.write(_u32_pack(self._hasher.intdigest()))
        self._closed = True

    def __enter__(self) -> "FrameWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class FrameReader(io.RawIOBase):
    """File-like source that decompresses an LZ4 frame incrementally."""

    def __init__(self, source: BinaryIO):
        self._source = source
        self._buffer = bytearray()
        self._eof = False
        self._hasher = xxhash.xxh32()
        self._window = b""
        self._read_header()

    def _read_exact(self, count: int) -> bytes:
        data = self._source.read(count)
        if len(data) != count:
            raise DecodeError("frame truncated")
        return data

    def _read_header(self) -> None:
        magic = self._source.read(4)
        if len(magic) < 4 or _u32_unpack(magic, 0)[0] != MAGIC:
            raise DecodeError("not an LZ4 frame (bad magic)")
        descriptor = self._read_exact(2)
        flg, bd = descriptor[0], descriptor[1]
        if flg & 0xC0 != _FLG_VERSION:
            raise DecodeError("unsupported LZ4 frame version")
        if flg & _FLG_DICT_ID:
            raise DecodeError("dictionary frames are not supported")
        if flg & 0x02:
            raise DecodeError("reserved FLG bit set")
        block_id = (bd >> 4) & 0x07
        if block_id not in _BLOCK_SIZES or bd & 0x8F:
            raise DecodeError("bad BD byte in frame descriptor")
        self._block_max = _BLOCK_SIZES[block_id]
        self._linked = not (flg & _FLG_B_INDEP)
        self._block_checksums = bool(flg & _FLG_B_CHECKSUM)
        self._content_checksum = bool(flg & _FLG_C_CHECKSUM)
        self._content_size: int | None = None
        described = descriptor
        if flg & _FLG_C_SIZE:
            size_bytes = self._read_exact(8)
            self._content_size = struct.unpack("<Q", size_bytes)[0]
            described += size_bytes
        hc = self._read_exact(1)[0]
        if (xxhash.xxh32(described).intdigest() >> 8) & 0xFF != hc:
            raise DecodeError("frame header checksum mismatch")
        self._total_out = 0

    def _load_block(self) -> bool:
        """Decode the next block into the buffer; False at end of frame."""
        word = _u32_unpack(self._read_exact(4), 0)[0]
        if word == 0:
            if self._content_checksum:
                stored = _u32_unpack(self._read_exact(4), 0)[0]
                if stored != self._hasher.intdigest():
                    raise DecodeError("content checksum mismatch")
            if self._content_size is not None and self._total_out != self._content_size:
                raise DecodeError("content size mismatch")
            self._eof = True
            return False
        uncompressed = bool(word & _UNCOMPRESSED_BIT)
        size = word & ~_UNCOMPRESSED_BIT
        if size > self._block_max:
            raise DecodeError("block size exceeds frame maximum")
        stored = self._read_exact(size)
        if self._block_checksums:
            check = _u32_unpack(self._read_exact(4), 0)[0]
            if xxhash.xxh32(stored).intdigest() != check:
                raise DecodeError("block checksum mismatch")
        if uncompressed:
            chunk = stored
        else:
            chunk = decompress_block(stored, prefix=self._window, max_out=self._block_max)
        if self._linked:
            self._window = (self._window + chunk)[-_MAX_OFFSET - 1:]
        self._hasher.update(chunk)
        self._total_out += len(chunk)
        self._buffer += chunk
        return True

    def readable(self) -> bool:
        return True

    def read(self, size: int = -1) -> bytes:
        if size is None or size < 0:
            while not self._eof:
                self._load_block()
            result = bytes(self._buffer)
            self._buffer.clear()
            return result
        while len(self._buffer) < size and not self._eof:
            self._load_block()
        result = bytes(self._buffer[:size])
        del self._buffer[:size]
        return result


def compress(data: bytes, level: int = 1) -> bytes:
    """One-shot frame compression."""
    sink = io.BytesIO()
    with FrameWriter(sink, level=level) as writer:
        writer.write(data)
    return sink.getvalue()


def decompress(data: bytes) -> bytes:
    """One-shot frame decompression with checksum verification."""
    return FrameReader(io.BytesIO(data)).read()
