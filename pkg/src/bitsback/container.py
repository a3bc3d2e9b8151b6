"""Binary layouts: message containers (BBC1/BBC2), batch containers, dataset files.

All integers are little-endian.

BBC1:   "BBC1" 0x01 r_s r_t 0x00 | n_words u64 | words (8 bytes each)
BBC2:   "BBC2" 0x02 r_s r_t K:u32 mode:u8 | n_words u64 | words
Batch:  BBC2 header | extension (below) | n_words u64 | words

Extension (37 bytes): model hash (8), datum count u64, init tag u8
(0 random, 1 fallback), init param u64 (bit count, or fallback switch index),
seed u64, r u8, r_q u8, r_post u8, method u8.

Dataset: "BBD1" dims:u32 count:u64 | count*dims uint8 symbols.
"""
from __future__ import annotations

import struct
from typing import NamedTuple

import numpy as np

MODES = {"naive": 0, "benford": 1}
METHODS = {"auto": 0, "bbans": 1, "hier": 2, "bitswap": 3}
INIT_TAGS = {"random": 0, "fallback": 1}

_BBC1 = struct.Struct("<4sBBBB")
_BBC2 = struct.Struct("<4sBBBIB")
_EXT = struct.Struct("<8sQBQQBBBB")
_COUNT = struct.Struct("<Q")
_BBD = struct.Struct("<4sIQ")


class FormatError(ValueError):
    pass


def _payload(words):
    words = np.asarray(words, dtype="<u8")
    return _COUNT.pack(len(words)) + words.tobytes()


def _read_payload(buf, off, r_t):
    if len(buf) < off + 8:
        raise FormatError("truncated payload length")
    (n,) = _COUNT.unpack_from(buf, off)
    off += 8
    if len(buf) != off + 8 * n:
        raise FormatError(f"payload holds {len(buf) - off} bytes, header says {8 * n}")
    words = np.frombuffer(buf, dtype="<u8", count=n, offset=off).astype(np.uint64)
    if n and int(words.max()) >> r_t:
        raise FormatError("payload word exceeds r_t bits")
    return words


def _check_prec(r_s, r_t):
    if not (0 < r_t < r_s <= 2 * r_t and r_s <= 64):
        raise FormatError(f"bad precisions r_s={r_s} r_t={r_t}")


def pack_bbc1(words, r_s, r_t) -> bytes:
    return _BBC1.pack(b"BBC1", 1, r_s, r_t, 0) + _payload(words)


def unpack_bbc1(buf):
    """Returns (words, r_s, r_t)."""
    if len(buf) < _BBC1.size:
        raise FormatError("truncated header")
    magic, ver, r_s, r_t, _ = _BBC1.unpack_from(buf)
    if magic != b"BBC1" or ver != 1:
        raise FormatError("not a BBC1 container")
    _check_prec(r_s, r_t)
    return _read_payload(buf, _BBC1.size, r_t), r_s, r_t


def _bbc2_header(r_s, r_t, K, mode):
    return _BBC2.pack(b"BBC2", 2, r_s, r_t, K, MODES[mode])


def _read_bbc2_header(buf):
    if len(buf) < _BBC2.size:
        raise FormatError("truncated header")
    magic, ver, r_s, r_t, K, mode = _BBC2.unpack_from(buf)
    if magic != b"BBC2" or ver != 2:
        raise FormatError("not a BBC2 container")
    _check_prec(r_s, r_t)
    if K < 1:
        raise FormatError("lane count must be positive")
    names = {v: k for k, v in MODES.items()}
    if mode not in names:
        raise FormatError(f"unknown flatten mode {mode}")
    return r_s, r_t, K, names[mode]


def pack_bbc2(words, r_s, r_t, K, mode="naive") -> bytes:
    return _bbc2_header(r_s, r_t, K, mode) + _payload(words)


def unpack_bbc2(buf):
    """Returns (words, r_s, r_t, K, mode)."""
    r_s, r_t, K, mode = _read_bbc2_header(buf)
    return (_read_payload(buf, _BBC2.size, r_t), r_s, r_t, K, mode)


class BatchHeader(NamedTuple):
    r_s: int
    r_t: int
    K: int
    mode: str
    model_hash: bytes
    count: int
    init_tag: str
    init_param: int
    seed: int
    r: int
    r_q: int
    r_post: int
    method: str


def pack_batch(h: BatchHeader, words) -> bytes:
    ext = _EXT.pack(h.model_hash, h.count, INIT_TAGS[h.init_tag], h.init_param, h.seed,
                    h.r, h.r_q, h.r_post, METHODS[h.method])
    return _bbc2_header(h.r_s, h.r_t, h.K, h.mode) + ext + _payload(words)


def unpack_batch(buf):
    """Returns (BatchHeader, words)."""
    r_s, r_t, K, mode = _read_bbc2_header(buf)
    off = _BBC2.size
    if len(buf) < off + _EXT.size:
        raise FormatError("truncated batch extension")
    mh, count, tag, param, seed, r, r_q, r_post, method = _EXT.unpack_from(buf, off)
    tags = {v: k for k, v in INIT_TAGS.items()}
    methods = {v: k for k, v in METHODS.items()}
    if tag not in tags or method not in methods:
        raise FormatError("bad init tag or method byte")
    if not 0 < r < r_s - r_t:
        raise FormatError(f"bad precision r={r}")
    words = _read_payload(buf, off + _EXT.size, r_t)
    h = BatchHeader(r_s, r_t, K, mode, mh, count, tags[tag], param, seed, r, r_q, r_post,
                    methods[method])
    return h, words


def pack_dataset(data) -> bytes:
    data = np.asarray(data)
    if data.ndim != 2:
        raise ValueError("dataset must be 2-D (count, dims)")
    if data.size and (data.min() < 0 or data.max() > 255):
        raise ValueError("symbols must fit in one byte")
    return _BBD.pack(b"BBD1", data.shape[1], data.shape[0]) + data.astype(np.uint8).tobytes()


def unpack_dataset(buf):
    if len(buf) < _BBD.size:
        raise FormatError("truncated dataset header")
    magic, dims, count = _BBD.unpack_from(buf)
    if magic != b"BBD1":
        raise FormatError("not a BBD1 dataset file")
    if len(buf) != _BBD.size + dims * count:
        raise FormatError("dataset size does not match header")
    return np.frombuffer(buf, dtype=np.uint8, offset=_BBD.size).reshape(count, dims).astype(np.int64)
