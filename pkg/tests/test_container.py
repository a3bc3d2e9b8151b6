import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bitsback import container
from bitsback.container import BatchHeader, FormatError


def header(**kw):
    base = dict(r_s=64, r_t=32, K=4, mode="benford", model_hash=b"ABCDEFGH", count=7,
                init_tag="random", init_param=123, seed=9, r=16, r_q=12, r_post=28,
                method="bitswap")
    base.update(kw)
    return BatchHeader(**base)


def test_bbc1_layout():
    blob = container.pack_bbc1([1, 2], 64, 32)
    assert blob[:8] == b"BBC1\x01\x40\x20\x00"
    assert struct.unpack_from("<Q", blob, 8) == (2,)
    assert len(blob) == 8 + 8 + 16
    words, r_s, r_t = container.unpack_bbc1(blob)
    assert list(words) == [1, 2] and (r_s, r_t) == (64, 32)


def test_bbc2_layout():
    blob = container.pack_bbc2([5], 32, 16, 3, "benford")
    assert blob[:4] == b"BBC2" and blob[4] == 2
    assert struct.unpack_from("<BBIB", blob, 5) == (32, 16, 3, 1)
    words, r_s, r_t, K, mode = container.unpack_bbc2(blob)
    assert list(words) == [5] and (r_s, r_t, K, mode) == (32, 16, 3, "benford")


def test_batch_roundtrip_and_extension_size():
    h = header()
    blob = container.pack_batch(h, [7, 8, 9])
    assert len(blob) == 12 + 37 + 8 + 24
    got, words = container.unpack_batch(blob)
    assert got == h and list(words) == [7, 8, 9]
    empty = container.pack_batch(header(count=0), [])
    assert container.unpack_batch(empty)[1].size == 0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 2 ** 32 - 1), max_size=50), st.integers(1, 5000),
       st.sampled_from(["naive", "benford"]), st.sampled_from(["random", "fallback"]))
def test_batch_roundtrip_property(words, K, mode, tag):
    h = header(K=K, mode=mode, init_tag=tag)
    got, w = container.unpack_batch(container.pack_batch(h, words))
    assert got == h and list(w) == words


@pytest.mark.parametrize("mutate", [
    lambda b: b[:5],
    lambda b: b[:-1],
    lambda b: b + b"\x00",
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:5] + bytes([20, 32]) + b[7:],      # r_s below r_t
    lambda b: b[:11] + b"\x07" + b[12:],            # unknown flatten mode
])
def test_batch_format_errors(mutate):
    blob = container.pack_batch(header(), [1, 2, 3])
    with pytest.raises(FormatError):
        container.unpack_batch(mutate(blob))


def test_word_range_checked():
    blob = container.pack_bbc1([1 << 40], 64, 32)
    with pytest.raises(FormatError):
        container.unpack_bbc1(blob)


def test_dataset_roundtrip_and_header():
    data = np.array([[0, 255, 3], [4, 5, 6]])
    blob = container.pack_dataset(data)
    assert len(blob) == 16 + 6
    assert struct.unpack_from("<4sIQ", blob) == (b"BBD1", 3, 2)
    assert np.array_equal(container.unpack_dataset(blob), data)
    with pytest.raises(FormatError):
        container.unpack_dataset(blob[:-1])
    with pytest.raises(ValueError):
        container.pack_dataset(np.array([[256]]))
    empty = container.pack_dataset(np.zeros((0, 4), dtype=int))
    assert container.unpack_dataset(empty).shape == (0, 4)
