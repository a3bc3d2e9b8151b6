import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bitsback import rans
from bitsback.rans import Message, UnderflowError

TOY = rans.make_quantized([1, 2, 3, 2], 3)  # symbols a, b, c, d
GOLDEN_SEQ = [0, 1, 1, 2, 1, 2, 3, 2, 2]


def small(head, tail=()):
    return Message(head, list(tail), 16, 8)


def test_make_quantized_cumulative():
    assert TOY.cumulative == (0, 1, 3, 6)
    assert rans.make_quantized([5, 3], 3).forward(6) == (1, 5, 3)


@pytest.mark.parametrize("w", [[0, 8], [1, 2, 3], [4, 4, 1]])
def test_make_quantized_rejects(w):
    with pytest.raises(ValueError):
        rans.make_quantized(w, 3)


def test_single_symbol_costs_nothing():
    d = rans.make_quantized([1 << 12], 12)
    m = rans.m_init()
    before = rans.effective_length(m)
    m = rans.push(m, 0, d)
    assert rans.effective_length(m) == before
    assert rans.d_forward(123456, d) == (123456, 0)
    assert rans.d_inverse(999, 1 << 12, 0, 12) == 999


def test_d_forward_and_inverse_examples():
    assert rans.d_forward(70, TOY) == (16, 3)
    assert rans.d_forward(64, TOY) == (8, 0)
    assert rans.d_inverse(16, 2, 6, 3) == 70
    assert rans.d_inverse(8, 1, 0, 3) == 64


def test_renorm_examples():
    assert rans.renorm(0x1234, [7], 16, 8) == (0x1234, [7])
    assert rans.renorm(1, [0xAB], 16, 8) == (0x01AB, [])
    assert rans.renorm(0, [0xFF, 0x01], 16, 8) == (0x01FF, [])
    with pytest.raises(UnderflowError):
        rans.renorm(3, [], 16, 8)


def test_renorm_inverse_examples():
    assert rans.renorm_inverse(300, [], 8, 3, 16, 8) == (300, [])
    assert rans.renorm_inverse(256, [], 1, 3, 16, 8) == (256, [])
    assert rans.renorm_inverse(0x2345, [], 1, 3, 16, 8) == (0x23, [0x45])


def test_push_pop_examples():
    m = rans.push(small(256), 0, TOY)
    assert (m.head, m.tail) == (2048, [])
    m = rans.push(small(256), 2, TOY)
    assert m.head == 684
    back, x = rans.pop(small(2048), TOY)
    assert (back.head, x) == (256, 0)
    back, x = rans.pop(small(684), TOY)
    assert (back.head, x) == (256, 2)


def test_flatten_examples():
    assert rans.flatten(small(0x01AB, [0xCD])) == [0x01, 0xAB, 0xCD]
    assert len(rans.flatten(rans.m_init())) == 2
    assert rans.unflatten([0x01, 0xAB, 0xCD], 16, 8) == small(0x01AB, [0xCD])
    with pytest.raises(ValueError):
        rans.unflatten([0x00, 0x05], 16, 8)


def test_effective_length_examples():
    assert rans.effective_length(rans.m_init()) == 32.0
    assert math.isclose(rans.effective_length(small(684)), math.log2(684))


def test_epsilon_value():
    assert math.isclose(rans.epsilon(64, 32, 16), math.log2(1 / (1 - 2 ** -16)))
    assert abs(rans.epsilon(64, 32, 16) - 2.2e-5) < 0.05e-5


def test_parse_precisions():
    assert rans.parse_precisions("32,16,8") == (32, 16, 8)
    for bad in ["64,32", "64,32,32", "32,40,4"]:
        with pytest.raises(ValueError):
            rans.parse_precisions(bad)


def test_golden_sequence_and_intermediate_states():
    m = rans.m_init(16, 8)
    states = [m.copy()]
    for x in GOLDEN_SEQ:
        m = rans.push(m, x, TOY)
        states.append(m.copy())
    h = sum(TOY.info(x) for x in GOLDEN_SEQ)
    assert abs(h - 16.660) < 1e-3
    lhs = rans.effective_length(m) - 8
    assert lhs <= h + 9 * rans.epsilon(16, 8, 3)
    # every partial decode restores the matching encoder state
    for k, x in enumerate(reversed(GOLDEN_SEQ)):
        m, y = rans.pop(m, TOY)
        assert y == x
        assert m == states[len(GOLDEN_SEQ) - 1 - k]
    assert m == rans.m_init(16, 8)


def test_pop_sampling_frequencies():
    rng = np.random.default_rng(1)
    words = [int(w) for w in rng.integers(0, 1 << 32, 8000)]
    m = Message((1 << 63) | int(rng.integers(0, 1 << 62)), words)
    d = rans.make_quantized([4096, 8192, 12288, 8192 * 5], 16)
    counts = np.zeros(4)
    for _ in range(100_000):
        m, x = rans.pop(m, d)
        counts[x] += 1
    p = np.array(d.weights) / 65536
    chi2 = np.sum((counts - 1e5 * p) ** 2 / (1e5 * p))
    assert chi2 < 16.3  # 3 dof, p = 0.001


def test_underflow_reports_shortfall():
    d = rans.make_quantized([1, (1 << 16) - 1], 16)
    m = rans.m_init()
    with pytest.raises(UnderflowError) as err:
        for _ in range(10):
            m, _ = rans.pop(m, d)
    assert err.value.shortfall > 0


precisions = st.sampled_from([(64, 32, 16), (32, 16, 8), (16, 8, 3), (48, 24, 12), (64, 32, 31)])


@st.composite
def dist_and_symbols(draw):
    r_s, r_t, r = draw(precisions)
    n = draw(st.integers(1, min(16, 1 << r)))
    raw = draw(st.lists(st.floats(0.01, 1.0), min_size=n, max_size=n))
    d = rans.make_quantized(rans.quantize_probs(raw, r), r)
    xs = draw(st.lists(st.integers(0, n - 1), max_size=60))
    return (r_s, r_t), d, xs


@settings(max_examples=300, deadline=None)
@given(dist_and_symbols(), st.integers(0, 2 ** 32))
def test_push_pop_inverse_and_bounds(case, seed):
    (r_s, r_t), d, xs = case
    rng = np.random.default_rng(seed)
    tail = [int(w) for w in rng.integers(0, 1 << r_t, 4)]
    m = Message(int(rng.integers(1 << (r_s - r_t), 1 << min(r_s, 63))), tail, r_s, r_t)
    eps = rans.epsilon(r_s, r_t, d.r)
    start = m.copy()
    for x in xs:
        before = rans.effective_length(m)
        m = rans.push(m, x, d)
        assert (1 << (r_s - r_t)) <= m.head < (1 << r_s)
        assert rans.length(m) - r_t <= rans.effective_length(m) < rans.length(m)
        assert rans.effective_length(m) - before <= d.info(x) + eps + 1e-9
    for x in reversed(xs):
        before = rans.effective_length(m)
        m, y = rans.pop(m, d)
        assert y == x
        drop = before - rans.effective_length(m)
        assert -1e-9 <= drop <= d.info(x) + eps + 1e-9
    assert m == start
    assert rans.unflatten(rans.flatten(m), r_s, r_t) == m


@settings(max_examples=200, deadline=None)
@given(dist_and_symbols(), st.integers(0, 2 ** 32))
def test_pop_push_inverse(case, seed):
    (r_s, r_t), d, _ = case
    rng = np.random.default_rng(seed)
    tail = [int(w) for w in rng.integers(0, 1 << r_t, 40)]
    m = Message(int(rng.integers(1 << (r_s - r_t), 1 << min(r_s, 63))), tail, r_s, r_t)
    start = m.copy()
    popped = []
    for _ in range(10):
        m, x = rans.pop(m, d)
        popped.append(x)
    for x in reversed(popped):
        m = rans.push(m, x, d)
    assert m == start


@settings(max_examples=200, deadline=None)
@given(dist_and_symbols())
def test_sequence_bound_with_head_width(case):
    (r_s, r_t), d, xs = case
    m = rans.m_init(r_s, r_t)
    for x in xs:
        m = rans.push(m, x, d)
    h = sum(d.info(x) for x in xs)
    eps = rans.epsilon(r_s, r_t, d.r)
    assert rans.effective_length(m) <= h + len(xs) * eps + r_s - r_t + 1e-9
    assert len(rans.flatten(m)) * r_t <= h + len(xs) * eps + r_s + 1e-9
