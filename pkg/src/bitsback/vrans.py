"""Vectorized rANS: K heads sharing one tail stack.

Heads live in a uint64 array, so r_s is limited to 64.  With r_s <= 2*r_t
every lane moves at most one word per operation.  When several lanes touch
the tail in the same step, pops hand words to lanes in ascending lane order
and pushes mirror that, so the lowest lane's word ends up on top.
"""
from __future__ import annotations

import math

import numpy as np

from . import rans
from .rans import Message, UnderflowError

_U64 = np.uint64


class Tail:
    """Growable stack of words backed by a uint64 buffer (top = end)."""

    __slots__ = ("_buf", "_n")

    def __init__(self, words=None, capacity=64):
        words = np.asarray([] if words is None else words, dtype=_U64)
        self._buf = np.empty(max(capacity, 2 * len(words)), dtype=_U64)
        self._buf[:len(words)] = words
        self._n = len(words)

    def _reserve(self, k):
        if self._n + k > len(self._buf):
            new = np.empty(max(2 * len(self._buf), self._n + k), dtype=_U64)
            new[:self._n] = self._buf[:self._n]
            self._buf = new

    def __len__(self):
        return self._n

    def append(self, w):
        self._reserve(1)
        self._buf[self._n] = w
        self._n += 1

    def pop(self):
        if not self._n:
            raise IndexError("pop from empty tail")
        self._n -= 1
        return int(self._buf[self._n])

    def push_many(self, words):
        """Push words in order; the last one ends on top."""
        k = len(words)
        self._reserve(k)
        self._buf[self._n:self._n + k] = words
        self._n += k

    def pop_many(self, k):
        """Pop k words, returned top first."""
        if k > self._n:
            raise UnderflowError(shortfall=float(k - self._n))
        out = self._buf[self._n - k:self._n][::-1].copy()
        self._n -= k
        return out

    def bottom_first(self):
        return self._buf[:self._n].copy()

    def copy(self):
        return Tail(self._buf[:self._n])

    def __eq__(self, other):
        if isinstance(other, Tail):
            other = other.bottom_first()
        return np.array_equal(self.bottom_first(), np.asarray(other, dtype=_U64))

    def __repr__(self):
        return f"Tail(n={self._n})"


class VMessage:
    """K heads over one shared tail.

    ``trace`` is normally None.  Set it to a list to record the change in
    effective length of every push/pop step (instrumentation only).
    """

    __slots__ = ("heads", "tail", "r_s", "r_t", "trace")

    def __init__(self, heads, tail=None, r_s=64, r_t=32, trace=None):
        if r_s > 64 or r_s > 2 * r_t:
            raise ValueError("vector messages need r_s <= 64 and r_s <= 2*r_t")
        self.heads = np.asarray(heads, dtype=_U64)
        self.tail = Tail() if tail is None else tail
        self.r_s = r_s
        self.r_t = r_t
        self.trace = trace

    @property
    def K(self):
        return len(self.heads)

    def copy(self):
        return VMessage(self.heads.copy(), self.tail.copy(), self.r_s, self.r_t)

    def with_heads(self, heads):
        return VMessage(heads, self.tail, self.r_s, self.r_t, self.trace)

    def __eq__(self, other):
        return (isinstance(other, VMessage) and (self.r_s, self.r_t) == (other.r_s, other.r_t)
                and np.array_equal(self.heads, other.heads) and self.tail == other.tail)

    def __repr__(self):
        return f"VMessage(K={self.K}, |tail|={len(self.tail)}, {self.r_s}/{self.r_t})"


def vinit(K, r_s=64, r_t=32):
    return VMessage(np.full(K, 1 << (r_s - r_t), dtype=_U64), Tail(), r_s, r_t)


def from_scalar(m: Message) -> VMessage:
    return VMessage([m.head], Tail(m.tail), m.r_s, m.r_t)


def to_scalar(m: VMessage) -> Message:
    if m.K != 1:
        raise ValueError("to_scalar needs a single lane")
    return Message(int(m.heads[0]), [int(w) for w in m.tail.bottom_first()], m.r_s, m.r_t)


def _check_r(m, r):
    if not 0 <= r < m.r_s - m.r_t:
        raise ValueError(f"precision r={r} must be below r_s - r_t = {m.r_s - m.r_t}")


def push_ranges(m: VMessage, starts, freqs, r) -> VMessage:
    """Push one symbol per lane given its (start, freq) at precision r."""
    _check_r(m, r)
    if r == 0:
        return m
    freqs = np.asarray(freqs, dtype=_U64)
    starts = np.asarray(starts, dtype=_U64)
    s = m.heads
    # s >= freq * 2**(r_s - r), written to avoid overflow when freq = 2**r
    idx = np.flatnonzero((s >> _U64(m.r_s - r)) >= freqs)
    if idx.size:
        s = s.copy()
        m.tail.push_many((s[idx] & _U64((1 << m.r_t) - 1))[::-1])
        s[idx] >>= _U64(m.r_t)
    s = ((s // freqs) << _U64(r)) + s % freqs + starts
    if m.trace is not None:
        m.trace.append(_lanes_length(s) - _lanes_length(m.heads) + m.r_t * idx.size)
    return m.with_heads(s)


def peek(m: VMessage, r):
    return m.heads & _U64((1 << r) - 1)


def pop_ranges(m: VMessage, starts, freqs, r) -> VMessage:
    """Undo push_ranges; starts/freqs must come from the peeked values."""
    _check_r(m, r)
    if r == 0:
        return m
    freqs = np.asarray(freqs, dtype=_U64)
    starts = np.asarray(starts, dtype=_U64)
    h = m.heads
    s = freqs * (h >> _U64(r)) + (h & _U64((1 << r) - 1)) - starts
    idx = np.flatnonzero(s < _U64(1 << (m.r_s - m.r_t)))
    if idx.size:
        if idx.size > len(m.tail):
            short = [(m.r_s - m.r_t) - math.log2(max(int(v), 1)) for v in s[idx]]
            raise UnderflowError(shortfall=float(sum(short)))
        words = m.tail.pop_many(idx.size)
        s[idx] = (s[idx] << _U64(m.r_t)) | words
    if m.trace is not None:
        m.trace.append(_lanes_length(s) - _lanes_length(h) - m.r_t * idx.size)
    return m.with_heads(s)


def vpush(m: VMessage, xs, dists) -> VMessage:
    r = dists[0].r
    if len(dists) != m.K or len(xs) != m.K:
        raise ValueError("lane count mismatch")
    if any(d.r != r for d in dists):
        raise ValueError("all lanes must share one precision")
    sf = [d.backward(int(x)) for d, x in zip(dists, xs)]
    return push_ranges(m, [a for a, _ in sf], [b for _, b in sf], r)


def vpop(m: VMessage, dists):
    r = dists[0].r
    if len(dists) != m.K:
        raise ValueError("lane count mismatch")
    cf = peek(m, r)
    found = [d.forward(int(c)) for d, c in zip(dists, cf)]
    m = pop_ranges(m, [c for _, c, _ in found], [p for _, _, p in found], r)
    return m, np.array([i for i, _, _ in found], dtype=np.int64)


def _lanes_length(heads):
    return float(np.sum(np.log2(heads.astype(np.float64))))


def effective_length(m: VMessage):
    return float(np.sum(np.log2(m.heads.astype(np.float64)))) + m.r_t * len(m.tail)


def naive_length(m: VMessage):
    return m.K * m.r_s + m.r_t * len(m.tail)


def benford_ideal_length(m: VMessage):
    """l*(m) plus the Benford normalizer for every lane after the first."""
    return effective_length(m) + (m.K - 1) * math.log2(m.r_t * math.log(2))


def flatten_naive(m: VMessage):
    if m.r_s % m.r_t:
        raise ValueError("flattening needs r_s to be a multiple of r_t")
    n = m.r_s // m.r_t
    shifts = _U64(m.r_t) * np.arange(n - 1, -1, -1, dtype=_U64)
    words = (m.heads[:, None] >> shifts[None, :]) & _U64((1 << m.r_t) - 1)
    return np.concatenate([words.ravel(), m.tail.bottom_first()[::-1]])


def unflatten_naive(words, K, r_s=64, r_t=32) -> VMessage:
    words = np.asarray(words, dtype=_U64)
    n = r_s // r_t
    if len(words) < n * K:
        raise ValueError("too few words for the heads")
    heads = np.zeros(K, dtype=_U64)
    for j in range(n):
        heads = (heads << _U64(r_t)) | words[j:n * K:n]
    if np.any(heads < _U64(1 << (r_s - r_t))):
        raise ValueError("invalid head in payload")
    return VMessage(heads, Tail(words[n * K:][::-1]), r_s, r_t)


def _uniform_weights(n, r):
    base, extra = divmod(1 << r, n)
    return [base + 1] * extra + [base] * (n - extra)


class HeadCode:
    """Codes a head value onto a scalar message.

    The head is split into its octave e = floor(log2 h), coded uniformly over
    the r_t possible octaves, and the e bits below the leading one, coded as
    uniform chunks.  This costs e + log2(r_t) bits, within 0.53 bits of the
    ideal Benford cost log2(h) + log2(r_t ln 2).
    """

    def __init__(self, r_s=64, r_t=32):
        self.r_s, self.r_t = r_s, r_t
        self.base = r_s - r_t
        self.chunk = min(16, r_s - r_t - 1)
        r_e = min(16, r_s - r_t - 1)
        if (1 << r_e) < r_t:
            raise ValueError("precisions too small for head coding")
        self.octaves = rans.make_quantized(_uniform_weights(r_t, r_e), r_e)

    def _chunks(self, e):
        out, pos = [], 0
        while pos < e:
            k = min(self.chunk, e - pos)
            out.append((pos, k))
            pos += k
        return out

    def push(self, m: Message, h) -> Message:
        h = int(h)
        e = h.bit_length() - 1
        if not self.base <= e < self.r_s:
            raise ValueError("head out of range")
        rest = h - (1 << e)
        for pos, k in self._chunks(e):
            m = rans.push_ranges(m, (rest >> pos) & ((1 << k) - 1), 1, k)
        return rans.push(m, e - self.base, self.octaves)

    def pop(self, m: Message):
        m, j = rans.pop(m, self.octaves)
        e = j + self.base
        rest = 0
        for pos, k in reversed(self._chunks(e)):
            v = rans.peek(m, k)
            m = rans.pop_ranges(m, v, 1, k)
            rest |= v << pos
        return m, (1 << e) + rest

    def cost(self, h):
        return int(h).bit_length() - 1 + math.log2(self.r_t)


def _lane0(m: VMessage, tail):
    return Message(int(m.heads[0]), tail, m.r_s, m.r_t)


def flatten_benford(m: VMessage):
    """Fold lanes K-1..1 into lane 0 with HeadCode, then flatten as a scalar."""
    code = HeadCode(m.r_s, m.r_t)
    base = _lane0(m, [int(w) for w in m.tail.bottom_first()])
    for k in range(m.K - 1, 0, -1):
        base = code.push(base, m.heads[k])
    return np.asarray(rans.flatten(base), dtype=_U64)


def unflatten_benford(words, K, r_s=64, r_t=32) -> VMessage:
    code = HeadCode(r_s, r_t)
    base = rans.unflatten([int(w) for w in words], r_s, r_t)
    heads = [0] * K
    for k in range(1, K):
        base, heads[k] = code.pop(base)
    heads[0] = base.head
    return VMessage(heads, Tail(base.tail), r_s, r_t)


def grow(m: VMessage, K_new) -> VMessage:
    """Add lanes whose heads are popped from lane 0 and the tail."""
    if K_new < m.K:
        raise ValueError("grow cannot reduce the lane count")
    if K_new == m.K:
        return m
    code = HeadCode(m.r_s, m.r_t)
    base = _lane0(m, m.tail)
    new = []
    for _ in range(K_new - m.K):
        base, h = code.pop(base)
        new.append(h)
    heads = np.concatenate([m.heads, np.asarray(new, dtype=_U64)])
    heads[0] = base.head
    return VMessage(heads, m.tail, m.r_s, m.r_t)


def shrink(m: VMessage, K_new) -> VMessage:
    """Push surplus lanes back onto lane 0; inverse of grow."""
    if K_new > m.K or K_new < 1:
        raise ValueError("bad lane count for shrink")
    if K_new == m.K:
        return m
    code = HeadCode(m.r_s, m.r_t)
    base = _lane0(m, m.tail)
    for k in range(m.K - 1, K_new - 1, -1):
        base = code.push(base, m.heads[k])
    heads = m.heads[:K_new].copy()
    heads[0] = base.head
    return VMessage(heads, m.tail, m.r_s, m.r_t)
