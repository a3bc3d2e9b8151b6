"""Scalar rANS coder.

A message is a wide head integer plus a stack of fixed-width tail words.
Head arithmetic uses Python ints, so any precisions are exact.  Operations
consume their input message: the tail list is mutated in place and handed on
to the returned message.  Use ``Message.copy`` to keep an old state around.
"""
from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence


class UnderflowError(Exception):
    """Raised when a pop needs tail words that are not there."""

    def __init__(self, msg="tail exhausted during renormalization", shortfall=0.0):
        super().__init__(msg)
        self.shortfall = shortfall


class Precisions(NamedTuple):
    r_s: int = 64
    r_t: int = 32
    r: int = 16

    def check(self):
        if not 0 < self.r_t < self.r_s:
            raise ValueError(f"need 0 < r_t < r_s, got {self.r_s}/{self.r_t}")
        if not 0 < self.r < self.r_s - self.r_t:
            raise ValueError(f"need 0 < r < r_s - r_t, got r={self.r}")
        return self

    @property
    def s_min(self):
        return 1 << (self.r_s - self.r_t)

    @property
    def eps(self):
        return epsilon(self.r_s, self.r_t, self.r)


def parse_precisions(text):
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 3:
        raise ValueError("precisions must be RS,RT,R")
    return Precisions(*parts).check()


def epsilon(r_s, r_t, r):
    """Worst-case per-pop overhead in bits."""
    return -math.log2(1.0 - 2.0 ** -(r_s - r_t - r))


@dataclass(eq=False)
class Message:
    head: int
    tail: list = field(default_factory=list)
    r_s: int = 64
    r_t: int = 32

    def copy(self):
        return Message(self.head, list(self.tail), self.r_s, self.r_t)

    def __eq__(self, other):
        return (isinstance(other, Message) and self.head == other.head
                and list(self.tail) == list(other.tail)
                and (self.r_s, self.r_t) == (other.r_s, other.r_t))

    def __repr__(self):
        return f"Message(head={self.head:#x}, |tail|={len(self.tail)}, {self.r_s}/{self.r_t})"


def m_init(r_s=64, r_t=32):
    return Message(1 << (r_s - r_t), [], r_s, r_t)


class QuantizedDistribution:
    """Integer weights summing to 2**r with cumulative lookup tables."""

    __slots__ = ("r", "weights", "cumulative")

    def __init__(self, weights, r):
        self.r = r
        self.weights = tuple(int(w) for w in weights)
        cum = [0]
        for w in self.weights:
            cum.append(cum[-1] + w)
        self.cumulative = tuple(cum[:-1])

    def __len__(self):
        return len(self.weights)

    def forward(self, s_bar):
        i = bisect_right(self.cumulative, s_bar) - 1
        return i, self.cumulative[i], self.weights[i]

    def backward(self, i):
        return self.cumulative[i], self.weights[i]

    def info(self, i):
        """Information content of symbol i in bits."""
        return self.r - math.log2(self.weights[i])

    def __repr__(self):
        return f"QuantizedDistribution({list(self.weights)}, r={self.r})"


def make_quantized(weights: Sequence[int], r: int) -> QuantizedDistribution:
    weights = [int(w) for w in weights]
    if not weights:
        raise ValueError("empty alphabet")
    if min(weights) < 1:
        raise ValueError("zero or negative weight")
    if sum(weights) != 1 << r:
        raise ValueError(f"weights sum to {sum(weights)}, expected 2**{r}")
    return QuantizedDistribution(weights, r)


def quantize_probs(probs, r):
    """Turn real probabilities into integer weights summing to 2**r.

    Floor, clamp to 1, then the largest weight absorbs the correction.  If
    the clamping overshoots by more than the largest weight can give up, the
    surplus is taken from the next largest ones in turn.
    """
    n = len(probs)
    if n > 1 << r:
        raise ValueError("more symbols than 2**r")
    total = float(sum(probs))
    w = [max(1, int(math.floor(p / total * (1 << r)))) for p in probs]
    excess = sum(w) - (1 << r)
    order = sorted(range(n), key=lambda i: -w[i])
    if excess <= 0:
        w[order[0]] -= excess
        return w
    for i in order:
        take = min(excess, w[i] - 1)
        w[i] -= take
        excess -= take
        if not excess:
            break
    return w


def d_forward(s, dist):
    r = dist.r
    s_bar = s & ((1 << r) - 1)
    i, c, p = dist.forward(s_bar)
    return p * (s >> r) + s_bar - c, i


def d_inverse(s, p, c, r):
    return ((s // p) << r) + s % p + c


def renorm(s, tail, r_s=64, r_t=32):
    s_min = 1 << (r_s - r_t)
    while s < s_min:
        if not tail:
            raise UnderflowError(shortfall=(r_s - r_t) - math.log2(max(s, 1)))
        s = (s << r_t) | tail.pop()
    return s, tail


def renorm_inverse(s, tail, p, r, r_s=64, r_t=32):
    # keep d_inverse's result below 2**r_s
    bound = p << (r_s - r)
    mask = (1 << r_t) - 1
    while s >= bound:
        tail.append(s & mask)
        s >>= r_t
    return s, tail


def push(m: Message, x: int, dist: QuantizedDistribution) -> Message:
    c, p = dist.backward(x)
    s, tail = renorm_inverse(m.head, m.tail, p, dist.r, m.r_s, m.r_t)
    return Message(d_inverse(s, p, c, dist.r), tail, m.r_s, m.r_t)


def pop(m: Message, dist: QuantizedDistribution):
    s, x = d_forward(m.head, dist)
    s, tail = renorm(s, m.tail, m.r_s, m.r_t)
    return Message(s, tail, m.r_s, m.r_t), x


def push_ranges(m, start, freq, r):
    """Push a symbol given directly by its (start, freq) at precision r."""
    s, tail = renorm_inverse(m.head, m.tail, freq, r, m.r_s, m.r_t)
    return Message(d_inverse(s, freq, start, r), tail, m.r_s, m.r_t)


def peek(m, r):
    return m.head & ((1 << r) - 1)


def pop_ranges(m, start, freq, r):
    s = freq * (m.head >> r) + (m.head & ((1 << r) - 1)) - start
    s, tail = renorm(s, m.tail, m.r_s, m.r_t)
    return Message(s, tail, m.r_s, m.r_t)


def effective_length(m):
    return math.log2(m.head) + m.r_t * len(m.tail)


def length(m):
    return m.r_s + m.r_t * len(m.tail)


def head_words(head, r_s, r_t):
    if r_s % r_t:
        raise ValueError("flattening needs r_s to be a multiple of r_t")
    mask = (1 << r_t) - 1
    n = r_s // r_t
    return [(head >> (r_t * (n - 1 - i))) & mask for i in range(n)]


def words_to_head(words, r_t):
    h = 0
    for w in words:
        h = (h << r_t) | int(w)
    return h


def flatten(m: Message):
    """Head words, most significant first, then the tail from the top down."""
    return head_words(m.head, m.r_s, m.r_t) + list(reversed(m.tail))


def unflatten(words, r_s=64, r_t=32):
    n = r_s // r_t
    if len(words) < n:
        raise ValueError("too few words for a head")
    head = words_to_head(words[:n], r_t)
    if not (1 << (r_s - r_t)) <= head < (1 << r_s):
        raise ValueError("leading words do not form a valid head")
    return Message(head, [int(w) for w in reversed(words[n:])], r_s, r_t)
