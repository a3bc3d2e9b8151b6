"""Codecs: invertible (push, pop) pairs over vector messages, plus combinators.

Values are flat integer arrays.  A primitive codec over n elements works on
a message with K lanes whenever K divides n: elements are coded K at a time,
chunk 0 first on push and last on pop.  With K = 1 everything runs serially
on one head; with K = n everything runs in parallel.
"""
from __future__ import annotations

from typing import Callable, NamedTuple, Optional

import numpy as np

from . import vrans
from .discretize import DiscretizationGrid, logistic_cdf, std_normal_cdf
from .vrans import VMessage


class Codec(NamedTuple):
    push: Callable
    pop: Callable
    info: Optional[Callable] = None  # value -> bits under the quantized model


def _chunks(n, K):
    if n % K:
        raise ValueError(f"{n} elements do not split over {K} lanes")
    return [slice(j, j + K) for j in range(0, n, K)]


def _ranges_codec(r, n, enc, dec, info=None):
    """Build a codec from start/freq lookups.

    enc(sl, x) -> (starts, freqs); dec(sl, cf) -> (x, starts, freqs), where
    sl selects the elements being coded.  n=None means one element per lane.
    """
    def push(m, x):
        x = np.asarray(x, dtype=np.int64).reshape(-1)
        size = m.K if n is None else n
        if len(x) != size:
            raise ValueError(f"expected {size} values, got {len(x)}")
        for sl in _chunks(size, m.K):
            starts, freqs = enc(sl, x[sl])
            m = vrans.push_ranges(m, starts, freqs, r)
        return m

    def pop(m):
        size = m.K if n is None else n
        out = np.empty(size, dtype=np.int64)
        for sl in reversed(_chunks(size, m.K)):
            xs, starts, freqs = dec(sl, vrans.peek(m, r).astype(np.int64))
            m = vrans.pop_ranges(m, starts, freqs, r)
            out[sl] = xs
        return m, out

    return Codec(push, pop, info)


def _bits(freqs, r):
    return float(np.sum(r - np.log2(np.asarray(freqs, dtype=np.float64))))


def uniform_codec(r_u, n=None) -> Codec:
    """Integers in [0, 2**r_u), each costing r_u bits."""
    def enc(sl, x):
        if np.any((x < 0) | (x >= 1 << r_u)):
            raise ValueError("value outside uniform range")
        return x, np.ones_like(x)

    def dec(sl, cf):
        return cf, cf, np.ones_like(cf)

    def info(x):
        return float(r_u * np.size(x))

    return _ranges_codec(r_u, n, enc, dec, info)


def quantize_rows(probs, r):
    """Row-wise version of rans.quantize_probs for a 2-D array."""
    p = np.asarray(probs, dtype=np.float64)
    p = p / p.sum(axis=1, keepdims=True)
    total = 1 << r
    if p.shape[1] > total:
        raise ValueError("more symbols than 2**r")
    w = np.maximum(np.floor(p * total).astype(np.int64), 1)
    rows = np.arange(len(w))
    j = np.argmax(w, axis=1)
    w[rows, j] += total - w.sum(axis=1)
    for i in np.flatnonzero(w[rows, j] < 1):
        # rare: the largest weight cannot absorb the surplus alone
        row = np.maximum(np.floor(p[i] * total).astype(np.int64), 1)
        excess = int(row.sum() - total)
        for k in np.argsort(-row, kind="stable"):
            take = min(excess, int(row[k]) - 1)
            row[k] -= take
            excess -= take
            if not excess:
                break
        w[i] = row
    return w


def table_codec(weights, r) -> Codec:
    """Per-element categorical: weights has shape (n, I), each row summing to 2**r."""
    w = np.asarray(weights, dtype=np.int64)
    if np.any(w < 1) or np.any(w.sum(axis=1) != 1 << r):
        raise ValueError("each row must be positive and sum to 2**r")
    cum = np.zeros((w.shape[0], w.shape[1] + 1), dtype=np.int64)
    np.cumsum(w, axis=1, out=cum[:, 1:])
    n = w.shape[0]

    def enc(sl, x):
        rows = np.arange(n)[sl]
        return cum[rows, x], w[rows, x]

    def dec(sl, cf):
        rows = np.arange(n)[sl]
        x = (cf[:, None] >= cum[rows, 1:]).sum(axis=1)
        return x, cum[rows, x], w[rows, x]

    def info(x):
        return _bits(w[np.arange(n), np.asarray(x).reshape(-1)], r)

    return _ranges_codec(r, n, enc, dec, info)


def categorical_codec(weights, r, n=None) -> Codec:
    """The same categorical distribution for every element."""
    w = np.asarray(weights, dtype=np.int64)
    if np.any(w < 1) or w.sum() != 1 << r:
        raise ValueError("weights must be positive and sum to 2**r")
    cum = np.concatenate([[0], np.cumsum(w)[:-1]])

    def enc(sl, x):
        return cum[x], w[x]

    def dec(sl, cf):
        x = np.searchsorted(cum, cf, side="right") - 1
        return x, cum[x], w[x]

    def info(x):
        return _bits(w[np.asarray(x).reshape(-1)], r)

    return _ranges_codec(r, n, enc, dec, info)


def bernoulli_codec(p1_weight, r, n=None) -> Codec:
    """Binary values; symbol 1 has weight p1_weight out of 2**r."""
    p1 = np.asarray(p1_weight, dtype=np.int64)
    if np.any((p1 < 1) | (p1 >= 1 << r)):
        raise ValueError("p1_weight must be in [1, 2**r)")
    p0 = (1 << r) - p1
    if n is None and p1.ndim:
        n = len(p1)

    def sel(sl, a):
        return a[sl] if a.ndim else a

    def enc(sl, x):
        a, b = sel(sl, p0), sel(sl, p1)
        return np.where(x == 1, a, 0), np.where(x == 1, b, a)

    def dec(sl, cf):
        a, b = sel(sl, p0), sel(sl, p1)
        x = (cf >= a).astype(np.int64)
        return x, np.where(x == 1, a, 0), np.where(x == 1, b, a)

    def info(x):
        x = np.asarray(x).reshape(-1)
        return _bits(np.where(x == 1, p1, p0), r)

    return _ranges_codec(r, n, enc, dec, info)


def _gauss_cdf_table(mu, sigma, grid: DiscretizationGrid, r):
    """Quantized cumulative mass of N(mu, sigma) at bucket index i, computed on demand.

    C(i) = round(Phi(u_i) * (2**r - n)) + i, with u_i the standardized lower
    edge of bucket i.  The +i term gives every bucket mass >= 1, and rounding
    on the lower tail of each side keeps the masses mirror-symmetric.
    """
    n = grid.n
    spare = float((1 << r) - n)
    if spare <= 0:
        raise ValueError("posterior precision r must exceed r_q")
    loc = np.broadcast_to(grid.loc, np.shape(mu)).astype(np.float64)
    scale = np.broadcast_to(grid.scale, np.shape(mu)).astype(np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)

    def cdf(sl, i):
        i = np.asarray(i, dtype=np.int64)
        z = grid.std_boundary(i)
        with np.errstate(invalid="ignore"):
            u = np.where(np.isfinite(z), (loc[sl] + scale[sl] * z - mu[sl]) / sigma[sl], z)
        low = np.rint(std_normal_cdf(-np.abs(u)) * spare)
        return (np.where(u <= 0, low, spare - low) + i).astype(np.int64)

    return cdf


def gaussian_index_codec(mu, sigma, grid: DiscretizationGrid, r) -> Codec:
    """Bucket indices of a diagonal Gaussian over a discretization grid."""
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), mu.shape)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    cdf = _gauss_cdf_table(mu, sigma, grid, r)
    n = len(mu)

    def enc(sl, x):
        lo = cdf(sl, x)
        return lo, cdf(sl, x + 1) - lo

    def dec(sl, cf):
        lo = np.zeros(len(cf), dtype=np.int64)
        hi = np.full(len(cf), grid.n, dtype=np.int64)
        for _ in range(grid.r_q):
            mid = (lo + hi) // 2
            ok = cdf(sl, mid) <= cf
            lo = np.where(ok, mid, lo)
            hi = np.where(ok, hi, mid)
        start = cdf(sl, lo)
        return lo, start, cdf(sl, lo + 1) - start

    def info(x):
        x = np.asarray(x, dtype=np.int64).reshape(-1)
        sl = slice(None)
        return _bits(cdf(sl, x + 1) - cdf(sl, x), r)

    return _ranges_codec(r, n, enc, dec, info)


def gaussian_index_masses(mu, sigma, grid: DiscretizationGrid, r):
    """Full mass table; for tests and small grids only."""
    cdf = _gauss_cdf_table(np.atleast_1d(mu), np.atleast_1d(sigma), grid, r)
    idx = np.arange(grid.n + 1)
    c = cdf(np.zeros(len(idx), dtype=np.int64), idx)
    return np.diff(c)


def discretized_masses(mu, sigma, lo, hi, kernel="gauss"):
    """Real masses over integers lo..hi, tails folded into the end bins."""
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), mu.shape)
    F = std_normal_cdf if kernel == "gauss" else logistic_cdf
    edges = np.arange(lo, hi, dtype=np.float64) + 0.5
    c = F((edges[None, :] - mu[:, None]) / sigma[:, None])
    c = np.concatenate([np.zeros((len(mu), 1)), c, np.ones((len(mu), 1))], axis=1)
    return np.maximum(np.diff(c, axis=1), 0.0)


def discretized_obs_codec(mu, sigma, lo, hi, r, kernel="gauss") -> Codec:
    """Integers in [lo, hi] under a discretized Gaussian or logistic."""
    w = quantize_rows(discretized_masses(mu, sigma, lo, hi, kernel), r)
    inner = table_codec(w, r)

    def push(m, x):
        return inner.push(m, np.asarray(x).reshape(-1) - lo)

    def pop(m):
        m, x = inner.pop(m)
        return m, x + lo

    def info(x):
        return inner.info(np.asarray(x).reshape(-1) - lo)

    return Codec(push, pop, info)


def serial_codec(codecs) -> Codec:
    """Tuples coded component by component; popped in reverse."""
    codecs = tuple(codecs)

    def push(m, xs):
        if len(xs) != len(codecs):
            raise ValueError("tuple length mismatch")
        for c, x in zip(codecs, xs):
            m = c.push(m, x)
        return m

    def pop(m):
        out = [None] * len(codecs)
        for i in range(len(codecs) - 1, -1, -1):
            m, out[i] = codecs[i].pop(m)
        return m, tuple(out)

    def info(xs):
        return sum(c.info(x) for c, x in zip(codecs, xs))

    ok = all(c.info is not None for c in codecs)
    return Codec(push, pop, info if ok else None)


class View(NamedTuple):
    """A selection of lanes, with an optional shape for the values."""
    indices: np.ndarray
    shape: Optional[tuple] = None

    def compose(self, inner: "View") -> "View":
        """The view `inner` taken inside this one."""
        return View(self.indices[inner.indices], inner.shape)

    def gather(self, heads):
        return heads[self.indices]

    def scatter(self, heads, sub):
        out = heads.copy()
        out[self.indices] = sub
        return out

    def complement(self, K) -> "View":
        mask = np.ones(K, dtype=bool)
        mask[self.indices] = False
        return View(np.flatnonzero(mask))


def view(indices, shape=None) -> View:
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if len(np.unique(idx)) != len(idx):
        raise ValueError("view lanes must be distinct")
    return View(idx, None if shape is None else tuple(shape))


def identity_view(K):
    return view(np.arange(K))


def substack(codec: Codec, v: View) -> Codec:
    """Run codec on the lanes selected by v, leaving the others untouched."""
    def push(m, x):
        if v.shape is not None:
            x = np.asarray(x).reshape(-1)
        sub = VMessage(v.gather(m.heads), m.tail, m.r_s, m.r_t, m.trace)
        sub = codec.push(sub, x)
        return m.with_heads(v.scatter(m.heads, sub.heads))

    def pop(m):
        sub = VMessage(v.gather(m.heads), m.tail, m.r_s, m.r_t, m.trace)
        sub, x = codec.pop(sub)
        if v.shape is not None:
            x = np.asarray(x).reshape(v.shape)
        return m.with_heads(v.scatter(m.heads, sub.heads)), x

    return Codec(push, pop, codec.info)


def bbans_codec(prior: Codec, likelihood: Callable, posterior: Callable, trace=None) -> Codec:
    """Bits-back coding of x with a latent z.

    Push pops z from posterior(x), then pushes x under likelihood(z) and z
    under the prior.  If ``trace`` is a list, every latent handled is
    appended to it.
    """
    def push(m, x):
        m, z = posterior(x).pop(m)
        if trace is not None:
            trace.append(z)
        m = likelihood(z).push(m, x)
        return prior.push(m, z)

    def pop(m):
        m, z = prior.pop(m)
        if trace is not None:
            trace.append(z)
        m, x = likelihood(z).pop(m)
        return posterior(x).push(m, z), x

    return Codec(push, pop)


CODEC_NAMES = ("uniform", "categorical", "bernoulli", "dgauss", "dlogistic",
               "bbans", "serial", "substack")


def from_spec(spec) -> Codec:
    """Build a codec from a JSON-style dict, e.g. {"codec": "uniform", "r_u": 8}."""
    kind = spec["codec"]
    if kind == "uniform":
        return uniform_codec(spec["r_u"], spec.get("n"))
    if kind == "categorical":
        return categorical_codec(spec["weights"], spec["r"], spec.get("n"))
    if kind == "bernoulli":
        return bernoulli_codec(spec["p1_weight"], spec["r"], spec.get("n"))
    if kind in ("dgauss", "dlogistic"):
        return discretized_obs_codec(spec["mu"], spec["sigma"], spec["lo"], spec["hi"], spec["r"],
                                     "gauss" if kind == "dgauss" else "logistic")
    if kind == "serial":
        return serial_codec([from_spec(s) for s in spec["parts"]])
    if kind == "substack":
        return substack(from_spec(spec["inner"]), view(spec["lanes"], spec.get("shape")))
    if kind == "bbans":
        raise ValueError("bbans codecs are built from a latent model, see bitsback.bbans")
    raise ValueError(f"unknown codec {kind!r}")


def info_bits(codec: Codec, x):
    if codec.info is None:
        raise ValueError("codec has no information function")
    return codec.info(x)


def entropy_bits(weights, r):
    w = np.asarray(weights, dtype=np.float64) / (1 << r)
    return float(-np.sum(w * np.log2(w)))

