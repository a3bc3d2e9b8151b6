"""Bits-back coding of datasets under the latent models.

Three orderings are provided:

* ``bbans``: pop all latents from the posterior, push x, push the latents
  under the prior.
* ``hier``: the same, with Gaussian latents popped top-down on grids that
  follow the conditional prior of each layer (indices then cost r_q bits each).
* ``bitswap``: for Markov chains, interleaves posterior pops with prior
  pushes so that only the first layer's posterior has to be paid for upfront.

Datum codecs run on a VMessage.  With one lane everything is serial; with
K = (sum of block sizes) lanes each block (latent layer or observation) gets
its own substack view.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import codecs, rans, vrans
from .codecs import Codec
from .discretize import dynamic_grid
from .models import (CategoricalModel, HierarchicalGaussianModel, MarkovChainModel,
                     MixtureModel)
from .rans import Precisions, UnderflowError
from .vrans import VMessage


class InsufficientInitBits(Exception):
    def __init__(self, shortfall, suggested=None):
        msg = f"insufficient initial bits (short by about {shortfall:.1f} bits)"
        if suggested is not None:
            msg += f"; try at least {suggested}"
        super().__init__(msg)
        self.shortfall = shortfall
        self.suggested = suggested


class IntegrityError(ValueError):
    pass


class RandomBits(NamedTuple):
    count: int = 0
    seed: int = 0


class FallbackWarmup(NamedTuple):
    fallback: str = "uniform"
    factor: float = 1.2
    threshold: Optional[float] = None


class CodingConfig(NamedTuple):
    prec: Precisions = Precisions()
    r_q: int = 16
    r_post: Optional[int] = None
    lanes: int = 1
    method: str = "auto"

    @property
    def posterior_precision(self):
        if self.r_post is not None:
            return self.r_post
        return min(self.r_q + 12, self.prec.r_s - self.prec.r_t - 1)


@dataclass
class RateReport:
    total_bits: int
    net_bits: list
    initial_bits: float
    neg_elbo: Optional[list] = None
    switch_index: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def n(self):
        return len(self.net_bits)

    @property
    def rate(self):
        return float(np.mean(self.net_bits)) if self.net_bits else 0.0

    @property
    def remainder(self):
        return self.total_bits - float(np.sum(self.net_bits)) - self.initial_bits

    def moving_average(self, window=10):
        x = np.asarray(self.net_bits, dtype=np.float64)
        if len(x) < window:
            return x.cumsum() / np.arange(1, len(x) + 1)
        return np.convolve(x, np.ones(window) / window, mode="valid")

    def as_dict(self):
        out = {"n": self.n, "total_bits": self.total_bits, "initial_bits": self.initial_bits,
               "net_bits_total": float(np.sum(self.net_bits)), "rate_per_datum": self.rate,
               "remainder_bits": self.remainder, "switch_index": self.switch_index}
        if self.neg_elbo is not None:
            ref = float(np.mean(self.neg_elbo)) if self.neg_elbo else 0.0
            out["neg_elbo_per_datum"] = ref
            out["rate_gap_pct"] = 100.0 * (self.rate - ref) / ref if ref else 0.0
        out.update(self.extra)
        return out


def init_random_bits(count, seed=0, r_s=64, r_t=32) -> rans.Message:
    """m_init carrying ``count`` seeded random bits.

    Whole words go to the tail and the head gets its leading one at bit
    r_s - r_t + count % r_t, so l*(m) = l*(m_init) + count up to a fraction
    of a bit.  Every head bit below the leading one is random (those low bits
    are what the first pops read), except for count=0 which gives m_init.
    """
    if count == 0:
        return rans.m_init(r_s, r_t)
    q, b = divmod(int(count), r_t)
    rng = np.random.default_rng(seed)
    words = rng.integers(0, 1 << r_t, size=q, dtype=np.uint64)
    top = r_s - r_t + b
    low = int(rng.integers(0, 1 << min(top, 62)))
    if top > 62:
        low = (low << (top - 62)) | int(rng.integers(0, 1 << (top - 62)))
    return rans.Message((1 << top) | low, [int(w) for w in words], r_s, r_t)


def _placer(K, sizes):
    """Return place(i, codec): put block i on its own lanes when K partitions the blocks."""
    sizes = list(sizes)
    if K > 1 and K == sum(sizes):
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        views = [codecs.view(np.arange(o, o + n)) for o, n in zip(offsets, sizes)]
        return lambda i, c: codecs.substack(c, views[i])
    for n in sizes:
        if n % K:
            raise ValueError(f"{K} lanes neither partition the blocks {sizes} nor divide them")
    return lambda i, c: c


def _bernoulli_weights(p, r):
    return np.clip(np.rint(np.asarray(p) * (1 << r)), 1, (1 << r) - 1).astype(np.int64)


def _mixture_codec(model: MixtureModel, cfg, trace):
    r = cfg.prec.r
    g = model.groups
    place = _placer(cfg.lanes, [g, model.obs_dim])
    prior = place(0, codecs.categorical_codec(rans.quantize_probs(model.weights, r), r, n=g))
    p1 = _bernoulli_weights(model.probs, r)

    def likelihood(z):
        return place(1, codecs.bernoulli_codec(p1[np.asarray(z)].ravel(), r))

    def posterior(x):
        return place(0, codecs.table_codec(codecs.quantize_rows(model.posterior(x), r), r))

    return codecs.bbans_codec(prior, likelihood, posterior, trace)


class _MarkovTables:
    def __init__(self, model: MarkovChainModel, r):
        q = codecs.quantize_rows
        self.r = r
        self.top = rans.quantize_probs(model.top, r)
        self.down = [q(t, r) for t in model.trans]       # row: z_{l+1}
        self.emit = q(model.emit, r)                      # row: z_1
        self.up = []                                       # row: z_l
        for l in range(1, model.L):
            joint = model.marginals[l][None, :] * model.trans[l - 1].T
            self.up.append(q(joint, r))


def _markov_codec(model: MarkovChainModel, cfg, trace, bitswap):
    r = cfg.prec.r
    L, D = model.L, model.D
    tab = _MarkovTables(model, r)
    place = _placer(cfg.lanes, [D] * (L + 1))

    # block 0 holds x, block l holds z_l
    def top():
        return place(L, codecs.categorical_codec(tab.top, r, n=D))

    def down(l, above):   # P(z_l | z_{l+1})
        return place(l, codecs.table_codec(tab.down[l - 1][above], r))

    def up(l, below):     # Q(z_{l+1} | z_l)
        return place(l + 1, codecs.table_codec(tab.up[l - 1][below], r))

    def lik(z1):
        return place(0, codecs.table_codec(tab.emit[z1], r))

    def first(x):
        return place(1, codecs.table_codec(codecs.quantize_rows(model.posterior_first(x), r), r))

    def note(zs):
        if trace is not None:
            trace.append([np.asarray(z).copy() for z in zs])

    def push_swap(m, x):
        zs = [None] * (L + 1)
        m, zs[1] = first(x).pop(m)
        m = lik(zs[1]).push(m, x)
        for l in range(1, L):
            m, zs[l + 1] = up(l, zs[l]).pop(m)
            m = down(l, zs[l + 1]).push(m, zs[l])
        note(zs[1:])
        return top().push(m, zs[L])

    def pop_swap(m):
        zs = [None] * (L + 1)
        m, zs[L] = top().pop(m)
        for l in range(L - 1, 0, -1):
            m, zs[l] = down(l, zs[l + 1]).pop(m)
            m = up(l, zs[l]).push(m, zs[l + 1])
        m, x = lik(zs[1]).pop(m)
        note(zs[1:])
        return first(x).push(m, zs[1]), x

    def push_plain(m, x):
        zs = [None] * (L + 1)
        m, zs[1] = first(x).pop(m)
        for l in range(1, L):
            m, zs[l + 1] = up(l, zs[l]).pop(m)
        m = lik(zs[1]).push(m, x)
        for l in range(1, L):
            m = down(l, zs[l + 1]).push(m, zs[l])
        note(zs[1:])
        return top().push(m, zs[L])

    def pop_plain(m):
        zs = [None] * (L + 1)
        m, zs[L] = top().pop(m)
        for l in range(L - 1, 0, -1):
            m, zs[l] = down(l, zs[l + 1]).pop(m)
        m, x = lik(zs[1]).pop(m)
        for l in range(L - 1, 0, -1):
            m = up(l, zs[l]).push(m, zs[l + 1])
        note(zs[1:])
        return first(x).push(m, zs[1]), x

    if bitswap:
        return Codec(push_swap, pop_swap)
    return Codec(push_plain, pop_plain)


def _hier_codec(model: HierarchicalGaussianModel, cfg, trace):
    r, r_q, r_post = cfg.prec.r, cfg.r_q, cfg.posterior_precision
    L = model.L
    place = _placer(cfg.lanes, list(model.sizes) + [model.d])
    index = [place(l, codecs.uniform_codec(r_q, n=k)) for l, k in enumerate(model.sizes)]

    def grid(l, zs):
        return dynamic_grid(l, zs[l:], model, r_q)

    def post(l, zs, g, x):
        mu, sd = model.posterior_params(l, zs[l:], x)
        return place(l - 1, codecs.gaussian_index_codec(mu, sd, g, r_post))

    def lik(zs):
        c = codecs.discretized_obs_codec(model.obs_mean(zs), model.sigma, model.lo, model.hi, r)
        return place(L, c)

    def push(m, x):
        zs, idx = [None] * L, [None] * L
        for l in range(L, 0, -1):
            g = grid(l, zs)
            m, idx[l - 1] = post(l, zs, g, x).pop(m)
            zs[l - 1] = g.centre(idx[l - 1])
        m = lik(zs).push(m, x)
        for l in range(L):
            m = index[l].push(m, idx[l])
        if trace is not None:
            trace.append([i.copy() for i in idx])
        return m

    def pop(m):
        zs, idx, grids = [None] * L, [None] * L, [None] * L
        for l in range(L - 1, -1, -1):
            m, idx[l] = index[l].pop(m)
        for l in range(L, 0, -1):
            grids[l - 1] = grid(l, zs)
            zs[l - 1] = grids[l - 1].centre(idx[l - 1])
        m, x = lik(zs).pop(m)
        for l in range(1, L + 1):
            m = post(l, zs, grids[l - 1], x).push(m, idx[l - 1])
        if trace is not None:
            trace.append([i.copy() for i in idx])
        return m, x

    return Codec(push, pop)


def _categorical_codec(model: CategoricalModel, cfg):
    place = _placer(cfg.lanes, [model.dims])
    return place(0, codecs.categorical_codec(model.weights, model.r, n=model.dims))


def datum_codec(model, cfg: CodingConfig = CodingConfig(), trace=None) -> Codec:
    """Codec for one datum (a flat int array of length model.obs_dim)."""
    method = cfg.method
    if isinstance(model, MixtureModel):
        if method not in ("auto", "bbans"):
            raise ValueError(f"method {method!r} does not apply to mixtures")
        return _mixture_codec(model, cfg, trace)
    if isinstance(model, MarkovChainModel):
        if method not in ("auto", "bbans", "bitswap"):
            raise ValueError(f"method {method!r} does not apply to Markov chains")
        return _markov_codec(model, cfg, trace, bitswap=method != "bbans")
    if isinstance(model, HierarchicalGaussianModel):
        if method not in ("auto", "bbans", "hier"):
            raise ValueError(f"method {method!r} does not apply to Gaussian models")
        return _hier_codec(model, cfg, trace)
    if isinstance(model, CategoricalModel):
        return _categorical_codec(model, cfg)
    raise TypeError(f"no codec for {type(model).__name__}")


def fallback_codec(model, cfg: CodingConfig, name="uniform") -> Codec:
    """Model-free codec used while the chain warms up."""
    if name != "uniform":
        raise ValueError(f"unknown fallback codec {name!r}")
    A = model.alphabet()
    place = _placer(cfg.lanes, [model.obs_dim])
    bits = A.bit_length() - 1
    if 1 << bits == A:
        return place(0, codecs.uniform_codec(bits, n=model.obs_dim))
    r = cfg.prec.r
    w = vrans._uniform_weights(A, r)
    return place(0, codecs.categorical_codec(w, r, n=model.obs_dim))


def _with_method(cfg, m, method):
    return cfg._replace(lanes=m.K, method=method)


def bbans_push(m: VMessage, x, model, cfg: CodingConfig = CodingConfig()) -> VMessage:
    return datum_codec(model, _with_method(cfg, m, "bbans")).push(m, x)


def bbans_pop(m: VMessage, model, cfg: CodingConfig = CodingConfig()):
    return datum_codec(model, _with_method(cfg, m, "bbans")).pop(m)


def hierarchical_push(m: VMessage, x, model, cfg: CodingConfig = CodingConfig()) -> VMessage:
    return datum_codec(model, _with_method(cfg, m, "hier")).push(m, x)


def hierarchical_pop(m: VMessage, model, cfg: CodingConfig = CodingConfig()):
    return datum_codec(model, _with_method(cfg, m, "hier")).pop(m)


def bitswap_push(m: VMessage, x, model, cfg: CodingConfig = CodingConfig()) -> VMessage:
    return datum_codec(model, _with_method(cfg, m, "bitswap")).push(m, x)


def bitswap_pop(m: VMessage, model, cfg: CodingConfig = CodingConfig()):
    return datum_codec(model, _with_method(cfg, m, "bitswap")).pop(m)


def initial_message(init, cfg: CodingConfig) -> VMessage:
    p = cfg.prec
    if isinstance(init, RandomBits):
        m = vrans.from_scalar(init_random_bits(init.count, init.seed, p.r_s, p.r_t))
        if cfg.lanes > 1:
            try:
                m = vrans.grow(m, cfg.lanes)
            except UnderflowError as e:
                raise InsufficientInitBits(e.shortfall) from None
        return m
    return vrans.vinit(cfg.lanes, p.r_s, p.r_t)


def max_drawdown(deltas):
    """Largest drop of a running sum below its starting point."""
    if not len(deltas):
        return 0.0
    run = np.cumsum(deltas)
    return float(max(0.0, -run.min()))


def posterior_info(model, x, cfg: CodingConfig = CodingConfig(), seed=0):
    """Bits a datum's encoding draws from the message before paying any back.

    Measured by pushing x onto a scratch message with plenty of random bits
    and recording the deepest dip in effective length.
    """
    scratch = initial_message(RandomBits(64 * cfg.prec.r_t * max(4, cfg.lanes), seed), cfg)
    scratch.trace = []
    datum_codec(model, cfg).push(scratch, x)
    return max_drawdown(scratch.trace)


def flatten(m: VMessage, mode="naive"):
    return vrans.flatten_benford(m) if mode == "benford" else vrans.flatten_naive(m)


def unflatten(words, cfg: CodingConfig, mode="naive"):
    p = cfg.prec
    if mode == "benford":
        return vrans.unflatten_benford(words, cfg.lanes, p.r_s, p.r_t)
    return vrans.unflatten_naive(words, cfg.lanes, p.r_s, p.r_t)


def encode_message(data, model, init, cfg: CodingConfig = CodingConfig(), trace=None):
    """Chain the data onto the initial message; returns (message, net bits, switch index)."""
    codec = datum_codec(model, cfg, trace)
    m = initial_message(init, cfg)
    net = []
    if isinstance(init, RandomBits):
        for x in data:
            before = vrans.effective_length(m)
            try:
                m = codec.push(m, x)
            except UnderflowError as e:
                raise InsufficientInitBits(e.shortfall) from None
            net.append(vrans.effective_length(m) - before)
        return m, net, 0

    fb = fallback_codec(model, cfg, init.fallback)
    base = vrans.effective_length(m)
    switch = len(data)
    for n, x in enumerate(data):
        before = vrans.effective_length(m)
        if switch == len(data):
            need = init.threshold
            if need is None:
                need = init.factor * posterior_info(model, x, cfg)
            if before - base >= need:
                trial = m.copy()
                try:
                    m = codec.push(trial, x)
                    switch = n
                except UnderflowError:
                    pass
            if switch != n:
                m = fb.push(m, x)
        else:
            try:
                m = codec.push(m, x)
            except UnderflowError as e:
                raise InsufficientInitBits(e.shortfall) from None
        net.append(vrans.effective_length(m) - before)
    return m, net, switch


def encode_batch(data, model, init=RandomBits(0, 0), cfg: CodingConfig = CodingConfig(),
                 flatten_mode="naive", elbo_samples=None, trace=None):
    """Encode a dataset; returns (words, RateReport)."""
    data = np.asarray(data, dtype=np.int64).reshape(len(data), model.obs_dim)
    if len(data) == 0:
        return np.zeros(0, dtype=np.uint64), RateReport(0, [], 0.0)
    start = vrans.effective_length(initial_message(init, cfg))
    m, net, switch = encode_message(data, model, init, cfg, trace)
    words = flatten(m, flatten_mode)
    ref = None
    if elbo_samples is not None:
        ref = [model.elbo(x, elbo_samples, np.random.default_rng(i))[0] for i, x in enumerate(data)]
    report = RateReport(int(len(words) * cfg.prec.r_t), net, start, ref, switch)
    return words, report


def decode_batch(words, model, init, n, cfg: CodingConfig = CodingConfig(),
                 flatten_mode="naive", switch=0, trace=None):
    """Invert encode_batch; data come back in their original order."""
    if n == 0:
        return np.zeros((0, model.obs_dim), dtype=np.int64)
    m = unflatten(words, cfg, flatten_mode)
    codec = datum_codec(model, cfg, trace)
    fb = fallback_codec(model, cfg, init.fallback) if isinstance(init, FallbackWarmup) else None
    out = np.empty((n, model.obs_dim), dtype=np.int64)
    for i in range(n - 1, -1, -1):
        c = codec if fb is None or i >= switch else fb
        try:
            m, out[i] = c.pop(m)
        except UnderflowError:
            raise IntegrityError("payload exhausted before all data were decoded") from None
    if m != initial_message(init, cfg):
        raise IntegrityError("decoded message does not match the initial message")
    return out


def min_init_bits(data, model, cfg: CodingConfig = CodingConfig(), seed=0, start=64):
    """Smallest RandomBits count that encodes ``data`` without underflow (binary search)."""
    def ok(count):
        try:
            encode_message(data, model, RandomBits(count, seed), cfg)
            return True
        except InsufficientInitBits:
            return False

    hi = start
    while not ok(hi):
        hi *= 2
    lo = -1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi
