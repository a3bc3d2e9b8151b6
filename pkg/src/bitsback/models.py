"""Analytically tractable latent-variable models with ELBO oracles.

All information quantities are returned in bits as positive numbers, so
``exact_log_marginal`` gives -log2 P(x) and ``elbo`` gives the negative ELBO.
"""
from __future__ import annotations

import hashlib
import json

import numpy as np

from .discretize import std_normal_cdf

LOG2E = 1.0 / np.log(2.0)


def _logsumexp2(a, axis=-1):
    top = np.max(a, axis=axis, keepdims=True)
    return np.squeeze(top, axis) + np.log2(np.sum(np.exp2(a - top), axis=axis))


def _gauss_logpdf2(z, mu, sigma):
    """log2 density of N(mu, sigma**2), summed over the last axis."""
    u = (z - mu) / sigma
    return np.sum((-0.5 * u * u - np.log(sigma) - 0.5 * np.log(2 * np.pi)) * LOG2E, axis=-1)


class MixtureModel:
    """Independent groups, each a mixture of M product-Bernoulli components.

    A datum has ``groups * d`` binary pixels; group j's pixels depend only on
    its own latent z_j in {0..M-1}.  ``groups`` is the latent dimensionality.
    """

    kind = "mixture"

    def __init__(self, weights, probs, groups=1):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.weights = self.weights / self.weights.sum()
        self.probs = np.asarray(probs, dtype=np.float64)
        self.M, self.d = self.probs.shape
        self.groups = groups

    @classmethod
    def random(cls, M, d, groups=1, seed=0, spread=0.8):
        rng = np.random.default_rng(seed)
        weights = rng.dirichlet(np.full(M, 5.0))
        probs = 0.5 + spread * (rng.random((M, d)) - 0.5)
        return cls(weights, probs, groups)

    @property
    def obs_dim(self):
        return self.groups * self.d

    @property
    def latent_dim(self):
        return self.groups

    def log_joint(self, x):
        """log2 P(z_j = m, x_j) for every group j and component m."""
        x = np.asarray(x).reshape(self.groups, self.d)
        lp = np.log2(self.probs)
        lq = np.log2(1.0 - self.probs)
        ll = x @ lp.T + (1 - x) @ lq.T
        return ll + np.log2(self.weights)[None, :]

    def exact_log_marginal(self, x):
        return float(-np.sum(_logsumexp2(self.log_joint(x))))

    def posterior(self, x):
        lj = self.log_joint(x)
        return np.exp2(lj - _logsumexp2(lj)[:, None])

    def elbo(self, x, n_samples=0, rng=None):
        # the posterior is exact, so the bound is tight
        return self.exact_log_marginal(x), 0.0

    def sample(self, n, seed):
        rng = np.random.default_rng(seed)
        z = rng.choice(self.M, size=(n, self.groups), p=self.weights)
        u = rng.random((n, self.groups, self.d))
        return (u < self.probs[z]).astype(np.int64).reshape(n, self.obs_dim)

    def alphabet(self):
        return 2


class MarkovChainModel:
    """Chain x <- z_1 <- z_2 <- ... <- z_L over D independent positions.

    ``trans[l-1][a, b] = P(z_l = b | z_{l+1} = a)`` and ``emit[a, v] = P(x = v | z_1 = a)``.
    The exact posterior factorizes as Q(z_1|x) prod Q(z_{l+1}|z_l).
    """

    kind = "markov"

    def __init__(self, top, trans, emit, D=1):
        self.top = np.asarray(top, dtype=np.float64)
        self.trans = [np.asarray(t, dtype=np.float64) for t in trans]
        self.emit = np.asarray(emit, dtype=np.float64)
        self.L = len(self.trans) + 1
        self.M = len(self.top)
        self.V = self.emit.shape[1]
        self.D = D
        # marginals[l-1] = P(z_l)
        marg = [self.top]
        for t in reversed(self.trans):
            marg.append(marg[-1] @ t)
        self.marginals = marg[::-1]
        self.p_x = self.marginals[0] @ self.emit

    @classmethod
    def random(cls, L, M=8, V=16, D=4, seed=0, keep=0.5):
        rng = np.random.default_rng(seed)

        def noisy(rows, cols):
            t = rng.dirichlet(np.ones(cols), size=rows)
            k = rng.integers(0, cols, size=rows)
            t = (1 - keep) * t
            t[np.arange(rows), k] += keep
            return t

        top = rng.dirichlet(np.full(M, 4.0))
        return cls(top, [noisy(M, M) for _ in range(L - 1)], noisy(M, V), D)

    @property
    def obs_dim(self):
        return self.D

    @property
    def latent_dim(self):
        return self.L * self.D

    def exact_log_marginal(self, x):
        return float(-np.sum(np.log2(self.p_x[np.asarray(x)])))

    def posterior_first(self, x):
        """Q(z_1 | x) for each position, shape (D, M)."""
        q = self.marginals[0][None, :] * self.emit[:, np.asarray(x)].T
        return q / q.sum(axis=1, keepdims=True)

    def posterior_up(self, l, z_l):
        """Q(z_{l+1} | z_l) for each position, shape (D, M); l counts from 1."""
        q = self.marginals[l][None, :] * self.trans[l - 1][:, np.asarray(z_l)].T
        return q / q.sum(axis=1, keepdims=True)

    def elbo(self, x, n_samples=0, rng=None):
        return self.exact_log_marginal(x), 0.0

    def sample(self, n, seed):
        rng = np.random.default_rng(seed)

        def draw(table_rows):
            c = np.cumsum(table_rows, axis=-1)
            u = rng.random(table_rows.shape[:-1] + (1,))
            return np.minimum((u > c).sum(axis=-1), table_rows.shape[-1] - 1)

        z = draw(np.broadcast_to(self.top, (n, self.D, self.M)))
        for t in reversed(self.trans):
            z = draw(t[z])
        return draw(self.emit[z])

    def alphabet(self):
        return self.V


class HierarchicalGaussianModel:
    """Linear-Gaussian hierarchy with a discretized-Gaussian pixel likelihood.

    Layers are numbered 1..L with z_L on top:
        z_L ~ N(0, I)
        z_l | z_{>l} ~ N(sum_{j>l} A[l][j] z_j + a[l], diag(s[l]**2))
        x | z ~ discretized N(sum_l W[l] z_l + b, sigma**2) on [lo, hi]
    The top-down posterior q(z_l | z_{>l}, x) is the exact Gaussian conditional
    of the continuous model with its off-diagonal covariance dropped.
    """

    kind = "hier"

    def __init__(self, sizes, A, a, s, W, b, sigma, lo=0, hi=255):
        self.sizes = list(sizes)
        self.L = len(self.sizes)
        self.A = A  # dict {(l, j): matrix k_l x k_j}
        self.a = [np.asarray(v, dtype=np.float64) for v in a]
        self.s = [np.asarray(v, dtype=np.float64) for v in s]
        self.W = [np.asarray(w, dtype=np.float64) for w in W]
        self.b = np.asarray(b, dtype=np.float64)
        self.sigma = float(sigma)
        self.lo, self.hi = lo, hi
        self.d = len(self.b)
        self._setup()

    @classmethod
    def random(cls, sizes, d, sigma=4.0, seed=0, gain=20.0):
        rng = np.random.default_rng(seed)
        L = len(sizes)
        A = {}
        for l in range(1, L):
            for j in range(l + 1, L + 1):
                A[(l, j)] = rng.normal(0, 0.8 / np.sqrt(sizes[j - 1]), (sizes[l - 1], sizes[j - 1]))
        a = [rng.normal(0, 0.2, k) for k in sizes]
        a[-1] = np.zeros(sizes[-1])
        s = [rng.uniform(0.5, 1.0, k) for k in sizes]
        s[-1] = np.ones(sizes[-1])
        W = [rng.normal(0, gain / np.sqrt(k), (d, k)) for k in sizes]
        b = rng.uniform(100, 156, d)
        return cls(sizes, A, a, s, W, b, sigma)

    @property
    def obs_dim(self):
        return self.d

    @property
    def latent_dim(self):
        return sum(self.sizes)

    def _off(self, l):
        return sum(self.sizes[:l - 1])

    def _setup(self):
        n = self.latent_dim
        B = np.zeros((n, n))
        for (l, j), mat in self.A.items():
            B[self._off(l):self._off(l) + self.sizes[l - 1], self._off(j):self._off(j) + self.sizes[j - 1]] = mat
        base = np.concatenate(self.a)
        S = np.concatenate(self.s)
        T = np.linalg.inv(np.eye(n) - B)
        mu_v = T @ base
        cov_v = T @ np.diag(S ** 2) @ T.T
        Wf = np.concatenate(self.W, axis=1)
        self.W_full = Wf
        mu = np.concatenate([mu_v, Wf @ mu_v + self.b])
        cov = np.block([[cov_v, cov_v @ Wf.T],
                        [Wf @ cov_v, Wf @ cov_v @ Wf.T + self.sigma ** 2 * np.eye(self.d)]])
        self._mu = mu
        self._post = []
        for l in range(1, self.L + 1):
            own = np.arange(self._off(l), self._off(l) + self.sizes[l - 1])
            cond = np.concatenate([np.arange(self._off(l + 1), n) if l < self.L else np.arange(0),
                                   n + np.arange(self.d)]).astype(int)
            gain = np.linalg.solve(cov[np.ix_(cond, cond)], cov[np.ix_(cond, own)]).T
            var = np.diag(cov[np.ix_(own, own)] - gain @ cov[np.ix_(cond, own)])
            self._post.append((own, cond, gain, np.sqrt(var)))

    def prior_params(self, l, above):
        """Mean and scale of p(z_l | z_{>l}); ``above`` lists z_{l+1}..z_L."""
        if l == self.L:
            return np.zeros(self.sizes[-1]), np.ones(self.sizes[-1])
        mean = self.a[l - 1].copy()
        for j in range(l + 1, self.L + 1):
            mean = mean + self.A[(l, j)] @ above[j - l - 1]
        return mean, self.s[l - 1]

    def posterior_params(self, l, above, x):
        """Mean and scale of q(z_l | z_{>l}, x)."""
        own, cond, gain, std = self._post[l - 1]
        c = np.concatenate(list(above) + [np.asarray(x, dtype=np.float64)])
        return self._mu[own] + gain @ (c - self._mu[cond]), std

    def obs_mean(self, zs):
        return self.W_full @ np.concatenate(zs) + self.b

    def _log_mass(self, x, mean):
        """log2 of the discretized Gaussian mass at x; mean may carry leading batch axes."""
        x = np.asarray(x, dtype=np.float64)
        with np.errstate(invalid="ignore"):
            hi = np.where(x >= self.hi, np.inf, (x + 0.5 - mean) / self.sigma)
            lo = np.where(x <= self.lo, -np.inf, (x - 0.5 - mean) / self.sigma)
        # difference of upper tails when both edges are above the mean
        mass = np.where(lo > 0, std_normal_cdf(-lo) - std_normal_cdf(-hi),
                        std_normal_cdf(hi) - std_normal_cdf(lo))
        return np.sum(np.log2(np.maximum(mass, 1e-300)), axis=-1)

    def log_lik(self, x, zs):
        """log2 P(x | z) under the discretized likelihood."""
        return float(self._log_mass(x, self.obs_mean(zs)))

    def elbo(self, x, n_samples=1000, rng=None, chunk=2048):
        """Monte-Carlo negative ELBO in bits and its standard error."""
        rng = np.random.default_rng(0) if rng is None else rng
        x = np.asarray(x, dtype=np.float64)
        vals = []
        for start in range(0, n_samples, chunk):
            S = min(chunk, n_samples - start)
            zs = [None] * self.L
            lq = lp = 0.0
            for l in range(self.L, 0, -1):
                own, cond, gain, sq = self._post[l - 1]
                c = np.concatenate(zs[l:] + [np.broadcast_to(x, (S, self.d))], axis=1)
                mq = self._mu[own] + (c - self._mu[cond]) @ gain.T
                z = mq + sq * rng.standard_normal(mq.shape)
                mp = np.broadcast_to(self.a[l - 1] if l < self.L else 0.0, z.shape)
                for j in range(l + 1, self.L + 1):
                    mp = mp + zs[j - 1] @ self.A[(l, j)].T
                sp = self.s[l - 1] if l < self.L else np.ones(self.sizes[-1])
                lq = lq + _gauss_logpdf2(z, mq, sq)
                lp = lp + _gauss_logpdf2(z, mp, sp)
                zs[l - 1] = z
            mean = np.concatenate(zs, axis=1) @ self.W_full.T + self.b
            vals.append(-(self._log_mass(x, mean) + lp - lq))
        vals = np.concatenate(vals)
        return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(len(vals)))

    def sample(self, n, seed):
        rng = np.random.default_rng(seed)
        out = np.empty((n, self.d), dtype=np.int64)
        for i in range(n):
            zs = [None] * self.L
            for l in range(self.L, 0, -1):
                mp, sp = self.prior_params(l, zs[l:])
                zs[l - 1] = mp + sp * rng.standard_normal(len(mp))
            y = self.obs_mean(zs) + self.sigma * rng.standard_normal(self.d)
            out[i] = np.clip(np.rint(y), self.lo, self.hi)
        return out

    def alphabet(self):
        return self.hi - self.lo + 1


class LinearGaussianVAE(HierarchicalGaussianModel):
    """Single latent layer: z ~ N(0, I), x ~ discretized N(Wz + b, sigma**2)."""

    kind = "lingauss"

    def __init__(self, W, b, sigma, lo=0, hi=255):
        W = np.asarray(W, dtype=np.float64)
        k = W.shape[1]
        super().__init__([k], {}, [np.zeros(k)], [np.ones(k)], [W], b, sigma, lo, hi)

    @classmethod
    def random(cls, k, d, sigma=4.0, seed=0, gain=20.0):
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0, gain / np.sqrt(k), (d, k)), rng.uniform(100, 156, d), sigma)

    @property
    def k(self):
        return self.sizes[0]

    def posterior(self, x):
        return self.posterior_params(1, [], x)


class CategoricalModel:
    """I.i.d. symbols from fixed integer weights (no latent variable)."""

    kind = "categorical"

    def __init__(self, weights, r, dims=1):
        self.weights = [int(w) for w in weights]
        self.r = r
        self.dims = dims

    @property
    def obs_dim(self):
        return self.dims

    def exact_log_marginal(self, x):
        w = np.asarray(self.weights, dtype=np.float64)
        return float(np.sum(self.r - np.log2(w[np.asarray(x)])))

    def elbo(self, x, n_samples=0, rng=None):
        return self.exact_log_marginal(x), 0.0

    def entropy(self):
        p = np.asarray(self.weights, dtype=np.float64) / (1 << self.r)
        return float(-np.sum(p * np.log2(p)))

    def sample(self, n, seed):
        rng = np.random.default_rng(seed)
        p = np.asarray(self.weights, dtype=np.float64) / (1 << self.r)
        return rng.choice(len(p), size=(n, self.dims), p=p)

    def alphabet(self):
        return len(self.weights)


def exact_log_marginal(model, x):
    return model.exact_log_marginal(x)


def posterior(model, x):
    return model.posterior(x)


def elbo(model, x, n_samples=1000, seed=0):
    return model.elbo(x, n_samples, np.random.default_rng(seed))


def sample_dataset(model, n, seed):
    if n == 0:
        return np.zeros((0, model.obs_dim), dtype=np.int64)
    return model.sample(n, seed)


def model_from_spec(spec):
    """Build a model from a JSON-style dict; see README for the schema."""
    kind = spec["type"]
    seed = spec.get("seed", 0)
    if kind == "mixture":
        if "probs" in spec:
            return MixtureModel(spec["weights"], spec["probs"], spec.get("groups", 1))
        return MixtureModel.random(spec["M"], spec["d"], spec.get("groups", 1), seed,
                                   spec.get("spread", 0.8))
    if kind == "markov":
        return MarkovChainModel.random(spec["L"], spec.get("M", 8), spec.get("V", 16),
                                       spec.get("D", 4), seed, spec.get("keep", 0.5))
    if kind == "lingauss":
        return LinearGaussianVAE.random(spec["k"], spec["d"], spec.get("sigma", 4.0), seed,
                                        spec.get("gain", 20.0))
    if kind == "hier":
        return HierarchicalGaussianModel.random(spec["layers"], spec["d"], spec.get("sigma", 4.0),
                                                seed, spec.get("gain", 20.0))
    if kind == "categorical":
        return CategoricalModel(spec["weights"], spec["r"], spec.get("dims", 1))
    raise ValueError(f"unknown model type {kind!r}")


def spec_hash(spec):
    """First 8 bytes of SHA-256 over the canonical JSON of a model spec."""
    canon = json.dumps(spec, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(canon).digest()[:8]
