"""Equal-prior-mass discretization of Gaussian latents."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy import special

DEFAULT_RQ = 16


def std_normal_cdf(z):
    """Standard normal CDF, computed on the lower tail for accuracy.

    Uses the Cephes ``ndtr`` kernel; evaluating 1 - cdf(-z) for z > 0 makes
    the result symmetric to rounding error.
    """
    z = np.asarray(z, dtype=np.float64)
    lower = special.ndtr(-np.abs(z))
    out = np.where(z > 0, 1.0 - lower, lower)
    return out if out.ndim else float(out)


def std_normal_pdf(z):
    z = np.asarray(z, dtype=np.float64)
    return np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)


def std_normal_quantile(p):
    """Inverse CDF: Cephes ``ndtri`` plus one Newton step against std_normal_cdf.

    Computed on the lower half and mirrored, so quantile(1-p) = -quantile(p).
    """
    p = np.asarray(p, dtype=np.float64)
    if np.any((p <= 0) | (p >= 1)):
        raise ValueError("quantile needs 0 < p < 1")
    q = np.minimum(p, 1.0 - p)
    z = special.ndtri(q)
    z = z - (std_normal_cdf(z) - q) / std_normal_pdf(z)
    z = np.where(q == 0.5, 0.0, z)
    out = np.where(p > 0.5, -z, z)
    return out if out.ndim else float(out)


def logistic_cdf(z):
    return special.expit(np.asarray(z, dtype=np.float64))


class DiscretizationGrid(NamedTuple):
    """2**r_q buckets of equal mass under N(loc, scale**2), per dimension."""
    r_q: int
    loc: np.ndarray
    scale: np.ndarray

    @property
    def n(self):
        return 1 << self.r_q

    def boundary(self, b):
        """Lower edge of bucket b; -inf for b=0 and +inf for b=n."""
        b = np.asarray(b)
        inner = (b > 0) & (b < self.n)
        p = np.where(inner, b, 1) / self.n
        z = self.loc + self.scale * std_normal_quantile(p)
        return np.where(b <= 0, -np.inf, np.where(b >= self.n, np.inf, z))

    def std_boundary(self, b):
        """Lower edge of bucket b in standard units of the grid's prior."""
        b = np.asarray(b)
        inner = (b > 0) & (b < self.n)
        z = std_normal_quantile(np.where(inner, b, 1) / self.n)
        return np.where(b <= 0, -np.inf, np.where(b >= self.n, np.inf, z))

    def centre(self, b):
        p = (np.asarray(b) + 0.5) / self.n
        return self.loc + self.scale * std_normal_quantile(p)

    def _all(self, b):
        # one row per bucket when the grid spans several dimensions
        return b.reshape((-1,) + (1,) * np.ndim(self.loc))

    def boundaries(self):
        return self.boundary(self._all(np.arange(1, self.n)))

    def centres(self):
        return self.centre(self._all(np.arange(self.n)))


def grid_for(prior_mu, prior_sigma, r_q=DEFAULT_RQ) -> DiscretizationGrid:
    if not 0 <= r_q <= 24:
        raise ValueError("r_q must be in 0..24")
    sigma = np.asarray(prior_sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ValueError("prior scale must be positive")
    return DiscretizationGrid(r_q, np.asarray(prior_mu, dtype=np.float64), sigma)


def bucket_index(grid: DiscretizationGrid, z):
    """Bucket containing z; a point on a boundary belongs to the upper bucket."""
    z = np.asarray(z, dtype=np.float64)
    u = (z - grid.loc) / grid.scale
    i = np.clip(np.floor(std_normal_cdf(u) * grid.n), 0, grid.n - 1).astype(np.int64)
    # the CDF guess can be off by one near boundaries
    for _ in range(4):
        lo = grid.boundary(i)
        hi = grid.boundary(i + 1)
        i = np.where(z < lo, i - 1, np.where(z >= hi, i + 1, i))
    return i if i.ndim else int(i)


def dynamic_grid(layer, centres_above, prior, r_q=DEFAULT_RQ) -> DiscretizationGrid:
    """Grid under the conditional prior of ``layer`` given higher-layer centres.

    ``prior`` must provide ``prior_params(layer, centres_above) -> (mu, sigma)``.
    """
    mu, sigma = prior.prior_params(layer, centres_above)
    return grid_for(mu, sigma, r_q)
