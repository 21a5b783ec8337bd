"""Probabilistic inter-view visibility.

Each view's fragments at a novel-view pixel define a mixture over depth:
component i sits at the fragment depth with weight
beta_i = alpha_i * prod_{j<i}(1 - alpha_j), and the residual transmittance
becomes a point at infinity so the density integrates to one. The depth
test evaluates P(D_n < min_{m != n} D_m) with a symmetric triangle kernel
of support 2*sigma around each component, by numerical integration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "DepthMixture",
    "build_mixture",
    "triangle_tail",
    "triangle_pdf",
    "prob_front",
    "prob_front_batch",
    "sample_min_oracle",
]


@dataclass
class DepthMixture:
    """(depth, weight) components plus the weight of the point at infinity."""

    depths: np.ndarray = field(default_factory=lambda: np.empty(0))
    betas: np.ndarray = field(default_factory=lambda: np.empty(0))
    beta_inf: float = 1.0

    def __post_init__(self):
        self.depths = np.asarray(self.depths, dtype=np.float64).ravel()
        self.betas = np.asarray(self.betas, dtype=np.float64).ravel()
        if self.depths.shape != self.betas.shape:
            raise InvalidInputError("depths and betas must have the same length")
        if np.any(self.betas < 0) or self.beta_inf < 0:
            raise InvalidInputError("mixture weights must be non-negative")
        total = self.betas.sum() + self.beta_inf
        if abs(total - 1.0) > 1e-9:
            raise InvalidInputError(f"mixture weights sum to {total}, expected 1")


def build_mixture(fragments) -> DepthMixture:
    """Depth mixture from one pixel's depth-sorted (alpha, depth) fragments.

    Accepts an iterable of (alpha, cam_depth) pairs; an empty list gives
    the pure point-at-infinity mixture.
    """
    alphas = np.array([f[0] for f in fragments], dtype=np.float64)
    depths = np.array([f[1] for f in fragments], dtype=np.float64)
    trans_before = np.cumprod(np.r_[1.0, 1.0 - alphas])[:-1]
    betas = alphas * trans_before
    beta_inf = float(np.prod(1.0 - alphas))
    return DepthMixture(depths=depths, betas=betas, beta_inf=beta_inf)


def triangle_pdf(t, x, sigma: float):
    """pdf of the symmetric triangle distribution of support 2*sigma at x."""
    t = np.asarray(t, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    d = np.abs(t - x)
    return np.where(d < sigma, (sigma - d) / (sigma * sigma), 0.0)


def triangle_tail(t, x, sigma: float):
    """Complement CDF of the triangle distribution: P(X > t) for X ~ tri(x).

    Piecewise: 1 below the support, 0 above, and the two quadratic arcs
    1 - (x - t + sigma)^2 / (2 sigma^2) on (x - sigma, x] and
    (t + sigma - x)^2 / (2 sigma^2) on (x, x + sigma].
    """
    if sigma <= 0:
        raise InvalidInputError("sigma must be positive")
    t = np.asarray(t, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    # both arcs collapse to 0.5 - v + v|v|/2 with v = (t - x)/sigma in [-1, 1]
    v = np.clip((t - x) / sigma, -1.0, 1.0)
    return 0.5 - v + 0.5 * v * np.abs(v)


def prob_front_batch(
    depths: np.ndarray,
    betas: np.ndarray,
    beta_inf: np.ndarray,
    sigma: float,
    samples: int,
) -> np.ndarray:
    """Vectorized soft depth test over pixels.

    `depths`/`betas` are (V, P, C) zero-padded component arrays (padded
    entries must have beta == 0), `beta_inf` is (V, P). Returns (V, P)
    per-view probabilities clamped to [0, 1].

    The quadrature samples the triangle support of each component at
    s(t) = d - sigma + 2 sigma t / (S + 1), t = 1..S.
    """
    if sigma <= 0:
        raise InvalidInputError("sigma must be positive")
    if samples < 1:
        raise InvalidInputError("sample count must be >= 1")
    depths = np.asarray(depths, dtype=np.float64)
    betas = np.asarray(betas, dtype=np.float64)
    beta_inf = np.asarray(beta_inf, dtype=np.float64)
    nviews, npix, _ = depths.shape
    tt = np.arange(1, samples + 1, dtype=np.float64)
    offsets = -sigma + 2.0 * sigma * tt / (samples + 1)  # (S,)

    # process pixels in order of component count so each chunk can slice
    # the padded arrays down to its true width; the (p, C, S, C) tail
    # tensor dominates both time and memory
    nz = betas > 0
    width = betas.shape[2]
    last = np.where(nz.any(axis=2), width - np.argmax(nz[:, :, ::-1], axis=2), 0)
    used = last.max(axis=0)  # (P,)
    order = np.argsort(used, kind="stable")
    result = np.zeros((nviews, npix))
    lo = 0
    while lo < npix:
        # bucket by power-of-two component count, then bound the chunk so
        # the tail tensor stays near 32 MB
        cap = 1 << max(0, int(used[order[lo]]) - 1).bit_length()
        bucket_end = lo + int(np.searchsorted(used[order[lo:]], cap, side="right"))
        chunk = max(1, int(4e6 / (cap * cap * samples)))
        hi = min(bucket_end, lo + chunk)
        idx = order[lo:hi]
        cmax = max(1, int(used[idx].max()))
        d_c = depths[:, idx, :cmax]
        b_c = betas[:, idx, :cmax]
        for n in range(nviews):
            s = d_c[n][..., None] + offsets  # (p, C, S)
            f = triangle_pdf(s, d_c[n][..., None], sigma)
            prod = np.ones_like(s)
            for m in range(nviews):
                if m == n:
                    continue
                # T(s, d_mj) summed over components j of view m; the tail
                # is computed in place to keep the big temporary count at one
                v = s[:, :, :, None] - d_c[m][:, None, None, :]
                v /= sigma
                np.clip(v, -1.0, 1.0, out=v)
                tails = 0.5 * v * np.abs(v)
                tails -= v
                tails += 0.5
                inner = (
                    np.einsum("pisj,pj->pis", tails, b_c[m])
                    + beta_inf[m, idx][:, None, None]
                )
                prod = prod * inner
            # weight = sample spacing, so the rule integrates the pdf to ~1
            integ = (2.0 * sigma / (samples + 1)) * np.sum(prod * f, axis=2)  # (p, C)
            result[n, idx] = np.sum(b_c[n] * integ, axis=1)
        lo = hi
    return np.clip(result, 0.0, 1.0)


def prob_front(mixtures, sigma: float, samples: int = 1) -> np.ndarray:
    """Per-view probability of being the front-most surface at one pixel.

    `mixtures` holds one DepthMixture per view. A view's own point at
    infinity contributes nothing to its probability.
    """
    if not mixtures:
        raise InvalidInputError("need at least one mixture")
    cmax = max(1, max(len(m.depths) for m in mixtures))
    nviews = len(mixtures)
    depths = np.zeros((nviews, 1, cmax))
    betas = np.zeros((nviews, 1, cmax))
    beta_inf = np.zeros((nviews, 1))
    for i, m in enumerate(mixtures):
        c = len(m.depths)
        depths[i, 0, :c] = m.depths
        betas[i, 0, :c] = m.betas
        beta_inf[i, 0] = m.beta_inf
    return prob_front_batch(depths, betas, beta_inf, sigma, samples)[:, 0]


def sample_min_oracle(mixtures, sigma: float, n_samples: int, seed: int):
    """Monte-Carlo estimate of the strict-minimum frequencies.

    Per draw, each view samples a component by weight (the infinity
    component maps to +inf) and then a depth from its triangle
    distribution; the strict-minimum view is tallied. Returns
    (per-view frequencies, all-infinity frequency).
    """
    if n_samples < 1:
        raise InvalidInputError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    nviews = len(mixtures)
    draws = np.empty((nviews, n_samples))
    for i, m in enumerate(mixtures):
        probs = np.r_[m.betas, m.beta_inf]
        probs = probs / probs.sum()
        comp = rng.choice(len(probs), size=n_samples, p=probs)
        centers = np.r_[m.depths, np.inf][comp]
        # sum of two uniforms gives the symmetric triangle on [-sigma, sigma]
        noise = sigma * (rng.random(n_samples) + rng.random(n_samples) - 1.0)
        draws[i] = np.where(np.isinf(centers), np.inf, centers + noise)

    finite_any = np.isfinite(draws).any(axis=0)
    dmin = draws.min(axis=0)
    is_min = (draws == dmin) & finite_any
    unique = is_min.sum(axis=0) == 1
    freqs = np.array(
        [np.count_nonzero(is_min[i] & unique) for i in range(nviews)],
        dtype=np.float64,
    )
    freq_inf = np.count_nonzero(~finite_any)
    return freqs / n_samples, freq_inf / n_samples
