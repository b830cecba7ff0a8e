"""Atomic probability measures on [0,1): quantiles, Wasserstein-1, the maps
between measures and RSB sequence pairs, synchronized couplings with the
coupling-scale variable, conditional overlap measures and gap detection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelParams

SNAP = 1e-14  # resolution below which breakpoints are considered equal


class InvariantViolation(ValueError):
    """A structural invariant of a measure or sequence pair is broken."""


@dataclass(frozen=True)
class DiscreteMeasure:
    """Atomic measure with atoms y (strictly increasing, in [0,1)) and
    cumulative masses m_i = mu([0, y_i]) ending exactly at 1."""

    atoms: np.ndarray
    cdf: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.atoms, dtype=float)
        m = np.asarray(self.cdf, dtype=float)
        object.__setattr__(self, "atoms", y)
        object.__setattr__(self, "cdf", m)
        if y.shape != m.shape or y.ndim != 1 or y.size == 0:
            raise InvariantViolation("atoms and cdf must be equal-length 1-d arrays")
        if np.any(np.diff(y) <= 0):
            raise InvariantViolation("atoms not strictly increasing")
        if y[0] < 0.0 or y[-1] >= 1.0:
            raise InvariantViolation("atoms must lie in [0, 1)")
        if np.any(np.diff(m) <= 0) or m[-1] != 1.0:
            raise InvariantViolation("cdf must be strictly increasing and end at 1")
        if m[0] <= 0.0:
            raise InvariantViolation("first atom carries no mass")

    @classmethod
    def from_pairs(cls, pairs) -> "DiscreteMeasure":
        """Build from (value, weight) pairs; values within SNAP are merged and
        the total weight is required to be 1 within 1e-12."""
        pairs = [(float(v), float(w)) for v, w in pairs]
        total = sum(w for _, w in pairs)
        if abs(total - 1.0) > 1e-12:
            raise InvariantViolation(f"weights sum to {total!r}, not 1")
        pairs.sort()
        vals: list[float] = []
        wts: list[float] = []
        for v, w in pairs:
            if w <= 0:
                continue
            if vals and abs(v - vals[-1]) <= SNAP:
                wts[-1] += w
            else:
                vals.append(v)
                wts.append(w)
        m = np.cumsum(wts)
        m[-1] = 1.0
        return cls(atoms=np.array(vals), cdf=m)

    @classmethod
    def point_mass(cls, value: float = 0.0) -> "DiscreteMeasure":
        return cls(atoms=np.array([float(value)]), cdf=np.array([1.0]))

    @property
    def weights(self) -> np.ndarray:
        return np.diff(self.cdf, prepend=0.0)

    def cdf_at(self, s: float) -> float:
        """mu([0, s]) for s >= 0."""
        i = np.searchsorted(self.atoms, s, side="right")
        return float(self.cdf[i - 1]) if i > 0 else 0.0

    def to_dict(self) -> dict:
        return {"atoms": [[float(v), float(w)] for v, w in zip(self.atoms, self.weights)]}

    @classmethod
    def from_dict(cls, d: dict) -> "DiscreteMeasure":
        return cls.from_pairs(d["atoms"])


def quantile(mu: DiscreteMeasure, p: float) -> float:
    """Left-continuous quantile inf{s : mu([0,s]) >= p} for p in [0, 1]."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"quantile level {p!r} outside [0, 1]")
    if p == 0.0:
        return 0.0
    i = np.searchsorted(mu.cdf, p, side="left")
    return float(mu.atoms[min(i, len(mu.atoms) - 1)])


def quantile_right_limit(mu: DiscreteMeasure, p: float) -> float:
    """lim_{q -> p+} of the quantile; exact for atomic measures."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"right quantile limit needs p in [0, 1), got {p!r}")
    i = np.searchsorted(mu.cdf, p, side="right")
    return float(mu.atoms[min(i, len(mu.atoms) - 1)])


def wasserstein1(mu1: DiscreteMeasure, mu2: DiscreteMeasure) -> float:
    """Exact integral of |mu1^{-1}(p) - mu2^{-1}(p)| over p in [0,1].

    Both quantiles are staircase functions of p, constant on the half-open
    intervals between CDF breakpoints, so the integral is a finite sum over
    the merged breakpoint grid.
    """
    ps = np.unique(np.concatenate((mu1.cdf, mu2.cdf)))
    prev = 0.0
    total = 0.0
    for p in ps:
        # quantile is constant on (prev, p]; evaluate at the right endpoint
        total += (p - prev) * abs(quantile(mu1, p) - quantile(mu2, p))
        prev = p
    return total


@dataclass(frozen=True)
class ParisiPair:
    """RSB candidate: xi_0 <= ... <= xi_k = xi_{k+1} = 1 containing every
    zeta anchor, x_0 = 0 <= x_1 <= ... <= x_k <= x_{k+1} = 1, and the derived
    per-level effective couplings gamma_tilde."""

    xi: np.ndarray
    x: np.ndarray
    gamma_tilde: np.ndarray

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float)
        x = np.asarray(self.x, dtype=float)
        gt = np.asarray(self.gamma_tilde, dtype=float)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "gamma_tilde", gt)
        if not (xi.shape == x.shape == gt.shape) or xi.ndim != 1 or xi.size < 2:
            raise InvariantViolation("xi, x, gamma_tilde must be equal-length 1-d arrays")
        if np.any(np.diff(xi) < -SNAP) or np.any(np.diff(x) < -SNAP):
            raise InvariantViolation("xi and x must be nondecreasing")
        if xi[-1] != 1.0 or xi[-2] != 1.0:
            raise InvariantViolation("xi must end with xi_k = xi_{k+1} = 1")
        if x[0] != 0.0 and gt[0] > 0.0:
            raise InvariantViolation("x_0 must be 0")
        if x[-1] != 1.0:
            raise InvariantViolation("x_{k+1} must be 1")
        if np.any(np.diff(gt**2 * x) < -1e-13):
            raise InvariantViolation("gamma_tilde_j^2 x_j must be nondecreasing")

    @property
    def k(self) -> int:
        return len(self.xi) - 2

    @classmethod
    def build(cls, xi, x, params: ModelParams) -> "ParisiPair":
        xi = np.asarray(xi, dtype=float)
        x = np.asarray(x, dtype=float)
        return cls(xi=xi, x=x, gamma_tilde=_effective_gammas(xi, params))

    def to_dict(self) -> dict:
        return {"xi": [float(v) for v in self.xi], "x": [float(v) for v in self.x]}


def _effective_gammas(xi: np.ndarray, params: ModelParams) -> np.ndarray:
    """gamma_tilde_j = gamma_l for the unique l with zeta_{l-1} < xi_j <= zeta_l,
    and 0 for xi_j <= zeta_0."""
    xi = np.asarray(xi, dtype=float)
    if np.any(xi <= 0.0) or np.any(xi > 1.0):
        raise ValueError("xi values must lie in (0, 1]")
    zeta = np.asarray(params.zeta, dtype=float)
    gamma0 = params.gamma_with_zero
    # index of the interval (zeta_{l-1}, zeta_l] containing xi_j; searchsorted
    # with side='left' puts xi_j == zeta_l into level l
    idx = np.searchsorted(zeta, xi, side="left")
    return gamma0[idx]


def measure_to_pair(mu: DiscreteMeasure, params: ModelParams) -> ParisiPair:
    """Map a measure to its sequence pair: xi = sorted(m union zeta) with a
    trailing duplicate 1, x_j the quantile of mu at xi_j, x_{k+1} = 1.

    Repetitions in x occur exactly at indices whose xi value is a zeta anchor
    missing from the CDF of mu, so the result is a minimal pair.
    """
    zeta = np.asarray(params.zeta, dtype=float)
    cdf = mu.cdf.copy()
    # snap CDF values sitting within SNAP of an anchor onto the anchor, so the
    # anchors survive breakpoint merging exactly and zeta stays a subset of xi
    i = np.clip(np.searchsorted(zeta, cdf), 0, len(zeta) - 1)
    for cand in (i, np.maximum(i - 1, 0)):
        hit = np.abs(cdf - zeta[cand]) <= SNAP
        cdf[hit] = zeta[cand][hit]
    merged = np.concatenate((cdf, zeta))
    merged = np.sort(merged)
    keep = np.concatenate(([True], np.diff(merged) > SNAP))
    xi_core = merged[keep]
    xi = np.concatenate((xi_core, [1.0]))
    x = np.array([quantile(mu, p) for p in xi_core] + [1.0])
    return ParisiPair.build(xi, x, params)


def pair_to_measure(pair: ParisiPair) -> DiscreteMeasure:
    """Law of the value x_j drawn with probability xi_j - xi_{j-1}; equal
    x values merge their weights. Inverse of measure_to_pair on minimal pairs."""
    xi = pair.xi
    x = pair.x
    k = pair.k
    weights = np.diff(xi[: k + 1], prepend=0.0)
    pairs = [(x[j], weights[j]) for j in range(k + 1) if weights[j] > 0]
    return DiscreteMeasure.from_pairs(pairs)


def level_indices(pair: ParisiPair, params: ModelParams, ell: int) -> np.ndarray:
    """Indices j <= k with zeta_{l-1} < xi_j <= zeta_l (the set K_l)."""
    z = params.zeta_with_zero
    lo, hi = z[ell], z[ell + 1]
    k = pair.k
    xi = pair.xi[: k + 1]
    return np.nonzero((xi > lo) & (xi <= hi))[0]


def conditional_moment(
    mu: DiscreteMeasure, params: ModelParams, ell: int, power: int
) -> float:
    """Moment of order `power` of the overlap conditioned on the coupling
    scale Gamma = gamma_l under the synchronized coupling."""
    if not 1 <= ell <= params.r:
        raise ValueError(f"level index {ell} outside 1..{params.r}")
    pair = measure_to_pair(mu, params)
    idx = level_indices(pair, params, ell)
    xi = pair.xi
    dz = params.zeta[ell] - params.zeta[ell - 1]
    dxi = np.diff(xi, prepend=0.0)
    return float(np.sum(dxi[idx] * pair.x[idx] ** power) / dz)


def gap_delta(mu: DiscreteMeasure, params: ModelParams, ell: int) -> float:
    """Size of the quantile jump of mu at height zeta_l (plateau width of the
    CDF); nonnegative, zero when the quantile is continuous there."""
    if not 1 <= ell <= params.r - 1:
        raise ValueError(f"gap level {ell} outside 1..{params.r - 1}")
    z = float(params.zeta[ell])
    return quantile_right_limit(mu, z) - quantile(mu, z)


@dataclass(frozen=True)
class SyncCoupling:
    """Comonotone law of (mu^{-1}(U), mu_Gamma^{-1}(U)) as (x, gamma, prob)
    triples, U uniform on [0,1]."""

    pairs: tuple[tuple[float, float, float], ...]

    def marginal_x(self) -> list[tuple[float, float]]:
        agg: dict[float, float] = {}
        for xv, _, p in self.pairs:
            agg[xv] = agg.get(xv, 0.0) + p
        return sorted(agg.items())

    def marginal_gamma(self) -> list[tuple[float, float]]:
        agg: dict[float, float] = {}
        for _, gv, p in self.pairs:
            agg[gv] = agg.get(gv, 0.0) + p
        return sorted(agg.items())


def sync_coupling(mu: DiscreteMeasure, params: ModelParams) -> SyncCoupling:
    """Synchronized (monotone) coupling of mu with the coupling-scale law
    mu_Gamma(gamma_l) = zeta_l - zeta_{l-1}, gamma_0 = 0."""
    zeta = np.asarray(params.zeta, dtype=float)
    gamma0 = params.gamma_with_zero
    ps = np.unique(np.concatenate((mu.cdf, zeta)))
    out = []
    prev = 0.0
    for p in ps:
        w = p - prev
        if w > SNAP:
            xv = quantile(mu, p)
            gv = gamma0[np.searchsorted(zeta, p, side="left")]
            out.append((float(xv), float(gv), float(w)))
        prev = p
    return SyncCoupling(pairs=tuple(out))
