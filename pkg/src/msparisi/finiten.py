"""Direct finite-N simulation of the multiscale SK model: exact spin sums,
nested Monte Carlo over the level-wise Gaussian couplings with probability
tilts, and estimators for the pressure and the level-wise overlap moments.

Seeding uses one substream per outer disorder sample derived from the master
seed with counter-based generators, so serial and threaded runs agree
bit-for-bit.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp

from .model import ModelParams

_INNER_CHUNK = 256  # batch size cap for vectorized leaf spin sums


@dataclass(frozen=True)
class DisorderSample:
    """One quenched draw: per-level coupling matrices g^(l) (N x N, iid
    standard Gaussians) and the field values h_i."""

    couplings: tuple[np.ndarray, ...]
    fields: np.ndarray
    seed: int | None = None


@dataclass(frozen=True)
class SimEstimate:
    """Monte Carlo estimate with outer-sample standard error and provenance."""

    mean: float
    stderr: float
    n_outer: int
    n_inner: tuple[int, ...]
    seed: int

    def to_row(self) -> dict:
        return {
            "mean": self.mean,
            "stderr": self.stderr,
            "n_outer": self.n_outer,
            "n_inner": "/".join(str(n) for n in self.n_inner),
            "seed": self.seed,
        }


@lru_cache(maxsize=4)
def spin_matrix(N: int) -> np.ndarray:
    """All 2^N spin configurations as rows of +-1."""
    if N > 20:
        raise ValueError(f"refusing to enumerate 2^{N} configurations")
    idx = np.arange(2**N, dtype=np.int64)
    return (((idx[:, None] >> np.arange(N)) & 1) * 2 - 1).astype(float)


def draw_disorder(params: ModelParams, N: int, seed: int) -> DisorderSample:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    gs = tuple(rng.standard_normal((N, N)) for _ in range(params.r))
    h = _draw_fields(params, N, rng)
    return DisorderSample(couplings=gs, fields=h, seed=seed)


def _draw_fields(params: ModelParams, N: int, rng: np.random.Generator) -> np.ndarray:
    vals = params.field.values
    probs = params.field.probs
    if len(vals) == 1:
        return np.full(N, vals[0])
    return rng.choice(vals, size=N, p=probs / probs.sum())


def _level_energies(params: ModelParams, N: int, couplings) -> np.ndarray:
    """Total interaction energy H_N(sigma) on every configuration:
    sum_l beta_l / sqrt(N) sum_ij g^(l)_ij sigma_i sigma_j."""
    S = spin_matrix(N)
    beta = np.sqrt(params.beta2())
    total = np.zeros(S.shape[0])
    for b, g in zip(beta, couplings):
        total += (b / math.sqrt(N)) * np.einsum("sn,nm,sm->s", S, g, S)
    return total


def exact_partition(params: ModelParams, N: int, sample: DisorderSample) -> float:
    """log Z_{r,N} = log sum_sigma exp(-H_N(sigma) - sum_i h_i sigma_i),
    computed by exact enumeration in the log domain."""
    if N > 20:
        raise ValueError(f"refusing exact enumeration at N = {N} > 20")
    S = spin_matrix(N)
    energy = _level_energies(params, N, sample.couplings)
    return float(logsumexp(-energy - S @ sample.fields))


def fully_annealed_pressure(params: ModelParams) -> float:
    """(1/N) E_h log E_g Z with every scale merged at exponent one; the
    Gaussian moment formula gives gamma_r^2/2 + E_h log 2 cosh(h) exactly,
    independent of N."""
    hv, hp = params.field.values, params.field.probs
    return 0.5 * params.gamma_r**2 + float(np.sum(hp * np.logaddexp(hv, -hv)))


def _log_mean_exp_jackknife(a: np.ndarray, correct: bool = True) -> float:
    """log of the sample mean of exp(a), with first-order jackknife bias
    correction for the downstream log transform."""
    n = a.size
    amax = float(np.max(a))
    s = np.exp(a - amax)
    total = float(np.sum(s))
    full = amax + math.log(total / n)
    if not correct or n < 8:
        return full
    rest = total - s
    if np.min(rest) <= total * 1e-12:
        return full  # one sample dominates; the correction is unreliable
    loo = amax + np.log(rest / (n - 1))
    return n * full - (n - 1) * float(np.mean(loo))


def _batched_leaf_log_partitions(params: ModelParams, N: int, rng,
                                 n_samples: int, energy_fixed: np.ndarray,
                                 h_term: np.ndarray, level: int,
                                 want_corr: bool = False):
    """Draw n_samples coupling matrices for scale level+1 and return the exact
    log partition (and optionally the pair-correlation matrices) for each."""
    S = spin_matrix(N)
    beta = math.sqrt(params.beta2()[level])
    logZ = np.empty(n_samples)
    corr = np.empty((n_samples, N, N)) if want_corr else None
    done = 0
    while done < n_samples:
        b = min(_INNER_CHUNK, n_samples - done)
        G = rng.standard_normal((b, N, N))
        e = (beta / math.sqrt(N)) * np.einsum("sn,bnm,sm->bs", S, G, S)
        logits = -(energy_fixed[None, :] + e) - h_term[None, :]
        logZ[done:done + b] = logsumexp(logits, axis=1)
        if want_corr:
            p = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
            corr[done:done + b] = np.einsum("bs,sn,sm->bnm", p, S, S)
        done += b
    return (logZ, corr) if want_corr else logZ


def _nested_log_z(params: ModelParams, N: int, rng, n_inner,
                  level: int, energy_fixed: np.ndarray,
                  h_term: np.ndarray, bias_correction: bool) -> float:
    """Estimate of log Z_{level,N} given the couplings of scales <= level
    (already folded into energy_fixed)."""
    if level == params.r:
        return float(logsumexp(-energy_fixed - h_term))
    n = int(n_inner[level])
    if level + 1 == params.r:
        logZs = _batched_leaf_log_partitions(
            params, N, rng, n, energy_fixed, h_term, level)
    else:
        S = spin_matrix(N)
        beta = math.sqrt(params.beta2()[level])
        logZs = np.empty(n)
        for i in range(n):
            g = rng.standard_normal((N, N))
            e = (beta / math.sqrt(N)) * np.einsum("sn,nm,sm->s", S, g, S)
            logZs[i] = _nested_log_z(params, N, rng, n_inner, level + 1,
                                     energy_fixed + e, h_term, bias_correction)
    zl = float(params.zeta[level])
    return _log_mean_exp_jackknife(zl * logZs, correct=bias_correction) / zl


def _outer_seeds(seed: int, n_outer: int):
    return np.random.SeedSequence(seed).spawn(n_outer)


def _run_outer(fn, n_outer: int, threads: int | None) -> np.ndarray:
    out = np.empty(n_outer)
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for i, v in zip(range(n_outer), pool.map(fn, range(n_outer))):
                out[i] = v
    else:
        for i in range(n_outer):
            out[i] = fn(i)
    return out


def nested_pressure(params: ModelParams, N: int, n_outer: int, n_inner,
                    seed: int, bias_correction: bool = True,
                    threads: int | None = None,
                    allow_deep: bool = False) -> SimEstimate:
    """Nested Monte Carlo estimate of the pressure per particle
    (1/N) E_h log Z_{0,N}.

    Each outer sample draws fresh fields and runs the level recursion
    Z_{l-1}^{zeta_{l-1}} = E_{l-1} Z_l^{zeta_{l-1}} with n_inner[l] coupling
    draws per level (log-sum-exp stabilized, jackknife-corrected for the
    log-of-mean bias). The standard error comes from the outer samples only;
    inner bias is documented, not propagated.
    """
    n_inner = tuple(int(n) for n in (n_inner if np.iterable(n_inner) else [n_inner]))
    if len(n_inner) != params.r:
        raise ValueError(f"n_inner needs one entry per scale, got {len(n_inner)}")
    if params.r > 2 and not allow_deep:
        raise ValueError(
            f"nesting depth r = {params.r} is expensive (cost is the product of "
            "all inner sample sizes); pass allow_deep=True to proceed")
    if N > 20:
        raise ValueError(f"refusing exact enumeration at N = {N} > 20")
    S = spin_matrix(N)
    seeds = _outer_seeds(seed, n_outer)

    def one(i: int) -> float:
        rng = np.random.Generator(np.random.Philox(seeds[i]))
        h = _draw_fields(params, N, rng)
        h_term = S @ h
        logz0 = _nested_log_z(params, N, rng, n_inner, 0,
                              np.zeros(S.shape[0]), h_term, bias_correction)
        if not math.isfinite(logz0):
            raise FloatingPointError(
                f"non-finite nested partition value at outer sample {i} (seed {seed})")
        return logz0 / N

    vals = _run_outer(one, n_outer, threads)
    stderr = float(np.std(vals, ddof=1) / math.sqrt(n_outer)) if n_outer > 1 else 0.0
    return SimEstimate(mean=float(np.mean(vals)), stderr=stderr,
                       n_outer=n_outer, n_inner=n_inner, seed=seed)


def overlap_msq_exact(params: ModelParams, N: int, sample: DisorderSample) -> float:
    """<q^2> of two independent Gibbs replicas at fixed disorder:
    (1/N^2) sum_ij <sigma_i sigma_j>^2, by exact enumeration."""
    S = spin_matrix(N)
    energy = _level_energies(params, N, sample.couplings)
    logits = -energy - S @ sample.fields
    p = np.exp(logits - logsumexp(logits))
    corr = np.einsum("s,sn,sm->nm", p, S, S)
    return float(np.sum(corr**2) / N**2)


def overlap_moment_sim(params: ModelParams, N: int, ell: int, n_outer: int,
                       n_inner, seed: int, threads: int | None = None) -> SimEstimate:
    """Estimate of the scale-ell replicated overlap second moment
    E_h < <q^2>^(ell) >^(0).

    Replicas at scale ell share the couplings of scales <= ell; the tilted
    averages over the faster scales use self-normalized weights built from
    the same partition values as the pressure recursion. Supported depths:
    r = 1 and r = 2.
    """
    n_inner = tuple(int(n) for n in (n_inner if np.iterable(n_inner) else [n_inner]))
    if len(n_inner) != params.r:
        raise ValueError(f"n_inner needs one entry per scale, got {len(n_inner)}")
    if not 1 <= ell <= params.r:
        raise ValueError(f"scale index {ell} outside 1..{params.r}")
    if params.r > 2:
        raise ValueError("overlap estimator implemented for r <= 2")
    if N > 20:
        raise ValueError(f"refusing exact enumeration at N = {N} > 20")
    S = spin_matrix(N)
    seeds = _outer_seeds(seed, n_outer)
    zeta = np.asarray(params.zeta, dtype=float)

    def tilt_weights(exponent: float, logZs: np.ndarray) -> np.ndarray:
        w = np.exp(exponent * (logZs - np.max(logZs)))
        return w / np.sum(w)

    def one(i: int) -> float:
        rng = np.random.Generator(np.random.Philox(seeds[i]))
        h = _draw_fields(params, N, rng)
        h_term = S @ h
        zeros = np.zeros(S.shape[0])
        if params.r == 1:
            # <q^2>^(1) is the exact Gibbs pair correlation per coupling draw;
            # the scale-0 tilt weights are Z^zeta_0 normalized over the draws
            logZ, corr = _batched_leaf_log_partitions(
                params, N, rng, n_inner[0], zeros, h_term, 0, want_corr=True)
            q2 = np.einsum("bnm,bnm->b", corr, corr) / N**2
            return float(tilt_weights(zeta[0], logZ) @ q2)
        # r == 2
        beta1 = math.sqrt(params.beta2()[0])
        n0, n1 = n_inner
        logZ1 = np.empty(n0)
        obs = np.empty(n0)
        for a in range(n0):
            g1 = rng.standard_normal((N, N))
            e1 = (beta1 / math.sqrt(N)) * np.einsum("sn,nm,sm->s", S, g1, S)
            logZ2, corr2 = _batched_leaf_log_partitions(
                params, N, rng, n1, e1, h_term, 1, want_corr=True)
            w1 = tilt_weights(zeta[1], logZ2)
            if ell == 2:
                q2 = np.einsum("bnm,bnm->b", corr2, corr2) / N**2
                obs[a] = float(w1 @ q2)
            else:
                mean_corr = np.einsum("b,bnm->nm", w1, corr2)
                obs[a] = float(np.sum(mean_corr**2) / N**2)
            logZ1[a] = _log_mean_exp_jackknife(zeta[1] * logZ2) / zeta[1]
        return float(tilt_weights(zeta[0], logZ1) @ obs)

    vals = _run_outer(one, n_outer, threads)
    stderr = float(np.std(vals, ddof=1) / math.sqrt(n_outer)) if n_outer > 1 else 0.0
    return SimEstimate(mean=float(np.mean(vals)), stderr=stderr,
                       n_outer=n_outer, n_inner=n_inner, seed=seed)
