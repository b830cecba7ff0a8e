"""Shared generators for randomized property tests (seeded, deterministic)."""

import numpy as np
import pytest

from msparisi import DiscreteMeasure, FieldLaw, ModelParams, ParisiPair, validate_model


def random_model(rng, r=None, gamma_lo=0.2, gamma_hi=1.6, field=None):
    """A valid random model; field defaults to the zero point mass."""
    r = int(r if r is not None else rng.integers(1, 4))
    while True:
        zeta = np.sort(rng.uniform(0.05, 0.95, size=r))
        if r == 1 or np.min(np.diff(zeta)) > 0.02:
            break
    while True:
        gamma = np.sort(rng.uniform(gamma_lo, gamma_hi, size=r))
        if r == 1 or np.min(np.diff(gamma)) > 0.02:
            break
    params = ModelParams(
        r=r,
        zeta=tuple(zeta) + (1.0,),
        gamma=tuple(gamma),
        field=field or FieldLaw.point_mass(),
    )
    assert validate_model(params).valid
    return params


def random_measure(rng, max_atoms=5, hi=0.99):
    n = int(rng.integers(1, max_atoms + 1))
    vals = np.unique(np.round(rng.uniform(0.0, hi, size=n), 6))
    w = rng.uniform(0.1, 1.0, size=len(vals))
    w = w / w.sum()
    return DiscreteMeasure.from_pairs(zip(vals, w))


def random_pair(rng, params, extra=2, min_gap=0.03, x_lo=0.05, x_hi=0.95):
    """A valid pair on a zeta-anchored grid with `extra` additional levels and
    well-separated x values (safe for finite-difference probes)."""
    zeta = np.asarray(params.zeta, dtype=float)
    ex = int(rng.integers(0, extra + 1))
    inner = rng.uniform(zeta[0] + 0.02, 0.98, size=ex)
    xi_core = np.unique(np.concatenate((zeta, inner)))
    xi = np.concatenate((xi_core, [1.0]))
    k = len(xi) - 2
    raw = np.sort(rng.uniform(x_lo, x_hi, size=k))
    for i in range(1, k):
        raw[i] = max(raw[i], raw[i - 1] + min_gap)
    x = np.concatenate(([0.0], np.clip(raw, 0.0, 0.99), [1.0]))
    return ParisiPair.build(xi, x, params)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
