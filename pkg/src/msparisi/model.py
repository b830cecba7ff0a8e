"""Physical parameters of a multiscale SK instance and closed-form phase conditions.

A model is a number of coupling scales r, scale exponents
0 < zeta_0 < ... < zeta_r = 1, coupling strengths 0 < gamma_1 < ... < gamma_r
(gamma_0 = 0 is implicit), and a finitely atomic law for the quenched
external field h.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

PROB_TOL = 1e-12


@dataclass(frozen=True)
class FieldLaw:
    """Finitely atomic law of the external field h: pairs (value, probability)."""

    atoms: tuple[tuple[float, float], ...]

    @classmethod
    def point_mass(cls, value: float = 0.0) -> "FieldLaw":
        return cls(atoms=((float(value), 1.0),))

    @property
    def values(self) -> np.ndarray:
        return np.array([a[0] for a in self.atoms], dtype=float)

    @property
    def probs(self) -> np.ndarray:
        return np.array([a[1] for a in self.atoms], dtype=float)

    def moment(self, power: int) -> float:
        """Exact E[h^power] as a finite sum over atoms."""
        return float(np.sum(self.probs * self.values**power))

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values))) if self.atoms else 0.0

    def is_zero(self) -> bool:
        """True iff h = 0 almost surely."""
        return all(v == 0.0 for v, p in self.atoms if p > 0.0)

    def violations(self) -> list[str]:
        out = []
        if not self.atoms:
            out.append("field law has no atoms")
            return out
        if any(not math.isfinite(v) for v, _ in self.atoms):
            out.append("field atom values must be finite")
        if any(p < 0 for _, p in self.atoms):
            out.append("field atom probabilities must be nonnegative")
        total = math.fsum(p for _, p in self.atoms)
        if abs(total - 1.0) > PROB_TOL:
            out.append(f"field atom probabilities sum to {total!r}, not 1")
        return out


@dataclass(frozen=True)
class ModelParams:
    """A multiscale SK instance.

    zeta holds (zeta_0, ..., zeta_r) with zeta_r = 1; gamma holds
    (gamma_1, ..., gamma_r). gamma_0 = 0 is implicit and never stored.
    """

    r: int
    zeta: tuple[float, ...]
    gamma: tuple[float, ...]
    field: FieldLaw = field(default_factory=FieldLaw.point_mass)

    @property
    def gamma_r(self) -> float:
        return self.gamma[-1]

    @property
    def zeta_with_zero(self) -> np.ndarray:
        """(zeta_{-1}=0, zeta_0, ..., zeta_r) as an array."""
        return np.concatenate(([0.0], np.asarray(self.zeta, dtype=float)))

    @property
    def gamma_with_zero(self) -> np.ndarray:
        """(gamma_0=0, gamma_1, ..., gamma_r) as an array."""
        return np.concatenate(([0.0], np.asarray(self.gamma, dtype=float)))

    def beta2(self) -> np.ndarray:
        """Variance increments beta_l^2 = gamma_l^2 - gamma_{l-1}^2, l = 1..r."""
        g = self.gamma_with_zero
        return g[1:] ** 2 - g[:-1] ** 2

    def to_dict(self) -> dict:
        return {
            "r": self.r,
            "zeta": list(self.zeta),
            "gamma": list(self.gamma),
            "field": {"atoms": [[v, p] for v, p in self.field.atoms]},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        fd = d.get("field", {"atoms": [[0.0, 1.0]]})
        atoms = tuple((float(v), float(p)) for v, p in fd["atoms"])
        return cls(
            r=int(d["r"]),
            zeta=tuple(float(z) for z in d["zeta"]),
            gamma=tuple(float(g) for g in d["gamma"]),
            field=FieldLaw(atoms=atoms),
        )


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...]

    @property
    def valid(self) -> bool:
        return not self.violations


def validate_model(params: ModelParams) -> ValidationReport:
    """Check every structural invariant; an empty report means valid."""
    out: list[str] = []
    r, zeta, gamma = params.r, params.zeta, params.gamma
    if r < 1:
        out.append("r must be a positive integer")
    if len(zeta) != r + 1:
        out.append(f"zeta must have r+1 = {r + 1} entries, got {len(zeta)}")
    if len(gamma) != r:
        out.append(f"gamma must have r = {r} entries, got {len(gamma)}")
    if zeta:
        if zeta[0] <= 0.0:
            out.append("zeta_0 must be positive")
        if zeta[-1] != 1.0:
            out.append("zeta_r must equal 1")
        if any(b <= a for a, b in zip(zeta, zeta[1:])):
            out.append("zeta not strictly increasing")
    if gamma:
        if gamma[0] <= 0.0:
            out.append("gamma_1 must be positive")
        if any(b <= a for a, b in zip(gamma, gamma[1:])):
            out.append("gamma not strictly increasing")
        if not all(math.isfinite(g) for g in gamma):
            out.append("gamma values must be finite")
    if len(gamma) == r and r >= 1 and not out:
        # strict gamma monotonicity from 0 already forces beta_l^2 > 0; keep
        # the explicit check so a report names the violated increment
        b2 = params.beta2()
        for ell, v in enumerate(b2, start=1):
            if v <= 0:
                out.append(f"variance increment beta_{ell}^2 = {v!r} not positive")
    out.extend(params.field.violations())
    return ValidationReport(violations=tuple(out))


def lowtemp_lhs(params: ModelParams) -> float:
    """The low-temperature indicator sum.

    Returns sum_l (zeta_l - zeta_{l-1}) (1 - 2 gamma_l^2) gamma_l^2 over the
    coupling scales l = 1..r; a negative value signals the low-temperature
    (forced RSB) condition.
    """
    g = np.asarray(params.gamma, dtype=float)
    dz = np.diff(np.asarray(params.zeta, dtype=float))
    return float(np.sum(dz * (1.0 - 2.0 * g**2) * g**2))


def annealed_region(params: ModelParams) -> bool:
    """True iff gamma_r^2 <= 1/2 and the field is zero a.s., where the
    annealed solution log 2 + gamma_r^2 / 2 is exact."""
    return params.gamma_r**2 <= 0.5 and params.field.is_zero()


def annealed_value(params: ModelParams) -> float:
    """The annealed pressure log 2 + gamma_r^2 / 2."""
    return math.log(2.0) + 0.5 * params.gamma_r**2


def load_model(path: str) -> ModelParams:
    with open(path) as f:
        return ModelParams.from_dict(json.load(f))
