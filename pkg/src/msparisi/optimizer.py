"""Minimization of the Parisi functional over ordered x sequences on
zeta-anchored xi grids, level refinement, phase classification, and the
closed-form theorem checks (annealed curvature, plateau lower bound).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .measures import (
    DiscreteMeasure,
    ParisiPair,
    gap_delta,
    conditional_moment,
    pair_to_measure,
    quantile,
    quantile_right_limit,
)
from .model import ModelParams
from .parisi import (
    NumericsConfig,
    Recursion,
    consistency_values,
    default_numerics,
)


@dataclass(frozen=True)
class OptimReport:
    """Outcome of one optimization: the final pair, its value, the
    stationarity residual, and the refinement trace (k, value)."""

    pair: ParisiPair
    value: float
    residual: float
    iterations: int
    converged: bool
    refinement_history: tuple[tuple[int, float], ...] = ()
    init: str = "zero"

    def to_dict(self) -> dict:
        return {
            "pair": self.pair.to_dict(),
            "value": self.value,
            "residual": self.residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "refinement_history": [[k, v] for k, v in self.refinement_history],
            "init": self.init,
        }


@dataclass(frozen=True)
class PhaseLabel:
    """Phase classification of an optimized measure."""

    kind: str  # "Annealed" or "RSB"
    distinct_support_points: int
    support_points: tuple[float, ...]
    gaps: tuple[tuple[int, float], ...]
    conditional_moments: tuple[tuple[int, float], ...]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "distinct_support_points": self.distinct_support_points,
            "support_points": list(self.support_points),
            "gaps": [[l, g] for l, g in self.gaps],
            "conditional_moments": [[l, m] for l, m in self.conditional_moments],
        }


@dataclass(frozen=True)
class PlateauCheck:
    delta: float
    rhs: float
    holds: bool
    applicable: bool

    def to_dict(self) -> dict:
        return {"delta": self.delta, "rhs": self.rhs,
                "holds": self.holds, "applicable": self.applicable}


def build_xi(params: ModelParams, per_interval) -> np.ndarray:
    """zeta-anchored xi grid: xi_0 = zeta_0, each (zeta_{l-1}, zeta_l]
    subdivided evenly into per_interval levels (anchor included), plus the
    trailing duplicate 1."""
    if np.isscalar(per_interval):
        per_interval = [int(per_interval)] * params.r
    if len(per_interval) != params.r:
        raise ValueError("per_interval needs one entry per coupling scale")
    zeta = np.asarray(params.zeta, dtype=float)
    pts = [zeta[0]]
    for ell in range(1, params.r + 1):
        n = int(per_interval[ell - 1])
        if n < 1:
            raise ValueError("per_interval entries must be >= 1")
        lo, hi = zeta[ell - 1], zeta[ell]
        pts.extend(lo + (hi - lo) * (i / n) for i in range(1, n + 1))
    pts[-1] = 1.0
    return np.array(pts + [1.0])


def project_monotone(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto nondecreasing sequences in [0, 1]
    (pool adjacent violators, then clip)."""
    vals: list[float] = []
    counts: list[int] = []
    for u in v:
        vals.append(float(u))
        counts.append(1)
        while len(vals) > 1 and vals[-2] > vals[-1]:
            tot = vals[-1] * counts[-1] + vals[-2] * counts[-2]
            cnt = counts[-1] + counts[-2]
            vals.pop()
            counts.pop()
            vals[-1] = tot / cnt
            counts[-1] = cnt
    out = np.repeat(vals, counts)
    return np.clip(out, 0.0, 1.0)


def _make_pair(xi: np.ndarray, x_free: np.ndarray, params: ModelParams) -> ParisiPair:
    x = np.concatenate(([0.0], x_free, [1.0]))
    return ParisiPair.build(xi, x, params)


def _init_vector(init, k: int) -> tuple[np.ndarray, str]:
    if isinstance(init, str):
        if init == "zero":
            return np.zeros(k), "zero"
        if init == "linear":
            return np.arange(1, k + 1) / (k + 1), "linear"
        raise ValueError(f"unknown init {init!r}")
    arr = np.asarray(init, dtype=float)
    if arr.shape != (k,):
        raise ValueError(f"init vector must have length {k}")
    return project_monotone(arr), "warm"


def optimize_x(xi, params: ModelParams, num: NumericsConfig | None = None,
               init="zero", *, damping: float = 0.5, tol: float = 1e-8,
               max_iter: int = 5000, value_stability: float = 1e-10,
               stall_window: int = 150) -> OptimReport:
    """Damped fixed-point iteration x <- (1-d) x + d a(x) on the consistency
    map, with monotone projection after each step; falls back to projected
    gradient with backtracking when the fixed point stalls or cycles.

    Converged means the stationarity residual max_j |x_j - a_j| dropped below
    tol and the value was stable within value_stability over 5 iterations.
    """
    num = num or default_numerics()
    xi = np.asarray(xi, dtype=float)
    k = len(xi) - 2
    x, label = _init_vector(init, k)
    ws = num.resolve(params)
    dxi = np.diff(xi[: k + 1])
    gt = None
    values: list[float] = []
    best_res = np.inf
    stall = 0
    mode = "fp"
    it = 0
    val = np.nan
    res = np.inf
    d = damping
    prev_step = None
    for it in range(1, max_iter + 1):
        pair = _make_pair(xi, x, params)
        if gt is None:
            gt = pair.gamma_tilde[1:k + 1]
        rec = Recursion(pair, params, ws)
        a = consistency_values(pair, params, num, recursion=rec)
        val = rec.value()
        values.append(val)
        active = (dxi > 0) & (gt > 0)
        res = float(np.max(np.abs(x[active] - a[active]))) if active.any() else 0.0
        if res < tol and len(values) >= 5 and (max(values[-5:]) - min(values[-5:])) < value_stability:
            return OptimReport(pair=pair, value=val, residual=res,
                               iterations=it, converged=True, init=label)
        if res < 0.999 * best_res:
            best_res = res
            stall = 0
        else:
            stall += 1
        if mode == "fp" and stall > stall_window:
            mode = "pg"
            stall = 0
        if mode == "fp":
            # grow the damping while consecutive updates stay aligned
            # (monotone approach), shrink it on oscillation
            step = a - x
            if prev_step is not None:
                align = float(np.dot(step, prev_step))
                norms = float(np.linalg.norm(step) * np.linalg.norm(prev_step))
                if norms > 0:
                    d = min(0.98, d * 1.1) if align > 0.5 * norms else max(0.15, d * 0.5)
            prev_step = step
            x = project_monotone(x + d * step)
        else:
            g = gt**2 * dxi * (x - a)
            gnorm2 = float(np.sum(g * g))
            if gnorm2 == 0.0:
                x = project_monotone(a)
                continue
            alpha = 1.0
            accepted = False
            for _ in range(40):
                x_try = project_monotone(x - alpha * g)
                pair_try = _make_pair(xi, x_try, params)
                val_try = Recursion(pair_try, params, ws).value()
                if val_try <= val - 1e-4 * alpha * gnorm2:
                    x = x_try
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                # flat to machine precision along the gradient; take the
                # undamped consistency step and let the residual test decide
                x = project_monotone(a)
    pair = _make_pair(xi, x, params)
    return OptimReport(pair=pair, value=val, residual=res,
                       iterations=it, converged=False, init=label)


def _warm_start(old_pair: ParisiPair, new_xi: np.ndarray) -> np.ndarray:
    """Interpolate the previous optimum onto a finer grid through its
    quantile function."""
    mu = pair_to_measure(old_pair)
    k = len(new_xi) - 2
    return np.array([min(quantile(mu, p), 1.0) for p in new_xi[1:k + 1]])


def optimize_model(params: ModelParams, num: NumericsConfig | None = None,
                   per_interval=1, multistart: bool = True,
                   warm=None, **opt_kwargs) -> OptimReport:
    """Optimize x on the zeta-anchored grid with per_interval levels per
    scale interval; multistart runs zero and linear inits (plus a warm start
    when given) and keeps the best value."""
    xi = build_xi(params, per_interval)
    inits: list = ["zero", "linear"] if multistart else ["zero"]
    if warm is not None:
        inits.append(_warm_start(warm, xi))
    best: OptimReport | None = None
    for init in inits:
        rep = optimize_x(xi, params, num, init=init, **opt_kwargs)
        if best is None or (rep.converged and not best.converged) or (
                rep.converged == best.converged and rep.value < best.value):
            best = rep
    return best


def refine_k(params: ModelParams, num: NumericsConfig | None = None,
             schedule=(1, 2, 4, 8), improve_tol: float = 1e-7,
             multistart: bool = True, **opt_kwargs) -> OptimReport:
    """Optimize along a nondecreasing schedule of levels per zeta interval,
    warm-starting each stage from the previous optimum; stops once the value
    improvement between refinements falls below improve_tol."""
    if any(b < a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("schedule must be nondecreasing")
    history: list[tuple[int, float]] = []
    best: OptimReport | None = None
    for per in schedule:
        rep = optimize_model(params, num, per_interval=per, multistart=multistart,
                             warm=None if best is None else best.pair, **opt_kwargs)
        history.append((rep.pair.k, rep.value))
        improved = best is None or rep.value < best.value - 1e-15
        if improved:
            prev_val = None if best is None else best.value
            best = rep
            if prev_val is not None and prev_val - rep.value < improve_tol:
                break
        else:
            break
    return replace(best, refinement_history=tuple(history))


def classify_phase(report: OptimReport, params: ModelParams,
                   eps_support: float = 1e-4) -> PhaseLabel:
    """Annealed iff every free coordinate sits below eps_support; otherwise
    RSB with support points counted after clustering the order-parameter
    values at resolution eps_support."""
    if not report.converged:
        raise ValueError("refusing to classify an unconverged report")
    pair = report.pair
    k = pair.k
    x_free = pair.x[1:k + 1]
    annealed = bool(np.all(x_free < eps_support))
    mu = pair_to_measure(pair)
    zeta0 = float(params.zeta[0])
    # order-parameter support: x values at heights above zeta_0 (the levels
    # tied to actual coupling scales)
    sel = pair.xi[: k + 1] > zeta0
    support_vals = np.sort(pair.x[: k + 1][sel])
    clusters: list[list[float]] = []
    for v in support_vals:
        if clusters and v - clusters[-1][-1] <= eps_support:
            clusters[-1].append(v)
        else:
            clusters.append([v])
    centers = tuple(float(np.mean(c)) for c in clusters)
    gaps = tuple((ell, gap_delta(mu, params, ell)) for ell in range(1, params.r))
    moments = tuple(
        (ell, conditional_moment(mu, params, ell, 2)) for ell in range(1, params.r + 1))
    return PhaseLabel(
        kind="Annealed" if annealed else "RSB",
        distinct_support_points=len(clusters),
        support_points=centers,
        gaps=gaps,
        conditional_moments=moments,
    )


def _cdf_integral(mu: DiscreteMeasure, lo: float, hi: float = 1.0) -> float:
    """Exact integral of the CDF of mu over [lo, hi] (piecewise constant)."""
    if hi <= lo:
        return 0.0
    pts = [lo] + [float(y) for y in mu.atoms if lo < y < hi] + [hi]
    total = 0.0
    for a, b in zip(pts, pts[1:]):
        total += (b - a) * mu.cdf_at(a)
    return total


def plateau_bound_check(report: OptimReport, params: ModelParams,
                        ell: int, slack: float = 1e-9) -> PlateauCheck:
    """Lower bound on the quantile jump of the optimized measure at height
    zeta_l:

        Delta_l >= 2 (gamma_{l+1}^2 - gamma_l^2) mu^{-1}(zeta_l)
                   (integral_{mu^{-1}(zeta_l^+)}^1 mu([0, x]) dx)^2,

    applicable when zeta_l gamma_{l+1}^2 < 1/2.
    """
    if not report.converged:
        raise ValueError("refusing to check an unconverged report")
    if not 1 <= ell <= params.r - 1:
        raise ValueError(f"level {ell} outside 1..{params.r - 1}")
    applicable = params.zeta[ell] * params.gamma[ell] ** 2 < 0.5
    mu = pair_to_measure(report.pair)
    delta = gap_delta(mu, params, ell)
    q_left = quantile(mu, float(params.zeta[ell]))
    q_right = quantile_right_limit(mu, float(params.zeta[ell]))
    integral = _cdf_integral(mu, q_right, 1.0)
    rhs = 2.0 * (params.gamma[ell] ** 2 - params.gamma[ell - 1] ** 2) \
        * q_left * integral**2
    return PlateauCheck(delta=delta, rhs=rhs, holds=delta >= rhs - slack,
                        applicable=applicable)


def annealed_curvature(params: ModelParams) -> float:
    """Curvature of the one-level profile at zero coordinate,

        (1 - zeta_{r-1}) gamma_r^2 (1 - 2 gamma_r^2),

    positive below the annealed threshold gamma_r^2 = 1/2, zero at it,
    negative above (where the zero solution is a local maximum along this
    direction). Requires a zero field."""
    if not params.field.is_zero():
        raise ValueError("annealed_curvature requires the zero field law")
    zprev = float(params.zeta[params.r - 1])
    g2 = params.gamma_r**2
    return (1.0 - zprev) * g2 * (1.0 - 2.0 * g2)
