"""Evaluation of the multiscale Parisi functional and its analytic gradients.

The functional of a sequence pair (x, xi) with effective couplings
gamma_tilde is

    P(x, xi) = E_h Phi_0(h)
               - (1/2) sum_{j=0}^{k} xi_j [(gt_{j+1} x_{j+1})^2 - (gt_j x_j)^2]

where Phi_{k+1}(z) = log 2 cosh(z) and, going backwards,

    Phi_{j-1}(z) = (1/xi_{j-1}) log E_eta exp(xi_{j-1} Phi_j(z + c_j eta)),
    c_j = sqrt(2 (gt_j^2 x_j - gt_{j-1}^2 x_{j-1})),  eta ~ N(0,1).

The nested Gaussian structure depends on (eta_1, ..., eta_j) only through the
accumulated field, so the recursion runs over scalar functions on a z grid:
Gauss-Hermite quadrature per level with cubic interpolation between grid
nodes and a linear extension beyond the grid (where the level functions are
asymptotically linear with slope +-1 and the quadrature weight is negligible).

Gradients in x use the tilted-density identity

    dP/dx_j = gt_j^2 (xi_j - xi_{j-1}) [x_j - a_j],
    a_j = integral p_j(z) m_j(z)^2 dz,   m_j = dPhi_j/dz,

with p_j the forward flow of tilted densities. Where the flow is too narrow
to resolve on the grid, the same a_j is computed by backward composition of
the tilt operators, which needs no density representation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import logsumexp

from .measures import (
    DiscreteMeasure,
    InvariantViolation,
    ParisiPair,
    _effective_gammas,
    measure_to_pair,
)
from .model import ModelParams

_LOG2 = math.log(2.0)
_SQRT2 = math.sqrt(2.0)
_HALF_LOG_PI = 0.5 * math.log(math.pi)
_ZERO_C = 1e-12  # increments below this are treated as exact copy steps


class AccuracyError(RuntimeError):
    """A numerical-accuracy guard tripped (grid too narrow or flow unresolvable)."""


class NotStationaryError(ValueError):
    """An operation valid only at stationary pairs was called elsewhere."""


@dataclass
class NumericsConfig:
    """Grid and quadrature settings for the recursion evaluator.

    grid_half_width = None applies the rule max|h| + 6 sqrt(2) gamma_r.
    The field expectation is always the exact sum over the atoms of the
    field law; interpolation between grid nodes is cubic.
    """

    quad_nodes: int = 40
    grid_points: int = 2049
    grid_half_width: float | None = None
    interp: str = "cubic"

    def to_dict(self) -> dict:
        return {
            "quad_nodes": self.quad_nodes,
            "grid_points": self.grid_points,
            "grid_half_width": self.grid_half_width,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NumericsConfig":
        return cls(
            quad_nodes=int(d.get("quad_nodes", 40)),
            grid_points=int(d.get("grid_points", 2049)),
            grid_half_width=d.get("grid_half_width"),
        )

    def resolve(self, params: ModelParams) -> "_Workspace":
        if self.quad_nodes < 8:
            raise ValueError("quad_nodes must be at least 8")
        if self.grid_points < 257:
            raise ValueError("grid_points must be at least 257")
        if self.interp != "cubic":
            raise ValueError("only cubic interpolation is supported")
        rule = params.field.max_abs() + 6.0 * _SQRT2 * params.gamma_r
        if self.grid_half_width is None:
            half = rule
        else:
            half = float(self.grid_half_width)
            if half < rule:
                raise AccuracyError(
                    f"grid_half_width {half} below the safe width {rule:.6g}; "
                    "quadrature excursions would leave the grid"
                )
        return _Workspace(self, params, half)


class _Workspace:
    """Resolved grid and quadrature arrays shared by one evaluation."""

    def __init__(self, config: NumericsConfig, params: ModelParams, half: float):
        self.config = config
        self.half = half
        self.z = np.linspace(-half, half, config.grid_points)
        self.dz = self.z[1] - self.z[0]
        t, w = np.polynomial.hermite.hermgauss(config.quad_nodes)
        self.nodes = _SQRT2 * t  # E f(eta) = sum weights f(nodes)
        self.log_weights = np.log(w) - _HALF_LOG_PI


def default_numerics() -> NumericsConfig:
    return NumericsConfig()


def effective_gammas(xi, params: ModelParams) -> np.ndarray:
    """Per-level effective coupling: gamma_l on the band zeta_{l-1} < xi_j <= zeta_l,
    zero at or below zeta_0."""
    return _effective_gammas(np.asarray(xi, dtype=float), params)


def _log2cosh(z):
    return np.logaddexp(z, -z)


class _Interp:
    """Cubic spline with a configurable extension outside the grid."""

    def __init__(self, z, vals, tail="const", slopes=(0.0, 0.0)):
        self._sp = CubicSpline(z, vals, axis=0)
        self._lo, self._hi = z[0], z[-1]
        self._tail = tail
        self._slopes = slopes

    def __call__(self, q):
        q = np.asarray(q, dtype=float)
        qc = np.clip(q, self._lo, self._hi)
        out = self._sp(qc)
        if self._tail == "zero":
            mask = (q < self._lo) | (q > self._hi)
            if np.any(mask):
                mask = mask.reshape(mask.shape + (1,) * (out.ndim - mask.ndim))
                out = np.where(mask, 0.0, out)
        elif self._tail == "linear":
            over = self._slopes[0] * np.minimum(q - self._lo, 0.0) \
                 + self._slopes[1] * np.maximum(q - self._hi, 0.0)
            out = out + over.reshape(over.shape + (1,) * (out.ndim - over.ndim))
        return out


def _canonical(pair: ParisiPair, params: ModelParams) -> ParisiPair:
    """Normalize a pair for evaluation: drop levels strictly below zeta_0
    (their effective coupling is zero, so they cannot affect the functional)
    and pin the x coordinate at the zeta_0 anchor to 0."""
    zeta0 = float(params.zeta[0])
    xi, x = pair.xi, pair.x
    keep = xi >= zeta0
    if not keep.any() or xi[keep][0] != zeta0:
        raise InvariantViolation("xi must contain the anchor zeta_0")
    xi2 = xi[keep].copy()
    x2 = x[keep].copy()
    x2[0] = 0.0
    gt2 = _effective_gammas(xi2, params)
    if np.any(np.diff(gt2**2 * x2) < -1e-13):
        raise InvariantViolation("negative variance increment in the recursion")
    return ParisiPair(xi=xi2, x=x2, gamma_tilde=gt2)


def _increments(pair: ParisiPair) -> np.ndarray:
    """c_j = sqrt(2 (gt_j^2 x_j - gt_{j-1}^2 x_{j-1})) for j = 1..k+1;
    entry 0 is unused padding. Note the variance increment is linear in x,
    unlike the quadratic telescoping term of the functional."""
    g2x = pair.gamma_tilde**2 * pair.x
    d = np.diff(g2x)
    d[np.abs(d) < _ZERO_C**2] = 0.0
    if np.any(d < 0):
        raise InvariantViolation("negative variance increment in the recursion")
    return np.concatenate(([0.0], np.sqrt(2.0 * d)))


_SUBSTEP_C = 0.75  # kernel widths above this split into exact Gaussian substeps


@dataclass(frozen=True)
class GridFunction:
    """A level function of the recursion materialized on the grid: values
    phi_j(z) and the derivative m_j(z) = d phi_j / dz. phi_j is convex and
    |m_j| <= 1 everywhere (m_j is a nested tilted average of tanh)."""

    z: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray


@dataclass(frozen=True)
class _Step:
    """One backward quadrature (or closed-form) application: integrate a
    Gaussian of width c at tilt exponent xi_prev, mapping the function at
    node src (upper) to the function at node dst (lower)."""

    level: int
    c: float
    xi_prev: float
    src: int
    dst: int


class Recursion:
    """Backward recursion workspace.

    Functions live at "nodes": node 0 is the top level k+1; every Gaussian
    (sub)step adds one node. While the tilt exponent is exactly 1 the steps
    have the closed form E 2cosh(y + c eta) = 2cosh(y) exp(c^2/2), so those
    nodes stay analytic (log 2 cosh plus an offset). Kernels wider than
    _SUBSTEP_C split into equal substeps with the same exponent, which is an
    exact identity and keeps the quadrature in its fast-convergence regime.
    """

    def __init__(self, pair: ParisiPair, params: ModelParams, ws: _Workspace):
        self.pair = pair
        self.params = params
        self.ws = ws
        self.c = _increments(pair)
        self.k = pair.k
        # node storage: offset for analytic nodes, (phi, m) arrays otherwise
        self._offset: list[float | None] = [0.0]
        self._phi: list[np.ndarray | None] = [None]
        self._m: list[np.ndarray | None] = [None]
        self._interp: dict[tuple[int, str], _Interp] = {}
        self.steps: list[_Step] = []
        self.level_node: dict[int, int] = {self.k + 1: 0}
        self._run()

    # -- construction ------------------------------------------------------

    def _run(self):
        xi = self.pair.xi
        node = 0
        for j in range(self.k + 1, 0, -1):
            cj = self.c[j]
            if cj == 0.0:
                self.level_node[j - 1] = node
                continue
            xi_prev = float(xi[j - 1])
            if self._offset[node] is not None and xi_prev == 1.0:
                # closed form: the source is 2cosh-type and the exponent is 1
                new_offset = self._offset[node] + 0.5 * cj * cj
                self._offset.append(new_offset)
                self._phi.append(None)
                self._m.append(None)
                self.steps.append(_Step(j, cj, 1.0, node, node + 1))
                node += 1
            else:
                n_sub = max(1, int(math.ceil((cj / _SUBSTEP_C) ** 2)))
                c_sub = cj / math.sqrt(n_sub)
                for _ in range(n_sub):
                    phi, m = self._quad_step(node, c_sub, xi_prev)
                    self._offset.append(None)
                    self._phi.append(phi)
                    self._m.append(m)
                    self.steps.append(_Step(j, c_sub, xi_prev, node, node + 1))
                    node += 1
            self.level_node[j - 1] = node

    def _quad_step(self, src: int, c: float, xi_prev: float):
        z = self.ws.z
        q = z[:, None] + c * self.ws.nodes[None, :]
        phi_q = self.node_phi(src, q)
        m_q = self.node_m(src, q)
        if xi_prev > 0.0:
            a = self.ws.log_weights[None, :] + xi_prev * phi_q
            amax = np.max(a, axis=1, keepdims=True)
            e = np.exp(a - amax)
            s = np.sum(e, axis=1)
            phi = (np.log(s) + amax[:, 0]) / xi_prev
            m = np.sum(e * m_q, axis=1) / s
        else:
            # exponent-zero limit: plain Gaussian expectation
            w = np.exp(self.ws.log_weights)
            phi = phi_q @ w
            m = m_q @ w
        return phi, m

    # -- node evaluation ----------------------------------------------------

    def node_phi(self, node: int, q) -> np.ndarray:
        off = self._offset[node]
        if off is not None:
            return _log2cosh(np.asarray(q, dtype=float)) + off
        key = (node, "phi")
        if key not in self._interp:
            mn = self._m[node]
            slopes = (float(np.clip(mn[0], -1.0, 1.0)),
                      float(np.clip(mn[-1], -1.0, 1.0)))
            self._interp[key] = _Interp(self.ws.z, self._phi[node],
                                        tail="linear", slopes=slopes)
        return self._interp[key](q)

    def node_m(self, node: int, q) -> np.ndarray:
        if self._offset[node] is not None:
            return np.tanh(np.asarray(q, dtype=float))
        key = (node, "m")
        if key not in self._interp:
            self._interp[key] = _Interp(self.ws.z, self._m[node], tail="const")
        return self._interp[key](q)

    def phi_at(self, j: int, q) -> np.ndarray:
        return self.node_phi(self.level_node[j], q)

    def m_at(self, j: int, q) -> np.ndarray:
        return self.node_m(self.level_node[j], q)

    def level_function(self, j: int) -> GridFunction:
        """The level-j function materialized on the grid."""
        z = self.ws.z
        return GridFunction(z=z, phi=self.phi_at(j, z), dphi=self.m_at(j, z))

    # -- outputs -------------------------------------------------------------

    def correction(self) -> float:
        xi, x, gt = self.pair.xi, self.pair.x, self.pair.gamma_tilde
        gx2 = (gt * x) ** 2
        return 0.5 * float(np.sum(xi[:-1] * np.diff(gx2)))

    def value(self) -> float:
        hv = self.params.field.values
        hp = self.params.field.probs
        phi0 = self.phi_at(0, hv)
        return float(np.sum(hp * phi0)) - self.correction()


def compute_recursion(pair: ParisiPair, params: ModelParams,
                      num: NumericsConfig | None = None) -> Recursion:
    num = num or default_numerics()
    cpair = _canonical(pair, params)
    return Recursion(cpair, params, num.resolve(params))


def evaluate(pair: ParisiPair, params: ModelParams,
             num: NumericsConfig | None = None) -> float:
    """Value of the Parisi functional at the pair, deterministic given num."""
    return compute_recursion(pair, params, num).value()


def evaluate_measure(mu: DiscreteMeasure, params: ModelParams,
                     num: NumericsConfig | None = None) -> float:
    """Functional on measures: evaluate at the pair associated to mu."""
    return evaluate(measure_to_pair(mu, params), params, num)


def evaluate_oracle(pair: ParisiPair, params: ModelParams, quad_nodes: int = 48) -> float:
    """Brute-force reference value by literal nested quadrature over the
    level Gaussians jointly; no grids or interpolation. The top level has
    exponent 1 and integrates in closed form (E 2cosh(z + c eta) =
    2cosh(z) e^{c^2/2}); the remaining k axes are a full tensor product, so
    k is capped at 4."""
    cpair = _canonical(pair, params)
    k = cpair.k
    if k > 4:
        raise ValueError(f"oracle refuses k = {k} > 4 (cost {quad_nodes}^{k})")
    if quad_nodes**k > 2e8:
        raise ValueError("oracle tensor would exceed the memory budget")
    t, w = np.polynomial.hermite.hermgauss(quad_nodes)
    nodes = _SQRT2 * t
    logw = np.log(w) - _HALF_LOG_PI
    c = _increments(cpair)
    xi = cpair.xi
    value = 0.0
    for hval, hprob in zip(params.field.values, params.field.probs):
        z = np.array(hval, dtype=float)
        for j in range(1, k + 1):
            z = z[..., None] + c[j] * nodes
        L = _log2cosh(z) + 0.5 * c[k + 1] ** 2  # top axis in closed form
        for j in range(k, 0, -1):
            xi_prev = xi[j - 1]
            if xi_prev > 0.0:
                L = logsumexp(logw + xi_prev * L, axis=-1) / xi_prev
            else:
                L = np.tensordot(L, np.exp(logw), axes=([-1], [0]))
        value += hprob * float(L)
    gx2 = (cpair.gamma_tilde * cpair.x) ** 2
    corr = 0.5 * float(np.sum(xi[:-1] * np.diff(gx2)))
    return value - corr


def rs_profile(x_r: float, params: ModelParams, quad_nodes: int = 80) -> float:
    """One-level profile of the functional in the top coordinate with all
    lower coordinates at zero:

        f(x) = log 2 + (1/z) log E_eta cosh^z(eta gamma_r sqrt(2x))
             + (gamma_r^2 / 2)(1 - 2x + (1 - z) x^2),   z = zeta_{r-1}.

    Requires a zero field; f(0) = log 2 + gamma_r^2 / 2.
    """
    if not params.field.is_zero():
        raise ValueError("rs_profile requires the zero field law")
    if not 0.0 <= x_r <= 1.0:
        raise ValueError("x_r must lie in [0, 1]")
    zprev = float(params.zeta[params.r - 1])
    g = params.gamma_r
    t, w = np.polynomial.hermite.hermgauss(quad_nodes)
    arg = _SQRT2 * t * g * math.sqrt(2.0 * x_r)
    logw = np.log(w) - _HALF_LOG_PI
    # E cosh^z(arg) computed in the log domain
    log_e = logsumexp(logw + zprev * (_log2cosh(arg) - _LOG2))
    poly = 0.5 * g * g * (1.0 - 2.0 * x_r + (1.0 - zprev) * x_r * x_r)
    return _LOG2 + log_e / zprev + poly


# --- forward density flow -------------------------------------------------

_MASS_CHECK = 1e-8
_MASS_ERROR = 1e-6
_RESOLVE_FACTOR = 4.0  # smallest representable kernel width, in grid spacings


@dataclass
class DensityLevel:
    """One level of the tilted-density flow: exact atoms, or a grid density."""

    atom_values: np.ndarray
    atom_weights: np.ndarray
    grid_density: np.ndarray | None

    @property
    def is_atomic(self) -> bool:
        return self.grid_density is None


@dataclass
class DensityFlow:
    """Normalized tilted densities p_0..p_{k+1}; each mass should be 1 and is
    reported unrenormalized as an accuracy check."""

    levels: list[DensityLevel]
    masses: np.ndarray
    z: np.ndarray


def forward_densities(pair: ParisiPair, params: ModelParams,
                      num: NumericsConfig | None = None,
                      recursion: Recursion | None = None,
                      through_level: int | None = None) -> DensityFlow:
    """Propagate the field law forward through the tilted Gaussian kernels:

        p_j(z') = integral p_{j-1}(z) g_{c_j}(z' - z)
                  exp(xi_{j-1} [Phi_j(z') - Phi_{j-1}(z)]) dz

    with a delta kernel when c_j = 0. Raises AccuracyError when a kernel is
    too narrow for the grid or when mass drifts beyond 1e-6.
    """
    num = num or default_numerics()
    rec = recursion or compute_recursion(pair, params, num)
    ws = rec.ws
    # the tilts shift densities outward by up to sum_p xi_p c_p^2 <= 2 gamma_r^2,
    # so the flow lives on a padded copy of the grid; the level functions extend
    # linearly out there with only exponentially small curvature left
    n_pad = int(math.ceil((2.0 * params.gamma_r**2 + 2.0) / ws.dz))
    z = np.concatenate((
        ws.z[0] - ws.dz * np.arange(n_pad, 0, -1),
        ws.z,
        ws.z[-1] + ws.dz * np.arange(1, n_pad + 1),
    ))
    freq = 2.0 * math.pi * np.fft.rfftfreq(len(z), d=ws.dz)
    top = rec.k + 1 if through_level is None else through_level
    current = DensityLevel(
        atom_values=rec.params.field.values,
        atom_weights=rec.params.field.probs,
        grid_density=None,
    )
    levels: list[DensityLevel] = [current]
    masses = [float(np.sum(current.atom_weights))]
    forward = [s for s in reversed(rec.steps) if s.level <= top]
    by_level: dict[int, list[_Step]] = {}
    for s in forward:
        by_level.setdefault(s.level, []).append(s)
    for j in range(1, top + 1):
        for step in by_level.get(j, ()):
            current = _flow_step(rec, current, step, z, freq)
        levels.append(current)
        if current.is_atomic:
            masses.append(float(np.sum(current.atom_weights)))
        else:
            masses.append(float(np.trapezoid(current.grid_density, z)))
    masses_arr = np.array(masses)
    drift = np.max(np.abs(masses_arr - 1.0))
    if drift > _MASS_ERROR:
        raise AccuracyError(f"density flow mass drift {drift:.3g} exceeds {_MASS_ERROR}")
    return DensityFlow(levels=levels, masses=masses_arr, z=z)


def _flow_step(rec: Recursion, prev: DensityLevel, step: _Step,
               z: np.ndarray, freq: np.ndarray) -> DensityLevel:
    """Push a tilted density through one Gaussian (sub)step of the flow."""
    xi_prev = step.xi_prev
    phi_up = rec.node_phi(step.src, z)
    if prev.is_atomic:
        if step.c < _RESOLVE_FACTOR * rec.ws.dz:
            raise AccuracyError(
                f"kernel width {step.c:.3g} at level {step.level} is below the "
                f"grid resolution {rec.ws.dz:.3g}; the density flow cannot "
                "represent it")
        dens = np.zeros_like(z)
        phi_low_at = rec.node_phi(step.dst, prev.atom_values)
        for v, wgt, ph in zip(prev.atom_values, prev.atom_weights, phi_low_at):
            log_kernel = (-0.5 * ((z - v) / step.c) ** 2
                          - math.log(step.c) - 0.5 * math.log(2 * math.pi))
            dens += wgt * np.exp(log_kernel + xi_prev * (phi_up - ph))
    else:
        # Gaussian convolution with the exact spectral transfer function: the
        # source is resolved on the grid, so its sampled spectrum is faithful
        # and no interpolation is needed for any kernel width
        phi_low = rec.node_phi(step.dst, z)
        src = prev.grid_density * np.exp(-xi_prev * phi_low)
        smoothed = np.fft.irfft(np.fft.rfft(src) * np.exp(-0.5 * (step.c * freq) ** 2),
                                n=len(z))
        dens = smoothed * np.exp(xi_prev * phi_up)
    return DensityLevel(atom_values=np.empty(0), atom_weights=np.empty(0),
                        grid_density=dens)


def _a_from_flow(rec: Recursion, flow: DensityFlow) -> np.ndarray:
    """a_j = E prod_{p<=j} f_p (m_j)^2 as atom sums plus grid integrals."""
    out = np.empty(rec.k)
    for j in range(1, rec.k + 1):
        lvl = flow.levels[j]
        if lvl.is_atomic:
            mj = rec.m_at(j, lvl.atom_values)
            out[j - 1] = float(np.sum(lvl.atom_weights * mj**2))
        else:
            mj = rec.m_at(j, flow.z)
            out[j - 1] = float(np.trapezoid(lvl.grid_density * mj**2, flow.z))
    return out


def _a_from_operators(rec: Recursion) -> np.ndarray:
    """Same a_j by backward composition of the tilt operators,

        T_p[G](y) = E_eta[f_p G(y + c_p eta)]
                  = E[e^{xi_{p-1} Phi_p(y + c_p eta)} G(...)] /
                    E[e^{xi_{p-1} Phi_p(y + c_p eta)}],

    applied to G = m_j^2 down to level 0 and read off at the field atoms.
    Needs no density representation, so it is robust for arbitrarily small
    kernel widths. The stack of pending functions is advanced through all
    (sub)steps in one vectorized interpolation per step.
    """
    ws = rec.ws
    z = ws.z
    k = rec.k
    a = np.empty(k)
    if k == 0:
        return a
    node_levels: dict[int, list[int]] = {}
    for j in range(1, k + 1):
        node_levels.setdefault(rec.level_node[j], []).append(j)
    stack = np.empty((len(z), 0))
    owners: list[int] = []
    for step in rec.steps:
        for j in node_levels.get(step.src, ()):
            stack = np.column_stack([stack, rec.m_at(j, z) ** 2])
            owners.append(j)
        if not owners:
            continue  # nothing to transport yet
        q = z[:, None] + step.c * ws.nodes[None, :]
        phi_q = rec.node_phi(step.src, q)
        if step.xi_prev > 0.0:
            logits = ws.log_weights[None, :] + step.xi_prev * phi_q
            logits -= np.max(logits, axis=1, keepdims=True)
            wq = np.exp(logits)
            wq /= np.sum(wq, axis=1, keepdims=True)
        else:
            wq = np.broadcast_to(np.exp(ws.log_weights), q.shape)
        vals = _Interp(z, stack, tail="const")(q)  # (grid, quad, stack)
        stack = np.einsum("gq,gqs->gs", wq, vals)
    # levels whose node is the bottom node never get transported; their m^2
    # is read directly at the field atoms below
    for j in node_levels.get(rec.level_node[0], ()):
        stack = np.column_stack([stack, rec.m_at(j, z) ** 2])
        owners.append(j)
    hv = rec.params.field.values
    hp = rec.params.field.probs
    at_h = _Interp(z, stack, tail="const")(hv) if stack.size else np.zeros((len(hv), 0))
    for col, j in enumerate(owners):
        a[j - 1] = float(np.sum(hp * at_h[:, col]))
    return a


def _flow_resolvable(rec: Recursion, through_level: int) -> bool:
    """True when the first continuous kernel of the flow (if any) up to the
    level can be represented on the grid."""
    for step in reversed(rec.steps):
        if step.level <= through_level:
            return step.c >= _RESOLVE_FACTOR * rec.ws.dz
    return True


def consistency_values(pair: ParisiPair, params: ModelParams,
                       num: NumericsConfig | None = None,
                       recursion: Recursion | None = None) -> np.ndarray:
    """The vector a_j = E prod_{p<=j} f_p (<sigma>^{(j)})^2 for j = 1..k of the
    canonical pair; stationary pairs satisfy x_j = a_j."""
    num = num or default_numerics()
    rec = recursion or compute_recursion(pair, params, num)
    if rec.k == 0:
        return np.empty(0)
    if _flow_resolvable(rec, rec.k):
        flow = forward_densities(pair, params, num, recursion=rec, through_level=rec.k)
        return _a_from_flow(rec, flow)
    return _a_from_operators(rec)


def _scatter_to_original(pair: ParisiPair, cpair_len: int, vec: np.ndarray) -> np.ndarray:
    """Map a canonical-index vector (j = 1..k_c) back onto the caller's
    indices; dropped sub-zeta_0 levels get zeros."""
    n_dropped = len(pair.xi) - cpair_len
    out = np.zeros(len(pair.xi) - 2)
    out[n_dropped:] = vec
    return out


def grad_x(pair: ParisiPair, params: ModelParams,
           num: NumericsConfig | None = None) -> np.ndarray:
    """Gradient of the functional in x_1..x_k:
    gt_j^2 (xi_j - xi_{j-1}) (x_j - a_j). Components at levels below zeta_0
    vanish identically."""
    num = num or default_numerics()
    cpair = _canonical(pair, params)
    rec = Recursion(cpair, params, num.resolve(params))
    a = consistency_values(cpair, params, num, recursion=rec)
    k = cpair.k
    xi, x, gt = cpair.xi, cpair.x, cpair.gamma_tilde
    g = gt[1:k + 1] ** 2 * np.diff(xi[: k + 1]) * (x[1:k + 1] - a)
    return _scatter_to_original(pair, len(cpair.xi), g)


def stationarity_residual(pair: ParisiPair, params: ModelParams,
                          num: NumericsConfig | None = None) -> float:
    """max_j |x_j - a_j| over the components that actually enter the
    functional (positive effective coupling and positive xi increment);
    zero exactly at stationary pairs."""
    num = num or default_numerics()
    cpair = _canonical(pair, params)
    rec = Recursion(cpair, params, num.resolve(params))
    a = consistency_values(cpair, params, num, recursion=rec)
    k = cpair.k
    if k == 0:
        return 0.0
    dxi = np.diff(cpair.xi[: k + 1])
    gt = cpair.gamma_tilde[1:k + 1]
    active = (dxi > 0) & (gt > 0)
    if not active.any():
        return 0.0
    return float(np.max(np.abs(cpair.x[1:k + 1][active] - a[active])))


def grad_gamma(pair: ParisiPair, params: ModelParams,
               num: NumericsConfig | None = None,
               residual_tol: float = 1e-6) -> np.ndarray:
    """Gradient of the functional in the couplings gamma_l, valid at
    stationary pairs only:

        l < r:  -gamma_l sum_{j in K_l} (xi_j - xi_{j-1}) x_j^2
        l = r:  gamma_r (1 - sum_{j in K_r} (xi_j - xi_{j-1}) x_j^2).

    Refuses non-stationary input, reporting the residual.
    """
    num = num or default_numerics()
    res = stationarity_residual(pair, params, num)
    if res > residual_tol:
        raise NotStationaryError(
            f"pair is not stationary: residual {res:.3g} > {residual_tol:.3g}")
    cpair = _canonical(pair, params)
    xi, x = cpair.xi, cpair.x
    k = cpair.k
    dxi = np.diff(xi[: k + 1], prepend=0.0)
    zeta = params.zeta_with_zero
    out = np.empty(params.r)
    for ell in range(1, params.r + 1):
        sel = (xi[: k + 1] > zeta[ell]) & (xi[: k + 1] <= zeta[ell + 1])
        s = float(np.sum(dxi[sel] * x[: k + 1][sel] ** 2))
        g = params.gamma[ell - 1]
        out[ell - 1] = g * (1.0 - s) if ell == params.r else -g * s
    return out
