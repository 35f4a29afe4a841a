"""Glued metric families on the blowup of C^2 at the origin.

The base metric (potential e^t + phi_rad with phi_rad = O(|z|^4)) is matched
to the scaled scalar-flat model eps^2 (e^s + s/2), s = t - 2 log eps, across
the annulus r_eps <= |z| <= 2 r_eps, r_eps = eps^beta.  The improved family
adds the correction eps^2 gamma_1 (Gamma - log eps) built from the singular
solution pair (Gamma, g) with L Gamma = g.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .jets import (
    DEFAULT_ORDER,
    CutoffSpec,
    Jet,
    cutoff_jet,
    jet_exp,
    jet_variable,
)
from .radial import PositivityError, RadialProfile

__all__ = [
    "GridSpec",
    "GluingConfig",
    "GluedFamily",
    "GammaData",
    "make_glued_profile",
    "make_omega_prime",
    "build_gamma",
    "make_improved_profile",
]


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid in t = log|z|^2."""

    t_min: float
    t_max: float
    nodes: int

    def __post_init__(self):
        if not (self.t_min < self.t_max):
            raise ValueError("need t_min < t_max")
        if self.nodes < 16:
            raise ValueError("need at least 16 nodes")

    def ts(self) -> np.ndarray:
        return np.linspace(self.t_min, self.t_max, self.nodes)

    @property
    def h(self) -> float:
        return (self.t_max - self.t_min) / (self.nodes - 1)

    @staticmethod
    def for_eps(eps: float, nodes: int = 2048, t_max: float = 5.0,
                core_depth: float = 12.0) -> "GridSpec":
        return GridSpec(2.0 * np.log(eps) - core_depth, t_max, nodes)


@dataclass(frozen=True)
class GluingConfig:
    """Parameters of the gluing: neck scale r_eps = eps^beta, weight delta."""

    eps: float
    beta: float = 0.6
    delta: float = -0.1
    n: int = 2
    cutoff: CutoffSpec | None = None
    grid: GridSpec | None = None

    def __post_init__(self):
        if not (0.0 < self.eps <= 0.2):
            raise ValueError("eps must lie in (0, 0.2]")
        if not (-1.0 < self.delta < 0.0):
            raise ValueError("delta must lie in (-1, 0)")
        if self.n == 2:
            if not (0.5 < self.beta < 2.0 / 3.0):
                raise ValueError("for n = 2 the admissible window is beta in (1/2, 2/3)")
        elif self.n >= 3:
            if abs(self.beta - (self.n - 1) / self.n) > 1e-12:
                raise ValueError("for n >= 3 beta must equal (n-1)/n")
        else:
            raise ValueError("n must be >= 2")
        r = self.r_eps
        if not (self.eps < r < 2.0 * r < 1.0):
            raise ValueError("scales must satisfy eps < r_eps < 2 r_eps < 1")
        if self.cutoff is None:
            object.__setattr__(
                self, "cutoff",
                # the exponential transition keeps the neck second-derivative
                # swing small enough that f'' stays positive for every shipped
                # eps; the polynomial spline loses positivity at eps >= 0.07
                CutoffSpec(kind="smooth-reference", inner_radius=r,
                           outer_radius=2.0 * r, smoothness_order=6),
            )
        else:
            if abs(self.cutoff.inner_radius - r) > 1e-12 or \
               abs(self.cutoff.outer_radius - 2.0 * r) > 1e-12:
                raise ValueError("cutoff radii must be (r_eps, 2 r_eps)")
        if self.grid is None:
            object.__setattr__(self, "grid", GridSpec.for_eps(self.eps))

    @property
    def r_eps(self) -> float:
        return float(self.eps ** self.beta)

    def to_json(self) -> str:
        return json.dumps({
            "eps": self.eps, "beta": self.beta, "delta": self.delta,
            "n": self.n, "r_eps": self.r_eps,
            "cutoff": {"kind": self.cutoff.kind,
                       "smoothness_order": self.cutoff.smoothness_order},
            "grid": {"t_min": self.grid.t_min, "t_max": self.grid.t_max,
                     "nodes": self.grid.nodes},
        })


@dataclass(frozen=True)
class GluedFamily:
    """A glued (or improved) radial profile with its construction data."""

    profile: RadialProfile
    config: GluingConfig
    class_coeffs: tuple[float, float]
    regions: tuple[float, float]
    improved: bool = False

    def to_json(self, sample_count: int = 32) -> str:
        ts = np.linspace(self.config.grid.t_min, self.config.grid.t_max, sample_count)
        return json.dumps({
            "config": json.loads(self.config.to_json()),
            "class_coeffs": list(self.class_coeffs),
            "regions": list(self.regions),
            "improved": self.improved,
            "samples": [[t, self.profile.jet(t).value] for t in ts],
        })


@dataclass(frozen=True)
class GammaData:
    """Singular solution pair: L Gamma = g with Gamma = chi_r log|z| + theta.

    ``g`` is the minimal-norm element of the kernel span realizing
    solvability; the solve pins theta = theta' = 0 at the inner grid end to
    normalize the bounded and log modes away, then shifts theta by a kernel
    constant so it vanishes at the gluing scale, where the neck cutoff
    multiplies it.
    """

    grid: np.ndarray
    g_coeffs: np.ndarray
    theta: np.ndarray
    chi_radius: float
    residual: float
    kernel_values: np.ndarray = field(repr=False)
    gamma_jet: Callable[[float], Jet] = field(repr=False)
    g_values: np.ndarray = field(repr=False)


def _gamma1_jet(cfg: GluingConfig, t: float, order: int = DEFAULT_ORDER) -> Jet:
    """Jet in t of gamma_1 = cutoff(|z| / 1) on [r_eps, 2 r_eps], |z| = e^{t/2}."""
    x = jet_exp(0.5 * jet_variable(t, order))
    from .jets import jet_arith

    c = cutoff_jet(cfg.cutoff, x.value, order)
    return jet_arith(c, x, "compose")


# width ratio of the origin cutoff chi_r; a wide transition keeps the
# fourth derivative of chi small, which bounds the smooth remainder of the
# log-singular comparison solution
_CHI_WIDTH = 2.0


def _chi_jet(radius: float, t: float, order: int = DEFAULT_ORDER,
             kind: str = "smooth-reference") -> Jet:
    """Jet of chi_r: 1 inside B_r, 0 outside B_{wr} (reversed cutoff)."""
    from .jets import jet_arith, jet_constant

    spec = CutoffSpec(kind=kind, inner_radius=radius,
                      outer_radius=_CHI_WIDTH * radius)
    x = jet_exp(0.5 * jet_variable(t, order))
    c = cutoff_jet(spec, x.value, order)
    return jet_constant(1.0, t, order) - jet_arith(c, x, "compose")


def _normal_phi(base: RadialProfile, t: float, order: int = DEFAULT_ORDER) -> Jet:
    """phi_rad = f_base - e^t, the O(|z|^4) normal-form part of the base."""
    return base.jet(t, order) - jet_exp(jet_variable(t, order))


def _check_family_positivity(p: RadialProfile, cfg: GluingConfig):
    ts = np.linspace(2.0 * np.log(cfg.eps) - 2.0, 1.0, 160)
    for t in ts:
        p.check_positivity(float(t))


def make_glued_profile(base: RadialProfile, cfg: GluingConfig) -> GluedFamily:
    """Glued family f_eps = e^t + gamma_1 phi_rad + eps^2 gamma_2 (t/2 - log eps)."""
    if base.n != cfg.n:
        raise ValueError("dimension mismatch between base profile and config")
    if cfg.n != 2:
        raise NotImplementedError(
            "n >= 3 needs a user-supplied asymptotic model profile")
    phi0 = _normal_phi(base, cfg.grid.t_min)
    # normal form: phi_rad = O(|z|^4), i.e. value and e^t-coefficient vanish
    if abs(phi0.value) > 1e-8 or abs(phi0.derivative(1)) > 1e-8:
        raise ValueError("base profile is not in normal form (phi_rad != O(|z|^4))")
    eps, log_eps = cfg.eps, np.log(cfg.eps)
    t_in, t_out = 2.0 * np.log(cfg.r_eps), 2.0 * np.log(2.0 * cfg.r_eps)

    def f(t: float, order: int = DEFAULT_ORDER) -> Jet:
        # region identities are returned exactly: they are required by the
        # construction and avoid cancellation in e^t + phi_rad at large t
        if t >= t_out:
            return base.jet(t, order)
        core = 0.5 * jet_variable(t, order) - log_eps
        if t <= t_in:
            return jet_exp(jet_variable(t, order)) + (eps ** 2) * core
        g1 = _gamma1_jet(cfg, t, order)
        g2 = 1.0 - g1
        return (jet_exp(jet_variable(t, order))
                + g1 * _normal_phi(base, t, order)
                + (eps ** 2) * (g2 * core))

    prof = RadialProfile(cfg.n, f, (cfg.grid.t_min, cfg.grid.t_max),
                         label=f"glued(eps={eps:g})")
    _check_family_positivity(prof, cfg)
    r = cfg.r_eps
    return GluedFamily(profile=prof, config=cfg,
                       class_coeffs=(1.0, -eps ** 2), regions=(r, 2.0 * r))


def make_omega_prime(base: RadialProfile, r: float) -> RadialProfile:
    """Flattened comparison metric: potential e^t + chi_r phi_rad.

    Equals the base inside B_r and the flat metric outside B_{2r}.
    """
    if not (0.0 < r < 0.5):
        raise ValueError("need 0 < r < 1/2")

    t_in, t_out = 2.0 * np.log(r), 2.0 * np.log(2.0 * r)

    def f(t: float, order: int = DEFAULT_ORDER) -> Jet:
        if t <= t_in:
            return base.jet(t, order)
        if t >= t_out:
            return jet_exp(jet_variable(t, order))
        return (jet_exp(jet_variable(t, order))
                + _chi_jet(r, t, order) * _normal_phi(base, t, order))

    prof = RadialProfile(base.n, f, base.domain, label=f"omega_prime(r={r:g})")
    for t in np.linspace(2.0 * np.log(r) - 4.0, 2.0 * np.log(2.0 * r) + 2.0, 64):
        prof.check_positivity(float(t))
    return prof


def build_gamma(base: RadialProfile, kernel, r: float, grid: GridSpec,
                two_step: bool = False) -> GammaData:
    """Solve L_omega Gamma = g jointly for (g, theta), Gamma = chi_r log|z| + theta.

    One augmented least-squares system determines the grid values of theta
    and the kernel coefficients of g simultaneously; the minimal-norm
    solution fixes g when the kernel has dimension > 1.  The boundary rows
    pin theta and theta' at the inner end so the remainder decays.
    """
    from scipy.interpolate import BSpline

    from . import solver
    from .radial import profile_table, radial_operator, table_operator_coefficients

    ts = grid.ts()
    N = ts.size
    if kernel.vectors.shape[0] != N:
        raise ValueError("kernel basis and Gamma solve must share one grid")
    d = kernel.vectors.shape[1]
    # theta lives in a C^5 spline space with exact derivatives; a per-node
    # representation would leave node-scale roughness that the fourth-order
    # operator coefficients (growing like e^{2t} in the far field) amplify
    # into a spurious scalar-curvature source of the improved family
    p = 6
    spacing = 0.1
    interior = np.arange(ts[0] + spacing, ts[-1] - 0.5 * spacing, spacing)
    knots = np.concatenate([[ts[0]] * (p + 1), interior, [ts[-1]] * (p + 1)])
    nb = knots.size - p - 1
    basis_d = np.zeros((5, N, nb))
    for j in range(nb):
        cj = np.zeros(nb)
        cj[j] = 1.0
        bj = BSpline(knots, cj, p)
        for k in range(5):
            basis_d[k, :, j] = bj(ts, nu=k)
    # exact operator rows on the basis: L = sum_k a_k d^k/dt^k
    F = profile_table(base, ts)
    A = table_operator_coefficients(F, ts, base.n, "L")
    AB = A[0][:, None] * basis_d[0]
    for k in range(1, 5):
        AB += A[k][:, None] * basis_d[k]
    # right side: -L(chi_r * t/2) evaluated exactly through jets
    rhs = np.empty(N)
    for i, t in enumerate(ts):
        sing = _chi_jet(r, float(t)) * (0.5 * jet_variable(float(t)))
        rhs[i] = -radial_operator(base, sing, float(t), "L")
    # the kernel coefficients of g are fixed first by the volume pairing:
    # integrating L theta against any kernel element k gives zero up to
    # boundary flux (theta decays at the puncture and is smooth far out), so
    # <K c + rhs, k> = 0 in L^2(f' f'' dt) determines c without reference to
    # the truncated boundary conditions; the joint least-squares problem by
    # itself cannot identify c, because every candidate c admits a pointwise
    # theta response and only the decay gauge selects the true coefficients
    K = kernel.vectors
    h_t = ts[1] - ts[0]
    vol = F[1] * F[2]
    gram = (K * vol[:, None]).T @ K * h_t
    pair = (K * vol[:, None]).T @ rhs * h_t
    c = np.linalg.solve(gram, -pair)
    rows = AB
    # boundary closures: theta, theta' vanish at the inner end (normalization
    # and decay); theta', theta'' vanish at the outer end (smooth far field)
    bc = np.zeros((4, nb))
    bc_rhs = np.zeros(4)
    bc[0] = basis_d[0, 0]
    bc[1] = basis_d[1, 0]
    bc[2] = basis_d[1, -1]
    bc[3] = basis_d[2, -1]
    M = np.vstack([rows, bc])
    b = np.concatenate([rhs + K @ c, bc_rhs])
    # row scaling: the improved-family scalar error inherits this residual in
    # absolute units wherever the neck cutoff is active, so rows there share
    # one uniform scale; rows deep in the core (where gamma_1 vanishes and
    # theta is unused) only need relative accuracy against their huge
    # operator coefficients
    rowmag = np.max(np.abs(M), axis=1)
    rowmag[rowmag == 0] = 1.0
    t_rows = np.concatenate([ts, [ts[0], ts[0], ts[-1], ts[-1]]])
    phys = (t_rows >= -6.0) & (t_rows <= 8.0)
    scale = np.where(phys, 1.0, rowmag)
    scale[N:] = rowmag[N:]  # boundary rows keep their own scale
    M = M / scale[:, None]
    b = b / scale
    # weak ridge on theta values: without it the least-squares solution is
    # free to ride near-kernel directions of L to enormous theta amplitudes
    w_reg = 1e-5
    reg = w_reg * basis_d[0]
    M = np.vstack([M, reg])
    b = np.concatenate([b, np.zeros(N)])
    cscale = np.max(np.abs(M), axis=0)
    cscale[cscale == 0] = 1.0
    z, *_ = np.linalg.lstsq(M / cscale, b, rcond=None)
    z = z / cscale
    theta = basis_d[0] @ z
    theta_spline = BSpline(knots, z, p)
    A_L = AB  # for the residual report below
    g_vals = K @ c
    # constants lie in ker L, so theta is determined only up to an additive
    # constant; the inner-end pin theta(t_min) = 0 fixes it here, and the
    # improved family re-centers theta at the neck per epsilon so the cutoff
    # does not chop a constant offset
    # residual per row, normalized by the operator row magnitude so deep-core
    # rows (coefficients ~ e^{-2t}) do not dominate artificially
    row_mag = np.max(np.abs(A_L), axis=1)
    row_mag[row_mag == 0] = 1.0
    resid_rows = np.abs(A_L @ z - g_vals - rhs) / row_mag
    resid = float(np.max(resid_rows[2:-2]))

    def gamma_jet(t: float, order: int = DEFAULT_ORDER) -> Jet:
        sing = _chi_jet(r, t, order) * (0.5 * jet_variable(t, order))
        co = np.array([float(theta_spline(t, nu=k)) for k in range(order + 1)])
        return sing + Jet(t, co)

    return GammaData(grid=ts, g_coeffs=np.asarray(c), theta=theta, chi_radius=r,
                     residual=resid, kernel_values=K, gamma_jet=gamma_jet,
                     g_values=g_vals)


def make_improved_profile(fam: GluedFamily, gdata: GammaData) -> GluedFamily:
    """Improved family: add eps^2 gamma_1 (Gamma - log eps) to the glued potential."""
    if fam.config.n != 2:
        raise NotImplementedError("improved family is implemented for n = 2")
    cfg = fam.config
    eps, log_eps = cfg.eps, np.log(cfg.eps)
    base_f = fam.profile.f

    t_off = 2.0 * np.log(cfg.r_eps)
    # theta is defined up to a constant (constants span part of ker L, and a
    # constant shift of f leaves the metric unchanged); center it at the neck
    # midpoint so the cutoff multiplies a remainder that vanishes where it acts
    t_mid = t_off + np.log(2.0)
    theta_mid = float(np.interp(t_mid, gdata.grid, gdata.theta))

    def f(t: float, order: int = DEFAULT_ORDER) -> Jet:
        if t <= t_off:
            return base_f(t, order)
        g1 = _gamma1_jet(cfg, t, order)
        corr = gdata.gamma_jet(t, order) - theta_mid - log_eps
        return base_f(t, order) + (eps ** 2) * (g1 * corr)

    prof = RadialProfile(cfg.n, f, fam.profile.domain,
                         label=f"improved(eps={eps:g})")
    _check_family_positivity(prof, cfg)
    return GluedFamily(profile=prof, config=cfg, class_coeffs=fam.class_coeffs,
                       regions=fam.regions, improved=True)
