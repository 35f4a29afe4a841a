"""Calabi-ansatz radial engine.

A U(n)-invariant Kahler potential on a chart of C^n is a function of
t = log|z|^2 alone.  Writing the potential as f(t), the metric has
eigenvalues e^{-t} f' (multiplicity n-1) and e^{-t} f'', and every curvature
quantity reduces to one-dimensional jet arithmetic.

Convention audit (frozen after cross-validation against the coordinate
engine in kahler.py):

* Laplacian:  Delta u = 4 [ (n-1) u'/f' + u''/f'' ]
  (the Euclidean Laplacian of R^{2n} when the potential is |z|^2).
* Ricci potential:  P = n t - (n-1) log f' - log f''
  (Ricci eigenvalues e^{-t} P' with multiplicity n-1 and e^{-t} P'').
* Scalar curvature:  S = 4 [ (n-1) P'/f' + P''/f'' ].
* Linearized scalar curvature:
  L phi = -(1/4) Delta^2 phi - (1/2) Ric . Hess phi,
  Ric . Hess phi = 8 [ (n-1) P' phi' / f'^2 + P'' phi'' / f''^2 ],
  which is exactly d/ds S(f + s phi) at s = 0.
* Formal adjoint:  L* phi = L phi - 2 phi' S' / f'' - (1/4) phi Delta S.

Under this audit the Fubini-Study profile has S = 24 (n = 2), the flat
profile has Delta |z|^2 = 8 and L |z|^4 = -48, and the Burns-Simanca profile
is scalar flat to rounding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .jets import (
    DEFAULT_ORDER,
    Jet,
    JetError,
    jet_arith,
    jet_constant,
    jet_exp,
    jet_log,
    jet_variable,
)

__all__ = [
    "RadialProfile",
    "RadialCurvature",
    "PositivityError",
    "radial_curvature",
    "radial_operator",
    "profile_library",
    "total_scalar_curvature",
    "cross_check",
    "scalar_jet",
    "laplacian_jet",
    "operator_coefficients",
]

CONVENTION_AUDIT = (
    "S=4*g^{jk}R_{jk}; Delta=4*g^{jk}dd_bar (Euclidean Laplacian on the flat "
    "potential |z|^2); L=-(1/4)Delta^2-(1/2)Ric.Hess; "
    "L*-L = -2 phi' S'/f'' - (1/4) phi Delta S"
)


class PositivityError(ValueError):
    """The candidate potential fails Kahler positivity (f' or f'' <= 0)."""


@dataclass(frozen=True)
class RadialProfile:
    """Radial potential f(t), t = log|z|^2, with jet access of order >= 6."""

    n: int
    f: Callable[[float], Jet]
    domain: tuple[float, float]
    label: str = ""

    def jet(self, t: float, order: int = DEFAULT_ORDER) -> Jet:
        j = self.f(float(t))
        if j.order < DEFAULT_ORDER:
            raise JetError("profile jets must have order >= 6")
        if order > j.order:
            raise JetError(f"profile {self.label!r} provides order {j.order} < {order}")
        return j

    def check_positivity(self, t: float) -> Jet:
        j = self.jet(t)
        if not (j.coeffs[1] > 0 and j.coeffs[2] > 0):
            raise PositivityError(
                f"profile {self.label!r} not Kahler at t={t}: "
                f"f'={j.coeffs[1]:.3e}, f''={j.coeffs[2]:.3e}"
            )
        return j

    def to_json(self, grid) -> str:
        grid = np.asarray(grid, dtype=float)
        jets = [self.jet(t).coeffs.tolist() for t in grid]
        return json.dumps(
            {
                "label": self.label,
                "n": self.n,
                "domain": list(self.domain),
                "grid": grid.tolist(),
                "jets": jets,
            }
        )


@dataclass(frozen=True)
class RadialCurvature:
    """Curvature data of a radial profile at one point."""

    S: float
    P: Jet
    eigen_g: tuple[float, float]
    eigen_ric: tuple[float, float]


def _ricci_potential_jet(n: int, fj: Jet, t: float) -> Jet:
    """P = n t - (n-1) log f' - log f'' as a jet of order fj.order - 2."""
    fp = fj.shift(1)
    fpp = fj.shift(2)
    if fp.value <= 0 or fpp.value <= 0:
        raise PositivityError(f"f'={fp.value:.3e}, f''={fpp.value:.3e} at t={t}")
    k = fpp.order
    tj = jet_variable(t, k)
    return float(n) * tj - float(n - 1) * jet_log(Jet(t, fp.coeffs[: k + 1])) - jet_log(fpp)


def scalar_jet(p: RadialProfile, t: float) -> Jet:
    """Jet of the scalar curvature S(t); exact to order f.order - 4."""
    fj = p.jet(t)
    n = p.n
    P = _ricci_potential_jet(n, fj, t)
    k = P.order - 2
    fp = Jet(t, fj.coeffs[1 : k + 2])
    fpp = Jet(t, fj.coeffs[2 : k + 3])
    Pp = Jet(t, P.coeffs[1 : k + 2])
    Ppp = Jet(t, P.coeffs[2 : k + 3])
    return 4.0 * (float(n - 1) * Pp / fp + Ppp / fpp)


def laplacian_jet(p: RadialProfile, phi: Jet, t: float) -> Jet:
    """Jet of Delta phi; exact to order min(phi.order, f.order) - 2."""
    fj = p.check_positivity(t)
    n = p.n
    k = min(phi.order, fj.order) - 2
    fp = Jet(t, fj.coeffs[1 : k + 2])
    fpp = Jet(t, fj.coeffs[2 : k + 3])
    pp = Jet(t, phi.coeffs[1 : k + 2])
    ppp = Jet(t, phi.coeffs[2 : k + 3])
    return 4.0 * (float(n - 1) * pp / fp + ppp / fpp)


def radial_curvature(p: RadialProfile, t: float) -> RadialCurvature:
    fj = p.check_positivity(t)
    P = _ricci_potential_jet(p.n, fj, t)
    S = scalar_jet(p, t).value
    emt = np.exp(-t)
    return RadialCurvature(
        S=S,
        P=P,
        eigen_g=(emt * fj.coeffs[1], emt * fj.coeffs[2]),
        eigen_ric=(emt * P.coeffs[1], emt * P.coeffs[2]),
    )


def _linearized_jet(p: RadialProfile, phi: Jet, t: float) -> Jet:
    """Jet of L phi (order limited by available derivatives)."""
    fj = p.check_positivity(t)
    n = p.n
    lap = laplacian_jet(p, phi, t)
    lap2 = laplacian_jet(p, lap, t)
    P = _ricci_potential_jet(n, fj, t)
    k = lap2.order
    fp = Jet(t, fj.coeffs[1 : k + 2])
    fpp = Jet(t, fj.coeffs[2 : k + 3])
    Pp = Jet(t, P.coeffs[1 : k + 2])
    Ppp = Jet(t, P.coeffs[2 : k + 3])
    pp = Jet(t, phi.coeffs[1 : k + 2])
    ppp = Jet(t, phi.coeffs[2 : k + 3])
    ric_hess = 8.0 * (float(n - 1) * Pp * pp / (fp * fp) + Ppp * ppp / (fpp * fpp))
    return -0.25 * lap2 - 0.5 * ric_hess


def lstar_minus_l(p: RadialProfile, phi: Jet, t: float) -> float:
    """The first-order difference (L* - L) phi = -2 phi' S'/f'' - (1/4) phi Delta S."""
    fj = p.check_positivity(t)
    S = scalar_jet(p, t)
    lapS = laplacian_jet(p, S, t)
    return float(
        -2.0 * phi.coeffs[1] * S.coeffs[1] / fj.coeffs[2] - 0.25 * phi.value * lapS.value
    )


def radial_operator(p: RadialProfile, phi: Callable[[float], Jet] | Jet, t: float, which: str) -> float:
    """Evaluate L, L* or Q on a radial field at t.

    ``phi`` is either a jet at t or a jet-valued function of t.  L and L*
    need phi to order 4; Q re-evaluates the scalar curvature of the perturbed
    potential, which needs phi to order 4 as well.
    """
    pj = phi(t) if callable(phi) else phi
    if pj.order < 4:
        raise JetError("radial field needs jets of order >= 4")
    if which == "L":
        return _linearized_jet(p, pj, t).value
    if which == "Lstar":
        return _linearized_jet(p, pj, t).value + lstar_minus_l(p, pj, t)
    if which == "Q":
        fj = p.check_positivity(t)
        k = min(fj.order, pj.order)
        pert = Jet(t, fj.coeffs[: k + 1] + pj.coeffs[: k + 1])
        if not (pert.coeffs[1] > 0 and pert.coeffs[2] > 0):
            raise PositivityError(f"perturbed potential not Kahler at t={t}")
        q = RadialProfile(p.n, lambda s, j=pert: j, p.domain, label=p.label + "+phi")
        s_pert = scalar_jet(q, t).value
        s_base = scalar_jet(p, t).value
        return s_pert - s_base - _linearized_jet(p, pj, t).value
    raise ValueError(f"unknown operator {which!r}")


def operator_coefficients(p: RadialProfile, t: float, which: str = "Lstar") -> np.ndarray:
    """Coefficients a_k, k = 0..4, with (op phi)(t) = sum_k a_k phi^(k)(t).

    Extracted by applying the exact jet operator to unit jets, so the
    coefficients inherit the jet engine's exactness.
    """
    out = np.zeros(5)
    for k in range(5):
        c = np.zeros(DEFAULT_ORDER + 1)
        c[k] = 1.0
        out[k] = radial_operator(p, Jet(t, c), t, which)
    return out


# ---------------------------------------------------------------------------
# Profile library
# ---------------------------------------------------------------------------


def _exp_profile_jet(t: float, order: int = DEFAULT_ORDER) -> Jet:
    return jet_exp(jet_variable(t, order))


def _log1p_exp_jet(t: float, order: int = DEFAULT_ORDER) -> Jet:
    """Jet of log(1 + e^t), evaluated as t + log(1 + e^{-t}) for t > 0.

    The direct form loses relative precision like e^{2t} eps in the second
    derivative at large t; the flipped form keeps all coefficients stable.
    """
    if t <= 0:
        return jet_log(1.0 + _exp_profile_jet(t, order))
    return jet_variable(t, order) + jet_log(1.0 + jet_exp(-jet_variable(t, order)))


def profile_library(name: str, n: int = 2, order: int = DEFAULT_ORDER) -> RadialProfile:
    """Shipped radial profiles.  Only n = 2 is available for burns_simanca
    (the higher-dimensional asymptotic profile has no closed form; supply a
    custom RadialProfile for n >= 3)."""
    if name == "flat":
        return RadialProfile(n, lambda t: _exp_profile_jet(t, order), (-np.inf, np.inf), "flat")
    if name == "fubini_study":
        def fs(t: float) -> Jet:
            return _log1p_exp_jet(t, order)

        return RadialProfile(n, fs, (-np.inf, np.inf), "fubini_study")
    if name == "fs_normal_phi":
        def phi(t: float) -> Jet:
            return _log1p_exp_jet(t, order) - _exp_profile_jet(t, order)

        return RadialProfile(n, phi, (-np.inf, np.inf), "fs_normal_phi")
    if name == "burns_simanca":
        if n != 2:
            raise ValueError("burns_simanca profile is only explicit for n = 2")

        def bs(t: float) -> Jet:
            return _exp_profile_jet(t, order) + 0.5 * jet_variable(t, order)

        return RadialProfile(2, bs, (-np.inf, np.inf), "burns_simanca")
    raise ValueError(f"unknown profile {name!r}")


# ---------------------------------------------------------------------------
# Total scalar curvature
# ---------------------------------------------------------------------------


def volume_density(p: RadialProfile, t: float) -> float:
    """Radial volume density: det h * d(coordinate volume)/dt up to the
    angular constant, i.e. (f')^{n-1} f'' (times Vol(S^{2n-1})/2)."""
    fj = p.jet(t)
    return float(fj.coeffs[1] ** (p.n - 1) * fj.coeffs[2])


_SPHERE_VOL = {1: 2 * np.pi, 2: 2 * np.pi**2, 3: np.pi**3}


def total_scalar_curvature(p: RadialProfile, region: tuple[float, float], n: int | None = None,
                           nodes: int = 8192, r_eps: float | None = None) -> float:
    """Integral of S over the region via 1-D quadrature of S * (f')^{n-1} f''.

    Normalization: the volume form is det(h) d^{2n}x (the coordinate volume
    of the audited metric), so the full Fubini-Study CP^2 gives 12 pi^2.
    """
    n = n if n is not None else p.n
    a, b = region
    h = (b - a) / (nodes - 1)
    if r_eps is not None:
        # the cutoff lives on a t-width of 2 log 2; require >= 16 nodes across it
        if h > 2 * np.log(2.0) / 16:
            raise ValueError("grid too coarse to resolve the gluing cutoff")
    ts = np.linspace(a, b, nodes)
    vals = np.array([scalar_jet(p, t).value * volume_density(p, t) for t in ts])
    integral = float(np.trapezoid(vals, ts))
    return _SPHERE_VOL[n] / 2.0 * integral


# ---------------------------------------------------------------------------
# Cross-validation against the coordinate engine
# ---------------------------------------------------------------------------


def cross_check(p: RadialProfile, count: int = 20, seed: int = 0,
                t_range: tuple[float, float] = (-4.0, 4.0)) -> dict:
    """Compare the radial engine with the full coordinate engine at random
    points and directions.  Raises if the relative deviation exceeds 1e-6."""
    from . import kahler

    rng = np.random.default_rng(seed)
    pot = kahler.potential_from_profile(p)
    worst = 0.0
    rows = []
    for _ in range(count):
        t = float(rng.uniform(*t_range))
        # random point on the sphere |z|^2 = e^t
        zr = rng.normal(size=p.n) + 1j * rng.normal(size=p.n)
        z = zr / np.linalg.norm(zr) * np.exp(t / 2.0)
        rad = radial_curvature(p, t)
        cd = kahler.curvature_at(pot, z)
        dev_s = abs(rad.S - cd.scalar) / max(1.0, abs(rad.S))
        # operator comparison on a fixed smooth radial field
        phi = _test_field(t)
        phi_coord = kahler.radial_field_from_jet(phi, p.n)
        dev_l = _rel(radial_operator(p, phi, t, "L"), kahler.linearized_L(pot, phi_coord, z))
        dev_ls = _rel(radial_operator(p, phi, t, "Lstar"), kahler.adjoint_Lstar(pot, phi_coord, z))
        dev = max(dev_s, dev_l, dev_ls)
        worst = max(worst, dev)
        rows.append({"t": t, "dev_scalar": dev_s, "dev_L": dev_l, "dev_Lstar": dev_ls})
    report = {"profile": p.label, "count": count, "seed": seed, "max_rel_deviation": worst,
              "rows": rows}
    if worst > 1e-6:
        raise AssertionError(f"radial/coordinate deviation {worst:.3e} > 1e-6 for {p.label!r}")
    return report


# ---------------------------------------------------------------------------
# Vectorized jet tables (grid-wide assembly for the discrete solver)
# ---------------------------------------------------------------------------
#
# A "table" is an array of shape (K+1, N): raw derivative rows of a radial
# quantity at N grid nodes.  The series kernels below mirror jets.py but act
# on whole rows, so curvature and operator coefficients are assembled for an
# entire grid in O(K^2) vector operations.

from math import factorial as _factorial


def _facts_col(k: int) -> np.ndarray:
    return np.array([_factorial(i) for i in range(k + 1)], dtype=float)[:, None]


def _vt_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    k = min(a.shape[0], b.shape[0])
    out = np.zeros((k, a.shape[1]))
    for i in range(k):
        for j in range(i + 1):
            out[i] += a[j] * b[i - j]
    return out


def _vt_recip(a: np.ndarray) -> np.ndarray:
    out = np.zeros_like(a)
    out[0] = 1.0 / a[0]
    for i in range(1, a.shape[0]):
        acc = np.zeros(a.shape[1])
        for j in range(1, i + 1):
            acc += a[j] * out[i - j]
        out[i] = -acc * out[0]
    return out


def _vt_log(a: np.ndarray) -> np.ndarray:
    k = a.shape[0] - 1
    out = np.zeros_like(a)
    out[0] = np.log(a[0])
    if k == 0:
        return out
    da = np.vstack([a[1:] * np.arange(1, k + 1)[:, None], np.zeros((1, a.shape[1]))])
    dq = _vt_mul(da, _vt_recip(a))[:k]
    out[1:] = dq / np.arange(1, k + 1)[:, None]
    return out


def _raw_to_taylor(raw: np.ndarray) -> np.ndarray:
    return raw / _facts_col(raw.shape[0] - 1)


def _taylor_to_raw(tay: np.ndarray) -> np.ndarray:
    return tay * _facts_col(tay.shape[0] - 1)


def profile_table(p: RadialProfile, ts, order: int = DEFAULT_ORDER) -> np.ndarray:
    """Raw derivative rows 0..order of the profile at each grid node."""
    ts = np.asarray(ts, dtype=float)
    return np.array([p.jet(float(t), order).coeffs[: order + 1] for t in ts]).T


def table_scalar(F: np.ndarray, ts, n: int, order: int | None = None) -> np.ndarray:
    """Raw derivative table of S from a potential table (needs K >= 4)."""
    ts = np.asarray(ts, dtype=float)
    K = F.shape[0] - 1
    if K < 4:
        raise JetError("scalar table needs potential rows to order >= 4")
    m = K - 4 if order is None else order
    if np.any(F[1] <= 0) or np.any(F[2] <= 0):
        raise PositivityError("table potential violates f' > 0, f'' > 0")
    # P = n t - (n-1) log f' - log f'' to order K - 2
    kp = K - 2
    fp = _raw_to_taylor(F[1: kp + 2])
    fpp = _raw_to_taylor(F[2: kp + 3])
    t_tab = np.zeros((kp + 1, F.shape[1]))
    t_tab[0] = ts
    if kp >= 1:
        t_tab[1] = 1.0
    P_tay = n * t_tab - (n - 1) * _vt_log(fp) - _vt_log(fpp)
    P = _taylor_to_raw(P_tay)
    # S = 4[(n-1) P'/f' + P''/f''] to order m <= K - 4
    Pp = _raw_to_taylor(P[1: m + 2])
    Ppp = _raw_to_taylor(P[2: m + 3])
    fp_m = _raw_to_taylor(F[1: m + 2])
    fpp_m = _raw_to_taylor(F[2: m + 3])
    S_tay = 4.0 * ((n - 1) * _vt_mul(Pp, _vt_recip(fp_m)) + _vt_mul(Ppp, _vt_recip(fpp_m)))
    return _taylor_to_raw(S_tay)


def table_scalar_values(F: np.ndarray, ts, n: int) -> np.ndarray:
    return table_scalar(F, ts, n, order=0)[0]


def table_apply_L(F: np.ndarray, ts, n: int, phi: np.ndarray) -> np.ndarray:
    """Values of L phi on the grid from potential rows (>= 6) and field rows
    (>= 4).  The field rows are treated pointwise, matching radial_operator."""
    if F.shape[0] < 7 or phi.shape[0] < 5:
        raise JetError("table_apply_L needs potential order 6 and field order 4")
    K = F.shape[0] - 1
    # Laplacian of phi as a table to order 2
    fp2 = _raw_to_taylor(F[1:4])
    fpp2 = _raw_to_taylor(F[2:5])
    php = _raw_to_taylor(phi[1:4])
    phpp = _raw_to_taylor(phi[2:5])
    lap_tay = 4.0 * ((n - 1) * _vt_mul(php, _vt_recip(fp2)) + _vt_mul(phpp, _vt_recip(fpp2)))
    lap = _taylor_to_raw(lap_tay)
    lap2 = 4.0 * ((n - 1) * lap[1] / F[1] + lap[2] / F[2])
    # Ricci potential rows 1, 2
    kp = K - 2
    fp = _raw_to_taylor(F[1: kp + 2])
    fpp = _raw_to_taylor(F[2: kp + 3])
    t_tab = np.zeros((kp + 1, F.shape[1]))
    t_tab[0] = np.asarray(ts, dtype=float)
    t_tab[1] = 1.0
    P = _taylor_to_raw(n * t_tab - (n - 1) * _vt_log(fp) - _vt_log(fpp))
    ric_hess = 8.0 * ((n - 1) * P[1] * phi[1] / F[1] ** 2 + P[2] * phi[2] / F[2] ** 2)
    return -0.25 * lap2 - 0.5 * ric_hess


def table_operator_coefficients(F: np.ndarray, ts, n: int, which: str = "Lstar") -> np.ndarray:
    """Rows a_k (k = 0..4) with (op phi) = sum_k a_k phi^(k), vectorized."""
    N = F.shape[1]
    out = np.zeros((5, N))
    for k in range(5):
        unit = np.zeros((5, N))
        unit[k] = 1.0
        out[k] = table_apply_L(F, ts, n, unit)
    if which == "L":
        return out
    if which != "Lstar":
        raise ValueError(f"unknown operator {which!r}")
    S = table_scalar(F, ts, n)
    if S.shape[0] < 3:
        raise JetError("Lstar table needs potential rows to order >= 6")
    lapS = 4.0 * ((n - 1) * S[1] / F[1] + S[2] / F[2])
    out[1] -= 2.0 * S[1] / F[2]
    out[0] -= 0.25 * lapS
    return out


def _test_field(t: float) -> Jet:
    # smooth radial probe: phi = e^t / (1 + e^t) (bounded with nontrivial jets)
    et = _exp_profile_jet(t, DEFAULT_ORDER)
    return et / (1.0 + et)


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(a), abs(b))
