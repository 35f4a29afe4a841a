"""Full-coordinate Kahler curvature engine on C^n charts.

Potentials are evaluated as truncated multivariate Taylor expansions
(``MultiJet``) in the 2n complex increments (dz_1..dz_n, dzbar_1..dzbar_n).
Every curvature quantity is then a finite combination of exact mixed
partials, so this module serves as the independent oracle for the radial
reduction in radial.py.

The conventions match radial.py's audit: Delta f = 4 g^{jk} d_j d_kbar f,
S = 4 g^{jk} R_{jk}, R_{jk} = -d_j d_kbar log det g.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import factorial
from typing import Callable

import numpy as np

from .jets import DEFAULT_ORDER, Jet, JetError
from .radial import PositivityError, RadialProfile

__all__ = [
    "MultiJet",
    "CoordinatePotential",
    "CurvatureData",
    "curvature_at",
    "laplacian",
    "linearized_L",
    "adjoint_Lstar",
    "nonlinear_Q",
    "potential_from_profile",
    "radial_field_from_jet",
]

_PD_TOL = 1e-12


@lru_cache(maxsize=16)
def _degree_grid(n: int, size: int) -> np.ndarray:
    return np.indices((size,) * (2 * n)).sum(axis=0)


@dataclass(frozen=True)
class MultiJet:
    """Truncated Taylor expansion in (dz_1..dz_n, dzbar_1..dzbar_n).

    ``coeffs`` are Taylor-normalized (divided by factorials) complex
    coefficients on a dense hypercube; entries of total degree above
    ``order`` are zero and meaningless.
    """

    n: int
    order: int
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.ndim != 2 * self.n:
            raise ValueError("coefficient array rank must be 2n")
        if not np.all(np.isfinite(c)):
            raise ValueError("multijet coefficients must be finite")
        object.__setattr__(self, "coeffs", c)

    @property
    def cap(self) -> int:
        return self.coeffs.shape[0] - 1

    @property
    def value(self) -> complex:
        return complex(self.coeffs[(0,) * (2 * self.n)])

    def deriv(self, a: tuple, b: tuple) -> complex:
        """Raw mixed partial d^a dbar^b at the base point."""
        idx = tuple(a) + tuple(b)
        if sum(idx) > self.order:
            raise JetError("requested partial exceeds multijet order")
        fac = 1.0
        for i in idx:
            fac *= factorial(i)
        return complex(self.coeffs[idx]) * fac

    def _mask(self, order: int) -> np.ndarray:
        m = self.coeffs.copy()
        m[_degree_grid(self.n, self.cap + 1) > order] = 0.0
        return m

    def __add__(self, other):
        if np.isscalar(other):
            c = self.coeffs.copy()
            c[(0,) * (2 * self.n)] += other
            return MultiJet(self.n, self.order, c)
        _check_compat(self, other)
        k = min(self.order, other.order)
        return MultiJet(self.n, k, self.coeffs + other.coeffs)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-1.0) * other

    def __rsub__(self, other):
        return (-1.0) * self + other

    def __mul__(self, other):
        if np.isscalar(other):
            return MultiJet(self.n, self.order, self.coeffs * other)
        _check_compat(self, other)
        k = min(self.order, other.order)
        size = self.cap + 1
        a = self._mask(k)
        b = other._mask(k)
        out = np.zeros_like(a)
        nz = np.nonzero(a)
        for idx in zip(*nz):
            dst = tuple(slice(i, size) for i in idx)
            src = tuple(slice(0, size - i) for i in idx)
            out[dst] += a[idx] * b[src]
        out[_degree_grid(self.n, size) > k] = 0.0
        return MultiJet(self.n, k, out)

    __rmul__ = __mul__

    def __neg__(self):
        return (-1.0) * self

    def dz(self, j: int) -> "MultiJet":
        return self._shift(j)

    def dzbar(self, j: int) -> "MultiJet":
        return self._shift(self.n + j)

    def _shift(self, axis: int) -> "MultiJet":
        if self.order < 1:
            raise JetError("multijet order too low for a derivative")
        size = self.cap + 1
        c = np.moveaxis(self.coeffs, axis, 0)
        out = np.zeros_like(c)
        w = np.arange(1, size).reshape((size - 1,) + (1,) * (2 * self.n - 1))
        out[: size - 1] = c[1:] * w
        return MultiJet(self.n, self.order - 1, np.moveaxis(out, 0, axis))

    def conjugate(self) -> "MultiJet":
        """Swap holomorphic/antiholomorphic indices and conjugate."""
        axes = list(range(self.n, 2 * self.n)) + list(range(self.n))
        return MultiJet(self.n, self.order, np.conj(np.transpose(self.coeffs, axes)))

    def reality_defect(self) -> float:
        """Max |c(a,b) - conj(c(b,a))|; zero for real-valued functions."""
        return float(np.max(np.abs(self.coeffs - self.conjugate().coeffs)))


def _check_compat(a: MultiJet, b: MultiJet):
    if a.n != b.n or a.coeffs.shape != b.coeffs.shape:
        raise ValueError("incompatible multijets")


def mj_constant(value: complex, n: int, order: int, cap: int | None = None) -> MultiJet:
    cap = order if cap is None else cap
    c = np.zeros((cap + 1,) * (2 * n), dtype=complex)
    c[(0,) * (2 * n)] = value
    return MultiJet(n, order, c)


def _compose_series(taylor: np.ndarray, u: MultiJet) -> MultiJet:
    """sum_k taylor[k] u^k by Horner; u must have zero constant term."""
    if abs(u.value) > 1e-13:
        raise JetError("series composition needs zero constant term")
    out = mj_constant(taylor[-1], u.n, u.order, u.cap)
    for k in range(taylor.size - 2, -1, -1):
        out = out * u + complex(taylor[k])
    return out


def mj_log(m: MultiJet) -> MultiJet:
    c0 = m.value
    if abs(c0.imag) > 1e-10 * max(1.0, abs(c0)) or c0.real <= 0:
        raise JetError("log of multijet needs positive real value")
    u = m * (1.0 / c0) + (-1.0)
    k = m.order
    series = np.zeros(k + 1, dtype=complex)
    series[1:] = [(-1.0) ** (j + 1) / j for j in range(1, k + 1)]
    return _compose_series(series, u) + np.log(c0.real)


def _mj_mat_mul(A, B):
    d = len(A)
    return [[sum((A[i][k] * B[k][j] for k in range(d)), start=(0.0) * A[0][0])
             for j in range(d)] for i in range(d)]


def _mj_mat_inv(M):
    """Inverse of a multijet matrix by Newton iteration off the numeric inverse."""
    d = len(M)
    order = min(M[i][j].order for i in range(d) for j in range(d))
    n, cap = M[0][0].n, M[0][0].cap
    G0 = np.array([[M[i][j].value for j in range(d)] for i in range(d)])
    H0 = np.linalg.inv(G0)
    X = [[mj_constant(H0[i][j], n, order, cap) for j in range(d)] for i in range(d)]
    steps = int(np.ceil(np.log2(order + 1))) if order > 0 else 0
    for _ in range(steps):
        GX = _mj_mat_mul(M, X)
        T = [[(-1.0) * GX[i][j] + (2.0 if i == j else 0.0) for j in range(d)]
             for i in range(d)]
        X = _mj_mat_mul(X, T)
    return X


def _mj_det(M):
    d = len(M)
    if d == 1:
        return M[0][0]
    out = None
    for j in range(d):
        minor = [[M[i][k] for k in range(d) if k != j] for i in range(1, d)]
        term = ((-1.0) ** j) * (M[0][j] * _mj_det(minor))
        out = term if out is None else out + term
    return out


# ---------------------------------------------------------------------------
# Potentials and fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoordinatePotential:
    """Kahler potential on a C^n chart with multijet access."""

    n: int
    eval: Callable[[np.ndarray], MultiJet]
    label: str = ""

    def multijet(self, z, order: int = 4) -> MultiJet:
        m = self.eval(np.asarray(z, dtype=complex))
        if m.order < order:
            raise JetError(f"potential jet order {m.order} < {order}")
        defect = m.reality_defect()
        if defect > 1e-9 * max(1.0, np.max(np.abs(m.coeffs))):
            raise ValueError(f"potential multijet not real: defect {defect:.3e}")
        return m


@dataclass(frozen=True)
class CurvatureData:
    """Pointwise curvature of a coordinate potential."""

    g: np.ndarray
    g_inv: np.ndarray
    ricci: np.ndarray
    riemann: np.ndarray
    scalar: float


def _metric_block(m: MultiJet) -> np.ndarray:
    n = m.n
    G = np.empty((n, n), dtype=complex)
    for j in range(n):
        for k in range(n):
            a = tuple(1 if i == j else 0 for i in range(n))
            b = tuple(1 if i == k else 0 for i in range(n))
            G[j, k] = m.deriv(a, b)
    return G


def _check_pd(G: np.ndarray, what: str = "metric"):
    H = 0.5 * (G + G.conj().T)
    ev = np.linalg.eigvalsh(H)
    if ev[0] <= _PD_TOL * np.trace(H).real:
        raise PositivityError(f"{what} block not positive definite (min eig {ev[0]:.3e})")


def _metric_multijets(m: MultiJet):
    n = m.n
    return [[m.dz(j).dzbar(k) for k in range(n)] for j in range(n)]


def scalar_multijet(m: MultiJet) -> MultiJet:
    """S as a multijet of order m.order - 4."""
    g_mj = _metric_multijets(m)
    logdet = mj_log(_mj_det(g_mj))
    n = m.n
    k = m.order - 4
    ric = [[(-1.0) * logdet.dz(j).dzbar(l) for l in range(n)] for j in range(n)]
    g_low = [[MultiJet(n, k, g_mj[i][j].coeffs) for j in range(n)] for i in range(n)]
    h = _mj_mat_inv(g_low)
    out = None
    for a in range(n):
        for b in range(n):
            term = h[a][b] * ric[b][a]
            out = term if out is None else out + term
    return 4.0 * out


def curvature_at(pot: CoordinatePotential, z) -> CurvatureData:
    """All pointwise curvature quantities of the potential at z."""
    m = pot.multijet(z, order=4)
    n = pot.n
    G = _metric_block(m)
    _check_pd(G)
    Ginv = np.linalg.inv(G)
    logdet = mj_log(_mj_det(_metric_multijets(m)))
    R = np.empty((n, n), dtype=complex)
    for j in range(n):
        for k in range(n):
            a = tuple(1 if i == j else 0 for i in range(n))
            b = tuple(1 if i == k else 0 for i in range(n))
            R[j, k] = -logdet.deriv(a, b)
    S = 4.0 * np.trace(Ginv @ R).real

    # Rm_{i jbar k lbar} = -d_k d_lbar g_{i jbar} + g^{p qbar} d_k g_{i qbar} d_lbar g_{p jbar}
    def e(*idx):
        v = [0] * n
        for i in idx:
            v[i] += 1
        return tuple(v)

    Rm = np.zeros((n, n, n, n), dtype=complex)
    if m.order >= 4:
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    for l in range(n):
                        val = -m.deriv(e(i, k), e(j, l))
                        for p in range(n):
                            for q in range(n):
                                val += Ginv[q, p] * m.deriv(e(i, k), e(q)) * m.deriv(e(p), e(j, l))
                        Rm[i, j, k, l] = val
    return CurvatureData(g=G, g_inv=Ginv, ricci=R, riemann=Rm, scalar=float(S))


def _field_multijet(f, z) -> MultiJet:
    if isinstance(f, MultiJet):
        return f
    return f(np.asarray(z, dtype=complex))


def _laplacian_mj(m: MultiJet, fm: MultiJet) -> MultiJet:
    """Delta f = 4 g^{jk} d_j d_kbar f as a multijet."""
    n = m.n
    k = min(m.order, fm.order) - 2
    if k < 0:
        raise JetError("insufficient jet order for the Laplacian")
    g_mj = _metric_multijets(m)
    g_low = [[MultiJet(n, k, g_mj[i][j].coeffs) for j in range(n)] for i in range(n)]
    h = _mj_mat_inv(g_low)  # h[a][b] approximates (G^{-1})[a][b]
    out = None
    for j in range(n):
        for l in range(n):
            term = h[l][j] * fm.dz(j).dzbar(l)
            out = term if out is None else out + term
    return 4.0 * out


def laplacian(pot: CoordinatePotential, f, z, order: int = 1) -> float:
    """Riemannian Laplacian (order 1) or bi-Laplacian (order 2) of f at z."""
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    m = pot.multijet(z, order=2 * order + 2)
    fm = _field_multijet(f, z)
    if fm.order < 2 * order:
        raise JetError("field jets too short for requested Laplacian order")
    lap = _laplacian_mj(m, fm)
    if order == 1:
        return float(lap.value.real)
    return float(_laplacian_mj(m, lap).value.real)


def linearized_L(pot: CoordinatePotential, phi, z) -> float:
    """L phi = -(1/4) Delta^2 phi - (1/2) Ric . Hess phi at z."""
    m = pot.multijet(z, order=4)
    fm = _field_multijet(phi, z)
    if fm.order < 4:
        raise JetError("L needs field jets of order >= 4")
    lap2 = _laplacian_mj(m, _laplacian_mj(m, fm)).value.real
    cd = curvature_at(pot, z)
    n = pot.n
    P = np.empty((n, n), dtype=complex)
    for j in range(n):
        for k in range(n):
            a = tuple(1 if i == j else 0 for i in range(n))
            b = tuple(1 if i == k else 0 for i in range(n))
            P[j, k] = fm.deriv(a, b)
    ric_hess = 8.0 * np.trace(cd.g_inv @ cd.ricci @ cd.g_inv @ P).real
    return float(-0.25 * lap2 - 0.5 * ric_hess)


def adjoint_Lstar(pot: CoordinatePotential, phi, z) -> float:
    """L* phi = L phi - g^{jk}(d_j phi d_kbar S + d_j S d_kbar phi) - (1/4) phi Delta S."""
    m = pot.multijet(z, order=6)
    fm = _field_multijet(phi, z)
    L = linearized_L(pot, phi, z)
    S_mj = scalar_multijet(m)
    lapS = _laplacian_mj(m, S_mj).value.real
    n = pot.n
    G = _metric_block(m)
    Ginv = np.linalg.inv(G)
    dphi = np.array([fm.dz(j).value for j in range(n)])
    dbphi = np.array([fm.dzbar(k).value for k in range(n)])
    dS = np.array([S_mj.dz(j).value for j in range(n)])
    dbS = np.array([S_mj.dzbar(k).value for k in range(n)])
    # g^{jk} x_j y_k = sum Ginv[k, j] x_j y_k
    cross = np.einsum("kj,j,k->", Ginv, dphi, dbS) + np.einsum("kj,j,k->", Ginv, dS, dbphi)
    return float(L - cross.real - 0.25 * fm.value.real * lapS)


def nonlinear_Q(pot: CoordinatePotential, phi, z) -> float:
    """Q(phi) = S(pot + phi) - S(pot) - L phi at z."""
    m = pot.multijet(z, order=4)
    fm = _field_multijet(phi, z)
    pert = m + fm
    _check_pd(_metric_block(pert), "perturbed metric")
    s_pert = scalar_multijet(pert).value.real
    s_base = scalar_multijet(m).value.real
    return float(s_pert - s_base - linearized_L(pot, phi, z))


# ---------------------------------------------------------------------------
# Radial-to-coordinate bridges
# ---------------------------------------------------------------------------


def _increment_multijet(z: np.ndarray, order: int) -> MultiJet:
    """Multijet of u with |z + dz|^2 = e^{t0} (1 + u)."""
    n = z.size
    t0 = np.log(np.vdot(z, z).real)
    c = np.zeros((order + 1,) * (2 * n), dtype=complex)
    w = np.exp(-t0)
    for j in range(n):
        idx = [0] * (2 * n)
        idx[j] = 1
        c[tuple(idx)] = np.conj(z[j]) * w
        idx = [0] * (2 * n)
        idx[n + j] = 1
        c[tuple(idx)] = z[j] * w
        idx = [0] * (2 * n)
        idx[j] = 1
        idx[n + j] = 1
        c[tuple(idx)] = w
    return MultiJet(n, order, c)


def _dt_multijet(z: np.ndarray, order: int) -> MultiJet:
    """Multijet of t - t0 = log(1 + u) at z."""
    return mj_log(_increment_multijet(z, order) + 1.0)


def _compose_radial(jet: Jet, z: np.ndarray) -> MultiJet:
    """Multijet at z of the radial function whose t-jet at log|z|^2 is given."""
    order = jet.order
    dt = _dt_multijet(np.asarray(z, dtype=complex), order)
    taylor = jet.coeffs / np.array([factorial(i) for i in range(order + 1)])
    return _compose_series(taylor.astype(complex), dt)


def potential_from_profile(p: RadialProfile, order: int = DEFAULT_ORDER) -> CoordinatePotential:
    """Coordinate potential Phi(z) = f(log|z|^2) from a radial profile."""

    def ev(z: np.ndarray) -> MultiJet:
        t0 = float(np.log(np.vdot(z, z).real))
        return _compose_radial(p.jet(t0, order), z)

    return CoordinatePotential(p.n, ev, label=p.label)


def radial_field_from_jet(jet: Jet, n: int) -> Callable[[np.ndarray], MultiJet]:
    """Coordinate field matching a radial t-jet; valid on the jet's sphere."""

    def ev(z: np.ndarray) -> MultiJet:
        z = np.asarray(z, dtype=complex)
        t0 = float(np.log(np.vdot(z, z).real))
        if abs(t0 - jet.base_point) > 1e-8 * max(1.0, abs(jet.base_point)):
            raise JetError("radial field queried off its base sphere")
        return _compose_radial(jet, z)

    return ev
