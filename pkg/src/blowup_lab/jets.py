"""Truncated Taylor (jet) arithmetic and smooth cutoff functions.

A jet stores the raw derivatives f(t0), f'(t0), ..., f^(K)(t0) of a scalar
function at a base point (not divided by factorials).  All curvature
quantities in the radial engine are assembled from jets, so every derivative
that enters an operator is exact to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial

import numpy as np

__all__ = [
    "Jet",
    "CutoffSpec",
    "JetError",
    "jet_arith",
    "cutoff_jet",
    "grid_sample",
    "jet_variable",
    "jet_constant",
]

DEFAULT_ORDER = 6
MAX_ORDER = 8


class JetError(ValueError):
    """Invalid jet operation (zero divisor, log of non-positive value, ...)."""


@dataclass(frozen=True)
class Jet:
    """Raw-derivative jet of order ``K = len(coeffs) - 1`` at ``base_point``.

    ``coeffs[i]`` is the i-th derivative value; the value channel is
    ``coeffs[0]``.
    """

    base_point: float
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim != 1 or c.size < 1:
            raise JetError("jet needs at least a value channel")
        if not np.all(np.isfinite(c)):
            raise JetError("jet coefficients must be finite")
        object.__setattr__(self, "coeffs", c)

    @property
    def order(self) -> int:
        return self.coeffs.size - 1

    @property
    def value(self) -> float:
        return float(self.coeffs[0])

    def derivative(self, i: int = 1) -> float:
        return float(self.coeffs[i])

    def shift(self, i: int = 1) -> "Jet":
        """Exact jet of the i-th derivative function (order drops by ``i``)."""
        if i > self.order:
            raise JetError("derivative order exceeds jet order")
        return Jet(self.base_point, self.coeffs[i:])

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return jet_arith(self, _coerce(other, self), "add")

    __radd__ = __add__

    def __sub__(self, other):
        return jet_arith(self, _scale(_coerce(other, self), -1.0), "add")

    def __rsub__(self, other):
        return _coerce(other, self).__sub__(self)

    def __mul__(self, other):
        if np.isscalar(other):
            return _scale(self, float(other))
        return jet_arith(self, other, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        if np.isscalar(other):
            return _scale(self, 1.0 / float(other))
        return jet_arith(self, other, "div")

    def __rtruediv__(self, other):
        return jet_arith(_coerce(other, self), self, "div")

    def __neg__(self):
        return _scale(self, -1.0)


def jet_constant(value: float, base_point: float = 0.0, order: int = DEFAULT_ORDER) -> Jet:
    c = np.zeros(order + 1)
    c[0] = value
    return Jet(base_point, c)


def jet_variable(t: float, order: int = DEFAULT_ORDER) -> Jet:
    """Jet of the identity function at t."""
    c = np.zeros(order + 1)
    c[0] = t
    if order >= 1:
        c[1] = 1.0
    return Jet(t, c)


def _coerce(x, like: Jet) -> Jet:
    if isinstance(x, Jet):
        return x
    return jet_constant(float(x), like.base_point, like.order)


def _scale(a: Jet, s: float) -> Jet:
    return Jet(a.base_point, a.coeffs * s)


def _facts(order: int) -> np.ndarray:
    return np.array([factorial(i) for i in range(order + 1)], dtype=float)


def _to_taylor(a: Jet) -> np.ndarray:
    return a.coeffs / _facts(a.order)


def _from_taylor(base: float, c: np.ndarray) -> Jet:
    return Jet(base, c * _facts(c.size - 1))


def _series_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = a.size
    out = np.zeros(n)
    for i in range(n):
        out[i] = np.dot(a[: i + 1], b[i::-1])
    return out


def _series_recip(a: np.ndarray) -> np.ndarray:
    if a[0] == 0.0:
        raise JetError("division by a jet with zero value")
    n = a.size
    out = np.zeros(n)
    out[0] = 1.0 / a[0]
    for i in range(1, n):
        out[i] = -np.dot(a[1 : i + 1], out[i - 1 :: -1]) / a[0]
    return out


def _series_exp(a: np.ndarray) -> np.ndarray:
    # f = exp(a): f' = a' f, so (k+1) f_{k+1} = sum_{j} (j+1) a_{j+1} f_{k-j}
    n = a.size
    out = np.zeros(n)
    out[0] = np.exp(a[0])
    for k in range(n - 1):
        s = 0.0
        for j in range(k + 1):
            s += (j + 1) * a[j + 1] * out[k - j]
        out[k + 1] = s / (k + 1)
    return out


def _series_log(a: np.ndarray) -> np.ndarray:
    if a[0] <= 0.0:
        raise JetError("log of a jet with non-positive value")
    # f = log(a): f' = a'/a
    n = a.size
    out = np.zeros(n)
    out[0] = np.log(a[0])
    da = np.arange(1, n) * a[1:]
    dq = _series_mul(np.concatenate([da, [0.0]]), _series_recip(a))[: n - 1]
    out[1:] = dq / np.arange(1, n)
    return out


def _series_compose(f: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Taylor coefficients of f(g(t)) where g has zero constant term."""
    if g[0] != 0.0:
        raise JetError("compose requires inner series with zero constant term")
    n = f.size
    out = np.zeros(n)
    out[0] = f[-1]
    # Horner: (((f_K) * g + f_{K-1}) * g + ...) + f_0
    acc = np.zeros(n)
    acc[0] = f[-1]
    for k in range(n - 2, -1, -1):
        acc = _series_mul(acc, g)
        acc[0] += f[k]
    return acc


def jet_arith(a: Jet, b: Jet | None, op: str) -> Jet:
    """Combine jets; ``b`` is ignored for the unary ops exp/log.

    For ``compose``, the result is the jet of ``a o b`` at ``b.base_point``:
    ``a`` must be based at ``b``'s value.
    """
    if op == "add":
        _check_base(a, b)
        n = min(a.order, b.order)
        return Jet(a.base_point, a.coeffs[: n + 1] + b.coeffs[: n + 1])
    if op == "mul":
        _check_base(a, b)
        n = min(a.order, b.order)
        ta, tb = _to_taylor(a)[: n + 1], _to_taylor(b)[: n + 1]
        return _from_taylor(a.base_point, _series_mul(ta, tb))
    if op == "div":
        _check_base(a, b)
        n = min(a.order, b.order)
        ta, tb = _to_taylor(a)[: n + 1], _to_taylor(b)[: n + 1]
        return _from_taylor(a.base_point, _series_mul(ta, _series_recip(tb)))
    if op == "exp":
        return _from_taylor(a.base_point, _series_exp(_to_taylor(a)))
    if op == "log":
        return _from_taylor(a.base_point, _series_log(_to_taylor(a)))
    if op == "power":
        p = float(b.value) if isinstance(b, Jet) else float(b)
        if p == round(p) and p >= 0:
            k = int(round(p))
            out = jet_constant(1.0, a.base_point, a.order)
            for _ in range(k):
                out = jet_arith(out, a, "mul")
            return out
        return jet_arith(_scale(jet_arith(a, None, "log"), p), None, "exp")
    if op == "compose":
        if abs(a.base_point - b.value) > 1e-9 * max(1.0, abs(b.value)):
            raise JetError("compose: outer jet must be based at the inner jet's value")
        n = min(a.order, b.order)
        tf = _to_taylor(a)[: n + 1]
        tg = _to_taylor(b)[: n + 1].copy()
        tg[0] = 0.0
        return _from_taylor(b.base_point, _series_compose(tf, tg))
    raise JetError(f"unknown op {op!r}")


def _check_base(a: Jet, b: Jet):
    if abs(a.base_point - b.base_point) > 1e-12 * max(1.0, abs(a.base_point)):
        raise JetError("incompatible base points")


def jet_exp(a: Jet) -> Jet:
    return jet_arith(a, None, "exp")


def jet_log(a: Jet) -> Jet:
    return jet_arith(a, None, "log")


# ---------------------------------------------------------------------------
# Cutoff functions
# ---------------------------------------------------------------------------

# Degree-13 polynomial spline on [0, 1]: the unique polynomial with
# p(0) = 0, p(1) = 1 and vanishing derivatives of orders 1..6 at both ends,
# i.e. the C^6 smoothstep.  p(x) = x^7 * sum_k binom(6+k, k) binom(13, 6-k) (-x)^k
from math import comb

_SMOOTHSTEP6 = np.zeros(14)
for _k in range(7):
    _SMOOTHSTEP6[7 + _k] = comb(6 + _k, _k) * comb(13, 6 - _k) * (-1.0) ** _k


@dataclass(frozen=True)
class CutoffSpec:
    """Monotone transition from 0 on [0, inner] to 1 on [outer, inf)."""

    kind: str = "polynomial-spline"
    inner_radius: float = 1.0
    outer_radius: float = 2.0
    smoothness_order: int = 6

    def __post_init__(self):
        if self.kind not in ("polynomial-spline", "smooth-reference"):
            raise ValueError(f"unknown cutoff kind {self.kind!r}")
        if not (0 < self.inner_radius < self.outer_radius):
            raise ValueError("need 0 < inner_radius < outer_radius")
        if self.smoothness_order < 6:
            raise ValueError("smoothness_order must be >= 6")


def _poly_jet(coeffs: np.ndarray, x: Jet) -> Jet:
    out = jet_constant(0.0, x.base_point, x.order)
    for c in coeffs[::-1]:
        out = jet_arith(out, x, "mul") + float(c)
    return out


def cutoff_jet(spec: CutoffSpec, t: float, order: int = DEFAULT_ORDER) -> Jet:
    """Jet at ``t`` of the cutoff evaluated in the same variable as ``t``.

    In the flat regions the higher coefficients are exactly zero.
    """
    a, b = spec.inner_radius, spec.outer_radius
    if t <= a:
        return jet_constant(0.0, t, order)
    if t >= b:
        return jet_constant(1.0, t, order)
    x = (jet_variable(t, order) - a) / (b - a)
    if spec.kind == "polynomial-spline":
        return _poly_jet(_SMOOTHSTEP6, x)
    # smooth-reference: e(u) = exp(-1/u); gamma = e(x) / (e(x) + e(1-x))
    ex = jet_exp(-1.0 / x)
    ex1 = jet_exp(-1.0 / (1.0 - x))
    return ex / (ex + ex1)


def grid_sample(f, grid) -> list[Jet]:
    """Evaluate a jet-valued function at each node of a strictly increasing grid."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be 1-D and strictly increasing")
    return [f(float(t)) for t in grid]
