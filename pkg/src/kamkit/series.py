"""Truncated analytic germs under scale-weighted l1 norms.

A germ x(z) = sum_j a_j z^j at the origin is stored as its coefficient
vector through a hard degree cap D.  For a radius s the norm used
throughout the package is

    |x|_s = sum_{j=0}^{D} |a_j| s^j,

the l1 norm of the coefficients weighted by s^j.  For s < t we have
|x|_s <= |x|_t, so the identity embedding from radius t down to radius s
never increases norms; that monotone family is what the rest of the
package means by a scaled space.  Every operation here is exact on the
truncated coefficient space: products drop the overflow above degree D
and nothing else is approximated.

Each element additionally declares the largest radius at which it is
considered alive (`scale`) and an integer stage index (`level`).  A norm
query above the declared radius answers +inf, which is the convention
that makes the norm family total.

Two filtrations on germs are provided:

* the degree filtration read off from norm decay, `canonical_degree`:
  the largest k with |x|_s / s^k bounded on a sample grid, which for
  polynomial data is the valuation;
* the dyadic tail split `harmonic_split`: degrees below 2^k versus
  degrees at least 2^k.  The tail piece contracts by (s/t)^{2^k} between
  radii, exactly for monomials of degree 2^k, which is the quantitative
  content the iteration engine relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import ContractViolation, DomainError, NumericError

#: Sentinel returned by `canonical_degree` for the zero element, which lies
#: in every term of the degree filtration.
MAX_DEGREE = 10**9

#: Default sample radii for the grid-based degree test.
DEGREE_GRID = (0.1, 0.2, 0.3, 0.4, 0.5)

#: Default boundedness constant for the grid-based degree test.
DEGREE_BOUND = 10.0


def _as_coeff_array(coeffs: Iterable[complex]) -> np.ndarray:
    arr = np.asarray(coeffs, dtype=np.complex128).copy()
    if arr.ndim != 1 or arr.size == 0:
        raise DomainError("coefficient data must be a nonempty 1-d sequence")
    if not np.all(np.isfinite(arr.view(np.float64))):
        raise NumericError("coefficients must be finite")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class CoeffSeries:
    """Coefficient vector of a germ, indexed by degree 0..D."""

    coeffs: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "coeffs", _as_coeff_array(self.coeffs))

    # -- constructors ------------------------------------------------------

    @staticmethod
    def zeros(degree_cap: int) -> "CoeffSeries":
        return CoeffSeries(np.zeros(degree_cap + 1, dtype=np.complex128))

    @staticmethod
    def monomial(degree_cap: int, degree: int, coeff: complex = 1.0) -> "CoeffSeries":
        if not 0 <= degree <= degree_cap:
            raise DomainError(f"degree {degree} outside 0..{degree_cap}")
        c = np.zeros(degree_cap + 1, dtype=np.complex128)
        c[degree] = coeff
        return CoeffSeries(c)

    @staticmethod
    def identity(degree_cap: int) -> "CoeffSeries":
        """The germ z itself."""
        return CoeffSeries.monomial(degree_cap, 1)

    # -- basic queries -----------------------------------------------------

    @property
    def degree_cap(self) -> int:
        return len(self.coeffs) - 1

    def norm_at(self, s: float) -> float:
        if s <= 0.0:
            raise DomainError("radius must be positive")
        powers = s ** np.arange(len(self.coeffs), dtype=np.float64)
        return float(np.abs(self.coeffs) @ powers)

    def valuation(self) -> int:
        """Lowest degree with a nonzero coefficient; MAX_DEGREE for zero."""
        nz = np.nonzero(self.coeffs)[0]
        return MAX_DEGREE if len(nz) == 0 else int(nz[0])

    def is_zero(self) -> bool:
        return not self.coeffs.any()

    # -- arithmetic (exact on the truncation) ------------------------------

    def _check_cap(self, other: "CoeffSeries") -> None:
        if self.degree_cap != other.degree_cap:
            raise DomainError("degree caps differ")

    def __add__(self, other: "CoeffSeries") -> "CoeffSeries":
        self._check_cap(other)
        return CoeffSeries(self.coeffs + other.coeffs)

    def __sub__(self, other: "CoeffSeries") -> "CoeffSeries":
        self._check_cap(other)
        return CoeffSeries(self.coeffs - other.coeffs)

    def __neg__(self) -> "CoeffSeries":
        return CoeffSeries(-self.coeffs)

    def __mul__(self, other):
        if isinstance(other, CoeffSeries):
            self._check_cap(other)
            return CoeffSeries(np.convolve(self.coeffs, other.coeffs)[: len(self.coeffs)])
        return CoeffSeries(self.coeffs * complex(other))

    __rmul__ = __mul__

    def derivative(self) -> "CoeffSeries":
        ks = np.arange(len(self.coeffs))
        out = np.zeros_like(self.coeffs)
        out[:-1] = self.coeffs[1:] * ks[1:]
        return CoeffSeries(out)

    def compose(self, inner: "CoeffSeries") -> "CoeffSeries":
        """self(inner(z)) on the truncation; inner must vanish at 0."""
        self._check_cap(inner)
        if inner.coeffs[0] != 0:
            raise DomainError("inner germ must fix the origin")
        d = self.degree_cap
        acc = np.zeros(d + 1, dtype=np.complex128)
        for j in range(d, -1, -1):
            acc = np.convolve(acc, inner.coeffs)[: d + 1]
            acc[0] += self.coeffs[j]
        return CoeffSeries(acc)

    def allclose(self, other: "CoeffSeries", atol: float = 0.0, rtol: float = 1e-12) -> bool:
        self._check_cap(other)
        return bool(np.allclose(self.coeffs, other.coeffs, atol=atol, rtol=rtol))


@dataclass(frozen=True)
class SpaceSpec:
    """Ambient data of the truncated scaled space: scale bound S and cap D."""

    S: float = 1.0
    D: int = 32

    def __post_init__(self) -> None:
        if not (self.S > 0.0 and math.isfinite(self.S)):
            raise DomainError("scale bound S must be positive and finite")
        if self.D < 1:
            raise DomainError("degree cap D must be at least 1")

    def element(self, coeffs, scale: float, level: float = 0) -> "ScaledElement":
        series = coeffs if isinstance(coeffs, CoeffSeries) else CoeffSeries(coeffs)
        if series.degree_cap != self.D:
            raise DomainError("coefficient length does not match the space cap")
        return ScaledElement(series=series, scale=scale, level=level, bound=self.S)

    def zero(self, scale: float, level: float = 0) -> "ScaledElement":
        return self.element(CoeffSeries.zeros(self.D), scale, level)

    def monomial(self, degree: int, scale: float, coeff: complex = 1.0, level: float = 0):
        return self.element(CoeffSeries.monomial(self.D, degree, coeff), scale, level)


@dataclass(frozen=True, eq=False)
class ScaledElement:
    """A germ together with its declared radius and stage index.

    `level` is an integer stage (or math.inf for the limit stage); `bound`
    is the ambient scale bound S of the space the element lives in.
    """

    series: CoeffSeries
    scale: float
    level: float = 0
    bound: float = 1.0

    def __post_init__(self) -> None:
        if not (0.0 < self.scale < self.bound):
            raise DomainError(f"scale must lie in (0, {self.bound})")

    def norm(self, s: float) -> float:
        """|x|_s, with the +inf convention above the declared radius."""
        if not (0.0 < s < self.bound):
            raise DomainError(f"query radius must lie in (0, {self.bound})")
        if s > self.scale:
            return math.inf
        return self.series.norm_at(s)

    def with_series(self, series: CoeffSeries) -> "ScaledElement":
        return ScaledElement(series=series, scale=self.scale, level=self.level, bound=self.bound)

    def at_level(self, level: float) -> "ScaledElement":
        return ScaledElement(series=self.series, scale=self.scale, level=level, bound=self.bound)


def include(x: ScaledElement, s: float) -> ScaledElement:
    """Move x down the directed system: same coefficients, smaller radius."""
    if s >= x.scale:
        raise ContractViolation("inclusion only goes to a strictly smaller radius")
    if s <= 0.0:
        raise DomainError("radius must be positive")
    return ScaledElement(series=x.series, scale=s, level=x.level, bound=x.bound)


def canonical_degree(
    x: ScaledElement,
    grid: Iterable[float] = DEGREE_GRID,
    bound_const: float = DEGREE_BOUND,
) -> int:
    """Largest k with |x|_s / s^k < bound_const across the sample grid.

    On polynomial data this recovers the valuation.  The zero element is in
    every filtration step, answered by the MAX_DEGREE sentinel.
    """
    grid = tuple(grid)
    if not grid:
        raise DomainError("sample grid must be nonempty")
    if any(not (0.0 < g <= x.scale) for g in grid):
        raise DomainError("grid radii must lie in (0, scale]")
    if x.series.is_zero():
        return MAX_DEGREE
    norms = [x.series.norm_at(g) for g in grid]
    best = 0
    for k in range(x.series.degree_cap + 2):
        if all(n / g**k < bound_const for n, g in zip(norms, grid)):
            best = k
        else:
            break
    return best


def harmonic_split(x: ScaledElement, k: int, d: float = 0.0) -> tuple[ScaledElement, ScaledElement]:
    """Split off the dyadic tail: degrees < 2^k versus degrees >= 2^k.

    The tail satisfies |tail|_s <= (s/t)^{2^k} |tail|_t for s < t (with
    equality when the tail is a single monomial of degree exactly 2^k), so
    it lies in the depth-k harmonic class for every loss exponent d >= 0.
    The parameter d is accepted for signature compatibility with the
    schedule machinery; the coefficient model realizes the class with d=0.
    """
    if k < 0:
        raise DomainError("filtration index must be nonnegative")
    if d < 0:
        raise DomainError("loss exponent d must be nonnegative")
    cut = 2**k
    head_c = x.series.coeffs.copy()
    tail_c = x.series.coeffs.copy()
    if cut <= x.series.degree_cap:
        head_c[cut:] = 0.0
        tail_c[:cut] = 0.0
    else:
        tail_c[:] = 0.0
    return x.with_series(CoeffSeries(head_c)), x.with_series(CoeffSeries(tail_c))
