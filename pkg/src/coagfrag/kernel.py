"""Balanced-growth coagulation-fragmentation coefficients and derived scalars.

The model couples a symmetric homogeneous coagulation kernel

    K(x, y) = K0 * (x**alpha * y**(lam - alpha) + x**(lam - alpha) * y**alpha)

with an overall fragmentation rate a(x) = a0 * x**(lam - 1) and a scaling
daughter distribution b(x, y) = B(x / y) / y for 0 < x < y.  The exponents
are tied together (balanced growth):

    lam in (1, 2],   gamma = lam - 1 in (0, 1],
    alpha in [max(1/2, lam - 1), lam / 2],
    -nu - 1 < alpha  for the small-size exponent nu of B.

B lives on (0, 1), is non-negative and normalised by int_0^1 z*B(z) dz = 1,
which is exactly the statement that splitting conserves mass.  The bundled
power-law profile is B_nu(z) = (nu + 2) * z**nu with nu in (-2, 0].

Derived scalars
---------------
``frag_moment(spec, m, p)``
    b_{m,p} = int_0^1 z**m B(z)**p dz.  For the power-law profile this is
    finite exactly on {m > -1, p >= 1, m + p*nu > -1} and equals
    (nu + 2)**p / (m + p*nu + 1).
``b_ln(spec)``
    int_0^1 z*|ln z|*B(z) dz, the log-weighted daughter mass moment
    (= 1/(nu + 2) for B_nu).
``rho_star(spec)``
    a0 * b_ln / (2 * K0 * ln 2).  Total masses below this threshold admit
    mass-conserving dynamics; sufficiently larger masses gel.
``delta_rho(spec, rho)``
    K0 * ln 2 * (rho_star - rho), positive in the sub-critical regime.
``moment_closure_constant(spec, m, rho)``
    the smallest constant C1(m) closing the moment production estimate via
    the sharp Young inequality (see its docstring); it feeds the Lyapunov
    diagnostic.

All evaluations are plain 64-bit floating point; the daughter moments are
additionally available in exact rational arithmetic where the closed form is
rational (``frag_moment_exact``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np
from scipy import integrate

__all__ = [
    "AssumptionViolation",
    "DivergentMomentError",
    "PowerLawDaughter",
    "TabulatedDaughter",
    "CoefficientSpec",
    "DerivedConstants",
    "validate",
    "eval_K",
    "eval_a",
    "eval_b",
    "frag_moment",
    "frag_moment_exact",
    "b_ln",
    "b_ln_exact",
    "rho_star",
    "delta_rho",
    "young_constant",
    "moment_closure_constant",
    "default_moment_exponents",
    "derived_constants",
    "sigma_lower_bound",
]

LN2 = math.log(2.0)


class AssumptionViolation(ValueError):
    """A coefficient spec violates one of the structural model assumptions.

    ``constraint`` names the failed assumption:

    - ``parameter-domain``: magnitudes/exponents outside their basic domains
    - ``homogeneity-window``: lam not in (1, 2] or alpha outside
      [max(1/2, lam - 1), lam / 2]
    - ``daughter-normalization``: int_0^1 z*B(z) dz != 1
    - ``small-size-compatibility``: -nu - 1 >= alpha
    """

    def __init__(self, constraint: str, message: str):
        super().__init__(f"{constraint}: {message}")
        self.constraint = constraint


class DivergentMomentError(ValueError):
    """Requested daughter moment integral diverges (outside the finiteness set)."""


# ---------------------------------------------------------------------------
# daughter distributions


@dataclass(frozen=True)
class PowerLawDaughter:
    """Power-law daughter profile B(z) = (nu + 2) * z**nu on (0, 1).

    The prefactor makes int_0^1 z*B(z) dz = 1 exactly for every
    nu in (-2, 0].  nu = 0 is the uniform (binary-like) profile B = 2.
    """

    nu: float = 0.0

    def B(self, z):
        z = np.asarray(z, dtype=float)
        return (self.nu + 2.0) * z**self.nu

    def moment_is_finite(self, m: float, p: float) -> bool:
        """(m, p) membership in the finiteness set {m > -1, p >= 1, m + p*nu > -1}."""
        return m > -1.0 and p >= 1.0 and m + p * self.nu > -1.0

    def moment(self, m: float, p: float = 1.0) -> float:
        if not self.moment_is_finite(m, p):
            raise DivergentMomentError(
                f"daughter moment (m={m}, p={p}) diverges for nu={self.nu}"
            )
        return (self.nu + 2.0) ** p / (m + p * self.nu + 1.0)

    def b_ln(self) -> float:
        # (nu+2) * int_0^1 z^(nu+1) |ln z| dz = (nu+2) / (nu+2)^2
        return 1.0 / (self.nu + 2.0)

    def segment_number(self, z_lo, z_hi):
        """int_{z_lo}^{z_hi} B(z) dz in closed form, vectorized.

        Finite for every 0 <= z_lo < z_hi <= 1 when nu > -1; for nu <= -1 the
        value is finite only for z_lo > 0, which is the only way the operators
        call it (cell edges are positive).
        """
        z_lo = np.asarray(z_lo, dtype=float)
        z_hi = np.asarray(z_hi, dtype=float)
        if self.nu == -1.0:
            return np.log(z_hi / z_lo)
        q = self.nu + 1.0
        return (self.nu + 2.0) / q * (z_hi**q - z_lo**q)

    def segment_mass(self, z_lo, z_hi):
        """int_{z_lo}^{z_hi} z*B(z) dz in closed form, vectorized."""
        z_lo = np.asarray(z_lo, dtype=float)
        z_hi = np.asarray(z_hi, dtype=float)
        q = self.nu + 2.0
        return (self.nu + 2.0) / q * (z_hi**q - z_lo**q)


@dataclass(frozen=True)
class TabulatedDaughter:
    """Piecewise-polynomial daughter profile on a breakpoint mesh of (0, 1].

    ``breakpoints`` is strictly increasing with first entry 0 and last entry 1;
    piece p covers [breakpoints[p], breakpoints[p+1]) and evaluates
    B(z) = sum_d coefficients[p, d] * z**d (global variable, ascending degree).

    Piecewise polynomials are bounded, so the small-size exponent bound used
    by the structural assumptions is ``nu = 0`` (the realised profile may
    vanish faster near 0; finiteness of the moments then only needs m > -1).
    Moment integrals are closed-form per piece for integer powers p and
    adaptive quadrature per piece otherwise.
    """

    breakpoints: tuple[float, ...]
    coefficients: tuple[tuple[float, ...], ...]
    nu: float = field(default=0.0, init=False)

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        if bp.ndim != 1 or bp.size < 2 or bp[0] != 0.0 or bp[-1] != 1.0:
            raise ValueError("breakpoints must run from 0 to 1")
        if np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if len(self.coefficients) != bp.size - 1:
            raise ValueError("one coefficient row per piece required")

    def _pieces(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        for p, row in enumerate(self.coefficients):
            yield bp[p], bp[p + 1], np.asarray(row, dtype=float)

    def B(self, z):
        z = np.asarray(z, dtype=float)
        out = np.zeros_like(z)
        for z1, z2, c in self._pieces():
            mask = (z >= z1) & (z < z2) if z2 < 1.0 else (z >= z1) & (z <= z2)
            out = np.where(mask, np.polynomial.polynomial.polyval(z, c), out)
        return out

    def moment_is_finite(self, m: float, p: float) -> bool:
        return m > -1.0 and p >= 1.0

    def moment(self, m: float, p: float = 1.0) -> float:
        if not self.moment_is_finite(m, p):
            raise DivergentMomentError(
                f"daughter moment (m={m}, p={p}) diverges for a bounded profile"
            )
        total = 0.0
        for z1, z2, c in self._pieces():
            if p == int(p):
                cp = np.polynomial.polynomial.polypow(c, int(p))
                for d, cd in enumerate(cp):
                    if cd == 0.0:
                        continue
                    q = m + d + 1.0
                    # q > 0 on the first piece because m > -1 and d >= 0
                    hi = z2**q
                    lo = z1**q if z1 > 0.0 else 0.0
                    total += cd * (hi - lo) / q
            else:
                val, _ = integrate.quad(
                    lambda z, c=c: z**m
                    * np.polynomial.polynomial.polyval(z, c) ** p,
                    z1,
                    z2,
                    epsabs=1e-14,
                    epsrel=1e-12,
                )
                total += val
        return total

    def b_ln(self) -> float:
        # int z^(d+1) |ln z| dz = 1/(d+2)^2 on (0,1); per piece via quadrature
        total = 0.0
        for z1, z2, c in self._pieces():
            val, _ = integrate.quad(
                lambda z, c=c: z
                * abs(math.log(z))
                * np.polynomial.polynomial.polyval(z, c),
                max(z1, 1e-300),
                z2,
                epsabs=1e-14,
                epsrel=1e-12,
            )
            total += val
        return total

    def segment_number(self, z_lo, z_hi):
        z_lo = np.atleast_1d(np.asarray(z_lo, dtype=float))
        z_hi = np.atleast_1d(np.asarray(z_hi, dtype=float))
        out = np.zeros(np.broadcast(z_lo, z_hi).shape)
        for z1, z2, c in self._pieces():
            a = np.clip(z_lo, z1, z2)
            b = np.clip(z_hi, z1, z2)
            anti_b = np.zeros_like(out)
            anti_a = np.zeros_like(out)
            for d, cd in enumerate(c):
                if cd == 0.0:
                    continue
                anti_b += cd * b ** (d + 1) / (d + 1)
                anti_a += cd * a ** (d + 1) / (d + 1)
            out += anti_b - anti_a
        return out

    def segment_mass(self, z_lo, z_hi):
        z_lo = np.atleast_1d(np.asarray(z_lo, dtype=float))
        z_hi = np.atleast_1d(np.asarray(z_hi, dtype=float))
        out = np.zeros(np.broadcast(z_lo, z_hi).shape)
        for z1, z2, c in self._pieces():
            a = np.clip(z_lo, z1, z2)
            b = np.clip(z_hi, z1, z2)
            for d, cd in enumerate(c):
                if cd == 0.0:
                    continue
                out += cd * (b ** (d + 2) - a ** (d + 2)) / (d + 2)
        return out


Daughter = PowerLawDaughter | TabulatedDaughter


# ---------------------------------------------------------------------------
# coefficient spec


@dataclass(frozen=True)
class CoefficientSpec:
    """Static model parameters: exponents, magnitudes and daughter profile.

    ``lam``   homogeneity degree of the coagulation kernel, in (1, 2]
    ``alpha`` kernel exponent, in [max(1/2, lam - 1), lam / 2]
    ``K0``    coagulation magnitude, > 0
    ``a0``    fragmentation magnitude, > 0
    """

    lam: float
    alpha: float
    K0: float = 1.0
    a0: float = 1.0
    daughter: Daughter = PowerLawDaughter(0.0)

    @property
    def gamma(self) -> float:
        """Fragmentation growth exponent lam - 1, in (0, 1]."""
        return self.lam - 1.0


def validate(spec: CoefficientSpec) -> CoefficientSpec:
    """Check every structural assumption; return the spec or raise.

    Raises
    ------
    AssumptionViolation
        with ``constraint`` naming the failed assumption (see the class
        docstring for the catalogue).
    """
    lam, alpha = spec.lam, spec.alpha
    for name, value in (("lam", lam), ("alpha", alpha), ("K0", spec.K0), ("a0", spec.a0)):
        if not math.isfinite(value):
            raise AssumptionViolation("parameter-domain", f"{name} must be finite")
    if spec.K0 <= 0.0:
        raise AssumptionViolation("parameter-domain", f"K0 must be positive, got {spec.K0}")
    if spec.a0 <= 0.0:
        raise AssumptionViolation("parameter-domain", f"a0 must be positive, got {spec.a0}")
    if isinstance(spec.daughter, PowerLawDaughter):
        nu = spec.daughter.nu
        if not (-2.0 < nu <= 0.0):
            raise AssumptionViolation(
                "parameter-domain", f"daughter exponent nu must lie in (-2, 0], got {nu}"
            )
    if not (1.0 < lam <= 2.0):
        raise AssumptionViolation(
            "homogeneity-window", f"lam must lie in (1, 2], got {lam}"
        )
    lo, hi = max(0.5, lam - 1.0), lam / 2.0
    if not (lo <= alpha <= hi):
        raise AssumptionViolation(
            "homogeneity-window",
            f"alpha must lie in [{lo}, {hi}] for lam={lam}, got {alpha}",
        )
    if isinstance(spec.daughter, TabulatedDaughter):
        mass = float(spec.daughter.moment(1.0, 1.0))
        if abs(mass - 1.0) > 1e-10:
            raise AssumptionViolation(
                "daughter-normalization",
                f"int z*B(z) dz must equal 1, got {mass!r}",
            )
        z = np.linspace(1e-9, 1.0, 2001)
        if np.any(spec.daughter.B(z) < -1e-12):
            raise AssumptionViolation(
                "daughter-normalization", "B must be non-negative on (0, 1)"
            )
    if not (-spec.daughter.nu - 1.0 < alpha):
        raise AssumptionViolation(
            "small-size-compatibility",
            f"-nu-1 = {-spec.daughter.nu - 1.0} must be < alpha = {alpha}",
        )
    # consequence of the homogeneity window; cheap consistency assertion
    assert 0.5 <= alpha <= lam / 2.0 <= lam - alpha <= 1.0
    return spec


# ---------------------------------------------------------------------------
# coefficient evaluation


def _require_positive(name, x):
    if np.any(np.asarray(x) <= 0.0):
        raise ValueError(f"{name} must be positive")


def eval_K(spec: CoefficientSpec, x, y):
    """Coagulation kernel K0 * (x^alpha y^(lam-alpha) + x^(lam-alpha) y^alpha).

    Symmetric in (x, y); broadcasts over array inputs.
    """
    _require_positive("x", x)
    _require_positive("y", y)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    al, la = spec.alpha, spec.lam - spec.alpha
    out = spec.K0 * (x**al * y**la + x**la * y**al)
    return out if out.ndim else float(out)

def eval_a(spec: CoefficientSpec, x):
    """Overall fragmentation rate a0 * x^(lam-1)."""
    _require_positive("x", x)
    x = np.asarray(x, dtype=float)
    out = spec.a0 * x ** (spec.lam - 1.0)
    return out if out.ndim else float(out)

def eval_b(spec: CoefficientSpec, x, y):
    """Daughter density b(x, y) = B(x/y)/y for fragments of size x < y."""
    _require_positive("x", x)
    _require_positive("y", y)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x >= y):
        raise ValueError("daughter size x must be smaller than parent size y")
    out = spec.daughter.B(x / y) / y
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# derived scalar quantities


def frag_moment(spec: CoefficientSpec, m: float, p: float = 1.0) -> float:
    """Daughter moment b_{m,p} = int_0^1 z^m B(z)^p dz.

    Raises DivergentMomentError outside the finiteness set (for the power-law
    profile: m > -1, p >= 1 and m + p*nu > -1, boundary excluded).
    """
    return spec.daughter.moment(m, p)


def frag_moment_exact(daughter: PowerLawDaughter, m, p=1) -> Fraction:
    """Exact rational b_{m,p} for rational nu, m and integer p >= 1.

    The closed form (nu+2)^p / (m + p*nu + 1) is rational precisely in this
    regime; other inputs raise TypeError.
    """
    if not isinstance(daughter, PowerLawDaughter):
        raise TypeError("exact rational moments exist for power-law profiles only")
    if not isinstance(p, int) or isinstance(p, bool) or p < 1:
        raise TypeError("p must be an integer >= 1 for a rational closed form")
    nu = Fraction(daughter.nu) if not isinstance(daughter.nu, Fraction) else daughter.nu
    m = Fraction(m)
    if not daughter.moment_is_finite(float(m), p):
        raise DivergentMomentError(f"daughter moment (m={m}, p={p}) diverges")
    return (nu + 2) ** p / (m + p * nu + 1)


def b_ln(spec: CoefficientSpec) -> float:
    """Log-weighted daughter mass moment int_0^1 z*|ln z|*B(z) dz."""
    return spec.daughter.b_ln()


def b_ln_exact(daughter: PowerLawDaughter) -> Fraction:
    """Exact rational b_ln = 1/(nu + 2) for rational nu."""
    if not isinstance(daughter, PowerLawDaughter):
        raise TypeError("exact rational b_ln exists for power-law profiles only")
    return 1 / (Fraction(daughter.nu) + 2)


def rho_star(spec: CoefficientSpec) -> float:
    """Critical total mass a0 * b_ln / (2 * K0 * ln 2)."""
    return spec.a0 * b_ln(spec) / (2.0 * spec.K0 * LN2)


def delta_rho(spec: CoefficientSpec, rho: float) -> float:
    """Sub-criticality margin K0 * ln 2 * (rho_star - rho); positive iff rho < rho_star."""
    return spec.K0 * LN2 * (rho_star(spec) - rho)


def young_constant(A: float, theta: float, eps: float) -> float:
    """Smallest C with A*X**theta <= eps*X + C for all X >= 0 (0 <= theta < 1).

    C = (1-theta) * theta^(theta/(1-theta)) * A^(1/(1-theta)) * eps^(-theta/(1-theta)),
    attained at X = (A*theta/eps)^(1/(1-theta)).  theta = 0 degenerates to C = A.
    """
    if not (0.0 <= theta < 1.0):
        raise ValueError(f"theta must lie in [0, 1), got {theta}")
    if A < 0.0 or eps <= 0.0:
        raise ValueError("A must be >= 0 and eps > 0")
    if theta == 0.0 or A == 0.0:
        return A
    r = theta / (1.0 - theta)
    return (1.0 - theta) * theta**r * A ** (1.0 / (1.0 - theta)) * eps**-r


def moment_closure_constant(spec: CoefficientSpec, m: float, rho: float) -> float:
    """Constant C1(m) absorbing sub-linear moment production, via sharp Young.

    Returns the smallest C1(m) such that for all X >= 0

        a0 * b_{m,1} * rho^((1-m)/(lam-1)) * X^((m+lam-2)/(lam-1))
            <= (e*(1-m)*delta_rho/3) * X + (e*(1-m)/3) * C1(m)

    where X stands for the lam-moment.  Requires a sub-critical mass
    0 < rho < rho_star and an exponent m in [max(0, 2-lam), 1) so that the
    power on X lies in [0, 1).
    """
    lam = spec.lam
    if not (0.0 <= m < 1.0) or m < 2.0 - lam:
        raise ValueError(
            f"m must lie in [max(0, 2-lam), 1) = [{max(0.0, 2.0 - lam)}, 1), got {m}"
        )
    if m <= -spec.daughter.nu - 1.0:
        raise ValueError(f"m = {m} gives a divergent daughter moment")
    if not (0.0 < rho < rho_star(spec)):
        raise ValueError(f"rho must lie in (0, rho_star={rho_star(spec)!r}), got {rho}")
    theta = (m + lam - 2.0) / (lam - 1.0)
    A = spec.a0 * frag_moment(spec, m, 1.0) * rho ** ((1.0 - m) / (lam - 1.0))
    eps = math.e * (1.0 - m) * delta_rho(spec, rho) / 3.0
    return 3.0 * young_constant(A, theta, eps) / (math.e * (1.0 - m))


# ---------------------------------------------------------------------------
# exponent defaults and the sigma bookkeeping constant


def default_moment_exponents(spec: CoefficientSpec) -> tuple[float, float]:
    """Default (m0, m1) pair for the moment diagnostics.

    m0 sits at the lower quartile of its admissible window
    (max(-nu-1, 0), min(alpha, 1)) and m1 at the midpoint of
    [max(m0, 2-lam), 1), which guarantees m0 < m1 so the low-order moment
    check has a non-empty exponent range.
    """
    lo = max(-spec.daughter.nu - 1.0, 0.0)
    hi = min(spec.alpha, 1.0)
    m0 = lo + 0.25 * (hi - lo)
    lo1 = max(m0, 2.0 - spec.lam)
    m1 = 0.5 * (lo1 + 1.0)
    return m0, m1


@dataclass(frozen=True)
class DerivedConstants:
    """Scalar constants derived from a spec (and optionally an initial state)."""

    b_ln: float
    rho_star: float
    m0: float
    m1: float
    sigma: float = math.nan

    def with_sigma(self, sigma: float) -> "DerivedConstants":
        return replace(self, sigma=sigma)


def derived_constants(
    spec: CoefficientSpec, m0: float | None = None, m1: float | None = None
) -> DerivedConstants:
    """Bundle b_ln, rho_star and the diagnostic exponents for a validated spec.

    ``sigma`` is initial-condition dependent; attach it later via
    ``with_sigma(sigma_lower_bound(...))`` once initial moments are known.
    """
    d0, d1 = default_moment_exponents(spec)
    m0 = d0 if m0 is None else m0
    m1 = d1 if m1 is None else m1
    nu = spec.daughter.nu
    if not (-nu - 1.0 < m0 < spec.alpha) or not (0.0 <= m0 < 1.0):
        raise ValueError(f"m0 = {m0} outside (max(-nu-1, 0), min(alpha, 1))")
    if not (m0 <= m1 < 1.0) or m1 < 2.0 - spec.lam:
        raise ValueError(f"m1 = {m1} outside [max(m0, 2-lam), 1)")
    return DerivedConstants(b_ln=b_ln(spec), rho_star=rho_star(spec), m0=m0, m1=m1)


def sigma_lower_bound(
    m1: float, mass: float, moment_m0: float, moment_m1: float, abslog_mass: float
) -> float:
    """Bookkeeping constant sigma from initial moments (taken with equality).

    sigma = M_{m0}(f_in) + M_1(f_in) + 3/(e*(1-m1)) * M_{m1}(f_in)
            + int x*|ln x|*f_in dx

    ``abslog_mass`` is the absolute-log mass moment int x*|ln x|*f_in dx (not
    the signed one entering the Lyapunov functional).
    """
    return moment_m0 + mass + 3.0 / (math.e * (1.0 - m1)) * moment_m1 + abslog_mass
