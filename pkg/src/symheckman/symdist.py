"""
Bivariate symmetric density generators and the univariate functions built on them.

A generator ``g`` defines the standardized bivariate density

    f(z1, z2) = g(z1**2 + z2**2) / Z_g,     Z_g = pi * int_0^inf g(u) du.

For the Gaussian and Student-t generators every quantity used by the
selection model has a closed form.  Any other generator goes through
adaptive quadrature of ``g`` itself (``tabulated``).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, special

from symheckman.exceptions import (
    DomainError,
    NonNormalizableGeneratorError,
    QuadratureError,
)

QUAD_EPSABS = 1e-10
QUAD_EPSREL = 1e-8
QUAD_LIMIT = 200

# below this CDF value the log is taken from the continued fraction directly
_TINY_CDF = 1e-280
_ARCTANH_CLAMP = 18.0

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

def quad(func, a, b, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, points=None):
    """Adaptive Gauss-Kronrod quadrature that raises instead of warning.

    Infinite limits are handled by QUADPACK's interval transformation.
    """
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", integrate.IntegrationWarning)
        kw = {"epsabs": epsabs, "epsrel": epsrel, "limit": QUAD_LIMIT}
        if points is not None and np.isfinite(a) and np.isfinite(b):
            kw["points"] = points
        value, abserr = integrate.quad(func, a, b, **kw)
    bad = [w for w in caught if issubclass(w.category, integrate.IntegrationWarning)]
    if bad or not np.isfinite(value):
        # QUADPACK sometimes flags roundoff while the estimate is fine
        if np.isfinite(value) and abserr <= max(10 * epsabs, 10 * epsrel * abs(value)):
            return value
        raise QuadratureError(
            "quadrature did not converge on [%r, %r]" % (a, b),
            {"a": a, "b": b, "value": value, "abserr": abserr,
             "warning": str(bad[0].message) if bad else "non-finite result"},
        )
    return value


# ---------------------------------------------------------------------------
# density generators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DensityGenerator:
    """A symmetric density generator ``g_c`` on [0, inf).

    Use the factories :func:`gaussian`, :func:`student_t` and
    :func:`tabulated` rather than the constructor.

    Attributes
    ----------
    kind : {"gaussian", "student_t", "tabulated"}
    nu : float or None
        Degrees of freedom for ``student_t``.
    func : callable or None
        ``g(u)`` for ``tabulated`` generators (vectorized over ``u``).
    tail_bound : float
        ``g(u)`` is treated as zero for ``u > tail_bound``; lets quadrature
        truncate the tail.  ``inf`` means integrate the full range.
    radial_sampler : callable or None
        ``radial_sampler(rng, n)`` draws the radius ``R`` of the stochastic
        representation, needed only for simulation.
    """

    kind: str
    nu: Optional[float] = None
    func: Optional[Callable] = field(default=None, compare=False)
    tail_bound: float = math.inf
    radial_sampler: Optional[Callable] = field(default=None, compare=False)
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("gaussian", "student_t", "tabulated"):
            raise DomainError("unknown generator kind %r" % self.kind)
        if self.kind == "student_t" and not (self.nu is not None and self.nu > 0):
            raise DomainError("Student-t generator needs nu > 0, got %r" % self.nu)
        if self.kind == "tabulated" and self.func is None:
            raise DomainError("tabulated generator needs a function g(u)")
        if not self.tail_bound > 0:
            raise DomainError("tail_bound must be positive")

    @property
    def closed_form(self):
        return self.kind != "tabulated"

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "gaussian":
            out = np.exp(-0.5 * u)
        elif self.kind == "student_t":
            out = np.exp(-0.5 * (self.nu + 2.0) * np.log1p(u / self.nu))
        else:
            out = np.asarray(self.func(u), dtype=float)
        if math.isfinite(self.tail_bound):
            out = np.where(u > self.tail_bound, 0.0, out)
        return out if out.ndim else float(out)

    @property
    def normalizer(self):
        return generator_normalizer(self)

    def with_nu(self, nu):
        """Return a copy with different degrees of freedom (Student-t only)."""
        if self.kind != "student_t":
            raise DomainError("with_nu only applies to Student-t generators")
        return student_t(nu)

    def as_tabulated(self):
        """The same generator stripped of its closed forms (quadrature path)."""
        return tabulated(self.__call__, tail_bound=self.tail_bound,
                         radial_sampler=self.radial_sampler,
                         name="tabulated(%s)" % (self.name or self.kind))


def gaussian():
    """Bivariate normal generator ``g(u) = exp(-u/2)``."""
    return DensityGenerator("gaussian", name="normal")


def student_t(nu):
    """Bivariate Student-t generator ``g(u) = (1 + u/nu)^(-(nu+2)/2)``."""
    if not nu > 0:
        raise DomainError("degrees of freedom must be positive, got %r" % nu)
    return DensityGenerator("student_t", nu=float(nu), name="t(%g)" % nu)


def tabulated(g, tail_bound=math.inf, radial_sampler=None, name="tabulated"):
    """Wrap an arbitrary nonnegative, integrable generator ``g``.

    ``tail_bound`` is the decay bound beyond which ``g`` is ignored by the
    quadrature; pass ``math.inf`` when ``g`` decays fast enough for the
    infinite-range rule.
    """
    return DensityGenerator("tabulated", func=g, tail_bound=float(tail_bound),
                            radial_sampler=radial_sampler, name=name)


def generator_normalizer(g):
    """``Z_g = pi * int_0^inf g(u) du``; closed form for the built-in kinds."""
    if g.kind == "gaussian":
        return 2.0 * math.pi
    if g.kind == "student_t":
        nu = g.nu
        return math.exp(math.log(nu * math.pi) + special.gammaln(nu / 2.0)
                        - special.gammaln((nu + 2.0) / 2.0))
    return _tabulated_normalizer(g)


def _tabulated_normalizer(g):
    try:
        val = quad(lambda u: g(u), 0.0, g.tail_bound)
    except QuadratureError as exc:
        raise NonNormalizableGeneratorError(
            "integral of g over [0, inf) does not converge: %s"
            % exc.diagnostics.get("warning")) from exc
    if not (np.isfinite(val) and val > 0):
        raise NonNormalizableGeneratorError("generator integral is %r" % val)
    return math.pi * val


# ---------------------------------------------------------------------------
# univariate normal and Student-t
# ---------------------------------------------------------------------------

def normal_pdf(x):
    return np.exp(normal_logpdf(x))


def normal_logpdf(x):
    x = np.asarray(x, dtype=float)
    return -0.5 * x * x - _LOG_SQRT_2PI


def normal_cdf(x):
    return special.ndtr(x)


def normal_logcdf(x):
    return special.log_ndtr(x)


def _check_nu(nu):
    if not np.all(np.asarray(nu) > 0):
        raise DomainError("degrees of freedom must be positive, got %r" % (nu,))


def t_logpdf(x, nu):
    _check_nu(nu)
    x = np.asarray(x, dtype=float)
    lc = (special.gammaln((nu + 1.0) / 2.0) - special.gammaln(nu / 2.0)
          - 0.5 * np.log(nu * math.pi))
    return lc - 0.5 * (nu + 1.0) * np.log1p(x * x / nu)


def t_pdf(x, nu):
    """Standard Student-t density with ``nu`` degrees of freedom."""
    return np.exp(t_logpdf(x, nu))


def t_cdf(x, nu):
    """Standard Student-t CDF via the regularized incomplete beta function."""
    _check_nu(nu)
    return special.stdtr(nu, x)


def _log_betainc_cf(a, b, x, one_minus_x, log_x=None):
    """log I_x(a, b) by the Lentz continued fraction, for x < (a+1)/(a+b+2).

    ``log_x`` may be passed when ``x`` itself underflows.
    """
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    d = np.where(np.abs(d) < tiny, tiny, d)
    d = 1.0 / d
    h = d.copy()
    for m in range(1, 400):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < tiny, tiny, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < tiny, tiny, c)
        d = 1.0 / d
        h = h * d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = np.where(np.abs(d) < tiny, tiny, d)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < tiny, tiny, c)
        d = 1.0 / d
        delta = d * c
        h = h * delta
        if np.all(np.abs(delta - 1.0) < 1e-15):
            break
    if log_x is None:
        log_x = np.log(x)
    logpre = (a * log_x + b * np.log(one_minus_x) - np.log(a)
              - special.betaln(a, b))
    return logpre + np.log(h)


def t_logcdf(x, nu):
    """log F_nu(x), accurate in the far lower tail."""
    _check_nu(nu)
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    nu_arr = np.broadcast_to(np.asarray(nu, dtype=float), x.shape)
    p = special.stdtr(nu_arr, x)
    with np.errstate(divide="ignore"):
        out = np.log(p)
    deep = (p < _TINY_CDF) & (x < 0)
    if np.any(deep):
        xd, nd = x[deep], nu_arr[deep]
        # w = nu / (nu + x^2) written via q = sqrt(nu)/|x| to survive huge |x|
        q = np.sqrt(nd) / np.abs(xd)
        q2 = q * q
        w = q2 / (1.0 + q2)
        log_w = 2.0 * np.log(q) - np.log1p(q2)
        out[deep] = math.log(0.5) + _log_betainc_cf(nd / 2.0, 0.5, w, 1.0 / (1.0 + q2), log_w)
    return out[0] if scalar else out


def t_ppf(p, nu, tol=1e-12):
    """Inverse of :func:`t_cdf` by bisection (used as an independent check)."""
    _check_nu(nu)
    if not 0.0 < p < 1.0:
        raise DomainError("probability must lie in (0, 1)")
    lo, hi = -1.0, 1.0
    while t_cdf(lo, nu) > p:
        lo *= 2.0
    while t_cdf(hi, nu) < p:
        hi *= 2.0
    while hi - lo > tol * max(1.0, abs(lo)):
        mid = 0.5 * (lo + hi)
        if t_cdf(mid, nu) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# link functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinkFunction:
    """Monotone link ``eta = forward(theta)`` with inverse and derivative."""

    kind: str

    def __post_init__(self):
        if self.kind not in ("identity", "log", "arctanh"):
            raise DomainError("unknown link %r" % self.kind)

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "identity":
            return x
        if self.kind == "log":
            return np.log(x)
        return np.arctanh(x)

    def inverse(self, eta):
        eta = np.asarray(eta, dtype=float)
        if self.kind == "identity":
            return eta
        if self.kind == "log":
            return np.exp(np.clip(eta, -700.0, 700.0))
        return np.tanh(np.clip(eta, -_ARCTANH_CLAMP, _ARCTANH_CLAMP))

    def derivative(self, x):
        """d forward / d x, evaluated at a point of the parameter domain."""
        x = np.asarray(x, dtype=float)
        if self.kind == "identity":
            return np.ones_like(x)
        if self.kind == "log":
            return 1.0 / x
        return 1.0 / (1.0 - x * x)


IDENTITY = LinkFunction("identity")
LOG = LinkFunction("log")
ARCTANH = LinkFunction("arctanh")


def get_link(name):
    if isinstance(name, LinkFunction):
        return name
    try:
        return {"identity": IDENTITY, "log": LOG, "arctanh": ARCTANH}[name]
    except KeyError:
        raise DomainError("unknown link %r" % (name,)) from None


# ---------------------------------------------------------------------------
# marginal, G and H
# ---------------------------------------------------------------------------

def _half_line_integral(g, r2, lo, hi):
    """int_lo^hi g(r2 + w^2) dw with lo, hi >= 0, honouring g.tail_bound."""
    if math.isfinite(g.tail_bound):
        if r2 >= g.tail_bound:
            return 0.0
        hi = min(hi, math.sqrt(g.tail_bound - r2))
        if lo >= hi:
            return 0.0
    return quad(lambda w: g(r2 + w * w), lo, hi)


def _scalarize(fn):
    vec = np.vectorize(fn, otypes=[float])

    def wrapper(*args):
        out = vec(*args)
        return float(out) if out.ndim == 0 else out

    return wrapper


def marginal_z_pdf(z, g):
    """Marginal density of either standardized component ``Z1`` (or ``Z2``)."""
    if g.kind == "gaussian":
        return normal_pdf(z)
    if g.kind == "student_t":
        return t_pdf(z, g.nu)
    zg = generator_normalizer(g)
    return _scalarize(
        lambda zz: 2.0 * _half_line_integral(g, zz * zz, 0.0, math.inf) / zg)(z)


def G_function(x, r, g):
    """Conditional CDF of ``Z2`` at ``x`` given ``Z1 = r``."""
    if g.kind == "gaussian":
        return normal_cdf(np.asarray(x, dtype=float) + 0.0 * np.asarray(r))
    if g.kind == "student_t":
        nu = g.nu
        r = np.asarray(r, dtype=float)
        return t_cdf(np.sqrt((nu + 1.0) / (nu + r * r)) * x, nu + 1.0)
    return _scalarize(lambda xx, rr: _G_quad(xx, rr, g))(x, r)


def _G_quad(x, r, g):
    r2 = r * r
    half = _half_line_integral(g, r2, 0.0, math.inf)
    if half <= 0.0:
        raise QuadratureError("conditional normalizer vanished", {"r": r})
    if x < 0:
        return _half_line_integral(g, r2, -x, math.inf) / (2.0 * half)
    return 0.5 + _half_line_integral(g, r2, 0.0, x) / (2.0 * half)


def log_G_function(x, r, g):
    """log of :func:`G_function` with tail-safe closed forms."""
    if g.kind == "gaussian":
        return normal_logcdf(np.asarray(x, dtype=float) + 0.0 * np.asarray(r))
    if g.kind == "student_t":
        nu = g.nu
        r = np.asarray(r, dtype=float)
        return t_logcdf(np.sqrt((nu + 1.0) / (nu + r * r)) * x, nu + 1.0)
    return np.log(G_function(x, r, g))


def H_function(x, rho, g):
    """``P(rho*Z1 + sqrt(1-rho^2)*Z2 > -x)``.

    For built-in generators this is the marginal CDF of ``Z1`` regardless of
    ``rho``.  Tabulated generators integrate the density of the linear
    combination, itself a convolution integral over the joint density.
    """
    if g.kind == "gaussian":
        return normal_cdf(np.asarray(x, dtype=float) + 0.0 * np.asarray(rho))
    if g.kind == "student_t":
        return t_cdf(np.asarray(x, dtype=float) + 0.0 * np.asarray(rho), g.nu)
    return _scalarize(lambda xx, rr: _H_quad(xx, rr, g))(x, rho)


def log_H_function(x, rho, g):
    if g.kind == "gaussian":
        return normal_logcdf(np.asarray(x, dtype=float) + 0.0 * np.asarray(rho))
    if g.kind == "student_t":
        return t_logcdf(np.asarray(x, dtype=float) + 0.0 * np.asarray(rho), g.nu)
    return np.log(H_function(x, rho, g))


def combination_pdf(u, rho, g):
    """Density of ``rho*Z1 + sqrt(1-rho^2)*Z2`` at ``u`` by quadrature.

    The joint density is integrated along the line ``rho*z1 + s*z2 = u``
    parametrized by ``z1``, which avoids the 1/rho singularity of the
    ``zeta = rho*z1`` parametrization when ``rho`` is small.
    """
    if not -1.0 < rho < 1.0:
        raise DomainError("rho must lie in (-1, 1)")
    s = math.sqrt(1.0 - rho * rho)
    zg = generator_normalizer(g)

    def integrand(t):
        return g(t * t + ((u - rho * t) / s) ** 2)

    centre = rho * u  # the quadratic form is minimized here
    val = (quad(integrand, -math.inf, centre) + quad(integrand, centre, math.inf))
    return val / (s * zg)


def _H_quad(x, rho, g):
    if not -1.0 < rho < 1.0:
        raise DomainError("rho must lie in (-1, 1)")
    pdf = lambda u: combination_pdf(u, rho, g)  # noqa: E731
    # P(S > -x) = 1/2 + int_0^x for x >= 0, tail integral otherwise
    if x >= 0:
        return 0.5 + quad(pdf, 0.0, x) if x > 0 else 0.5
    return quad(pdf, -x, math.inf)
