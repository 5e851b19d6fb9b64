"""
Symmetric generalized Heckman selection model: data, parameters and likelihood.

Latent pair per row::

    Y* = mu1 + sigma * Z1
    U* = mu2 + rho * Z1 + sqrt(1 - rho^2) * Z2

with ``(Z1, Z2)`` spherically distributed through a density generator, and
regressions ``g1(mu1) = X beta``, ``g2(mu2) = W gamma``, ``h1(sigma) = Z lambda``,
``h2(rho) = V kappa``.  Only ``u = 1{U* > 0}`` is seen on every row and ``y``
only where ``u = 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from symheckman import symdist
from symheckman.exceptions import LikelihoodError, SpecError
from symheckman.symdist import (
    ARCTANH,
    IDENTITY,
    LOG,
    DensityGenerator,
    LinkFunction,
    gaussian,
    get_link,
)

BLOCKS = ("beta", "gamma", "lambda", "kappa")


# ---------------------------------------------------------------------------
# data, specification, parameters
# ---------------------------------------------------------------------------

def _as_design(a, n, label):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] != n:
        raise SpecError("%s must have %d rows, got shape %s" % (label, n, a.shape))
    if not np.all(np.isfinite(a)):
        raise SpecError("%s contains non-finite entries" % label)
    return a


@dataclass(frozen=True, eq=False)
class SelectionDataset:
    """Outcome, selection indicator and the four covariate blocks.

    ``y`` is stored as NaN on censored rows so that a placeholder value can
    never leak into the likelihood.

    Parameters
    ----------
    y : array_like, shape (n,)
        Outcome; ignored where ``u == 0``.
    u : array_like of {0, 1}, shape (n,)
    X, W, Z, V : array_like, shape (n, k), (n, l), (n, p), (n, q)
        Designs for the outcome mean, selection, dispersion and correlation.
    names : dict, optional
        Column labels per block, keyed by ``"beta"``, ``"gamma"``,
        ``"lambda"``, ``"kappa"``.
    """

    y: np.ndarray
    u: np.ndarray
    X: np.ndarray
    W: np.ndarray
    Z: np.ndarray
    V: np.ndarray
    names: Optional[dict] = None
    check_rank: bool = True

    def __post_init__(self):
        u = np.asarray(self.u)
        if u.ndim != 1:
            raise SpecError("u must be one-dimensional")
        n = u.shape[0]
        if not np.all((u == 0) | (u == 1)):
            raise SpecError("selection indicator must be 0/1")
        u = u.astype(np.int8)
        y = np.array(self.y, dtype=float).reshape(-1)
        if y.shape[0] != n:
            raise SpecError("y and u lengths differ")
        y[u == 0] = np.nan
        if not np.all(np.isfinite(y[u == 1])):
            bad = int(np.flatnonzero((u == 1) & ~np.isfinite(y))[0])
            raise SpecError("missing outcome on selected row %d" % bad)
        blocks = {}
        for label in "XWZV":
            blocks[label] = _as_design(getattr(self, label), n, label)
        k, l, p, q = (blocks[c].shape[1] for c in "XWZV")
        if self.check_rank:
            for label, mat in blocks.items():
                if np.linalg.matrix_rank(mat) < mat.shape[1]:
                    raise SpecError("design %s is not of full column rank" % label)
        names = dict(self.names or {})
        for blk, label, dim in zip(BLOCKS, "XWZV", (k, l, p, q)):
            cols = list(names.get(blk) or ["%s%d" % (label.lower(), j) for j in range(dim)])
            if len(cols) != dim:
                raise SpecError("names[%r] has %d labels for %d columns" % (blk, len(cols), dim))
            names[blk] = cols
        for arr in (y, u, *blocks.values()):
            arr.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "u", u)
        for label, mat in blocks.items():
            object.__setattr__(self, label, mat)
        object.__setattr__(self, "names", names)

    @property
    def n(self):
        return self.u.shape[0]

    @property
    def n_observed(self):
        return int(self.u.sum())

    @property
    def dims(self):
        return (self.X.shape[1], self.W.shape[1], self.Z.shape[1], self.V.shape[1])

    @property
    def censoring(self):
        return 1.0 - self.u.mean()

    def take(self, idx):
        """Subset or reorder rows."""
        idx = np.asarray(idx)
        return SelectionDataset(self.y[idx], self.u[idx], self.X[idx], self.W[idx],
                                self.Z[idx], self.V[idx], names=self.names,
                                check_rank=False)


@dataclass(frozen=True)
class ModelSpec:
    """Links and density generator of a symmetric selection model.

    ``nu_free`` (Student-t only) adds ``log(nu)`` as the last free parameter;
    otherwise ``generator.nu`` is held fixed.
    """

    generator: DensityGenerator = field(default_factory=gaussian)
    links: Sequence[LinkFunction] = (IDENTITY, IDENTITY, LOG, ARCTANH)
    nu_free: Optional[bool] = None

    def __post_init__(self):
        links = tuple(get_link(lk) for lk in self.links)
        if len(links) != 4:
            raise SpecError("need four links (mu1, mu2, sigma, rho)")
        if links[2].kind == "arctanh" or links[3].kind == "log":
            raise SpecError("sigma needs a link onto (0, inf), rho onto (-1, 1)")
        object.__setattr__(self, "links", links)
        nu_free = self.nu_free
        if nu_free is None:
            nu_free = self.generator.kind == "student_t"
        if nu_free and self.generator.kind != "student_t":
            raise SpecError("a free nu requires the Student-t generator")
        object.__setattr__(self, "nu_free", bool(nu_free))

    def check_identifiable(self, data):
        """Require more rows than regression coefficients (k + l + p + q < n)."""
        total = sum(data.dims)
        if total >= data.n:
            raise SpecError("need k + l + p + q < n to estimate (got %d >= %d)" % (total, data.n))

    def n_params(self, data):
        return sum(data.dims) + int(self.nu_free)

    def param_names(self, data):
        out = []
        for blk in BLOCKS:
            out += ["%s:%s" % (blk, c) for c in data.names[blk]]
        if self.nu_free:
            out.append("nu")
        return out

    def generator_at(self, theta):
        if self.nu_free:
            return symdist.student_t(theta.nu)
        return self.generator


@dataclass(frozen=True)
class ParamVector:
    """Regression coefficients in the fixed order (beta, gamma, lambda, kappa, log_nu)."""

    beta: np.ndarray
    gamma: np.ndarray
    lam: np.ndarray
    kappa: np.ndarray
    log_nu: Optional[float] = None

    def __post_init__(self):
        for name in ("beta", "gamma", "lam", "kappa"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        if self.log_nu is not None:
            object.__setattr__(self, "log_nu", float(self.log_nu))

    @property
    def nu(self):
        return None if self.log_nu is None else math.exp(self.log_nu)

    @property
    def dims(self):
        return (self.beta.size, self.gamma.size, self.lam.size, self.kappa.size)

    def to_array(self):
        parts = [self.beta, self.gamma, self.lam, self.kappa]
        if self.log_nu is not None:
            parts.append(np.array([self.log_nu]))
        return np.concatenate(parts)

    @classmethod
    def from_array(cls, arr, dims, has_nu=False):
        arr = np.asarray(arr, dtype=float).ravel()
        k, l, p, q = dims
        if arr.size != k + l + p + q + int(has_nu):
            raise SpecError("parameter vector has %d entries, expected %d"
                            % (arr.size, k + l + p + q + int(has_nu)))
        cuts = np.cumsum([k, l, p, q])
        return cls(arr[:cuts[0]], arr[cuts[0]:cuts[1]], arr[cuts[1]:cuts[2]],
                   arr[cuts[2]:cuts[3]], arr[cuts[3]] if has_nu else None)

    @classmethod
    def from_natural(cls, beta, gamma, lam, kappa, nu=None):
        return cls(beta, gamma, lam, kappa, None if nu is None else math.log(nu))


def _check_theta(spec, theta, data):
    if theta.dims != data.dims:
        raise SpecError("parameter dims %s do not match data dims %s" % (theta.dims, data.dims))
    if spec.nu_free and theta.log_nu is None:
        raise SpecError("model has a free nu but the parameter vector lacks log_nu")
    if not spec.nu_free and theta.log_nu is not None:
        raise SpecError("parameter vector carries log_nu but nu is fixed")


# ---------------------------------------------------------------------------
# predictors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearPredictors:
    mu1: np.ndarray
    mu2: np.ndarray
    sigma: np.ndarray
    rho: np.ndarray

    @property
    def alpha(self):
        return self.rho / np.sqrt(1.0 - self.rho ** 2)

    @property
    def tau(self):
        return self.mu2 / np.sqrt(1.0 - self.rho ** 2)


def predictors(spec, theta, data):
    """Map coefficients through the inverse links, row by row."""
    _check_theta(spec, theta, data)
    g1, g2, h1, h2 = spec.links
    return LinearPredictors(
        mu1=g1.inverse(data.X @ theta.beta),
        mu2=g2.inverse(data.W @ theta.gamma),
        sigma=h1.inverse(data.Z @ theta.lam),
        rho=h2.inverse(data.V @ theta.kappa),
    )


# ---------------------------------------------------------------------------
# densities
# ---------------------------------------------------------------------------

def _log_marginal(r, g):
    if g.kind == "gaussian":
        return symdist.normal_logpdf(r)
    if g.kind == "student_t":
        return symdist.t_logpdf(r, g.nu)
    return np.log(symdist.marginal_z_pdf(r, g))


def log_cond_density(y, mu1, sigma, rho, mu2, g):
    """log f(y | U* > 0) for one or many rows (arrays broadcast)."""
    y, mu1, sigma, rho, mu2 = np.broadcast_arrays(*(np.asarray(a, dtype=float)
                                                    for a in (y, mu1, sigma, rho, mu2)))
    s = np.sqrt(1.0 - rho * rho)
    r = (y - mu1) / sigma
    z = (mu2 + rho * r) / s
    return (-np.log(sigma) + _log_marginal(r, g) + symdist.log_G_function(z, r, g)
            - symdist.log_H_function(mu2, rho, g))


def cond_density(y, mu1, sigma, rho, mu2, g):
    """Density of ``Y*`` at ``y`` given the row was selected (``U* > 0``)."""
    out = np.exp(log_cond_density(y, mu1, sigma, rho, mu2, g))
    return float(out) if out.ndim == 0 else out


def obs_logdensity(y, u, mu1, sigma, rho, mu2, g):
    """Per-row log-likelihood contribution.

    Censored rows contribute ``log(1 - H(mu2))``; selected rows
    ``-log(sigma) + log f_Z1(r) + log G(tau + alpha*r)``, the ``H(mu2)``
    factors of the probit and conditional parts having cancelled.
    """
    y, u, mu1, sigma, rho, mu2 = np.broadcast_arrays(
        *(np.asarray(a, dtype=float) for a in (y, u, mu1, sigma, rho, mu2)))
    out = np.empty(u.shape)
    cen = u == 0
    if np.any(cen):
        # 1 - H(x) = H(-x) by symmetry of the linear combination
        out[cen] = symdist.log_H_function(-mu2[cen], rho[cen], g)
    sel = ~cen
    if np.any(sel):
        s = np.sqrt(1.0 - rho[sel] ** 2)
        r = (y[sel] - mu1[sel]) / sigma[sel]
        z = (mu2[sel] + rho[sel] * r) / s
        out[sel] = (-np.log(sigma[sel]) + _log_marginal(r, g)
                    + symdist.log_G_function(z, r, g))
    return float(out) if out.ndim == 0 else out


def loglik_obs(spec, theta, data):
    """Vector of per-row log-likelihood contributions."""
    pred = predictors(spec, theta, data)
    g = spec.generator_at(theta)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        out = obs_logdensity(data.y, data.u, pred.mu1, pred.sigma, pred.rho, pred.mu2, g)
    return np.atleast_1d(out)


def loglik(spec, theta, data, check=True):
    """Total log-likelihood; raises :class:`LikelihoodError` if not finite."""
    contrib = loglik_obs(spec, theta, data)
    if check and not np.all(np.isfinite(contrib)):
        row = int(np.flatnonzero(~np.isfinite(contrib))[0])
        raise LikelihoodError("non-finite log-likelihood contribution at row %d" % row, row=row)
    return float(np.sum(contrib))


# ---------------------------------------------------------------------------
# score
# ---------------------------------------------------------------------------

def _fd_component(fun, x, j, step):
    xp = x.copy()
    xm = x.copy()
    xp[j] += step
    xm[j] -= step
    return (fun(xp) - fun(xm)) / (2.0 * step)


def numerical_score(spec, theta, data, rel_step=1e-6, coords=None):
    """Central finite-difference gradient of :func:`loglik`."""
    x0 = theta.to_array()
    dims, has_nu = theta.dims, theta.log_nu is not None

    def f(x):
        return loglik(spec, ParamVector.from_array(x, dims, has_nu), data)

    coords = range(x0.size) if coords is None else coords
    out = np.zeros(x0.size)
    for j in coords:
        out[j] = _fd_component(f, x0, j, rel_step * max(1.0, abs(x0[j])))
    return out


def _row_derivatives(pred, y, u, g):
    """d loglik_i / d(mu1, mu2, sigma, rho) for the built-in generators."""
    n = u.shape[0]
    d_mu1, d_mu2, d_sig, d_rho = (np.zeros(n) for _ in range(4))
    sel = u == 1
    cen = ~sel
    mu1, mu2, sigma, rho = pred.mu1, pred.mu2, pred.sigma, pred.rho

    if np.any(cen):
        m = mu2[cen]
        if g.kind == "gaussian":
            tail_ratio = np.exp(symdist.normal_logpdf(m) - symdist.normal_logcdf(-m))
        else:
            tail_ratio = np.exp(symdist.t_logpdf(m, g.nu) - symdist.t_logcdf(-m, g.nu))
        d_mu2[cen] = -tail_ratio

    if np.any(sel):
        sg, rh, m2 = sigma[sel], rho[sel], mu2[sel]
        s = np.sqrt(1.0 - rh * rh)
        alpha = rh / s
        r = (y[sel] - mu1[sel]) / sg
        z = (m2 + rh * r) / s
        if g.kind == "gaussian":
            psi = -r                      # f'_Z1 / f_Z1
            c = np.ones_like(r)
            dc_dr = np.zeros_like(r)
            mills = np.exp(symdist.normal_logpdf(z) - symdist.normal_logcdf(z))
        else:
            nu = g.nu
            psi = -(nu + 1.0) * r / (nu + r * r)
            c = np.sqrt((nu + 1.0) / (nu + r * r))
            dc_dr = -c * r / (nu + r * r)
            arg = c * z
            mills = np.exp(symdist.t_logpdf(arg, nu + 1.0) - symdist.t_logcdf(arg, nu + 1.0))
        # conditional density of Z2 | Z1 = r at z, over G(z)
        cond_ratio = c * mills
        # G also depends on r through the conditional scale c(r) (zero for Gaussian)
        shape = z * dc_dr * mills
        d_mu1[sel] = (-psi - alpha * cond_ratio - shape) / sg
        d_sig[sel] = (-1.0 - r * psi - alpha * r * cond_ratio - r * shape) / sg
        d_mu2[sel] = cond_ratio / s
        d_rho[sel] = cond_ratio * (r + m2 * rh) / (s * s * s)
    return d_mu1, d_mu2, d_sig, d_rho


def score(spec, theta, data, nu_step=1e-5):
    """Gradient of :func:`loglik` in the order of ``theta.to_array()``.

    Analytic for the regression blocks of the Gaussian and Student-t models;
    the ``log_nu`` coordinate and every coordinate of a tabulated generator
    use central finite differences.
    """
    _check_theta(spec, theta, data)
    g = spec.generator_at(theta)
    if not g.closed_form:
        return numerical_score(spec, theta, data)
    pred = predictors(spec, theta, data)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        d_mu1, d_mu2, d_sig, d_rho = _row_derivatives(pred, data.y, data.u, g)
    g1, g2, h1, h2 = spec.links
    # d(mean)/d(eta) = 1 / link'(mean)
    grads = [
        data.X.T @ (d_mu1 / g1.derivative(pred.mu1)),
        data.W.T @ (d_mu2 / g2.derivative(pred.mu2)),
        data.Z.T @ (d_sig / h1.derivative(pred.sigma)),
        data.V.T @ (d_rho / h2.derivative(pred.rho)),
    ]
    out = np.concatenate(grads)
    if spec.nu_free:
        x0 = theta.to_array()
        j = x0.size - 1
        dnu = _fd_component(
            lambda x: loglik(spec, ParamVector.from_array(x, theta.dims, True), data),
            x0, j, nu_step * max(1.0, abs(x0[j])))
        out = np.append(out, dnu)
    if not np.all(np.isfinite(out)):
        raise LikelihoodError("non-finite score")
    return out
