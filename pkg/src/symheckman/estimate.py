"""
Maximum-likelihood fitting: starting values, BFGS, standard errors and
information criteria.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np
from scipy import special

from symheckman import selmodel
from symheckman.exceptions import InitializationError, LikelihoodError, SpecError
from symheckman.selmodel import ParamVector

__all__ = [
    "FitOptions", "FitResult", "initialize", "probit_newton", "fit",
    "information_criteria", "bfgs", "observed_information",
]


@dataclass
class FitOptions:
    """Tolerances and switches for :func:`fit`.

    ``gtol`` is the sup-norm of the score at which the search stops;
    ``ftol`` the relative change in log-likelihood below which it gives up
    on further progress.
    """

    gtol: float = 1e-6
    ftol: float = 1e-10
    max_iter: int = 500
    c1: float = 1e-4
    c2: float = 0.9
    compute_se: bool = True
    hess_step: float = 1e-4

    @classmethod
    def from_mapping(cls, mapping=None):
        if mapping is None:
            return cls()
        if isinstance(mapping, cls):
            return mapping
        known = {f.name for f in fields(cls)}
        unknown = set(mapping) - known
        if unknown:
            raise SpecError("unknown fit options: %s" % ", ".join(sorted(unknown)))
        return cls(**dict(mapping))


@dataclass
class FitResult:
    """Outcome of :func:`fit`.

    ``estimates``/``se``/``z``/``pvalues`` are on the reporting scale (``nu``
    itself, with a delta-method standard error); ``params`` and ``cov``
    keep the optimizer's scale (``log nu``).
    """

    params: ParamVector
    names: list
    estimates: np.ndarray
    se: np.ndarray
    z: np.ndarray
    pvalues: np.ndarray
    loglik: float
    aic: float
    bic: float
    nobs: int
    n_params: int
    iterations: int
    converged: bool
    grad_norm: float
    cov: Optional[np.ndarray] = None
    se_available: bool = False
    message: str = ""
    model: str = ""
    warnings: list = field(default_factory=list)

    def table(self):
        """Rows of (name, estimate, std_error, z, p_value) in Table-5 layout."""
        rows = []
        for j, name in enumerate(self.names):
            rows.append({
                "name": name,
                "estimate": float(self.estimates[j]),
                "std_error": _nan_to_none(self.se[j]),
                "z": _nan_to_none(self.z[j]),
                "p_value": _nan_to_none(self.pvalues[j]),
            })
        return rows

    def to_dict(self):
        return {
            "model": self.model,
            "estimates": self.table(),
            "loglik": self.loglik,
            "aic": self.aic,
            "bic": self.bic,
            "nobs": self.nobs,
            "n_params": self.n_params,
            "convergence": {
                "converged": self.converged,
                "iterations": self.iterations,
                "gradient_norm": self.grad_norm,
                "message": self.message,
                "se_available": self.se_available,
            },
            "warnings": list(self.warnings),
        }


def _nan_to_none(v):
    v = float(v)
    return None if not math.isfinite(v) else v


def information_criteria(fit_or_loglik, n, n_params=None):
    """Return ``(aic, bic)``; accepts a :class:`FitResult` or a raw log-likelihood."""
    if isinstance(fit_or_loglik, FitResult):
        ll, dim = fit_or_loglik.loglik, fit_or_loglik.n_params
    else:
        ll, dim = float(fit_or_loglik), n_params
    return -2.0 * ll + 2.0 * dim, -2.0 * ll + dim * math.log(n)


# ---------------------------------------------------------------------------
# starting values
# ---------------------------------------------------------------------------

def probit_newton(W, u, max_iter=100, tol=1e-10):
    """Probit MLE by Newton's method; raises on (quasi-)separation."""
    W = np.asarray(W, dtype=float)
    q = 2.0 * np.asarray(u, dtype=float) - 1.0
    gamma = np.zeros(W.shape[1])
    for _ in range(max_iter):
        eta = W @ gamma
        qe = q * eta
        lam = q * np.exp(-0.5 * qe * qe - 0.5 * math.log(2 * math.pi) - special.log_ndtr(qe))
        grad = W.T @ lam
        hess = -(W * (lam * (lam + eta))[:, None]).T @ W
        try:
            step = np.linalg.solve(hess, -grad)
        except np.linalg.LinAlgError as exc:
            raise InitializationError("singular probit Hessian; check the selection design") from exc
        gamma = gamma + step
        if np.max(np.abs(gamma)) > 40.0:
            break
        if np.max(np.abs(step)) < tol * max(1.0, np.max(np.abs(gamma))):
            if np.all(special.ndtr(q * (W @ gamma)) > 1.0 - 1e-8):
                break
            return gamma
    raise InitializationError(
        "probit start did not converge: the selection indicator appears perfectly "
        "predicted by the selection covariates (separation); review the data")


def initialize(spec, data):
    """Starting values from a probit fit and least squares on selected rows."""
    n1 = data.n_observed
    if n1 == 0 or n1 == data.n:
        raise InitializationError("need both censored and selected rows to estimate")
    gamma0 = probit_newton(data.W, data.u)
    g1, g2, h1, h2 = spec.links
    if g2.kind != "identity":
        gamma0 = np.zeros_like(gamma0)
    sel = data.u == 1
    Xs, ys = data.X[sel], data.y[sel]
    k = Xs.shape[1]
    if n1 <= k:
        raise InitializationError("fewer selected rows than outcome covariates")
    target = ys if g1.kind == "identity" else g1.forward(ys)
    beta0, *_ = np.linalg.lstsq(Xs, target, rcond=None)
    resid = target - Xs @ beta0
    sigma_hat = math.sqrt(float(resid @ resid) / (n1 - k))
    lam0 = np.zeros(data.Z.shape[1])
    lam0[0] = float(h1.forward(max(sigma_hat, 1e-8)))
    kappa0 = np.zeros(data.V.shape[1])
    log_nu0 = math.log(8.0) if spec.nu_free else None
    return ParamVector(beta0, gamma0, lam0, kappa0, log_nu0)


# ---------------------------------------------------------------------------
# BFGS
# ---------------------------------------------------------------------------

@dataclass
class _Trace:
    x: np.ndarray
    f: float
    g: np.ndarray
    iterations: int
    converged: bool
    message: str


def bfgs(fun, grad, x0, gtol=1e-6, ftol=1e-10, max_iter=500, c1=1e-4, c2=0.9,
         accept_gtol=None, stall=1):
    """Minimize ``fun`` by BFGS with an Armijo/curvature line search.

    ``fun`` may return ``inf`` (or raise :class:`LikelihoodError`) outside
    the region where it is defined; such trial steps are shortened.

    Stops when the sup-norm of the gradient drops below ``gtol``, or when
    the relative decrease in ``fun`` stays below ``ftol`` for ``stall``
    consecutive iterations.  In the latter case the run counts as
    converged only if the gradient is below ``accept_gtol``.
    """
    def safe_f(x):
        try:
            v = fun(x)
        except (LikelihoodError, FloatingPointError):
            return math.inf
        return v if math.isfinite(v) else math.inf

    x = np.asarray(x0, dtype=float).copy()
    f = safe_f(x)
    if not math.isfinite(f):
        raise LikelihoodError("objective is not finite at the starting values")
    g = grad(x)
    dim = x.size
    hinv = np.eye(dim) / max(1.0, float(np.linalg.norm(g)))
    fresh = True
    accept_gtol = gtol if accept_gtol is None else accept_gtol
    message = "maximum iterations reached"
    converged = False
    small_steps = 0
    it = 0
    for it in range(1, max_iter + 1):
        gnorm = float(np.max(np.abs(g)))
        if gnorm < gtol:
            converged, message, it = True, "gradient below tolerance", it - 1
            break
        p = -hinv @ g
        slope = float(g @ p)
        if slope >= 0:
            hinv = np.eye(dim) / max(1.0, float(np.linalg.norm(g)))
            p = -hinv @ g
            slope = float(g @ p)
            fresh = True
        step, f_new, g_new = _line_search(safe_f, grad, x, f, g, p, slope, c1, c2)
        if step is None:
            if not fresh:
                hinv = np.eye(dim) / max(1.0, float(np.linalg.norm(g)))
                fresh = True
                continue
            message = "line search failed"
            converged = gnorm < accept_gtol
            break
        s = step * p
        y = g_new - g
        rel_change = abs(f - f_new) / max(1.0, abs(f_new))
        x, f, g = x + s, f_new, g_new
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
            if fresh:
                hinv = np.eye(dim) * (sy / float(y @ y))
            rho = 1.0 / sy
            hy = hinv @ y
            hinv = (hinv - rho * (np.outer(s, hy) + np.outer(hy, s))
                    + (rho * rho * float(y @ hy) + rho) * np.outer(s, s))
            fresh = False
        small_steps = small_steps + 1 if rel_change < ftol else 0
        if small_steps >= stall:
            gnorm = float(np.max(np.abs(g)))
            if gnorm < gtol:
                converged, message = True, "gradient below tolerance"
            else:
                converged = gnorm < accept_gtol
                message = "relative change in objective below tolerance"
            break
    else:
        converged = float(np.max(np.abs(g))) < gtol
    return _Trace(x, f, g, it, converged, message)


def _line_search(fun, grad, x, f0, g0, p, slope, c1, c2, max_backtrack=60):
    step = 1.0
    # shrink until Armijo holds
    for _ in range(max_backtrack):
        f1 = fun(x + step * p)
        if f1 <= f0 + c1 * step * slope:
            break
        if math.isfinite(f1):
            # safeguarded quadratic interpolation
            denom = 2.0 * (f1 - f0 - slope * step)
            new = -slope * step * step / denom if denom > 0 else 0.5 * step
            step = min(max(new, 0.1 * step), 0.5 * step)
        else:
            step *= 0.25
    else:
        return None, None, None
    g1 = grad(x + step * p)
    # grow while the curvature condition fails and Armijo still holds
    for _ in range(10):
        if float(g1 @ p) >= c2 * slope:
            break
        trial = 2.0 * step
        ft = fun(x + trial * p)
        if not ft <= f0 + c1 * trial * slope:
            break
        step, f1 = trial, ft
        g1 = grad(x + step * p)
    return step, f1, g1


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def _numerical_hessian(grad, x, rel_step):
    dim = x.size
    hess = np.empty((dim, dim))
    for j in range(dim):
        h = rel_step * max(1.0, abs(x[j]))
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        hess[:, j] = (grad(xp) - grad(xm)) / (2.0 * h)
    return 0.5 * (hess + hess.T)


def _newton_polish(trace, fun, grad, info, gtol, max_steps=3):
    """Finish a run stopped by the objective-change rule with Newton steps.

    A step is kept only if it lowers ``fun``; the search ends as soon as the
    gradient is below ``gtol`` or the information is not positive definite.
    """
    x, f, g, steps = trace.x, trace.f, trace.g, 0
    for _ in range(max_steps):
        if np.max(np.abs(g)) < gtol:
            break
        try:
            chol = np.linalg.cholesky(info(x))
        except np.linalg.LinAlgError:
            break
        step = np.linalg.solve(chol.T, np.linalg.solve(chol, g))
        x_new = x - step
        try:
            f_new = fun(x_new)
        except LikelihoodError:
            break
        if not f_new <= f:
            break
        x, f, g = x_new, f_new, grad(x_new)
        steps += 1
    if steps == 0:
        return trace
    message = ("gradient below tolerance" if np.max(np.abs(g)) < gtol else trace.message)
    return _Trace(x, f, g, trace.iterations + steps, True, message + " after Newton refinement")


def observed_information(spec, theta, data, rel_step=1e-4):
    """Negative Hessian of the log-likelihood at ``theta`` (optimizer scale).

    Central differences of the analytic score, symmetrized.
    """
    dims, has_nu = data.dims, spec.nu_free

    def neggrad(x):
        return -selmodel.score(spec, ParamVector.from_array(x, dims, has_nu), data)

    return _numerical_hessian(neggrad, theta.to_array(), rel_step)


def fit(spec, data, options=None, start=None):
    """Maximum-likelihood fit of ``spec`` to ``data``.

    Parameters
    ----------
    spec : ModelSpec
    data : SelectionDataset
    options : FitOptions or mapping, optional
    start : ParamVector, optional
        Starting values; :func:`initialize` is used when omitted.

    Returns
    -------
    FitResult
    """
    opts = FitOptions.from_mapping(options)
    spec.check_identifiable(data)
    theta0 = initialize(spec, data) if start is None else start
    dims, has_nu = data.dims, spec.nu_free
    if has_nu and theta0.log_nu is None:
        theta0 = replace(theta0, log_nu=math.log(spec.generator.nu))
    if not has_nu and theta0.log_nu is not None:
        theta0 = replace(theta0, log_nu=None)

    def unpack(x):
        return ParamVector.from_array(x, dims, has_nu)

    def negll(x):
        return -selmodel.loglik(spec, unpack(x), data)

    def neggrad(x):
        return -selmodel.score(spec, unpack(x), data)

    x0 = theta0.to_array()
    ll0 = -negll(x0)
    trace = bfgs(negll, neggrad, x0, gtol=opts.gtol, ftol=opts.ftol,
                 max_iter=opts.max_iter, c1=opts.c1, c2=opts.c2,
                 accept_gtol=1e-4 * max(1.0, abs(ll0)))
    if trace.converged and np.max(np.abs(trace.g)) >= opts.gtol:
        trace = _newton_polish(trace, negll, neggrad,
                               lambda x: observed_information(spec, unpack(x), data, opts.hess_step),
                               opts.gtol)
    theta = unpack(trace.x)
    ll = -trace.f
    names = spec.param_names(data)
    dim = x0.size
    n = data.n
    aic, bic = information_criteria(ll, n, dim)

    notes = []
    cov = None
    se_int = np.full(dim, np.nan)
    se_available = False
    if opts.compute_se:
        hess = observed_information(spec, theta, data, opts.hess_step)
        try:
            chol = np.linalg.cholesky(hess)
            inv_chol = np.linalg.inv(chol)
            cov = inv_chol.T @ inv_chol
            se_int = np.sqrt(np.diag(cov))
            se_available = True
        except np.linalg.LinAlgError:
            notes.append("observed information is not positive definite; "
                         "standard errors are not reported")
            warnings.warn(notes[-1], RuntimeWarning, stacklevel=2)
    if not trace.converged:
        notes.append("optimizer did not converge: %s" % trace.message)

    est = trace.x.copy()
    se = se_int.copy()
    if has_nu:
        est[-1] = math.exp(trace.x[-1])
        se[-1] = est[-1] * se_int[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        z = est / se
    pvalues = 2.0 * special.ndtr(-np.abs(z))

    return FitResult(
        params=theta, names=names, estimates=est, se=se, z=z, pvalues=pvalues,
        loglik=ll, aic=aic, bic=bic, nobs=n, n_params=dim,
        iterations=trace.iterations, converged=trace.converged,
        grad_norm=float(np.max(np.abs(trace.g))), cov=cov,
        se_available=se_available, message=trace.message,
        model=_model_label(spec), warnings=notes,
    )


def _model_label(spec):
    g = spec.generator
    if g.kind == "gaussian":
        return "normal"
    if g.kind == "student_t":
        return "t" if spec.nu_free else "t(nu=%g)" % g.nu
    return g.name or "tabulated"
