"""
Residual diagnostics and model comparison for fitted selection models.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from symheckman import selmodel, symdist
from symheckman.exceptions import ComparisonError, DiagnosticError

SURVIVAL_EPSABS = 1e-10
SURVIVAL_EPSREL = 1e-8


@dataclass
class ResidualSet:
    """Martingale-type residuals, one per row.

    ``residual`` holds the transformed (MT) residual, ``martingale`` the raw
    ``u + log S``.  Rows where the survival value sits on a boundary carry
    a signed infinite residual and ``flagged = True``.
    """

    residual: np.ndarray
    martingale: np.ndarray
    u: np.ndarray
    survival: np.ndarray
    flagged: np.ndarray

    @property
    def finite(self):
        return self.residual[np.isfinite(self.residual)]

    def take(self, idx):
        return ResidualSet(*(a[idx] for a in (self.residual, self.martingale, self.u,
                                              self.survival, self.flagged)))


def mt_from_survival(u, survival):
    """MT residuals from selection indicators and fitted survival values."""
    u = np.asarray(u, dtype=float)
    survival = np.asarray(survival, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        rm = u + np.log(survival)
        # u*log(u - rM) is zero on censored rows by convention
        corr = np.where(u == 1, np.log(u - rm), 0.0)
        dev = np.maximum(-2.0 * (rm + corr), 0.0)
        rmt = np.sign(rm) * np.sqrt(dev)
    flagged = (survival <= 0.0) | ((u == 1) & (survival >= 1.0))
    rmt = np.where(flagged & (survival <= 0.0), -np.inf, rmt)
    rmt = np.where(flagged & (survival >= 1.0), np.inf, rmt)
    return rmt, rm, flagged


def selected_survival(y, mu1, sigma, rho, mu2, g):
    """``P(Y* > y | U* > 0)`` for each selected row by adaptive quadrature.

    Each row's integral over ``(y, inf)`` is mapped to ``(0, 1)`` by
    ``t = y + s / (1 - s)`` so all rows share one vector-valued integral.
    """
    y, mu1, sigma, rho, mu2 = (np.atleast_1d(np.asarray(a, dtype=float))
                               for a in np.broadcast_arrays(y, mu1, sigma, rho, mu2))
    if y.size == 0:
        return y.copy()
    r0 = (y - mu1) / sigma

    def integrand(s):
        if s >= 1.0:
            return np.zeros_like(r0)
        t = r0 + s / (1.0 - s)
        with np.errstate(over="ignore", under="ignore"):
            dens = np.exp(selmodel.log_cond_density(t, 0.0, 1.0, rho, mu2, g))
        return dens / (1.0 - s) ** 2

    if not g.closed_form:
        out = np.empty_like(r0)
        for i in range(r0.size):
            out[i] = symdist.quad(
                lambda t: float(np.exp(selmodel.log_cond_density(t, 0.0, 1.0, rho[i], mu2[i], g))),
                r0[i], math.inf, epsabs=SURVIVAL_EPSABS, epsrel=SURVIVAL_EPSREL)
        return np.clip(out, 0.0, 1.0)
    val, _ = integrate.quad_vec(integrand, 0.0, 1.0, epsabs=SURVIVAL_EPSABS,
                                epsrel=SURVIVAL_EPSREL, norm="max")
    return np.clip(val, 0.0, 1.0)


def mt_residuals(fit, spec, data):
    """Martingale-type residuals of a fitted model.

    The fitted survival is ``P(Y* > y_i | U* > 0)`` on selected rows and the
    fitted probability of censoring, ``1 - H(mu2_i)``, on censored rows.
    """
    theta = fit.params
    pred = selmodel.predictors(spec, theta, data)
    g = spec.generator_at(theta)
    u = data.u.astype(float)
    surv = np.empty(data.n)
    sel = data.u == 1
    surv[sel] = selected_survival(data.y[sel], pred.mu1[sel], pred.sigma[sel],
                                  pred.rho[sel], pred.mu2[sel], g)
    cen = ~sel
    if np.any(cen):
        surv[cen] = np.exp(symdist.log_H_function(-pred.mu2[cen], pred.rho[cen], g))
    rmt, rm, flagged = mt_from_survival(u, surv)
    assert np.all((np.sign(rmt) == np.sign(rm)) | (rm == 0) | np.isnan(rm))
    return ResidualSet(rmt, rm, data.u.copy(), surv, flagged)


@dataclass
class QQData:
    row: np.ndarray
    u: np.ndarray
    residual: np.ndarray
    theoretical: np.ndarray

    def pairs(self):
        return np.column_stack([self.theoretical, self.residual])

    def to_csv(self, path, header_comment=None):
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write("# %s\n" % header_comment)
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["row", "u", "residual", "theoretical_quantile"])
            for i, ui, r, q in zip(self.row, self.u, self.residual, self.theoretical):
                writer.writerow([int(i), int(ui), repr(float(r)), repr(float(q))])


def qq_data(residuals, min_points=10):
    """Sorted finite residuals against standard normal plotting positions."""
    if isinstance(residuals, ResidualSet):
        res, u = residuals.residual, residuals.u
    else:
        res = np.asarray(residuals, dtype=float)
        u = np.zeros(res.shape, dtype=np.int8)
    keep = np.flatnonzero(np.isfinite(res))
    m = keep.size
    if m < min_points:
        raise DiagnosticError("need at least %d finite residuals, got %d" % (min_points, m))
    order = keep[np.argsort(res[keep], kind="stable")]
    theo = special.ndtri((np.arange(1, m + 1) - 0.5) / m)
    return QQData(order, np.asarray(u)[order], res[order], theo)


def compare_models(fits, labels=None):
    """Log-likelihood, AIC and BIC per fit, best (lowest AIC) first.

    Ties on AIC are broken by BIC, then by input position.
    """
    fits = list(fits)
    if not fits:
        raise ComparisonError("no fits to compare")
    labels = list(labels) if labels is not None else [f.model or "model%d" % i
                                                     for i, f in enumerate(fits)]
    if len(labels) != len(fits):
        raise ComparisonError("need one label per fit")
    nobs = {f.nobs for f in fits}
    if len(nobs) != 1:
        raise ComparisonError("fits use different sample sizes: %s" % sorted(nobs))
    rows = [{"model": lab, "loglik": f.loglik, "n_params": f.n_params,
             "aic": f.aic, "bic": f.bic, "converged": f.converged, "_pos": i}
            for i, (lab, f) in enumerate(zip(labels, fits))]
    rows.sort(key=lambda r: (r["aic"], r["bic"], r["_pos"]))
    for rank, r in enumerate(rows, 1):
        del r["_pos"]
        r["rank"] = rank
    return rows


def format_comparison(rows):
    lines = ["%-4s %-16s %14s %8s %14s %14s" % ("rank", "model", "loglik", "params", "AIC", "BIC")]
    for r in rows:
        lines.append("%-4d %-16s %14.4f %8d %14.4f %14.4f"
                     % (r["rank"], r["model"], r["loglik"], r["n_params"], r["aic"], r["bic"]))
    return "\n".join(lines)


def write_comparison_csv(rows, path, header_comment=None):
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write("# %s\n" % header_comment)
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["rank", "model", "loglik", "n_params", "aic", "bic", "converged"])
        for r in rows:
            writer.writerow([r["rank"], r["model"], repr(float(r["loglik"])), r["n_params"],
                             repr(float(r["aic"])), repr(float(r["bic"])), r["converged"]])


def write_residuals_csv(residuals, path, header_comment=None):
    theo = np.full(residuals.residual.shape, np.nan)
    try:
        qq = qq_data(residuals)
        theo[qq.row] = qq.theoretical
    except DiagnosticError:
        pass
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write("# %s\n" % header_comment)
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["row", "u", "residual", "theoretical_quantile", "survival", "flagged"])
        for i in range(residuals.residual.size):
            writer.writerow([i, int(residuals.u[i]), repr(float(residuals.residual[i])),
                             repr(float(theo[i])), repr(float(residuals.survival[i])),
                             int(residuals.flagged[i])])
