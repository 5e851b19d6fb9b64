"""
Simulation from the selection model and Monte Carlo bias/MSE studies.

The scenario presets use the regression structure

    mu1   = b1 + b2*x1 + b3*x2
    mu2   = g1 + g2*x1 + g3*x2 + g4*x3
    log sigma    = l1 + l2*x1
    arctanh rho  = k1 + k2*x1

with covariates drawn independently for every row.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from symheckman import estimate, symdist
from symheckman.exceptions import (
    SpecError,
    StudyError,
    SymHeckmanError,
    UnsupportedGeneratorError,
)
from symheckman.selmodel import LinearPredictors, ModelSpec, ParamVector, SelectionDataset

COVARIATE_LAWS = ("normal", "truncnorm", "uniform")
MAX_FAILURE_RATE = 0.20

_NAMES = {
    "beta": ["(Intercept)", "x1", "x2"],
    "gamma": ["(Intercept)", "x1", "x2", "x3"],
    "lambda": ["(Intercept)", "x1"],
    "kappa": ["(Intercept)", "x1"],
}


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to simulate and study one scenario.

    ``beta``..``kappa`` and ``nu`` are the true values.  ``generator`` is
    ``"t"`` or ``"normal"``; ``threshold`` is the selection cutoff ``a`` in
    ``u = 1{U* > a}``.
    """

    n: int = 1000
    beta: tuple = (1.1, 0.7, 0.1)
    gamma: tuple = (0.9, 0.5, 1.1, 0.6)
    lam: tuple = (-0.4, 0.7)
    kappa: tuple = (0.3, 0.5)
    nu: float = 4.0
    generator: str = "t"
    covariate_law: str = "normal"
    threshold: float = 0.0
    nrep: int = 1
    seed: int = 20240101
    name: str = "custom"

    def __post_init__(self):
        if self.n < 12:
            raise SpecError("sample size too small for the scenario design")
        if len(self.beta) != 3 or len(self.gamma) != 4 or len(self.lam) != 2 or len(self.kappa) != 2:
            raise SpecError("scenario designs need 3/4/2/2 coefficients")
        if self.covariate_law not in COVARIATE_LAWS:
            raise SpecError("covariate_law must be one of %s" % (COVARIATE_LAWS,))
        if self.generator not in ("t", "normal"):
            raise SpecError("generator must be 't' or 'normal'")
        if self.nrep < 1:
            raise SpecError("nrep must be at least 1")
        for name in ("beta", "gamma", "lam", "kappa"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))

    def density_generator(self):
        return symdist.student_t(self.nu) if self.generator == "t" else symdist.gaussian()

    def model_spec(self, nu_free=None):
        return ModelSpec(self.density_generator(), nu_free=nu_free)

    def true_params(self, nu_free=None):
        spec = self.model_spec(nu_free)
        nu = self.nu if spec.nu_free else None
        return ParamVector.from_natural(self.beta, self.gamma, self.lam, self.kappa, nu)

    def to_dict(self):
        d = asdict(self)
        for k in ("beta", "gamma", "lam", "kappa"):
            d[k] = list(d[k])
        return d


SCENARIOS = {
    "1": ScenarioConfig(name="1"),
    "2": ScenarioConfig(beta=(1.0, 0.7, 1.1), lam=(-0.2, 1.2), kappa=(0.7, 0.3), name="2"),
    "2b": ScenarioConfig(beta=(1.0, 0.7, 1.1), lam=(-0.2, 1.2), kappa=(-0.7, 0.3), name="2b"),
    "3": ScenarioConfig(gamma=(0.0, 0.5, 1.1, 0.6), lam=(-0.4, 1.2), kappa=(-0.3, -0.3), name="3"),
    "3b": ScenarioConfig(gamma=(0.0, 0.5, 1.1, 0.6), lam=(-0.4, 1.2), kappa=(-0.7, -0.7), name="3b"),
}


def scenario(key, **overrides):
    """Preset scenario ``"1"``, ``"2"``, ``"2b"``, ``"3"`` or ``"3b"`` with overrides."""
    key = str(key)
    if key not in SCENARIOS:
        raise SpecError("unknown scenario %r (choose from %s)" % (key, sorted(SCENARIOS)))
    return replace(SCENARIOS[key], **overrides)


def config_from_mapping(mapping):
    """Build a :class:`ScenarioConfig` from a JSON-style mapping.

    A ``"scenario"`` key selects a preset that the remaining keys override.
    """
    mapping = dict(mapping)
    key = mapping.pop("scenario", None)
    if "lambda" in mapping:
        mapping["lam"] = mapping.pop("lambda")
    valid = set(ScenarioConfig.__dataclass_fields__)
    unknown = set(mapping) - valid
    if unknown:
        raise SpecError("unknown scenario fields: %s" % ", ".join(sorted(unknown)))
    if key is not None:
        return scenario(key, **mapping)
    return ScenarioConfig(**mapping)


def replicate_rng(seed, rep):
    """Generator for replicate ``rep``, independent of execution order."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(rep),)))


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def sample_standardized(n, generator, rng):
    """Draw ``(Z1, Z2)`` from the spherical law of ``generator``."""
    if generator.kind == "gaussian":
        z = rng.standard_normal((2, n))
        return z[0], z[1]
    if generator.kind == "student_t":
        z = rng.standard_normal((2, n))
        # one chi-square mixing draw per row, shared by both components
        scale = np.sqrt(generator.nu / rng.chisquare(generator.nu, n))
        return z[0] * scale, z[1] * scale
    if generator.radial_sampler is None:
        raise UnsupportedGeneratorError(
            "simulating a tabulated generator needs a radial_sampler(rng, n)")
    radius = np.asarray(generator.radial_sampler(rng, n), dtype=float)
    d = np.cos(rng.uniform(0.0, 0.5 * math.pi, n))
    v = rng.choice(np.array([-1.0, 1.0]), size=(2, n))
    return radius * d * v[0], radius * np.sqrt(1.0 - d * d) * v[1]


def sample_bivariate(n, pred, generator, rng):
    """Draw ``(Y*, U*)`` through the stochastic representation.

    ``pred`` fields may be scalars or length-``n`` arrays.
    """
    z1, z2 = sample_standardized(n, generator, rng)
    mu1, mu2, sigma, rho = (np.broadcast_to(np.asarray(a, dtype=float), (n,))
                            for a in (pred.mu1, pred.mu2, pred.sigma, pred.rho))
    ystar = mu1 + sigma * z1
    ustar = mu2 + rho * z1 + np.sqrt(1.0 - rho * rho) * z2
    return ystar, ustar


def _draw_covariates(n, law, rng):
    while True:
        if law == "normal":
            x = rng.standard_normal((n, 3))
        elif law == "uniform":
            x = rng.uniform(0.0, 1.0, (n, 3))
        else:
            x = np.empty((n, 3))
            filled = 0
            while filled < n * 3:
                cand = rng.standard_normal(4 * (n * 3 - filled) + 16)
                cand = cand[(cand > 0.0) & (cand < 1.0)][: n * 3 - filled]
                x.flat[filled:filled + cand.size] = cand
                filled += cand.size
        if np.all(x.std(axis=0) > 0):
            return x


def _designs(x):
    one = np.ones(x.shape[0])
    X = np.column_stack([one, x[:, 0], x[:, 1]])
    W = np.column_stack([one, x[:, 0], x[:, 1], x[:, 2]])
    Z = np.column_stack([one, x[:, 0]])
    return X, W, Z, Z.copy()


def _latent(config, n, rng):
    x = _draw_covariates(n, config.covariate_law, rng)
    X, W, Z, V = _designs(x)
    pred = LinearPredictors(
        mu1=X @ np.array(config.beta),
        mu2=W @ np.array(config.gamma),
        sigma=np.exp(Z @ np.array(config.lam)),
        rho=np.tanh(V @ np.array(config.kappa)),
    )
    ystar, ustar = sample_bivariate(n, pred, config.density_generator(), rng)
    return (X, W, Z, V), ystar, ustar


def generate_dataset(config, rng):
    """Simulate one :class:`SelectionDataset` from ``config``."""
    (X, W, Z, V), ystar, ustar = _latent(config, config.n, rng)
    u = (ustar > config.threshold).astype(np.int8)
    y = np.where(u == 1, ystar, np.nan)
    return SelectionDataset(y, u, X, W, Z, V, names=_NAMES, check_rank=False)


def calibrate_threshold(config, target_censoring, rng, pilot=100_000):
    """Cutoff ``a`` whose realized censoring fraction is ``target_censoring``.

    Returns the empirical ``target_censoring`` quantile of ``U*`` over a
    pilot draw from ``config``.
    """
    if not 0.0 < target_censoring < 1.0:
        raise SpecError("target censoring must lie in (0, 1)")
    _, _, ustar = _latent(config, int(pilot), rng)
    return float(np.quantile(ustar, target_censoring))


# ---------------------------------------------------------------------------
# Monte Carlo study
# ---------------------------------------------------------------------------

@dataclass
class MonteCarloSummary:
    names: list
    true: np.ndarray
    bias: np.ndarray
    mse: np.ndarray
    mean_censoring: float
    failures: int
    nrep: int
    seed: int
    n: int
    estimates: np.ndarray = field(repr=False, default=None)

    def rows(self):
        return [{"name": nm, "true": float(t), "bias": float(b), "mse": float(m)}
                for nm, t, b, m in zip(self.names, self.true, self.bias, self.mse)]

    def metadata(self):
        return {"seed": self.seed, "nrep": self.nrep, "n": self.n,
                "censoring": self.mean_censoring, "failures": self.failures}


def _natural(params, nu_free):
    x = params.to_array()
    if nu_free:
        x = x.copy()
        x[-1] = math.exp(x[-1])
    return x


def _default_fitter(spec, data, start):
    return estimate.fit(spec, data, {"compute_se": False}, start=start)


def run_study(config, fitter=None, nu_free=None, start_at_truth=False):
    """Repeat generate-and-fit ``config.nrep`` times and aggregate bias/MSE.

    Parameters
    ----------
    config : ScenarioConfig
    fitter : callable, optional
        ``fitter(spec, data, start) -> FitResult``; defaults to :func:`estimate.fit`
        without standard errors.
    nu_free : bool, optional
        Estimate ``nu`` (default for Student-t data).
    start_at_truth : bool
        Start the optimizer from the true parameters instead of
        :func:`estimate.initialize`.
    """
    fitter = fitter or _default_fitter
    spec = config.model_spec(nu_free)
    truth = config.true_params(spec.nu_free if config.generator == "t" else None)
    names = None
    true_nat = _natural(truth, spec.nu_free)
    estimates = np.full((config.nrep, true_nat.size), np.nan)
    censoring = np.empty(config.nrep)
    failures = 0
    for rep in range(config.nrep):
        data = generate_dataset(config, replicate_rng(config.seed, rep))
        censoring[rep] = data.censoring
        names = names or spec.param_names(data)
        try:
            res = fitter(spec, data, truth if start_at_truth else None)
        except SymHeckmanError:
            failures += 1
            continue
        if not res.converged:
            failures += 1
            continue
        estimates[rep] = _natural(res.params, spec.nu_free)
    if failures > MAX_FAILURE_RATE * config.nrep:
        raise StudyError("%d of %d replicates failed; check the configuration"
                         % (failures, config.nrep))
    ok = ~np.isnan(estimates).any(axis=1)
    dev = estimates[ok] - true_nat
    return MonteCarloSummary(
        names=names, true=true_nat, bias=dev.mean(axis=0), mse=(dev ** 2).mean(axis=0),
        mean_censoring=float(censoring.mean()), failures=failures, nrep=config.nrep,
        seed=config.seed, n=config.n, estimates=estimates,
    )


def write_summary(summary, csv_path, json_path=None, extra=None, header_comment=None):
    """CSV (name, true, bias, mse) plus an optional JSON metadata block."""
    with open(csv_path, "w", newline="") as fh:
        if header_comment:
            fh.write("# %s\n" % header_comment)
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["name", "true", "bias", "mse"])
        for row in summary.rows():
            writer.writerow([row["name"], repr(row["true"]), repr(row["bias"]), repr(row["mse"])])
    if json_path is not None:
        meta = summary.metadata()
        if extra:
            meta.update(extra)
        with open(json_path, "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
