"""
Simulating and fitting a Student-t selection model
===================================================

Draws one dataset from the first simulation scenario (t errors with four
degrees of freedom, covariate-dependent dispersion and correlation), fits
the normal and Student-t models by maximum likelihood, and prints Wald
tables next to the true values.

Run with ``python3 demos/02_fit_scenario.py``.
"""

import numpy as np

from symheckman import estimate, simulate, symdist
from symheckman.selmodel import ModelSpec

cfg = simulate.scenario("1", n=1500, seed=11)
data = simulate.generate_dataset(cfg, simulate.replicate_rng(cfg.seed, 0))
print("n = %d, censored = %.1f%%" % (data.n, 100 * data.censoring))

t_spec = cfg.model_spec()                 # nu estimated on the log scale
t_fit = estimate.fit(t_spec, data)
truth = cfg.true_params(nu_free=True)
true_natural = np.r_[truth.to_array()[:-1], truth.nu]

print("\n%-18s %9s %9s %9s %9s %10s" % ("parameter", "true", "estimate", "s.e.", "z", "p"))
for row, tv in zip(t_fit.table(), true_natural):
    print("%-18s %9.4f %9.4f %9.4f %9.2f %10.2e"
          % (row["name"], tv, row["estimate"], row["std_error"], row["z"], row["p_value"]))
print("\n%s (%d iterations), max |score| = %.1e"
      % (t_fit.message, t_fit.iterations, t_fit.grad_norm))

# %%
# The normal model is nested at nu -> infinity; the information criteria
# should favour the t model on t data.
n_fit = estimate.fit(ModelSpec(symdist.gaussian()), data)
for label, f in (("normal", n_fit), ("t", t_fit)):
    print("%-7s loglik %10.2f  AIC %10.2f  BIC %10.2f" % (label, f.loglik, f.aic, f.bic))
