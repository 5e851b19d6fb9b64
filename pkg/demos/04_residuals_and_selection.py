"""
Residual diagnostics and model comparison
=========================================

Fits the normal and t models to t-distributed data, ranks them by AIC and
BIC, and computes martingale-type residuals for the preferred model.  The
QQ pairs are printed at a handful of quantile levels; write them with
``QQData.to_csv`` to plot elsewhere.

Run with ``python3 demos/04_residuals_and_selection.py``.
"""

import numpy as np

from symheckman import diagnose, estimate, simulate, symdist
from symheckman.selmodel import ModelSpec

cfg = simulate.scenario("1", n=2000, seed=3)
data = simulate.generate_dataset(cfg, simulate.replicate_rng(cfg.seed, 0))

specs = {"normal": ModelSpec(symdist.gaussian()), "t": cfg.model_spec()}
fits = {k: estimate.fit(s, data, {"compute_se": False}) for k, s in specs.items()}
rows = diagnose.compare_models(list(fits.values()), list(fits))
print(diagnose.format_comparison(rows))

best = rows[0]["model"]
res = diagnose.mt_residuals(fits[best], specs[best], data)
finite = res.finite
print("\n%s model residuals: mean %.3f, variance %.3f, %d flagged"
      % (best, finite.mean(), finite.var(ddof=1), res.flagged.sum()))
for label, mask in (("selected", res.u == 1), ("censored", res.u == 0)):
    r = res.residual[mask & np.isfinite(res.residual)]
    print("  %-8s mean %6.3f  variance %5.3f" % (label, r.mean(), r.var(ddof=1)))

# %%
# Points of the normal QQ plot.
qq = diagnose.qq_data(res)
m = qq.residual.size
print("\n%10s %12s" % ("theoretical", "residual"))
for p in (0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99):
    i = min(m - 1, int(p * m))
    print("%10.3f %12.3f" % (qq.theoretical[i], qq.residual[i]))
