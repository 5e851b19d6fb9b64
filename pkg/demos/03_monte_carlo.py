"""
A small Monte Carlo study
=========================

Repeats generate-and-fit for the first scenario at three sample sizes and
prints bias and MSE for every coefficient.  The default of 50 replicates
runs in well under a minute; pass a larger count as the first argument,
e.g. ``python3 demos/03_monte_carlo.py 200``.
"""

import sys

from symheckman import simulate

nrep = int(sys.argv[1]) if len(sys.argv) > 1 else 50

summaries = {}
for n in (500, 1000, 2000):
    cfg = simulate.scenario("1", n=n, nrep=nrep, seed=2005)
    summaries[n] = simulate.run_study(cfg)
    s = summaries[n]
    print("n=%d: mean censoring %.1f%%, %d failed replicate(s)"
          % (n, 100 * s.mean_censoring, s.failures))

names = summaries[500].names
print("\n%-16s %7s" % ("parameter", "true") + "".join("   bias n=%-5d  mse n=%-5d" % (n, n)
                                                      for n in summaries))
for i, name in enumerate(names):
    cells = "".join("  %11.5f  %11.5f" % (s.bias[i], s.mse[i]) for s in summaries.values())
    print("%-16s %7.3f%s" % (name, summaries[500].true[i], cells))

# %%
# Summaries can be written in the same CSV/JSON layout the CLI uses.
# simulate.write_summary(summaries[1000], "mc_summary.csv", "mc_summary.json")
