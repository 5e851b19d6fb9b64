"""
Density generators and the conditional density
==============================================

Builds the Gaussian and Student-t generators, evaluates the conditional
CDF ``G`` with the closed forms and with the generic quadrature path,
and checks numerically that the conditional density of an observed outcome
integrates to one.

Run with ``python3 demos/01_generators.py``.
"""

import numpy as np
from scipy import integrate

from symheckman import selmodel, symdist

gauss = symdist.gaussian()
t4 = symdist.student_t(4.0)

# The same generator wrapped as a plain callable forces the quadrature path.
generic_t4 = t4.as_tabulated()

print("conditional CDF G(x | r)")
print("%6s %6s %14s %14s" % ("x", "r", "closed", "quadrature"))
for x in (-1.0, 0.0, 1.5):
    for r in (0.0, 2.5):
        closed = symdist.G_function(x, r, t4)
        generic = symdist.G_function(x, r, generic_t4)
        print("%6.2f %6.2f %14.10f %14.10f" % (x, r, closed, generic))

# The selection probability H(mu2) is the marginal CDF of U* at mu2.
for mu2 in (-1.0, 0.0, 1.5):
    print("H(%5.2f): normal %.6f  t(4) %.6f" % (mu2, symdist.H_function(mu2, 0.3, gauss),
                                               symdist.H_function(mu2, 0.3, t4)))

# %%
# A selected outcome has density f(y | U* > 0).  Heavier tails in the t case
# show up far from the mean.
ys = np.array([-6.0, -2.0, 0.0, 2.0, 6.0])
args = dict(mu1=0.5, sigma=1.3, rho=0.6, mu2=-0.2)
print("\nconditional density at a few outcomes")
print("y      ", "  ".join("%9.2f" % y for y in ys))
for label, g in (("normal ", gauss), ("t(4)   ", t4)):
    dens = selmodel.cond_density(ys, args["mu1"], args["sigma"], args["rho"], args["mu2"], g)
    print(label, "  ".join("%9.2e" % d for d in dens))

# %%
# Normalization check.
for label, g in (("normal", gauss), ("t(4)", t4)):
    total, _ = integrate.quad(lambda y: selmodel.cond_density(y, **args, g=g), -np.inf, np.inf)
    print("%-6s integral of the conditional density = %.12f" % (label, total))
