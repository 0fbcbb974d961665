"""Reference values for the bivariate density check.

Draws 100 points uniformly from [0.05, 50]^2 x [1e-3, 25] and records the log of
the mixed partial d^2 F / dx1 dx2 of the Huesler-Reiss CDF, taken by mpmath's
numerical differentiation. Tail densities can sit far below double precision
relative to F, so each point is worked at enough digits to resolve its
smallest Gaussian tail term.
"""
import numpy as np
from mpmath import mp, mpf, erfc, sqrt, log, exp, diff



def ncdf(x):
    return erfc(-x / sqrt(2)) / 2


def cdf(x1, x2, d):
    a = 2 * sqrt(d)
    l = log(x2 / x1)
    return exp(-(ncdf(l / a + a / 2) / x1 + ncdf(-l / a + a / 2) / x2))


rng = np.random.default_rng(20240917)
pts = np.column_stack(
    [rng.uniform(0.05, 50, 100), rng.uniform(0.05, 50, 100), rng.uniform(1e-3, 25, 100)]
)
print("x1,x2,delta,log_density")
for x1, x2, d in pts.tolist():
    qmax = abs(np.log(x2 / x1)) / (2 * np.sqrt(d)) + np.sqrt(d)
    mp.dps = int(qmax * qmax / 2 / np.log(10)) + 60
    f = lambda u, v: cdf(u, v, mpf(d))
    m = diff(f, (mpf(x1), mpf(x2)), (1, 1))
    print(f"{x1!r},{x2!r},{d!r},{mp.nstr(log(m), 17)}")
