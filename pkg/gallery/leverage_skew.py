"""Leverage and skew in the stochastic variance model.

Conditional on a variance above its starting value, the log price drifts
down when price and variance are negatively correlated: the mode of the
conditional law moves left as the correlation falls.
"""
import numpy as np

from affdens.apps import HestonParams, heston_expansion

x = np.linspace(4.8, 5.2, 801)
v = 0.043
for rho in (0.0, -0.2, -0.4, -0.6, -0.8):
    p = HestonParams(kappa_v=1.0, kth_v=0.04, sigma=0.2, kth_x=0.03, rho=rho)
    exp = heston_expansion(p, 5.0, 0.04, 1 / 52, J=4, C=1 / 3)
    g = exp.density(np.column_stack([np.full_like(x, v), x]))
    w = g / np.trapezoid(g, x)
    m = np.trapezoid(x * w, x)
    sd = np.sqrt(np.trapezoid((x - m) ** 2 * w, x))
    print(f"rho = {rho:+.1f}   mode {x[np.argmax(g)]:.4f}   mean {m:.4f}   sd {sd:.4f}")
