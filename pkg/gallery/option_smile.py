"""One-week calls on the stochastic variance model priced from the order-4 log-price expansion."""
import math

import numpy as np

from affdens import oracle
from affdens.apps import HestonParams, price_call

p = HestonParams(kappa_v=1.0, kth_v=0.04, sigma=0.2, kth_x=0.03, rho=-0.8)
x0, v0, dt, r = 5.1, 0.04, 1 / 52, 0.03
logK = np.linspace(5.09, 5.17, 9)

res = price_call(p, x0, v0, dt, logK, r, J=4)
ref = oracle.heston_call(logK, dt, r, *p.as_tuple(), v0, x0)
S0 = math.exp(x0)
print(" log K    C(4)      C oracle   IV(4)    IV oracle")
for k, a, b in zip(logK, res.price, ref):
    ia = oracle.implied_vol(a, S0, math.exp(k), dt, r)
    ib = oracle.implied_vol(b, S0, math.exp(k), dt, r)
    print(f"{k:.3f}  {a:9.5f}  {b:9.5f}  {ia:.4f}   {ib:.4f}")
for d in res.diagnostics:
    print("note:", d)
