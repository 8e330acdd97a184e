"""Number of defaults in a ten-name portfolio driven by a common jump intensity."""
import numpy as np

from affdens.apps import BajdParams, CreditPortfolio, Obligor, portfolio_loss

common = BajdParams(kth=0.2, kappa=1.0, sigma=0.3, l=2.0, nu=0.1)
idio = BajdParams(kth=0.01, kappa=0.5, sigma=0.05, l=0.5, nu=0.01)
pf = CreditPortfolio([Obligor(idio, 0.02, 0.1) for _ in range(10)], common, common.stationary_mean)

rows = {J: portfolio_loss(pf, 0.0, 5.0, J=J) for J in (2, 4, 10)}
print("defaults   " + "  ".join(f"J={J:<8d}" for J in rows))
for k in range(11):
    print(f"{k:8d}   " + "  ".join(f"{rows[J].pmf[k]:.6f}" for J in rows))
print("expected defaults:", {J: round(float(np.arange(11) @ r.pmf), 5) for J, r in rows.items()})
print("negative mass of the order-10 pseudo-density:", f"{rows[10].negative_mass:.2e}")
