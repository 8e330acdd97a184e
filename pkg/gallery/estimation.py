"""Maximum likelihood on simulated monthly data with exact, expanded and Gaussian likelihoods."""
from affdens.apps import BajdParams
from affdens.inference import mle_fit, simulate_bajd_exact

truth = BajdParams(kth=0.04, kappa=1.0, sigma=0.2, l=3.0, nu=0.01)
data = simulate_bajd_exact(truth, 0.07, 1 / 12, 500, seed=2024)

print("method       J   kth      kappa    sigma    l        nu        loglik")
print(f"truth            " + "  ".join(f"{v:.4f}" for v in truth.as_tuple()))
for method, J in (("oracle", 4), ("expansion", 4), ("expansion", 2), ("qml", 2)):
    fit = mle_fit(data, truth, method, J=J)
    vals = "  ".join(f"{v:.4f}" for v in fit.params.as_tuple())
    print(f"{method:<11s} {J:2d}   {vals}   {fit.loglik:.2f}")
