"""Orthonormal polynomial expansions of transition densities for affine jump-diffusions."""

__version__ = "0.1.0"

from .poly import Polynomial, collect_coefficients, poly_arith, poly_compose_affine, poly_eval
from .weights import (
    BilateralGammaWeight,
    GammaWeight,
    GaussianWeight,
    OrthonormalBasis,
    ProductWeight,
    bilateral_partial_moment,
    gram_schmidt,
    product_basis,
    weight_density,
    weight_moment,
)
from .affine import (
    AffineModel,
    QMatrix,
    RegularityReport,
    bajd_model,
    build_q_matrix,
    check_assumption2,
    check_density_existence,
    check_integrated_existence,
    conditional_moments,
    exp_moment_check,
    heston_model,
    integrated_model,
)
from .expand import (
    Expansion,
    Standardization,
    expansion_coefficients,
    pseudo_cdf,
    pseudo_density,
    pseudo_exp_poly_integral,
    standardize_1d,
    standardize_2d,
)
from .oracle import CharSolution, char_fn, fourier_cdf, fourier_density, integrated_char_fn, solve_riccati
from .apps import (
    BajdParams,
    CreditPortfolio,
    GateError,
    HestonParams,
    Obligor,
    asb_recursion,
    bajd_expansion,
    heston_expansion,
    heston_marginal_expansion,
    integrated_bajd_expansion,
    portfolio_loss,
    price_call,
)
from .inference import (
    Prior,
    TimeSeries,
    ks_statistic,
    log_likelihood,
    mle_fit,
    posterior_eval,
    posterior_sample,
    simulate_bajd_exact,
    simulate_heston,
)
