"""Hellinger differential privacy: calibration, composition and private minimum Hellinger distance estimation."""

from .density import KdeEstimate, silverman_bandwidth
from .divergence import DivergenceOrder, DomainError, gaussian_power_divergence, hellinger_sq_gaussians
from .hdloss import McLossContext, NumericalError, mc_gradient, mc_hessian, mc_loss
from .inference import CiReport, corrected_ci, private_cov, sandwich_cov
from .models import NormalModel
from .optimize import OptimizerAbort, OptimizerConfig, pgd_run, pnr_run, private_run
from .privacy import (
    ConversionError,
    NoiseSpec,
    PrivacyBudget,
    calibrate_gaussian_hdp,
    calibrate_gaussian_pdp,
    calibrate_laplace_hdp_exact_1d,
    calibrate_laplace_pdp,
    compose_hdp,
    compose_hdp_k,
    solve_per_step_epsilon,
)

__version__ = "0.1.0"

__all__ = [
    "CiReport", "ConversionError", "DivergenceOrder", "DomainError", "KdeEstimate", "McLossContext",
    "NoiseSpec", "NormalModel", "NumericalError", "OptimizerAbort", "OptimizerConfig", "PrivacyBudget",
    "calibrate_gaussian_hdp", "calibrate_gaussian_pdp", "calibrate_laplace_hdp_exact_1d",
    "calibrate_laplace_pdp", "compose_hdp", "compose_hdp_k", "corrected_ci", "gaussian_power_divergence",
    "hellinger_sq_gaussians", "mc_gradient", "mc_hessian", "mc_loss", "pgd_run", "pnr_run", "private_cov",
    "private_run", "sandwich_cov", "silverman_bandwidth", "solve_per_step_epsilon",
]
