"""Debiased treatment-effect estimation.

Fits the two reduced-form regressions by cross-validated Lasso, builds
projection directions from the precision-matrix estimate, corrects the
plug-in inner product and quadratic form for shrinkage bias, and assembles
the ratio estimate of the treatment effect with its heteroskedasticity-robust
variance and confidence interval.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .clime import PrecisionEstimate
from .data import Dataset, WeightDiag, normal_quantile
from .errors import SolverError
from .lasso import CvResult, LassoProblem, cv_select


@dataclass(frozen=True)
class ReducedFormFits:
    """Lasso fits of outcome and treatment on the full design W = [X, Z].

    Coefficient names follow the usual reduced-form convention: capital
    Psi/Gamma for the outcome equation, lowercase psi/gamma for the treatment
    equation; the split is covariates first, instruments second.
    """

    Psi_hat: np.ndarray
    Gamma_hat: np.ndarray
    psi_hat: np.ndarray
    gamma_hat: np.ndarray
    eps1_hat: np.ndarray
    eps2_hat: np.ndarray
    cv_outcome: CvResult
    cv_treatment: CvResult


@dataclass(frozen=True)
class ProjectionDirections:
    u_gamma: np.ndarray
    u_Gamma: np.ndarray


@dataclass(frozen=True)
class BetaEstimate:
    """Ratio estimate of the treatment effect.

    ``weak_flag`` marks a non-positive strength quadratic form; the estimate
    is then pinned at zero and no interval is reported.
    """

    beta_hat: float
    i_hat: float
    q_hat: float
    v_beta: Optional[float]
    ci: Optional[Tuple[float, float]]
    alpha: float
    weak_flag: bool


def fit_reduced_forms(
    data: Dataset,
    cv_folds: int = 10,
    seed_outcome: int = 0,
    seed_treatment: int = 1,
    n_lambda: int = 100,
    lambda_min_ratio: Optional[float] = None,
) -> ReducedFormFits:
    """Cross-validated Lasso of Y on W and of D on W, honoring per-column
    penalty exemptions. Non-convergence is escalated: the debiasing steps
    downstream assume a valid stationarity certificate.
    """
    pen = np.where(data.w_unpenalized, 0.0, 1.0)
    cv_y = cv_select(
        LassoProblem(data.w, data.y, pen),
        folds=cv_folds, seed=seed_outcome, n_points=n_lambda, ratio=lambda_min_ratio,
    )
    cv_d = cv_select(
        LassoProblem(data.w, data.d, pen),
        folds=cv_folds, seed=seed_treatment, n_points=n_lambda, ratio=lambda_min_ratio,
    )
    for label, cv in (("outcome", cv_y), ("treatment", cv_d)):
        if not cv.chosen_fit.converged:
            raise SolverError(
                f"reduced-form Lasso for the {label} equation did not converge "
                f"(max subgradient violation {cv.chosen_fit.kkt_max_violation:.3g})"
            )
    p_x = data.p_x
    by = cv_y.chosen_fit.coefficients
    bd = cv_d.chosen_fit.coefficients
    return ReducedFormFits(
        Psi_hat=by[:p_x],
        Gamma_hat=by[p_x:],
        psi_hat=bd[:p_x],
        gamma_hat=bd[p_x:],
        eps1_hat=data.y - data.w @ by,
        eps2_hat=data.d - data.w @ bd,
        cv_outcome=cv_y,
        cv_treatment=cv_d,
    )


def projection_directions(
    omega: PrecisionEstimate,
    a: WeightDiag,
    gamma_hat: np.ndarray,
    Gamma_hat: np.ndarray,
) -> ProjectionDirections:
    """Directions used to cancel the leading shrinkage bias: the precision
    estimate applied to (0, A*coef) with zeros in the covariate block."""
    p_x = omega.p - a.p_z
    u_g = omega.omega @ np.concatenate([np.zeros(p_x), a.diag * gamma_hat])
    u_G = omega.omega @ np.concatenate([np.zeros(p_x), a.diag * Gamma_hat])
    return ProjectionDirections(u_gamma=u_g, u_Gamma=u_G)


def debiased_quadratic(
    gamma_hat: np.ndarray,
    a: WeightDiag,
    u_gamma: np.ndarray,
    data: Dataset,
    psi_hat: np.ndarray,
) -> float:
    """Bias-corrected weighted quadratic form of the treatment-equation
    instrument coefficients. May be negative in weak configurations; callers
    check the sign."""
    resid = data.d - data.x @ psi_hat - data.z @ gamma_hat
    plug_in = float(gamma_hat @ (a.diag * gamma_hat))
    return plug_in + 2.0 / data.n * float(u_gamma @ (data.w.T @ resid))


def debiased_inner(
    gamma_hat: np.ndarray,
    Gamma_hat: np.ndarray,
    a: WeightDiag,
    directions: ProjectionDirections,
    data: Dataset,
    fits: ReducedFormFits,
) -> float:
    """Bias-corrected weighted inner product between the two reduced-form
    instrument coefficient vectors, with one residual correction per
    equation."""
    plug_in = float(gamma_hat @ (a.diag * Gamma_hat))
    corr_d = float(directions.u_Gamma @ (data.w.T @ fits.eps2_hat)) / data.n
    corr_y = float(directions.u_gamma @ (data.w.T @ fits.eps1_hat)) / data.n
    return plug_in + corr_d + corr_y


def estimate_beta(
    data: Dataset,
    fits: ReducedFormFits,
    omega: PrecisionEstimate,
    a: WeightDiag,
    alpha: float = 0.05,
) -> BetaEstimate:
    """Treatment effect as the ratio of the debiased inner product to the
    debiased quadratic form, with a robust variance built from the
    reduced-form residuals."""
    directions = projection_directions(omega, a, fits.gamma_hat, fits.Gamma_hat)
    q_hat = debiased_quadratic(fits.gamma_hat, a, directions.u_gamma, data, fits.psi_hat)
    i_hat = debiased_inner(fits.gamma_hat, fits.Gamma_hat, a, directions, data, fits)
    if q_hat <= 0.0:
        return BetaEstimate(
            beta_hat=0.0, i_hat=i_hat, q_hat=q_hat,
            v_beta=None, ci=None, alpha=alpha, weak_flag=True,
        )
    beta_hat = i_hat / q_hat
    scores = data.w @ directions.u_gamma
    e_combined = fits.eps1_hat - beta_hat * fits.eps2_hat
    v_beta = float(np.mean(scores**2 * e_combined**2)) / q_hat**2
    half = normal_quantile(1.0 - alpha / 2.0) * np.sqrt(v_beta / data.n)
    return BetaEstimate(
        beta_hat=float(beta_hat),
        i_hat=float(i_hat),
        q_hat=float(q_hat),
        v_beta=v_beta,
        ci=(float(beta_hat - half), float(beta_hat + half)),
        alpha=alpha,
        weak_flag=False,
    )
