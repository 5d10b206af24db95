"""Instrument-validity testing.

The pipeline regresses the quasi-residual Y - D*beta_hat on the full design,
debiases the instrument block of the fit, and compares the scaled maximum
norm of the debiased coefficients (the M statistic) against a simulated
Gaussian-maximum critical value. A bias-corrected quadratic form of the same
coefficients (the Q statistic, asymptotically zero under validity) is folded
in as a power enhancement: the PM decision rejects when either statistic
exceeds the critical value.

Conventions fixed here and recorded in every report: the critical value is
the empirical (1-alpha) quantile of the max-abs norm of multiplier draws
built from per-observation scores (no additional sqrt(n) scaling), and the
Q statistic uses the natural logarithm of the total design dimension.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from .clime import PrecisionEstimate, clime, default_mu
from .data import Dataset, GramMatrix, WeightDiag, compute_weight_matrix, gram
from .errors import ConfigError, SolverError, WeakInstrumentError
from .estimator import (
    BetaEstimate,
    ReducedFormFits,
    estimate_beta,
    fit_reduced_forms,
)
from .lasso import CvResult, LassoProblem, cv_select

DRAW_CHUNK = 20_000


@dataclass(frozen=True)
class OveridConfig:
    """Tuning knobs for one full test run. ``seed`` fixes every random step:
    fold partitions for the three cross-validated Lassos and the multiplier
    draws all derive from it."""

    alpha: float = 0.05
    n_draws: int = 2000
    seed: int = 0
    c_omega: float = 2.0
    mu: Optional[float] = None
    cv_folds: int = 10
    n_lambda: int = 100
    lambda_min_ratio: Optional[float] = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.n_draws < 100:
            raise ConfigError(f"need at least 100 multiplier draws, got {self.n_draws}")

    def stage_seeds(self) -> Dict[str, int]:
        children = np.random.SeedSequence(self.seed).spawn(4)
        keys = ("lasso_outcome", "lasso_treatment", "lasso_invalidity", "draws")
        return {k: int(c.generate_state(1)[0]) for k, c in zip(keys, children)}


@dataclass(frozen=True)
class PiFit:
    """Lasso fit of Y - D*beta_hat on [X, Z] and its residuals."""

    phi_hat_A: np.ndarray
    pi_hat_A: np.ndarray
    e_hat_A: np.ndarray
    beta_hat: float
    cv: CvResult


@dataclass(frozen=True)
class DebiasedPi:
    pi_tilde_A: np.ndarray
    full_tilde: np.ndarray


@dataclass(frozen=True)
class CovarianceVA:
    """Sandwich covariance of the scaled debiased instrument coefficients."""

    v_hat_A: np.ndarray
    a0_hat: np.ndarray
    omega_z: np.ndarray


@dataclass(frozen=True)
class TestReport:
    m_stat: float
    q_stat: float
    cv: float
    alpha: float
    p_value_m: float
    p_value_pm: float
    reject_m: bool
    reject_q: bool
    reject_pm: bool
    n_draws: int
    seed: int
    q_hat_gamma: float
    relatedness_hat: float
    weak_flag: bool
    beta: BetaEstimate
    weighted_tilde: Tuple[float, ...] = ()
    seeds: Dict[str, int] = field(default_factory=dict)
    metadata: Dict[str, object] = field(default_factory=dict)


@dataclass(frozen=True)
class PipelinePrefix:
    """Everything the estimation stage produces before the test statistics:
    reduced-form fits, weighting, Gram/precision matrices, effect estimate."""

    fits: ReducedFormFits
    a: WeightDiag
    sigma: GramMatrix
    omega: PrecisionEstimate
    beta: BetaEstimate
    seeds: Dict[str, int]


def prepare_pipeline(data: Dataset, config: OveridConfig) -> PipelinePrefix:
    """Run the shared estimation stage (reduced forms, precision matrix,
    treatment-effect estimate)."""
    seeds = config.stage_seeds()
    fits = fit_reduced_forms(
        data,
        cv_folds=config.cv_folds,
        seed_outcome=seeds["lasso_outcome"],
        seed_treatment=seeds["lasso_treatment"],
        n_lambda=config.n_lambda,
        lambda_min_ratio=config.lambda_min_ratio,
    )
    a = compute_weight_matrix(data.z)
    sigma = gram(data.w)
    mu = config.mu if config.mu is not None else default_mu(data.n, data.p, config.c_omega)
    omega = clime(sigma, mu)
    beta = estimate_beta(data, fits, omega, a, alpha=config.alpha)
    return PipelinePrefix(fits=fits, a=a, sigma=sigma, omega=omega, beta=beta, seeds=seeds)


def fit_pi(
    data: Dataset,
    beta_hat: float,
    config: OveridConfig,
    seed: Optional[int] = None,
) -> PiFit:
    """Cross-validated Lasso of the quasi-residual Y - D*beta_hat on the full
    design."""
    if not np.isfinite(beta_hat):
        raise ConfigError("beta_hat must be finite")
    response = data.y - beta_hat * data.d
    pen = np.where(data.w_unpenalized, 0.0, 1.0)
    cv = cv_select(
        LassoProblem(data.w, response, pen),
        folds=config.cv_folds,
        seed=config.seed if seed is None else seed,
        n_points=config.n_lambda,
        ratio=config.lambda_min_ratio,
    )
    if not cv.chosen_fit.converged:
        raise SolverError(
            "invalidity-regression Lasso did not converge "
            f"(max subgradient violation {cv.chosen_fit.kkt_max_violation:.3g})"
        )
    coefs = cv.chosen_fit.coefficients
    return PiFit(
        phi_hat_A=coefs[: data.p_x],
        pi_hat_A=coefs[data.p_x :],
        e_hat_A=response - data.w @ coefs,
        beta_hat=float(beta_hat),
        cv=cv,
    )


def debias_pi(
    pi_fit: PiFit, omega: PrecisionEstimate, data: Dataset, beta_hat: float
) -> DebiasedPi:
    """One-step bias correction of the invalidity regression coefficients."""
    coefs = np.concatenate([pi_fit.phi_hat_A, pi_fit.pi_hat_A])
    full = coefs + omega.omega @ (data.w.T @ pi_fit.e_hat_A) / data.n
    return DebiasedPi(pi_tilde_A=full[data.p_x :], full_tilde=full)


def covariance_va(
    pi_fit: PiFit,
    omega: PrecisionEstimate,
    a: WeightDiag,
    gamma_hat: np.ndarray,
    q_hat_gamma: float,
    data: Dataset,
) -> CovarianceVA:
    """Heteroskedasticity-robust covariance of the scaled debiased instrument
    coefficients, built around the strength-projection matrix."""
    if q_hat_gamma <= 0.0:
        raise WeakInstrumentError(q_hat_gamma)
    a0 = a.sqrt_diag[:, None] * (
        np.eye(a.p_z) - np.outer(gamma_hat, a.diag * gamma_hat) / q_hat_gamma
    )
    omega_z = omega.rows(slice(data.p_x, data.p))
    t = _score_matrix(a0, omega_z, pi_fit.e_hat_A, data)
    v = t.T @ t / data.n
    v = 0.5 * (v + v.T)
    return CovarianceVA(v_hat_A=v, a0_hat=a0, omega_z=omega_z)


def _score_matrix(a0, omega_z, e_hat, data: Dataset) -> np.ndarray:
    """Per-observation score rows whose empirical second moment is the test
    covariance; the multiplier draws are Gaussian mixtures of these rows."""
    return (e_hat[:, None] * data.w) @ (a0 @ omega_z).T


def m_statistic(pi_tilde_A: np.ndarray, a: WeightDiag, n: int) -> float:
    """Scaled maximum norm sqrt(n) * max_j |a_j^(1/2) * coef_j|."""
    return float(np.sqrt(n) * np.max(np.abs(a.sqrt_diag * np.asarray(pi_tilde_A))))


def critical_value(
    va: CovarianceVA,
    pi_fit: PiFit,
    data: Dataset,
    alpha: float,
    n_draws: int,
    seed: int,
) -> Tuple[float, Callable[[float], float]]:
    """Simulate the null maximum via multiplier draws.

    Each draw is eta = n^(-1/2) * sum_i s_i * w_i with standard normal
    multipliers w_i over the score rows s_i, so conditional on the data eta
    is exactly Gaussian with the sandwich covariance. Returns the empirical
    (1-alpha) quantile of max|eta| and an add-one empirical p-value function.
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}")
    if n_draws < 100:
        raise ConfigError(f"need at least 100 draws, got {n_draws}")
    t = _score_matrix(va.a0_hat, va.omega_z, pi_fit.e_hat_A, data)
    scaled = t.T / math.sqrt(data.n)
    rng = np.random.default_rng(seed)
    maxima = np.empty(n_draws)
    done = 0
    while done < n_draws:
        chunk = min(DRAW_CHUNK, n_draws - done)
        w = rng.standard_normal((data.n, chunk))
        eta = scaled @ w
        maxima[done : done + chunk] = np.max(np.abs(eta), axis=0)
        done += chunk
    maxima.sort()

    k = math.ceil((1.0 - alpha) * n_draws)
    cv = float(maxima[k - 1])

    def p_value(x: float) -> float:
        n_ge = n_draws - int(np.searchsorted(maxima, x, side="left"))
        return (1.0 + n_ge) / (n_draws + 1.0)

    return cv, p_value


def debiased_qa(
    pi_fit: PiFit,
    omega: PrecisionEstimate,
    a: WeightDiag,
    data: Dataset,
    beta_hat: float,
) -> float:
    """Bias-corrected weighted quadratic form of the invalidity coefficients
    (may be negative; only large positive values matter downstream)."""
    u_pi = omega.omega @ np.concatenate([np.zeros(data.p_x), a.diag * pi_fit.pi_hat_A])
    plug_in = float(pi_fit.pi_hat_A @ (a.diag * pi_fit.pi_hat_A))
    return plug_in + 2.0 / data.n * float(u_pi @ (data.w.T @ pi_fit.e_hat_A))


def q_statistic(q_hat_a: float, n: int, p: int) -> float:
    """sqrt(n) * log(p) * q_hat (natural logarithm)."""
    return float(np.sqrt(n) * math.log(p) * q_hat_a)


def pm_decision(m_stat: float, q_stat: float, cv: float) -> Tuple[bool, bool, bool]:
    """(reject by max-norm, reject by quadratic, reject by either)."""
    reject_m = m_stat > cv
    reject_q = q_stat > cv
    return reject_m, reject_q, (max(m_stat, q_stat) > cv)


def relatedness(pi: np.ndarray, gamma: np.ndarray, a: WeightDiag) -> float:
    """Weighted cosine between the invalidity and strength vectors; zero when
    either weighted quadratic form is non-positive. Magnitude one means the
    two are perfectly parallel, the configuration no validity test can
    detect."""
    pi = np.asarray(pi, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    q_pi = float(pi @ (a.diag * pi))
    q_gamma = float(gamma @ (a.diag * gamma))
    if q_pi <= 0.0 or q_gamma <= 0.0:
        return 0.0
    return float(pi @ (a.diag * gamma)) / math.sqrt(q_pi * q_gamma)


def run_overid_test(data: Dataset, config: OveridConfig) -> TestReport:
    """Run the full validity test: estimation stage, invalidity regression,
    debiasing, multiplier critical value, and the power-enhanced decision.

    Raises WeakInstrumentError when the debiased strength quadratic form is
    non-positive; the test is then meaningless and no silent accept is
    produced.
    """
    prefix = prepare_pipeline(data, config)
    return continue_overid_test(data, config, prefix)


def continue_overid_test(
    data: Dataset, config: OveridConfig, prefix: PipelinePrefix
) -> TestReport:
    """Test statistics stage, reusing a prepared estimation stage."""
    if prefix.beta.weak_flag:
        raise WeakInstrumentError(prefix.beta.q_hat)
    seeds = prefix.seeds
    pi_fit = fit_pi(data, prefix.beta.beta_hat, config, seed=seeds["lasso_invalidity"])
    tilde = debias_pi(pi_fit, prefix.omega, data, prefix.beta.beta_hat)
    va = covariance_va(
        pi_fit, prefix.omega, prefix.a, prefix.fits.gamma_hat, prefix.beta.q_hat, data
    )
    m_val = m_statistic(tilde.pi_tilde_A, prefix.a, data.n)
    cv, p_value = critical_value(
        va, pi_fit, data, config.alpha, config.n_draws, seeds["draws"]
    )
    qa = debiased_qa(pi_fit, prefix.omega, prefix.a, data, prefix.beta.beta_hat)
    q_val = q_statistic(qa, data.n, data.p)
    reject_m, reject_q, reject_pm = pm_decision(m_val, q_val, cv)
    return TestReport(
        m_stat=m_val,
        q_stat=q_val,
        cv=cv,
        alpha=config.alpha,
        p_value_m=p_value(m_val),
        p_value_pm=p_value(max(m_val, q_val)),
        reject_m=reject_m,
        reject_q=reject_q,
        reject_pm=reject_pm,
        n_draws=config.n_draws,
        seed=config.seed,
        q_hat_gamma=prefix.beta.q_hat,
        relatedness_hat=relatedness(pi_fit.pi_hat_A, prefix.fits.gamma_hat, prefix.a),
        weak_flag=False,
        beta=prefix.beta,
        weighted_tilde=tuple(
            float(v) for v in np.sqrt(data.n) * prefix.a.sqrt_diag * tilde.pi_tilde_A
        ),
        seeds=dict(seeds),
        metadata={
            "critical_value_convention": (
                "empirical (1-alpha) quantile of max-abs multiplier draws; "
                "no additional sqrt(n) scaling"
            ),
            "q_statistic_log": "natural",
            "mu": prefix.omega.mu,
            "clime_feasibility_gap": prefix.omega.feasibility_gap,
            "lambda_1se_outcome": prefix.fits.cv_outcome.lambda_1se,
            "lambda_1se_treatment": prefix.fits.cv_treatment.lambda_1se,
            "lambda_1se_invalidity": pi_fit.cv.lambda_1se,
        },
    )
