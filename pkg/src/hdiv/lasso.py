"""L1-penalized least squares by cyclic coordinate descent.

The objective is

    n^-1 ||y - X b||_2^2 + lambda * sum_j factor_j * |b_j|

with per-column penalty factors (0 marks an unpenalized column). Fits carry a
subgradient (KKT) certificate, paths are warm-started on a descending
log-spaced grid, and tuning is by K-fold cross-validation with the
one-standard-error rule. No intercept: callers center the data upstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

from .errors import ConfigError

# convergence controls (max coefficient change per sweep, subgradient slack,
# sweep cap per grid point)
COORD_TOL = 1e-8
KKT_TOL = 1e-7
MAX_SWEEPS = 100_000

DEFAULT_N_LAMBDA = 100
DEFAULT_CV_FOLDS = 10
LAMBDA_FLOOR = 1e-10


@dataclass(frozen=True)
class LassoProblem:
    """A design/response pair plus per-column penalty multipliers."""

    design: np.ndarray
    response: np.ndarray
    penalty_factors: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.ascontiguousarray(self.design, dtype=float)
        y = np.ascontiguousarray(self.response, dtype=float).ravel()
        if x.ndim != 2:
            raise ConfigError("design must be a 2-d matrix")
        if x.shape[0] != y.shape[0]:
            raise ConfigError(
                f"design has {x.shape[0]} rows but response has {y.shape[0]}"
            )
        pf = self.penalty_factors
        pf = np.ones(x.shape[1]) if pf is None else np.ascontiguousarray(pf, dtype=float).ravel()
        if pf.shape[0] != x.shape[1]:
            raise ConfigError("penalty_factors length does not match design width")
        if np.any(pf < 0.0):
            raise ConfigError("penalty factors must be non-negative")
        object.__setattr__(self, "design", x)
        object.__setattr__(self, "response", y)
        object.__setattr__(self, "penalty_factors", pf)

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def p(self) -> int:
        return self.design.shape[1]


@dataclass(frozen=True)
class LassoFit:
    coefficients: np.ndarray
    lam: float
    n_iterations: int
    converged: bool
    kkt_max_violation: float

    @property
    def active_set(self) -> np.ndarray:
        return np.flatnonzero(self.coefficients)


@dataclass(frozen=True)
class CvResult:
    """Cross-validation curve and the fit refit at the one-standard-error
    penalty on the full data."""

    lambda_grid: np.ndarray
    cv_mean_error: np.ndarray
    cv_se: np.ndarray
    lambda_min: float
    lambda_1se: float
    chosen_fit: LassoFit
    seed: int
    folds: int


@njit(cache=True)
def _kkt_violation(G, c, b, lam, pen):
    # subgradient residual of the objective at b; gradient of the smooth part
    # along coordinate j is -2*(c_j - (G b)_j)
    p = b.shape[0]
    q = np.dot(G, b)
    viol = 0.0
    for j in range(p):
        g = 2.0 * (c[j] - q[j])
        t = lam * pen[j]
        if b[j] > 0.0:
            v = abs(g - t)
        elif b[j] < 0.0:
            v = abs(g + t)
        else:
            v = abs(g) - t
            if v < 0.0:
                v = 0.0
        if v > viol:
            viol = v
    return viol


@njit(cache=True)
def _cd_path(G, c, pen, lambdas, b, tol, max_sweeps, kkt_tol):
    """Cyclic coordinate descent over a descending penalty grid.

    Warm-starts each grid point from the previous solution and maintains the
    gradient through rank-one covariance updates; refreshed exactly before
    every certificate check to keep round-off out of the certificate.
    """
    p = G.shape[0]
    m = lambdas.shape[0]
    coefs = np.zeros((m, p))
    sweeps_out = np.zeros(m, dtype=np.int64)
    kkt_out = np.zeros(m)
    conv_out = np.zeros(m, dtype=np.bool_)

    q = np.dot(G, b)
    for k in range(m):
        lam = lambdas[k]
        sweeps = 0
        while True:
            max_delta = 0.0
            for j in range(p):
                gjj = G[j, j]
                if gjj <= 0.0:
                    continue
                bj = b[j]
                rho = c[j] - q[j] + gjj * bj
                t = 0.5 * lam * pen[j]
                if rho > t:
                    bn = (rho - t) / gjj
                elif rho < -t:
                    bn = (rho + t) / gjj
                else:
                    bn = 0.0
                if bn != bj:
                    diff = bn - bj
                    for i in range(p):
                        q[i] += G[i, j] * diff
                    b[j] = bn
                    if abs(diff) > max_delta:
                        max_delta = abs(diff)
            sweeps += 1
            if max_delta < tol or sweeps >= max_sweeps:
                viol = _kkt_violation(G, c, b, lam, pen)
                q = np.dot(G, b)
                if viol <= kkt_tol:
                    conv_out[k] = True
                    break
                if sweeps >= max_sweeps or max_delta == 0.0:
                    conv_out[k] = False
                    break
        kkt_out[k] = _kkt_violation(G, c, b, lam, pen)
        sweeps_out[k] = sweeps
        coefs[k] = b
    return coefs, sweeps_out, kkt_out, conv_out


def _gram_parts(x: np.ndarray, y: np.ndarray):
    n = x.shape[0]
    G = x.T @ x / n
    G = np.ascontiguousarray(0.5 * (G + G.T))
    c = x.T @ y / n
    return G, c


def solve_lasso(
    problem: LassoProblem, lam: float, warm_start: Optional[np.ndarray] = None
) -> LassoFit:
    """Solve the penalized least-squares problem at a single penalty value.

    Returns a fit whose ``kkt_max_violation`` certifies stationarity; a fit
    that exhausted the sweep budget comes back with ``converged=False`` and
    it is the caller's decision how severe that is.
    """
    if not lam > 0.0:
        raise ConfigError(f"penalty must be positive, got {lam}")
    G, c = _gram_parts(problem.design, problem.response)
    b = np.zeros(problem.p) if warm_start is None else np.array(warm_start, dtype=float)
    if b.shape[0] != problem.p:
        raise ConfigError("warm start has wrong length")
    coefs, sweeps, kkt, conv = _cd_path(
        G, c, problem.penalty_factors, np.array([lam]), b, COORD_TOL, MAX_SWEEPS, KKT_TOL
    )
    return LassoFit(
        coefficients=coefs[0],
        lam=float(lam),
        n_iterations=int(sweeps[0]),
        converged=bool(conv[0]),
        kkt_max_violation=float(kkt[0]),
    )


def lambda_path(problem: LassoProblem, n_points: int = DEFAULT_N_LAMBDA,
                ratio: Optional[float] = None) -> np.ndarray:
    """Descending log-spaced penalty grid.

    The top of the grid is the smallest penalty that zeroes every penalized
    coefficient: 2 * max_j |x_j' r| / (n * factor_j) over penalized columns,
    where r is the response after projecting out any unpenalized columns.
    """
    if n_points < 2:
        raise ConfigError("need at least two grid points")
    if ratio is None:
        ratio = 1e-3 if problem.n > problem.p else 1e-2
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"grid ratio must be in (0, 1), got {ratio}")
    pen = problem.penalty_factors
    penalized = pen > 0.0
    if not np.any(penalized):
        raise ConfigError("cannot build a penalty path: no column is penalized")
    r = problem.response
    if np.any(~penalized):
        xu = problem.design[:, ~penalized]
        coef, *_ = np.linalg.lstsq(xu, r, rcond=None)
        r = r - xu @ coef
    corr = np.abs(problem.design[:, penalized].T @ r) / problem.n
    lam_max = 2.0 * float(np.max(corr / pen[penalized]))
    lam_max = max(lam_max, LAMBDA_FLOOR)
    return lam_max * np.logspace(0.0, np.log10(ratio), n_points)


def cv_select(
    problem: LassoProblem,
    folds: int = DEFAULT_CV_FOLDS,
    seed: int = 0,
    n_points: int = DEFAULT_N_LAMBDA,
    ratio: Optional[float] = None,
) -> CvResult:
    """Pick the penalty by K-fold cross-validation with the 1-SE rule.

    The fold partition is a seeded random split with fold sizes differing by
    at most one. ``lambda_1se`` is the largest grid value whose mean CV error
    is within one standard error (computed across folds at ``lambda_min``) of
    the minimum; the returned fit is refit on the full data at that penalty.
    """
    if folds < 2:
        raise ConfigError(f"need at least 2 folds, got {folds}")
    if problem.n < folds:
        raise ConfigError(
            f"cannot split {problem.n} rows into {folds} non-empty folds"
        )
    grid = lambda_path(problem, n_points=n_points, ratio=ratio)
    pen = problem.penalty_factors
    x, y = problem.design, problem.response

    rng = np.random.default_rng(seed)
    perm = rng.permutation(problem.n)
    fold_rows = np.array_split(perm, folds)

    fold_mse = np.empty((folds, grid.shape[0]))
    for k, test_rows in enumerate(fold_rows):
        mask = np.ones(problem.n, dtype=bool)
        mask[test_rows] = False
        G, c = _gram_parts(x[mask], y[mask])
        coefs, _, _, _ = _cd_path(
            G, c, pen, grid, np.zeros(problem.p), COORD_TOL, MAX_SWEEPS, KKT_TOL
        )
        resid = y[test_rows, None] - x[test_rows] @ coefs.T
        fold_mse[k] = np.mean(resid * resid, axis=0)

    cv_mean = fold_mse.mean(axis=0)
    cv_se = fold_mse.std(axis=0, ddof=1) / np.sqrt(folds)
    i_min = int(np.argmin(cv_mean))
    threshold = cv_mean[i_min] + cv_se[i_min]
    i_1se = int(np.flatnonzero(cv_mean <= threshold)[0])  # grid is descending

    G, c = _gram_parts(x, y)
    coefs, sweeps, kkt, conv = _cd_path(
        G, c, pen, grid[: i_1se + 1], np.zeros(problem.p), COORD_TOL, MAX_SWEEPS, KKT_TOL
    )
    chosen = LassoFit(
        coefficients=coefs[-1],
        lam=float(grid[i_1se]),
        n_iterations=int(sweeps[-1]),
        converged=bool(conv[-1]),
        kkt_max_violation=float(kkt[-1]),
    )
    return CvResult(
        lambda_grid=grid,
        cv_mean_error=cv_mean,
        cv_se=cv_se,
        lambda_min=float(grid[i_min]),
        lambda_1se=float(grid[i_1se]),
        chosen_fit=chosen,
        seed=seed,
        folds=folds,
    )
