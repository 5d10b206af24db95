"""Precision-matrix estimation by columnwise constrained L1 minimization.

Each column solves the linear program

    min ||w||_1   s.t.   ||S w - e_j||_inf <= mu

for the sample second-moment matrix S, then the column solutions are
symmetrized by keeping, for every pair of positions, whichever entry has the
smaller magnitude. The LP is posed with split positive/negative parts and a
boxed slack,

    min 1'(w+ + w-)  s.t.  S (w+ - w-) - s = e_j,  w+- >= 0,  -mu <= s <= mu,

and handed to HiGHS (dual simplex), which is deterministic for a fixed input.
The infinity-norm feasibility gap of the pre-symmetrization solution is kept
as a certificate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .data import GramMatrix
from .errors import ConfigError, SolverError

MU_FLOOR = 1e-4
FEASIBILITY_SLACK = 1e-8


@dataclass(frozen=True)
class PrecisionEstimate:
    """Symmetrized inverse second-moment estimate with its tuning value and
    the constraint certificate of the raw columnwise solution."""

    omega: np.ndarray
    mu: float
    feasibility_gap: float

    @property
    def p(self) -> int:
        return self.omega.shape[0]

    def rows(self, idx) -> np.ndarray:
        return self.omega[idx]


def default_mu(n: int, p: int, c_omega: float = 2.0) -> float:
    """Rate-based tuning value c * sqrt(log(p) / n), floored at 1e-4."""
    if n < 2 or p < 1:
        raise ConfigError(f"need n >= 2 and p >= 1, got n={n}, p={p}")
    return max(c_omega * math.sqrt(math.log(p) / n), MU_FLOOR)


def _lp_pieces(sigma: np.ndarray, mu: float):
    p = sigma.shape[0]
    a_eq = sp.hstack(
        [sp.csc_matrix(sigma), sp.csc_matrix(-sigma), -sp.identity(p, format="csc")],
        format="csc",
    )
    cost = np.concatenate([np.ones(2 * p), np.zeros(p)])
    bounds = [(0.0, None)] * (2 * p) + [(-mu, mu)] * p
    return a_eq, cost, bounds


def _solve_column(a_eq, cost, bounds, p: int, j: int) -> np.ndarray:
    b_eq = np.zeros(p)
    b_eq[j] = 1.0
    res = linprog(cost, A_eq=a_eq, b_eq=b_eq, bounds=bounds, method="highs-ds")
    if res.status != 0:
        raise SolverError(f"precision-matrix LP failed: {res.message}", column=j)
    return res.x[:p] - res.x[p : 2 * p]


def clime_column(sigma_hat: GramMatrix, j: int, mu: float) -> np.ndarray:
    """Minimum-L1 solution of one column problem."""
    if not mu > 0.0:
        raise ConfigError(f"tuning value must be positive, got {mu}")
    sigma = sigma_hat.sigma_hat
    if not 0 <= j < sigma.shape[0]:
        raise ConfigError(f"column index {j} out of range for p={sigma.shape[0]}")
    a_eq, cost, bounds = _lp_pieces(sigma, mu)
    return _solve_column(a_eq, cost, bounds, sigma.shape[0], j)


def clime(sigma_hat: GramMatrix, mu: float) -> PrecisionEstimate:
    """Solve all column problems and symmetrize by the min-magnitude rule."""
    if not mu > 0.0:
        raise ConfigError(f"tuning value must be positive, got {mu}")
    sigma = sigma_hat.sigma_hat
    p = sigma.shape[0]
    a_eq, cost, bounds = _lp_pieces(sigma, mu)
    raw = np.empty((p, p))
    for j in range(p):
        raw[:, j] = _solve_column(a_eq, cost, bounds, p, j)

    gap = float(np.max(np.abs(sigma @ raw - np.eye(p))))
    # keep the smaller-magnitude member of each (j,k)/(k,j) pair; ties go to
    # the upper-triangle entry so the result is exactly symmetric
    omega = raw.copy()
    upper = np.triu_indices(p, k=1)
    pick_upper = np.abs(raw[upper]) <= np.abs(raw.T[upper])
    vals = np.where(pick_upper, raw[upper], raw.T[upper])
    omega[upper] = vals
    omega[(upper[1], upper[0])] = vals
    return PrecisionEstimate(omega=omega, mu=float(mu), feasibility_gap=gap)
