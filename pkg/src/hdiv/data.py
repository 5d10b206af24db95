"""Dataset container, column standardization, and the shared matrix pieces
(diagonal instrument weighting, Gram matrix) used by every downstream module.

The model layout is fixed: one outcome column, one endogenous treatment
column, a block of exogenous covariates, and a block of candidate instruments.
All containers are immutable after construction and safe to share across
worker processes.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DegenerateDataError, ParseError

ROLES = ("outcome", "treatment", "covariate", "instrument", "ignore")


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ColumnScale:
    """Original per-column location/scale kept around after standardization so
    reports can translate results back to raw units."""

    names: tuple
    means: np.ndarray
    sds: np.ndarray


@dataclass(frozen=True)
class Dataset:
    """One analysis sample.

    Attributes
    ----------
    y : (n,) outcome vector
    d : (n,) endogenous treatment vector
    x : (n, p_x) covariate matrix (p_x may be zero)
    z : (n, p_z) instrument matrix, p_z >= 2
    x_names, z_names : column labels
    x_unpenalized, z_unpenalized : per-column flags for variables that are
        never penalized in any of the L1 regressions
    scale : original column scales when the data were standardized
    """

    y: np.ndarray
    d: np.ndarray
    x: np.ndarray
    z: np.ndarray
    x_names: tuple = ()
    z_names: tuple = ()
    y_name: str = "Y"
    d_name: str = "D"
    x_unpenalized: Optional[np.ndarray] = None
    z_unpenalized: Optional[np.ndarray] = None
    scale: Optional[ColumnScale] = None

    def __post_init__(self):
        y = _readonly(np.asarray(self.y, dtype=float).ravel())
        d = _readonly(np.asarray(self.d, dtype=float).ravel())
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        z = np.asarray(self.z, dtype=float)
        if z.ndim == 1:
            z = z.reshape(-1, 1)
        x = _readonly(x)
        z = _readonly(z)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)

        n = y.shape[0]
        if not (d.shape[0] == n and x.shape[0] == n and z.shape[0] == n):
            raise ConfigError(
                "outcome, treatment, covariates and instruments must have the "
                f"same number of rows (got {n}, {d.shape[0]}, {x.shape[0]}, {z.shape[0]})"
            )
        if n < 2:
            raise ConfigError(f"need at least 2 rows, got {n}")
        if z.shape[1] < 2:
            raise ConfigError(
                "at least two instruments are required to test overidentifying "
                f"restrictions, got {z.shape[1]}"
            )
        for arr, what in ((y, "outcome"), (d, "treatment"), (x, "covariates"), (z, "instruments")):
            if arr.size and not np.all(np.isfinite(arr)):
                raise ConfigError(f"non-finite values in {what}")
        zero = ~np.any(z != 0.0, axis=0)
        if np.any(zero):
            j = int(np.flatnonzero(zero)[0])
            name = self.z_names[j] if self.z_names else f"Z{j + 1}"
            raise DegenerateDataError("instrument column is identically zero", column=name)

        if not self.x_names:
            object.__setattr__(self, "x_names", tuple(f"X{j + 1}" for j in range(x.shape[1])))
        else:
            object.__setattr__(self, "x_names", tuple(self.x_names))
        if not self.z_names:
            object.__setattr__(self, "z_names", tuple(f"Z{j + 1}" for j in range(z.shape[1])))
        else:
            object.__setattr__(self, "z_names", tuple(self.z_names))
        if len(self.x_names) != x.shape[1] or len(self.z_names) != z.shape[1]:
            raise ConfigError("column label count does not match matrix width")

        for attr, width in (("x_unpenalized", x.shape[1]), ("z_unpenalized", z.shape[1])):
            flags = getattr(self, attr)
            if flags is None:
                flags = np.zeros(width, dtype=bool)
            else:
                flags = np.asarray(flags, dtype=bool).ravel()
                if flags.shape[0] != width:
                    raise ConfigError(f"{attr} has wrong length")
            flags.setflags(write=False)
            object.__setattr__(self, attr, flags)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p_x(self) -> int:
        return self.x.shape[1]

    @property
    def p_z(self) -> int:
        return self.z.shape[1]

    @property
    def p(self) -> int:
        return self.p_x + self.p_z

    @cached_property
    def w(self) -> np.ndarray:
        """Design matrix [X, Z], covariates first."""
        w = np.hstack([self.x, self.z])
        w.setflags(write=False)
        return w

    @cached_property
    def w_unpenalized(self) -> np.ndarray:
        flags = np.concatenate([self.x_unpenalized, self.z_unpenalized])
        flags.setflags(write=False)
        return flags

    @property
    def w_names(self) -> tuple:
        return self.x_names + self.z_names


@dataclass(frozen=True)
class WeightDiag:
    """Diagonal weighting by squared instrument scale, diag[j] = mean(Z_j^2)."""

    diag: np.ndarray
    sqrt_diag: np.ndarray = field(default=None)

    def __post_init__(self):
        diag = _readonly(np.asarray(self.diag, dtype=float).ravel())
        if np.any(diag <= 0.0):
            j = int(np.argmin(diag))
            raise DegenerateDataError(
                "weight diagonal must be strictly positive", column=f"Z{j + 1}"
            )
        object.__setattr__(self, "diag", diag)
        object.__setattr__(self, "sqrt_diag", _readonly(np.sqrt(diag)))

    @property
    def p_z(self) -> int:
        return self.diag.shape[0]


@dataclass(frozen=True)
class GramMatrix:
    """Symmetrized sample second-moment matrix of the full design, W'W/n."""

    sigma_hat: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.sigma_hat, dtype=float)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise ConfigError("Gram matrix must be square")
        object.__setattr__(self, "sigma_hat", _readonly(s))

    @property
    def p(self) -> int:
        return self.sigma_hat.shape[0]


@dataclass(frozen=True)
class ColumnSpec:
    """Role assignment for the columns of a delimited input file.

    Columns not named anywhere default to the covariate role unless
    ``covariates`` is given explicitly, in which case unnamed columns are
    ignored. This mirrors subset testing in practice: name the instruments
    under test, and everything else acts as a covariate.
    """

    outcome: str
    treatment: str
    instruments: Sequence[str]
    covariates: Optional[Sequence[str]] = None
    ignore: Sequence[str] = ()
    unpenalized: Sequence[str] = ()


def load_dataset(source, spec: ColumnSpec) -> Dataset:
    """Read a header-ed CSV (UTF-8, '.' decimals) and partition its columns by
    role.

    Parameters
    ----------
    source : path or text file object
    spec : ColumnSpec naming the roles

    Raises
    ------
    ParseError for malformed cells (with row/column location), ConfigError for
    bad role assignments, DegenerateDataError for all-zero instrument columns.
    """
    if hasattr(source, "read"):
        header, rows = _read_csv(source)
    else:
        with open(source, "r", encoding="utf-8", newline="") as fh:
            header, rows = _read_csv(fh)

    seen = set()
    for name in header:
        if name in seen:
            raise ParseError("duplicate column name", column=name)
        seen.add(name)

    roles = _assign_roles(header, spec)
    col = {name: i for i, name in enumerate(header)}
    data = np.empty((len(rows), len(header)), dtype=float)
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise ParseError(
                f"expected {len(header)} fields, found {len(row)}", row=i + 2
            )
        for j, cell in enumerate(row):
            cell = cell.strip()
            if not cell:
                raise ParseError("empty cell", row=i + 2, column=header[j])
            try:
                data[i, j] = float(cell)
            except ValueError:
                raise ParseError(
                    f"non-numeric value {cell!r}", row=i + 2, column=header[j]
                ) from None

    x_names = tuple(n for n in header if roles[n] == "covariate")
    z_names = tuple(n for n in header if roles[n] == "instrument")
    if len(z_names) < 2:
        raise ConfigError(
            f"at least two instrument columns are required, got {len(z_names)}"
        )
    unpen = set(spec.unpenalized)
    unknown_unpen = unpen - set(header)
    if unknown_unpen:
        raise ConfigError(f"unpenalized columns not in file: {sorted(unknown_unpen)}")

    return Dataset(
        y=data[:, col[spec.outcome]],
        d=data[:, col[spec.treatment]],
        x=data[:, [col[n] for n in x_names]] if x_names else np.empty((len(rows), 0)),
        z=data[:, [col[n] for n in z_names]],
        x_names=x_names,
        z_names=z_names,
        y_name=spec.outcome,
        d_name=spec.treatment,
        x_unpenalized=np.array([n in unpen for n in x_names], dtype=bool),
        z_unpenalized=np.array([n in unpen for n in z_names], dtype=bool),
    )


def _read_csv(fh) -> tuple:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty file") from None
    header = [h.strip() for h in header]
    if any(not h for h in header):
        raise ParseError("blank column name in header", row=1)
    return header, list(reader)


def _assign_roles(header, spec: ColumnSpec) -> dict:
    roles = {}

    def put(name, role):
        if name not in header:
            raise ConfigError(f"column {name!r} not present in the file header")
        if name in roles:
            raise ConfigError(
                f"column {name!r} assigned to both {roles[name]!r} and {role!r}"
            )
        roles[name] = role

    put(spec.outcome, "outcome")
    put(spec.treatment, "treatment")
    for name in spec.instruments:
        put(name, "instrument")
    if spec.covariates is not None:
        for name in spec.covariates:
            put(name, "covariate")
    for name in spec.ignore:
        put(name, "ignore")
    default = "ignore" if spec.covariates is not None else "covariate"
    for name in header:
        roles.setdefault(name, default)
    return roles


def standardize(data: Dataset) -> Dataset:
    """Center and scale every column (outcome and treatment included) to mean
    zero and unit sample standard deviation (divisor n-1).

    Original scales are preserved in ``Dataset.scale``. Idempotent up to
    floating-point noise; constant columns are an error.
    """
    n = data.n
    cols = [data.y[:, None], data.d[:, None], data.x, data.z]
    names = (data.y_name, data.d_name) + data.x_names + data.z_names
    stacked = np.hstack(cols)
    means = stacked.mean(axis=0)
    sds = stacked.std(axis=0, ddof=1)
    bad = sds == 0.0
    if np.any(bad):
        raise DegenerateDataError(
            "cannot standardize a constant column", column=names[int(np.flatnonzero(bad)[0])]
        )
    out = (stacked - means) / sds
    p_x = data.p_x
    return Dataset(
        y=out[:, 0],
        d=out[:, 1],
        x=out[:, 2 : 2 + p_x],
        z=out[:, 2 + p_x :],
        x_names=data.x_names,
        z_names=data.z_names,
        y_name=data.y_name,
        d_name=data.d_name,
        x_unpenalized=data.x_unpenalized,
        z_unpenalized=data.z_unpenalized,
        scale=ColumnScale(names=tuple(names), means=_readonly(means), sds=_readonly(sds)),
    )


def compute_weight_matrix(z: np.ndarray) -> WeightDiag:
    """Diagonal weights diag[j] = n^-1 sum_i Z_ij^2 (uncentered second moment)."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 2 or z.size == 0:
        raise ConfigError("instrument matrix must be 2-d and nonempty")
    return WeightDiag(diag=np.mean(z * z, axis=0))


def gram(w: np.ndarray) -> GramMatrix:
    """Sample second-moment matrix W'W/n, symmetrized by (S + S')/2."""
    w = np.asarray(w, dtype=float)
    if w.ndim != 2 or w.shape[0] < 1:
        raise ConfigError("design matrix must be 2-d with at least one row")
    if not np.all(np.isfinite(w)):
        raise ConfigError("non-finite values in design matrix")
    s = w.T @ w / w.shape[0]
    s = 0.5 * (s + s.T)
    return GramMatrix(sigma_hat=s)


def normal_quantile(q: float) -> float:
    """Inverse standard normal CDF (delegates to scipy's AS241 implementation)."""
    from scipy.stats import norm

    if not 0.0 < q < 1.0:
        raise ConfigError(f"quantile level must be in (0, 1), got {q}")
    return float(norm.ppf(q))
