"""Exception hierarchy shared by all hdiv modules.

Every error raised by the library derives from :class:`HdivError` so the CLI
can map failure classes to stable exit codes.
"""


class HdivError(Exception):
    """Base class for all hdiv errors."""


class ParseError(HdivError):
    """Malformed input file (bad cell, missing header, wrong column count)."""

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column


class ConfigError(HdivError):
    """Invalid configuration: bad roles, dimensions, tuning values, keys."""


class DegenerateDataError(HdivError):
    """Data that makes the requested analysis meaningless (constant column,
    all-zero instrument)."""

    def __init__(self, message, column=None):
        if column is not None:
            message = f"{message} (column {column!r})"
        super().__init__(message)
        self.column = column


class WeakInstrumentError(HdivError):
    """Debiased instrument-strength quadratic form is non-positive; the
    validity test cannot proceed."""

    def __init__(self, q_hat_gamma):
        super().__init__(
            "instrument strength estimate is non-positive "
            f"(debiased quadratic form = {q_hat_gamma:.6g}); "
            "the validity test requires strictly positive strength"
        )
        self.q_hat_gamma = q_hat_gamma


class SolverError(HdivError):
    """Numerical solver failure (LP infeasibility, escalated non-convergence)."""

    def __init__(self, message, column=None):
        if column is not None:
            message = f"{message} (column index {column})"
        super().__init__(message)
        self.column = column
