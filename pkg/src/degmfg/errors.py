"""Exception hierarchy shared by all solver modules."""


class DegMfgError(Exception):
    """Base class for all package errors."""


class ConfigurationError(DegMfgError):
    """Invalid configuration: bad parameters, violated invariants, CFL bounds.

    ``problems`` collects every violation found, not just the first one.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class SolverError(DegMfgError):
    """A solve failed (non-convergence, mass drift, non-finite values)."""
