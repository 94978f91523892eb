"""Exception hierarchy.

Every error carries a short machine-readable ``code`` and, where it makes
sense, the name of the offending input ``field``; the CLI turns these into
structured JSON error records and distinct exit statuses.
"""

from __future__ import annotations


class RobinIdError(Exception):
    code = "error"
    exit_status = 1

    def __init__(self, message: str, field: str | None = None, **details):
        super().__init__(message)
        self.message = message
        self.field = field
        self.details = details

    def to_dict(self) -> dict:
        out = {"code": self.code, "message": self.message, "field": self.field}
        if self.details:
            out["details"] = self.details
        return out


class ConfigError(RobinIdError):
    code = "config_error"
    exit_status = 2


class InvalidMeshError(ConfigError):
    code = "invalid_mesh"


class AdmissibilityError(RobinIdError):
    """Coefficients outside the admissible box or the smallness bound on b fails."""

    code = "admissibility_violation"
    exit_status = 3


class EigenSolverError(RobinIdError):
    code = "eigensolver_failure"
    exit_status = 4


class CoercivityError(RobinIdError):
    """The assembled operator is not positive definite (alpha <= 0 in practice)."""

    code = "coercivity_failure"
    exit_status = 5


class StagnationError(RobinIdError):
    code = "optimizer_stagnation"
    exit_status = 6


class SweepError(RobinIdError):
    code = "sweep_failure"
    exit_status = 7


class DiagnosticError(RobinIdError):
    code = "diagnostic_failure"
    exit_status = 8


class CrossCheckError(RobinIdError):
    """Two independent formulas for the same derivative disagree."""

    code = "crosscheck_failure"
    exit_status = 9


class DomainError(RobinIdError, ValueError):
    code = "domain_error"
    exit_status = 10
