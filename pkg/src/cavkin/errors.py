"""Exception hierarchy. The CLI maps these onto process exit codes."""

from __future__ import annotations


class CavkinError(Exception):
    """Base class for all package errors."""


class ConfigError(CavkinError):
    """Malformed or inconsistent experiment configuration (exit code 2)."""


class NumericalError(CavkinError):
    """A numerical routine failed or produced non-finite results (exit code 3)."""


class ConvergenceError(CavkinError):
    """A convergence gate failed, results are not trustworthy (exit code 4)."""


class KineticRegimeError(NumericalError):
    """No rate plateau was found. Carries the instantaneous rate trace."""

    def __init__(self, message: str, times_fs=None, kappa_trace=None):
        super().__init__(message)
        self.times_fs = times_fs
        self.kappa_trace = kappa_trace
