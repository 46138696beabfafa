"""Shared exception types.  The CLI maps these onto exit codes."""

from __future__ import annotations


class ExpandlabError(Exception):
    pass


class PreconditionError(ExpandlabError):
    """An operation's degeneracy/classification precondition is not met."""


class NumericalError(ExpandlabError):
    """A numerical procedure failed (divergence, singularity, rank loss)."""


class NewtonDivergenceError(NumericalError):
    pass


class ZSamplingError(NumericalError):
    pass


class QuadratureError(NumericalError):
    pass


class RankDeficientError(NumericalError):
    pass


class BudgetError(ExpandlabError):
    """A configured memory/point-count budget would be exceeded."""
