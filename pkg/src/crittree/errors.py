"""Exception types shared across the package."""


class CrittreeError(Exception):
    """Base class for all package errors."""


class ModelError(CrittreeError):
    """Invalid model definition (rates, tables, schema)."""


class NonCriticalError(ModelError):
    """The first-moment generator has a nonzero Perron eigenvalue."""

    def __init__(self, eigenvalue: float):
        self.eigenvalue = eigenvalue
        super().__init__(
            f"model is not critical: Perron eigenvalue {eigenvalue:.3e} "
            "(positive = supercritical, negative = subcritical)"
        )


class ReducibleError(ModelError):
    """The Perron eigenvector is not strictly positive."""


class OutOfRangeError(CrittreeError):
    """Exploration-time query outside [0, L)."""


class CensoredQueryError(CrittreeError):
    """Query cannot be answered from a censored tree."""


class UnknownLabelError(CrittreeError):
    """Label does not belong to the tree."""


class RejectionBudgetError(CrittreeError):
    """Rejection sampler exceeded its attempt budget."""


class NoSurvivorsError(CrittreeError):
    """Tree has no particles alive at the requested time."""


class TooFewSurvivorsError(CrittreeError):
    """Not enough surviving replicates for a conditional statistic."""


class DegenerateTreeError(CrittreeError):
    """Tree has zero total length."""
