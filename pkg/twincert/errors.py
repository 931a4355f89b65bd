"""Exception hierarchy shared by every twincert module."""

from __future__ import annotations


class TwinCertError(Exception):
    """Base exception for certification-related errors."""
    pass


class NetworkFormatError(TwinCertError):
    """Raised when a network, domain or dataset file cannot be parsed."""
    pass


class ShapeError(TwinCertError, ValueError):
    """Raised on dimension mismatches and out-of-range indices."""
    pass


class EncodingError(TwinCertError):
    """Raised when a constraint builder is called without its prerequisites."""
    pass


class SolverError(TwinCertError):
    """Raised when the LP/MILP machinery fails internally."""
    pass


class InfeasibleSubproblemError(SolverError):
    """Raised when a certification sub-problem that must be feasible is not.

    The true execution pair is always a feasible point of every emitted
    encoding, so reaching this means ranges or tolerances are broken.
    """

    def __init__(self, message: str, *, layer: int, neuron: int, stage: str):
        super().__init__(f"{message} (layer={layer}, neuron={neuron}, stage={stage})")
        self.layer = layer
        self.neuron = neuron
        self.stage = stage


class GuardExceededError(TwinCertError):
    """Raised when an exponential baseline is asked to run on a too-large input."""
    pass


class DisturbanceBoundError(TwinCertError, ValueError):
    """Raised when a disturbance sample exceeds its declared bound."""
    pass
