"""Shared exception types.

Every failure mode that a caller can sensibly react to gets its own class,
so tests can assert on the type rather than parse messages.  Budget
exhaustion in the quadrature engine is deliberately NOT here: running out
of function evaluations is an expected outcome, reported through
``QuadResult.converged``.
"""


class VanHoveLabError(Exception):
    """Base class for all package errors."""


class DegenerateHessian(VanHoveLabError):
    """A critical point has a Hessian eigenvalue below tolerance."""


class FactorizationFailed(VanHoveLabError):
    """Normal-form factorization residual stayed above tolerance after retries."""


class FlatBranch(VanHoveLabError):
    """No nonvanishing branch derivative detected up to the requested order."""


class TraceStalled(VanHoveLabError):
    """Newton projection failed to converge during level-set tracing."""


class InsufficientResolution(VanHoveLabError):
    """Curve discretization too coarse for the requested scale."""


class HypothesisViolated(VanHoveLabError):
    """A lemma precondition fails on the supplied data; no claim is made."""


class BosePole(VanHoveLabError):
    """Bose factor evaluated too close to its pole at zero energy."""


class ZeroFrequency(VanHoveLabError):
    """External frequency q0 = 0 removes the regularization; refuse."""


class NonFiniteSample(VanHoveLabError):
    """An integrand returned NaN or infinity."""


class SingularDesign(VanHoveLabError):
    """Least-squares design matrix is rank deficient or near singular."""
