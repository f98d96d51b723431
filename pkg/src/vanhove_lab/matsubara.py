"""Thermal statistics: Fermi/Bose factors, the thermal delta, and the
frequency-summed two-loop kernel.

All functions accept scalars or numpy arrays for the energy arguments and
mirror the input shape.  Exponentials are routed through stable forms
(``expit``, ``expm1``, and an explicit e^{-|x|} rewriting of sech^2) so
that beta up to 1e4 is safe.

Zero temperature is a flag, not beta = inf: the step convention at E = 0
is Theta_{1/2}(0) = 1/2, which keeps grid quadrature reproducible when a
node lands exactly on the Fermi surface.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import expit

from .errors import BosePole, ZeroFrequency

__all__ = ["ThermalState", "fermi", "bose", "approx_delta", "sigma2_kernel"]

Energy = Union[float, np.ndarray]

# expm1(x) overflows past ~709; treat the tails as saturated.
_EXP_CUT = 700.0


@dataclass(frozen=True)
class ThermalState:
    beta: float = 0.0
    zero_temperature: bool = False

    def __post_init__(self) -> None:
        if not self.zero_temperature and not self.beta > 0:
            raise ValueError("finite-temperature state needs beta > 0")

    @classmethod
    def finite(cls, beta: float) -> "ThermalState":
        return cls(beta=float(beta))

    @classmethod
    def zero(cls) -> "ThermalState":
        return cls(beta=0.0, zero_temperature=True)


def _match(E: Energy, out: np.ndarray) -> Energy:
    if np.ndim(E) == 0:
        return float(out)
    return out


def fermi(state: ThermalState, E: Energy) -> Energy:
    """Occupation (1 + e^{beta E})^{-1}; step function with midpoint 1/2
    at zero temperature."""
    x = np.asarray(E, dtype=float)
    if state.zero_temperature:
        out = np.where(x < 0, 1.0, np.where(x > 0, 0.0, 0.5))
    else:
        out = expit(-state.beta * x)
    return _match(E, out)


def bose(state: ThermalState, E: Energy) -> Energy:
    """(e^{beta E} - 1)^{-1}; -Theta(-E) at zero temperature.

    The pole at E = 0 is real: callers that need the E2 -> E3 limit must
    use :func:`sigma2_kernel`, which removes it via the product identity.
    """
    x = np.asarray(E, dtype=float)
    if state.zero_temperature:
        out = np.where(x < 0, -1.0, np.where(x > 0, 0.0, -0.5))
        return _match(E, out)
    bx = state.beta * x
    if np.any(np.abs(bx) < 1e-12):
        raise BosePole("bose factor evaluated within 1e-12 of its pole")
    out = np.empty_like(bx)
    hi = bx > _EXP_CUT
    lo = bx < -_EXP_CUT
    mid = ~(hi | lo)
    out[hi] = 0.0
    out[lo] = -1.0
    out[mid] = 1.0 / np.expm1(bx[mid])
    return _match(E, out)


def approx_delta(state: ThermalState, x: Energy) -> Energy:
    """Thermal delta beta / (4 cosh^2(beta x / 2)).

    Computed as beta e^{-|beta x|} / (1 + e^{-|beta x|})^2, which
    underflows gracefully to 0 for |beta x| beyond the exponent range.
    """
    if state.zero_temperature:
        raise ValueError("approx_delta needs finite beta")
    t = np.abs(state.beta * np.asarray(x, dtype=float))
    w = np.exp(-t)
    out = state.beta * w / (1.0 + w) ** 2
    return _match(x, out)


def _numerator(state: ThermalState, E1: Energy, E2: Energy, E3: Energy):
    # (f1 + b_{23})(f2 - f3) with the removable Bose pole eliminated:
    # b(E2-E3)(f2-f3) = f2 (f3 - 1) identically, so the combined form is
    # regular on E2 = E3 and bounded by 2 in magnitude.
    f1 = fermi(state, E1)
    f2 = fermi(state, E2)
    f3 = fermi(state, E3)
    return f1 * (f2 - f3) + f2 * (f3 - 1.0)


def sigma2_kernel(
    state: ThermalState, E1: Energy, E2: Energy, E3: Energy, q0: float
) -> Union[complex, np.ndarray]:
    """Summed-frequency kernel -(f(E1)+b(E2-E3))(f(E2)-f(E3)) / (iq0 + eps)
    with eps = E2 - E3 - E1.

    The numerator is always assembled through the pole-free product
    identity; its magnitude never exceeds 2, so |kernel| <= 2/|q0|.
    """
    if q0 == 0:
        raise ZeroFrequency("sigma2 kernel needs q0 != 0")
    num = _numerator(state, E1, E2, E3)
    eps = np.asarray(E2, dtype=float) - np.asarray(E3, dtype=float) - np.asarray(
        E1, dtype=float
    )
    out = -np.asarray(num) / (1j * q0 + eps)
    if out.ndim == 0:
        return complex(out)
    return out
