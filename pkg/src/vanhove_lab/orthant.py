"""The 16-orthant sign table for reducing [-1,1]^4 integrals to [0,1]^4.

Each term records, for one sign assignment of (x, y, x', y'), the three
combinations that appear in the two-loop integrands,

    epsilon = x y' + x' y - 2 x' y'
    D       = y - y'
    F       = (x - x') (y - y')

rewritten in the folded coordinates X = |x|, ..., Y' = |y'|, plus the
zero-temperature support restriction rho (present only for the eight
cases where E2 = xy and E3 = x'y' have opposite signs).  The table is
hard-coded row by row; the unit tests check every row against the
generic signed-coordinate formulas, so transcription errors cannot
hide.

All callables take (X, Y, Xp, Yp) as four positional array arguments.
Terms n+8 arise from n by total reflection: epsilon and F are invariant,
D flips sign, rho is unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Tuple

import numpy as np

__all__ = ["OrthantTerm", "table", "fold_to_positive", "RESTRICTED_CASES"]

# Cases whose (E2, E3) signs differ: these are the only ones that can
# contribute at zero temperature.
RESTRICTED_CASES = frozenset({1, 2, 3, 4, 9, 10, 11, 12})


@dataclass(frozen=True)
class OrthantTerm:
    n: int
    sign_pattern: Tuple[int, int, int, int]
    epsilon: Callable
    D: Optional[Callable]
    F: Optional[Callable]
    rho: Optional[Callable]


def _rows_1_to_8():
    e1 = lambda X, Y, Xp, Yp: Xp * Y + (2 * Xp - X) * Yp
    e2 = lambda X, Y, Xp, Yp: X * Yp + (2 * Yp - Y) * Xp
    e3 = lambda X, Y, Xp, Yp: X * Yp - (2 * Yp + Y) * Xp
    e4 = lambda X, Y, Xp, Yp: Xp * Y - (2 * Xp + X) * Yp
    e5 = lambda X, Y, Xp, Yp: X * Yp - Xp * (2 * Yp - Y)
    e6 = lambda X, Y, Xp, Yp: -(X * Yp + Xp * (2 * Yp + Y))
    e7 = lambda X, Y, Xp, Yp: -(X * Yp - Xp * (2 * Yp - Y))
    e8 = lambda X, Y, Xp, Yp: X * Yp + Xp * (2 * Yp + Y)

    d1 = lambda X, Y, Xp, Yp: Y + Yp
    d2 = lambda X, Y, Xp, Yp: Y - Yp
    d3 = lambda X, Y, Xp, Yp: -(Y + Yp)
    d4 = lambda X, Y, Xp, Yp: -(Y - Yp)

    f1 = lambda X, Y, Xp, Yp: (X - Xp) * (Y + Yp)
    f2 = lambda X, Y, Xp, Yp: (X + Xp) * (Y - Yp)
    f3 = lambda X, Y, Xp, Yp: -(X - Xp) * (Y + Yp)
    f4 = lambda X, Y, Xp, Yp: -(X + Xp) * (Y - Yp)

    rx = lambda X, Y, Xp, Yp: X < Xp
    ry = lambda X, Y, Xp, Yp: Y < Yp

    return [
        (1, (+1, +1, +1, -1), e1, d1, f1, rx),
        (2, (+1, +1, -1, +1), e2, d2, f2, ry),
        (3, (+1, -1, +1, +1), e3, d3, f3, rx),
        (4, (+1, -1, -1, -1), e4, d4, f4, ry),
        (5, (+1, +1, +1, +1), e5, None, None, None),
        (6, (+1, +1, -1, -1), e6, None, None, None),
        (7, (+1, -1, +1, -1), e7, None, None, None),
        (8, (+1, -1, -1, +1), e8, None, None, None),
    ]


def _negate(fn: Callable) -> Callable:
    return lambda X, Y, Xp, Yp: -fn(X, Y, Xp, Yp)


def table() -> List[OrthantTerm]:
    """All sixteen orthant terms, in order n = 1..16."""
    rows = []
    base = _rows_1_to_8()
    for n, signs, e, d, f, r in base:
        rows.append(OrthantTerm(n, signs, e, d, f, r))
    for n, signs, e, d, f, r in base:
        refl = tuple(-s for s in signs)
        rows.append(
            OrthantTerm(
                n + 8, refl, e, _negate(d) if d is not None else None, f, r
            )
        )
    return rows


def fold_to_positive(
    f: Callable, selection: Iterable[int], apply_restrictions: bool = True
) -> Callable:
    """Rewrite an integrand on [-1,1]^4 as one on [0,1]^4.

    For each selected case n, the returned integrand adds f evaluated at
    the signed coordinates of that orthant; with ``apply_restrictions``
    the zero-temperature support indicator rho_n multiplies the term
    where the table defines one.  With it off, summing all 16 cases is
    the plain unit-Jacobian tiling of [-1,1]^4 by its orthants.

    ``f`` follows the quad convention: points of shape (m, 4) in, values
    of shape (m,) out.  Terms are accumulated in ascending n, so results
    are deterministic.
    """
    sel = sorted(set(int(n) for n in selection))
    if not sel:
        raise ValueError("selection is empty")
    if sel[0] < 1 or sel[-1] > 16:
        raise ValueError("selection must be within 1..16")
    terms = [t for t in table() if t.n in sel]

    def folded(points: np.ndarray) -> np.ndarray:
        P = np.asarray(points, dtype=float)
        X, Y, Xp, Yp = P[:, 0], P[:, 1], P[:, 2], P[:, 3]
        total = None
        for t in terms:
            signed = P * np.asarray(t.sign_pattern, dtype=float)
            val = np.asarray(f(signed))
            if apply_restrictions and t.rho is not None:
                val = np.where(t.rho(X, Y, Xp, Yp), val, 0.0)
            total = val if total is None else total + val
        return total

    return folded
