"""Fermi-curve tracing and the overlap / small-set measurements.

The zero set {e = 0} is traced by a predictor-corrector march: the
predictor steps along the unit tangent (perpendicular to grad e), the
corrector Newton-projects back onto the level set along grad e.  At a
saddle the level set is an X, so traces terminate there and the four
arcs meeting at the saddle are seeded separately from the isotropic
(null) directions of the Hessian.

The overlap length of a traced curve with its translate measures
arclen{k on curve : |e(p +/- k)| <= threshold} by flagging polyline
segments, with linear interpolation at the threshold crossings.  The
scaling experiment samples translation momenta p, measures the overlap
at thresholds M^j, and compares with the bound (M^j / delta)^(1/n0)
outside a delta^2 fraction of exceptional p.

The interval lemma check verifies |{x : |f(x)| <= eps}| against the
bound 2^(k+1) (eps/eta)^(1/k) for functions with |f^(k)| >= eta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .dispersion import (
    DispersionModel,
    SingularPoint,
    evaluate,
    find_singular_points,
    gradient,
    morse_normal_form,
    _isotropic_frame,
)
from .errors import (
    HypothesisViolated,
    InsufficientResolution,
    TraceStalled,
)

__all__ = [
    "CurveSample",
    "OverlapScalingReport",
    "IntervalLemmaResult",
    "trace_fermi_curve",
    "overlap_length",
    "overlap_scaling_experiment",
    "interval_lemma_check",
]


@dataclass(frozen=True)
class CurveSample:
    points: np.ndarray  # (n, 2), unwrapped coordinates along the trace
    cumulative_arclength: np.ndarray  # (n,), starts at 0, strictly increasing
    branch_id: int
    closed: bool = False

    @property
    def total_length(self) -> float:
        return float(self.cumulative_arclength[-1])

    def segment_lengths(self) -> np.ndarray:
        return np.diff(self.cumulative_arclength)


def _torus_delta(d: np.ndarray) -> np.ndarray:
    return (d + math.pi) % (2.0 * math.pi) - math.pi


def _distance(a: np.ndarray, b: np.ndarray, periodic: bool) -> float:
    d = a - b
    if periodic:
        d = _torus_delta(d)
    return float(np.hypot(d[0], d[1]))


def _image_near(target: np.ndarray, ref: np.ndarray, periodic: bool) -> np.ndarray:
    """Representative of target (mod 2 pi) closest to ref."""
    if not periodic:
        return target
    return ref + _torus_delta(target - ref)


def _project(model, x, tol, max_iter=30):
    """Newton projection onto {e = 0} along grad e."""
    x = np.array(x, dtype=float)
    for _ in range(max_iter):
        v = float(evaluate(model, x))
        if abs(v) < tol:
            return x
        g = gradient(model, x)
        g2 = float(g @ g)
        if g2 == 0.0:
            break
        x = x - (v / g2) * g
    raise TraceStalled(f"level-set projection failed near {x}")


def _project_along(model, x, direction, tol, max_iter=40):
    """1D Newton for e(x + s d) = 0 along a fixed direction d."""
    x = np.array(x, dtype=float)
    d = np.asarray(direction, dtype=float)
    for _ in range(max_iter):
        v = float(evaluate(model, x))
        if abs(v) < tol:
            return x
        slope = float(gradient(model, x) @ d)
        if slope == 0.0:
            break
        x = x - (v / slope) * d
    raise TraceStalled(f"constrained projection failed near {x}")


def _tangent(model, x):
    g = gradient(model, x)
    n = float(np.hypot(g[0], g[1]))
    if n == 0.0:
        raise TraceStalled(f"vanishing gradient on trace at {x}")
    return np.array([-g[1], g[0]]) / n


def _clip_to_box(x_from, x_to, box):
    """First s in [0, 1] where the segment x_from -> x_to leaves the box,
    with the index of the wall hit; (None, None) if x_to is inside."""
    s_best = None
    wall = None
    d = x_to - x_from
    for i in range(2):
        lo, hi = box[i]
        if x_to[i] < lo:
            s = (lo - x_from[i]) / d[i] if d[i] != 0.0 else 0.0
            side = 0
        elif x_to[i] > hi:
            s = (hi - x_from[i]) / d[i] if d[i] != 0.0 else 0.0
            side = 1
        else:
            continue
        s = min(max(s, 0.0), 1.0)
        if s_best is None or s < s_best:
            s_best = s
            wall = (i, side)
    if wall is None:
        return None, None
    return s_best, wall


class _Marcher:
    def __init__(self, model, step, exclusion_radius, tol, max_steps, sing_locs):
        self.model = model
        self.h = step
        self.excl = exclusion_radius
        self.tol = tol
        self.max_steps = max_steps
        self.sing = sing_locs  # list of 2-vectors
        self.periodic = model.periodic
        # fold the four arc rays into the saddle itself when no exclusion
        self.snap = exclusion_radius < 0.25 * step
        self.stop_r = max(exclusion_radius, 1.5 * step)

    def near_singular(self, x) -> Optional[np.ndarray]:
        for s in self.sing:
            img = _image_near(s, x, self.periodic)
            if np.hypot(*(x - img)) <= self.stop_r:
                return img
        return None

    def march(self, x0, direction):
        """Trace from x0 until closure, a saddle, the boundary, or stall.

        Returns (points, closed).
        """
        model, h = self.model, self.h
        pts = [np.array(x0, dtype=float)]
        d_prev = np.asarray(direction, dtype=float)
        box = model.domain
        for n_step in range(self.max_steps):
            x = pts[-1]
            t = _tangent(model, x)
            if float(t @ d_prev) < 0.0:
                t = -t
            d_prev = t
            cand = _project(model, x + h * t, self.tol)
            spacing = float(np.hypot(*(cand - x)))
            if not 0.25 * h <= spacing <= 4.0 * h:
                cand = _project(model, x + 0.5 * h * t, self.tol)
                spacing = float(np.hypot(*(cand - x)))
                if not 0.25 * h <= spacing <= 4.0 * h:
                    raise TraceStalled(
                        f"step spacing {spacing} incompatible with target {h}"
                    )
            # saddle / exclusion-disc termination
            img = self.near_singular(cand)
            if img is not None:
                if self.snap:
                    if np.hypot(*(img - x)) >= 0.25 * h:
                        pts.append(img)
                else:
                    # trim the segment at the disc boundary
                    hit = self._disc_crossing(x, cand, img)
                    if hit is not None and np.hypot(*(hit - x)) >= 0.25 * h:
                        pts.append(hit)
                return pts, False
            # domain boundary (open domains only)
            if not self.periodic:
                s, wall = _clip_to_box(x, cand, box)
                if s is not None:
                    b = x + s * (cand - x)
                    i, _ = wall
                    tangent_dir = np.zeros(2)
                    tangent_dir[1 - i] = 1.0
                    try:
                        b = _project_along(model, b, tangent_dir, self.tol)
                    except TraceStalled:
                        pass  # keep the chord point; boundary grazing
                    if np.hypot(*(b - x)) >= 0.25 * h:
                        pts.append(b)
                    return pts, False
            pts.append(cand)
            # closure against the starting point
            if n_step >= 4:
                start_img = _image_near(pts[0], cand, self.periodic)
                dist = float(np.hypot(*(cand - start_img)))
                if dist <= 0.75 * h:
                    if dist < 0.25 * h:
                        pts.pop()
                        start_img = _image_near(pts[0], pts[-1], self.periodic)
                    pts.append(start_img)
                    return pts, True
        raise TraceStalled(f"no termination within {self.max_steps} steps")

    def _disc_crossing(self, a, b, center):
        """Point where segment a->b enters the disc around center, pulled
        back onto the level set along the local tangent of the disc."""
        da, db = a - center, b - center
        qa = float(da @ da) - self.excl ** 2
        dd = b - a
        A = float(dd @ dd)
        B = 2.0 * float(da @ dd)
        disc = B * B - 4.0 * A * qa
        if disc < 0.0 or A == 0.0:
            return None
        s = (-B + math.sqrt(disc)) / (2.0 * A)
        if not 0.0 <= s <= 1.0:
            s = (-B - math.sqrt(disc)) / (2.0 * A)
        if not 0.0 <= s <= 1.0:
            return None
        hit = a + s * dd
        radial = hit - center
        tang = np.array([-radial[1], radial[0]])
        nrm = float(np.hypot(*tang))
        if nrm == 0.0:
            return hit
        try:
            return _project_along(self.model, hit, tang / nrm, self.tol)
        except TraceStalled:
            return hit


def _singular_locations(model) -> List[SingularPoint]:
    try:
        return find_singular_points(model)
    except ValueError:  # custom model without seeds: trace blind
        return []


def trace_fermi_curve(
    model: DispersionModel,
    step: float = 0.01,
    exclusion_radius: float = 0.0,
    trace_tolerance: float = 1e-10,
    max_steps: int = 2_000_000,
    scan_grid: int = 48,
) -> List[CurveSample]:
    """All connected branches of {e = 0}, as ordered point chains.

    Branch seeds come from the saddle ray directions (the isotropic
    directions of the Hessian) and from a sign-change scan on a coarse
    grid; traces terminate at saddles, exclusion discs, the domain
    boundary, or on closing up.
    """
    if step <= 0.0:
        raise ValueError("step must be positive")
    if exclusion_radius < 0.0:
        raise ValueError("exclusion_radius must be nonnegative")
    singular = _singular_locations(model)
    sing_locs = [p.location for p in singular]
    m = _Marcher(model, step, exclusion_radius, trace_tolerance, max_steps, sing_locs)

    seeds: List[np.ndarray] = []
    r_seed = m.stop_r + step
    for p in singular:
        A = _isotropic_frame(p)
        for col in (0, 1):
            for sgn in (+1.0, -1.0):
                raw = p.location + sgn * r_seed * A[:, col]
                try:
                    seeds.append(_project(model, raw, trace_tolerance))
                except TraceStalled:
                    continue
    seeds.extend(_scan_seeds(model, scan_grid, trace_tolerance))

    branches: List[CurveSample] = []
    traced_pts: List[np.ndarray] = []

    def too_close(x) -> bool:
        for arr in traced_pts:
            d = arr - x[None, :]
            if model.periodic:
                d = _torus_delta(d)
            if float(np.min(np.hypot(d[:, 0], d[:, 1]))) < 0.75 * step:
                return True
        return False

    for seed in seeds:
        if any(
            _distance(seed, s, model.periodic) < m.stop_r for s in sing_locs
        ):
            continue
        if not _inside(model.domain, seed) and not model.periodic:
            continue
        if too_close(seed):
            continue
        t0 = _tangent(model, seed)
        fwd, closed = m.march(seed, t0)
        if closed:
            chain = fwd
        else:
            bwd, closed = m.march(seed, -t0)
            if closed:
                chain = bwd
            else:
                chain = list(reversed(bwd))[:-1] + fwd
        if len(chain) < 2:
            continue
        pts = np.array(chain)
        seg = np.hypot(*(np.diff(pts, axis=0).T))
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        branches.append(
            CurveSample(
                points=pts,
                cumulative_arclength=cum,
                branch_id=len(branches),
                closed=closed,
            )
        )
        traced_pts.append(pts)
    return branches


def _inside(box, x) -> bool:
    return all(box[i][0] - 1e-12 <= x[i] <= box[i][1] + 1e-12 for i in range(2))


def _scan_seeds(model, n, tol) -> List[np.ndarray]:
    (x0, x1), (y0, y1) = model.domain
    xs = np.linspace(x0, x1, n)
    ys = np.linspace(y0, y1, n)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    E = evaluate(model, np.stack([X, Y], axis=-1))
    seeds = []
    sign_flip_x = E[:-1, :] * E[1:, :] < 0.0
    sign_flip_y = E[:, :-1] * E[:, 1:] < 0.0
    for (i, j) in np.argwhere(sign_flip_x):
        a = np.array([xs[i], ys[j]])
        b = np.array([xs[i + 1], ys[j]])
        seeds.append(_bisect_edge(model, a, b))
    for (i, j) in np.argwhere(sign_flip_y):
        a = np.array([xs[i], ys[j]])
        b = np.array([xs[i], ys[j + 1]])
        seeds.append(_bisect_edge(model, a, b))
    out = []
    for s in seeds:
        try:
            out.append(_project(model, s, tol))
        except TraceStalled:
            continue
    return out


def _bisect_edge(model, a, b, iters=40):
    fa = float(evaluate(model, a))
    for _ in range(iters):
        mid = 0.5 * (a + b)
        fm = float(evaluate(model, mid))
        if fa * fm <= 0.0:
            b = mid
        else:
            a = mid
            fa = fm
    return 0.5 * (a + b)


# ---------------------------------------------------------------------------
# Overlap measurements
# ---------------------------------------------------------------------------


def _flagged_length(vals: np.ndarray, segs: np.ndarray, threshold: float) -> float:
    a, b = vals[:-1], vals[1:]
    fa = a <= threshold
    fb = b <= threshold
    frac = np.zeros_like(segs)
    frac[fa & fb] = 1.0
    out = fa & ~fb
    frac[out] = (threshold - a[out]) / (b[out] - a[out])
    into = ~fa & fb
    frac[into] = (threshold - b[into]) / (a[into] - b[into])
    return float(np.sum(frac * segs))


def overlap_length(
    model: DispersionModel,
    curve: CurveSample,
    p,
    sign: int = +1,
    threshold: float = 1e-3,
) -> float:
    """Arc length of {k on curve : |e(p + sign k)| <= threshold}."""
    if threshold <= 0.0:
        raise ValueError("threshold must be positive")
    if sign not in (+1, -1):
        raise ValueError("sign must be +1 or -1")
    p = np.asarray(p, dtype=float)
    vals = np.abs(evaluate(model, p[None, :] + sign * curve.points))
    return _flagged_length(vals, curve.segment_lengths(), threshold)


@dataclass(frozen=True)
class OverlapScalingReport:
    p_samples: np.ndarray  # (num_p, 2)
    j_values: Tuple[int, ...]  # descending (toward smaller thresholds)
    measured_lengths: np.ndarray  # (num_p, num_j), sign +
    measured_lengths_minus: np.ndarray  # (num_p, num_j), sign -
    fitted_exponent: Optional[float]
    fitted_exponent_minus: Optional[float]
    n0: Optional[int]
    bounds: Optional[np.ndarray]  # (num_j,), (M^j/delta)^(1/n0)
    violation_fraction: Optional[np.ndarray]  # per j, sign +
    violation_fraction_minus: Optional[np.ndarray]
    nested_p_indices: Tuple[int, ...]
    total_curve_length: float
    M: float
    delta: float
    step: float

    def rows(self, sign: int = +1):
        """(p_x, p_y, j, length, bound, violated) tuples for CSV export."""
        lengths = (
            self.measured_lengths if sign == +1 else self.measured_lengths_minus
        )
        for ip, p in enumerate(self.p_samples):
            for ij, j in enumerate(self.j_values):
                bound = float(self.bounds[ij]) if self.bounds is not None else math.nan
                ell = float(lengths[ip, ij])
                violated = bool(ell > bound) if self.bounds is not None else False
                yield (float(p[0]), float(p[1]), int(j), ell, bound, violated)


def _derive_n0(model: DispersionModel) -> Optional[int]:
    """Largest branch nonflatness order plus one, over all saddles."""
    try:
        saddles = find_singular_points(model)
    except ValueError:
        return None
    orders = []
    for p in saddles:
        nf = morse_normal_form(model, p)
        for nu in (nf.nu1, nf.nu2):
            if nu is None:
                return None  # exactly flat branch: nesting, no finite order
            orders.append(nu)
    if not orders:
        return None
    return max(orders) + 1


def _fit_envelope(lengths, j_sorted, M, num_drop, floor):
    """Least-squares slope of log(envelope length) against j log M,
    after dropping the worst num_drop samples per threshold."""
    env = []
    for ij in range(lengths.shape[1]):
        col = np.sort(lengths[:, ij])
        kept = col[: len(col) - num_drop] if num_drop > 0 else col
        env.append(max(float(kept[-1]), floor))
    env = np.asarray(env)
    if len(env) < 2:
        return None
    x = np.asarray(j_sorted, dtype=float) * math.log(M)
    y = np.log(env)
    slope = np.polyfit(x, y, 1)[0]
    return float(slope)


def overlap_scaling_experiment(
    model: DispersionModel,
    M: float,
    j_range: Sequence[int],
    num_p: int,
    delta: float,
    rng_seed: int,
    step: Optional[float] = None,
    exclusion_radius: float = 0.0,
    n0: Optional[int] = None,
    trace_step_cap: float = 0.01,
    p_override: Optional[np.ndarray] = None,
) -> OverlapScalingReport:
    """Sample translation momenta, measure overlap lengths at the
    thresholds M^j, and compare against (M^j/delta)^(1/n0).

    p_override replaces the uniform sample with explicit momenta (used
    to probe specific directions, e.g. nesting of a flat branch).
    """
    if M <= 1.0:
        raise ValueError("M must exceed 1")
    if not j_range or any(j >= 0 for j in j_range):
        raise ValueError("j_range must be nonempty negative integers")
    j_sorted = tuple(sorted(set(int(j) for j in j_range), reverse=True))
    resolution = M ** min(j_sorted)
    if step is None:
        step = min(trace_step_cap, resolution)
    if step > resolution * (1.0 + 1e-12):
        raise InsufficientResolution(
            f"trace step {step} exceeds smallest threshold {resolution}"
        )
    branches = trace_fermi_curve(model, step=step, exclusion_radius=exclusion_radius)
    if not branches:
        raise ValueError("no Fermi curve found for this model")
    total_len = sum(b.total_length for b in branches)

    if n0 is None:
        n0 = _derive_n0(model)

    if p_override is not None:
        p_samples = np.asarray(p_override, dtype=float).reshape(-1, 2)
        num_p = len(p_samples)
    else:
        rng = np.random.default_rng(rng_seed)
        (x0, x1), (y0, y1) = model.domain
        p_samples = np.column_stack(
            [rng.uniform(x0, x1, size=num_p), rng.uniform(y0, y1, size=num_p)]
        )

    thresholds = np.array([M ** j for j in j_sorted])
    lengths = {+1: np.zeros((num_p, len(j_sorted))), -1: np.zeros((num_p, len(j_sorted)))}
    seglists = [(b.points, b.segment_lengths()) for b in branches]
    for ip in range(num_p):
        p = p_samples[ip]
        for sign in (+1, -1):
            for pts, segs in seglists:
                vals = np.abs(evaluate(model, p[None, :] + sign * pts))
                for ij, T in enumerate(thresholds):
                    lengths[sign][ip, ij] += _flagged_length(vals, segs, T)

    bounds = None
    viol = {+1: None, -1: None}
    if n0 is not None:
        bounds = (thresholds / delta) ** (1.0 / n0)
        for sign in (+1, -1):
            viol[sign] = np.mean(lengths[sign] > bounds[None, :], axis=0)

    num_drop = math.ceil(delta ** 2 * num_p)
    fit = {
        sign: _fit_envelope(lengths[sign], j_sorted, M, num_drop, floor=step)
        for sign in (+1, -1)
    }

    # a p whose overlap refuses to decay marks a nested direction
    nested = tuple(
        int(ip)
        for ip in range(num_p)
        if min(lengths[+1][ip, -1], lengths[-1][ip, -1]) > 0.2 * total_len
    )

    return OverlapScalingReport(
        p_samples=p_samples,
        j_values=j_sorted,
        measured_lengths=lengths[+1],
        measured_lengths_minus=lengths[-1],
        fitted_exponent=fit[+1],
        fitted_exponent_minus=fit[-1],
        n0=n0,
        bounds=bounds,
        violation_fraction=viol[+1],
        violation_fraction_minus=viol[-1],
        nested_p_indices=nested,
        total_curve_length=total_len,
        M=float(M),
        delta=float(delta),
        step=float(step),
    )


# ---------------------------------------------------------------------------
# Interval lemma
# ---------------------------------------------------------------------------


class IntervalLemmaResult(NamedTuple):
    measured_volume: float
    bound: float
    holds: bool


def interval_lemma_check(
    f: Callable[[np.ndarray], np.ndarray],
    k: int,
    eta: float,
    eps: float,
    grid: int = 1_000_000,
    interval: Tuple[float, float] = (-1.0, 1.0),
) -> IntervalLemmaResult:
    """Measure |{x : |f(x)| <= eps}| and compare with 2^(k+1) (eps/eta)^(1/k).

    The derivative hypothesis |f^(k)| >= eta is verified first by k-fold
    finite differencing on a coarse stencil grid.
    """
    if k < 1:
        raise ValueError("k must be a positive integer")
    if eta <= 0.0 or eps <= 0.0:
        raise ValueError("eta and eps must be positive")
    a, b = interval
    if not b > a:
        raise ValueError("empty interval")

    n_check = 2001
    xc = np.linspace(a, b, n_check)
    h = xc[1] - xc[0]
    dk = np.diff(np.asarray(f(xc), dtype=float), k) / h ** k
    if float(np.min(np.abs(dk))) < eta * (1.0 - 1e-9):
        raise HypothesisViolated(
            f"|f^({k})| falls below eta={eta} on the check grid"
        )

    x = np.linspace(a, b, int(grid))
    inside = np.abs(np.asarray(f(x), dtype=float)) <= eps
    measured = float(np.mean(inside) * (b - a))
    bound = 2.0 ** (k + 1) * (eps / eta) ** (1.0 / k)
    return IntervalLemmaResult(measured, bound, measured <= bound)
