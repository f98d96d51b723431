"""Curve tracing, overlap measurement, and the interval lemma."""

import math

import numpy as np
import pytest

from vanhove_lab.dispersion import DispersionModel, evaluate, gradient
from vanhove_lab.errors import HypothesisViolated, InsufficientResolution
from vanhove_lab.geometry import (
    interval_lemma_check,
    overlap_length,
    overlap_scaling_experiment,
    trace_fermi_curve,
)

TRACE_TOL = 1e-10


def _check_curve_invariants(model, branches, step):
    for b in branches:
        assert np.max(np.abs(evaluate(model, b.points))) < TRACE_TOL
        seg = b.segment_lengths()
        assert np.all(seg >= 0.25 * step - 1e-12)
        assert np.all(seg <= 4.0 * step + 1e-12)
        assert np.all(np.diff(b.cumulative_arclength) > 0.0)


def test_xy_trace_four_half_axes():
    m = DispersionModel.xy()
    branches = trace_fermi_curve(m, step=0.01, exclusion_radius=0.05)
    assert len(branches) == 4
    total = sum(b.total_length for b in branches)
    assert total == pytest.approx(4 * (1 - 0.05), rel=0.01)
    _check_curve_invariants(m, branches, 0.01)


def test_hubbard_half_filling_arcs_meet_saddles():
    m = DispersionModel.hubbard(0.3, 0.0)
    branches = trace_fermi_curve(m, step=0.01, exclusion_radius=0.0)
    _check_curve_invariants(m, branches, 0.01)
    saddles = [np.array([math.pi, 0.0]), np.array([0.0, math.pi])]

    def is_saddle_image(x):
        for s in saddles:
            d = (x - s + math.pi) % (2 * math.pi) - math.pi
            if np.hypot(*d) < 1e-9:
                return True
        return False

    assert len(branches) == 4
    for b in branches:
        assert is_saddle_image(b.points[0])
        assert is_saddle_image(b.points[-1])
    total = sum(b.total_length for b in branches)
    assert math.isfinite(total) and total > 10.0


def test_trace_determinism():
    m = DispersionModel.hubbard(0.3, 0.0)
    a = trace_fermi_curve(m, step=0.01)
    b = trace_fermi_curve(m, step=0.01)
    assert len(a) == len(b)
    for ba, bb in zip(a, b):
        assert np.array_equal(ba.points, bb.points)
        assert np.array_equal(ba.cumulative_arclength, bb.cumulative_arclength)


def test_hubbard_away_from_half_filling_single_closed_curve():
    m = DispersionModel.hubbard(0.3, -1.0)
    assert evaluate(m, np.array([math.pi, 0.0])) == pytest.approx(1.0)
    branches = trace_fermi_curve(m, step=0.01)
    assert len(branches) == 1
    assert branches[0].closed
    _check_curve_invariants(m, branches, 0.01)


@pytest.mark.parametrize("theta", [0.2, 0.5, 0.8])
def test_traced_points_have_nonvanishing_gradient(theta):
    m = DispersionModel.hubbard(theta, 0.0)
    branches = trace_fermi_curve(m, step=0.01)
    saddles = np.array([[math.pi, 0.0], [0.0, math.pi]])
    for b in branches:
        g = gradient(m, b.points)
        gn = np.hypot(g[:, 0], g[:, 1])
        d = b.points[:, None, :] - saddles[None, :, :]
        d = (d + math.pi) % (2 * math.pi) - math.pi
        dist = np.min(np.hypot(d[..., 0], d[..., 1]), axis=1)
        away = dist > 0.05
        assert np.all(gn[away] > 0.0)


def test_overlap_at_zero_momentum_is_full_length():
    m = DispersionModel.hubbard(0.3, -1.0)
    curve = trace_fermi_curve(m, step=0.01)[0]
    L = overlap_length(m, curve, np.zeros(2), +1, 1.0)
    assert L == curve.total_length


def test_overlap_flat_branch_fully_flagged():
    m = DispersionModel.xy()
    branches = trace_fermi_curve(m, step=0.01, exclusion_radius=0.05)
    plus_x = [
        b
        for b in branches
        if np.all(np.abs(b.points[:, 1]) < 1e-9) and np.all(b.points[:, 0] > 0)
    ]
    assert len(plus_x) == 1
    b = plus_x[0]
    L = overlap_length(m, b, np.array([0.5, 0.0]), +1, 1e-3)
    assert L == pytest.approx(b.total_length, rel=1e-12)


def test_overlap_linear_interpolation_exact():
    # along the +x half-axis, e((x,0) + (0,0.5)) = 0.5 x is linear in
    # arclength, so the crossing interpolation is exact
    m = DispersionModel.xy()
    branches = trace_fermi_curve(m, step=0.01, exclusion_radius=0.05)
    b = [
        c
        for c in branches
        if np.all(np.abs(c.points[:, 1]) < 1e-9) and np.all(c.points[:, 0] > 0)
    ][0]
    T = 0.1
    L = overlap_length(m, b, np.array([0.0, 0.5]), +1, T)
    x_lo = float(np.min(b.points[:, 0]))
    assert L == pytest.approx(T / 0.5 - x_lo, abs=1e-9)


def test_overlap_bound_on_momentum_ring():
    # random translations of magnitude 0.2 at threshold 2^-10: the
    # (M^j/delta)^(1/4) bound holds for >= 99% of momenta outside the
    # exceptional set, which consists of the tangency cones around the
    # four curve-arm directions at the saddles (translating the curve
    # along its own asymptote keeps it close to itself)
    from vanhove_lab.dispersion import _isotropic_frame, find_singular_points

    m = DispersionModel.hubbard(0.3, 0.0)
    step = 2.0 ** -10
    branches = trace_fermi_curve(m, step=step)
    arm_dirs = []
    for s in find_singular_points(m):
        A = _isotropic_frame(s)
        for c in (0, 1):
            arm_dirs.append(math.atan2(A[1, c], A[0, c]) % math.pi)

    def in_cone(angle, half_width=0.25):
        a = angle % math.pi
        return any(
            min(abs(a - d), math.pi - abs(a - d)) < half_width for d in arm_dirs
        )

    rng = np.random.default_rng(11)
    angles = rng.uniform(0.0, 2 * math.pi, size=200)
    ps = 0.2 * np.column_stack([np.cos(angles), np.sin(angles)])
    bound = (2.0 ** -10 / 0.1) ** 0.25
    outside = 0
    outside_ok = 0
    for alpha, p in zip(angles, ps):
        L = sum(
            overlap_length(m, b, p, +1, 2.0 ** -10) for b in branches
        )
        if L > bound:
            # every violator must sit in a tangency cone
            assert in_cone(alpha), (alpha, L)
        if not in_cone(alpha):
            outside += 1
            if L <= bound:
                outside_ok += 1
    assert outside >= 80  # enough draws land outside the cones
    assert outside_ok / outside >= 0.99


def test_scaling_experiment_report_shape_and_monotonicity():
    m = DispersionModel.hubbard(0.3, 0.0)
    rep = overlap_scaling_experiment(
        m, M=2.0, j_range=range(-8, -4), num_p=60, delta=0.1, rng_seed=1
    )
    assert rep.n0 == 4
    assert rep.j_values == (-5, -6, -7, -8)
    assert rep.measured_lengths.shape == (60, 4)
    assert np.all(rep.measured_lengths >= 0.0)
    # thresholds shrink along the j axis, so lengths cannot grow
    assert np.all(np.diff(rep.measured_lengths, axis=1) <= 1e-12)
    assert np.all(np.diff(rep.measured_lengths_minus, axis=1) <= 1e-12)
    assert rep.fitted_exponent is not None
    assert rep.fitted_exponent == pytest.approx(rep.fitted_exponent_minus, abs=1e-6)
    rows = list(rep.rows(+1))
    assert len(rows) == 60 * 4
    assert all(len(r) == 6 for r in rows)


def test_scaling_experiment_deterministic():
    m = DispersionModel.hubbard(0.3, 0.0)
    kw = dict(M=2.0, j_range=[-5, -6], num_p=20, delta=0.1, rng_seed=9)
    a = overlap_scaling_experiment(m, **kw)
    b = overlap_scaling_experiment(m, **kw)
    assert np.array_equal(a.p_samples, b.p_samples)
    assert np.array_equal(a.measured_lengths, b.measured_lengths)
    assert a.fitted_exponent == b.fitted_exponent


def test_scaling_experiment_resolution_guard():
    m = DispersionModel.hubbard(0.3, 0.0)
    with pytest.raises(InsufficientResolution):
        overlap_scaling_experiment(
            m, M=2.0, j_range=[-8], num_p=5, delta=0.1, rng_seed=0, step=0.01
        )


def test_scaling_experiment_single_threshold_no_fit():
    m = DispersionModel.hubbard(0.3, 0.0)
    rep = overlap_scaling_experiment(
        m, M=2.0, j_range=[-6], num_p=10, delta=0.1, rng_seed=3
    )
    assert rep.fitted_exponent is None
    assert rep.measured_lengths.shape == (10, 1)


def test_scaling_experiment_flags_nested_direction():
    # on the xy model a translation along a flat branch never decays
    m = DispersionModel.xy()
    rep = overlap_scaling_experiment(
        m,
        M=2.0,
        j_range=range(-8, -4),
        num_p=2,
        delta=0.1,
        rng_seed=0,
        exclusion_radius=0.05,
        n0=4,
        p_override=np.array([[0.5, 0.0], [0.3, 0.4]]),
    )
    assert 0 in rep.nested_p_indices
    assert 1 not in rep.nested_p_indices
    # the nested direction violates the bound at the deepest threshold
    assert rep.measured_lengths[0, -1] > rep.bounds[-1]


def test_interval_lemma_linear_exact():
    res = interval_lemma_check(lambda x: x, k=1, eta=1.0, eps=0.1)
    assert res.measured_volume == pytest.approx(0.2, abs=1e-5)
    assert res.bound == pytest.approx(0.4)
    assert res.holds


def test_interval_lemma_quadratic_exact():
    res = interval_lemma_check(lambda x: x ** 2, k=2, eta=2.0, eps=0.01)
    assert res.measured_volume == pytest.approx(0.2, abs=1e-5)
    assert res.bound == pytest.approx(8.0 * math.sqrt(0.005))
    assert res.holds


def test_interval_lemma_random_cubics():
    rng = np.random.default_rng(5)
    for _ in range(100):
        a3 = rng.choice([-1.0, 1.0]) * rng.uniform(0.2, 2.0)
        a2, a1, a0 = rng.uniform(-1.0, 1.0, size=3)
        eta = 6.0 * abs(a3) * 0.999
        eps = rng.uniform(1e-4, 0.05)
        res = interval_lemma_check(
            lambda x: ((a3 * x + a2) * x + a1) * x + a0,
            k=3,
            eta=eta,
            eps=eps,
            grid=100_000,
        )
        assert res.holds


def test_interval_lemma_hypothesis_violated():
    with pytest.raises(HypothesisViolated):
        interval_lemma_check(lambda x: x ** 3, k=2, eta=0.1, eps=0.01)


def test_interval_lemma_validation():
    with pytest.raises(ValueError):
        interval_lemma_check(lambda x: x, k=0, eta=1.0, eps=0.1)
    with pytest.raises(ValueError):
        interval_lemma_check(lambda x: x, k=1, eta=-1.0, eps=0.1)
