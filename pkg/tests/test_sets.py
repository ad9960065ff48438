import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tubempc.sets import (BallSet, BoxSet, EmptySet, ball_membership, box_membership, minkowski_add_box_ball,
                          pontryagin_diff_box_ball, scale_ball, tighten_input_box, translate_box)


def test_box_validation():
    with pytest.raises(ValueError):
        BoxSet([1.0, 0.0], [0.0, 1.0])
    with pytest.raises(ValueError):
        BoxSet([0.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        BallSet([0.0, 0.0], -1.0)


def test_pontryagin_examples():
    e3 = BoxSet([-5.9, -2.2], [4.1, 2.2])
    got = pontryagin_diff_box_ball(e3, 0.3)
    np.testing.assert_allclose(got.lower, [-5.6, -1.9], atol=1e-12)
    np.testing.assert_allclose(got.upper, [3.8, 1.9], atol=1e-12)
    u = BoxSet.symmetric(2.125, 2)
    assert pontryagin_diff_box_ball(u, 1.125) == BoxSet([-1.0, -1.0], [1.0, 1.0])
    assert pontryagin_diff_box_ball(e3, 0.0) == e3


def test_pontryagin_empty_is_flagged():
    out = pontryagin_diff_box_ball(BoxSet([-1.0, -5.0], [1.0, 5.0]), 2.0)
    assert isinstance(out, EmptySet)
    assert out.axes == (0,)
    assert not out
    with pytest.raises(ValueError):
        pontryagin_diff_box_ball(BoxSet([0.0], [1.0]), -0.1)


def test_minkowski_predicate():
    box = BoxSet([0.0, 0.0], [1.0, 1.0])
    assert minkowski_add_box_ball(box, 0.0)(np.array([1.0, 1.0]))
    pred = minkowski_add_box_ball(box, 0.5)
    assert pred(np.array([1.3, 0.5]))
    # distance from (1.4, 1.4) is sqrt(0.32) > 0.5
    assert not pred(np.array([1.4, 1.4]))


def test_minkowski_sandwich_on_tightened_box():
    e3 = BoxSet([-5.9, -2.2], [4.1, 2.2])
    tight = pontryagin_diff_box_ball(e3, 0.3)
    pred = minkowski_add_box_ball(tight, 0.3)
    rng = np.random.default_rng(1)
    inner = tight.sample(rng, 10_000)
    assert all(pred(p) for p in inner)
    outer = e3.sample(rng, 10_000)
    inside_sum = np.array([pred(p) for p in outer])
    # a point of the dilated set lies in the original box
    assert np.all(np.all((outer[inside_sum] >= e3.lower - 1e-9) & (outer[inside_sum] <= e3.upper + 1e-9), axis=1))


def test_scale_and_translate():
    b = scale_ball(-3.75, BallSet.origin(0.3, 2))
    assert b.radius == pytest.approx(1.125, abs=1e-15)
    np.testing.assert_array_equal(b.center, [0.0, 0.0])
    ball = BallSet([1.0, -2.0], 0.7)
    assert scale_ball(1.0, ball) == ball
    z = scale_ball(0.0, ball)
    assert z.radius == 0.0 and np.all(z.center == 0.0)
    D = BoxSet.symmetric(5.0, 2)
    assert translate_box(D, [-2.0, 0.0]) == BoxSet([-7.0, -5.0], [3.0, 5.0])
    assert translate_box(D, [0.0, 0.0]) == D
    e1 = translate_box(D, [-0.1206, -1.1155])
    np.testing.assert_allclose(e1.lower, [-5.1206, -6.1155], atol=1e-12)
    np.testing.assert_allclose(e1.upper, [4.8794, 3.8845], atol=1e-12)


def test_membership_boundaries():
    box = BoxSet.symmetric(1.0, 2)
    assert box_membership(box, [1.0, 1.0])
    assert not box_membership(box, [1.0 + 1e-6, 0.0])
    assert ball_membership(BallSet.origin(0.3, 2), [0.3, 0.0])
    with pytest.raises(ValueError):
        box_membership(box, [0.0])


def test_tighten_input_box():
    assert tighten_input_box(BoxSet.symmetric(2.125, 2), 3.75, 0.3) == BoxSet.symmetric(1.0, 2)
    assert isinstance(tighten_input_box(BoxSet.symmetric(2.125, 2), 3.75, 10.0), EmptySet)


def test_difference_then_sum_is_subset_of_box():
    """(B - ball) + ball lies inside B: 1e4 boxes, 1e3 point pairs each, exact arithmetic check."""
    rng = np.random.default_rng(2024)
    n_pairs, n_pts, dim = 10_000, 1_000, 2
    violations = 0
    for chunk in range(10):
        m = n_pairs // 10
        lo = rng.uniform(-10, 10, (m, dim))
        width = rng.uniform(0.01, 10, (m, dim))
        hi = lo + width
        r = rng.uniform(0, 0.5, m) * width.min(axis=1)
        plo, phi = lo + r[:, None], hi - r[:, None]
        # points of the eroded box, half of them on its corners
        t = rng.uniform(0, 1, (m, n_pts, dim))
        t[:, : n_pts // 2] = np.round(t[:, : n_pts // 2])
        p = plo[:, None, :] + t * (phi - plo)[:, None, :]
        d = rng.standard_normal((m, n_pts, dim))
        d /= np.linalg.norm(d, axis=2, keepdims=True)
        scale = np.where(rng.uniform(size=(m, n_pts, 1)) < 0.5, 1.0, rng.uniform(0, 1, (m, n_pts, 1)))
        b = d * scale * r[:, None, None]
        q = p + b
        inside = (q >= lo[:, None, :]) & (q <= hi[:, None, :])
        violations += int(np.sum(~np.all(inside, axis=2)))
    assert violations == 0


def test_quadratic_young_inequality():
    """x'My <= x'Mx / (4 rho) + rho y'My for SPD M, 1e4 random triples."""
    rng = np.random.default_rng(7)
    bad = 0
    for _ in range(10_000):
        n = rng.integers(1, 6)
        A = rng.standard_normal((n, n))
        M = A @ A.T + 1e-3 * np.eye(n)
        x = rng.standard_normal(n) * 10 ** rng.uniform(-3, 3)
        y = rng.standard_normal(n) * 10 ** rng.uniform(-3, 3)
        rho = 10 ** rng.uniform(-3, 3)
        lhs = x @ M @ y
        rhs = (x @ M @ x) / (4 * rho) + rho * (y @ M @ y)
        if lhs > rhs + 1e-12 * max(abs(lhs), abs(rhs), 1e-300):
            bad += 1
    assert bad == 0


boxes = st.lists(st.tuples(st.floats(-100, 100), st.floats(0.0, 50)), min_size=1, max_size=4)


@settings(max_examples=200, deadline=None)
@given(boxes, st.floats(0, 30))
def test_difference_is_exact_erosion(spec, r):
    lo = np.array([a for a, _ in spec])
    hi = lo + np.array([w for _, w in spec])
    box = BoxSet(lo, hi)
    out = pontryagin_diff_box_ball(box, r)
    if isinstance(out, EmptySet):
        assert np.any(hi - lo < 2 * r)
    else:
        np.testing.assert_array_equal(out.lower, lo + r)
        np.testing.assert_array_equal(out.upper, hi - r)
        assert pontryagin_diff_box_ball(box, 0.0) == box


@settings(max_examples=200, deadline=None)
@given(st.floats(-10, 10), st.floats(0, 10), st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_scale_ball_radius(s, r, c):
    b = scale_ball(s, BallSet(c, r))
    assert b.radius == abs(s) * r
    np.testing.assert_array_equal(b.center, s * np.asarray(c))
