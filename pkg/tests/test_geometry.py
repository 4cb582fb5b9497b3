import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kwidth.geometry import (FEAS_TOL, ConstraintSet, GeometryError, contains, gauge_eval, quad_max_bruteforce,
                             quad_max_exact, quad_max_oracle, type2_constant_estimate)


def random_sym(rng, d):
    A = rng.standard_normal((d, d))
    return 0.5 * (A + A.T)


def zoo(d):
    rng = np.random.default_rng(d)
    return [
        ConstraintSet.ball(d, 1.3),
        ConstraintSet.ellipsoid(rng.uniform(0.3, 2.0, d)),
        ConstraintSet.hyperrectangle(rng.uniform(0.3, 2.0, d)),
        ConstraintSet.lp_ball(d, 1.0),
        ConstraintSet.lp_ball(d, 4.0),
    ]


# --- gauge ------------------------------------------------------------------

def test_gauge_zero_vector():
    assert gauge_eval(ConstraintSet.ball(3), np.zeros(3)) == 0.0


def test_gauge_scales_ball():
    assert gauge_eval(ConstraintSet.ball(3), [2.0, 0, 0]) == pytest.approx(2.0)


def test_gauge_ellipsoid_boundary():
    assert gauge_eval(ConstraintSet.ellipsoid([2.0, 1.0]), [2.0, 0.0]) == pytest.approx(1.0)


def test_gauge_dimension_mismatch():
    with pytest.raises(GeometryError):
        gauge_eval(ConstraintSet.ball(3), np.ones(2))


def test_gauge_defined_bisection():
    K = ConstraintSet.gauge_defined(2, membership=lambda t: np.abs(t).max() <= 1, r_in=0.5, r_out=2.0)
    assert gauge_eval(K, [0.5, -0.25]) == pytest.approx(0.5, abs=1e-12)


def test_gauge_defined_without_scale_returns_inf():
    # membership never holds off the origin, so no dilation contains theta
    K = ConstraintSet.gauge_defined(2, membership=lambda t: not np.any(t), r_in=0.5, r_out=2.0)
    assert gauge_eval(K, [0.0, 1.0]) == math.inf


def test_contains_examples():
    assert contains(ConstraintSet.ball(3), np.zeros(3), 0.0)
    assert contains(ConstraintSet.ball(3), [1.0, 0, 0], 0.0)
    assert not contains(ConstraintSet.ellipsoid([2.0, 1.0]), [0.0, 1.5], 0.0)


def test_contains_rejects_negative_tol():
    with pytest.raises(GeometryError):
        contains(ConstraintSet.ball(2), np.zeros(2), -1.0)


@pytest.mark.parametrize("d", [2, 5])
@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), t=st.sampled_from([0.0, 0.5, 2.0]))
def test_gauge_homogeneity(d, seed, t):
    theta = np.random.default_rng(seed).standard_normal(d)
    for K in zoo(d):
        assert gauge_eval(K, t * theta) == pytest.approx(t * gauge_eval(K, theta), rel=1e-10, abs=1e-12)


@pytest.mark.parametrize("d", [3, 8])
def test_gauge_sign_invariance(d):
    theta = np.random.default_rng(1).standard_normal(d)
    for K in zoo(d)[:3]:
        base = gauge_eval(K, theta)
        for signs in itertools.product((-1.0, 1.0), repeat=d):
            assert gauge_eval(K, np.array(signs) * theta) == base


def test_radii_sandwich_by_sampling():
    rng = np.random.default_rng(0)
    for K in zoo(4):
        u = rng.standard_normal((500, 4))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        g = np.array([gauge_eval(K, x) for x in u])
        # r B <= K <= R B  <=>  1/R <= rho(u) <= 1/r on the sphere
        assert np.all(g <= 1 / K.r_in + 1e-9)
        assert np.all(g >= 1 / K.r_out - 1e-9)


def test_constraint_roundtrip():
    for K in zoo(3):
        spec = K.to_dict()
        K2 = ConstraintSet.from_dict(spec)
        theta = np.array([0.3, -0.7, 0.2])
        assert gauge_eval(K2, theta) == gauge_eval(K, theta)


def test_constraint_from_dict_rejects_unknown_key():
    with pytest.raises(GeometryError):
        ConstraintSet.from_dict({"kind": "ball", "dim": 3, "colour": "red"})


@pytest.mark.parametrize("axes", [[1.0, 0.0], [1.0, -2.0]])
def test_constraint_rejects_nonpositive_axes(axes):
    with pytest.raises(GeometryError):
        ConstraintSet.ellipsoid(axes)


# --- oracles ----------------------------------------------------------------

def test_exact_ball_identity():
    assert quad_max_exact(ConstraintSet.ball(3), np.eye(3)).value == pytest.approx(1.0)


def test_exact_ellipsoid_examples():
    res = quad_max_exact(ConstraintSet.ellipsoid([3.0, 1.0]), np.eye(2))
    assert res.value == pytest.approx(9.0)
    assert np.allclose(np.abs(res.maximizer), [3.0, 0.0])
    assert res.kappa == 1.0
    res = quad_max_exact(ConstraintSet.ellipsoid([3.0, 2.0, 1.0]), np.diag([0.0, 1.0, 0.0]))
    assert res.value == pytest.approx(4.0)


def test_exact_rejects_box():
    with pytest.raises(GeometryError):
        quad_max_exact(ConstraintSet.hyperrectangle([1.0, 1.0]), np.eye(2))


def test_oracle_examples():
    res = quad_max_oracle(ConstraintSet.ellipsoid([3.0, 2.0, 1.0]), np.eye(3))
    assert res.value == pytest.approx(9.0) and res.kappa == 1.0
    assert quad_max_oracle(ConstraintSet.hyperrectangle([1.0] * 3), np.eye(3)).value == pytest.approx(3.0)


def test_oracle_rank_one_ball():
    v = np.array([1.0, -2.0, 0.5])
    res = quad_max_oracle(ConstraintSet.ball(3), np.outer(v, v))
    assert res.value == pytest.approx(v @ v)
    assert abs(res.maximizer @ v) == pytest.approx(np.linalg.norm(v))


def test_oracle_zero_matrix():
    for K in zoo(3):
        res = quad_max_oracle(K, np.zeros((3, 3)))
        assert res.value == 0.0 and res.kappa == 1.0 and not np.any(res.maximizer)


def test_oracle_input_validation():
    K = ConstraintSet.ball(2)
    with pytest.raises(GeometryError):
        quad_max_oracle(K, np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(GeometryError):
        quad_max_oracle(K, np.array([[np.nan, 0.0], [0.0, 0.0]]))


def test_bruteforce_examples():
    assert quad_max_bruteforce(ConstraintSet.ball(2), np.diag([1.0, 0.0])) == pytest.approx(1.0, abs=1e-3)
    assert quad_max_bruteforce(ConstraintSet.hyperrectangle([1.0, 1.0]), np.eye(2)) == pytest.approx(2.0)
    for K in zoo(3):
        assert quad_max_bruteforce(K, np.zeros((3, 3))) == 0.0


def test_bruteforce_deterministic():
    K = ConstraintSet.lp_ball(3, 1.5)
    X = random_sym(np.random.default_rng(3), 3)
    assert quad_max_bruteforce(K, X, 2000, 5) == quad_max_bruteforce(K, X, 2000, 5)


def test_ellipsoid_dispatch_is_exact():
    rng = np.random.default_rng(7)
    K = ConstraintSet.ellipsoid([2.0, 1.0, 0.5, 0.25])
    for _ in range(20):
        X = random_sym(rng, 4)
        a, b = quad_max_oracle(K, X), quad_max_exact(K, X)
        assert a.value == b.value
        assert np.array_equal(a.maximizer, b.maximizer)


@pytest.mark.parametrize("d", [2, 4, 6])
def test_oracle_soundness(d):
    rng = np.random.default_rng(100 + d)
    for K in zoo(d):
        for _ in range(100 if K.kind != "gauge" else 15):
            X = random_sym(rng, d)
            res = quad_max_oracle(K, X)
            brute = quad_max_bruteforce(K, X, 2000, 0)
            tol = 1e-6 * max(1.0, abs(brute))
            assert res.value >= brute / res.kappa - tol
            # a feasible maximizer attaining the value bounds it by the true maximum;
            # sampling only bounds that maximum from below
            assert contains(K, res.maximizer, FEAS_TOL)
            assert res.value == pytest.approx(float(res.maximizer @ X @ res.maximizer), abs=1e-9)


# --- type-2 constants -------------------------------------------------------

def test_type2_examples():
    assert type2_constant_estimate(ConstraintSet.lp_ball(16, 1.0)) == pytest.approx(4.0)
    assert type2_constant_estimate(ConstraintSet.lp_ball(9, 2.0)) == pytest.approx(1.0)
    assert type2_constant_estimate(ConstraintSet.ball(9)) == pytest.approx(1.0)
    d = 55
    assert type2_constant_estimate(ConstraintSet.ellipsoid(np.ones(d))) == pytest.approx(math.sqrt(math.log(d)))
    assert math.sqrt(math.log(d)) == pytest.approx(2.0, rel=0.01)
