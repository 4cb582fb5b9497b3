import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kwidth.geometry import ConstraintSet, quad_max_exact
from kwidth.widths import (DegenerateCut, EllipsoidState, SymMatrixPoint, WidthProfile, approx_projection,
                           ellipsoid_step, exact_profile_from_axes, feasibility_cut, first_second_dimensions,
                           iteration_budget, log_volume_ratio, optimal_dimension, smat, solve_width_sdp, svec,
                           svec_dim, volume_ratio, water_filling, width_profile)


def random_sym(rng, d):
    A = rng.standard_normal((d, d))
    return 0.5 * (A + A.T)


@pytest.fixture(scope="module")
def ball4():
    return width_profile(ConstraintSet.ball(4))


@pytest.fixture(scope="module")
def ell321():
    return width_profile(ConstraintSet.ellipsoid([3.0, 2.0, 1.0]))


# --- svec -------------------------------------------------------------------

def test_svec_identity():
    assert sorted(svec(np.eye(2))) == [0.0, 1.0, 1.0]


def test_svec_all_ones_norm():
    M = np.ones((3, 3))
    assert np.sum(M * M) == pytest.approx(9.0)
    assert svec(M) @ svec(M) == pytest.approx(9.0)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), d=st.integers(1, 7))
def test_svec_isometry(seed, d):
    rng = np.random.default_rng(seed)
    A, B = random_sym(rng, d), random_sym(rng, d)
    assert len(svec(A)) == svec_dim(d)
    assert np.max(np.abs(smat(svec(A)) - A)) <= 1e-14
    assert svec(A) @ svec(B) == pytest.approx(np.sum(A * B), rel=1e-12, abs=1e-12)


def test_svec_dimension_mismatch():
    with pytest.raises(ValueError):
        smat(np.ones(4))
    with pytest.raises(ValueError):
        svec(np.ones((2, 3)))


# --- ellipsoid step -----------------------------------------------------------

def test_step_two_dimensional_example():
    state = EllipsoidState(np.zeros(2), np.eye(2))
    new = ellipsoid_step(state, np.array([1.0, 0.0]))
    assert np.allclose(new.center, [-1 / 3, 0.0])
    assert np.allclose(new.shape, (4 / 3) * np.diag([1 - 2 / 3, 1.0]))


def test_step_keeps_equality():
    rng = np.random.default_rng(0)
    A = np.array([[1.0, 1.0, 0.0]])
    state = EllipsoidState(np.array([0.3, 0.7, 0.0]), np.eye(3))
    for _ in range(50):
        state = ellipsoid_step(state, rng.standard_normal(3), A)
        assert abs(float(A[0] @ state.center) - 1.0) <= 1e-12


def test_step_degenerate_cut():
    A = np.array([[1.0, 1.0, 0.0]])
    state = EllipsoidState(np.zeros(3), np.eye(3))
    with pytest.raises(DegenerateCut):
        ellipsoid_step(state, np.array([1.0, 1.0, 0.0]), A)


def test_volume_ratio_d5():
    assert volume_ratio(5) == pytest.approx(3125 / 3456, rel=1e-14)


@pytest.mark.parametrize("n", [3, 6, 10])
def test_volume_decay_exact(n):
    rng = np.random.default_rng(n)
    state = EllipsoidState(np.zeros(n), np.eye(n))
    ld = np.linalg.slogdet(state.shape)[1]
    for _ in range(200):
        state = ellipsoid_step(state, rng.standard_normal(n))
        new = np.linalg.slogdet(state.shape)[1]
        assert 0.5 * (new - ld) == pytest.approx(log_volume_ratio(n), abs=1e-9)
        ld = new
        state.shape /= np.exp(ld / n)  # keep the scale bounded
        ld = np.linalg.slogdet(state.shape)[1]


def test_volume_decay_on_slice():
    d = 3
    m = svec_dim(d)
    A = svec(np.eye(d))
    U = (A / np.linalg.norm(A))[:, None]
    Q = np.linalg.svd(np.eye(m) - U @ U.T)[0][:, : m - 1]
    rng = np.random.default_rng(1)
    state = EllipsoidState(svec(np.eye(d) / 2), np.eye(m))
    prev = np.linalg.slogdet(Q.T @ state.shape @ Q)[1]
    for _ in range(100):
        state = ellipsoid_step(state, rng.standard_normal(m), A, basis=U)
        cur = np.linalg.slogdet(Q.T @ state.shape @ Q)[1]
        assert 0.5 * (cur - prev) <= log_volume_ratio(m - 1) + 1e-6
        prev = cur


# --- feasibility cut --------------------------------------------------------

def test_feasibility_cut_examples():
    assert feasibility_cut(SymMatrixPoint(np.eye(2), 2.0)) is None
    idx, cut = feasibility_cut(SymMatrixPoint(np.diag([2.0, 0.0]), 2.0))
    assert np.allclose(cut, np.diag([1.0, 0.0]))
    idx, cut = feasibility_cut(SymMatrixPoint(np.diag([-0.5, 1.0]), 0.5))
    assert np.allclose(cut, -np.diag([1.0, 0.0]))


def test_feasibility_cut_nonfinite():
    with pytest.raises(RuntimeError):
        feasibility_cut(SymMatrixPoint(np.array([[np.inf, 0], [0, 1.0]]), 1.0))


def test_iteration_budget_grows_with_dimension():
    assert iteration_budget(14, 1e-3, 8) == math.ceil(8 * 14 ** 2 * math.log(1e3))
    assert iteration_budget(5, 1e-3, 8) < iteration_budget(9, 1e-3, 8)


# --- SDP solver -------------------------------------------------------------

def test_ball_k1(ball4):
    assert ball4.widths[1] == pytest.approx(math.sqrt(0.75), rel=0.02)


def test_k_equals_d_shortcut():
    X, h = solve_width_sdp(ConstraintSet.ellipsoid([2.0, 1.0, 0.5]), 3)
    assert h == 0.0 and not np.any(X.matrix)


def test_ellipsoid_k1_water_filling_value():
    X, h = solve_width_sdp(ConstraintSet.ellipsoid([3.0, 2.0, 1.0]), 1)
    assert h == pytest.approx(36 / 13, rel=0.02)
    assert X.is_feasible()


def test_water_filling_k1():
    x, t = water_filling([3.0, 2.0, 1.0], 1)
    assert t == pytest.approx(36 / 13)
    assert x.sum() == pytest.approx(2.0)


@settings(max_examples=60, deadline=None)
@given(axes=st.lists(st.floats(0.1, 10.0), min_size=1, max_size=8), data=st.data())
def test_water_filling_is_feasible_and_balanced(axes, data):
    d = len(axes)
    k = data.draw(st.integers(0, d))
    x, t = water_filling(axes, k)
    a2 = np.asarray(axes) ** 2
    assert x.sum() == pytest.approx(d - k, abs=1e-9)
    assert np.all(x >= -1e-12) and np.all(x <= 1 + 1e-12)
    assert np.max(a2 * x) == pytest.approx(t, rel=1e-9, abs=1e-12)
    # relaxed width never exceeds the exact width (the (k+1)-th largest axis squared)
    exact = 0.0 if k == d else np.sort(a2)[::-1][k]
    assert t <= exact * (1 + 1e-12)


def test_ball_profile(ball4):
    expected = [1.0, 0.866, 0.707, 0.5, 0.0]
    assert ball4.widths[-1] == 0.0
    for w, e in zip(ball4.widths, expected):
        assert w == pytest.approx(e, rel=0.02, abs=1e-9)


def test_ellipsoid_profile_sandwich(ell321):
    assert ell321.widths[3] == 0.0
    exact = [3.0, 2.0, 1.0, 0.0]
    for k in range(4):
        assert ell321.widths[k] <= exact[k] + 1e-6
        opt = water_filling([3.0, 2.0, 1.0], k)[1] if k else 9.0
        assert opt - 1e-9 <= ell321.values[k] <= opt + 1.1e-3


def test_sandwich_on_random_points(ell321):
    rng = np.random.default_rng(0)
    a = np.array([3.0, 2.0, 1.0])
    u = rng.standard_normal((1000, 3))
    theta = a * u / np.linalg.norm(u, axis=1, keepdims=True) * rng.uniform(0, 1, (1000, 1)) ** (1 / 3)
    for k in range(4):
        X = ell321.minimizers[k]
        vals = np.einsum("ij,jk,ik->i", theta, X, theta)
        assert vals.max() <= ell321.values[k] * (1 + 1e-6) + 1e-9


def test_profile_invariants(ell321):
    assert np.all(np.diff(ell321.widths) <= 0)
    assert np.allclose(ell321.widths, np.sqrt(ell321.values))
    raw = ell321.raw_widths
    assert np.all(raw[1:] <= raw[:-1] + 0.02 * raw[0])


def test_full_and_diagonal_agree():
    K = ConstraintSet.ellipsoid([2.0, 1.5, 1.0, 0.5])
    for k in (1, 2):
        _, hf = solve_width_sdp(K, k, mode="full")
        _, hd = solve_width_sdp(K, k, mode="diagonal")
        assert hf == pytest.approx(hd, abs=2e-3)


def test_solver_is_deterministic():
    K = ConstraintSet.ellipsoid([2.0, 1.0, 0.7])
    X1, h1 = solve_width_sdp(K, 1)
    X2, h2 = solve_width_sdp(K, 1)
    assert h1 == h2 and np.array_equal(X1.matrix, X2.matrix)


def test_solver_box_kappa():
    prof = width_profile(ConstraintSet.hyperrectangle([1.0, 1.0, 1.0]))
    # relaxed width of the cube: min over X of max over vertices; X = (1-k/d) I gives d - k
    for k in range(4):
        assert prof.values[k] <= (3 - k) * 1.01 + 1e-6
    assert prof.kappa > 1


def test_solver_rejects_bad_k():
    with pytest.raises(ValueError):
        solve_width_sdp(ConstraintSet.ball(3), 4)


def test_profile_roundtrip(tmp_path, ell321):
    path = tmp_path / "p.json"
    ell321.save(path)
    back = WidthProfile.load(path)
    assert np.array_equal(back.widths, ell321.widths)
    assert all(np.array_equal(a, b) for a, b in zip(back.minimizers, ell321.minimizers))


# --- optimal dimensions -----------------------------------------------------

def test_optimal_dimension_ball(ball4):
    assert optimal_dimension(ball4, lambda j: j ** 0.25 / 10) == 4


def test_optimal_dimension_infinite_threshold(ball4):
    assert optimal_dimension(ball4, lambda j: math.inf) == 0


def test_optimal_dimension_constant_threshold(ell321):
    assert optimal_dimension(ell321, lambda j: 2.5) == 1


def test_second_dimension_without_contamination(ball4):
    assert first_second_dimensions(ball4, 100, 1.0, 0.0)[1] == 4


def test_first_second_by_definition(ball4):
    k1, k2 = first_second_dimensions(ball4, 100, 1.0, 0.01)
    f1 = [j ** 0.25 / 10 for j in range(1, 5)]
    f2 = [j ** 0.25 * 0.1 / 100 ** 0.25 for j in range(1, 5)]
    assert k1 == max(j for j in range(1, 5) if ball4.widths[j - 1] > f1[j - 1])
    assert k2 == max(j for j in range(1, 5) if ball4.widths[j - 1] > f2[j - 1])


def test_first_second_input_validation(ball4):
    with pytest.raises(ValueError):
        first_second_dimensions(ball4, 100, 1.0, 0.5)


@settings(max_examples=30, deadline=None)
@given(axes=st.lists(st.floats(0.05, 5.0), min_size=2, max_size=10),
       N=st.integers(5, 500), eps=st.floats(0.0, 0.3))
def test_dimension_bound_with_exact_oracle(axes, N, eps):
    prof = exact_profile_from_axes(axes)
    exact = np.append(np.sort(axes)[::-1], 0.0)
    exact_prof = WidthProfile(len(axes), exact, exact ** 2, [], 1.0)
    for approx, true in zip(first_second_dimensions(prof, N, 1.0, eps),
                            first_second_dimensions(exact_prof, N, 1.0, eps)):
        kappa = prof.kappa
        assert approx <= min(kappa ** 2 * (true + 1) - 1, len(axes))


# --- projections ------------------------------------------------------------

def test_projection_examples():
    assert np.allclose(approx_projection(np.zeros((3, 3))).matrix, np.eye(3))
    assert np.allclose(approx_projection(np.diag([1.0, 0.0])).matrix, np.diag([0.0, 1.0]))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), d=st.integers(2, 6))
def test_projection_reconstruction(seed, d):
    rng = np.random.default_rng(seed)
    Q = np.linalg.qr(rng.standard_normal((d, d)))[0]
    X = (Q * rng.uniform(0, 1, d)) @ Q.T
    A = approx_projection(X).matrix
    ev = np.linalg.eigvalsh(A)
    assert ev.min() >= -1e-12 and ev.max() <= 1 + 1e-9
    assert np.max(np.abs(A @ A + X - np.eye(d))) <= 1e-8


def test_exact_profile_matches_eigen_oracle():
    axes = [3.0, 2.0, 1.0]
    prof = exact_profile_from_axes(axes)
    K = ConstraintSet.ellipsoid(axes)
    for k in range(4):
        assert quad_max_exact(K, prof.minimizers[k]).value == pytest.approx(prof.values[k])
