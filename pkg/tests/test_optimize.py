import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from outagecast.optimize import (
    OptimizationError,
    OptimOptions,
    bfgs,
    lbfgsb,
    nelder_mead,
    numerical_gradient,
    safe_eval,
    sequential_optimize,
)


def rosen(x):
    return 100.0 * (x[1] - x[0] ** 2) ** 2 + (1 - x[0]) ** 2


def rosen_grad(x):
    return np.array([-400 * x[0] * (x[1] - x[0] ** 2) - 2 * (1 - x[0]), 200 * (x[1] - x[0] ** 2)])


def quadratic(A, b):
    return (lambda x: 0.5 * x @ A @ x - b @ x), (lambda x: A @ x - b)


def random_spd(n, rng, cond=10.0):
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    return Q @ np.diag(np.geomspace(1, cond, n)) @ Q.T


def active_set_oracle(A, b, lo, hi):
    """Minimize 0.5 x'Ax - b'x on a box by enumerating every active set."""
    n = len(b)
    best, best_f = None, np.inf
    f, g = quadratic(A, b)
    for state in itertools.product((0, 1, 2), repeat=n):  # 0 free, 1 at lo, 2 at hi
        state = np.array(state)
        x = np.where(state == 1, lo, np.where(state == 2, hi, 0.0))
        free = state == 0
        if free.any():
            rhs = b[free] - A[np.ix_(free, ~free)] @ x[~free]
            x[free] = np.linalg.solve(A[np.ix_(free, free)], rhs)
            if np.any(x[free] < lo[free] - 1e-12) or np.any(x[free] > hi[free] + 1e-12):
                continue
        fx = f(x)
        if fx < best_f:
            best, best_f = x, fx
    return best, best_f


# -- nelder-mead ------------------------------------------------------------

def test_nm_parabola():
    out = nelder_mead(lambda x: (x[0] - 3) ** 2, [0.0], OptimOptions(max_iter=500))
    assert out.converged and abs(out.x_star[0] - 3) <= 1e-4 and out.method == "nelder_mead"


def test_nm_rosenbrock():
    out = nelder_mead(rosen, [-1.2, 1.0], OptimOptions(max_iter=2000, tol=1e-14))
    np.testing.assert_allclose(out.x_star, [1, 1], atol=1e-3)


def test_nm_retreats_from_nonfinite():
    def f(x):
        return math.nan if x[0] > 0.5 else (x[0] - 0.4) ** 2 + x[1] ** 2

    out = nelder_mead(f, [0.0, 0.3], OptimOptions(max_iter=400, tol=1e-12))
    assert math.isfinite(out.f_star) and out.f_star == safe_eval(f, out.x_star)
    assert out.x_star[0] <= 0.5


def test_nm_nonfinite_start():
    with pytest.raises(OptimizationError):
        nelder_mead(lambda x: math.inf, [0.0])


# -- bfgs ---------------------------------------------------------------------

def test_bfgs_quadratic(rng):
    c = rng.normal(size=5)
    out = bfgs(lambda x: float(np.sum((x - c) ** 2)), rng.normal(size=5), OptimOptions(tol=1e-9))
    assert out.converged
    np.testing.assert_allclose(out.x_star, c, atol=1e-6)


def test_finite_difference_example():
    g = numerical_gradient(lambda x: x[0] ** 2 + 3 * x[1], np.array([1.0, 1.0]))
    assert np.max(np.abs(g - [2, 3])) < 1e-6


def test_bfgs_rosenbrock():
    out = bfgs(rosen, [-1.2, 1.0], OptimOptions(max_iter=500, tol=1e-8))
    assert out.f_star < 1e-8 and out.iterations <= 500


def one_sided(x):
    """|x - 3| on x <= 3, undefined beyond: the minimum sits on the edge of a
    non-finite region, so the gradient is -1 or non-finite everywhere."""
    return 3.0 - x[0] if x[0] <= 3.0 else math.nan


def test_bfgs_line_search_failure_is_reported():
    out = bfgs(one_sided, [0.0])
    assert not out.converged and math.isfinite(out.f_star)
    assert out.f_star <= 3.0 and out.x_star[0] <= 3.0


# -- l-bfgs-b -------------------------------------------------------------------

def test_lbfgsb_active_bound():
    out = lbfgsb(lambda x: (x[0] - 5) ** 2, [1.0], [(0, 3)])
    assert out.converged and out.x_star[0] == 3.0


def test_lbfgsb_unbounded_matches_bfgs(rng):
    A, b = random_spd(6, rng), rng.normal(size=6)
    f, _ = quadratic(A, b)
    opts = OptimOptions(tol=1e-10, max_iter=500)
    x0 = np.zeros(6)
    a, c = lbfgsb(f, x0, None, opts), bfgs(f, x0, opts)
    np.testing.assert_allclose(a.x_star, c.x_star, atol=1e-6)
    np.testing.assert_allclose(a.x_star, np.linalg.solve(A, b), atol=1e-6)


def test_lbfgsb_active_set_oracle_10d():
    rng = np.random.default_rng(2024)
    n = 10
    M = rng.normal(size=(n, n))
    A = M @ M.T + 0.5 * np.eye(n)
    b = rng.normal(size=n) * 6
    lo, hi = -np.ones(n), np.ones(n)
    x_ref, f_ref = active_set_oracle(A, b, lo, hi)
    assert np.sum((x_ref <= -1) | (x_ref >= 1)) >= 2  # the bounds actually bind
    f, _ = quadratic(A, b)
    out = lbfgsb(f, np.zeros(n), list(zip(lo, hi)), OptimOptions(tol=1e-9, max_iter=1000))
    assert np.max(np.abs(out.x_star - x_ref)) <= 1e-5
    assert np.all(out.x_star >= lo) and np.all(out.x_star <= hi)


def test_lbfgsb_feasibility_checks():
    with pytest.raises(ValueError):
        lbfgsb(lambda x: x[0] ** 2, [5.0], [(0, 1)])
    with pytest.raises(ValueError):
        lbfgsb(lambda x: x[0] ** 2, [0.5, 0.5], [(0, 1)])


def test_lbfgsb_iterates_stay_feasible():
    seen = []

    def f(x):
        seen.append(x.copy())
        return float(np.sum((x - np.array([2.0, -2.0, 0.3])) ** 2))

    lbfgsb(f, [0.0, 0.0, 0.0], [(-1, 1)] * 3)
    # gradient probes step outside by at most the FD step; accepted iterates never do
    assert all(np.all(np.abs(x) <= 1 + 1e-5) for x in seen)


# -- shared properties ------------------------------------------------------------

@pytest.mark.parametrize("method", ["nelder_mead", "bfgs", "lbfgsb"])
@pytest.mark.parametrize("n", [1, 2, 5, 10])
def test_convex_quadratics_reach_minimum(method, n):
    rng = np.random.default_rng(n)
    A, b = random_spd(n, rng, cond=5), rng.normal(size=n)
    f, _ = quadratic(A, b)
    f_min = f(np.linalg.solve(A, b))
    opts = OptimOptions(tol=1e-12, max_iter=20000 if method == "nelder_mead" else 500)
    x0 = rng.normal(size=n)
    out = {"nelder_mead": lambda: nelder_mead(f, x0, opts),
           "bfgs": lambda: bfgs(f, x0, opts),
           "lbfgsb": lambda: lbfgsb(f, x0, None, opts)}[method]()
    assert out.f_star - f_min <= 1e-6


SMOOTH = [
    (rosen, rosen_grad),
    (lambda x: np.sum(np.sin(x) * np.exp(0.3 * x)),
     lambda x: np.cos(x) * np.exp(0.3 * x) + 0.3 * np.sin(x) * np.exp(0.3 * x)),
    (lambda x: np.log1p(np.sum(x ** 2)), lambda x: 2 * x / (1 + np.sum(x ** 2))),
    (lambda x: np.sum(x ** 4) + x[0] * x[1], lambda x: 4 * x ** 3 + np.array([x[1], x[0]])),
]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, len(SMOOTH) - 1), st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_fd_gradient_battery(which, x):
    f, grad = SMOOTH[which]
    x = np.array(x)
    g = grad(x)
    fd = numerical_gradient(f, x)
    scale = max(1.0, np.max(np.abs(g)))
    assert np.max(np.abs(fd - g)) / scale <= 1e-5


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["nelder_mead", "bfgs", "lbfgsb"]))
def test_monotone_and_deterministic(seed, method):
    rng = np.random.default_rng(seed)
    x0 = rng.normal(size=3) * 2
    f = lambda x: rosen(x[:2]) + x[2] ** 2  # noqa: E731
    run = {"nelder_mead": lambda: nelder_mead(f, x0),
           "bfgs": lambda: bfgs(f, x0),
           "lbfgsb": lambda: lbfgsb(f, x0)}[method]
    a, b = run(), run()
    assert a.f_star <= f(x0)
    assert a.f_star == b.f_star and np.array_equal(a.x_star, b.x_star) and a.iterations == b.iterations
    if a.converged:
        assert math.isfinite(a.f_star) and a.f_star == f(a.x_star)


# -- cascade ------------------------------------------------------------------------

def test_cascade_smooth_uses_lbfgsb():
    out = sequential_optimize(lambda x: float(np.sum((x - 1) ** 2)), np.zeros(3))
    assert out.converged and out.method == "lbfgsb"
    assert [a[0] for a in out.attempts] == ["lbfgsb"]


def test_cascade_falls_through_to_simplex():
    out = sequential_optimize(one_sided, [0.0], opts=OptimOptions(max_iter=200))
    assert out.method == "nelder_mead" and out.converged
    assert [a[0] for a in out.attempts] == ["lbfgsb", "bfgs", "nelder_mead"]
    assert not out.attempts[0][1] and not out.attempts[1][1]
    assert 3.0 - 1e-4 <= out.x_star[0] <= 3.0


def test_cascade_none_converge_returns_best():
    out = sequential_optimize(rosen, [-1.2, 1.0], opts=OptimOptions(max_iter=2, tol=1e-12))
    assert not out.converged
    assert out.f_star == min(a[2] for a in out.attempts)


def test_cascade_total_failure():
    with pytest.raises(OptimizationError):
        sequential_optimize(lambda x: math.inf, [0.0, 0.0])


def test_options_validation():
    with pytest.raises(ValueError):
        OptimOptions(max_iter=0)
    with pytest.raises(ValueError):
        OptimOptions(tol=0)
    assert (OptimOptions().max_iter, OptimOptions().tol) == (100, 1e-5)
