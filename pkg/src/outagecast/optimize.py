"""Derivative-free and quasi-Newton minimizers plus the fallback cascade.

All three methods share :class:`OptimOptions` and return an
:class:`OptimOutcome`.  Gradients are central finite differences.
Objective values that are NaN, infinite or raise an arithmetic error are
treated as ``+inf``.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

Objective = Callable[[np.ndarray], float]

LBFGS_MEMORY = 10
ARMIJO_C = 1e-4
MAX_HALVINGS = 60

METHODS = ("lbfgsb", "bfgs", "nelder_mead")


class OptimizationError(RuntimeError):
    """Raised when no finite objective value can be found."""


@dataclass(frozen=True)
class OptimOptions:
    max_iter: int = 100
    tol: float = 1e-5
    gradient_step: float = 1e-6

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if not self.gradient_step > 0:
            raise ValueError("gradient_step must be > 0")


@dataclass
class OptimOutcome:
    x_star: np.ndarray
    f_star: float
    converged: bool
    iterations: int
    method: str
    message: str = ""
    attempts: list[tuple[str, bool, float]] = field(default_factory=list)


def safe_eval(obj: Objective, x: np.ndarray) -> float:
    try:
        with np.errstate(all="ignore"):
            v = float(obj(x))
    except (ArithmeticError, ValueError, np.linalg.LinAlgError):
        return math.inf
    return v if math.isfinite(v) else math.inf


def numerical_gradient(obj: Objective, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central differences with step ``step * max(1, |x_i|)``."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(len(x)):
        h = step * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (safe_eval(obj, xp) - safe_eval(obj, xm)) / (xp[i] - xm[i])
    return g


def _start(obj: Objective, x0, method: str) -> tuple[np.ndarray, float]:
    x = np.array(x0, dtype=float).ravel()
    if x.size < 1:
        raise ValueError("need at least one parameter")
    f = safe_eval(obj, x)
    if not math.isfinite(f):
        raise OptimizationError(f"{method}: objective is not finite at the starting point")
    return x, f


def nelder_mead(obj: Objective, x0, opts: OptimOptions = OptimOptions()) -> OptimOutcome:
    """Simplex search (reflection 1, expansion 2, contraction 0.5, shrink 0.5).

    Converged once the spread of function values over the simplex and the
    largest vertex offset from the best vertex both drop below ``opts.tol``
    (equal values alone can come from a simplex straddling the minimum).
    """
    x, f0 = _start(obj, x0, "nelder_mead")
    n = len(x)
    simplex = [x]
    for i in range(n):
        v = x.copy()
        v[i] = v[i] * 1.05 if v[i] != 0 else 0.00025
        simplex.append(v)
    fs = [f0] + [safe_eval(obj, v) for v in simplex[1:]]
    simplex = np.array(simplex)
    fs = np.array(fs)

    converged = False
    it = 0
    while True:
        order = np.argsort(fs, kind="stable")
        simplex, fs = simplex[order], fs[order]
        spread_x = np.max(np.abs(simplex[1:] - simplex[0]))
        if math.isfinite(fs[-1]) and fs[-1] - fs[0] < opts.tol and spread_x < opts.tol:
            converged = True
            break
        if it >= opts.max_iter:
            break
        it += 1
        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = centroid + (centroid - worst)
        fr = safe_eval(obj, xr)
        if fr < fs[0]:
            xe = centroid + 2.0 * (centroid - worst)
            fe = safe_eval(obj, xe)
            simplex[-1], fs[-1] = (xe, fe) if fe < fr else (xr, fr)
            continue
        if fr < fs[-2]:
            simplex[-1], fs[-1] = xr, fr
            continue
        if fr < fs[-1]:
            xc = centroid + 0.5 * (xr - centroid)
            fc = safe_eval(obj, xc)
            accept = fc <= fr
        else:
            xc = centroid + 0.5 * (worst - centroid)
            fc = safe_eval(obj, xc)
            accept = fc < fs[-1]
        if accept:
            simplex[-1], fs[-1] = xc, fc
            continue
        best = simplex[0]
        for i in range(1, n + 1):
            simplex[i] = best + 0.5 * (simplex[i] - best)
            fs[i] = safe_eval(obj, simplex[i])
    return OptimOutcome(
        simplex[0].copy(), float(fs[0]), converged, it, "nelder_mead",
        "" if converged else "iteration limit reached",
    )


def _armijo(obj, x, f, g, d, project=None, alpha=1.0):
    """Backtracking by halving; returns (x_new, f_new) or None."""
    for _ in range(MAX_HALVINGS):
        x_new = x + alpha * d
        if project is not None:
            x_new = project(x_new)
        step = x_new - x
        if not np.any(step):
            return None
        f_new = safe_eval(obj, x_new)
        if f_new <= f + ARMIJO_C * float(g @ step):
            return x_new, f_new
        alpha *= 0.5
    return None


def bfgs(obj: Objective, x0, opts: OptimOptions = OptimOptions()) -> OptimOutcome:
    """Dense inverse-Hessian BFGS with Armijo backtracking.

    Converged when the infinity norm of the gradient drops below ``opts.tol``.
    """
    x, f = _start(obj, x0, "bfgs")
    n = len(x)
    eye = np.eye(n)
    H = eye.copy()
    fresh = True
    g = numerical_gradient(obj, x, opts.gradient_step)
    it = 0
    message = "iteration limit reached"
    converged = False
    while True:
        if not np.all(np.isfinite(g)):
            message = "non-finite gradient"
            break
        if np.max(np.abs(g)) < opts.tol:
            converged, message = True, ""
            break
        if it >= opts.max_iter:
            break
        d = -H @ g
        if not g @ d < 0:
            H, fresh = eye.copy(), True
            d = -g
        step = _armijo(obj, x, f, g, d)
        if step is None and not fresh:
            H, fresh = eye.copy(), True
            step = _armijo(obj, x, f, g, -g)
        if step is None:
            message = "line search failed"
            break
        it += 1
        x_new, f_new = step
        g_new = numerical_gradient(obj, x_new, opts.gradient_step)
        s, y = x_new - x, g_new - g
        sy = float(s @ y)
        if np.all(np.isfinite(y)) and sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if fresh:
                H = eye * (sy / float(y @ y))
            rho = 1.0 / sy
            V = eye - rho * np.outer(s, y)
            H = V @ H @ V.T + rho * np.outer(s, s)
            fresh = False
        x, f, g = x_new, f_new, g_new
    return OptimOutcome(x, f, converged, it, "bfgs", message)


def _two_loop(g: np.ndarray, S, Y, mask: np.ndarray) -> np.ndarray:
    q = g * mask
    hist = []
    for s, y in reversed(list(zip(S, Y))):
        s, y = s * mask, y * mask
        sy = s @ y
        if sy <= 0:
            continue
        rho = 1.0 / sy
        a = rho * (s @ q)
        q = q - a * y
        hist.append((rho, a, s, y))
    if hist:
        _, _, s, y = hist[0]
        q = q * ((s @ y) / (y @ y))
    for rho, a, s, y in reversed(hist):
        b = rho * (y @ q)
        q = q + (a - b) * s
    return -q


def lbfgsb(
    obj: Objective,
    x0,
    bounds: Sequence[tuple[float, float]] | None = None,
    opts: OptimOptions = OptimOptions(),
) -> OptimOutcome:
    """Box-constrained limited-memory BFGS (memory 10).

    Variables sitting on a bound with the gradient pushing outward are held
    fixed; the two-loop recursion runs on the remaining free subspace and
    the Armijo search follows the projected path, so iterates stay feasible.
    Converged when the projected gradient's infinity norm is below
    ``opts.tol``.
    """
    x = np.array(x0, dtype=float).ravel()
    n = len(x)
    if bounds is None:
        lo, hi = np.full(n, -np.inf), np.full(n, np.inf)
    else:
        b = np.array([(-np.inf if a is None else a, np.inf if c is None else c) for a, c in bounds],
                     dtype=float)
        if b.shape != (n, 2):
            raise ValueError("bounds must give one (lo, hi) pair per coordinate")
        lo, hi = b[:, 0], b[:, 1]
    if np.any(lo > hi) or np.any(x < lo) or np.any(x > hi):
        raise ValueError("starting point is outside the bounds")
    x, f = _start(obj, x, "lbfgsb")
    project = lambda v: np.clip(v, lo, hi)  # noqa: E731
    S: deque = deque(maxlen=LBFGS_MEMORY)
    Y: deque = deque(maxlen=LBFGS_MEMORY)
    g = numerical_gradient(obj, x, opts.gradient_step)
    it = 0
    converged = False
    message = "iteration limit reached"
    while True:
        if not np.all(np.isfinite(g)):
            message = "non-finite gradient"
            break
        pg = project(x - g) - x
        if np.max(np.abs(pg)) < opts.tol:
            converged, message = True, ""
            break
        if it >= opts.max_iter:
            break
        fixed = ((x <= lo) & (g > 0)) | ((x >= hi) & (g < 0))
        free = (~fixed).astype(float)
        d = _two_loop(g, S, Y, free)
        if not (np.all(np.isfinite(d)) and g @ d < 0):
            S.clear()
            Y.clear()
            d = -g * free
        alpha = 1.0 if S else min(1.0, 1.0 / max(np.max(np.abs(d)), 1e-300))
        step = _armijo(obj, x, f, g, d, project, alpha)
        if step is None and S:
            S.clear()
            Y.clear()
            d = -g * free
            step = _armijo(obj, x, f, g, d, project, min(1.0, 1.0 / np.max(np.abs(d))))
        if step is None:
            message = "line search failed"
            break
        it += 1
        x_new, f_new = step
        g_new = numerical_gradient(obj, x_new, opts.gradient_step)
        s, y = x_new - x, g_new - g
        if np.all(np.isfinite(y)) and s @ y > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            S.append(s)
            Y.append(y)
        x, f, g = x_new, f_new, g_new
    return OptimOutcome(x, f, converged, it, "lbfgsb", message)


def sequential_optimize(
    obj: Objective,
    x0,
    bounds: Sequence[tuple[float, float]] | None = None,
    opts: OptimOptions = OptimOptions(),
    methods: Sequence[str] = METHODS,
) -> OptimOutcome:
    """Try L-BFGS-B, BFGS and Nelder-Mead in turn.

    The first converged outcome wins.  Otherwise the outcome with the lowest
    finite loss is returned, flagged non-converged.  Raises
    :class:`OptimizationError` if no method found a finite loss.
    """
    attempts: list[tuple[str, bool, float]] = []
    best: OptimOutcome | None = None
    for method in methods:
        try:
            if method == "lbfgsb":
                out = lbfgsb(obj, x0, bounds, opts)
            elif method == "bfgs":
                out = bfgs(obj, x0, opts)
            elif method == "nelder_mead":
                out = nelder_mead(obj, x0, opts)
            else:
                raise ValueError(f"unknown optimizer {method!r}")
        except OptimizationError:
            attempts.append((method, False, math.inf))
            continue
        attempts.append((method, out.converged, out.f_star))
        if out.converged and math.isfinite(out.f_star):
            out.attempts = attempts
            return out
        if math.isfinite(out.f_star) and (best is None or out.f_star < best.f_star):
            best = out
    if best is None:
        raise OptimizationError("every optimizer failed to find a finite objective value")
    best.attempts = attempts
    return best
