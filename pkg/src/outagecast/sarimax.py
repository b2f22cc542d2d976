"""Regression with (seasonal) ARMA errors, estimated by exact Kalman-filter
maximum likelihood.

The observation is ``y_t - beta @ x_t``; the residual follows an ARMA
process written in Harvey's companion form::

    alpha_{t+1} = T alpha_t + R eps_{t+1},   u_t = alpha_t[0]

with ``T[:, 0] = phi`` (zero padded), ones on the superdiagonal and
``R = (1, theta_1, ..., theta_{r-1})``.  The initial state covariance is the
stationary one, from the discrete Lyapunov equation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np
from scipy.linalg import solve_discrete_lyapunov

from .optimize import OptimizationError, OptimOptions, sequential_optimize, METHODS

LOG_2PI = math.log(2 * math.pi)


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelOrder:
    p: int = 1
    d: int = 0
    q: int = 1
    seasonal: tuple[int, int, int, int] = (0, 0, 0, 0)

    def __post_init__(self):
        seasonal = tuple(int(v) for v in self.seasonal)
        object.__setattr__(self, "seasonal", seasonal)
        if len(seasonal) != 4:
            raise ModelError("seasonal order must be (P, D, Q, s)")
        if min(self.p, self.d, self.q, *seasonal) < 0:
            raise ModelError("orders must be non-negative")
        P, D, Q, s = seasonal
        if (s == 0) != (P == D == Q == 0):
            raise ModelError("seasonal period s must be 0 exactly when (P, D, Q) = (0, 0, 0)")
        if s == 1:
            raise ModelError("seasonal period must be at least 2")

    @property
    def is_seasonal(self) -> bool:
        return self.seasonal[3] > 0

    def non_seasonal(self) -> "ModelOrder":
        return ModelOrder(self.p, self.d, self.q)

    @property
    def n_diff(self) -> int:
        return self.d + self.seasonal[1] * self.seasonal[3]

    def __str__(self) -> str:
        P, D, Q, s = self.seasonal
        return f"({self.p},{self.d},{self.q})({P},{D},{Q},{s})"


@dataclass(frozen=True)
class SarimaxParams:
    phi: np.ndarray
    theta: np.ndarray
    beta: np.ndarray
    sigma2: float
    seasonal_phi: np.ndarray = field(default_factory=lambda: np.zeros(0))
    seasonal_theta: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        for name in ("phi", "theta", "beta", "seasonal_phi", "seasonal_theta"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), float)))
        object.__setattr__(self, "sigma2", float(self.sigma2))

    def to_dict(self) -> dict:
        return {
            "phi": self.phi.tolist(),
            "theta": self.theta.tolist(),
            "seasonal_phi": self.seasonal_phi.tolist(),
            "seasonal_theta": self.seasonal_theta.tolist(),
            "beta": self.beta.tolist(),
            "sigma2": self.sigma2,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SarimaxParams":
        return cls(
            data["phi"], data["theta"], data["beta"], data["sigma2"],
            data.get("seasonal_phi", []), data.get("seasonal_theta", []),
        )


def _ar_roots_ok(coefs: np.ndarray) -> bool:
    """True if 1 - sum(c_i z^i) has every root strictly outside the unit circle."""
    coefs = np.asarray(coefs, float)
    if coefs.size == 0 or not np.any(coefs):
        return bool(np.all(np.isfinite(coefs)))
    if not np.all(np.isfinite(coefs)):
        return False
    companion = np.zeros((len(coefs), len(coefs)))
    companion[0] = coefs
    companion[1:, :-1] = np.eye(len(coefs) - 1)
    return bool(np.max(np.abs(np.linalg.eigvals(companion))) < 1.0)


def _expand(nonseasonal: np.ndarray, seasonal: np.ndarray, s: int, sign: float) -> np.ndarray:
    """Lag coefficients of the product polynomial.

    AR polynomials are ``1 - sum c_i B^i`` (sign=-1); MA polynomials are
    ``1 + sum c_i B^i`` (sign=+1).  Returns c for the product in the same
    convention.
    """
    a = np.r_[1.0, sign * np.asarray(nonseasonal, float)]
    b = np.zeros(s * len(seasonal) + 1)
    b[0] = 1.0
    for j, c in enumerate(seasonal, start=1):
        b[j * s] = sign * c
    prod = np.convolve(a, b)
    return sign * prod[1:]


def check_params(order: ModelOrder, params: SarimaxParams) -> None:
    P, _, Q, _ = order.seasonal
    if len(params.phi) != order.p or len(params.theta) != order.q:
        raise ModelError("parameter lengths disagree with the model order")
    if len(params.seasonal_phi) != P or len(params.seasonal_theta) != Q:
        raise ModelError("seasonal parameter lengths disagree with the model order")
    if not (params.sigma2 > 0 and math.isfinite(params.sigma2)):
        raise ModelError("sigma2 must be positive and finite")
    if not (_ar_roots_ok(params.phi) and _ar_roots_ok(params.seasonal_phi)):
        raise ModelError("AR polynomial is not stationary")
    if not (_ar_roots_ok(-params.theta) and _ar_roots_ok(-params.seasonal_theta)):
        raise ModelError("MA polynomial is not invertible")


@dataclass(frozen=True)
class StateSpaceRep:
    transition: np.ndarray
    loading: np.ndarray
    innovation_map: np.ndarray

    @property
    def state_dim(self) -> int:
        return self.transition.shape[0]


def to_state_space(order: ModelOrder, params: SarimaxParams, check: bool = True) -> StateSpaceRep:
    if check:
        check_params(order, params)
    s = order.seasonal[3]
    phi = _expand(params.phi, params.seasonal_phi, s, -1.0) if s else params.phi
    theta = _expand(params.theta, params.seasonal_theta, s, 1.0) if s else params.theta
    r = max(len(phi), len(theta) + 1, 1)
    T = np.zeros((r, r))
    T[: len(phi), 0] = phi
    T[np.arange(r - 1), np.arange(1, r)] = 1.0
    R = np.zeros(r)
    R[0] = 1.0
    R[1 : len(theta) + 1] = theta
    Z = np.zeros(r)
    Z[0] = 1.0
    return StateSpaceRep(T, Z, R)


@numba.njit(cache=True, nogil=True)
def _filter(e, T, R, sigma2, P0):
    n = e.shape[0]
    r = T.shape[0]
    a = np.zeros(r)
    P = P0.copy()
    af = np.zeros(r)
    Pf = np.zeros((r, r))
    tmp = np.zeros((r, r))
    v_out = np.empty(n)
    F_out = np.empty(n)
    ll = 0.0
    for t in range(n):
        F = P[0, 0]
        if not (F > 0.0) or not np.isfinite(F):
            return -np.inf, v_out, F_out, af, Pf
        v = e[t] - a[0]
        v_out[t] = v
        F_out[t] = F
        ll += -0.5 * (1.8378770664093453 + np.log(F) + v * v / F)
        for i in range(r):
            af[i] = a[i] + P[i, 0] * v / F
        for i in range(r):
            for j in range(r):
                Pf[i, j] = P[i, j] - P[i, 0] * P[0, j] / F
        for i in range(r):
            acc = 0.0
            for k in range(r):
                acc += T[i, k] * af[k]
            a[i] = acc
        for i in range(r):
            for j in range(r):
                acc = 0.0
                for k in range(r):
                    acc += T[i, k] * Pf[k, j]
                tmp[i, j] = acc
        for i in range(r):
            for j in range(i, r):
                acc = 0.0
                for k in range(r):
                    acc += tmp[i, k] * T[j, k]
                acc += sigma2 * R[i] * R[j]
                P[i, j] = acc
                P[j, i] = acc
    if not np.isfinite(ll):
        return -np.inf, v_out, F_out, af, Pf
    return ll, v_out, F_out, af, Pf


def stationary_cov(rep: StateSpaceRep, sigma2: float) -> np.ndarray:
    Q = sigma2 * np.outer(rep.innovation_map, rep.innovation_map)
    with np.errstate(all="ignore"):
        P0 = solve_discrete_lyapunov(rep.transition, Q)
    return (P0 + P0.T) / 2


@dataclass
class FilterOutput:
    loglik: float
    innovations: np.ndarray
    variances: np.ndarray
    terminal_state: np.ndarray


def run_filter(rep: StateSpaceRep, e: np.ndarray, sigma2: float) -> FilterOutput:
    e = np.ascontiguousarray(e, dtype=float)
    try:
        P0 = stationary_cov(rep, sigma2)
    except (np.linalg.LinAlgError, ValueError):
        return FilterOutput(-math.inf, np.full(len(e), np.nan), np.full(len(e), np.nan),
                            np.full(rep.state_dim, np.nan))
    if not np.all(np.isfinite(P0)) or not np.all(np.isfinite(e)):
        return FilterOutput(-math.inf, np.full(len(e), np.nan), np.full(len(e), np.nan),
                            np.full(rep.state_dim, np.nan))
    ll, v, F, af, _ = _filter(e, np.ascontiguousarray(rep.transition),
                              np.ascontiguousarray(rep.innovation_map), float(sigma2), P0)
    return FilterOutput(float(ll), v, F, af.copy())


def _exog_array(X, n: int) -> np.ndarray:
    if X is None:
        return np.zeros((n, 0))
    values = getattr(X, "values", X)
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape[0] != n:
        raise ModelError(f"exogenous matrix has {values.shape[0]} rows, expected {n}")
    return values


def kalman_loglik(rep: StateSpaceRep, y, X, beta, sigma2: float) -> float:
    """Exact Gaussian log-likelihood of ``y - X @ beta`` under ``rep``.

    Returns ``-inf`` rather than raising when the representation is not
    stationary or the recursion breaks down.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or len(y) < 1:
        raise ModelError("y must be a non-empty 1-D series")
    Xa = _exog_array(X, len(y))
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if Xa.shape[1] != len(beta):
        raise ModelError("beta length does not match the exogenous columns")
    e = y - Xa @ beta if len(beta) else y
    return run_filter(rep, e, sigma2).loglik


# ---------------------------------------------------------------------------
# parameter transforms


def constrain_stationary(u: np.ndarray) -> np.ndarray:
    """Map any real vector to AR coefficients of a stationary polynomial,
    via partial autocorrelations u/sqrt(1+u^2) and Durbin-Levinson."""
    u = np.asarray(u, float)
    p = len(u)
    if p == 0:
        return u.copy()
    r = u / np.sqrt(1.0 + u * u)
    phi = np.zeros((p, p))
    for k in range(p):
        phi[k, k] = r[k]
        for j in range(k):
            phi[k, j] = phi[k - 1, j] - r[k] * phi[k - 1, k - 1 - j]
    return phi[p - 1].copy()


def unconstrain_stationary(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, float)
    p = len(phi)
    if p == 0:
        return phi.copy()
    r = np.zeros(p)
    cur = phi.copy()
    for k in range(p - 1, -1, -1):
        r[k] = cur[k]
        if abs(r[k]) >= 1:
            raise ModelError("coefficients are not stationary")
        prev = np.zeros(k)
        for j in range(k):
            prev[j] = (cur[j] + r[k] * cur[k - 1 - j]) / (1.0 - r[k] ** 2)
        cur = prev
    return r / np.sqrt(1.0 - r * r)


def n_params(order: ModelOrder, n_exog: int) -> int:
    P, _, Q, _ = order.seasonal
    return order.p + P + order.q + Q + n_exog + 1


def transform_params(u: np.ndarray, order: ModelOrder, n_exog: int | None = None) -> SarimaxParams:
    """Unconstrained vector -> valid parameters.

    Layout: ``[ar(p), seasonal ar(P), ma(q), seasonal ma(Q), beta, log sigma2]``.
    """
    u = np.asarray(u, float)
    P, _, Q, _ = order.seasonal
    base = order.p + P + order.q + Q
    if n_exog is None:
        n_exog = len(u) - base - 1
    if len(u) != base + n_exog + 1 or n_exog < 0:
        raise ModelError("unconstrained vector has the wrong length")
    i = 0
    phi = constrain_stationary(u[i : i + order.p]); i += order.p
    sphi = constrain_stationary(u[i : i + P]); i += P
    theta = -constrain_stationary(u[i : i + order.q]); i += order.q
    stheta = -constrain_stationary(u[i : i + Q]); i += Q
    beta = u[i : i + n_exog].copy(); i += n_exog
    return SarimaxParams(phi, theta, beta, math.exp(u[i]), sphi, stheta)


def untransform_params(params: SarimaxParams, order: ModelOrder) -> np.ndarray:
    check_params(order, params)
    return np.concatenate([
        unconstrain_stationary(params.phi),
        unconstrain_stationary(params.seasonal_phi),
        unconstrain_stationary(-params.theta),
        unconstrain_stationary(-params.seasonal_theta),
        params.beta,
        [math.log(params.sigma2)],
    ])


# ---------------------------------------------------------------------------
# differencing


def _diff_poly(d: int, D: int, s: int) -> np.ndarray:
    poly = np.array([1.0])
    for _ in range(d):
        poly = np.convolve(poly, [1.0, -1.0])
    for _ in range(D):
        seas = np.zeros(s + 1)
        seas[0], seas[s] = 1.0, -1.0
        poly = np.convolve(poly, seas)
    return poly


def difference(y, d: int = 1, D: int = 0, s: int = 0) -> np.ndarray:
    """Apply ``(1-B)^d (1-B^s)^D``; the result is ``d + D*s`` shorter."""
    y = np.asarray(y, float)
    poly = _diff_poly(d, D, s)
    L = len(poly) - 1
    if len(y) <= L:
        raise ModelError(f"series of length {len(y)} is too short to difference (needs > {L})")
    if L == 0:
        return y.copy()
    out = np.zeros(len(y) - L)
    for j, c in enumerate(poly):
        out += c * y[L - j : len(y) - j]
    return out


def integrate(w, anchors, d: int = 1, D: int = 0, s: int = 0) -> np.ndarray:
    """Invert :func:`difference` given the ``d + D*s`` values preceding ``w``."""
    poly = _diff_poly(d, D, s)
    L = len(poly) - 1
    anchors = np.asarray(anchors, float)
    if len(anchors) != L:
        raise ModelError(f"need exactly {L} anchor values")
    y = np.concatenate([anchors, np.zeros(len(w))])
    for t, wt in enumerate(np.asarray(w, float)):
        pos = L + t
        y[pos] = wt - sum(poly[j] * y[pos - j] for j in range(1, L + 1))
    return y[L:]


# ---------------------------------------------------------------------------
# estimation


@dataclass
class FitResult:
    order: ModelOrder
    params: SarimaxParams
    loglik: float
    converged: bool
    method: str
    residuals: np.ndarray
    terminal_state: np.ndarray
    exog_names: tuple[str, ...] = ()
    anchors: np.ndarray = field(default_factory=lambda: np.zeros(0))
    exog_anchors: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    iterations: int = 0
    message: str = ""
    attempts: list = field(default_factory=list)

    @property
    def nobs(self) -> int:
        return len(self.residuals)

    def to_dict(self) -> dict:
        return {
            "order": {"p": self.order.p, "d": self.order.d, "q": self.order.q,
                      "seasonal": list(self.order.seasonal)},
            "params": self.params.to_dict(),
            "exog_names": list(self.exog_names),
            "loglik": self.loglik if math.isfinite(self.loglik) else None,
            "converged": bool(self.converged),
            "method": self.method,
            "iterations": int(self.iterations),
            "message": self.message,
            "nobs": self.nobs,
            "terminal_state": self.terminal_state.tolist(),
            "anchors": self.anchors.tolist(),
            "exog_anchors": self.exog_anchors.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "FitResult":
        o = data["order"]
        ll = data.get("loglik")
        return cls(
            order=ModelOrder(o["p"], o["d"], o["q"], tuple(o["seasonal"])),
            params=SarimaxParams.from_dict(data["params"]),
            loglik=-math.inf if ll is None else float(ll),
            converged=bool(data["converged"]),
            method=data["method"],
            residuals=np.zeros(int(data.get("nobs", 0))),
            terminal_state=np.asarray(data["terminal_state"], float),
            exog_names=tuple(data.get("exog_names", [])),
            anchors=np.asarray(data.get("anchors", []), float),
            exog_anchors=np.asarray(data.get("exog_anchors", []), float).reshape(
                len(data.get("exog_anchors", [])), len(data["params"]["beta"])),
            iterations=int(data.get("iterations", 0)),
            message=data.get("message", ""),
        )


def _start_values(y: np.ndarray, Xa: np.ndarray, order: ModelOrder) -> np.ndarray:
    if Xa.shape[1]:
        beta, *_ = np.linalg.lstsq(Xa, y, rcond=None)
        beta = np.where(np.isfinite(beta), beta, 0.0)
        resid = y - Xa @ beta
    else:
        beta = np.zeros(0)
        resid = y
    var = float(np.var(resid)) if len(resid) > 1 else 0.0
    if not (var > 0 and math.isfinite(var)):
        var = 1.0
    P, _, Q, _ = order.seasonal
    return np.concatenate([np.zeros(order.p + P + order.q + Q), beta, [math.log(var)]])


def fit(
    y,
    X=None,
    order: ModelOrder = ModelOrder(),
    opts: OptimOptions = OptimOptions(),
    methods: Sequence[str] = METHODS,
) -> FitResult:
    """Maximum-likelihood fit.

    The optimizer minimizes the mean negative log-likelihood over the
    unconstrained parameter vector.  Start values: OLS for beta and sigma2,
    zero for the ARMA entries.  A total optimizer failure gives a
    non-converged result with ``loglik = -inf`` instead of raising.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    if not np.all(np.isfinite(y)):
        raise ModelError("y contains non-finite values")
    Xa = _exog_array(X, len(y))
    names = tuple(getattr(X, "columns", ())) or tuple(f"x{i}" for i in range(Xa.shape[1]))
    P, D, Q, s = order.seasonal
    L = order.n_diff
    if len(y) <= order.p + order.q + 1 + L:
        raise ModelError("series too short for the requested order")
    anchors = y[len(y) - L :] if L else np.zeros(0)
    exog_anchors = Xa[len(y) - L :] if L else np.zeros((0, Xa.shape[1]))
    if L:
        yd = difference(y, order.d, D, s)
        Xd = np.column_stack([difference(c, order.d, D, s) for c in Xa.T]) if Xa.shape[1] else np.zeros((len(yd), 0))
    else:
        yd, Xd = y, Xa
    n = len(yd)
    k = Xd.shape[1]

    def objective(u):
        params = transform_params(u, order, k)
        rep = to_state_space(order, params, check=False)
        e = yd - Xd @ params.beta if k else yd
        return -run_filter(rep, e, params.sigma2).loglik / n

    u0 = _start_values(yd, Xd, order)
    try:
        out = sequential_optimize(objective, u0, None, opts, methods)
        u, converged, method = out.x_star, out.converged, out.method
        iterations, message, attempts = out.iterations, out.message, out.attempts
    except OptimizationError as exc:
        u, converged, method = u0, False, "none"
        iterations, message, attempts = 0, str(exc), []
    params = transform_params(u, order, k)
    rep = to_state_space(order, params, check=False)
    filt = run_filter(rep, yd - Xd @ params.beta if k else yd, params.sigma2)
    if not math.isfinite(filt.loglik):
        converged = False
    return FitResult(
        order=order, params=params, loglik=filt.loglik, converged=converged, method=method,
        residuals=filt.innovations, terminal_state=filt.terminal_state, exog_names=names,
        anchors=anchors, exog_anchors=exog_anchors, iterations=iterations, message=message, attempts=attempts,
    )


def forecast(result: FitResult, h: int, X_future=None) -> np.ndarray:
    """Mean forecasts for steps 1..h from the end of the fitted sample."""
    if h < 1:
        raise ModelError("horizon must be >= 1")
    k = len(result.params.beta)
    Xf = _exog_array(X_future, h) if k or X_future is not None else np.zeros((h, 0))
    if Xf.shape[1] != k:
        raise ModelError(f"future exogenous block has {Xf.shape[1]} columns, fit used {k}")
    cols = getattr(X_future, "columns", None)
    if cols is not None and result.exog_names and tuple(cols) != tuple(result.exog_names):
        raise ModelError("future exogenous columns do not match the fitted columns")
    rep = to_state_space(result.order, result.params, check=False)
    a = np.asarray(result.terminal_state, float)
    out = np.empty(h)
    for step in range(h):
        a = rep.transition @ a
        out[step] = a[0]
    P, D, Q, s = result.order.seasonal
    L = result.order.n_diff
    if k:
        if L:
            full = np.vstack([result.exog_anchors, Xf])
            Xf = np.column_stack([difference(c, result.order.d, D, s) for c in full.T])
        out = out + Xf @ result.params.beta
    if L:
        out = integrate(out, result.anchors, result.order.d, D, s)
    return out
