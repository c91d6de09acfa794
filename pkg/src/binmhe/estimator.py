"""Moving-horizon MAP estimation from binary threshold measurements.

At each time step the estimator minimizes, over the windowed trajectory
X = (x[t-N], ..., x[t]), the convex cost

    |x[t-N] - anchor|^2_Psi                        arrival penalty
  + sum_k |x[k+1] - A x[k] - B u[k]|^2_Q           dynamics penalty
  - sum_k sum_i ( y log q_tail + (1-y) log cdf )   measurement log-likelihood

with the margin tau_i - C_i x[k] - offset_i and per-sensor noise variance
feeding the Gaussian tail terms. Weights Psi, Q (and the prior weight P
used while the window is still filling) are inverse covariances. The
log-concavity of both tail terms makes the cost convex, so a damped Newton
iteration with Armijo backtracking finds the global minimum; analytic
gradients and Hessians come from the tail kernel's log-derivatives.

Window recursion: the reported estimate at time t is the smoothed window
tail x[t-N|t]; the next window is anchored on the second block of the
current solution. Until the window is full the growing full-information
problem is solved with the prior (mean, weight) as the anchor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import gausstail as gt


class ConvergenceError(RuntimeError):
    """Window solve hit the iteration cap; carries the best iterate found."""

    def __init__(self, message, diagnostics, best):
        super().__init__(message)
        self.diagnostics = diagnostics
        self.best = best


@dataclass(frozen=True)
class BinarySensor:
    """One threshold sensor: fires when its noisy reading meets the threshold."""

    c_row: np.ndarray     # observation row over the model state
    offset: float         # known constant part of the observation
    threshold: float
    noise_var: float

    def __post_init__(self):
        object.__setattr__(self, "c_row", np.asarray(self.c_row, dtype=float))
        if not np.all(np.isfinite(self.c_row)):
            raise ValueError("sensor observation row must be finite")
        if not (np.isfinite(self.noise_var) and self.noise_var > 0.0):
            raise ValueError(f"sensor noise variance must be > 0, got {self.noise_var}")


@dataclass
class MeasurementWindow:
    """Sliding window of binary measurement vectors and applied inputs."""

    y: np.ndarray       # (W, l) entries in {0, 1}
    u_seq: np.ndarray   # (W-1, m) inputs, one per dynamics transition
    t: int              # time index of the newest sample

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.u_seq = np.asarray(self.u_seq, dtype=float)
        if self.y.ndim != 2:
            raise ValueError("window measurements must be (steps, sensors)")
        if not np.all((self.y == 0.0) | (self.y == 1.0)):
            raise ValueError("binary measurements must be 0 or 1")
        if self.u_seq.shape[0] != self.y.shape[0] - 1:
            raise ValueError("need exactly one input per window transition")

    def __len__(self):
        return self.y.shape[0]


@dataclass
class EstimatorState:
    """Arrival anchor, its weight, and the latest windowed trajectory estimate."""

    anchor: np.ndarray
    anchor_weight: np.ndarray
    trajectory: np.ndarray   # (W, n)

    def __post_init__(self):
        self.anchor = np.asarray(self.anchor, dtype=float)
        self.anchor_weight = np.asarray(self.anchor_weight, dtype=float)
        self.trajectory = np.atleast_2d(np.asarray(self.trajectory, dtype=float))
        if not np.allclose(self.anchor_weight, self.anchor_weight.T, atol=1e-12):
            raise ValueError("arrival weight must be symmetric")


@dataclass
class SolveDiagnostics:
    iterations: int
    cost: float
    gradient_norm: float
    converged: bool
    cost_trace: list = field(default_factory=list)


def as_weight(w, n):
    """Scalar weights become scaled identities; matrices pass through."""
    w = np.asarray(w, dtype=float)
    if w.ndim == 0:
        return float(w) * np.eye(n)
    if w.shape != (n, n):
        raise ValueError(f"weight must be scalar or {n}x{n}, got {w.shape}")
    return w


def _stack_sensors(sensors, n):
    if not sensors:
        return (np.zeros((0, n)), np.zeros(0), np.zeros(0), np.zeros(0))
    c = np.stack([s.c_row for s in sensors])
    if c.shape[1] != n:
        raise ValueError(f"sensor rows have dimension {c.shape[1]}, state has {n}")
    tau = np.array([s.threshold for s in sensors])
    off = np.array([s.offset for s in sensors])
    var = np.array([s.noise_var for s in sensors])
    return c, tau, off, var


def _shape_window(sys, sensors, est, win, X):
    n = sys.A.shape[0]
    W = len(win)
    X = np.asarray(X, dtype=float)
    if X.size != W * n:
        raise ValueError(f"trajectory has {X.size} entries, window needs {W}x{n}")
    if win.y.shape[1] != len(sensors):
        raise ValueError(f"window carries {win.y.shape[1]} sensor columns, "
                         f"got {len(sensors)} sensors")
    return X.reshape(W, n), W, n


def mh_cost(sys, sensors, est, win, X):
    """Moving-horizon MAP cost of a candidate windowed trajectory."""
    X, W, n = _shape_window(sys, sensors, est, win, X)
    psi = as_weight(est.anchor_weight, n)

    e0 = X[0] - est.anchor
    cost = e0 @ psi @ e0
    if W > 1:
        q = as_weight(sys.process_weight, n)
        resid = X[1:] - X[:-1] @ sys.A.T - win.u_seq @ sys.B.T
        cost += float(np.sum((resid @ q) * resid))
    if len(sensors):
        c, tau, off, var = _stack_sensors(sensors, n)
        margin = tau[None, :] - X @ c.T - off[None, :]
        loglik = np.where(win.y == 1.0,
                          gt.log_q_tail(margin, var[None, :]),
                          gt.log_cdf(margin, var[None, :]))
        cost -= float(loglik.sum())
    return float(cost)


def mh_cost_gradient(sys, sensors, est, win, X):
    """Analytic gradient of mh_cost, flattened to (W*n,)."""
    X, W, n = _shape_window(sys, sensors, est, win, X)
    psi = as_weight(est.anchor_weight, n)

    grad = np.zeros((W, n))
    grad[0] += 2.0 * psi @ (X[0] - est.anchor)
    if W > 1:
        q = as_weight(sys.process_weight, n)
        resid_q = (X[1:] - X[:-1] @ sys.A.T - win.u_seq @ sys.B.T) @ q
        grad[1:] += 2.0 * resid_q
        grad[:-1] -= 2.0 * resid_q @ sys.A
    if len(sensors):
        c, tau, off, var = _stack_sensors(sensors, n)
        margin = tau[None, :] - X @ c.T - off[None, :]
        slope = np.where(win.y == 1.0,
                         gt.dlog_q_tail(margin, var[None, :]),
                         gt.dlog_cdf(margin, var[None, :]))
        grad += slope @ c
    return grad.ravel()


def mh_cost_hessian(sys, sensors, est, win, X):
    """Analytic Hessian of mh_cost (block tridiagonal, PSD)."""
    X, W, n = _shape_window(sys, sensors, est, win, X)
    psi = as_weight(est.anchor_weight, n)

    hess = np.zeros((W * n, W * n))
    blk = lambda k: slice(k * n, (k + 1) * n)
    hess[blk(0), blk(0)] += 2.0 * psi
    if W > 1:
        q = as_weight(sys.process_weight, n)
        aqa = 2.0 * sys.A.T @ q @ sys.A
        aq = 2.0 * sys.A.T @ q
        for k in range(W - 1):
            hess[blk(k), blk(k)] += aqa
            hess[blk(k + 1), blk(k + 1)] += 2.0 * q
            hess[blk(k), blk(k + 1)] -= aq
            hess[blk(k + 1), blk(k)] -= aq.T
    if len(sensors):
        c, tau, off, var = _stack_sensors(sensors, n)
        margin = tau[None, :] - X @ c.T - off[None, :]
        curv = -np.where(win.y == 1.0,
                         gt.d2log_q_tail(margin, var[None, :]),
                         gt.d2log_cdf(margin, var[None, :]))
        for k in range(W):
            hess[blk(k), blk(k)] += c.T @ (curv[k][:, None] * c)
    return hess


def solve_window(sys, sensors, est, win, init=None, tol=1e-7, max_iter=500):
    """Minimize the window cost by damped Newton with Armijo backtracking.

    Returns (trajectory (W, n), SolveDiagnostics). The cost is convex, so
    the result is the global minimum regardless of the initialization.
    Termination: gradient norm below tol * (1 + |cost|), or a Newton
    decrement certifying that the remaining cost gap is at machine level
    (sharp likelihood terms can put the attainable gradient floor above
    any fixed tolerance). Raises ConvergenceError (carrying the best
    iterate) at the iteration cap.
    """
    n = sys.A.shape[0]
    W = len(win)
    if init is None:
        init = np.tile(est.anchor, (W, 1))
    X, _, _ = _shape_window(sys, sensors, est, win, init)
    X = X.copy()

    cost = mh_cost(sys, sensors, est, win, X)
    trace = [cost]
    for iteration in range(max_iter):
        grad = mh_cost_gradient(sys, sensors, est, win, X)
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= tol * (1.0 + abs(cost)):
            return X, SolveDiagnostics(iteration, cost, gnorm, True, trace)

        hess = mh_cost_hessian(sys, sensors, est, win, X)
        try:
            step = -sla.cho_solve(sla.cho_factor(hess), grad)
        except np.linalg.LinAlgError:
            step = -grad
        slope = float(grad @ step)
        if slope >= 0.0:        # ill-conditioned solve; fall back to steepest descent
            step = -grad
            slope = -gnorm * gnorm

        scale, accepted = 1.0, False
        flat = step.reshape(W, n)
        while scale > 1e-20:
            candidate = X + scale * flat
            new_cost = mh_cost(sys, sensors, est, win, candidate)
            if new_cost <= cost + 1e-4 * scale * slope and new_cost < cost:
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            # cost can no longer strictly decrease; the Newton decrement
            # -slope/2 bounds the gap to the optimum, so a machine-level
            # decrement certifies the minimum even when sharp likelihood
            # terms keep the gradient floor above tol
            if -slope <= 1e-10 * (1.0 + abs(cost)):
                return X, SolveDiagnostics(iteration, cost, gnorm, True, trace)
            diagnostics = SolveDiagnostics(iteration, cost, gnorm, False, trace)
            raise ConvergenceError("window solve stalled before reaching tolerance",
                                   diagnostics, X)
        X, cost = candidate, new_cost
        trace.append(cost)

    grad = mh_cost_gradient(sys, sensors, est, win, X)
    diagnostics = SolveDiagnostics(max_iter, cost, float(np.linalg.norm(grad)),
                                   False, trace)
    raise ConvergenceError(f"window solve did not converge in {max_iter} iterations",
                           diagnostics, X)


def advance(est, solved, win, horizon, prior_mean, arrival_weight):
    """Estimator state for the next time step given this window's solution.

    Once the window is full the anchor moves to the second block of the
    solved trajectory (the smoothed estimate of the state that starts the
    next window); before that the prior mean keeps anchoring the growing
    full-information problem, and the anchor weight switches from the
    prior weight to the arrival weight when the first full window forms.
    """
    solved = np.atleast_2d(np.asarray(solved, dtype=float))
    n = solved.shape[1]
    if win.t >= horizon:
        anchor = solved[1].copy()
        weight = as_weight(arrival_weight, n)
    else:
        anchor = np.asarray(prior_mean, dtype=float).copy()
        weight = (as_weight(arrival_weight, n) if win.t + 1 >= horizon
                  else est.anchor_weight)
    return EstimatorState(anchor, weight, solved)


class MovingHorizonEstimator:
    """Recursive driver: window bookkeeping, warm starts, anchor updates.

    One instance is single-threaded mutable state; run independent
    instances for concurrent experiments. The reported estimate at each
    step is the smoothed window tail.
    """

    def __init__(self, system, sensors, horizon, arrival_weight,
                 tol=1e-7, max_iter=500):
        if horizon < 1:
            raise ValueError("horizon must be >= 1 (the recursion anchors on "
                             "the second block of each solved window)")
        self.system = system
        self.sensors = list(sensors)
        self.horizon = int(horizon)
        n = system.A.shape[0]
        self.arrival_weight = as_weight(arrival_weight, n)
        self.prior_mean = np.asarray(system.prior_mean, dtype=float)
        self.prior_weight = as_weight(system.prior_weight, n)
        self.tol = tol
        self.max_iter = max_iter
        self.t = -1
        self._y = []
        self._u = []
        self.state = EstimatorState(self.prior_mean.copy(), self.prior_weight,
                                    self.prior_mean[None, :])

    def _warm_start(self, grew):
        prev = self.state.trajectory
        if self.t == 0:
            return self.prior_mean[None, :].copy()
        u_last = self._u[-1]
        prediction = self.system.A @ prev[-1] + self.system.B @ u_last
        base = prev if grew else prev[1:]
        return np.vstack([base, prediction[None, :]])

    def step(self, y_t, u_prev=None):
        """Ingest the newest measurement (and the input applied since the
        previous step), solve the window, and return the smoothed tail
        estimate together with solver diagnostics."""
        self.t += 1
        if self.t > 0:
            if u_prev is None:
                u_prev = self.system.input_vector
            self._u.append(np.asarray(u_prev, dtype=float))
        self._y.append(np.asarray(y_t, dtype=float))
        grew = len(self._y) <= self.horizon + 1
        if len(self._y) > self.horizon + 1:
            self._y.pop(0)
            self._u.pop(0)

        m = self.system.B.shape[1]
        u_seq = (np.array(self._u) if self._u else np.zeros((0, m)))
        window = MeasurementWindow(np.array(self._y), u_seq, t=self.t)
        init = self._warm_start(grew)
        try:
            solved, diag = solve_window(self.system, self.sensors, self.state, window,
                                        init=init, tol=self.tol, max_iter=self.max_iter)
        except ConvergenceError as err:
            # keep the recursion resumable: advance on the best iterate, then report
            self.state = advance(self.state, err.best, window, self.horizon,
                                 self.prior_mean, self.arrival_weight)
            raise
        self.state = advance(self.state, solved, window, self.horizon,
                             self.prior_mean, self.arrival_weight)
        return solved[0].copy(), diag
