"""Shared fixtures-by-hand for estimator tests: random instances and oracles.

The oracles here deliberately avoid the package's solver path: quadratic
problems are solved by stacked least squares, derivatives by central finite
differences.
"""

from types import SimpleNamespace

import numpy as np
import scipy.linalg as sla

from binmhe.estimator import BinarySensor, EstimatorState, MeasurementWindow


def spd_matrix(rng, n, scale=1.0):
    m = rng.standard_normal((n, n))
    return scale * (m @ m.T / n + np.eye(n))


def random_system(rng, n=3, m=2, weight_scale=1.0):
    a = rng.standard_normal((n, n))
    a *= 0.9 / max(1.0, np.max(np.abs(np.linalg.eigvals(a))))
    return SimpleNamespace(
        A=a,
        B=rng.standard_normal((n, m)),
        input_vector=rng.standard_normal(m),
        process_weight=spd_matrix(rng, n, weight_scale),
        prior_mean=rng.standard_normal(n),
        prior_weight=spd_matrix(rng, n, weight_scale),
    )


def random_sensors(rng, n, count):
    return [
        BinarySensor(
            c_row=rng.standard_normal(n),
            offset=float(rng.normal(scale=0.3)),
            threshold=float(rng.normal()),
            noise_var=float(rng.uniform(0.3, 2.0)),
        )
        for _ in range(count)
    ]


def random_instance(rng, n=3, horizon=2, n_sensors=4, m=2, weight_scale=1.0):
    """A full-window problem with random data: (sys, sensors, est, win)."""
    sys = random_system(rng, n=n, m=m, weight_scale=weight_scale)
    sensors = random_sensors(rng, n, n_sensors)
    steps = horizon + 1
    win = MeasurementWindow(
        y=rng.integers(0, 2, size=(steps, n_sensors)).astype(float),
        u_seq=rng.standard_normal((steps - 1, m)),
        t=horizon,
    )
    est = EstimatorState(
        anchor=rng.standard_normal(n),
        anchor_weight=spd_matrix(rng, n, weight_scale),
        trajectory=np.tile(sys.prior_mean, (steps, 1)),
    )
    return sys, sensors, est, win


def quadratic_ls_solution(sys, est, win):
    """Closed-form minimizer of the sensor-free window cost via stacked
    least squares (independent of the Newton path)."""
    steps = len(win)
    n = sys.A.shape[0]
    psi_root = sla.cholesky(est.anchor_weight + 0.0, lower=False)
    rows = [np.zeros((n, steps * n))]
    rows[0][:, :n] = psi_root
    rhs = [psi_root @ est.anchor]
    if steps > 1:
        q_root = sla.cholesky(np.asarray(sys.process_weight, dtype=float), lower=False)
        for k in range(steps - 1):
            block = np.zeros((n, steps * n))
            block[:, k * n:(k + 1) * n] = -q_root @ sys.A
            block[:, (k + 1) * n:(k + 2) * n] = q_root
            rows.append(block)
            rhs.append(q_root @ (sys.B @ win.u_seq[k]))
    design = np.vstack(rows)
    target = np.concatenate(rhs)
    solution, *_ = np.linalg.lstsq(design, target, rcond=None)
    return solution.reshape(steps, n)


def fd_gradient(fun, x, h=1e-6):
    x = np.asarray(x, dtype=float).ravel()
    grad = np.zeros_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = h
        grad[i] = (fun(x + step) - fun(x - step)) / (2 * h)
    return grad


def fd_hessian(grad_fun, x, h=1e-6):
    x = np.asarray(x, dtype=float).ravel()
    hess = np.zeros((x.size, x.size))
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = h
        hess[:, i] = (grad_fun(x + step) - grad_fun(x - step)) / (2 * h)
    return 0.5 * (hess + hess.T)
