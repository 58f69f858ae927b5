"""Shared test fixtures: a linear component model and closed-form KF oracles."""

import numpy as np

from sparsekf.models import ComponentModel
from sparsekf.sparse_core import SparseVector


class LinearModel(ComponentModel):
    """Discrete linear map x -> A @ x satisfying the component-model contract.

    Sub-step refinement has no meaning for a discrete map; tests only use
    n_p = 1, where the dt argument is ignored.
    """

    def __init__(self, A, dt=1.0):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        super().__init__(A.shape[0], dt)
        self.A = A

    def step(self, x, dt=None):
        x = np.asarray(x, dtype=float)
        self._evals += self.n
        return self.A @ x

    def step_many(self, X, dt=None):
        X = np.asarray(X, dtype=float)
        self._evals += X.size
        return X @ self.A.T

    def step_components(self, x, out_indices, dt=None):
        out = np.asarray(out_indices, dtype=np.intp).ravel()
        xd = x.to_dense() if isinstance(x, SparseVector) else np.asarray(x, dtype=float)
        y = self.A @ xd
        self._evals += out.size
        return SparseVector(self.n, out, y[out])

    def dependency_stencil(self, i):
        return np.nonzero(self.A[i])[0]


def scalar_kf(a, r, q, x0, p0, obs):
    """Closed-form scalar Kalman filter for x(k) = a x(k-1), y = x + noise."""
    xs, ps = [], []
    x, p = float(x0), float(p0)
    for y in obs:
        xb = a * x
        pb = a * a * p + q
        k = pb / (pb + r)
        x = xb + k * (float(y) - xb)
        p = (1.0 - k) * pb
        xs.append(x)
        ps.append(p)
    return np.array(xs), np.array(ps)


def dense_kf_cycle(x, P, A, H, Q, R, y):
    """One predict+update of the textbook (dense, linear) Kalman filter."""
    xb = A @ x
    Pb = A @ P @ A.T + Q
    S = H @ Pb @ H.T + R
    K = np.linalg.solve(S, H @ Pb).T
    xa = xb + K @ (y - H @ xb)
    Pa = (np.eye(len(x)) - K @ H) @ Pb
    return xa, Pa
