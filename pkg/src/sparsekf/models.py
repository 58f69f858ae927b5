"""Component-based dynamical models and the linear observation operator.

A component-based model can evaluate any requested subset of output state
entries from the subset of inputs in their dependency stencil, without
computing the full state. Every model keeps a running count of scalar output
entries it has evaluated; the filters read that counter to report per-cycle
computational load.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .sparse_core import SparseVector


class StencilError(ValueError):
    """Sparse model input does not cover the stencil of a requested output."""


class ComponentModel:
    """Base contract for component-based discrete models.

    Subclasses implement ``step``, ``step_components`` and
    ``dependency_stencil``; batched variants default to loops over the
    single-state methods and may be overridden with vectorized versions.
    ``dt`` is the full step size; passing ``dt=`` to the step methods
    evaluates one step of a different size (used for inner-loop refinement).
    """

    def __init__(self, n, dt):
        self.n = int(n)
        self.dt = float(dt)
        self._evals = 0

    @property
    def evaluation_count(self):
        """Running count of scalar output entries evaluated so far."""
        return self._evals

    def reset_evaluation_count(self):
        self._evals = 0

    # -- single-state surface (subclass responsibility) --

    def step(self, x, dt=None):
        raise NotImplementedError

    def step_components(self, x, out_indices, dt=None):
        raise NotImplementedError

    def dependency_stencil(self, i):
        """Input indices needed to compute output entry i of one step."""
        raise NotImplementedError

    # -- derived operations --

    def refined_step(self, x, s, n_p):
        """Advance ``s`` of ``n_p`` equal sub-steps of one full step."""
        n_p = int(n_p)
        s = int(s)
        if n_p < 1:
            raise ValueError("n_p must be >= 1")
        if not 0 <= s <= n_p:
            raise ValueError(f"s must be in [0, {n_p}], got {s}")
        sub = self.dt / n_p
        x = np.asarray(x, dtype=float)
        for _ in range(s):
            x = self.step(x, dt=sub)
        return x

    def step_many(self, X, dt=None):
        X = np.asarray(X, dtype=float)
        return np.stack([self.step(x, dt=dt) for x in X])

    def step_components_many(self, X, out_indices, dt=None):
        """Per-row component evaluation; returns values aligned with out_indices."""
        X = np.asarray(X, dtype=float)
        out_indices = np.asarray(out_indices, dtype=np.intp)
        vals = np.empty(out_indices.shape)
        for b in range(X.shape[0]):
            sv = self.step_components(X[b], out_indices[b], dt=dt)
            vals[b] = sv.to_dense()[out_indices[b]]
        return vals


@lru_cache(maxsize=8)
def _cyclic_shifts(n):
    idx = np.arange(n)
    return (idx + 1) % n, (idx - 2) % n, (idx - 1) % n


def lorenz96_rhs(x, forcing):
    """Lorenz-96 right-hand side with cyclic indexing (vectorized on the last axis).

    dx_i/dt = (x_{i+1} - x_{i-2}) * x_{i-1} - x_i + F
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] < 4:
        raise ValueError("the advection stencil i-2..i+1 needs n >= 4")
    ip1, im2, im1 = _cyclic_shifts(x.shape[-1])
    return (x[..., ip1] - x[..., im2]) * x[..., im1] - x + forcing


def rk4_step(x, dt, forcing):
    """Classical 4th-order Runge-Kutta step of the Lorenz-96 ODE."""
    k1 = lorenz96_rhs(x, forcing)
    k2 = lorenz96_rhs(x + 0.5 * dt * k1, forcing)
    k3 = lorenz96_rhs(x + 0.5 * dt * k2, forcing)
    k4 = lorenz96_rhs(x + dt * k3, forcing)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


# Stencil of one RK4 step: the one-stage window {i-2..i+1} widened once per
# remaining stage, giving {i-8..i+4} regardless of the step size.
_RK4_STENCIL_OFFSETS = np.arange(-8, 5)


class Lorenz96Model(ComponentModel):
    """Cyclic Lorenz-96 dynamics advanced with RK4 steps.

    Component evaluations run the same vectorized update and restrict the
    output, so requested entries are bit-identical to the full step.
    """

    def __init__(self, n=40, forcing=8.0, dt=0.025):
        if n < 4:
            raise ValueError(f"Lorenz-96 needs n >= 4, got {n}")
        super().__init__(n, dt)
        self.forcing = float(forcing)

    def rhs(self, x):
        return lorenz96_rhs(np.asarray(x, dtype=float), self.forcing)

    def step(self, x, dt=None):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"state must have shape ({self.n},), got {x.shape}")
        self._evals += self.n
        return rk4_step(x, self.dt if dt is None else float(dt), self.forcing)

    def step_many(self, X, dt=None):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n:
            raise ValueError(f"batch must have shape (B, {self.n}), got {X.shape}")
        self._evals += X.shape[0] * self.n
        return rk4_step(X, self.dt if dt is None else float(dt), self.forcing)

    def dependency_stencil(self, i):
        return np.unique((int(i) + _RK4_STENCIL_OFFSETS) % self.n)

    def _check_coverage(self, x, out_indices):
        needed = np.unique((out_indices[:, None] + _RK4_STENCIL_OFFSETS[None, :]) % self.n)
        if not np.isin(needed, x.indices).all():
            missing = needed[~np.isin(needed, x.indices)]
            raise StencilError(
                f"sparse input does not cover the dependency stencil; missing {missing.tolist()}"
            )

    def step_components(self, x, out_indices, dt=None):
        out = np.asarray(out_indices, dtype=np.intp).ravel()
        if out.size and (out.min() < 0 or out.max() >= self.n):
            raise ValueError("output index out of range")
        if out.size == 0:
            return SparseVector.empty(self.n)
        if isinstance(x, SparseVector):
            self._check_coverage(x, out)
            xd = x.to_dense()
        else:
            xd = np.asarray(x, dtype=float)
            if xd.shape != (self.n,):
                raise ValueError(f"state must have shape ({self.n},), got {xd.shape}")
        y = rk4_step(xd, self.dt if dt is None else float(dt), self.forcing)
        self._evals += out.size
        return SparseVector(self.n, out, y[out])

    def step_components_many(self, X, out_indices, dt=None):
        X = np.asarray(X, dtype=float)
        out_indices = np.asarray(out_indices, dtype=np.intp)
        if X.shape[0] != out_indices.shape[0]:
            raise ValueError("one output index row per state required")
        Y = rk4_step(X, self.dt if dt is None else float(dt), self.forcing)
        self._evals += out_indices.size
        return np.take_along_axis(Y, out_indices, axis=1)


class ObservationOperator:
    """Linear selection of a fixed subset of state entries.

    The default observes every other entry starting at the first, i.e. for
    n = 40 the 20 odd positions in 1-based counting. The Jacobian is the
    constant selection matrix.
    """

    def __init__(self, n, indices=None):
        self.n = int(n)
        if indices is None:
            indices = np.arange(0, self.n, 2)
        indices = np.asarray(indices, dtype=np.intp).ravel()
        if indices.size == 0:
            raise ValueError("at least one observed index required")
        if indices.min() < 0 or indices.max() >= self.n:
            raise ValueError("observed index out of range")
        if np.unique(indices).size != indices.size:
            raise ValueError("duplicate observed indices")
        self.indices = indices

    @property
    def m(self):
        return self.indices.size

    def observe(self, x):
        """Select observed entries; works on a state or a batch of states."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n:
            raise ValueError(f"state dimension must be {self.n}, got {x.shape[-1]}")
        return x[..., self.indices]

    def jacobian(self):
        H = np.zeros((self.m, self.n))
        H[np.arange(self.m), self.indices] = 1.0
        return H
