"""Fixed-step classical Runge-Kutta integration, batch-first.

States are arrays of shape (..., d) and vector fields map (..., d) to
(..., d), so a whole bundle of initial conditions integrates in lockstep.
The same fourth-order stepper drives trajectory generation, group flows,
variational (tangent) propagation, and the parameter-sensitivity systems, so
that quantities differentiated through the flow see exactly the discrete map
that produced the values.
"""

from __future__ import annotations

import numpy as np


class IntegrationError(RuntimeError):
    """Integration hit a non-finite state; `step` is the failing step index."""

    def __init__(self, step, message=None):
        super().__init__(message or
                         f"non-finite state at integration step {step}")
        self.step = step


def rk4_step(f, y, dt):
    """One classical RK4 update."""
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_final(f, y0, total_time, steps):
    """Endpoint of `steps` RK4 substeps; non-finite values propagate silently."""
    y = np.asarray(y0, dtype=float)
    dt = total_time / steps
    for _ in range(steps):
        y = rk4_step(f, y, dt)
    return y


def rk4_record(f, y0, dt_internal, n_internal, stride, check_finite=True):
    """Integrate n_internal steps, recording every stride-th state.

    Returns an array of shape (n_internal // stride + 1, ...) that includes
    the initial state.  With check_finite, a non-finite state aborts with the
    offending internal step index.
    """
    if n_internal % stride != 0:
        raise ValueError("n_internal must be a multiple of stride")
    y = np.asarray(y0, dtype=float)
    out = np.empty((n_internal // stride + 1,) + y.shape)
    out[0] = y
    for step in range(1, n_internal + 1):
        y = rk4_step(f, y, dt_internal)
        if check_finite and not np.all(np.isfinite(y)):
            raise IntegrationError(step)
        if step % stride == 0:
            out[step // stride] = y
    return out


def rk4_tree(f, state, total_time, steps):
    """RK4 on a tuple of arrays evolving jointly.

    f maps a tuple of arrays to a tuple of arrays of the same shapes.  Used
    for variational and parameter-sensitivity systems, which must share the
    base trajectory's discretization bit for bit.
    """
    state = tuple(np.asarray(s, dtype=float) for s in state)
    dt = total_time / steps

    def axpy(y, a, k):
        return tuple(yi + a * ki for yi, ki in zip(y, k))

    for _ in range(steps):
        k1 = f(state)
        k2 = f(axpy(state, 0.5 * dt, k1))
        k3 = f(axpy(state, 0.5 * dt, k2))
        k4 = f(axpy(state, dt, k3))
        state = tuple(
            y + (dt / 6.0) * (a + 2.0 * b + 2.0 * c + d)
            for y, a, b, c, d in zip(state, k1, k2, k3, k4))
    return state


def rk4_flow_jvp(f, jac, y0, u0, total_time, steps):
    """Flow endpoint and its Jacobian-vector product along u0.

    Propagates the variational equation du/dt = J_f(y) u next to the state,
    rather than finite-differencing the flow.
    """
    def rhs(state):
        y, u = state
        J = jac(y)
        return f(y), np.einsum("...ij,...j->...i", J, u)

    y_end, u_end = rk4_tree(rhs, (y0, u0), total_time, steps)
    return y_end, u_end


def rk4_flow_jacobian(f, jac, y0, total_time, steps):
    """Flow endpoint and full Jacobian d flow / d y0, shape (..., d, d)."""
    y0 = np.asarray(y0, dtype=float)
    d = y0.shape[-1]
    eye = np.broadcast_to(np.eye(d), y0.shape[:-1] + (d, d)).copy()

    def rhs(state):
        y, J = state
        Jy = jac(y)
        return f(y), np.einsum("...ik,...kj->...ij", Jy, J)

    y_end, J_end = rk4_tree(rhs, (y0, eye), total_time, steps)
    return y_end, J_end
