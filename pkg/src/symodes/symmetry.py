"""Point-symmetry generators, group elements, consistency checks, and losses.

A generator is a time-independent vector field v on state space, given either
as a matrix (v(x) = L x) or as symbolic components.  Exponentiating a
generator for a parameter eps yields a group element g = exp(eps v) acting on
states; linear generators exponentiate by matrix exponential, symbolic ones
by integrating dy/ds = v(y) for s in [0, eps].

For dynamics h, exact symmetry can be written four ways (commutator of fields,
equivariance of h under g, equivariance of the time-tau flow under g, and the
flow-Jacobian pushforward of v), each of which becomes a relative residual
loss here:

    igie:  |J_v h - J_h v|^2        / |J_v h|^2
    fgie:  |J_g h - h(g x)|^2       / |J_g h|^2
    igfe:  |J_f v - v(f(x))|^2      / |J_f v|^2
    fgfe:  |f(g x) - g f(x)|^2      / |f(g x) - f(x)|^2

igie and igfe need no group element; only igie needs second derivatives of the
learned dynamics; igfe and fgfe integrate the learned flow; fgie and fgfe
admit precomputed transforms of the data.  Losses average the per-point,
per-generator ratios; points whose denominator underflows DENOM_TOL are
skipped and counted instead of clamped.

For models that are linear in their parameters, h(x) = W Theta(x), every loss
also has an analytic gradient in W, obtained by propagating parameter
sensitivities through the same discrete Runge-Kutta map that computes the
values (finite differences appear only in tests).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np
import scipy.linalg

from .expressions import Expr, differentiate, parse, to_string
from .integrate import (IntegrationError, rk4_final, rk4_flow_jacobian,
                        rk4_flow_jvp, rk4_tree)

DENOM_TOL = 1e-30
DEFAULT_EPS = 0.1
DEFAULT_FLOW_STEPS = 64

LOSS_KINDS = ("igfe", "fgfe", "fgie", "igie")


class DegenerateLossError(ValueError):
    """Every point in a loss batch had an underflowing denominator."""


def matrix_exponential(A):
    """exp(A) by scaling-and-squaring with Pade approximation."""
    return scipy.linalg.expm(np.asarray(A, dtype=float))


class Generator:
    """Infinitesimal symmetry generator, linear or symbolic."""

    def __init__(self, dim, matrix=None, components=None, label=""):
        self.dim = int(dim)
        self.label = label
        if (matrix is None) == (components is None):
            raise ValueError("provide exactly one of matrix or components")
        if matrix is not None:
            matrix = np.asarray(matrix, dtype=float)
            if matrix.shape != (self.dim, self.dim):
                raise ValueError(f"matrix must be {(self.dim, self.dim)}")
            self.matrix = matrix
            self.components = None
            self._jac_exprs = None
        else:
            comps = []
            for c in components:
                comps.append(parse(c, self.dim) if isinstance(c, str) else c)
            if len(comps) != self.dim:
                raise ValueError(f"need {self.dim} components")
            self.matrix = None
            self.components = tuple(comps)
            self._jac_exprs = [[differentiate(c, j) for j in range(self.dim)]
                               for c in comps]

    @classmethod
    def linear(cls, matrix, label=""):
        matrix = np.asarray(matrix, dtype=float)
        return cls(matrix.shape[0], matrix=matrix, label=label)

    @classmethod
    def symbolic(cls, components, dim, label=""):
        return cls(dim, components=components, label=label)

    @property
    def is_linear(self):
        return self.matrix is not None

    def __call__(self, X):
        """v(X) for X of shape (..., d)."""
        X = np.asarray(X, dtype=float)
        if self.is_linear:
            return X @ self.matrix.T
        out = np.empty_like(X)
        for i, c in enumerate(self.components):
            out[..., i] = c(X)
        return out

    def jacobian(self, X):
        """J_v(X), shape (..., d, d)."""
        X = np.asarray(X, dtype=float)
        if self.is_linear:
            return np.broadcast_to(self.matrix,
                                   X.shape[:-1] + (self.dim, self.dim)).copy()
        out = np.empty(X.shape[:-1] + (self.dim, self.dim))
        for i in range(self.dim):
            for j in range(self.dim):
                out[..., i, j] = self._jac_exprs[i][j](X)
        return out

    def to_config(self):
        if self.is_linear:
            cfg = {"kind": "linear", "matrix": self.matrix.tolist()}
        else:
            cfg = {"kind": "symbolic",
                   "components": [to_string(c) for c in self.components]}
        if self.label:
            cfg["label"] = self.label
        return cfg

    @classmethod
    def from_config(cls, cfg, dim):
        kind = cfg.get("kind")
        label = cfg.get("label", "")
        if kind == "linear":
            return cls(dim, matrix=cfg["matrix"], label=label)
        if kind == "symbolic":
            return cls(dim, components=cfg["components"], label=label)
        raise ValueError(f"unknown generator kind {kind!r}")

    def __repr__(self):
        if self.is_linear:
            return f"Generator(linear, d={self.dim}, label={self.label!r})"
        comps = ", ".join(to_string(c) for c in self.components)
        return f"Generator([{comps}], label={self.label!r})"


class GroupElement:
    """Finite transform g = exp(eps * v) of a generator v."""

    def __init__(self, generator, eps, steps=DEFAULT_FLOW_STEPS):
        self.generator = generator
        self.eps = float(eps)
        self.steps = int(steps)
        self._A = (matrix_exponential(self.eps * generator.matrix)
                   if generator.is_linear else None)

    def transform(self, X):
        """g . X; integrates the generator flow for symbolic generators."""
        X = np.asarray(X, dtype=float)
        if self._A is not None:
            return X @ self._A.T
        if self.eps == 0.0:
            return X.copy()
        Y = rk4_final(self.generator, X, self.eps, self.steps)
        if not np.all(np.isfinite(Y)):
            raise IntegrationError(
                self.steps, "group flow diverged before reaching eps")
        return Y

    def jacobian(self, X):
        """J_g(X), shape (..., d, d), via the variational equation."""
        X = np.asarray(X, dtype=float)
        d = self.generator.dim
        if self._A is not None:
            return np.broadcast_to(self._A, X.shape[:-1] + (d, d)).copy()
        if self.eps == 0.0:
            return np.broadcast_to(np.eye(d), X.shape[:-1] + (d, d)).copy()
        _, J = rk4_flow_jacobian(self.generator, self.generator.jacobian,
                                 X, self.eps, self.steps)
        if not np.all(np.isfinite(J)):
            raise IntegrationError(
                self.steps, "group flow Jacobian diverged")
        return J


def infinitesimal_action(gen, X):
    """(v(X), J_v(X)) for a generator."""
    return gen(X), gen.jacobian(X)


@runtime_checkable
class DynamicsOracle(Protocol):
    """What the losses need from a dynamical system.

    h and h_jacobian evaluate the vector field and its state Jacobian at a
    batch of points; flow and flow_jvp integrate the dynamics for time tau
    (flow_jvp also pushes a tangent vector through the variational equation
    and returns both endpoint and pushed vector).
    """

    dim: int

    def h(self, X): ...

    def h_jacobian(self, X): ...

    def flow(self, X, tau, steps=DEFAULT_FLOW_STEPS): ...

    def flow_jvp(self, X, U, tau, steps=DEFAULT_FLOW_STEPS): ...


def check_infinitesimal_criterion(oracle, generators, points, tol=1e-8):
    """Normalized commutator residuals |J_h v - J_v h| / (1 + |J_v h|).

    Returns a dict with max/mean residuals overall and per generator, and a
    `consistent` flag (max <= tol).
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    h = oracle.h(X)
    Jh = oracle.h_jacobian(X)
    per_gen = []
    all_res = []
    for gen in generators:
        v, Jv = infinitesimal_action(gen, X)
        lhs = np.einsum("...ij,...j->...i", Jh, v)
        rhs = np.einsum("...ij,...j->...i", Jv, h)
        res = np.linalg.norm(lhs - rhs, axis=-1) / (
            1.0 + np.linalg.norm(rhs, axis=-1))
        per_gen.append({
            "label": gen.label or gen.to_config()["kind"],
            "max": float(res.max()),
            "mean": float(res.mean()),
        })
        all_res.append(res)
    if not all_res:
        raise ValueError("no generators to check")
    stack = np.concatenate(all_res)
    return {
        "max": float(stack.max()),
        "mean": float(stack.mean()),
        "tol": float(tol),
        "consistent": bool(stack.max() <= tol),
        "per_generator": per_gen,
    }


# -- loss values (any DynamicsOracle) -----------------------------------------


@dataclass
class LossDetail:
    value: float
    used: int
    skipped: int


def _finish(ratios_masks, detail):
    used = 0
    skipped = 0
    total = 0.0
    for ratio, mask in ratios_masks:
        used += int(mask.sum())
        skipped += int((~mask).sum())
        if mask.any():
            total += float(ratio[mask].sum())
    if used == 0:
        if skipped == 0:
            result = LossDetail(0.0, 0, 0)  # no generators
        else:
            raise DegenerateLossError(
                "all points were skipped (denominators below tolerance)")
    else:
        result = LossDetail(total / used, used, skipped)
    return result if detail else result.value


def _ratio(num_vec, den_vec):
    num = np.sum(num_vec * num_vec, axis=-1)
    den = np.sum(den_vec * den_vec, axis=-1)
    mask = den >= DENOM_TOL
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(mask, num / np.where(mask, den, 1.0), 0.0)
    return ratio, mask


def loss_igie(oracle, generators, X, detail=False):
    """Commutator defect of h against each generator, relative form."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    h = oracle.h(X)
    Jh = oracle.h_jacobian(X)
    parts = []
    for gen in generators:
        v, Jv = infinitesimal_action(gen, X)
        jvh = np.einsum("nij,nj->ni", Jv, h)
        jhv = np.einsum("nij,nj->ni", Jh, v)
        parts.append(_ratio(jvh - jhv, jvh))
    return _finish(parts, detail)


def loss_fgie(oracle, generators, X, eps=DEFAULT_EPS,
              steps=DEFAULT_FLOW_STEPS, transforms=None, detail=False):
    """Equivariance defect of h under the finite transforms exp(eps v)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    h = oracle.h(X)
    if transforms is None:
        transforms = precompute_transforms(generators, X, eps, steps)
    parts = []
    for gx, Jg in transforms:
        jgh = np.einsum("nij,nj->ni", Jg, h)
        parts.append(_ratio(jgh - oracle.h(gx), jgh))
    return _finish(parts, detail)


def loss_igfe(oracle, generators, X, tau, steps=DEFAULT_FLOW_STEPS,
              detail=False):
    """Pushforward defect: flow Jacobian applied to v versus v at the endpoint."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    parts = []
    for gen in generators:
        y_end, jvp = oracle.flow_jvp(X, gen(X), tau, steps)
        parts.append(_ratio(jvp - gen(y_end), jvp))
    return _finish(parts, detail)


def loss_fgfe(oracle, generators, X, tau, eps=DEFAULT_EPS,
              steps=DEFAULT_FLOW_STEPS, detail=False):
    """Flow equivariance defect under the finite transforms exp(eps v)."""
    if eps == 0.0:
        raise ValueError("fgfe needs a nontrivial group element (eps != 0)")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    fx = oracle.flow(X, tau, steps)
    parts = []
    for gen in generators:
        g = GroupElement(gen, eps, steps)
        fgx = oracle.flow(g.transform(X), tau, steps)
        gfx = g.transform(fx)
        parts.append(_ratio(fgx - gfx, fgx - fx))
    return _finish(parts, detail)


def precompute_transforms(generators, X, eps=DEFAULT_EPS,
                          steps=DEFAULT_FLOW_STEPS):
    """(g . X, J_g(X)) per generator; reusable across fits on fixed data."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = []
    for gen in generators:
        g = GroupElement(gen, eps, steps)
        out.append((g.transform(X), g.jacobian(X)))
    return out


def symmetry_loss(kind, oracle, generators, X, tau=None, eps=DEFAULT_EPS,
                  steps=DEFAULT_FLOW_STEPS, transforms=None, detail=False):
    """Dispatch on loss kind; tau is required for the flow-based losses."""
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {kind!r}; expected {LOSS_KINDS}")
    if kind == "igie":
        return loss_igie(oracle, generators, X, detail=detail)
    if kind == "fgie":
        return loss_fgie(oracle, generators, X, eps=eps, steps=steps,
                         transforms=transforms, detail=detail)
    if tau is None:
        raise ValueError(f"loss {kind!r} integrates the flow and needs tau")
    if kind == "igfe":
        return loss_igfe(oracle, generators, X, tau, steps=steps,
                         detail=detail)
    return loss_fgfe(oracle, generators, X, tau, eps=eps, steps=steps,
                     detail=detail)


# -- analytic gradients for W-linear models -----------------------------------
#
# The model is h(x) = W Theta(x) with W of shape (d, p).  Sensitivities are
# carried as tensors S[n, i, mu, a] = d y_i / d W_{a mu}, so the direct term
# of d(W Theta)/dW is Theta outer identity.


class _Quotient:
    """Accumulates mean(num/den) and its W-gradient over points and gens."""

    def __init__(self, shape_dp):
        self.total = 0.0
        self.grad = np.zeros(shape_dp)
        self.used = 0
        self.skipped = 0

    def add(self, u, du, s, ds):
        """u, s: (n, d) residual/denominator vectors; du, ds: (n, d, p, d)."""
        num = np.sum(u * u, axis=-1)
        den = np.sum(s * s, axis=-1)
        mask = den >= DENOM_TOL
        self.used += int(mask.sum())
        self.skipped += int((~mask).sum())
        if not mask.any():
            return
        u, du, s, ds = u[mask], du[mask], s[mask], ds[mask]
        num, den = num[mask], den[mask]
        self.total += float(np.sum(num / den))
        dnum = 2.0 * np.einsum("ni,nima->nma", u, du)
        dden = 2.0 * np.einsum("ni,nima->nma", s, ds)
        g = dnum / den[:, None, None] - (num / den ** 2)[:, None, None] * dden
        self.grad += g.sum(axis=0).T  # (p, d) -> (d, p)

    def result(self):
        if self.used == 0:
            if self.skipped == 0:
                return 0.0, self.grad
            raise DegenerateLossError(
                "all points were skipped (denominators below tolerance)")
        return self.total / self.used, self.grad / self.used


def _direct_term(coefs, d):
    """(n, p) coefficients -> (n, d, p, d) tensor delta_{ia} coefs[n, mu]."""
    return np.einsum("nm,ia->nima", coefs, np.eye(d))


def _flow_with_sensitivity(W, lib, X, tau, steps, V0=None):
    """Integrate y (and optionally a tangent delta) with d/dW sensitivities.

    Returns (y, Sy) or (y, delta, Sy, Sdelta); S arrays have shape
    (n, d, p, d) indexed [point, state, column, row] of W.
    """
    W = np.asarray(W, dtype=float)
    d, p = W.shape
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    Sy0 = np.zeros((n, d, p, d))
    with_delta = V0 is not None

    def rhs(state):
        if with_delta:
            y, de, Sy, Sd = state
        else:
            y, Sy = state
        Th = lib.evaluate(y)
        Jth = lib.jacobian(y)
        Jh = np.einsum("ip,npj->nij", W, Jth)
        fy = Th @ W.T
        fSy = _direct_term(Th, d) + np.einsum("nij,njma->nima", Jh, Sy)
        if not with_delta:
            return fy, fSy
        fde = np.einsum("nij,nj->ni", Jh, de)
        T = np.einsum("ip,npk->nik", W, lib.hessian_vp(y, de))
        fSd = (_direct_term(np.einsum("npj,nj->np", Jth, de), d)
               + np.einsum("nik,nkma->nima", T, Sy)
               + np.einsum("nij,njma->nima", Jh, Sd))
        return fy, fde, fSy, fSd

    if with_delta:
        state = (X, np.asarray(V0, dtype=float), Sy0, Sy0.copy())
    else:
        state = (X, Sy0)
    return rk4_tree(rhs, state, tau, steps)


def symmetry_loss_grad(kind, model, generators, X, tau=None, eps=DEFAULT_EPS,
                       steps=DEFAULT_FLOW_STEPS, transforms=None):
    """(loss, d loss / dW) for a W-linear model; matches symmetry_loss.

    `model` must expose W (d, p) and lib; SindyModel qualifies.  The flow
    losses differentiate the discrete integrator itself, so the gradient is
    exact for the quantity the value path computes.
    """
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {kind!r}; expected {LOSS_KINDS}")
    W = np.asarray(model.W, dtype=float)
    lib = model.lib
    d, p = W.shape
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if not generators:
        return 0.0, np.zeros((d, p))
    acc = _Quotient((d, p))

    if kind == "igie":
        Th = lib.evaluate(X)
        Jth = lib.jacobian(X)
        h = Th @ W.T
        for gen in generators:
            v, Jv = infinitesimal_action(gen, X)
            s = np.einsum("nij,nj->ni", Jv, h)
            jtv = np.einsum("npj,nj->np", Jth, v)
            u = s - jtv @ W.T
            # ds_i/dW_{a mu} = Jv[i, a] Theta_mu; du subtracts the direct
            # term of d(J_h v)/dW
            ds = np.einsum("nia,nm->nima", Jv, Th)
            du = ds - _direct_term(jtv, d)
            acc.add(u, du, s, ds)
    elif kind == "fgie":
        if transforms is None:
            transforms = precompute_transforms(generators, X, eps, steps)
        Th = lib.evaluate(X)
        h = Th @ W.T
        for gx, Jg in transforms:
            Thg = lib.evaluate(gx)
            s = np.einsum("nij,nj->ni", Jg, h)
            u = s - Thg @ W.T
            ds = np.einsum("nia,nm->nima", Jg, Th)
            du = ds - _direct_term(Thg, d)
            acc.add(u, du, s, ds)
    elif kind == "igfe":
        if tau is None:
            raise ValueError("igfe needs tau")
        for gen in generators:
            y, de, Sy, Sd = _flow_with_sensitivity(W, lib, X, tau, steps,
                                                   V0=gen(X))
            Jv_end = gen.jacobian(y)
            u = de - gen(y)
            du = Sd - np.einsum("nij,njma->nima", Jv_end, Sy)
            acc.add(u, du, de, Sd)
    else:  # fgfe
        if tau is None:
            raise ValueError("fgfe needs tau")
        if eps == 0.0:
            raise ValueError("fgfe needs a nontrivial group element")
        for gen in generators:
            g = GroupElement(gen, eps, steps)
            gX = g.transform(X)
            y1, S1 = _flow_with_sensitivity(W, lib, gX, tau, steps)
            y2, S2 = _flow_with_sensitivity(W, lib, X, tau, steps)
            gfx = g.transform(y2)
            Jg2 = g.jacobian(y2)
            u = y1 - gfx
            du = S1 - np.einsum("nij,njma->nima", Jg2, S2)
            w = y1 - y2
            dw = S1 - S2
            acc.add(u, du, w, dw)
    return acc.result()
