"""Equation-discovery engines over a fixed function library.

Four fitters share the data interface (a Dataset or an (X, dX) pair):

* stlsq           -- sequentially thresholded least squares on W.
* equiv_c_fit     -- least squares restricted to the nullspace of the
                     symmetry constraint, with thresholding realized by
                     pinning entries into the constraint itself so every
                     intermediate W stays exactly equivariant.
* equiv_r_fit     -- L-BFGS-B on the masked entries of W minimizing
                     (1/N)||dX - W Theta||_F^2 + lambda * symmetry loss,
                     wrapped in the same sequential thresholding.
* gp_fit          -- genetic programming over expression trees, one
                     evolution per output dimension, with an optional
                     finite-transform penalty computed against transformed
                     data pairs that are built once up front.

All fitters are deterministic given (data, config, seed).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.optimize

from .constraint import assemble_equivariant_basis, materialize
from .dynamics import Dataset, split_rng
from .expressions import Expr, expand, to_string
from .integrate import rk4_final, rk4_flow_jvp
from .library import canonicalize
from .symmetry import (DEFAULT_FLOW_STEPS, DegenerateLossError, GroupElement,
                       symmetry_loss_grad)


@dataclass(frozen=True)
class OptimizerConfig:
    max_iters: int = 500
    grad_tol: float = 1e-8
    memory: int = 10


@dataclass(frozen=True)
class GpConfig:
    population: int = 256
    generations: int = 100
    p_crossover: float = 0.7
    p_subtree: float = 0.2
    p_point: float = 0.1
    max_depth: int = 8
    parsimony: float = 1e-3
    tournament: int = 3
    operators: tuple = ("+", "-", "*", "/", "exp")
    constant_range: tuple = (-2.0, 2.0)
    max_fit_samples: int = 512
    penalty_points: int = 128
    target_mse: float = 1e-12
    seed: int = 0


@dataclass(frozen=True)
class DiscoveryConfig:
    threshold: float = 0.05
    max_rounds: int = 10
    lambda_symm: float = None        # None selects from lambda_grid on val
    loss_kind: str = "igie"
    tau: float = 0.2
    eps: float = 0.1
    flow_steps: int = DEFAULT_FLOW_STEPS
    batch: int = 512
    seed: int = 0
    lambda_grid: tuple = (0.01, 0.1, 1.0)
    optimizer: OptimizerConfig = OptimizerConfig()
    gp: GpConfig = GpConfig()

    def __post_init__(self):
        if self.threshold < 0:
            raise ValueError("threshold must be nonnegative")
        if self.lambda_symm is not None and self.lambda_symm < 0:
            raise ValueError("lambda_symm must be nonnegative")


@dataclass
class SindyModel:
    """Linear-in-library dynamics h(x) = W Theta(x)."""

    lib: object
    W: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        if self.W.ndim != 2 or self.W.shape[1] != self.lib.size:
            raise ValueError(
                f"W must be (d, {self.lib.size}), got {self.W.shape}")

    @property
    def dim(self):
        return self.W.shape[0]

    def h(self, X):
        return self.lib.evaluate(X) @ self.W.T

    def h_jacobian(self, X):
        return np.einsum("ip,...pj->...ij", self.W, self.lib.jacobian(X))

    def flow(self, X, tau, steps=DEFAULT_FLOW_STEPS):
        return rk4_final(self.h, np.atleast_2d(np.asarray(X, float)),
                         tau, steps)

    def flow_jvp(self, X, U, tau, steps=DEFAULT_FLOW_STEPS):
        return rk4_flow_jvp(self.h, self.h_jacobian,
                            np.atleast_2d(np.asarray(X, float)),
                            np.atleast_2d(np.asarray(U, float)), tau, steps)

    def coefficients(self):
        """Per-equation {TermKey: value} over the nonzero entries."""
        out = []
        for row in self.W:
            out.append({self.lib.terms[mu]: float(c)
                        for mu, c in enumerate(row) if c != 0.0})
        return out

    def equations(self):
        return equation_strings(self.lib, self.W)


def equation_strings(lib, W):
    """Human-readable "xi' = ..." lines for a coefficient matrix."""
    labels = lib.labels()
    lines = []
    for i, row in enumerate(np.asarray(W, dtype=float)):
        parts = []
        for mu, c in enumerate(row):
            if c == 0.0:
                continue
            mag = f"{abs(c):.6g}"
            body = mag if labels[mu] == "1" else f"{mag}*{labels[mu]}"
            parts.append(("- " if c < 0 else "+ ") + body)
        if not parts:
            lines.append(f"x{i+1}' = 0")
            continue
        head = parts[0][2:] if parts[0][0] == "+" else "-" + parts[0][2:]
        lines.append(f"x{i+1}' = " + " ".join([head] + parts[1:]))
    return lines


def _regression_data(dataset, split="train"):
    if isinstance(dataset, Dataset):
        return dataset.regression_arrays(split)
    X, dX = dataset
    return np.atleast_2d(np.asarray(X, float)), \
        np.atleast_2d(np.asarray(dX, float))


def _validation_data(dataset):
    if isinstance(dataset, Dataset) and dataset.splits.get("val"):
        return dataset.regression_arrays("val")
    return None


# -- sequential thresholded least squares --------------------------------------


def stlsq(Theta, dX, threshold, max_rounds=10):
    """W minimizing ||dX - Theta W^T|| with hard-thresholded refits.

    Each round solves per-dimension least squares on the surviving support,
    then zeroes entries with |W| < threshold; supports only shrink.  A zero
    threshold is plain least squares.
    """
    Theta = np.asarray(Theta, dtype=float)
    dX = np.asarray(dX, dtype=float)
    if dX.ndim == 1:
        dX = dX[:, None]
    N, p = Theta.shape
    d = dX.shape[1]
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    if N < p:
        warnings.warn(f"only {N} samples for {p} library terms; the fit is "
                      "underdetermined", stacklevel=2)
    active = np.ones((d, p), dtype=bool)

    def refit():
        W = np.zeros((d, p))
        for i in range(d):
            idx = np.flatnonzero(active[i])
            if idx.size == 0:
                continue
            coef, _, rank, _ = np.linalg.lstsq(Theta[:, idx], dX[:, i],
                                               rcond=None)
            if rank < idx.size:
                warnings.warn("rank-deficient support in dimension "
                              f"{i + 1}: using the minimum-norm solution",
                              stacklevel=3)
            W[i, idx] = coef
        return W

    W = refit()
    if threshold == 0.0:
        return W
    for _ in range(max(1, int(max_rounds))):
        small = active & (np.abs(W) < threshold)
        if not small.any():
            break
        active &= ~small
        W = refit()
    return W


# -- constrained regression in the equivariant subspace -------------------------


def equiv_c_fit(dataset, lib, gens, cfg=None):
    """Least squares over the symmetry-constrained coefficient subspace.

    The regression unknown is beta with W = unvec(Q beta), so the problem
    stays linear.  Thresholding pins small entries by appending unit rows to
    the constraint matrix and recomputing the nullspace, which keeps every
    intermediate W exactly equivariant.  A collapsed nullspace returns W = 0.
    """
    cfg = cfg or DiscoveryConfig()
    X, dX = _regression_data(dataset)
    Theta = lib.evaluate(X)
    d = dX.shape[1]
    p = lib.size
    pinned = set()
    nullities = []
    W = np.zeros((d, p))
    for _ in range(max(1, cfg.max_rounds) + 1):
        basis = assemble_equivariant_basis(lib, gens,
                                           pins=tuple(sorted(pinned)))
        r = basis.nullity
        nullities.append(r)
        if r == 0:
            W = np.zeros((d, p))
            break
        A = np.einsum("nm,mir->nir", Theta, basis.Q.reshape(p, d, r))
        beta, *_ = np.linalg.lstsq(A.reshape(-1, r), dX.reshape(-1),
                                   rcond=None)
        W = materialize(basis, beta)
        if cfg.threshold == 0.0:
            break
        small = {(i, mu) for i in range(d) for mu in range(p)
                 if abs(W[i, mu]) < cfg.threshold and (i, mu) not in pinned}
        if not small:
            break
        pinned |= small
    prov = {"method": "equiv-c", "nullities": nullities,
            "pins": sorted(pinned), "threshold": cfg.threshold}
    return SindyModel(lib, W, provenance=prov)


# -- regularized regression ------------------------------------------------------


class _NonFiniteLoss(RuntimeError):
    pass


def _masked_minimize(W0, active, Theta, dX, lib, gens, lam, cfg, Xb):
    """One L-BFGS-B solve over the active entries of W.

    Returns (W, converged, objective).  The per-iteration callback checks
    that the objective never increases across accepted steps; the best
    iterate seen is returned even if the optimizer stops early.
    """
    d, p = W0.shape
    N = Theta.shape[0]
    mask = active
    best = {"f": np.inf, "w": None}
    seen = {}

    def objective(w):
        W = np.zeros((d, p))
        W[mask] = w
        R = dX - Theta @ W.T
        f = float((R * R).sum()) / N
        G = (-2.0 / N) * (R.T @ Theta)
        if lam > 0.0 and gens:
            try:
                ls, Gs = symmetry_loss_grad(
                    cfg.loss_kind, SindyModel(lib, W), gens, Xb,
                    tau=cfg.tau, eps=cfg.eps, steps=cfg.flow_steps)
            except DegenerateLossError as exc:
                raise _NonFiniteLoss(str(exc))
            f += lam * float(ls)
            G = G + lam * Gs
        if not np.isfinite(f) or not np.all(np.isfinite(G)):
            raise _NonFiniteLoss("objective is not finite")
        if f < best["f"]:
            best["f"] = f
            best["w"] = w.copy()
        seen[w.tobytes()] = f
        return f, G[mask]

    prev = [None]

    def callback(xk):
        fk = seen.get(np.asarray(xk).tobytes())
        if fk is None:
            return
        if prev[0] is not None:
            assert fk <= prev[0] + 1e-9 * (1.0 + abs(prev[0])), \
                "objective increased across an accepted step"
        prev[0] = fk

    res = scipy.optimize.minimize(
        objective, W0[mask], jac=True, method="L-BFGS-B", callback=callback,
        options={"maxiter": cfg.optimizer.max_iters,
                 "gtol": cfg.optimizer.grad_tol,
                 "maxcor": cfg.optimizer.memory,
                 "ftol": 1e-15})
    if best["w"] is not None and best["f"] < res.fun:
        w, f = best["w"], best["f"]
    else:
        w, f = res.x, float(res.fun)
    W = np.zeros((d, p))
    W[mask] = w
    return W, bool(res.success), f


def _equiv_r_rounds(Theta, dX, lib, gens, lam, cfg, Xb):
    d = dX.shape[1]
    p = lib.size
    active = np.ones((d, p), dtype=bool)
    W = stlsq(Theta, dX, 0.0)
    lam_eff = lam
    halved = False
    converged = True
    rounds = 0
    for _ in range(max(1, cfg.max_rounds)):
        rounds += 1
        if not active.any():
            W = np.zeros((d, p))
            break
        while True:
            try:
                W, ok, f = _masked_minimize(W * active, active, Theta, dX,
                                            lib, gens, lam_eff, cfg, Xb)
                break
            except _NonFiniteLoss:
                if halved or lam_eff == 0.0:
                    raise
                lam_eff *= 0.5
                halved = True
        converged = converged and ok
        if cfg.threshold == 0.0:
            break
        small = active & (np.abs(W) < cfg.threshold)
        if not small.any():
            break
        active &= ~small
        W = W * active
    return W, {"rounds": rounds, "lambda": lam_eff, "halved": halved,
               "converged": converged}


def equiv_r_fit(dataset, lib, gens, cfg=None):
    """Symmetry-regularized regression with sequential thresholding.

    Minimizes the mean squared equation error plus lambda times the
    configured symmetry loss, evaluated on a fixed 512-state subsample.
    When cfg.lambda_symm is None the weight is picked from cfg.lambda_grid
    by equation error on the validation split (0.1 if there is none).
    """
    cfg = cfg or DiscoveryConfig()
    X, dX = _regression_data(dataset)
    Theta = lib.evaluate(X)
    rng = split_rng(cfg.seed, 0)
    nb = min(cfg.batch, X.shape[0])
    Xb = X[rng.choice(X.shape[0], size=nb, replace=False)]
    if not gens:
        lam_values = (0.0,)
    elif cfg.lambda_symm is not None:
        lam_values = (float(cfg.lambda_symm),)
    else:
        val = _validation_data(dataset)
        lam_values = tuple(cfg.lambda_grid) if val is not None else (0.1,)
    results = []
    for lam in lam_values:
        W, info = _equiv_r_rounds(Theta, dX, lib, gens, lam, cfg, Xb)
        results.append((lam, W, info))
    if len(results) == 1:
        lam, W, info = results[0]
        scores = None
    else:
        Xv, dXv = val
        Tv = lib.evaluate(Xv)
        scores = [float(((dXv - Tv @ W.T) ** 2).mean())
                  for _, W, _ in results]
        lam, W, info = results[int(np.argmin(scores))]
    prov = {"method": "equiv-r", "loss_kind": cfg.loss_kind,
            "lambda_symm": lam, "val_scores": scores, **info}
    return SindyModel(lib, W, provenance=prov)


# -- genetic programming ---------------------------------------------------------

_GP_BINOPS = {"+": Expr.add, "-": Expr.sub, "*": Expr.mul, "/": Expr.div}


def gp_evaluate(e, X):
    """Tree evaluation with protected division: any x/0 evaluates to 1."""
    k = e.kind
    if k == "const":
        return np.full(X.shape[:-1], e.value, dtype=float)
    if k == "var":
        return X[..., e.value]
    if k == "add":
        return gp_evaluate(e.children[0], X) + gp_evaluate(e.children[1], X)
    if k == "sub":
        return gp_evaluate(e.children[0], X) - gp_evaluate(e.children[1], X)
    if k == "mul":
        return gp_evaluate(e.children[0], X) * gp_evaluate(e.children[1], X)
    if k == "div":
        num = gp_evaluate(e.children[0], X)
        den = gp_evaluate(e.children[1], X)
        zero = den == 0.0
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            out = num / np.where(zero, 1.0, den)
        return np.where(zero, 1.0, out)
    if k == "neg":
        return -gp_evaluate(e.children[0], X)
    if k == "exp":
        with np.errstate(over="ignore"):
            return np.exp(gp_evaluate(e.children[0], X))
    if k == "pow":
        return gp_evaluate(e.children[0], X) ** e.value
    raise ValueError(f"unknown node kind {k!r}")


def _random_tree(rng, dim, depth, ops, crange, full):
    if depth <= 1 or (not full and rng.random() < 0.3):
        if rng.random() < 0.5:
            return Expr.var(int(rng.integers(dim)))
        return Expr.const(float(rng.uniform(*crange)))
    op = ops[int(rng.integers(len(ops)))]
    if op == "exp":
        return Expr.exp(_random_tree(rng, dim, depth - 1, ops, crange, full))
    a = _random_tree(rng, dim, depth - 1, ops, crange, full)
    b = _random_tree(rng, dim, depth - 1, ops, crange, full)
    return _GP_BINOPS[op](a, b)


def _initial_population(rng, dim, cfg):
    # ramped half-and-half over depths 2..6
    pop = []
    for i in range(cfg.population):
        depth = min(2 + (i % 5), cfg.max_depth)
        full = (i // 5) % 2 == 0
        pop.append(_random_tree(rng, dim, depth, cfg.operators,
                                cfg.constant_range, full))
    return pop


def _nodes(e):
    out = [e]
    for c in e.children:
        out.extend(_nodes(c))
    return out


def _replace_node(e, k, new):
    if k == 0:
        return new
    k -= 1
    kids = list(e.children)
    for j, c in enumerate(kids):
        n = c.node_count()
        if k < n:
            kids[j] = _replace_node(c, k, new)
            return Expr(e.kind, tuple(kids), e.value)
        k -= n
    raise IndexError("node index out of range")


def _crossover(a, b, rng):
    ka = int(rng.integers(a.node_count()))
    kb = int(rng.integers(b.node_count()))
    return _replace_node(a, ka, _nodes(b)[kb])


def _subtree_mutation(e, rng, dim, cfg):
    k = int(rng.integers(e.node_count()))
    sub = _random_tree(rng, dim, 3, cfg.operators, cfg.constant_range, False)
    return _replace_node(e, k, sub)


def _point_mutation(e, rng, dim, cfg):
    nodes = _nodes(e)
    k = int(rng.integers(len(nodes)))
    t = nodes[k]
    if t.kind == "const":
        width = cfg.constant_range[1] - cfg.constant_range[0]
        new = Expr.const(t.value + 0.1 * width * rng.standard_normal())
    elif t.kind == "var":
        new = Expr.var(int(rng.integers(dim)))
    elif t.kind in ("add", "sub", "mul", "div"):
        names = [o for o in cfg.operators if o in _GP_BINOPS]
        new = _GP_BINOPS[names[int(rng.integers(len(names)))]](*t.children)
    else:
        return e
    return _replace_node(e, k, new)


def gp_penalty_data(gens, X, dX, eps):
    """Pre-transformed pairs for the finite-group equation penalty.

    For each generator g the pair is (g(x), J_g(x) dx): the candidate is
    compared against the pushed-forward measured derivatives, so evolution
    only ever evaluates trees at the precomputed transformed points.
    """
    out = []
    for g in gens:
        ge = GroupElement(g, eps)
        gX = ge.transform(X)
        T = np.einsum("nij,nj->ni", ge.jacobian(X), dX)
        out.append((gX, T))
    return out


def gp_candidate_fitness(e, X, y, inv_var, cfg, penalty, lam):
    """(total, mse, penalty, size); total is inf for non-finite candidates."""
    with np.errstate(all="ignore"):
        r = gp_evaluate(e, X) - y
        mse = float(np.mean(r * r)) * inv_var
    size = e.node_count()
    if not np.isfinite(mse):
        return (np.inf, np.inf, 0.0, size)
    pen = 0.0
    if lam > 0.0 and penalty:
        used = 0
        for gX, target in penalty:
            denom = float(np.mean(target * target))
            if denom < 1e-30:
                continue
            with np.errstate(all="ignore"):
                q = gp_evaluate(e, gX) - target
                pen += float(np.mean(q * q)) / denom
            used += 1
        pen = pen / used if used else 0.0
        if not np.isfinite(pen):
            return (np.inf, mse, np.inf, size)
    return (mse + cfg.parsimony * size + lam * pen, mse, pen, size)


def _additive_terms(e, sign=1.0):
    if e.kind == "add":
        return (_additive_terms(e.children[0], sign)
                + _additive_terms(e.children[1], sign))
    if e.kind == "sub":
        return (_additive_terms(e.children[0], sign)
                + _additive_terms(e.children[1], -sign))
    if e.kind == "neg":
        return _additive_terms(e.children[0], -sign)
    return [(sign, e)]


def _monomial_expr(exps, ecounts):
    factors = []
    for i, n in enumerate(exps):
        if n == 1:
            factors.append(Expr.var(i))
        elif n > 1:
            factors.append(Expr.pow(Expr.var(i), n))
    lin = None
    for i, m in enumerate(ecounts):
        if m == 0:
            continue
        part = Expr.var(i) if m == 1 else Expr.mul(Expr.const(float(m)),
                                                   Expr.var(i))
        lin = part if lin is None else Expr.add(lin, part)
    if lin is not None:
        factors.append(Expr.exp(lin))
    if not factors:
        return Expr.const(1.0)
    out = factors[0]
    for f in factors[1:]:
        out = Expr.mul(out, f)
    return out


def refit_constants(e, X, y):
    """Least-squares refit of the tree's linear-in-constant slots.

    A tree that expands into monomial-times-exponential terms is rebuilt as
    that expansion with every coefficient refit jointly; otherwise only the
    top-level additive coefficients are refit.  The original tree is kept
    whenever the refit does not improve the squared error.
    """
    dim = X.shape[-1]
    terms = None
    monomials = expand(e, dim)
    if monomials is not None and 0 < len(monomials) <= 40:
        terms = [(1.0, _monomial_expr(*key)) for key in sorted(monomials)]
    if terms is None:
        terms = _additive_terms(e)
    cols = []
    with np.errstate(all="ignore"):
        for sign, t in terms:
            col = (np.ones(X.shape[0]) if t.kind == "const"
                   else sign * gp_evaluate(t, X))
            cols.append(col)
    A = np.stack(cols, axis=1)
    if not np.all(np.isfinite(A)):
        return e
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    parts = []
    for (sign, t), c in zip(terms, coef):
        if t.kind == "const":
            parts.append(Expr.const(float(c)))
        else:
            parts.append(Expr.mul(Expr.const(float(c * sign)), t))
    out = parts[0]
    for t in parts[1:]:
        out = Expr.add(out, t)
    with np.errstate(all="ignore"):
        err_new = float(np.mean((gp_evaluate(out, X) - y) ** 2))
        err_old = float(np.mean((gp_evaluate(e, X) - y) ** 2))
    if not np.isfinite(err_new) or err_new >= err_old:
        return e
    return out


def _tournament(pop, fits, rng, k):
    idx = rng.integers(len(pop), size=k)
    j = min(idx, key=lambda j: (fits[j][0], j))
    return pop[j]


def _evolve_dimension(X, y, cfg, rng, penalty, lam):
    var = float(y.var())
    inv_var = 1.0 / var if var > 0 else 1.0

    def score(pop):
        return [gp_candidate_fitness(e, X, y, inv_var, cfg, penalty, lam)
                for e in pop]

    pop = _initial_population(rng, X.shape[-1], cfg)
    fits = score(pop)
    if all(not np.isfinite(f[0]) for f in fits):
        pop = _initial_population(rng, X.shape[-1], cfg)
        fits = score(pop)
        if all(not np.isfinite(f[0]) for f in fits):
            raise RuntimeError("every candidate in the reseeded population "
                               "evaluated non-finite")
    j = int(np.argmin([f[0] for f in fits]))
    best_e, best_f = pop[j], fits[j]
    history = [best_f[0]]
    for _ in range(cfg.generations):
        if best_f[1] <= cfg.target_mse:
            break
        newpop = [best_e]
        while len(newpop) < cfg.population:
            parent = _tournament(pop, fits, rng, cfg.tournament)
            r = rng.random()
            if r < cfg.p_crossover:
                child = _crossover(parent,
                                   _tournament(pop, fits, rng, cfg.tournament),
                                   rng)
            elif r < cfg.p_crossover + cfg.p_subtree:
                child = _subtree_mutation(parent, rng, X.shape[-1], cfg)
            elif r < cfg.p_crossover + cfg.p_subtree + cfg.p_point:
                child = _point_mutation(parent, rng, X.shape[-1], cfg)
            else:
                child = parent
            if child.depth() > cfg.max_depth:
                child = parent
            newpop.append(child)
        pop = newpop
        fits = score(pop)
        j = int(np.argmin([f[0] for f in fits]))
        if fits[j][0] < best_f[0]:
            best_e, best_f = pop[j], fits[j]
        history.append(best_f[0])
    return best_e, best_f, history


@dataclass
class GpResult:
    """Per-dimension discovered expressions plus evolution diagnostics."""

    exprs: list
    fitness: list
    history: list
    provenance: dict = field(default_factory=dict)

    def __iter__(self):
        return iter(self.exprs)

    def __len__(self):
        return len(self.exprs)

    def __getitem__(self, i):
        return self.exprs[i]

    def equations(self):
        return [f"x{i+1}' = {to_string(e)}"
                for i, e in enumerate(self.exprs)]

    def term_sets(self, lib):
        out = []
        for e in self.exprs:
            coeffs = canonicalize(e, lib)
            out.append(None if coeffs is None else coeffs)
        return out


def gp_fit(dataset, cfg=None, symmetry=None):
    """Evolve one expression per output dimension.

    symmetry, when given, is {"gens": [...], "eps": float, "lambda": float};
    the penalty compares candidates at precomputed transformed points
    against the pushed-forward measured derivatives, so its cost per
    candidate is one extra tree evaluation.
    """
    dcfg = cfg or DiscoveryConfig()
    g = dcfg.gp
    X, dX = _regression_data(dataset)
    d = dX.shape[1]
    rng0 = split_rng(g.seed, 0)
    if X.shape[0] > g.max_fit_samples:
        keep = np.sort(rng0.choice(X.shape[0], size=g.max_fit_samples,
                                   replace=False))
        X, dX = X[keep], dX[keep]
    lam = 0.0
    penalty_all = None
    if symmetry and symmetry.get("gens"):
        lam = float(symmetry.get("lambda", 0.1))
        eps = float(symmetry.get("eps", dcfg.eps))
        np_pen = min(g.penalty_points, X.shape[0])
        penalty_all = gp_penalty_data(symmetry["gens"], X[:np_pen],
                                      dX[:np_pen], eps)
    exprs, fits, histories = [], [], []
    for i in range(d):
        rng = split_rng(g.seed, 1 + i)
        penalty = ([(gX, T[:, i]) for gX, T in penalty_all]
                   if penalty_all else None)
        e, f, hist = _evolve_dimension(X, dX[:, i], g, rng, penalty, lam)
        e = refit_constants(e, X, dX[:, i])
        exprs.append(e)
        fits.append(f)
        histories.append(hist)
    prov = {"method": "equiv-gp-r" if lam > 0 else "gp",
            "lambda": lam, "seed": g.seed,
            "generations": [len(h) - 1 for h in histories]}
    return GpResult(exprs=exprs, fitness=fits, history=histories,
                    provenance=prov)
