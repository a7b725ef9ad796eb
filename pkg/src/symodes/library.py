"""Polynomial (plus optional exponential) function libraries.

A library Theta(x) = [theta_1(x), ..., theta_p(x)] collects all monomials in
x1..xd up to a total degree, ordered graded-lexicographically with the
constant term first (1, x1, .., xd, x1^2, x1*x2, ...), optionally followed by
exp(x1)..exp(xd).  Candidate dynamics are linear combinations h(x) = W
Theta(x) with W of shape (d, p).

Canonicalization maps an arbitrary expression tree onto library coordinates
when possible, which is how symbolic structure matrices and term-set
comparisons are computed; there is no numerical fitting anywhere in this
module.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .expressions import Expr, differentiate, expand

COEFF_DROP_TOL = 1e-12


class NotInSpanError(ValueError):
    """An expression falls outside the span of the requested library."""


@dataclass(frozen=True)
class TermKey:
    """Identity of one library term: exponent vector plus exp flags.

    At most one exp flag may be set, and a set flag forces all exponents to
    zero (libraries contain pure monomials and pure exp(x_i), never mixed
    products).
    """

    exponents: tuple
    expflags: tuple

    def __post_init__(self):
        if len(self.exponents) != len(self.expflags):
            raise ValueError("exponents and expflags must have equal length")
        if sum(self.expflags) > 1:
            raise ValueError("at most one exp flag may be set")
        if any(self.expflags) and any(self.exponents):
            raise ValueError("exp flags are exclusive with nonzero exponents")

    @property
    def degree(self):
        return sum(self.exponents)

    def label(self):
        if any(self.expflags):
            i = self.expflags.index(True)
            return f"exp(x{i + 1})"
        parts = []
        for i, e in enumerate(self.exponents):
            if e == 1:
                parts.append(f"x{i + 1}")
            elif e > 1:
                parts.append(f"x{i + 1}^{e}")
        return "*".join(parts) if parts else "1"


class FunctionLibrary:
    """Ordered term basis with vectorized evaluation and derivatives."""

    def __init__(self, dim, degree, include_exponentials=False):
        if dim < 1:
            raise ValueError("dim must be at least 1")
        if degree < 0:
            raise ValueError("degree must be nonnegative")
        self.dim = int(dim)
        self.degree = int(degree)
        self.include_exponentials = bool(include_exponentials)
        self.terms = tuple(_ordered_terms(self.dim, self.degree,
                                          self.include_exponentials))
        self.size = len(self.terms)
        self._index = {t: i for i, t in enumerate(self.terms)}
        self._n_mono = sum(1 for t in self.terms if not any(t.expflags))
        # exponent matrix for the monomial block, (n_mono, d)
        self._E = np.array([t.exponents for t in self.terms[:self._n_mono]],
                           dtype=float)
        self._exp_vars = [t.expflags.index(True)
                          for t in self.terms[self._n_mono:]]
        self._jac_E, self._jac_C = _jacobian_tables(self._E)
        self._hess_E, self._hess_C = _hessian_tables(self._E)

    def __len__(self):
        return self.size

    def __repr__(self):
        tail = "+exp" if self.include_exponentials else ""
        return f"FunctionLibrary(d={self.dim}, q={self.degree}{tail}, p={self.size})"

    def index_of(self, key):
        try:
            return self._index[key]
        except KeyError:
            raise NotInSpanError(f"term {key.label()} is not in {self!r}")

    def labels(self):
        return [t.label() for t in self.terms]

    def term_expr(self, mu):
        """The mu-th term as an expression tree."""
        t = self.terms[mu]
        if any(t.expflags):
            return Expr.exp(Expr.var(t.expflags.index(True)))
        factors = []
        for i, e in enumerate(t.exponents):
            if e == 1:
                factors.append(Expr.var(i))
            elif e > 1:
                factors.append(Expr.pow(Expr.var(i), e))
        if not factors:
            return Expr.const(1.0)
        out = factors[0]
        for f in factors[1:]:
            out = Expr.mul(out, f)
        return out

    # -- numerics --------------------------------------------------------

    def evaluate(self, X):
        """Theta(X) for X of shape (..., d); returns (..., p)."""
        X = np.asarray(X, dtype=float)
        mono = np.prod(X[..., None, :] ** self._E, axis=-1)
        if not self._exp_vars:
            return mono
        exps = np.exp(X[..., self._exp_vars])
        return np.concatenate([mono, exps], axis=-1)

    def jacobian(self, X):
        """d Theta / dx, shape (..., p, d)."""
        X = np.asarray(X, dtype=float)
        # powers: (..., d_out, n_mono, d_in) -> product over d_in
        P = np.prod(X[..., None, None, :] ** self._jac_E, axis=-1)
        Jm = np.swapaxes(self._jac_C * P, -1, -2)
        if not self._exp_vars:
            return Jm
        Je = np.zeros(X.shape[:-1] + (len(self._exp_vars), self.dim))
        for r, i in enumerate(self._exp_vars):
            Je[..., r, i] = np.exp(X[..., i])
        return np.concatenate([Jm, Je], axis=-2)

    def hessian_vp(self, X, U):
        """Sum_j d^2 Theta / dx dx_j * U_j, shape (..., p, d).

        Entry (mu, k) is the k-th component of the Hessian of term mu applied
        to the direction U at X.
        """
        X = np.asarray(X, dtype=float)
        U = np.asarray(U, dtype=float)
        # powers: (..., j, k, n_mono, d_in)
        P = np.prod(X[..., None, None, None, :] ** self._hess_E, axis=-1)
        Gm = np.einsum("jkm,...jkm,...j->...mk", self._hess_C, P, U)
        if not self._exp_vars:
            return Gm
        Ge = np.zeros(X.shape[:-1] + (len(self._exp_vars), self.dim))
        for r, i in enumerate(self._exp_vars):
            Ge[..., r, i] = np.exp(X[..., i]) * U[..., i]
        return np.concatenate([Gm, Ge], axis=-2)


def _ordered_terms(dim, degree, include_exponentials):
    tuples = [e for e in itertools.product(range(degree + 1), repeat=dim)
              if sum(e) <= degree]
    tuples.sort(key=lambda e: (sum(e), tuple(-v for v in e)))
    flags0 = (False,) * dim
    terms = [TermKey(t, flags0) for t in tuples]
    if include_exponentials:
        for i in range(dim):
            flags = tuple(j == i for j in range(dim))
            terms.append(TermKey((0,) * dim, flags))
    expect = math.comb(dim + degree, degree) + (dim if include_exponentials
                                                else 0)
    assert len(terms) == expect
    return terms


def _jacobian_tables(E):
    """Exponent tensor and coefficients for monomial first derivatives."""
    n, d = E.shape
    EJ = np.empty((d, n, d))
    for j in range(d):
        dec = E.copy()
        dec[:, j] -= 1
        EJ[j] = np.maximum(dec, 0.0)
    C = E.T.copy()  # C[j, mu] = E[mu, j]
    return EJ, C


def _hessian_tables(E):
    """Exponent tensor and coefficients for monomial second derivatives."""
    n, d = E.shape
    EH = np.empty((d, d, n, d))
    CH = np.empty((d, d, n))
    for j in range(d):
        for k in range(d):
            dec = E.copy()
            dec[:, j] -= 1
            dec[:, k] -= 1
            EH[j, k] = np.maximum(dec, 0.0)
            CH[j, k] = E[:, j] * (E[:, k] - (1.0 if j == k else 0.0))
    return EH, CH


def build_library(dim, degree, include_exponentials=False):
    return FunctionLibrary(dim, degree, include_exponentials)


# -- canonicalization ---------------------------------------------------------


def canonicalize(e, lib):
    """Coefficients of e in library coordinates, or None if outside the span.

    Coefficients with magnitude below COEFF_DROP_TOL are dropped before the
    span check, so numerically-zero out-of-library terms do not poison the
    result.  The returned dict iterates in library order.
    """
    raw = expand(e, lib.dim)
    if raw is None:
        return None
    coeffs = {}
    for (exps, ecounts), c in raw.items():
        if abs(c) < COEFF_DROP_TOL:
            continue
        if not any(ecounts):
            key = TermKey(exps, (False,) * lib.dim)
        elif sum(ecounts) == 1 and not any(exps):
            key = TermKey(exps, tuple(n == 1 for n in ecounts))
        else:
            return None
        if key not in lib._index:
            return None
        coeffs[key] = coeffs.get(key, 0.0) + c
    return {t: coeffs[t] for t in lib.terms if t in coeffs}


def from_canonical(coeffs, lib):
    """Rebuild an expression tree from library coordinates."""
    out = None
    for key, c in coeffs.items():
        term = Expr.mul(Expr.const(c), lib.term_expr(lib.index_of(key)))
        out = term if out is None else Expr.add(out, term)
    return out if out is not None else Expr.const(0.0)


def m_theta(lib, components):
    """Symbolic coordinate matrix M with components(x) = M Theta(x).

    components is a sequence of expression trees (or strings are not accepted
    here; parse them first).  Raises NotInSpanError naming the offending
    component when one falls outside span(Theta).
    """
    rows = np.zeros((len(components), lib.size))
    for r, comp in enumerate(components):
        coeffs = canonicalize(comp, lib)
        if coeffs is None:
            raise NotInSpanError(
                f"component {r + 1} ({comp}) is outside the span of {lib!r}")
        for key, c in coeffs.items():
            rows[r, lib.index_of(key)] = c
    return rows


def generator_structure_matrix(lib, L):
    """M with J_Theta(x) L x = M Theta(x), computed symbolically.

    Only polynomial libraries are closed under linear generators; exponential
    libraries are rejected.
    """
    if lib.include_exponentials:
        raise NotInSpanError(
            "exponential libraries are not closed under linear generators")
    L = np.asarray(L, dtype=float)
    if L.shape != (lib.dim, lib.dim):
        raise ValueError(f"generator matrix must be {(lib.dim, lib.dim)}")
    fields = []
    for j in range(lib.dim):
        field = None
        for k in range(lib.dim):
            if L[j, k] == 0.0:
                continue
            part = Expr.mul(Expr.const(L[j, k]), Expr.var(k))
            field = part if field is None else Expr.add(field, part)
        fields.append(field if field is not None else Expr.const(0.0))
    rows = []
    for mu in range(lib.size):
        tex = lib.term_expr(mu)
        acc = None
        for j in range(lib.dim):
            part = Expr.mul(differentiate(tex, j), fields[j])
            acc = part if acc is None else Expr.add(acc, part)
        rows.append(acc)
    return m_theta(lib, rows)
