"""Deterministic-equivalent flattening and the in-repo convex solvers.

FlatProgram carries one decision block per tree node; the objective is the
probability-weighted sum of node costs, with nonanticipativity implicit in
the block structure.  Three solve paths:

* quadratic terms  -> exact KKT linear solve (nullspace reduction),
* polyhedral terms -> dense simplex on the epigraph LP,
* anything else    -> projected coordinate descent with golden-section
                      line searches (the only inexact path).
"""

import numpy as np

from .convexfn import Inf, Polyhedral, Quadratic
from .errors import (DimensionMismatch, Infeasible, IterationLimit, Unbounded,
                     ValidationError)
from .simplex import solve_lp

KKT_TOL = 1e-10
CD_VALUE_TOL = 1e-10
CD_MAX_SWEEPS = 100000


class Term:
    """weight * fn(M z[idx] + t); M is None for the identity embedding."""

    __slots__ = ("weight", "fn", "idx", "M", "t")

    def __init__(self, weight, fn, idx, M=None, t=None):
        self.weight = float(weight)
        self.fn = fn
        self.idx = np.asarray(idx, dtype=int)
        self.M = None if M is None else np.atleast_2d(np.asarray(M, dtype=float))
        self.t = None if t is None else np.atleast_1d(np.asarray(t, dtype=float))

    def arg(self, z):
        sub = z[self.idx]
        if self.M is None:
            return sub
        return self.M @ sub + self.t

    def value(self, z):
        v = self.fn.eval(self.arg(z))
        if v == Inf:
            return Inf
        return self.weight * v


class FlatProgram:
    def __init__(self, nvars, terms, blocks=None):
        self.nvars = int(nvars)
        self.terms = list(terms)
        self.blocks = blocks or {}

    def eval(self, z):
        z = np.asarray(z, dtype=float).ravel()
        if z.size != self.nvars:
            raise DimensionMismatch(f"expected {self.nvars} variables, got {z.size}")
        total = 0.0
        for term in self.terms:
            v = term.value(z)
            if v == Inf:
                return Inf
            total += v
        return total

    def pack(self, decisions):
        """Assemble a flat point from a node -> vector mapping."""
        z = np.zeros(self.nvars)
        for nid, (off, width) in self.blocks.items():
            if width:
                z[off:off + width] = np.asarray(decisions[nid], dtype=float).ravel()
        return z

    def unpack(self, z):
        out = {}
        for nid, (off, width) in self.blocks.items():
            out[nid] = np.asarray(z[off:off + width], dtype=float)
        return out


def flatten(problem, upto=None, tails=None):
    """Flatten a StageProblem (import deferred to avoid a module cycle)."""
    from .bellman import build_flat
    return build_flat(problem, upto=upto, tails=tails)


def _solve_quadratic(fp):
    n = fp.nvars
    H = np.zeros((n, n))
    g = np.zeros(n)
    const = 0.0
    eq_rows, eq_rhs = [], []
    for term in fp.terms:
        fn = term.fn
        if term.M is not None:
            fn = fn.precompose(term.M, term.t)
        idx = term.idx
        H[np.ix_(idx, idx)] += term.weight * fn.Q
        g[idx] += term.weight * fn.q
        const += term.weight * fn.c
        for row, rhs in zip(fn.A, fn.b):
            grow = np.zeros(n)
            grow[idx] = row
            eq_rows.append(grow)
            eq_rhs.append(rhs)
    if eq_rows:
        A = np.array(eq_rows)
        b = np.array(eq_rhs)
        z0, res, rank, _ = np.linalg.lstsq(A, b, rcond=None)
        if np.linalg.norm(A @ z0 - b) > 1e-8 * (1.0 + np.linalg.norm(b)):
            raise Infeasible("equality constraints are inconsistent")
        u, s, vt = np.linalg.svd(A)
        r = int(np.sum(s > 1e-10 * max(A.shape) * (s[0] if s.size else 1.0)))
        Z = vt[r:].T
    else:
        A = np.zeros((0, n))
        z0 = np.zeros(n)
        Z = np.eye(n)
    Hred = Z.T @ H @ Z
    gred = Z.T @ (H @ z0 + g)
    y = -np.linalg.pinv(Hred, rcond=1e-12, hermitian=True) @ gred
    resid = Hred @ y + gred
    if np.linalg.norm(resid) > 1e-8 * (1.0 + np.linalg.norm(gred)):
        raise Unbounded("objective decreases along a feasible null direction")
    z = z0 + Z @ y
    value = float(0.5 * z @ H @ z + g @ z + const)
    grad = H @ z + g
    if A.shape[0]:
        lam, *_ = np.linalg.lstsq(A.T, -grad, rcond=None)
        kkt = np.linalg.norm(grad + A.T @ lam)
    else:
        kkt = np.linalg.norm(grad)
    info = {"kkt_residual": float(kkt)}
    return value, z, info


def _solve_polyhedral(fp):
    n = fp.nvars
    m = len(fp.terms)
    cost = np.zeros(n + m)
    A_ub, b_ub = [], []
    for j, term in enumerate(fp.terms):
        fn = term.fn
        if term.M is not None:
            fn = fn.precompose(term.M, term.t)
        cost[n + j] = term.weight
        for a, b in zip(fn.pieces_a, fn.pieces_b):
            row = np.zeros(n + m)
            row[term.idx] = a
            row[n + j] = -1.0
            A_ub.append(row)
            b_ub.append(-b)
        for crow, d in zip(fn.C, fn.d):
            row = np.zeros(n + m)
            row[term.idx] = crow
            A_ub.append(row)
            b_ub.append(d)
    res = solve_lp(cost, A_ub, b_ub)
    if res.status == "unbounded":
        raise Unbounded("epigraph LP is unbounded")
    if res.status == "infeasible":
        raise Infeasible("epigraph LP is infeasible")
    z = res.x[:n]
    return float(res.value), z, {"lp_vertex": True}


def _line_min(fp, z, j, span):
    """Golden-section minimization of the coordinate-j restriction."""
    phi = 1.6180339887498949

    def f(a):
        z[j] = a
        return fp.eval(z)

    a0 = z[j]
    f0 = f(a0)
    # expand a finite bracket around a0
    step = max(span, 1e-6)
    lo, hi = a0, a0
    flo, fhi = f0, f0
    s = step
    while True:
        cand = a0 - s
        fc = f(cand)
        if fc == Inf:
            # shrink toward a0 to find the feasible edge
            left, right = cand, lo
            for _ in range(60):
                mid = 0.5 * (left + right)
                if f(mid) == Inf:
                    left = mid
                else:
                    right = mid
            lo, flo = right, f(right)
            break
        lo, flo = cand, fc
        if fc >= f0 or s > 1e12:
            break
        s *= 2.0
    s = step
    while True:
        cand = a0 + s
        fc = f(cand)
        if fc == Inf:
            left, right = hi, cand
            for _ in range(60):
                mid = 0.5 * (left + right)
                if f(mid) == Inf:
                    right = mid
                else:
                    left = mid
            hi, fhi = left, f(left)
            break
        hi, fhi = cand, fc
        if fc >= f0 or s > 1e12:
            break
        s *= 2.0
    a, b = lo, hi
    c = b - (b - a) / phi
    d = a + (b - a) / phi
    fc_, fd_ = f(c), f(d)
    while abs(b - a) > 1e-12 * (1.0 + abs(a) + abs(b)):
        if fc_ <= fd_:
            b, d, fd_ = d, c, fc_
            c = b - (b - a) / phi
            fc_ = f(c)
        else:
            a, c, fc_ = c, d, fd_
            d = a + (b - a) / phi
            fd_ = f(d)
    best = 0.5 * (a + b)
    fb = f(best)
    if f0 < fb:
        z[j] = a0
        return f0
    z[j] = best
    return fb


def _solve_coordinate_descent(fp, start=None):
    z = np.zeros(fp.nvars) if start is None else np.asarray(start, dtype=float).copy()
    val = fp.eval(z)
    if val == Inf:
        raise Infeasible("coordinate descent has no feasible start point")
    span = 1.0
    for sweep in range(CD_MAX_SWEEPS):
        prev = val
        for j in range(fp.nvars):
            val = _line_min(fp, z, j, span)
        span = max(abs(prev - val) ** 0.5, 1e-6)
        if abs(prev - val) < CD_VALUE_TOL * (1.0 + abs(val)):
            return float(val), z, {"sweeps": sweep + 1}
    raise IterationLimit("coordinate descent hit the sweep limit")


def solve_extensive(fp, start=None):
    """Solve a FlatProgram; returns (value, point, info)."""
    kinds = {type(t.fn) for t in fp.terms}
    if not fp.terms:
        raise ValidationError("empty program")
    if fp.nvars == 0:
        val = fp.eval(np.zeros(0))
        if val == Inf:
            raise Infeasible("constant program is infeasible")
        return float(val), np.zeros(0), {}
    if kinds <= {Quadratic}:
        return _solve_quadratic(fp)
    if kinds <= {Polyhedral}:
        return _solve_polyhedral(fp)
    return _solve_coordinate_descent(fp, start=start)
