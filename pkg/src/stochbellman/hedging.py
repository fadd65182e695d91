"""Hedging a terminal claim by trading on a scenario-tree market.

The market is an adapted price process with optional polyhedral position
constraints per node; all positions close at the horizon.  Solving goes
through the wealth-state control reduction: state = wealth, controls =
cash invested per asset, per-child returns from price ratios.  The
no-arbitrage test is a single LP over node positions: maximize expected
terminal gains subject to nonnegative pathwise gains, recession-feasible
positions and a sup-norm cap; the verdict is cap-invariant because the
arbitrage cone is positively homogeneous.
"""

import numpy as np

from .control import ControlSystem, solve_oc
from .convexfn import Inf, Quadratic
from .errors import (ArbitrageRefusal, NonMonotone, UnboundedExp,
                     ValidationError)
from .numeric import coordinate_descent
from .simplex import solve_lp


class MarketModel:
    """Price process, per-node position constraints, terminal claim.

    s is an adapted R^J process with componentwise nonzero prices (the
    wealth reduction divides by them).  D maps a node at stage < T to
    inequality rows (G, g) describing {x : Gx <= g}; positions at the
    horizon are fixed to zero, so stage-T entries are rejected.
    """

    def __init__(self, tree, s, D=None, c=None):
        self.tree = tree
        self.s = s
        self.J = np.atleast_1d(np.asarray(s[tree.root], dtype=float)).size
        self.D = {}
        for nid, rows in (D or {}).items():
            if tree.stage(nid) >= tree.T:
                raise ValidationError("terminal positions are fixed to zero")
            G, g = rows
            self.D[nid] = (np.atleast_2d(np.asarray(G, dtype=float)),
                           np.atleast_1d(np.asarray(g, dtype=float)))
        self.c = {leaf: float((c or {}).get(leaf, 0.0)) for leaf in tree.leaves()}
        for nid in tree.nodes:
            price = np.atleast_1d(np.asarray(s[nid], dtype=float))
            if price.size != self.J:
                raise ValidationError(f"price at {nid!r} has wrong dimension")
            if np.any(np.abs(price) < 1e-12):
                raise ValidationError(f"zero price at node {nid!r}")

    def price(self, nid):
        return np.atleast_1d(np.asarray(self.s[nid], dtype=float))

    def increment(self, child):
        return self.price(child) - self.price(self.tree.parent(child))

    def returns(self, child):
        """Per-asset rate of return over the branch into `child`."""
        return self.increment(child) / self.price(self.tree.parent(child))


class NAVerdict:
    def __init__(self, passed, optimum, direction):
        self.passed = passed
        self.optimum = optimum
        self.direction = direction

    def __bool__(self):
        return self.passed


def na_check(market, cap=1.0, tol=1e-9):
    """No-arbitrage LP; FAIL returns the optimal positions as the witness."""
    tree = market.tree
    J = market.J
    trade_nodes = [nid for t in range(tree.T) for nid in tree.stage_nodes[t]]
    offs = {nid: i * J for i, nid in enumerate(trade_nodes)}
    n = J * len(trade_nodes)
    leaves = tree.leaves()

    def gain_row(leaf):
        row = np.zeros(n)
        path = tree.path(leaf)
        for t in range(tree.T):
            inc = market.price(path[t + 1]) - market.price(path[t])
            row[offs[path[t]]:offs[path[t]] + J] += inc
        return row

    A_ub, b_ub = [], []
    cost = np.zeros(n)
    for leaf in leaves:
        row = gain_row(leaf)
        A_ub.append(-row)
        b_ub.append(0.0)
        cost -= float(tree.prob(leaf)) * row
    for nid in trade_nodes:
        if nid in market.D:
            G, _ = market.D[nid]
            for grow in G:
                row = np.zeros(n)
                row[offs[nid]:offs[nid] + J] = grow
                A_ub.append(row)
                b_ub.append(0.0)
    eye = np.eye(n)
    A_ub.extend(eye)
    b_ub.extend([cap] * n)
    A_ub.extend(-eye)
    b_ub.extend([cap] * n)
    res = solve_lp(cost, A_ub, b_ub)
    if res.status != "optimal":
        raise ValidationError(f"arbitrage LP came back {res.status}")
    gain = -res.value
    if gain <= tol:
        return NAVerdict(True, gain, None)
    direction = {nid: res.x[offs[nid]:offs[nid] + J].copy() for nid in trade_nodes}
    return NAVerdict(False, gain, direction)


class _GridCost:
    """Duck-typed cost over (X, U) for the gridded driver: V(c - X) at
    leaves plus position-constraint indicators on U."""

    def __init__(self, dim, base=None, a=None, b=0.0, rows=None):
        self.dim = dim
        self.base = base
        self.a = None if a is None else np.asarray(a, dtype=float)
        self.b = float(b)
        self.rows = rows

    def eval(self, z):
        z = np.asarray(z, dtype=float).ravel()
        if self.rows is not None:
            G, g = self.rows
            if np.max(G @ z[1:] - g) > 1e-9 * (1.0 + np.max(np.abs(g), initial=0.0)):
                return Inf
        if self.base is None:
            return 0.0
        return self.base.eval(float(self.a @ z) + self.b)


class ALMResult:
    def __init__(self, value, positions, controls, verdict, solution):
        self.value = value
        self.positions = positions
        self.controls = controls
        self.verdict = verdict
        self.solution = solution


def _hat_rows(market, nid):
    """Position constraints mapped to cash coordinates U^j = s^j x^j."""
    if nid not in market.D:
        return None
    G, g = market.D[nid]
    s = market.price(nid)
    return G / s, g


def solve_alm(market, loss, wealth=0.0, driver="auto", grid=None,
              refuse_arbitrage=True):
    """Best hedge of the terminal claim under a loss on the shortfall.

    loss is a 1-D ConvexFn (Quadratic or Sampled1D), or a dict mapping
    leaves to per-scenario losses.  The quadratic driver needs an
    unconstrained market; anything else goes through the wealth grid.  An
    arbitrage market is refused by default with the verdict attached; pass
    refuse_arbitrage=False to force the solve.
    """
    verdict = na_check(market)
    if not verdict.passed and refuse_arbitrage:
        raise ArbitrageRefusal(f"market admits arbitrage (gain {verdict.optimum:.3g})")
    tree = market.tree
    J = market.J
    loss_at = loss.__getitem__ if isinstance(loss, dict) else (lambda leaf: loss)
    probe = loss_at(tree.leaves()[0])
    sysmats = {}
    A = {}
    B = {}
    W = {}
    for t in range(1, tree.T + 1):
        for nid in tree.stage_nodes[t]:
            A[nid] = np.zeros((1, 1))
            B[nid] = market.returns(nid).reshape(1, J)
            W[nid] = np.zeros(1)
    sys_ = ControlSystem(tree, 1, J, A, B, W)
    if driver == "auto":
        driver = "quadratic" if isinstance(probe, Quadratic) and not market.D else "grid"

    if driver == "quadratic":
        if market.D:
            raise ValidationError("quadratic driver requires an unconstrained market")
        costs = {}
        for nid in tree.nodes:
            if tree.stage(nid) == tree.T:
                M = np.zeros((1, 1 + J))
                M[0, 0] = -1.0
                costs[nid] = loss_at(nid).precompose(M, [market.c[nid]])
            elif nid == tree.root:
                pin = np.zeros((1, 1 + J))
                pin[0, 0] = 1.0
                costs[nid] = Quadratic(np.zeros((1 + J, 1 + J)), np.zeros(1 + J),
                                       0.0, pin, [wealth])
            else:
                costs[nid] = Quadratic(np.zeros((1 + J, 1 + J)), np.zeros(1 + J))
        sol = solve_oc(sys_, costs)
        value = sol.value(wealth)
    else:
        if grid is None:
            span = 2.0 + 2.0 * (max(abs(v) for v in market.c.values()) + abs(wealth))
            grid = np.linspace(wealth - span, wealth + span, 2001)
        costs = {}
        for nid in tree.nodes:
            rows = _hat_rows(market, nid)
            if tree.stage(nid) == tree.T:
                costs[nid] = _GridCost(1 + J, base=loss_at(nid),
                                       a=np.concatenate([[-1.0], np.zeros(J)]),
                                       b=market.c[nid])
            else:
                costs[nid] = _GridCost(1 + J, rows=rows)
        sol = solve_oc(sys_, costs, grid=grid)
        value = sol.records[tree.root]["J"].eval(wealth)

    X = {tree.root: np.array([wealth])}
    controls = {}
    positions = {}
    for t in range(tree.T + 1):
        for nid in tree.stage_nodes[t]:
            if t == tree.T:
                controls[nid] = np.zeros(J)
                positions[nid] = np.zeros(J)
                continue
            U = np.atleast_1d(sol.control(nid, X[nid]))
            controls[nid] = U
            positions[nid] = U / market.price(nid)
            for k in tree.children[nid]:
                X[k] = np.array([X[nid][0] + float(market.returns(k) @ U)])
    return ALMResult(float(value), positions, controls, verdict, sol)


class ExpUtilityResult:
    def __init__(self, alpha, controls, rho):
        self.alpha = alpha
        self.controls = controls
        self.rho = rho

    def value(self, tree, wealth):
        return self.alpha[tree.root] * np.exp(-self.rho * wealth) / self.rho

    def J(self, nid, X):
        return self.alpha[nid] * np.exp(-self.rho * X) / self.rho


def exp_utility(market, rho, c=None, span=1.0):
    """Wealth-free recursion for the exponential loss exp(rho u)/rho.

    At each node the factor is the minimized expectation of the children's
    factors damped by exp(-rho R.U); the minimizing cash positions do not
    depend on wealth.  A vanishing infimum (positions running away) raises
    UnboundedExp, which signals an arbitrage.
    """
    if rho <= 0:
        raise ValidationError("rho must be positive")
    tree = market.tree
    J = market.J
    claims = market.c if c is None else {leaf: float(c[leaf]) for leaf in tree.leaves()}
    alpha = {}
    controls = {}
    for t in range(tree.T, -1, -1):
        for nid in tree.stage_nodes[t]:
            if t == tree.T:
                alpha[nid] = float(np.exp(rho * claims[nid]))
                controls[nid] = np.zeros(J)
                continue
            kids = tree.children[nid]
            rets = [market.returns(k) for k in kids]
            probs = [float(tree.nodes[k].prob) for k in kids]
            avals = [alpha[k] for k in kids]
            rows = _hat_rows(market, nid)

            def f(U):
                U = np.asarray(U, dtype=float)
                if rows is not None:
                    G, g = rows
                    if np.max(G @ U - g) > 1e-9 * (1.0 + np.max(np.abs(g), initial=0.0)):
                        return Inf
                with np.errstate(over="ignore"):
                    acc = 0.0
                    for p, a, r in zip(probs, avals, rets):
                        acc += p * a * float(np.exp(-rho * float(r @ U)))
                return acc

            try:
                U, val = coordinate_descent(f, np.zeros(J), span=span)
            except UnboundedExp:
                raise UnboundedExp("exponential factor has no minimizer", node=nid)
            alpha[nid] = float(val)
            controls[nid] = U
    return ExpUtilityResult(alpha, controls, rho)


def support_function_diagnostics(market, y):
    """Per-node support values sup{x . E_t[y ds_{t+1}] : x in D_t}.

    y maps nodes at stages 1..T to scalars (a candidate density factor).
    Integrability of these terms is automatic on a finite tree; the values
    are surfaced for inspection only.  Unconstrained nodes report 0.0 when
    the conditional moment vanishes and +inf otherwise.
    """
    tree = market.tree
    out = {}
    for t in range(tree.T):
        for nid in tree.stage_nodes[t]:
            kids = tree.children[nid]
            m = sum(float(tree.nodes[k].prob) * float(y[k]) * market.increment(k)
                    for k in kids)
            if nid not in market.D:
                out[nid] = 0.0 if np.max(np.abs(m), initial=0.0) <= 1e-12 else Inf
                continue
            G, g = market.D[nid]
            res = solve_lp(-m, G, g)
            out[nid] = Inf if res.status == "unbounded" else -res.value
    return out


class AEResult:
    def __init__(self, ae_minus, ae_plus, reasonable):
        self.ae_minus = ae_minus
        self.ae_plus = ae_plus
        self.reasonable = reasonable


def ae_estimate(loss, lo=-30.0, hi=30.0, n=25, delta=1e-6):
    """Asymptotic-elasticity probes u V'(u) / V(u) at the grid extremes.

    loss may be a 1-D ConvexFn or a plain callable.  One-sided difference
    quotients approximate V'; probes where V or V' vanish are skipped.
    The flag is advisory: on when the left estimate is below one or the
    right estimate exceeds one.
    """
    V = loss.eval if hasattr(loss, "eval") else loss
    pos = np.geomspace(max(hi, 1e-3) / 300.0, max(hi, 1e-3), n)
    neg = -np.geomspace(max(-lo, 1e-3) / 300.0, max(-lo, 1e-3), n)

    def ratio(u):
        h = abs(u) * delta
        v0 = V(u)
        if not np.isfinite(v0):
            return None
        v1 = V(u + h)
        if np.isfinite(v1):
            dv = (v1 - v0) / h
        else:
            v1 = V(u - h)  # domain edge: fall back to the other side
            if not np.isfinite(v1):
                return None
            dv = (v0 - v1) / h
        if dv < -1e-9 * (1.0 + abs(v0)):
            raise NonMonotone(f"loss decreases at u = {u:.6g}")
        if abs(v0) < 1e-300 or abs(dv) < 1e-300:
            return None
        return u * dv / v0

    for u in np.concatenate([np.sort(neg), pos]):
        ratio(u)  # monotonicity sweep raises on violation
    ae_plus = ratio(pos[-1])
    ae_minus = ratio(neg[-1])
    # guard band: the probes are numeric, a borderline ratio must not flip
    # the advisory flag
    band = 1e-9
    flag = (ae_minus is not None and ae_minus < 1.0 - band) or \
           (ae_plus is not None and ae_plus > 1.0 + band)
    return AEResult(ae_minus, ae_plus, flag)
