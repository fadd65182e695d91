"""Generalized backward recursion on scenario trees.

Two problem modes:

* stage-additive: each node at stage t carries a cost g_t(x_{t-1}, x_t);
  the sweep computes per-node value functions of the previous decision.
* general: each leaf carries a cost of the whole decision path x_0..x_T
  (capped at total dimension 6; this mode exists to validate the
  stage-additive drivers, not to scale).

At every node the sweep records the pre-minimization function, the value
function after minimizing the node's own block, the minimizer map, and the
lineality basis of the flat directions.  Unbounded or one-sided recession
cones abort the sweep with the offending node attached.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .convexfn import (Inf, cond_expect_fn, partial_min, recession)
from .errors import (Infeasible, NonLinearRecession, NotPerp, SolverError,
                     UnboundedBelow, ValidationError)
from .extensive import FlatProgram, Term, solve_extensive
from .tree import perp_check

GENERAL_DIM_CAP = 6


class StageProblem:
    """Problem data bound to a tree: costs plus per-stage decision dims."""

    def __init__(self, tree, dims, mode="stage_additive", node_costs=None, leaf_fns=None):
        self.tree = tree
        self.dims = list(dims)
        self.mode = mode
        if len(self.dims) != tree.T + 1:
            raise ValidationError("need one decision dimension per stage")
        if mode == "stage_additive":
            self.node_costs = dict(node_costs)
            for nid, fn in self.node_costs.items():
                t = tree.stage(nid)
                want = self._prev_dim(t) + self.dims[t]
                if fn.dim != want:
                    raise ValidationError(
                        f"cost at node {nid!r} has dim {fn.dim}, expected {want}")
            for t in range(tree.T + 1):
                for nid in tree.stage_nodes[t]:
                    if nid not in self.node_costs:
                        raise ValidationError(f"missing stage cost at node {nid!r}")
        elif mode == "general":
            total = sum(self.dims)
            if total > GENERAL_DIM_CAP:
                raise ValidationError(
                    f"general mode capped at total dimension {GENERAL_DIM_CAP}")
            from .convexfn import Polyhedral, Quadratic
            self.leaf_fns = dict(leaf_fns)
            for nid in tree.leaves():
                if nid not in self.leaf_fns:
                    raise ValidationError(f"missing objective at leaf {nid!r}")
                if self.leaf_fns[nid].dim != total:
                    raise ValidationError(f"objective at leaf {nid!r} has wrong dimension")
                if not isinstance(self.leaf_fns[nid], (Quadratic, Polyhedral)):
                    raise ValidationError(
                        "general mode supports quadratic or polyhedral objectives")
        else:
            raise ValidationError(f"unknown mode {mode!r}")

    def _prev_dim(self, t):
        return self.dims[t - 1] if t > 0 else 0

    def cum_dim(self, t):
        """Total decision dimension of stages 0..t."""
        return sum(self.dims[:t + 1])


class BellmanSolution:
    def __init__(self, problem, records, value):
        self.problem = problem
        self.records = records  # node id -> dict(pre, post, selector, N, tail)
        self.value = value

    def value_fn(self, nid):
        return self.records[nid]["pre"]

    def lineality(self, nid):
        return self.records[nid]["N"]


class Policy:
    def __init__(self, problem, decisions, residuals, value):
        self.problem = problem
        self.decisions = {nid: np.asarray(x, dtype=float) for nid, x in decisions.items()}
        self.residuals = dict(residuals)
        self.value = value

    @property
    def residual_max(self):
        return max(self.residuals.values()) if self.residuals else 0.0


def _stage_map(nodes, fn, threads):
    if threads and threads > 1 and len(nodes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return dict(zip(nodes, ex.map(fn, nodes)))
    return {nid: fn(nid) for nid in nodes}


def _minimize_block(fn, over, nid):
    try:
        return partial_min(fn, over=over)
    except (UnboundedBelow, NonLinearRecession) as exc:
        raise type(exc)(str(exc), node=nid) from exc


def solve_be(problem, threads=1):
    """Backward sweep; returns a BellmanSolution with per-node records."""
    tree = problem.tree
    records = {}
    if problem.mode == "stage_additive":
        for t in range(tree.T, -1, -1):
            def work(nid, t=t):
                base = problem.node_costs[nid]
                prev = problem._prev_dim(t)
                own = problem.dims[t]
                kids = tree.children[nid]
                tail = None
                fn = base
                if kids:
                    lift = np.zeros((own, prev + own))
                    lift[:, prev:] = np.eye(own)
                    tail = cond_expect_fn(
                        [(float(tree.nodes[k].prob), records[k]["post"]) for k in kids])
                    fn = base.add(tail.precompose(lift, np.zeros(own)))
                pm = _minimize_block(fn, own, nid)
                return {"pre": fn, "post": pm.fn, "selector": pm.selector,
                        "N": pm.lineality, "tail": tail, "stage": t}
            records.update(_stage_map(tree.stage_nodes[t], work, threads))
        value = records[tree.root]["post"].eval(np.zeros(0))
    else:
        for t in range(tree.T, -1, -1):
            def work(nid, t=t):
                if t == tree.T:
                    fn = problem.leaf_fns[nid]
                else:
                    fn = cond_expect_fn(
                        [(float(tree.nodes[k].prob), records[k]["post"])
                         for k in tree.children[nid]])
                pm = _minimize_block(fn, problem.dims[t], nid)
                return {"pre": fn, "post": pm.fn, "selector": pm.selector,
                        "N": pm.lineality, "tail": None, "stage": t}
            records.update(_stage_map(tree.stage_nodes[t], work, threads))
        value = records[tree.root]["post"].eval(np.zeros(0))
    if value == Inf:
        raise Infeasible("problem is infeasible", node=tree.root)
    return BellmanSolution(problem, records, float(value))


def build_flat(problem, upto=None, tails=None):
    """FlatProgram for stages 0..upto, with optional frontier tail terms."""
    tree = problem.tree
    T = tree.T if upto is None else upto
    blocks = {}
    off = 0
    for t in range(T + 1):
        for nid in tree.stage_nodes[t]:
            blocks[nid] = (off, problem.dims[t])
            off += problem.dims[t]
    terms = []
    if problem.mode == "stage_additive":
        for t in range(T + 1):
            for nid in tree.stage_nodes[t]:
                idx = []
                if t > 0:
                    poff, pw = blocks[tree.parent(nid)]
                    idx.extend(range(poff, poff + pw))
                o, w = blocks[nid]
                idx.extend(range(o, o + w))
                terms.append(Term(float(tree.prob(nid)), problem.node_costs[nid], idx))
        if tails:
            for nid, fn in tails.items():
                o, w = blocks[nid]
                terms.append(Term(float(tree.prob(nid)), fn, list(range(o, o + w))))
    else:
        frontier = tree.stage_nodes[T]
        source = tails if tails is not None else (
            {nid: problem.leaf_fns[nid] for nid in frontier} if T == tree.T else None)
        if source is None:
            raise ValidationError("general-mode truncation needs frontier functions")
        for nid in frontier:
            idx = []
            for anc in tree.path(nid):
                o, w = blocks[anc]
                idx.extend(range(o, o + w))
            terms.append(Term(float(tree.prob(nid)), source[nid], idx))
    return FlatProgram(off, terms, blocks)


def optimum_value(sol, t):
    """Optimal value of the stage-t head problem, solved extensively.

    Independent of the sweep arithmetic: the frontier carries the recorded
    continuation functions and the head is handed to the flat solver, so
    equality across t is a genuine cross-check, not an identity.
    """
    problem = sol.problem
    tree = problem.tree
    if t == tree.T:
        fp = build_flat(problem)
    elif problem.mode == "stage_additive":
        tails = {}
        for nid in tree.stage_nodes[t]:
            kids = tree.children[nid]
            tails[nid] = cond_expect_fn(
                [(float(tree.nodes[k].prob), sol.records[k]["post"]) for k in kids])
        fp = build_flat(problem, upto=t, tails=tails)
    else:
        tails = {nid: sol.records[nid]["pre"] for nid in tree.stage_nodes[t]}
        fp = build_flat(problem, upto=t, tails=tails)
    value, _, _ = solve_extensive(fp)
    return value


def extract_policy(sol):
    """Forward sweep through the recorded minimizer maps."""
    problem = sol.problem
    tree = problem.tree
    decisions = {}
    residuals = {}

    def prefix(nid):
        if problem.mode == "stage_additive":
            par = tree.parent(nid)
            return decisions[par] if par is not None else np.zeros(0)
        par = tree.parent(nid)
        if par is None:
            return np.zeros(0)
        return np.concatenate([decisions[a] for a in tree.path(par)])

    for t in range(tree.T + 1):
        for nid in tree.stage_nodes[t]:
            rec = sol.records[nid]
            pre = prefix(nid)
            x = rec["selector"](pre)
            decisions[nid] = x
            full = np.concatenate([pre, x])
            residuals[nid] = max(rec["pre"].eval(full) - rec["post"].eval(pre), 0.0)
    fp = build_flat(problem)
    value = fp.eval(fp.pack(decisions))
    return Policy(problem, decisions, residuals, float(value))


def verify_optimality(policy, sol, tol=1e-8):
    """Nodewise argmin test of a policy against a solved recursion."""
    problem = sol.problem
    tree = problem.tree
    for t in range(tree.T + 1):
        for nid in tree.stage_nodes[t]:
            rec = sol.records[nid]
            if problem.mode == "stage_additive":
                par = tree.parent(nid)
                pre = policy.decisions[par] if par is not None else np.zeros(0)
            else:
                par = tree.parent(nid)
                pre = (np.concatenate([policy.decisions[a] for a in tree.path(par)])
                       if par is not None else np.zeros(0))
            full = np.concatenate([pre, policy.decisions[nid]])
            gap = rec["pre"].eval(full) - rec["post"].eval(pre)
            if not np.isfinite(gap) or gap > tol:
                return False
    return True


def _tilt_vectors(problem, v):
    """Per-node tilt folded from a perp family: node -> vector or None."""
    tree = problem.tree
    tilts = {nid: None for nid in tree.nodes}

    def bump(nid, vec):
        cur = tilts[nid]
        tilts[nid] = vec if cur is None else cur + vec

    if problem.mode == "stage_additive":
        for t, (stage, per_node) in v.entries.items():
            nt = problem.dims[t]
            for nid in tree.stage_nodes[stage]:
                val = per_node[nid]
                prev = problem._prev_dim(stage)
                own = problem.dims[stage]
                w = np.zeros(prev + own)
                if stage == t:
                    w[prev:prev + nt] = -val
                else:  # stage == t + 1: v_t multiplies the parent-slot block
                    w[:nt] = -val
                bump(nid, w)
    else:
        offs = np.cumsum([0] + problem.dims)
        for leaf in tree.leaves():
            path = tree.path(leaf)
            w = np.zeros(problem.cum_dim(tree.T))
            for t, (stage, per_node) in v.entries.items():
                w[offs[t]:offs[t] + problem.dims[t]] -= per_node[path[stage]]
            bump(leaf, w)
    return tilts


def tilt_by_p(problem, v, tol=1e-12):
    """Stage costs tilted by -x_t . v_t for a family with E_t v_t = 0."""
    if not perp_check(v, tol=tol):
        raise NotPerp("tilt process fails E_t[v_t] = 0")
    tilts = _tilt_vectors(problem, v)
    tree = problem.tree
    if problem.mode == "stage_additive":
        costs = {}
        for nid, fn in problem.node_costs.items():
            w = tilts[nid]
            costs[nid] = fn if w is None else fn.tilt(w)
        return StageProblem(tree, problem.dims, "stage_additive", node_costs=costs)
    fns = {}
    for nid, fn in problem.leaf_fns.items():
        w = tilts[nid]
        fns[nid] = fn if w is None else fn.tilt(w)
    return StageProblem(tree, problem.dims, "general", leaf_fns=fns)


class AssumptionReport:
    def __init__(self, certificates, lower_bound_ok, linearity_ok, linearity_detail,
                 feasibility_ok, feasibility_detail):
        self.certificates = certificates
        self.lower_bound_ok = lower_bound_ok
        self.linearity_ok = linearity_ok
        self.linearity_detail = linearity_detail
        self.feasibility_ok = feasibility_ok
        self.feasibility_detail = feasibility_detail

    def summary(self):
        return {"lower_bound": "PASS" if self.lower_bound_ok else "FAIL",
                "linearity": "PASS" if self.linearity_ok else f"FAIL: {self.linearity_detail}",
                "feasibility": "PASS" if self.feasibility_ok else f"FAIL: {self.feasibility_detail}"}


def _recession_problem(problem):
    tree = problem.tree
    if problem.mode == "stage_additive":
        costs = {nid: recession(fn).fn for nid, fn in problem.node_costs.items()}
        return StageProblem(tree, problem.dims, "stage_additive", node_costs=costs)
    fns = {nid: recession(fn).fn for nid, fn in problem.leaf_fns.items()}
    return StageProblem(tree, problem.dims, "general", leaf_fns=fns)


def check_assumptions(problem, v=None, eps=0.1):
    """Diagnostics, never gates: lower-bound certificates via per-node
    conjugates at the tilt point, a linearity verdict from the recession
    recursion, and a solve probe.
    """
    tree = problem.tree
    base = problem if v is None else tilt_by_p(problem, v)
    tilts = (_tilt_vectors(problem, v) if v is not None else
             {nid: None for nid in tree.nodes})

    certificates = {}
    lower_ok = True
    cost_nodes = (problem.node_costs if problem.mode == "stage_additive"
                  else problem.leaf_fns)
    for nid, fn in cost_nodes.items():
        w = tilts[nid]
        # tilt vectors store -p; the certificate is m >= f*(lambda p)
        p = np.zeros(fn.dim) if w is None else -w
        per_lambda = {}
        for lam in (1.0 - eps, 1.0, 1.0 + eps):
            m = fn.conjugate(lam * p)
            per_lambda[lam] = m
            if m == Inf:
                lower_ok = False
        certificates[nid] = per_lambda

    linearity_ok, linearity_detail = True, ""
    try:
        solve_be(_recession_problem(base))
    except (UnboundedBelow, NonLinearRecession) as exc:
        linearity_ok, linearity_detail = False, f"{type(exc).__name__}: {exc}"
    except SolverError as exc:
        linearity_detail = f"recession probe inconclusive: {exc}"

    feas_ok, feas_detail = True, ""
    try:
        sol = solve_be(base)
        feas_detail = f"value {sol.value:.12g}"
    except SolverError as exc:
        feas_ok, feas_detail = False, f"{type(exc).__name__}: {exc}"

    return AssumptionReport(certificates, lower_ok, linearity_ok, linearity_detail,
                            feas_ok, feas_detail)
