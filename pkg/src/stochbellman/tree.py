"""Finite filtered probability spaces as rooted scenario trees.

A tree node carries its stage, its conditional branch probability, and an
open data dict.  Unconditional probabilities are derived lazily from the
root path, never stored.  Probabilities may be floats (default) or exact
`fractions.Fraction` values when the tree is built with exact=True; the
scalar conditional-expectation kernel is generic over both.

Orthogonal-complement data (processes v with E_t[v_t] = 0) is represented
by `PerpProcess`: a per-index family where entry t lives at a measurability
stage m_t in {t, t+1}.  Adapted candidates use m_t = t; martingale
increments use m_t = t + 1.  That covers every construction used here, and
keeps tilts local to a single node's stage cost.
"""

from fractions import Fraction

import numpy as np

from .errors import (NotMarkov, OrphanNode, ProbabilityMass, StageGap,
                     StageOrder, ValidationError)

PROB_TOL = 1e-12


class Node:
    __slots__ = ("id", "parent", "stage", "prob", "data")

    def __init__(self, id, parent, stage, prob, data=None):
        self.id = id
        self.parent = parent
        self.stage = stage
        self.prob = prob
        self.data = data if data is not None else {}

    def __repr__(self):
        return f"Node({self.id!r}, stage={self.stage}, prob={self.prob})"


class ScenarioTree:
    """Validated rooted tree; immutable after construction."""

    def __init__(self, nodes, exact=False):
        self.exact = exact
        self.nodes = {}
        self.children = {}
        for n in nodes:
            if n.id in self.nodes:
                raise ValidationError(f"duplicate node id {n.id!r}")
            self.nodes[n.id] = n
            self.children[n.id] = []
        roots = [n for n in nodes if n.parent is None]
        if len(roots) != 1:
            raise OrphanNode(f"expected exactly one root, found {len(roots)}")
        self.root = roots[0].id
        for n in nodes:
            if n.parent is not None:
                if n.parent not in self.nodes:
                    raise OrphanNode(f"node {n.id!r} references missing parent {n.parent!r}")
                self.children[n.parent].append(n.id)
        self._validate()
        self._uncond = {}

    def _validate(self):
        root = self.nodes[self.root]
        if root.stage != 0:
            raise StageGap(f"root must be at stage 0, got {root.stage}")
        one = Fraction(1) if self.exact else 1.0
        if self.exact:
            if root.prob != 1:
                raise ProbabilityMass("root probability must be 1")
        elif abs(float(root.prob) - 1.0) > PROB_TOL:
            raise ProbabilityMass("root probability must be 1")
        # reachability doubles as the orphan check for cycles
        seen = set()
        stack = [self.root]
        while stack:
            nid = stack.pop()
            seen.add(nid)
            stack.extend(self.children[nid])
        if len(seen) != len(self.nodes):
            missing = sorted(set(self.nodes) - seen)
            raise OrphanNode(f"nodes unreachable from root: {missing}")
        stages = [n.stage for n in self.nodes.values()]
        self.T = max(stages)
        for n in self.nodes.values():
            p = n.prob
            if (p if self.exact else float(p)) <= 0 or (p if self.exact else float(p)) > 1:
                raise ProbabilityMass(f"node {n.id!r} probability {p!r} outside (0, 1]")
            if n.parent is not None:
                pstage = self.nodes[n.parent].stage
                if n.stage != pstage + 1:
                    raise StageGap(f"node {n.id!r} at stage {n.stage} under parent at stage {pstage}")
        for nid, kids in self.children.items():
            if kids:
                total = sum(self.nodes[k].prob for k in kids)
                if self.exact:
                    if total != one:
                        raise ProbabilityMass(f"children of {nid!r} sum to {total}")
                elif abs(float(total) - 1.0) > PROB_TOL:
                    raise ProbabilityMass(f"children of {nid!r} sum to {total!r}")
            else:
                if self.nodes[nid].stage != self.T:
                    raise StageGap(f"leaf {nid!r} at stage {self.nodes[nid].stage}, horizon is {self.T}")
        self.stage_nodes = [[] for _ in range(self.T + 1)]
        order = {nid: i for i, nid in enumerate(self.nodes)}
        for nid, n in self.nodes.items():
            self.stage_nodes[n.stage].append(nid)
        for layer in self.stage_nodes:
            layer.sort(key=order.__getitem__)

    def prob(self, nid):
        """Unconditional probability: product of branch probabilities."""
        if nid not in self._uncond:
            n = self.nodes[nid]
            if n.parent is None:
                self._uncond[nid] = n.prob
            else:
                self._uncond[nid] = self.prob(n.parent) * n.prob
        p = self._uncond[nid]
        if (p if self.exact else float(p)) <= 0:
            raise ProbabilityMass(f"node {nid!r} has nonpositive path probability")
        return p

    def parent(self, nid):
        return self.nodes[nid].parent

    def stage(self, nid):
        return self.nodes[nid].stage

    def leaves(self):
        return list(self.stage_nodes[self.T])

    def path(self, nid):
        """Node ids from the root down to nid inclusive."""
        out = []
        while nid is not None:
            out.append(nid)
            nid = self.nodes[nid].parent
        return out[::-1]

    def descendants_at(self, nid, stage):
        if stage < self.nodes[nid].stage:
            raise StageOrder("descendants lie at later stages")
        cur = [nid]
        for _ in range(stage - self.nodes[nid].stage):
            cur = [k for c in cur for k in self.children[c]]
        return cur

    def n_nodes(self):
        return len(self.nodes)


def validate_tree(raw, exact=False):
    """Build a ScenarioTree from records {id, parent, prob, stage[, data]}."""
    nodes = []
    for rec in raw:
        if isinstance(rec, Node):
            nodes.append(rec)
            continue
        prob = rec["prob"]
        if exact and not isinstance(prob, Fraction):
            prob = Fraction(prob)
        nodes.append(Node(str(rec["id"]),
                          None if rec.get("parent") is None else str(rec["parent"]),
                          int(rec["stage"]), prob, rec.get("data")))
    return ScenarioTree(nodes, exact=exact)


class AdaptedProcess:
    """Node-indexed data over a contiguous stage range.

    Values must be present at every node of every covered stage; that makes
    adaptedness structural (a stage-t value can only depend on the stage-t
    node identity).
    """

    def __init__(self, tree, values, stages=None):
        self.tree = tree
        self.values = dict(values)
        present = sorted({tree.stage(nid) for nid in self.values})
        if stages is None:
            stages = present
        self.stages = list(stages)
        if sorted(self.stages) != list(range(min(self.stages), max(self.stages) + 1)):
            raise ValidationError("stage range must be contiguous")
        for s in self.stages:
            for nid in tree.stage_nodes[s]:
                if nid not in self.values:
                    raise ValidationError(f"process missing value at node {nid!r}")
        for nid in self.values:
            if tree.stage(nid) not in self.stages:
                raise ValidationError(f"value at node {nid!r} outside declared stage range")

    def __getitem__(self, nid):
        return self.values[nid]

    def at_stage(self, s):
        return {nid: self.values[nid] for nid in self.tree.stage_nodes[s]}

    @staticmethod
    def from_stage_map(tree, stage_values):
        vals = {}
        for s, per_node in stage_values.items():
            vals.update(per_node)
        return AdaptedProcess(tree, vals)


def cond_expect_scalar(proc, target_stage, source_stage=None):
    """Conditional expectation of a single-stage process down to target_stage.

    Accepts an AdaptedProcess covering one stage (or source_stage of a wider
    one) and returns the stage-target process of probability-weighted
    averages over descendants.  Generic over floats, Fractions and numpy
    vectors.
    """
    tree = proc.tree
    if source_stage is None:
        if len(proc.stages) != 1:
            raise ValidationError("source stage is ambiguous; pass source_stage")
        source_stage = proc.stages[0]
    if target_stage > source_stage:
        raise StageOrder(f"target stage {target_stage} > source stage {source_stage}")
    level = dict(proc.at_stage(source_stage))
    for s in range(source_stage, target_stage, -1):
        nxt = {}
        for nid in tree.stage_nodes[s - 1]:
            kids = tree.children[nid]
            acc = None
            for k in kids:
                term = tree.nodes[k].prob * level[k]
                acc = term if acc is None else acc + term
            nxt[nid] = acc
        level = nxt
    return AdaptedProcess(tree, level, stages=[target_stage])


class PerpProcess:
    """Family (v_t)_{t=0..T} with v_t stored at measurability stage m_t.

    entries maps t -> (m_t, {node at stage m_t: vector}).  m_t is t for
    adapted data and t + 1 for increment-style data.
    """

    def __init__(self, tree, entries):
        self.tree = tree
        self.entries = {}
        for t, (stage, per_node) in entries.items():
            if stage not in (t, t + 1):
                raise ValidationError("measurability stage must be t or t+1")
            if stage > tree.T:
                raise ValidationError("measurability stage beyond horizon")
            for nid in tree.stage_nodes[stage]:
                if nid not in per_node:
                    raise ValidationError(f"perp entry {t} missing node {nid!r}")
            self.entries[t] = (stage, {nid: np.atleast_1d(np.asarray(per_node[nid], dtype=float))
                                       for nid in tree.stage_nodes[stage]})

    @staticmethod
    def from_adapted(proc):
        entries = {}
        for s in proc.stages:
            entries[s] = (s, proc.at_stage(s))
        return PerpProcess(proc.tree, entries)

    @staticmethod
    def zero(tree, dims):
        entries = {}
        for t in range(tree.T + 1):
            d = dims[t] if hasattr(dims, "__len__") else dims
            entries[t] = (t, {nid: np.zeros(d) for nid in tree.stage_nodes[t]})
        return PerpProcess(tree, entries)

    def component_dim(self, t):
        stage, per_node = self.entries[t]
        any_node = next(iter(per_node.values()))
        return any_node.size


def martingale_increments(proc):
    """Increment family v_t = s_{t+1} - s_t stored at stage t + 1.

    perp_check of the result holds exactly when the input process is a
    martingale; the trailing index T is filled with zeros.
    """
    tree = proc.tree
    entries = {}
    d = np.atleast_1d(np.asarray(proc[tree.root], dtype=float)).size
    for t in range(tree.T):
        per = {}
        for nid in tree.stage_nodes[t + 1]:
            s_here = np.atleast_1d(np.asarray(proc[nid], dtype=float))
            s_par = np.atleast_1d(np.asarray(proc[tree.parent(nid)], dtype=float))
            per[nid] = s_here - s_par
        entries[t] = (t + 1, per)
    entries[tree.T] = (tree.T, {nid: np.zeros(d) for nid in tree.stage_nodes[tree.T]})
    return PerpProcess(tree, entries)


def perp_check(v, tol=1e-12):
    """True iff every component of v_t conditions to zero at stage t."""
    if isinstance(v, AdaptedProcess):
        v = PerpProcess.from_adapted(v)
    tree = v.tree
    for t, (stage, per_node) in v.entries.items():
        if v.component_dim(t) == 0:
            continue
        proc = AdaptedProcess(tree, per_node, stages=[stage])
        down = cond_expect_scalar(proc, t, source_stage=stage)
        for nid in tree.stage_nodes[t]:
            if np.max(np.abs(np.asarray(down[nid], dtype=float))) > tol:
                return False
    return True


def expected_pairing(tree, x, v):
    """E[sum_t x_t . v_t] for adapted x and a perp family v (float path)."""
    total = 0.0
    for t, (stage, per_node) in v.entries.items():
        for nid in tree.stage_nodes[stage]:
            anchor = nid
            while tree.stage(anchor) > t:
                anchor = tree.parent(anchor)
            xv = np.atleast_1d(np.asarray(x[anchor], dtype=float))
            total += float(tree.prob(nid)) * float(xv @ per_node[nid])
    return total


def _quantize(value, tol):
    return round(float(value) / tol) * tol


def _future_law(tree, R, nid, tol):
    """Distribution of the future value path below nid, keys quantized."""
    law = {}

    def walk(cur, prob, path):
        kids = tree.children[cur]
        if not kids:
            law[path] = law.get(path, 0.0) + prob
            return
        for k in kids:
            walk(k, prob * float(tree.nodes[k].prob), path + (_quantize(R[k], tol),))

    walk(nid, 1.0, ())
    return law


def _laws_match(a, b):
    if set(a) != set(b):
        return False
    return all(abs(a[k] - b[k]) <= 1e-12 for k in a)


def is_markov(R, tol=1e-12, witness=False):
    """True iff equal same-stage values imply equal conditional future laws.

    R is a real-valued adapted process over stages 0..T.  Value classes are
    formed by quantizing at tol; future-path laws are compared per class.
    With witness=True returns (flag, offending node pair or None).
    """
    tree = R.tree
    for t in range(tree.T + 1):
        classes = {}
        for nid in tree.stage_nodes[t]:
            classes.setdefault(_quantize(R[nid], tol), []).append(nid)
        for key, members in classes.items():
            if len(members) < 2:
                continue
            ref = _future_law(tree, R, members[0], tol)
            for other in members[1:]:
                if not _laws_match(ref, _future_law(tree, R, other, tol)):
                    if witness:
                        return False, (members[0], other)
                    return False
    if witness:
        return True, None
    return True


def markov_witness(R, tol=1e-12):
    """Pair of same-stage, same-value nodes with different future laws."""
    ok, pair = is_markov(R, tol=tol, witness=True)
    if ok:
        raise NotMarkov("process is Markov; no witness exists")
    return pair
