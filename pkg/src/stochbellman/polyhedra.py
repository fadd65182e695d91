"""Inequality systems and Fourier-Motzkin projection.

A system is the pair (G, h) meaning {z : G z <= h}.  Projection eliminates
trailing coordinates one at a time; redundancy pruning is LP-free (duplicate
and pairwise-domination tests on normalized rows), so it never changes the
feasible set, only the row count.
"""

import numpy as np

from .errors import RowBlowup

_ZERO = 1e-12
DEFAULT_ROW_CAP = 10000


def normalize_rows(G, h):
    """Scale each row to unit max-abs coefficient; canonicalize zero rows."""
    G = np.atleast_2d(np.asarray(G, dtype=float))
    h = np.asarray(h, dtype=float).ravel()
    if G.shape[1] == 0:
        # width-zero rows: keep one canonical contradiction if present
        if np.any(h < -_ZERO):
            return np.zeros((1, 0)), np.array([-1.0])
        return np.zeros((0, 0)), np.zeros(0)
    if G.size == 0:
        return G.reshape(0, G.shape[1]), h[:0]
    out_G, out_h = [], []
    for row, rhs in zip(G, h):
        s = np.max(np.abs(row))
        if s <= _ZERO:
            if rhs < -_ZERO:
                # infeasibility marker 0 <= h < 0, keep one canonical copy
                out_G.append(np.zeros_like(row))
                out_h.append(-1.0)
            continue  # 0 <= nonneg is vacuous
        out_G.append(row / s)
        out_h.append(rhs / s)
    if not out_G:
        return np.zeros((0, G.shape[1])), np.zeros(0)
    return np.array(out_G), np.array(out_h)


def prune_rows(G, h):
    """Drop duplicate rows and rows dominated by an identical-normal row."""
    G, h = normalize_rows(G, h)
    if G.shape[0] <= 1:
        return G, h
    keyed = {}
    for row, rhs in zip(G, h):
        key = tuple(np.round(row, 12))
        if key not in keyed or rhs < keyed[key][1]:
            keyed[key] = (row, rhs)
    rows = list(keyed.values())
    return np.array([r for r, _ in rows]), np.array([v for _, v in rows])


def eliminate_one(G, h, j, row_cap=DEFAULT_ROW_CAP):
    """Fourier-Motzkin elimination of coordinate j from G z <= h."""
    G = np.atleast_2d(np.asarray(G, dtype=float))
    h = np.asarray(h, dtype=float).ravel()
    col = G[:, j] if G.size else np.zeros(0)
    pos = np.where(col > _ZERO)[0]
    neg = np.where(col < -_ZERO)[0]
    zero = np.where(np.abs(col) <= _ZERO)[0]
    rows = [np.delete(G[i], j) for i in zero]
    rhs = [h[i] for i in zero]
    if len(pos) * len(neg) + len(rows) > row_cap:
        raise RowBlowup(f"projection exceeded {row_cap} intermediate rows")
    for p in pos:
        gp, hp = G[p] / col[p], h[p] / col[p]
        for q in neg:
            gq, hq = G[q] / (-col[q]), h[q] / (-col[q])
            rows.append(np.delete(gp + gq, j))
            rhs.append(hp + hq)
    if not rows:
        return np.zeros((0, G.shape[1] - 1)), np.zeros(0)
    return prune_rows(np.array(rows), np.array(rhs))


def fm_project(G, h, n_eliminate, row_cap=DEFAULT_ROW_CAP):
    """Project {z : G z <= h} onto its first (dim - n_eliminate) coordinates.

    Eliminates the trailing n_eliminate coordinates.  Raises RowBlowup if an
    intermediate system exceeds row_cap rows.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    h = np.asarray(h, dtype=float).ravel()
    if G.size == 0:
        dim = G.shape[1] if G.ndim == 2 and G.shape[1] else 0
        return np.zeros((0, max(dim - n_eliminate, 0))), np.zeros(0)
    G, h = prune_rows(G, h)
    for _ in range(n_eliminate):
        G, h = eliminate_one(G, h, G.shape[1] - 1, row_cap=row_cap)
    return G, h


def is_infeasible_marker(G, h):
    """True when the system contains a row 0 <= negative."""
    if G.shape[0] == 0:
        return False
    zero = np.max(np.abs(G), axis=1) <= _ZERO if G.shape[1] else np.ones(G.shape[0], bool)
    return bool(np.any(h[zero] < -_ZERO))


def cone_from_generators(rays, row_cap=DEFAULT_ROW_CAP):
    """Inequality description of cone{sum lambda_i r_i : lambda >= 0}.

    Builds {(y, lam) : y - R lam = 0, -lam <= 0} and projects out lam.
    """
    R = np.atleast_2d(np.asarray(rays, dtype=float)).T  # d x k
    d, k = R.shape
    G = np.zeros((2 * d + k, d + k))
    h = np.zeros(2 * d + k)
    G[:d, :d] = np.eye(d)
    G[:d, d:] = -R
    G[d:2 * d, :d] = -np.eye(d)
    G[d:2 * d, d:] = R
    G[2 * d:, d:] = -np.eye(k)
    return fm_project(G, h, k, row_cap=row_cap)
