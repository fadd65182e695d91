import numpy as np
import pytest

from stochbellman.convexfn import (Inf, Polyhedral, Quadratic, Sampled1D,
                                   combine, cond_expect_fn, lineality_space,
                                   partial_min, recession)
from stochbellman.errors import (BackendClash, DimensionMismatch,
                                 NonLinearRecession, ProbabilityMass,
                                 UnboundedBelow, ValidationError)

from helpers import grid_min


def test_eval_quadratic():
    f = Quadratic([[1.0]], [0.0])
    assert f.eval([2.0]) == pytest.approx(2.0)
    with pytest.raises(DimensionMismatch):
        f.eval([1.0, 2.0])


def test_eval_polyhedral_domain_indicator():
    f = Polyhedral([[1.0], [2.0]], [0.0, 1.0], [[1.0]], [0.0])
    assert f.eval([1.0]) == Inf
    assert f.eval([-1.0]) == pytest.approx(-1.0)


def test_eval_sampled_interpolation():
    f = Sampled1D([0.0, 1.0, 2.0], [0.0, 1.0, 4.0])
    assert f.eval(1.5) == pytest.approx(2.5)
    assert f.eval(2.5) == Inf


def test_sampled_rejects_nonconvex():
    with pytest.raises(ValidationError):
        Sampled1D([0.0, 1.0, 2.0], [0.0, 2.0, 3.0])


def test_quadratic_psd_validation():
    with pytest.raises(ValidationError):
        Quadratic([[0.0, 1.0], [1.0, 1.0]], [0.0, 0.0])
    Quadratic([[0.0, 1.0], [1.0, 1.0]], [0.0, 0.0], check_psd=False)


def test_combine_add_quadratics():
    f = Quadratic([[2.0]], [0.0])             # x^2
    g = Quadratic([[2.0]], [-4.0], 4.0)       # (x-2)^2
    h = combine(f, g, "add")
    assert h.Q[0, 0] == pytest.approx(4.0)
    assert h.q[0] == pytest.approx(-4.0)
    assert h.c == pytest.approx(4.0)


def test_scale_zero_keeps_domain_indicator():
    # on [0, 1]: value x becomes the plain indicator after scaling by 0
    f = Polyhedral([[1.0]], [0.0], [[1.0], [-1.0]], [1.0, 0.0])
    z = f.scale(0.0)
    assert z.eval([0.7]) == pytest.approx(0.0)
    assert z.eval([2.0]) == Inf


def test_tilt_point_indicator_absorbs_linear_term():
    f = Quadratic.point_indicator([0.0])
    g = f.tilt([3.0])
    assert g.eval([0.0]) == pytest.approx(0.0)
    assert g.eval([1.0]) == Inf


def test_cond_expect_weighted_sum():
    f = Quadratic([[2.0]], [0.0])
    g = Quadratic([[2.0]], [-4.0], 4.0)
    m = cond_expect_fn([(0.5, f), (0.5, g)])
    assert m.eval([1.0]) == pytest.approx(1.0)
    assert m.Q[0, 0] == pytest.approx(2.0)
    assert m.q[0] == pytest.approx(-2.0)


def test_cond_expect_domain_intersection():
    a = Polyhedral([[0.0]], [0.0], [[1.0], [-1.0]], [1.0, 0.0])   # [0, 1]
    b = Polyhedral([[0.0]], [0.0], [[1.0], [-1.0]], [2.0, -1.0])  # [1, 2]
    m = cond_expect_fn([(0.5, a), (0.5, b)])
    assert m.eval([1.0]) == pytest.approx(0.0)
    assert m.eval([0.5]) == Inf
    assert m.eval([1.5]) == Inf


def test_cond_expect_quadratic_mixture_matrix():
    Q1 = np.array([[2.0, 0.0], [0.0, 1.0]])
    Q2 = np.array([[1.0, 0.5], [0.5, 3.0]])
    m = cond_expect_fn([(0.25, Quadratic(Q1, np.zeros(2))),
                        (0.75, Quadratic(Q2, np.zeros(2)))])
    assert np.allclose(m.Q, 0.25 * Q1 + 0.75 * Q2)


def test_cond_expect_probability_mass_error():
    f = Quadratic([[1.0]], [0.0])
    with pytest.raises(ProbabilityMass):
        cond_expect_fn([(0.5, f), (0.6, f)])


def test_partial_min_stationarity_example():
    # min_u 1/2 u^2 + x u = -x^2/2 at u = -x (not jointly convex: PSD off)
    f = Quadratic([[0.0, 1.0], [1.0, 1.0]], np.zeros(2), check_psd=False)
    pm = partial_min(f, over=1)
    for x in (-2.0, 0.5, 3.0):
        assert pm.fn.eval([x]) == pytest.approx(-0.5 * x * x, abs=1e-10)
        assert pm.selector([x])[0] == pytest.approx(-x, abs=1e-10)
        assert pm.fn.eval([x]) == pytest.approx(grid_min(f, x, -8, 8), abs=1e-8)


def test_partial_min_perfect_tracking():
    f = Quadratic([[1.0, -1.0], [-1.0, 1.0]], np.zeros(2))
    pm = partial_min(f, over=1)
    assert pm.fn.eval([1.7]) == pytest.approx(0.0, abs=1e-12)
    assert pm.selector([1.7])[0] == pytest.approx(1.7)


def test_partial_min_free_coordinate_min_norm():
    f = Quadratic([[1.0, 0.0], [0.0, 0.0]], np.zeros(2))
    pm = partial_min(f, over=1)
    assert pm.fn.eval([2.0]) == pytest.approx(2.0)
    assert pm.selector([2.0])[0] == pytest.approx(0.0, abs=1e-12)
    assert pm.lineality.shape == (1, 1)


def test_partial_min_unbounded():
    # f(x, u) = x^2 + u: linear drift along a flat direction
    f = Quadratic([[2.0, 0.0], [0.0, 0.0]], [0.0, 1.0])
    with pytest.raises(UnboundedBelow):
        partial_min(f, over=1)


def test_partial_min_polyhedral_one_sided_cone():
    # f(x, u) = max(-u, 0): flat for u >= 0 only
    f = Polyhedral([[0.0, -1.0], [0.0, 0.0]], [0.0, 0.0])
    with pytest.raises(NonLinearRecession):
        partial_min(f, over=1)


def test_partial_min_sampled_rejected():
    with pytest.raises(BackendClash):
        partial_min(Sampled1D([0.0, 1.0], [0.0, 1.0]), over=1)


def test_recession_strictly_convex_quadratic():
    r = recession(Quadratic([[1.0]], [1.0]))
    assert r.eval([0.0]) == pytest.approx(0.0)
    assert r.eval([1.0]) == Inf


def test_recession_polyhedral_drops_offsets():
    r = recession(Polyhedral([[1.0], [2.0]], [0.0, 1.0]))
    assert r.eval([3.0]) == pytest.approx(6.0)
    assert r.eval([-3.0]) == pytest.approx(-3.0)


def test_recession_bounded_domain():
    r = recession(Polyhedral([[0.0]], [0.0], [[1.0], [-1.0]], [1.0, 0.0]))
    assert r.eval([0.0]) == pytest.approx(0.0)
    assert r.eval([0.5]) == Inf


def test_lineality_strictly_convex_is_origin():
    ls = lineality_space(recession(Quadratic([[1.0]], [0.0])))
    assert ls.dim == 0


def test_lineality_free_coordinate():
    # |d1| in two variables: second coordinate is flat
    f = Polyhedral([[1.0, 0.0], [-1.0, 0.0]], [0.0, 0.0])
    ls = lineality_space(recession(f))
    assert ls.dim == 1
    assert abs(ls.basis[1, 0]) == pytest.approx(1.0)


def test_always_up_gains_trip_nonlinear_recession():
    # shortfall max(-gain, 0) of an always-up one-asset bet: the zero-cost
    # recession cone is the one-sided ray of long positions
    f = cond_expect_fn([
        (0.5, Polyhedral([[0.0, -1.0], [0.0, 0.0]], [0.0, 0.0])),
        (0.5, Polyhedral([[0.0, -2.0], [0.0, 0.0]], [0.0, 0.0])),
    ])
    with pytest.raises(NonLinearRecession):
        partial_min(f, over=1)


def test_monotonicity_of_cond_expect(rng):
    for _ in range(25):
        Q = rng.uniform(0.5, 2.0)
        f1 = Quadratic([[Q]], [float(rng.standard_normal())])
        f2 = Quadratic([[Q * 1.5]], [float(rng.standard_normal())], 1.0)
        g1 = f1.add(Quadratic([[0.2]], [0.0], float(rng.uniform(0, 2))))
        g2 = f2.add(Quadratic([[0.0]], [0.0], float(rng.uniform(0, 2))))
        ef = cond_expect_fn([(0.4, f1), (0.6, f2)])
        eg = cond_expect_fn([(0.4, g1), (0.6, g2)])
        for x in rng.standard_normal(5):
            assert ef.eval([x]) <= eg.eval([x]) + 1e-12


def test_recession_commutes_with_cond_expect(rng):
    # common one-dimensional kernel so the horizon functions are nontrivial
    basis = np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2)
    for _ in range(10):
        fns = []
        for _ in range(2):
            diag = np.diag([float(rng.uniform(0.5, 2.0)), 0.0])
            Q = basis @ diag @ basis.T
            fns.append(Quadratic(Q, rng.standard_normal(2)))
        probs = [0.3, 0.7]
        left = recession(cond_expect_fn(list(zip(probs, fns))))
        right = cond_expect_fn(list(zip(probs, [recession(f).fn for f in fns])))
        for _ in range(6):
            d = rng.standard_normal(2)
            a, b = left.eval(d), right.eval(d)
            if a == Inf or b == Inf:
                assert a == b
            else:
                assert a == pytest.approx(b, abs=1e-10)


def test_monotone_convergence_by_piece_accretion(rng):
    pieces = [([1.0], 0.0), ([-1.0], 0.0), ([2.0], -1.0), ([0.5], 0.5)]
    seqs = []
    for k in range(1, len(pieces) + 1):
        pa = [p[0] for p in pieces[:k]]
        pb = [p[1] for p in pieces[:k]]
        seqs.append(Polyhedral(pa, pb))
    partner = Polyhedral([[0.0]], [0.0])
    evs = [cond_expect_fn([(0.5, f), (0.5, partner)]) for f in seqs]
    for x in rng.standard_normal(8):
        vals = [e.eval([x]) for e in evs]
        assert all(vals[i] <= vals[i + 1] + 1e-12 for i in range(len(vals) - 1))
        assert vals[-1] == pytest.approx(
            cond_expect_fn([(0.5, seqs[-1]), (0.5, partner)]).eval([x]), abs=1e-12)


def test_partial_min_matches_grid_on_random_quadratics(rng):
    for _ in range(20):
        L = rng.standard_normal((2, 2))
        Q = L @ L.T + 0.3 * np.eye(2)
        f = Quadratic(Q, rng.standard_normal(2))
        pm = partial_min(f, over=1)
        x = float(rng.standard_normal())
        assert pm.fn.eval([x]) == pytest.approx(grid_min(f, x, -40, 40), abs=1e-8)
        u = pm.selector([x])
        assert f.eval([x, u[0]]) == pytest.approx(pm.fn.eval([x]), abs=1e-8)


def test_partial_min_matches_grid_on_random_polyhedra(rng):
    for _ in range(20):
        k = int(rng.integers(2, 5))
        pa = rng.standard_normal((k, 2))
        pb = rng.standard_normal(k)
        f = Polyhedral(pa, pb, [[0.0, 1.0], [0.0, -1.0]], [5.0, 5.0])
        pm = partial_min(f, over=1)
        x = float(rng.standard_normal())
        assert pm.fn.eval([x]) == pytest.approx(grid_min(f, x, -5.0, 5.0), abs=1e-8)
        u = pm.selector([x])
        assert f.eval([x, u[0]]) == pytest.approx(pm.fn.eval([x]), abs=1e-8)


def test_selector_orthogonal_to_lineality(rng):
    for _ in range(10):
        # one genuinely flat control direction: costs ignore u2
        Q = np.zeros((3, 3))
        Q[:2, :2] = np.eye(2)
        f = Quadratic(Q, np.concatenate([rng.standard_normal(2), [0.0]]))
        pm = partial_min(f, over=2)
        u = pm.selector(rng.standard_normal(1))
        assert pm.lineality.shape[1] == 1
        assert abs(pm.lineality[:, 0] @ u) <= 1e-10


def test_recession_formula_under_partial_min(rng):
    for _ in range(10):
        L = rng.standard_normal((2, 2))
        Q = L @ L.T + 0.2 * np.eye(2)
        f = Quadratic(Q, rng.standard_normal(2))
        pm = partial_min(f, over=1)
        g_rec = recession(pm.fn)
        f_rec = recession(f)
        for x in rng.standard_normal(4):
            direct = g_rec.eval([x])
            scanned = min(f_rec.eval([x, u]) for u in np.linspace(-20, 20, 4001))
            if direct == Inf:
                assert scanned == Inf or scanned > 1e6
            else:
                assert direct == pytest.approx(scanned, abs=1e-6)


def test_conjugates():
    # quadratic: (x^2)* at v is v^2/4
    f = Quadratic([[2.0]], [0.0])
    assert f.conjugate([3.0]) == pytest.approx(2.25, abs=1e-10)
    # polyhedral |x|: conjugate is the indicator of [-1, 1]
    g = Polyhedral([[1.0], [-1.0]], [0.0, 0.0])
    assert g.conjugate([0.5]) == pytest.approx(0.0, abs=1e-10)
    assert g.conjugate([2.0]) == Inf
    # sampled on [0, 2] with values x^2 at integer knots
    s = Sampled1D([0.0, 1.0, 2.0], [0.0, 1.0, 4.0])
    assert s.conjugate(1.0) == pytest.approx(0.0, abs=1e-12)


def test_precompose_affine():
    f = Quadratic([[2.0]], [0.0])  # x^2
    g = f.precompose([[2.0]], [1.0])  # (2z+1)^2
    assert g.eval([1.0]) == pytest.approx(9.0)
    p = Polyhedral([[1.0], [-1.0]], [0.0, 0.0])  # |x|
    q = p.precompose([[-1.0]], [3.0])  # |3 - z|
    assert q.eval([5.0]) == pytest.approx(2.0)


def test_recession_fn_invariants(rng):
    # horizon functions vanish at zero and are positively homogeneous
    fns = [Quadratic([[1.0, 0.0], [0.0, 0.0]], [0.0, 0.5], check_psd=False),
           Polyhedral([[1.0, -1.0], [0.5, 2.0]], [1.0, -2.0]),
           Sampled1D([-1.0, 0.0, 2.0], [1.0, 0.0, 4.0])]
    for fn in fns:
        r = recession(fn)
        zero = np.zeros(r.dim)
        assert r.eval(zero) == pytest.approx(0.0, abs=1e-12)
        for _ in range(5):
            d = rng.standard_normal(r.dim)
            lam = float(rng.uniform(0.5, 3.0))
            a, b = r.eval(lam * d), r.eval(d)
            if b == Inf:
                assert a == Inf
            else:
                assert a == pytest.approx(lam * b, abs=1e-10)


def test_lineality_basis_orthonormal():
    f = Polyhedral([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]], [0.0, 0.0])
    ls = lineality_space(recession(f))
    B = ls.basis
    assert B.shape[1] == 2
    assert np.allclose(B.T @ B, np.eye(2), atol=1e-10)


def test_promotable_mixed_add_is_eval_only():
    from stochbellman.convexfn import EvalSum
    q = Quadratic([[2.0]], [0.0])
    p = Polyhedral([[1.0], [-1.0]], [0.0, 0.0])
    s = q.add(p)  # x^2 + |x|
    assert isinstance(s, EvalSum)
    assert s.eval([2.0]) == pytest.approx(6.0)
    assert s.eval([-1.0]) == pytest.approx(2.0)
    with pytest.raises(BackendClash):
        partial_min(s, over=1)
    with pytest.raises(BackendClash):
        q.add(Sampled1D([0.0, 1.0], [0.0, 1.0]))
