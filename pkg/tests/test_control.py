import numpy as np
import pytest

from stochbellman.bellman import (Policy, build_flat, solve_be,
                                  verify_optimality)
from stochbellman.control import (ControlSystem, as_stage_problem,
                                  extract_oc_policy, independence_reduction,
                                  lq_costs, q_factors, riccati, riccati_policy,
                                  solve_oc, verify_oc_policy)
from stochbellman.convexfn import Quadratic
from stochbellman.errors import SingularRiccati
from stochbellman.extensive import solve_extensive
from stochbellman.generators import lq_instance
from stochbellman.tree import validate_tree

from helpers import binary_tree, chain_tree


def hand_system():
    tree = chain_tree(1)
    sys_ = ControlSystem(tree, 1, 1, A={"n1": [[0.0]]}, B={"n1": [[1.0]]},
                         W={"n1": [0.0]})
    Qm = {"n0": [[1.0]], "n1": [[1.0]]}
    Rm = {"n0": [[1.0]], "n1": [[1.0]]}
    return sys_, Qm, Rm


def test_zero_costs_zero_value_functions():
    sys_, _, _ = hand_system()
    zero = {nid: Quadratic(np.zeros((2, 2)), np.zeros(2)) for nid in sys_.tree.nodes}
    sol = solve_oc(sys_, zero)
    for x in (-1.0, 0.0, 2.0):
        assert sol.value(x) == pytest.approx(0.0, abs=1e-12)


def test_hand_lq_value_function():
    sys_, Qm, Rm = hand_system()
    sol = solve_oc(sys_, lq_costs(sys_, Qm, Rm))
    for x in (-2.0, 1.0, 3.0):
        assert sol.value(x) == pytest.approx(0.75 * x * x, abs=1e-10)


def test_riccati_hand_instance():
    sys_, Qm, Rm = hand_system()
    rd = riccati(sys_, Qm, Rm)
    assert rd.K["n0"][0, 0] == pytest.approx(1.5, abs=1e-12)
    assert rd.Lam["n0"][0, 0] == pytest.approx(0.5, abs=1e-12)
    assert "halved" in rd.note


def test_riccati_zero_state_cost():
    sys_, _, _ = hand_system()
    Qm = {nid: [[0.0]] for nid in sys_.tree.nodes}
    Rm = {nid: [[1.0]] for nid in sys_.tree.nodes}
    rd = riccati(sys_, Qm, Rm)
    assert rd.K["n0"][0, 0] == pytest.approx(0.0, abs=1e-12)
    assert rd.Lam["n0"][0, 0] == pytest.approx(0.0, abs=1e-12)


def test_riccati_singular_guard():
    tree = chain_tree(1)
    sys_ = ControlSystem(tree, 1, 1, A={"n1": [[0.0]]}, B={"n1": [[0.0]]},
                         W={"n1": [0.0]})
    with pytest.raises(SingularRiccati):
        riccati(sys_, {"n0": [[1.0]], "n1": [[1.0]]},
                {"n0": [[0.0]], "n1": [[0.0]]})


def test_q_factors_reproduce_value_functions():
    sys_, Qm, Rm = hand_system()
    sol = solve_oc(sys_, lq_costs(sys_, Qm, Rm))
    qf = q_factors(sol)
    for nid in sys_.tree.nodes:
        for x in (-1.0, 0.5, 2.0):
            us = np.linspace(-6, 6, 4801)
            qmin = min(qf[nid].eval([x, u]) for u in us)
            assert qmin == pytest.approx(sol.records[nid]["J"].eval([x]), abs=1e-6)


def test_q_factor_argmin_is_policy():
    sys_, Qm, Rm = hand_system()
    sol = solve_oc(sys_, lq_costs(sys_, Qm, Rm))
    X, U = extract_oc_policy(sys_, sol, [1.0])
    qf = q_factors(sol)
    for nid in sys_.tree.nodes:
        val = qf[nid].eval(np.concatenate([X[nid], U[nid]]))
        best = sol.records[nid]["J"].eval(X[nid])
        assert val == pytest.approx(best, abs=1e-10)


def test_three_way_value_agreement_seeded():
    for seed in range(6):
        sys_, Qm, Rm = lq_instance(seed, T=2, N=2, M=1)
        rd = riccati(sys_, Qm, Rm)
        sol = solve_oc(sys_, lq_costs(sys_, Qm, Rm))
        x0 = np.array([0.4, -0.7])
        sp = as_stage_problem(sys_, lq_costs(sys_, Qm, Rm), x0=x0)
        ext, _, _ = solve_extensive(build_flat(sp))
        assert rd.value(sys_.tree, x0) == pytest.approx(sol.value(x0), abs=1e-8)
        assert rd.value(sys_.tree, x0) == pytest.approx(ext, abs=1e-8)


def test_feedback_policy_verifies_through_generic_engine():
    sys_, Qm, Rm = lq_instance(5, T=2, N=1, M=1)
    rd = riccati(sys_, Qm, Rm)
    X, U = riccati_policy(sys_, rd, [0.8])
    sol = solve_oc(sys_, lq_costs(sys_, Qm, Rm))
    assert verify_oc_policy(sys_, sol, X, U, tol=1e-8)
    sp = as_stage_problem(sys_, lq_costs(sys_, Qm, Rm), x0=[0.8])
    sbe = solve_be(sp)
    fp = build_flat(sp)
    dec = {nid: np.concatenate([X[nid], U[nid]]) for nid in sys_.tree.nodes}
    pol = Policy(sp, dec, {}, fp.eval(fp.pack(dec)))
    assert verify_optimality(pol, sbe, tol=1e-8)
    assert pol.value == pytest.approx(sbe.value, abs=1e-8)


def test_riccati_psd_propagation():
    for seed in range(5):
        sys_, Qm, Rm = lq_instance(seed, T=3, N=2, M=2)
        rd = riccati(sys_, Qm, Rm)
        for nid, K in rd.K.items():
            assert np.min(np.linalg.eigvalsh(K)) >= -1e-10


def test_state_dimension_reduction_vs_general_mode():
    # a two-stage scalar system is small enough for the full-history mode:
    # the state-space policy must coincide with the generic-engine policy
    sys_, Qm, Rm = lq_instance(9, T=1, N=1, M=1, noisy=False)
    costs = lq_costs(sys_, Qm, Rm)
    sol = solve_oc(sys_, costs)
    x0 = np.array([1.3])
    X, U = extract_oc_policy(sys_, sol, x0)
    sp = as_stage_problem(sys_, costs, x0=x0)
    pol = None
    from stochbellman.bellman import extract_policy
    pol = extract_policy(solve_be(sp))
    for nid in sys_.tree.nodes:
        assert np.allclose(pol.decisions[nid], np.concatenate([X[nid], U[nid]]),
                           atol=1e-8)


def test_no_noise_no_cost_after_t_means_zero_tail():
    tree = chain_tree(2)
    sys_ = ControlSystem(tree, 1, 1,
                         A={"n1": [[0.2]], "n2": [[0.2]]},
                         B={"n1": [[1.0]], "n2": [[1.0]]},
                         W={"n1": [0.0], "n2": [0.0]})
    costs = {"n0": Quadratic(np.diag([1.0, 1.0]), np.zeros(2)),
             "n1": Quadratic(np.zeros((2, 2)), np.zeros(2)),
             "n2": Quadratic(np.zeros((2, 2)), np.zeros(2))}
    sol = solve_oc(sys_, costs)
    for nid in ("n1", "n2"):
        for x in (-1.0, 0.0, 2.0):
            assert sol.records[nid]["J"].eval([x]) == pytest.approx(0.0, abs=1e-12)


def test_independence_iid_shocks_deterministic_values():
    # both stage-1 nodes see the same continuation law: J is deterministic
    tree = binary_tree()
    sys_ = ControlSystem(tree, 1, 1, A={"a": [[0.0]], "b": [[0.0]]},
                         B={"a": [[1.0]], "b": [[1.0]]},
                         W={"a": [0.5], "b": [-0.5]})
    Qm = {nid: [[1.0]] for nid in tree.nodes}
    Rm = {nid: [[1.0]] for nid in tree.nodes}
    rep = independence_reduction(sys_, lq_costs(sys_, Qm, Rm))
    assert rep.ok
    assert rep.deterministic_stages == [0, 1]


def test_independence_witness_on_path_dependent_cost():
    tree = binary_tree()
    sys_ = ControlSystem(tree, 1, 1, A={"a": [[0.0]], "b": [[0.0]]},
                         B={"a": [[1.0]], "b": [[1.0]]},
                         W={"a": [0.0], "b": [0.0]})
    costs = {nid: Quadratic(np.diag([1.0, 1.0]), np.zeros(2)) for nid in tree.nodes}
    costs["a"] = Quadratic(np.diag([9.0, 1.0]), np.zeros(2))  # branch-dependent
    rep = independence_reduction(sys_, costs)
    assert not rep.ok
    stage, nodes, probe = rep.witnesses[0]
    assert stage == 1 and set(nodes) == {"a", "b"}


def test_independence_replicated_subtrees_cellwise_constant():
    # two subtrees with identical data: per-cell constancy of J
    tree = validate_tree([
        {"id": "r", "parent": None, "prob": 1.0, "stage": 0},
        {"id": "u", "parent": "r", "prob": 0.25, "stage": 1},
        {"id": "v", "parent": "r", "prob": 0.35, "stage": 1},
        {"id": "w", "parent": "r", "prob": 0.40, "stage": 1},
    ])
    sys_ = ControlSystem(tree, 1, 1,
                         A={k: [[0.0]] for k in ("u", "v", "w")},
                         B={k: [[1.0]] for k in ("u", "v", "w")},
                         W={"u": [0.3], "v": [0.3], "w": [-0.1]})
    Qm = {nid: [[1.0]] for nid in tree.nodes}
    Rm = {nid: [[1.0]] for nid in tree.nodes}
    rep = independence_reduction(sys_, lq_costs(sys_, Qm, Rm),
                                 partitions={1: [["u", "v"], ["w"]]})
    assert rep.ok


def test_q_factors_zero_costs():
    sys_, _, _ = hand_system()
    zero = {nid: Quadratic(np.zeros((2, 2)), np.zeros(2)) for nid in sys_.tree.nodes}
    qf = q_factors(solve_oc(sys_, zero))
    for fn in qf.values():
        for x in (-1.0, 0.0, 2.0):
            for u in (-1.0, 0.5):
                assert fn.eval([x, u]) == pytest.approx(0.0, abs=1e-12)


def test_conditional_matrix_diagnostic_noop():
    from stochbellman.control import conditional_matrix_diagnostic
    from stochbellman.generators import lq_instance
    sys_, _, _ = lq_instance(2, T=2, N=2, M=1)
    rng = np.random.default_rng(5)
    y_leaf = {l: rng.standard_normal(2) for l in sys_.tree.leaves()}
    assert conditional_matrix_diagnostic(sys_, y_leaf) <= 1e-12


def test_polyhedral_control_driver():
    from stochbellman.convexfn import Polyhedral
    tree = chain_tree(1)
    sys_ = ControlSystem(tree, 1, 1, A={"n1": [[0.0]]}, B={"n1": [[1.0]]},
                         W={"n1": [0.0]})
    costs = {"n0": Polyhedral([[0.0, 1.0], [0.0, -1.0]], [0.0, 0.0]),  # |U|
             "n1": Polyhedral([[1.0, 0.0], [-1.0, 0.0]], [0.0, 0.0])}  # |X|
    sol = solve_oc(sys_, costs)
    # min over U of |U| + |X + U| collapses to |X|
    for x in (-2.0, -0.5, 0.0, 1.5):
        assert sol.value(x) == pytest.approx(abs(x), abs=1e-9)
    sp = as_stage_problem(sys_, costs, x0=[1.5])
    ext, _, _ = solve_extensive(build_flat(sp))
    assert ext == pytest.approx(1.5, abs=1e-9)
