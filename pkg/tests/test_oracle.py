import numpy as np
import pytest

from miqpgp import RelaxationSpec, build_problem
from miqpgp.oracle import TooLarge, enumerate_miqp, reference_qp_solve
from miqpgp.oracle import _interior_point, _assemble


def test_interior_optimum_has_empty_active_set():
    prob = build_problem(
        Q=np.eye(2), c=[-1.0, -1.0], A=np.eye(2), l=[0.0, 0.0], u=[2.0, 2.0]
    )
    res = reference_qp_solve(prob)
    assert res.status == "Optimal"
    np.testing.assert_allclose(res.z, [1.0, 1.0], atol=1e-9)
    assert res.active_set == ()
    assert res.cost == pytest.approx(-1.0)


def test_fixed_binary_row_becomes_equality():
    prob = build_problem(
        Q=[[2.0]], c=[-3.0], A_bar=[[1.0]], l_bar=[0.0], u_bar=[1.0]
    )
    spec = RelaxationSpec(1, fixed_upper=frozenset({0}))
    res = reference_qp_solve(prob, spec)
    assert res.status == "Optimal"
    assert res.z[0] == pytest.approx(1.0)
    assert res.cost == pytest.approx(-2.0)


def test_active_bound_solution():
    # minimum of (z-3)^2/2 over [0, 1] sits at the upper bound
    prob = build_problem(Q=[[1.0]], c=[-3.0], A=[[1.0]], l=[0.0], u=[1.0])
    res = reference_qp_solve(prob)
    assert res.z[0] == pytest.approx(1.0)
    assert len(res.active_set) == 1


def test_contradictory_bounds_detected_infeasible():
    prob = build_problem(
        Q=[[2.0]], c=[0.0], A=[[1.0], [1.0]], l=[1.0, -2.0], u=[2.0, 0.0]
    )
    res = reference_qp_solve(prob)
    assert res.status == "Infeasible"
    assert res.cost == np.inf


def test_equality_constrained_solve():
    prob = build_problem(
        Q=np.eye(2), c=[0.0, 0.0], A_eq=[[1.0, 1.0]], b_eq=[2.0]
    )
    res = reference_qp_solve(prob)
    np.testing.assert_allclose(res.z, [1.0, 1.0], atol=1e-9)


def test_pinned_interval_row_promoted_to_equality():
    prob = build_problem(
        Q=np.eye(2), c=[-1.0, 0.0], A=[[1.0, 0.0], [0.0, 1.0]],
        l=[0.25, -1.0], u=[0.25, 1.0],
    )
    res = reference_qp_solve(prob)
    assert res.z[0] == pytest.approx(0.25)


def test_cost_matches_direct_evaluation():
    rng = np.random.default_rng(42)
    for _ in range(10):
        M = rng.standard_normal((3, 3))
        prob = build_problem(
            Q=M @ M.T + 3 * np.eye(3),
            c=rng.standard_normal(3),
            A=rng.standard_normal((4, 3)),
            l=-rng.uniform(0.5, 2.0, 4),
            u=rng.uniform(0.5, 2.0, 4),
            obj_const=1.25,
        )
        res = reference_qp_solve(prob)
        if res.status != "Optimal":
            continue
        z = res.z
        direct = 0.5 * z @ prob.Q @ z + prob.c @ z + 1.25
        assert res.cost == pytest.approx(direct, abs=1e-10)


def test_enumeration_and_fallback_paths_agree():
    rng = np.random.default_rng(3)
    for _ in range(6):
        M = rng.standard_normal((4, 4))
        prob = build_problem(
            Q=M @ M.T + 4 * np.eye(4),
            c=rng.standard_normal(4),
            A=rng.standard_normal((5, 4)),
            l=-rng.uniform(0.2, 1.5, 5),
            u=rng.uniform(0.2, 1.5, 5),
        )
        res = reference_qp_solve(prob, method="enumerate")
        blocks = _assemble(prob, None)
        kind, z_ip, _ = _interior_point(prob.Q, prob.c, *blocks)
        assert res.status == "Optimal" and kind == "optimal"
        np.testing.assert_allclose(res.z, z_ip, atol=1e-6)


def test_single_binary_enumeration():
    prob = build_problem(
        Q=[[2.0]], c=[-3.0], A_bar=[[1.0]], l_bar=[0.0], u_bar=[1.0]
    )
    res = enumerate_miqp(prob)
    assert res.status == "Optimal"
    assert res.z[0] == pytest.approx(1.0)
    assert res.cost == pytest.approx(-2.0)
    assert res.active_set == 0b1


def test_every_fixing_infeasible():
    # plain row forces z into [0.4, 0.6] while both binary values sit outside
    prob = build_problem(
        Q=[[2.0]], c=[0.0], A=[[1.0]], l=[0.4], u=[0.6],
        A_bar=[[1.0]], l_bar=[0.0], u_bar=[1.0],
    )
    res = enumerate_miqp(prob)
    assert res.status == "Infeasible"


def test_three_binary_enumeration_picks_best_corner():
    # separable: z_i in {0,1}, cost sum of (z_i - target_i)^2 / 2
    targets = np.array([0.9, 0.1, 0.8])
    prob = build_problem(
        Q=np.eye(3), c=-targets, A_bar=np.eye(3),
        l_bar=np.zeros(3), u_bar=np.ones(3),
    )
    res = enumerate_miqp(prob)
    assert res.active_set == 0b101
    np.testing.assert_allclose(res.z, [1.0, 0.0, 1.0], atol=1e-9)


def test_binary_guard_rail():
    p = 15
    prob = build_problem(
        Q=np.eye(p), c=np.zeros(p), A_bar=np.eye(p),
        l_bar=np.zeros(p), u_bar=np.ones(p),
    )
    with pytest.raises(TooLarge):
        enumerate_miqp(prob)
