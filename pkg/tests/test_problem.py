import numpy as np
import pytest

from miqpgp import (
    BoundsInverted,
    DimensionMismatch,
    NotPositiveDefinite,
    RelaxationSpec,
    ZeroRow,
    build_dual_data,
    build_problem,
    check_feasibility,
)


def test_identity_box_problem_dimensions():
    prob = build_problem(
        Q=np.eye(2), c=[-1.0, -1.0], A=np.eye(2), l=[0.0, 0.0], u=[1.0, 1.0]
    )
    assert (prob.n, prob.m, prob.p, prob.q) == (2, 2, 0, 0)


def test_indefinite_hessian_rejected():
    with pytest.raises(NotPositiveDefinite):
        build_problem(Q=[[1.0, 2.0], [2.0, 1.0]], c=[0.0, 0.0])


def test_nonsymmetric_hessian_rejected():
    with pytest.raises(NotPositiveDefinite):
        build_problem(Q=[[2.0, 1.0], [0.0, 2.0]], c=[0.0, 0.0])


def test_degenerate_binary_bounds_rejected():
    with pytest.raises(BoundsInverted):
        build_problem(
            Q=[[2.0]], c=[0.0], A_bar=[[1.0]], l_bar=[0.0], u_bar=[0.0]
        )


def test_inverted_inequality_bounds_rejected():
    with pytest.raises(BoundsInverted):
        build_problem(Q=[[1.0]], c=[0.0], A=[[1.0]], l=[2.0], u=[1.0])


def test_nonfinite_bounds_rejected():
    with pytest.raises(BoundsInverted):
        build_problem(Q=[[1.0]], c=[0.0], A=[[1.0]], l=[-np.inf], u=[1.0])


def test_mismatched_shapes_rejected():
    with pytest.raises(DimensionMismatch):
        build_problem(Q=np.eye(2), c=[0.0, 0.0], A=[[1.0]], l=[0.0], u=[1.0])
    with pytest.raises(DimensionMismatch):
        build_problem(Q=np.eye(3), c=[0.0, 0.0])


def test_zero_constraint_row_rejected():
    with pytest.raises(ZeroRow):
        build_problem(
            Q=np.eye(2), c=[0.0, 0.0], A=[[0.0, 0.0]], l=[-1.0], u=[1.0]
        )


def test_cost_includes_constant_term():
    prob = build_problem(Q=2.0 * np.eye(2), c=[1.0, -1.0], obj_const=3.0)
    assert prob.cost([1.0, 2.0]) == pytest.approx(0.5 * 2 * 5 + 1 - 2 + 3)


def test_problem_is_immutable():
    prob = build_problem(Q=np.eye(1), c=[0.0])
    with pytest.raises(AttributeError):
        prob.obj_const = 1.0


def test_relaxation_spec_free_and_child():
    spec = RelaxationSpec(4, fixed_lower=frozenset({1}), fixed_upper=frozenset({3}))
    assert spec.free == (0, 2)
    child = spec.child(2, "upper")
    assert child.fixed_upper == frozenset({2, 3})
    assert child.free == (0,)
    with pytest.raises(ValueError):
        RelaxationSpec(4, fixed_lower=frozenset({1}), fixed_upper=frozenset({1}))
    with pytest.raises(ValueError):
        RelaxationSpec(2, fixed_lower=frozenset({5}))


def test_row_scaling_on_single_row():
    # row (2, 0) with Q = I has curvature 4, so the scale factor is 1/2
    prob = build_problem(Q=np.eye(2), c=[0.0, 0.0], A=[[2.0, 0.0]], l=[-1.0], u=[1.0])
    dual = build_dual_data(prob)
    assert dual.theta[0] == pytest.approx(0.5)
    np.testing.assert_allclose(dual.A_stacked[0], [1.0, 0.0])
    assert dual.b_stacked[0] == pytest.approx(0.5)


def test_step_size_for_identity_dual_hessian():
    # equality rows only, so the stacked matrix is exactly I and H = I
    prob = build_problem(Q=np.eye(2), c=[0.0, 0.0], A_eq=np.eye(2), b_eq=[0.3, 0.3])
    dual = build_dual_data(prob)
    assert dual.L == pytest.approx(1.0, rel=2e-3)
    H = dual.A_stacked @ np.linalg.inv(prob.Q) @ dual.A_stacked.T
    assert np.linalg.norm(H, "fro") == pytest.approx(np.sqrt(2))
    assert dual.L <= np.linalg.norm(H, "fro") + 1e-9


def _random_problem(seed, n=3, m=5, p=2, q=1):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((n, n))
    Q = M @ M.T + n * np.eye(n)
    A = rng.standard_normal((m, n))
    u = rng.uniform(0.5, 2.0, m)
    A_bar = rng.standard_normal((p, n)) if p else None
    A_eq = rng.standard_normal((q, n)) if q else None
    return build_problem(
        Q=Q,
        c=rng.standard_normal(n),
        A=A,
        l=-u,
        u=u,
        A_eq=A_eq,
        b_eq=rng.standard_normal(q) if q else None,
        A_bar=A_bar,
        l_bar=np.zeros(p) if p else None,
        u_bar=np.ones(p) if p else None,
    )


def test_preconditioned_dual_hessian_has_unit_diagonal():
    # independent check: form H from scratch with a dense inverse
    prob = _random_problem(7, n=3, m=5, p=0, q=0)
    dual = build_dual_data(prob)
    H = dual.A_stacked @ np.linalg.inv(prob.Q) @ dual.A_stacked.T
    np.testing.assert_allclose(np.diag(H), 1.0, atol=1e-10)


@pytest.mark.parametrize("seed", range(8))
def test_step_size_bounded_by_frobenius_norm(seed):
    prob = _random_problem(seed)
    dual = build_dual_data(prob)
    H = dual.A_stacked @ np.linalg.inv(prob.Q) @ dual.A_stacked.T
    fro = np.linalg.norm(H, "fro")
    lam_max = np.linalg.eigvalsh(H).max()
    assert dual.L <= fro + 1e-9
    assert dual.L >= lam_max - 1e-7 * max(1.0, lam_max)


def test_stacked_row_order_and_row_map():
    prob = _random_problem(3, n=4, m=2, p=2, q=1)
    dual = build_dual_data(prob)
    raw = np.vstack([prob.A, -prob.A, prob.A_bar, -prob.A_bar, prob.A_eq])
    np.testing.assert_array_equal(dual.A_stacked, dual.theta[:, None] * raw)
    raw_b = np.concatenate([prob.u, -prob.l, prob.u_bar, -prob.l_bar, prob.b_eq])
    np.testing.assert_array_equal(dual.b_stacked, dual.theta * raw_b)
    layout = dual.row_map
    assert layout.n_rows == 2 * (prob.m + prob.p) + prob.q
    for j in range(prob.p):
        assert layout.bin_upper(j) == 2 * prob.m + j
        assert layout.bin_lower(j) == 2 * prob.m + prob.p + j
    np.testing.assert_array_equal(
        dual.A_stacked[layout.bin_upper(0)],
        dual.theta[layout.bin_upper(0)] * prob.A_bar[0],
    )


def test_offset_vector_matches_definition():
    prob = _random_problem(11)
    dual = build_dual_data(prob)
    expected = dual.b_stacked + dual.A_stacked @ np.linalg.solve(prob.Q, prob.c)
    np.testing.assert_allclose(dual.d, expected, atol=1e-12)


def test_dual_data_is_deterministic():
    a = build_dual_data(_random_problem(5))
    b = build_dual_data(_random_problem(5))
    np.testing.assert_array_equal(a.A_stacked, b.A_stacked)
    np.testing.assert_array_equal(a.theta, b.theta)
    assert a.L == b.L


def test_unpreconditioned_build_keeps_raw_rows():
    prob = _random_problem(2)
    dual = build_dual_data(prob, precondition=False)
    assert np.all(dual.theta == 1.0)
    np.testing.assert_array_equal(dual.A_stacked[: prob.m], prob.A)


def test_frobenius_step_size_option():
    prob = _random_problem(9)
    spectral = build_dual_data(prob, lipschitz="spectral")
    frob = build_dual_data(prob, lipschitz="frobenius")
    H = frob.A_stacked @ np.linalg.inv(prob.Q) @ frob.A_stacked.T
    assert frob.L == pytest.approx(np.linalg.norm(H, "fro"))
    assert spectral.L <= frob.L + 1e-9


def test_empty_constraint_problem_gets_unit_step():
    prob = build_problem(Q=np.eye(2), c=[1.0, 1.0])
    dual = build_dual_data(prob)
    assert dual.row_map.n_rows == 0
    assert dual.L == 1.0


def test_check_feasibility():
    prob = build_problem(
        Q=np.eye(2), c=[0.0, 0.0], A=np.eye(2), l=[0.0, 0.0], u=[1.0, 1.0],
        A_bar=[[1.0, 1.0]], l_bar=[0.0], u_bar=[2.0],
    )
    assert check_feasibility(prob, [0.5, 0.5])
    assert not check_feasibility(prob, [1.5, 0.5])
    assert check_feasibility(prob, [1.0 + 1e-9, 0.5], eps=1e-6)
