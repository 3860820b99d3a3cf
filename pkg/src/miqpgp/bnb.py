"""Depth-first branch and bound over QP relaxations.

Nodes carry a relaxation (which binary rows are fixed where), a dual
warm start inherited from the last solved ancestor, and an optional
"no QP" mark meaning the relaxation need not be solved because a warm
start already accounts for it. The tree is explored with a LIFO stack;
children are pushed so the branch agreeing with the relaxation solution
(or with the supplied warm start) is popped first.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Tuple

import numpy as np

from .gpad import GpadResult, GpadStatus, Tolerances, gpad_solve
from .problem import DualData, MiqpError, MiqpProblem, RelaxationSpec

__all__ = [
    "AllIntegral",
    "LimitExceeded",
    "MiqpStatus",
    "NoQpKind",
    "NodeTuple",
    "NodeStack",
    "TraceRecord",
    "MiqpResult",
    "select_branch",
    "child_warm_start",
    "bnb_solve",
]


class AllIntegral(MiqpError):
    """select_branch was handed a vector with every entry at a bound."""


class LimitExceeded(MiqpError):
    """Internal signal that a node or time budget ran out."""


class MiqpStatus(Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    SUBOPTIMAL = "Suboptimal"
    NO_SOLUTION = "NoSolution"


class NoQpKind(Enum):
    """Why a node was marked as not needing its own QP solve."""

    WARM_REDUNDANT = "warm_redundant"  # skip the solve, still branch
    SOS1_SKIP = "sos1_skip"            # skip the solve, still branch
    SOS1_INFEASIBLE = "sos1_infeasible"  # drop the node outright


@dataclass
class NodeTuple:
    spec: RelaxationSpec
    warm_dual: Optional[np.ndarray]
    no_qp: bool = False
    parent_id: int = 0
    id: int = 0
    no_qp_kind: Optional[NoQpKind] = None
    z_ref: Optional[np.ndarray] = None  # primal of the last solved ancestor


class NodeStack:
    """Plain LIFO stack of NodeTuple items."""

    def __init__(self):
        self.items: List[NodeTuple] = []

    def push(self, node: NodeTuple) -> None:
        self.items.append(node)

    def pop(self) -> NodeTuple:
        return self.items.pop()

    def __len__(self) -> int:
        return len(self.items)

    def __bool__(self) -> bool:
        return bool(self.items)


@dataclass(frozen=True)
class TraceRecord:
    node_id: int
    parent_id: int
    fixed_lower: tuple
    fixed_upper: tuple
    status: str  # solved | skipped_noqp | pruned_bound | infeasible | incumbent
    cost: float
    gpad_iters: int
    wall_ns: int


@dataclass
class MiqpResult:
    status: MiqpStatus
    zeta_star: Optional[np.ndarray]
    V_star: float
    qp_solved: int
    nodes_created: int
    nodes_skipped_noqp: int
    trace: List[TraceRecord] = field(default_factory=list)


def select_branch(t: np.ndarray, l_bar: np.ndarray, u_bar: np.ndarray, eps_int: float = 1e-4) -> int:
    """Index of the entry most distant from both bounds (closest to the
    interval midpoint); ties go to the smallest index. Raises AllIntegral
    when every entry already sits at a bound."""
    t = np.asarray(t, dtype=float)
    l_bar = np.asarray(l_bar, dtype=float)
    u_bar = np.asarray(u_bar, dtype=float)
    at_bound = np.minimum(np.abs(t - l_bar), np.abs(t - u_bar)) <= eps_int
    if at_bound.all():
        raise AllIntegral("every binary row value is already at a bound")
    d = np.abs(t - 0.5 * (l_bar + u_bar))
    dmin = float(d.min())
    # distances within rounding noise of the minimum count as tied
    return int(np.flatnonzero(d <= dmin + 1e-12 * (1.0 + dmin))[0])


def _child_warm_vectors(
    z_star: np.ndarray,
    y_full: np.ndarray,
    dual: DualData,
    j: int,
    eps_active: float = 1e-4,
) -> Tuple[np.ndarray, np.ndarray]:
    """Dual warm starts for the two children created by branching row j.

    The child fixing the row at its lower value gets the parent
    multiplier with the lower-row entry replaced by the scaled residual
    of that row (and analogously for the upper child); everything else
    is copied. When the row is already active at the parent the
    replacement is skipped and the parent vector is reused as is.
    """
    prob = dual.problem
    layout = dual.row_map
    t_j = float(prob.A_bar[j] @ z_star)
    near = min(abs(t_j - prob.l_bar[j]), abs(t_j - prob.u_bar[j]))
    if near <= eps_active:
        return y_full.copy(), y_full.copy()

    j_l = layout.bin_lower(j)
    j_u = layout.bin_upper(j)
    warm0 = y_full.copy()
    warm0[j_l] = (dual.A_stacked[j_l] @ z_star - dual.b_stacked[j_l]) / dual.hdiag[j_l]
    warm1 = y_full.copy()
    warm1[j_u] = (dual.A_stacked[j_u] @ z_star - dual.b_stacked[j_u]) / dual.hdiag[j_u]
    return warm0, warm1


def child_warm_start(
    parent: GpadResult, dual: DualData, j: int, eps_active: float = 1e-4
) -> Tuple[np.ndarray, np.ndarray]:
    """Warm-start pair for the children of a solved node, lower-fix first."""
    y_full = np.concatenate([parent.lambda_star, parent.nu_star])
    return _child_warm_vectors(parent.z_star, y_full, dual, j, eps_active)


def _is_integral(prob: MiqpProblem, spec: RelaxationSpec, t: np.ndarray, eps_int: float) -> bool:
    for j in spec.free:
        if min(abs(t[j] - prob.l_bar[j]), abs(t[j] - prob.u_bar[j])) > eps_int:
            return False
    return True


def bnb_solve(
    prob: MiqpProblem,
    dual: DualData,
    tol: Optional[Tolerances] = None,
    *,
    warm_binary=None,
    sos1=None,
    branch_rule: str = "smallest-warm",
    initial_incumbent: Optional[Tuple[float, Optional[np.ndarray]]] = None,
    eps_int: float = 1e-4,
    prune: bool = True,
    early_stop: bool = True,
    max_nodes: Optional[int] = None,
    time_limit: Optional[float] = None,
    root_fixed: Optional[Tuple[frozenset, frozenset]] = None,
    presolved_root: Optional[GpadResult] = None,
    known_leaf: Optional[Tuple[frozenset, frozenset]] = None,
    restart: Optional[str] = "soft",
    _qp_solver: Optional[Callable] = None,
) -> MiqpResult:
    """Solve the MIQP by depth-first branch and bound.

    warm_binary supplies a binary warm start explored first (with the
    branch_rule picking the smallest-warm-index or most-fractional
    variant); sos1 adds exclusive-or pruning; prune toggles bound-based
    fathoming; early_stop feeds the incumbent into the node solves so
    dominated relaxations exit early. root_fixed pins part of the binary
    rows for the whole tree, presolved_root reuses an already computed
    root relaxation, and known_leaf marks one leaf whose solution is
    already at hand so it is never re-solved. _qp_solver swaps the node
    QP solver out, which the test suite uses to script tree shapes.
    """
    from .warmstart import (
        BranchContext,
        sos1_branch,
        warmstart_branch,
        warmstart_branch_maxfrac,
    )

    tol = tol or Tolerances()
    p = prob.p
    if branch_rule not in ("smallest-warm", "max-frac"):
        raise ValueError(f"branch_rule must be 'smallest-warm' or 'max-frac', got {branch_rule!r}")
    if warm_binary is not None:
        warm_binary.validate_for(p)
    if sos1 is not None:
        sos1.validate_for(p)

    use_early = early_stop and prune
    V0 = math.inf
    zeta: Optional[np.ndarray] = None
    if initial_incumbent is not None:
        V0 = float(initial_incumbent[0])
        zeta = None if initial_incumbent[1] is None else np.asarray(initial_incumbent[1], float)

    if root_fixed is not None:
        root_spec = RelaxationSpec(p, frozenset(root_fixed[0]), frozenset(root_fixed[1]))
    else:
        root_spec = RelaxationSpec(p)

    ctx = BranchContext(dual=dual, prob=prob, eps_int=eps_int)
    stack = NodeStack()
    stack.push(NodeTuple(spec=root_spec, warm_dual=None, parent_id=0, id=ctx.take_id()))

    trace: List[TraceRecord] = []
    qp_solved = 0
    skipped = 0
    pops = 0
    exactness_lost = False
    limit_hit = False
    t_start = time.perf_counter()

    def solve_node(node: NodeTuple) -> GpadResult:
        if presolved_root is not None and node.id == 1:
            return presolved_root
        inc = V0 if (use_early and math.isfinite(V0)) else None
        if _qp_solver is not None:
            return _qp_solver(node.spec, node.warm_dual, inc)
        return gpad_solve(
            dual, node.spec, tol, warm=node.warm_dual, incumbent=inc, restart=restart
        )

    def record(node: NodeTuple, status: str, cost: float, iters: int, t0: int) -> None:
        trace.append(
            TraceRecord(
                node_id=node.id,
                parent_id=node.parent_id,
                fixed_lower=tuple(sorted(node.spec.fixed_lower)),
                fixed_upper=tuple(sorted(node.spec.fixed_upper)),
                status=status,
                cost=cost,
                gpad_iters=iters,
                wall_ns=time.perf_counter_ns() - t0,
            )
        )

    def branch(node: NodeTuple, res: Optional[GpadResult]) -> None:
        solved = res is not None
        z_for_t = res.z_star if solved else node.z_ref
        lam_full = (
            np.concatenate([res.lambda_star, res.nu_star]) if solved else node.warm_dual
        )
        if warm_binary is not None:
            fn = warmstart_branch if branch_rule == "smallest-warm" else warmstart_branch_maxfrac
            if fn(node, z_for_t, lam_full, warm_binary, stack,
                  ctx=ctx, solved=solved, sos1=sos1):
                return
        if sos1 is not None:
            sos1_branch(node, z_for_t, lam_full, sos1, stack, ctx=ctx, solved=solved)
            return
        ctx.standard_branch(node, z_for_t, lam_full, stack, solved=solved)

    while stack:
        if time_limit is not None and time.perf_counter() - t_start > time_limit:
            limit_hit = True
            break
        if max_nodes is not None and pops >= max_nodes:
            limit_hit = True
            break

        node = stack.pop()
        pops += 1
        t0 = time.perf_counter_ns()

        if node.no_qp_kind is NoQpKind.SOS1_INFEASIBLE:
            record(node, "infeasible", math.inf, 0, t0)
            continue

        if (
            known_leaf is not None
            and node.spec.fixed_lower == known_leaf[0]
            and node.spec.fixed_upper == known_leaf[1]
        ):
            skipped += 1
            record(node, "skipped_noqp", math.nan, 0, t0)
            continue

        if node.no_qp and node.spec.free:
            skipped += 1
            record(node, "skipped_noqp", math.nan, 0, t0)
            branch(node, None)
            continue

        # a no-QP mark on a leaf cannot be honored: without a solve there
        # would be no candidate incumbent, so solve it anyway
        res = solve_node(node)
        qp_solved += 1

        if res.status is GpadStatus.INFEASIBLE:
            record(node, "infeasible", math.inf, res.iters, t0)
            continue

        if res.status is GpadStatus.EARLY_STOPPED:
            record(node, "pruned_bound", res.cost, res.iters, t0)
            continue

        if res.status is GpadStatus.MAX_ITER:
            # the bound never certified, so neither prune nor accept; keep
            # exploring below if possible and flag lost exactness at leaves
            record(node, "solved", res.cost, res.iters, t0)
            if node.spec.free:
                try:
                    branch(node, res)
                except AllIntegral:
                    exactness_lost = True
            else:
                exactness_lost = True
            continue

        # Optimal
        if prune and res.cost > V0:
            record(node, "solved", res.cost, res.iters, t0)
            continue

        t = prob.binary_values(res.z_star)
        if _is_integral(prob, node.spec, t, eps_int):
            if res.cost <= V0:
                V0 = res.cost
                zeta = res.z_star.copy()
                record(node, "incumbent", res.cost, res.iters, t0)
            else:
                record(node, "solved", res.cost, res.iters, t0)
            continue

        record(node, "solved", res.cost, res.iters, t0)
        if not prune or res.cost <= V0:
            branch(node, res)

    if limit_hit:
        status = MiqpStatus.SUBOPTIMAL if zeta is not None else MiqpStatus.NO_SOLUTION
    elif zeta is None:
        status = MiqpStatus.NO_SOLUTION if exactness_lost else MiqpStatus.INFEASIBLE
    else:
        status = MiqpStatus.SUBOPTIMAL if exactness_lost else MiqpStatus.OPTIMAL

    return MiqpResult(
        status=status,
        zeta_star=zeta,
        V_star=V0,
        qp_solved=qp_solved,
        nodes_created=ctx.created,
        nodes_skipped_noqp=skipped,
        trace=trace,
    )
