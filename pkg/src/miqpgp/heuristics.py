"""Fast suboptimal solves that avoid most (or all) of the tree search.

Two pipelines live here. The projection heuristic solves the root
relaxation, then re-runs the dual iteration with the binary rows steered
to whichever bound their running value is closer to; it returns one
integer-feasible point without branching. The partial-fixing method
("mid-way") also starts from the root relaxation, fixes the binary rows
whose relaxed values are already near a bound, and hands only the
undecided rows to branch and bound, seeded with the projection
heuristic's point as the initial incumbent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .bnb import MiqpResult, MiqpStatus, bnb_solve
from .gpad import GpadResult, GpadStatus, SolveMode, Tolerances, gpad_solve
from .problem import DualData, MiqpError, MiqpProblem, check_feasibility
from .warmstart import BinaryWarmStart

__all__ = [
    "ThresholdOrder",
    "HeuristicResult",
    "MidwayPartition",
    "heuristic_solve",
    "midway_partition",
    "midway_solve",
]


class ThresholdOrder(MiqpError):
    """Fixing thresholds must satisfy l_bar <= eps_low < eps_high <= u_bar."""


@dataclass
class HeuristicResult:
    z_H: Optional[np.ndarray]
    V_H: float
    status: str  # "Feasible" | "NotFound"
    root: Optional[GpadResult] = None  # the solved root relaxation, if any


@dataclass(frozen=True)
class MidwayPartition:
    """Split of the binary rows after a root solve: fix_lower and
    fix_upper hold the rows whose relaxed value sits at or beyond the
    thresholds, branch_set holds everything still undecided."""

    fix_lower: frozenset
    fix_upper: frozenset
    branch_set: frozenset
    thresholds: Tuple[np.ndarray, np.ndarray]


def _binary_pattern(
    prob: MiqpProblem, z: np.ndarray, eps_int: float
) -> Optional[Tuple[frozenset, frozenset]]:
    """Classify every binary row by the bound it sits on, or None if any
    row is farther than eps_int from both bounds."""
    t = prob.binary_values(z)
    lows, ups = [], []
    for j in range(prob.p):
        d_low = abs(t[j] - prob.l_bar[j])
        d_up = abs(t[j] - prob.u_bar[j])
        if min(d_low, d_up) > eps_int:
            return None
        (lows if d_low <= d_up else ups).append(j)
    return frozenset(lows), frozenset(ups)


def _projection_phase(
    prob: MiqpProblem,
    dual: DualData,
    tol: Tolerances,
    root: GpadResult,
    eps_int: float,
) -> HeuristicResult:
    """Re-run the dual iteration in binary-steering mode, warm-started
    from the root multipliers, and verify the point it lands on."""
    warm = np.concatenate([root.lambda_star, root.nu_star])
    res = gpad_solve(dual, None, tol, warm=warm, mode=SolveMode.BINARY_HEURISTIC)
    if res.status is not GpadStatus.OPTIMAL:
        return HeuristicResult(None, math.inf, "NotFound", root)
    z = res.z_star
    pattern = _binary_pattern(prob, z, eps_int)
    if pattern is None or not check_feasibility(prob, z, eps=10.0 * tol.eps_g):
        return HeuristicResult(None, math.inf, "NotFound", root)
    return HeuristicResult(z.copy(), prob.cost(z), "Feasible", root)


def heuristic_solve(
    prob: MiqpProblem,
    dual: DualData,
    tol: Optional[Tolerances] = None,
    eps_int: float = 1e-4,
) -> HeuristicResult:
    """One integer-feasible point without branching, or NotFound.

    The root relaxation is solved first; an infeasible root proves the
    MIQP itself infeasible, and an already-integral root is returned as
    is. Otherwise the projection phase takes over. Any Feasible result
    has been checked against the constraints independently of the
    solver's own residuals.
    """
    tol = tol or Tolerances()
    root = gpad_solve(dual, None, tol)
    if root.status is not GpadStatus.OPTIMAL:
        return HeuristicResult(None, math.inf, "NotFound", root)
    pattern = _binary_pattern(prob, root.z_star, eps_int)
    if pattern is not None and check_feasibility(prob, root.z_star, eps=10.0 * tol.eps_g):
        return HeuristicResult(root.z_star.copy(), prob.cost(root.z_star), "Feasible", root)
    return _projection_phase(prob, dual, tol, root, eps_int)


def midway_partition(
    z_R: np.ndarray,
    prob: MiqpProblem,
    thresholds: Optional[Tuple] = None,
) -> MidwayPartition:
    """Partition the binary rows by how decisively the root relaxation
    placed them. Defaults put the thresholds 1% of the row range inside
    each bound."""
    t = prob.binary_values(z_R)
    span = prob.u_bar - prob.l_bar
    if thresholds is None:
        eps_low = prob.l_bar + 0.01 * span
        eps_high = prob.u_bar - 0.01 * span
    else:
        eps_low = np.broadcast_to(np.asarray(thresholds[0], float), (prob.p,)).copy()
        eps_high = np.broadcast_to(np.asarray(thresholds[1], float), (prob.p,)).copy()
    bad = (eps_low < prob.l_bar) | (eps_high > prob.u_bar) | (eps_low >= eps_high)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise ThresholdOrder(
            f"row {i}: need l_bar <= eps_low < eps_high <= u_bar, got "
            f"[{prob.l_bar[i]}, {eps_low[i]}, {eps_high[i]}, {prob.u_bar[i]}]"
        )
    fix_lower = frozenset(int(j) for j in np.flatnonzero(t <= eps_low))
    fix_upper = frozenset(int(j) for j in np.flatnonzero(t >= eps_high))
    branch = frozenset(range(prob.p)) - fix_lower - fix_upper
    return MidwayPartition(fix_lower, fix_upper, branch, (eps_low, eps_high))


def midway_solve(
    prob: MiqpProblem,
    dual: DualData,
    tol: Optional[Tolerances] = None,
    thresholds: Optional[Tuple] = None,
    mode: str = "fix",
    eps_int: float = 1e-4,
    max_nodes: Optional[int] = None,
    time_limit: Optional[float] = None,
) -> MiqpResult:
    """Partial-fixing solve. mode="fix" pins the confident rows for the
    whole tree (cheap, possibly suboptimal; the returned status says so);
    mode="prioritize" keeps the full tree but explores the heuristic
    pattern first, so the answer is exact.

    The projection-phase run that produces the initial incumbent is not
    included in the returned qp_solved count, which covers tree nodes
    only.
    """
    if mode not in ("fix", "prioritize"):
        raise ValueError(f"mode must be 'fix' or 'prioritize', got {mode!r}")
    tol = tol or Tolerances()
    limits = {"max_nodes": max_nodes, "time_limit": time_limit}

    root = gpad_solve(dual, None, tol)
    if root.status is not GpadStatus.OPTIMAL:
        # infeasible or unconverged root: the tree solver reports it
        return bnb_solve(prob, dual, tol, presolved_root=root, eps_int=eps_int, **limits)
    if _binary_pattern(prob, root.z_star, eps_int) is not None:
        # integral root, nothing to fix or branch
        return bnb_solve(prob, dual, tol, presolved_root=root, eps_int=eps_int, **limits)

    part = midway_partition(root.z_star, prob, thresholds)
    heur = _projection_phase(prob, dual, tol, root, eps_int)

    if mode == "fix":
        if not part.branch_set:
            if heur.status == "Feasible":
                return MiqpResult(
                    status=MiqpStatus.SUBOPTIMAL, zeta_star=heur.z_H, V_star=heur.V_H,
                    qp_solved=2, nodes_created=1, nodes_skipped_noqp=0, trace=[],
                )
            return MiqpResult(
                status=MiqpStatus.NO_SOLUTION, zeta_star=None, V_star=math.inf,
                qp_solved=2, nodes_created=1, nodes_skipped_noqp=0, trace=[],
            )
        inc = (heur.V_H, heur.z_H) if heur.status == "Feasible" else None
        res = bnb_solve(
            prob, dual, tol,
            root_fixed=(part.fix_lower, part.fix_upper),
            initial_incumbent=inc, eps_int=eps_int, **limits,
        )
        restricted = bool(part.fix_lower or part.fix_upper)
        if restricted:
            # the fixed rows were never proven, so exactness claims drop
            if res.status is MiqpStatus.OPTIMAL:
                res.status = MiqpStatus.SUBOPTIMAL
            elif res.status is MiqpStatus.INFEASIBLE:
                res.status = MiqpStatus.NO_SOLUTION
        return res

    # prioritize: exact solve over the full tree, heuristic subtree first
    if heur.status == "Feasible":
        pattern = _binary_pattern(prob, heur.z_H, eps_int)
        ws = BinaryWarmStart(
            warm_lower=pattern[0], warm_upper=pattern[1],
            priority=tuple(sorted(part.fix_lower | part.fix_upper)),
        )
        return bnb_solve(
            prob, dual, tol,
            warm_binary=ws, branch_rule="max-frac",
            presolved_root=root, known_leaf=pattern,
            initial_incumbent=(heur.V_H, heur.z_H),
            eps_int=eps_int, **limits,
        )
    confident = part.fix_lower | part.fix_upper
    if confident:
        ws = BinaryWarmStart(
            warm_lower=part.fix_lower, warm_upper=part.fix_upper,
            priority=tuple(sorted(confident)),
        )
        return bnb_solve(
            prob, dual, tol, warm_binary=ws, branch_rule="max-frac",
            presolved_root=root, eps_int=eps_int, **limits,
        )
    return bnb_solve(prob, dual, tol, presolved_root=root, eps_int=eps_int, **limits)
