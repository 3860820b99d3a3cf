"""Branching rules that exploit a guessed binary assignment.

A binary warm start is a partial (or full) assignment believed to be
near-optimal. The tree is steered so the subtree agreeing with it is
explored first, and nodes whose relaxation is implied by a warm-started
ancestor are marked to skip their QP solve. An SOS1 structure (each
group of binary rows must have exactly one at its upper value) adds
marks of its own: children whose fixings already violate the
exclusivity are dropped without a solve, and children forced to a
single completion skip theirs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .bnb import (
    AllIntegral,
    NodeStack,
    NodeTuple,
    NoQpKind,
    _child_warm_vectors,
    select_branch,
)
from .problem import DualData, MiqpProblem

__all__ = [
    "BinaryWarmStart",
    "Sos1Structure",
    "BranchContext",
    "warmstart_branch",
    "warmstart_branch_maxfrac",
    "sos1_branch",
]


@dataclass(frozen=True)
class BinaryWarmStart:
    """Partial binary assignment: rows in warm_lower are guessed at their
    lower value, rows in warm_upper at their upper value. The optional
    priority tuple lists rows to branch on before anything else (in the
    given order); every priority row must appear in the assignment."""

    warm_lower: frozenset
    warm_upper: frozenset
    priority: tuple = ()

    def __post_init__(self):
        wl = frozenset(int(j) for j in self.warm_lower)
        wu = frozenset(int(j) for j in self.warm_upper)
        pr = tuple(int(j) for j in self.priority)
        object.__setattr__(self, "warm_lower", wl)
        object.__setattr__(self, "warm_upper", wu)
        object.__setattr__(self, "priority", pr)
        if wl & wu:
            raise ValueError(f"warm start assigns both sides to rows {sorted(wl & wu)}")
        if not (wl | wu):
            raise ValueError("warm start must assign at least one binary row")
        if len(set(pr)) != len(pr):
            raise ValueError("priority indices must be unique")
        for j in pr:
            if j not in wl and j not in wu:
                raise ValueError(f"priority row {j} is not part of the warm assignment")

    @property
    def cardinality(self) -> int:
        return len(self.warm_lower) + len(self.warm_upper)

    def validate_for(self, p: int) -> None:
        for j in self.warm_lower | self.warm_upper:
            if not 0 <= j < p:
                raise ValueError(f"warm start row {j} out of range [0, {p})")


@dataclass(frozen=True)
class Sos1Structure:
    """Partition of the binary rows into equal-size groups, each required
    to have exactly one member at its upper value."""

    groups: tuple

    def __post_init__(self):
        gs = tuple(frozenset(int(j) for j in g) for g in self.groups)
        object.__setattr__(self, "groups", gs)
        if not gs:
            raise ValueError("need at least one group")
        sizes = {len(g) for g in gs}
        if len(sizes) != 1 or 0 in sizes:
            raise ValueError("groups must be nonempty and all the same size")
        seen: set = set()
        for g in gs:
            if g & seen:
                raise ValueError("groups must be disjoint")
            seen |= g

    @property
    def group_size(self) -> int:
        return len(self.groups[0])

    def validate_for(self, p: int) -> None:
        covered = frozenset().union(*self.groups)
        if covered != frozenset(range(p)):
            raise ValueError("groups must partition the binary row indices exactly")

    def group_of(self, j: int) -> frozenset:
        for g in self.groups:
            if j in g:
                return g
        raise KeyError(f"binary row {j} is in no group")


@dataclass
class BranchContext:
    """Per-solve bookkeeping shared by the branching rules: node id
    allocation and child construction with inherited warm data."""

    dual: DualData
    prob: MiqpProblem
    eps_int: float = 1e-4
    created: int = 0

    def take_id(self) -> int:
        self.created += 1
        return self.created

    def spawn(
        self,
        node: NodeTuple,
        j: int,
        z_star: Optional[np.ndarray],
        lam_full: Optional[np.ndarray],
        solved: bool,
    ) -> Tuple[NodeTuple, NodeTuple]:
        """Children of `node` branching on row j, lower-fix child first.

        A solved parent hands each child its dual vector with the entry
        of the newly fixed row replaced by that row's scaled residual;
        an unsolved parent passes its own inherited vector through.
        """
        if solved and z_star is not None and lam_full is not None:
            w0, w1 = _child_warm_vectors(z_star, lam_full, self.dual, j, self.eps_int)
        else:
            w0 = w1 = node.warm_dual
        z_ref = z_star if z_star is not None else node.z_ref
        c0 = NodeTuple(
            spec=node.spec.child(j, "lower"), warm_dual=w0,
            parent_id=node.id, id=self.take_id(), z_ref=z_ref,
        )
        c1 = NodeTuple(
            spec=node.spec.child(j, "upper"), warm_dual=w1,
            parent_id=node.id, id=self.take_id(), z_ref=z_ref,
        )
        return c0, c1

    def frac_index(self, free: tuple, z: Optional[np.ndarray]) -> Tuple[int, Optional[float]]:
        """Most fractional free row based on z; falls back to the smallest
        free index when z is unavailable or already integral."""
        if z is None:
            return free[0], None
        idx = list(free)
        t = self.prob.binary_values(z)
        try:
            k = select_branch(t[idx], self.prob.l_bar[idx], self.prob.u_bar[idx], self.eps_int)
        except AllIntegral:
            k = 0
        return free[k], float(t[free[k]])

    def row_value(self, j: int, z: Optional[np.ndarray]) -> Optional[float]:
        if z is None:
            return None
        return float(self.prob.A_bar[j] @ z)

    def push_pair(
        self, stack: NodeStack, c0: NodeTuple, c1: NodeTuple,
        j: int, t_j: Optional[float], lower_first: Optional[bool] = None,
    ) -> None:
        if lower_first is None:
            mid = 0.5 * (self.prob.l_bar[j] + self.prob.u_bar[j])
            lower_first = t_j is None or t_j <= mid
        if lower_first:
            stack.push(c1)
            stack.push(c0)
        else:
            stack.push(c0)
            stack.push(c1)

    def standard_branch(
        self, node: NodeTuple, z_star, lam_full, stack: NodeStack, *, solved: bool
    ) -> None:
        j, t_j = self.frac_index(node.spec.free, z_star)
        c0, c1 = self.spawn(node, j, z_star, lam_full, solved)
        self.push_pair(stack, c0, c1, j, t_j)


def _mark(node: NodeTuple, kind: NoQpKind) -> None:
    node.no_qp = True
    node.no_qp_kind = kind


def _apply_sos1_exclusion(
    node: NodeTuple, j: int, sos1: Optional[Sos1Structure], c0: NodeTuple, c1: NodeTuple
) -> None:
    """Drop-marks for children whose fixings break the one-per-group rule.
    Counts come from the parent's fixings restricted to j's group."""
    if sos1 is None:
        return
    g = sos1.group_of(j)
    nl = len(node.spec.fixed_lower & g)
    nu = len(node.spec.fixed_upper & g)
    if nl + 1 == len(g) or nu > 1:
        _mark(c0, NoQpKind.SOS1_INFEASIBLE)
    if nu >= 1:
        _mark(c1, NoQpKind.SOS1_INFEASIBLE)


def _priority_pick(ws: BinaryWarmStart, free: tuple) -> Optional[int]:
    free_set = set(free)
    for j in ws.priority:
        if j in free_set:
            return j
    return None


def warmstart_branch(
    node: NodeTuple,
    z_star: Optional[np.ndarray],
    lam_star: Optional[np.ndarray],
    ws: BinaryWarmStart,
    stack: NodeStack,
    *,
    ctx: BranchContext,
    solved: bool,
    sos1: Optional[Sos1Structure] = None,
) -> bool:
    """Branch on the smallest still-free warm row (after any priority
    rows). The child agreeing with the warm start is explored first and,
    while the node's fixings stay inside the warm assignment, that child
    is marked to skip its QP solve. Returns False when no warm row is
    free so the caller falls back to standard branching."""
    spec = node.spec
    free = spec.free
    j = _priority_pick(ws, free)
    if j is None:
        warm_all = ws.warm_lower | ws.warm_upper
        cand = [i for i in free if i in warm_all]
        if not cand:
            return False
        j = cand[0]

    c0, c1 = ctx.spawn(node, j, z_star, lam_star, solved)
    agrees = (
        spec.fixed_lower <= ws.warm_lower
        and spec.fixed_upper <= ws.warm_upper
        and len(spec.fixed_lower) + 1 + len(spec.fixed_upper) <= ws.cardinality
    )
    warm_is_lower = j in ws.warm_lower
    if agrees:
        _mark(c0 if warm_is_lower else c1, NoQpKind.WARM_REDUNDANT)
    _apply_sos1_exclusion(node, j, sos1, c0, c1)
    ctx.push_pair(stack, c0, c1, j, None, lower_first=warm_is_lower)
    return True


def warmstart_branch_maxfrac(
    node: NodeTuple,
    z_star: Optional[np.ndarray],
    lam_star: Optional[np.ndarray],
    ws: BinaryWarmStart,
    stack: NodeStack,
    *,
    ctx: BranchContext,
    solved: bool,
    sos1: Optional[Sos1Structure] = None,
) -> bool:
    """Variant of warmstart_branch keeping the most-fractional branching
    row. The skip mark goes to whichever child matches the warm value of
    the chosen row, or to both children when the row is unassigned, as
    long as the node's fixings do not contradict the warm start."""
    spec = node.spec
    free = spec.free
    warm_all = ws.warm_lower | ws.warm_upper
    j = _priority_pick(ws, free)
    t_j: Optional[float]
    if j is not None:
        t_j = ctx.row_value(j, z_star)
    else:
        if not (set(free) & warm_all):
            return False
        j, t_j = ctx.frac_index(free, z_star)

    c0, c1 = ctx.spawn(node, j, z_star, lam_star, solved)
    fl, fu = spec.fixed_lower, spec.fixed_upper
    agrees = (
        not (fl & ws.warm_upper)
        and not (fu & ws.warm_lower)
        and len(fl & ws.warm_lower) + 1 + len(fu & ws.warm_upper) < ws.cardinality
    )
    if agrees:
        if j in ws.warm_lower:
            _mark(c0, NoQpKind.WARM_REDUNDANT)
        elif j in ws.warm_upper:
            _mark(c1, NoQpKind.WARM_REDUNDANT)
        else:
            _mark(c0, NoQpKind.WARM_REDUNDANT)
            _mark(c1, NoQpKind.WARM_REDUNDANT)
    _apply_sos1_exclusion(node, j, sos1, c0, c1)
    if j in ws.warm_lower:
        ctx.push_pair(stack, c0, c1, j, None, lower_first=True)
    elif j in ws.warm_upper:
        ctx.push_pair(stack, c0, c1, j, None, lower_first=False)
    else:
        ctx.push_pair(stack, c0, c1, j, t_j)
    return True


def sos1_branch(
    node: NodeTuple,
    z_star: Optional[np.ndarray],
    lam_star: Optional[np.ndarray],
    sos1: Sos1Structure,
    stack: NodeStack,
    *,
    ctx: BranchContext,
    solved: bool,
) -> None:
    """Most-fractional branching with one-per-group pruning marks.

    A child is dropped (no solve, no children) when its fixings make the
    group unsatisfiable, and skips its solve when all but one member of
    the group is fixed so the completion is forced.
    """
    j, t_j = ctx.frac_index(node.spec.free, z_star)
    c0, c1 = ctx.spawn(node, j, z_star, lam_star, solved)
    g = sos1.group_of(j)
    s = len(g)
    nl = len(node.spec.fixed_lower & g)
    nu = len(node.spec.fixed_upper & g)
    if nl + 1 == s or nu > 1:
        _mark(c0, NoQpKind.SOS1_INFEASIBLE)
    elif nl + 2 + nu == s:
        _mark(c0, NoQpKind.SOS1_SKIP)
    if nu >= 1:
        _mark(c1, NoQpKind.SOS1_INFEASIBLE)
    elif nl + 2 + nu == s:
        _mark(c1, NoQpKind.SOS1_SKIP)
    ctx.push_pair(stack, c0, c1, j, t_j)
