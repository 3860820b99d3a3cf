"""Slow but trustworthy reference solvers used to cross-check the fast path.

reference_qp_solve enumerates candidate active sets and solves plain KKT
systems, which is exact up to linear algebra roundoff and completely
independent of the dual gradient machinery. enumerate_miqp wraps it with
exhaustive enumeration of all binary fixings. Both are meant for small
instances and tests, not production use.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .problem import MiqpError, MiqpProblem, RelaxationSpec

__all__ = ["TooLarge", "OracleResult", "reference_qp_solve", "enumerate_miqp"]

# KKT residual level certified on every Optimal result.
_KKT_TOL = 1e-8

# Active-set candidates tried before "auto" hands over to the interior-point
# fallback; "enumerate" keeps going up to the hard cap and then gives up.
_AUTO_BUDGET = 200_000
_HARD_BUDGET = 2_000_000


class TooLarge(MiqpError):
    """Instance exceeds what the reference solver is willing to enumerate."""


@dataclass
class OracleResult:
    status: str  # "Optimal" or "Infeasible"
    z: Optional[np.ndarray]
    cost: float
    active_set: object  # tuple of row indices (QP), fixing bitmask int (MIQP)


def _assemble(prob: MiqpProblem, spec: Optional[RelaxationSpec]):
    """Split the problem into one-sided inequalities and equalities.

    Binary rows fixed by spec become equalities; free ones contribute an
    upper and a lower one-sided row. Plain rows with l == u are promoted
    to equalities so the active-set search does not have to discover
    them. Returns (G_in, h_in, G_eq, h_eq).
    """
    n = prob.n
    ineq_rows, ineq_rhs = [], []
    eq_rows, eq_rhs = [], []

    for i in range(prob.m):
        if prob.l[i] == prob.u[i]:
            eq_rows.append(prob.A[i])
            eq_rhs.append(prob.u[i])
        else:
            ineq_rows.append(prob.A[i])
            ineq_rhs.append(prob.u[i])
            ineq_rows.append(-prob.A[i])
            ineq_rhs.append(-prob.l[i])

    fixed_lower = spec.fixed_lower if spec is not None else frozenset()
    fixed_upper = spec.fixed_upper if spec is not None else frozenset()
    for j in range(prob.p):
        if j in fixed_lower:
            eq_rows.append(prob.A_bar[j])
            eq_rhs.append(prob.l_bar[j])
        elif j in fixed_upper:
            eq_rows.append(prob.A_bar[j])
            eq_rhs.append(prob.u_bar[j])
        else:
            ineq_rows.append(prob.A_bar[j])
            ineq_rhs.append(prob.u_bar[j])
            ineq_rows.append(-prob.A_bar[j])
            ineq_rhs.append(-prob.l_bar[j])

    for i in range(prob.q):
        eq_rows.append(prob.A_eq[i])
        eq_rhs.append(prob.b_eq[i])

    G_in = np.array(ineq_rows) if ineq_rows else np.zeros((0, n))
    h_in = np.array(ineq_rhs) if ineq_rhs else np.zeros(0)
    G_eq = np.array(eq_rows) if eq_rows else np.zeros((0, n))
    h_eq = np.array(eq_rhs) if eq_rhs else np.zeros(0)
    return G_in, h_in, G_eq, h_eq


def _kkt_solve(Q, c, G, h):
    """Solve the equality-constrained QP KKT system; None if singular."""
    n = Q.shape[0]
    k = G.shape[0]
    K = np.zeros((n + k, n + k))
    K[:n, :n] = Q
    K[:n, n:] = G.T
    K[n:, :n] = G
    rhs = np.concatenate([-c, h])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        return None
    scale = max(1.0, np.abs(rhs).max(), np.abs(K).max())
    if not np.all(np.isfinite(sol)) or np.abs(K @ sol - rhs).max() > 1e-9 * scale:
        return None
    return sol[:n], sol[n:]


def _certify(Q, c, z, G_in, h_in, G_eq, h_eq, mu, nu, tol=_KKT_TOL) -> bool:
    """Independent KKT residual check on a claimed optimal point."""
    scale = max(1.0, np.abs(c).max() if c.size else 1.0, np.abs(Q @ z).max())
    grad = Q @ z + c
    if G_in.shape[0]:
        grad = grad + G_in.T @ mu
    if G_eq.shape[0]:
        grad = grad + G_eq.T @ nu
    if np.abs(grad).max() > tol * scale:
        return False
    if G_in.shape[0]:
        slack = h_in - G_in @ z
        bscale = max(1.0, np.abs(h_in).max())
        if slack.min() < -tol * bscale:
            return False
        if mu.min() < -tol * max(1.0, np.abs(mu).max()):
            return False
        if np.abs(mu * slack).max() > tol * scale * max(1.0, bscale):
            return False
    if G_eq.shape[0]:
        if np.abs(G_eq @ z - h_eq).max() > tol * max(1.0, np.abs(h_eq).max()):
            return False
    return True


def _enumerate_active_sets(Q, c, G_in, h_in, G_eq, h_eq, budget):
    """Cardinality-ascending active-set search.

    Returns (result, tried) where result is an OracleResult or None when
    the budget ran out before the search finished.
    """
    n = Q.shape[0]
    n_in = G_in.shape[0]
    max_card = min(n, n_in)
    tried = 0
    eq_degenerate = False
    feas_tol = 1e-8 * max(1.0, np.abs(h_in).max() if h_in.size else 1.0)

    for card in range(max_card + 1):
        for combo in itertools.combinations(range(n_in), card):
            tried += 1
            if tried > budget:
                return None, tried
            act = list(combo)
            G = np.vstack([G_eq, G_in[act]]) if (G_eq.shape[0] or act) else np.zeros((0, n))
            h = np.concatenate([h_eq, h_in[act]])
            sol = _kkt_solve(Q, c, G, h)
            if sol is None:
                if card == 0:
                    # the equality block alone is rank deficient, so a
                    # complete sweep cannot certify infeasibility
                    eq_degenerate = True
                continue
            z, lam = sol
            mu_act = lam[G_eq.shape[0]:]
            if mu_act.size and mu_act.min() < -_KKT_TOL:
                continue
            if n_in:
                inact = np.setdiff1d(np.arange(n_in), act, assume_unique=True)
                if inact.size and np.any(G_in[inact] @ z > h_in[inact] + feas_tol):
                    continue
            mu = np.zeros(n_in)
            mu[act] = np.maximum(mu_act, 0.0)
            nu = lam[: G_eq.shape[0]]
            if not _certify(Q, c, z, G_in, h_in, G_eq, h_eq, mu, nu):
                continue
            return ("optimal", z, tuple(combo)), tried

    if eq_degenerate:
        return None, tried
    # a feasible problem always exposes some linearly independent active
    # subset as a KKT-consistent candidate, so full exhaustion is a proof
    return ("infeasible", None, None), tried


def _lp_feasible(G_in, h_in, G_eq, h_eq):
    """Phase-1 check of the constraint polytope; True/False, None if unsettled."""
    from scipy.optimize import linprog

    n = G_in.shape[1] if G_in.shape[0] else G_eq.shape[1]
    res = linprog(
        c=np.zeros(n),
        A_ub=G_in if G_in.shape[0] else None,
        b_ub=h_in if G_in.shape[0] else None,
        A_eq=G_eq if G_eq.shape[0] else None,
        b_eq=h_eq if G_eq.shape[0] else None,
        bounds=[(None, None)] * n,
        method="highs",
    )
    if res.status == 2:
        return False
    if res.status == 0:
        return True
    return None


def _interior_point(Q, c, G_in, h_in, G_eq, h_eq):
    """Fallback path: interior-point solve, active-set polish, KKT certification."""
    from cvxopt import matrix, solvers

    n = Q.shape[0]
    opts = {
        "show_progress": False,
        "abstol": 1e-10,
        "reltol": 1e-10,
        "feastol": 1e-10,
        "maxiters": 200,
    }
    kwargs = {}
    if G_in.shape[0]:
        kwargs["G"] = matrix(G_in)
        kwargs["h"] = matrix(h_in)
    else:
        kwargs["G"] = matrix(np.zeros((1, n)))
        kwargs["h"] = matrix(np.ones(1))
    if G_eq.shape[0]:
        kwargs["A"] = matrix(G_eq)
        kwargs["b"] = matrix(h_eq)
    try:
        sol = solvers.qp(matrix(Q), matrix(c), options=opts, **kwargs)
    except ValueError as exc:
        # the interior-point code can die with "domain error" instead of
        # flagging infeasibility; settle it with a phase-1 feasibility LP
        if _lp_feasible(G_in, h_in, G_eq, h_eq) is False:
            return "infeasible", None, None
        raise MiqpError(f"reference fallback solver rejected the problem: {exc}") from exc

    if sol["status"] == "primal infeasible":
        return "infeasible", None, None
    if sol["status"] not in ("optimal", "unknown"):
        if _lp_feasible(G_in, h_in, G_eq, h_eq) is False:
            return "infeasible", None, None
        raise MiqpError(f"reference fallback solver returned status {sol['status']!r}")

    z_ip = np.array(sol["x"]).ravel()
    mu_ip = np.array(sol["z"]).ravel()[: G_in.shape[0]] if G_in.shape[0] else np.zeros(0)

    # polish: re-solve on the identified active set, trying a few
    # identification thresholds, and keep the first certified answer
    n_in = G_in.shape[0]
    slack = h_in - G_in @ z_ip if n_in else np.zeros(0)
    for thresh in (1e-6, 1e-7, 1e-5):
        act = np.flatnonzero((slack < thresh) | (mu_ip > thresh)) if n_in else np.array([], int)
        if act.size > n:
            order = np.argsort(slack[act])
            act = act[order[:n]]
        G = np.vstack([G_eq, G_in[act]]) if (G_eq.shape[0] or act.size) else np.zeros((0, n))
        h = np.concatenate([h_eq, h_in[act]])
        polished = _kkt_solve(Q, c, G, h)
        if polished is None:
            continue
        z, lam = polished
        mu = np.zeros(n_in)
        mu[act] = lam[G_eq.shape[0]:]
        if mu.size and mu.min() < -1e-7:
            continue
        mu = np.maximum(mu, 0.0)
        nu = lam[: G_eq.shape[0]]
        if _certify(Q, c, z, G_in, h_in, G_eq, h_eq, mu, nu):
            return "optimal", z, tuple(int(i) for i in act)

    # last resort: certify the interior-point iterate itself, fitting
    # multipliers by nonnegative least squares on the stationarity system
    from scipy.optimize import nnls

    cols = []
    if n_in:
        cols.append(G_in.T)
    if G_eq.shape[0]:
        cols.append(G_eq.T)
        cols.append(-G_eq.T)
    if cols:
        M = np.hstack(cols)
        x, _ = nnls(M, -(Q @ z_ip + c))
        mu = x[:n_in] if n_in else np.zeros(0)
        k = G_eq.shape[0]
        nu = x[n_in : n_in + k] - x[n_in + k : n_in + 2 * k] if k else np.zeros(0)
    else:
        mu = np.zeros(0)
        nu = np.zeros(0)
    if _certify(Q, c, z_ip, G_in, h_in, G_eq, h_eq, mu, nu):
        act = tuple(int(i) for i in np.flatnonzero(mu > 1e-8)) if n_in else ()
        return "optimal", z_ip, act
    raise MiqpError("reference fallback solver could not certify its answer")


def reference_qp_solve(
    prob: MiqpProblem,
    spec: Optional[RelaxationSpec] = None,
    method: str = "auto",
) -> OracleResult:
    """Solve one QP relaxation by brute force.

    spec fixes a subset of the binary rows as equalities; the rest keep
    their interval relaxation. method "enumerate" forces pure active-set
    enumeration (raising TooLarge past the hard budget), while "auto"
    switches to an interior-point fallback when enumeration gets big.
    """
    if method not in ("auto", "enumerate"):
        raise ValueError(f"method must be 'auto' or 'enumerate', got {method!r}")
    if spec is not None and spec.n_binary != prob.p:
        raise MiqpError("spec was built for a different number of binary rows")

    G_in, h_in, G_eq, h_eq = _assemble(prob, spec)
    budget = _HARD_BUDGET if method == "enumerate" else _AUTO_BUDGET
    out, _ = _enumerate_active_sets(prob.Q, prob.c, G_in, h_in, G_eq, h_eq, budget)

    if out is None:
        if method == "enumerate":
            raise TooLarge(
                f"active-set enumeration over {G_in.shape[0]} one-sided rows "
                f"exceeded {budget} candidates"
            )
        kind, z, act = _interior_point(prob.Q, prob.c, G_in, h_in, G_eq, h_eq)
    else:
        kind, z, act = out

    if kind == "infeasible":
        return OracleResult(status="Infeasible", z=None, cost=math.inf, active_set=None)
    return OracleResult(status="Optimal", z=z, cost=prob.cost(z), active_set=act)


def enumerate_miqp(
    prob: MiqpProblem,
    max_binaries: int = 14,
    method: str = "auto",
) -> OracleResult:
    """Ground-truth MIQP solve by trying every one of the 2^p binary fixings.

    Bit i of the reported active_set bitmask is 1 when binary row i sits
    at its upper value in the optimal fixing.
    """
    p = prob.p
    if p > max_binaries:
        raise TooLarge(f"2^{p} fixings exceed the max_binaries={max_binaries} guard")

    best_cost = math.inf
    best_z = None
    best_mask = None
    visited = 0
    for mask in range(1 << p):
        upper = frozenset(j for j in range(p) if mask >> j & 1)
        lower = frozenset(range(p)) - upper
        spec = RelaxationSpec(p, fixed_lower=lower, fixed_upper=upper)
        res = reference_qp_solve(prob, spec, method=method)
        visited += 1
        if res.status == "Optimal" and res.cost < best_cost:
            best_cost = res.cost
            best_z = res.z
            best_mask = mask
    assert visited == 1 << p

    if best_z is None:
        return OracleResult(status="Infeasible", z=None, cost=math.inf, active_set=None)
    return OracleResult(status="Optimal", z=best_z, cost=best_cost, active_set=best_mask)
