"""Accelerated dual gradient projection for a single QP relaxation.

One gpad_solve call maximizes the dual of one relaxation (a choice of
fixed binary rows) with a fixed step 1/L, Nesterov extrapolation with
gradient-based restart, periodic Farkas infeasibility detection, and an
optional incumbent-based early exit that lets branch and bound abandon
dominated nodes before convergence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .problem import DualData, RelaxationSpec

__all__ = [
    "SolveMode",
    "GpadStatus",
    "Tolerances",
    "FarkasCertificate",
    "GpadState",
    "GpadResult",
    "gpad_solve",
    "check_infeasibility",
]


class SolveMode(Enum):
    STANDARD = "standard"
    BINARY_HEURISTIC = "binary_heuristic"


class GpadStatus(Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    EARLY_STOPPED = "EarlyStopped"
    MAX_ITER = "MaxIter"


@dataclass(frozen=True)
class Tolerances:
    """Stopping and detection thresholds for the dual iteration."""

    eps_g: float = 1e-5
    eps_v: float = 1e-5
    eps_i: float = 1e-2
    max_iter: int = 20000
    infeas_check_period: int = 10

    def __post_init__(self):
        if not self.eps_g > 0:
            raise ValueError("eps_g must be positive")
        if not self.eps_i > 0:
            raise ValueError("eps_i must be positive")
        if self.eps_v < 0:
            raise ValueError("eps_v must be nonnegative")
        if self.max_iter < 1 or self.infeas_check_period < 1:
            raise ValueError("max_iter and infeas_check_period must be at least 1")


@dataclass(frozen=True)
class FarkasCertificate:
    """Scaled dual ray proving the relaxation empty: mu covers the
    one-sided rows, pi the equality rows, normalized to unit sup norm."""

    mu: np.ndarray
    pi: np.ndarray


@dataclass
class GpadState:
    """Mutable iteration snapshot handed to diagnostics hooks."""

    lambda_k: np.ndarray
    lambda_prev: np.ndarray
    nu_k: np.ndarray
    nu_prev: np.ndarray
    w: np.ndarray
    w_eq: np.ndarray
    s: np.ndarray
    s_eq: np.ndarray
    z: np.ndarray
    k: int = 0
    beta: float = 0.0


@dataclass
class GpadResult:
    status: GpadStatus
    z_star: np.ndarray
    lambda_star: np.ndarray
    nu_star: np.ndarray
    cost: float
    iters: int
    certificate: Optional[FarkasCertificate] = None
    restarts: int = 0


def _farkas_from(a: np.ndarray, y: np.ndarray, d: np.ndarray, n_ineq: int, eps_i: float):
    """Shared detection core; a = A_stacked' y must be precomputed."""
    if y.size == 0:
        return None
    alpha = float(np.abs(y).max())
    if alpha <= 0.0:
        return None
    if np.abs(a).max(initial=0.0) <= eps_i * alpha and float(d @ y) < -eps_i * alpha:
        scaled = y / alpha
        return FarkasCertificate(mu=scaled[:n_ineq].copy(), pi=scaled[n_ineq:].copy())
    return None


def check_infeasibility(
    state: GpadState, dual: DualData, tol: Tolerances
) -> Optional[FarkasCertificate]:
    """Farkas test on the current multipliers; None when nothing fires."""
    y = np.concatenate([state.lambda_k, state.nu_k])
    a = dual.A_stacked.T @ y
    return _farkas_from(a, y, dual.d, dual.row_map.n_ineq, tol.eps_i)


def _coerce_mode(mode) -> SolveMode:
    if isinstance(mode, SolveMode):
        return mode
    return SolveMode(str(mode).lower())


def gpad_solve(
    dual: DualData,
    spec: Optional[RelaxationSpec] = None,
    tol: Optional[Tolerances] = None,
    warm: Optional[np.ndarray] = None,
    incumbent: Optional[float] = None,
    mode: SolveMode = SolveMode.STANDARD,
    restart: Optional[str] = "soft",
    callback: Optional[Callable[[int, float, float, bool], None]] = None,
    inspect: Optional[Callable[[GpadState], None]] = None,
) -> GpadResult:
    """Run the dual iteration for the relaxation selected by spec.

    warm, if given, is a stacked multiplier vector (inequality part then
    equality part) used to initialize the iteration with zero momentum.
    incumbent enables the early exit: once the running dual value proves
    the node cannot beat it, iteration stops with EarlyStopped. restart
    is "soft" (re-anchor the extrapolation at the current multiplier),
    "hard" (reset the momentum schedule), or None to disable. callback
    receives (iteration, dual value, max residual, restarted) once per
    iteration; inspect receives the full state and is meant for tests.
    """
    tol = tol or Tolerances()
    mode = _coerce_mode(mode)
    if restart not in (None, "soft", "hard"):
        raise ValueError(f"restart must be 'soft', 'hard', or None, got {restart!r}")

    prob = dual.problem
    layout = dual.row_map
    n_ineq = layout.n_ineq
    n_rows = layout.n_rows
    q = layout.q
    p = prob.p

    if spec is None:
        spec = RelaxationSpec(p)
    if spec.n_binary != p:
        raise ValueError("spec was built for a different number of binary rows")
    if mode is SolveMode.BINARY_HEURISTIC and (spec.fixed_lower or spec.fixed_upper):
        raise ValueError("binary-heuristic mode runs on the fully relaxed problem only")

    # row masks induced by the fixings: the row enforcing a fixed side is
    # treated like an equality, its opposite side is removed (pinned to 0)
    mask_zero = np.zeros(n_rows, dtype=bool)
    mask_eqlike = np.zeros(n_rows, dtype=bool)
    for j in spec.fixed_lower:
        mask_eqlike[layout.bin_lower(j)] = True
        mask_zero[layout.bin_upper(j)] = True
    for j in spec.fixed_upper:
        mask_eqlike[layout.bin_upper(j)] = True
        mask_zero[layout.bin_lower(j)] = True
    mask_eq = np.zeros(n_rows, dtype=bool)
    mask_eq[layout.eq_rows] = True
    mask_sign = ~(mask_zero | mask_eqlike | mask_eq)
    mask_two = mask_eqlike | mask_eq

    heuristic = mode is SolveMode.BINARY_HEURISTIC
    if heuristic:
        bu = layout.bin_upper_rows
        bl = layout.bin_lower_rows
        mid = 0.5 * (prob.l_bar + prob.u_bar)
        theta_u = dual.theta[bu]
        # plain inequality rows keep the usual clamp in heuristic mode
        mask_plain = np.zeros(n_rows, dtype=bool)
        mask_plain[: 2 * prob.m] = True

    L = dual.L
    feas_lim = tol.eps_g / L
    opt_lim = tol.eps_v / L

    y = np.zeros(n_rows)
    if warm is not None:
        warm = np.asarray(warm, dtype=float)
        if warm.shape != (n_rows,):
            raise ValueError(f"warm vector has shape {warm.shape}, expected ({n_rows},)")
        y = warm.copy()
        y[mask_sign] = np.maximum(y[mask_sign], 0.0)
        y[mask_zero] = 0.0
    y_prev = y.copy()

    state: Optional[GpadState] = None
    k_beta = 0
    pending_soft = False
    restarts = 0
    check_early = incumbent is not None and not heuristic and math.isfinite(incumbent)

    w = y
    z = dual.primal_from_dual(y)
    s = np.zeros(n_rows)

    for k in range(tol.max_iter):
        beta = max((k_beta - 1.0) / (k_beta + 2.0), 0.0)
        if pending_soft:
            w = y.copy()
            pending_soft = False
        else:
            w = y + beta * (y - y_prev)
        z = -(dual.Qinv_At @ w) - dual.Qinv_c
        s = dual.A_over_L @ z - dual.b_over_L

        if heuristic:
            t = prob.u_bar + L * s[bu] / theta_u
            sel_upper = t >= mid
            sel_rows = np.concatenate([bu[sel_upper], bl[~sel_upper]])
            one_sided = s[mask_plain].max(initial=-np.inf)
            two_sided = max(
                np.abs(s[sel_rows]).max(initial=0.0),
                np.abs(s[mask_eq]).max(initial=0.0),
            )
            feas_ok = one_sided <= feas_lim and two_sided <= feas_lim
            opt_ok = abs(float(w @ s)) <= opt_lim
        else:
            one_sided = s[mask_sign].max(initial=-np.inf)
            two_sided = np.abs(s[mask_two]).max(initial=0.0)
            feas_ok = one_sided <= feas_lim and two_sided <= feas_lim
            opt_ok = -float(w @ s) <= opt_lim and np.all(w[mask_sign] >= 0.0)

        if feas_ok and opt_ok:
            return GpadResult(
                status=GpadStatus.OPTIMAL,
                z_star=z,
                lambda_star=w[:n_ineq].copy(),
                nu_star=w[n_ineq:].copy(),
                cost=dual.dual_value(w),
                iters=k + 1,
                restarts=restarts,
            )

        # projection: clamp sign-restricted rows, pin removed rows, leave
        # equality-like rows free
        y_next = w + s
        if heuristic:
            y_next[mask_plain] = np.maximum(y_next[mask_plain], 0.0)
            y_next[bu[~sel_upper]] = 0.0
            y_next[bl[sel_upper]] = 0.0
        else:
            y_next[mask_sign] = np.maximum(y_next[mask_sign], 0.0)
            y_next[mask_zero] = 0.0

        restarted = False
        if restart is not None and float(s @ (y_next - y)) < 0.0:
            restarted = True
            restarts += 1
            if restart == "soft":
                pending_soft = True
            else:
                k_beta = 0

        if not heuristic and (k + 1) % tol.infeas_check_period == 0:
            a = dual.A_stacked.T @ y_next
            cert = _farkas_from(a, y_next, dual.d, n_ineq, tol.eps_i)
            if cert is not None:
                return GpadResult(
                    status=GpadStatus.INFEASIBLE,
                    z_star=z,
                    lambda_star=y_next[:n_ineq].copy(),
                    nu_star=y_next[n_ineq:].copy(),
                    cost=math.inf,
                    iters=k + 1,
                    certificate=cert,
                    restarts=restarts,
                )
            if check_early:
                psi = (
                    -0.5 * dual.quad_Qinv(a)
                    - float(dual.b_stacked @ y_next)
                    - float(dual.Qinv_c @ a)
                    - 0.5 * dual.c_Qinv_c
                    + dual.obj_const
                )
                if psi >= incumbent:
                    return GpadResult(
                        status=GpadStatus.EARLY_STOPPED,
                        z_star=z,
                        lambda_star=y_next[:n_ineq].copy(),
                        nu_star=y_next[n_ineq:].copy(),
                        cost=psi,
                        iters=k + 1,
                        restarts=restarts,
                    )

        if callback is not None or inspect is not None:
            if state is None:
                state = GpadState(
                    lambda_k=y_next[:n_ineq], lambda_prev=y[:n_ineq],
                    nu_k=y_next[n_ineq:], nu_prev=y[n_ineq:],
                    w=w[:n_ineq], w_eq=w[n_ineq:], s=s[:n_ineq], s_eq=s[n_ineq:],
                    z=z, k=k, beta=beta,
                )
            else:
                state.lambda_k = y_next[:n_ineq]
                state.lambda_prev = y[:n_ineq]
                state.nu_k = y_next[n_ineq:]
                state.nu_prev = y[n_ineq:]
                state.w = w[:n_ineq]
                state.w_eq = w[n_ineq:]
                state.s = s[:n_ineq]
                state.s_eq = s[n_ineq:]
                state.z = z
                state.k = k
                state.beta = beta
            if callback is not None:
                max_res = L * max(one_sided, two_sided, 0.0)
                callback(k, dual.dual_value(y_next), max_res, restarted)
            if inspect is not None:
                inspect(state)

        y_prev = y
        y = y_next
        if not (restarted and restart == "hard"):
            k_beta += 1

    return GpadResult(
        status=GpadStatus.MAX_ITER,
        z_star=z,
        lambda_star=y[:n_ineq].copy(),
        nu_star=y[n_ineq:].copy(),
        cost=dual.dual_value(y),
        iters=tol.max_iter,
        restarts=restarts,
    )
