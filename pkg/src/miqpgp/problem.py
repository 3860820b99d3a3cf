"""Problem containers, validation, and dual-side precomputation.

The solver works on problems of the form

    minimize    0.5 z'Qz + c'z + const
    subject to  l <= A z <= u          (m two-sided inequality rows)
                A_eq z = b_eq          (q equality rows)
                Abar_i z in {lbar_i, ubar_i},  i = 1..p   (binary rows)

Everything downstream (GPAD, branch and bound, heuristics) consumes the
stacked dual representation built here once per problem.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import cholesky, solve_triangular

__all__ = [
    "MiqpError",
    "DimensionMismatch",
    "NotPositiveDefinite",
    "BoundsInverted",
    "ZeroRow",
    "MiqpProblem",
    "RelaxationSpec",
    "RowLayout",
    "DualData",
    "build_problem",
    "build_dual_data",
    "check_feasibility",
]


class MiqpError(Exception):
    """Base class for solver errors."""


class DimensionMismatch(MiqpError):
    """Array shapes are inconsistent with each other."""


class NotPositiveDefinite(MiqpError):
    """Q is not symmetric positive definite."""


class BoundsInverted(MiqpError):
    """A lower bound exceeds its upper bound, or a bound is not finite."""


class ZeroRow(MiqpError):
    """A constraint row is identically zero."""


def _as_matrix(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim != 2:
        raise DimensionMismatch(f"{name} must be a 2-d array, got ndim={a.ndim}")
    return a


def _as_vector(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim != 1:
        raise DimensionMismatch(f"{name} must be a 1-d array, got ndim={a.ndim}")
    return a


@dataclass(frozen=True)
class MiqpProblem:
    """Validated, immutable problem data. Build instances via build_problem."""

    Q: np.ndarray
    c: np.ndarray
    A: np.ndarray
    l: np.ndarray
    u: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    A_bar: np.ndarray
    l_bar: np.ndarray
    u_bar: np.ndarray
    obj_const: float = 0.0

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def q(self) -> int:
        return self.A_eq.shape[0]

    @property
    def p(self) -> int:
        return self.A_bar.shape[0]

    def cost(self, z: np.ndarray) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.Q @ z + self.c @ z + self.obj_const)

    def binary_values(self, z: np.ndarray) -> np.ndarray:
        """Values of the p binary rows at a point z."""
        return self.A_bar @ np.asarray(z, dtype=float)


def build_problem(
    Q,
    c,
    A=None,
    l=None,
    u=None,
    A_eq=None,
    b_eq=None,
    A_bar=None,
    l_bar=None,
    u_bar=None,
    obj_const: float = 0.0,
) -> MiqpProblem:
    """Validate raw arrays and assemble a MiqpProblem.

    Missing constraint blocks may be passed as None and become empty.
    Raises DimensionMismatch, NotPositiveDefinite, or BoundsInverted on
    bad input.
    """
    Q = _as_matrix(Q, "Q")
    c = _as_vector(c, "c")
    n = c.shape[0]
    if Q.shape != (n, n):
        raise DimensionMismatch(f"Q is {Q.shape}, expected ({n}, {n}) to match c")

    scale = max(1.0, float(np.abs(Q).max()))
    if np.abs(Q - Q.T).max() > 1e-10 * scale:
        raise NotPositiveDefinite("Q is not symmetric")
    try:
        cholesky(Q)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("Q has a nonpositive eigenvalue") from exc

    def block(mat, lo, hi, mat_name, lo_name, hi_name):
        if mat is None:
            return np.zeros((0, n)), np.zeros(0), np.zeros(0)
        mat = _as_matrix(mat, mat_name)
        lo = _as_vector(lo, lo_name)
        hi = _as_vector(hi, hi_name)
        rows = mat.shape[0]
        if mat.shape[1] != n:
            raise DimensionMismatch(f"{mat_name} has {mat.shape[1]} columns, expected {n}")
        if lo.shape[0] != rows or hi.shape[0] != rows:
            raise DimensionMismatch(
                f"{lo_name}/{hi_name} must have length {rows} to match {mat_name}"
            )
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise BoundsInverted(f"{lo_name}/{hi_name} must be finite")
        return mat, lo, hi

    A, l, u = block(A, l, u, "A", "l", "u")
    if np.any(l > u):
        bad = int(np.argmax(l > u))
        raise BoundsInverted(f"l[{bad}] > u[{bad}]")

    A_bar, l_bar, u_bar = block(A_bar, l_bar, u_bar, "A_bar", "l_bar", "u_bar")
    if np.any(l_bar >= u_bar):
        bad = int(np.argmax(l_bar >= u_bar))
        raise BoundsInverted(
            f"binary row {bad} needs l_bar < u_bar, got {l_bar[bad]} >= {u_bar[bad]}"
        )

    if A_eq is None:
        A_eq = np.zeros((0, n))
        b_eq = np.zeros(0)
    else:
        A_eq = _as_matrix(A_eq, "A_eq")
        b_eq = _as_vector(b_eq, "b_eq")
        if A_eq.shape[1] != n:
            raise DimensionMismatch(f"A_eq has {A_eq.shape[1]} columns, expected {n}")
        if b_eq.shape[0] != A_eq.shape[0]:
            raise DimensionMismatch("b_eq length must match the number of A_eq rows")
        if not np.all(np.isfinite(b_eq)):
            raise BoundsInverted("b_eq must be finite")

    for mat, name in ((A, "A"), (A_bar, "A_bar"), (A_eq, "A_eq")):
        if mat.shape[0]:
            norms = np.abs(mat).max(axis=1)
            if np.any(norms == 0.0):
                raise ZeroRow(f"{name} row {int(np.argmax(norms == 0.0))} is identically zero")

    return MiqpProblem(
        Q=Q, c=c, A=A, l=l, u=u, A_eq=A_eq, b_eq=b_eq,
        A_bar=A_bar, l_bar=l_bar, u_bar=u_bar, obj_const=float(obj_const),
    )


@dataclass(frozen=True)
class RelaxationSpec:
    """Which binary rows are fixed at which side in a QP relaxation.

    Rows in fixed_lower are pinned to their lower value, rows in
    fixed_upper to their upper value, and the rest stay relaxed to the
    interval [l_bar, u_bar]. Indices are 0-based row numbers into A_bar.
    """

    n_binary: int
    fixed_lower: frozenset = frozenset()
    fixed_upper: frozenset = frozenset()

    def __post_init__(self):
        fl = frozenset(self.fixed_lower)
        fu = frozenset(self.fixed_upper)
        object.__setattr__(self, "fixed_lower", fl)
        object.__setattr__(self, "fixed_upper", fu)
        if fl & fu:
            raise ValueError(f"binary rows fixed on both sides: {sorted(fl & fu)}")
        for j in fl | fu:
            if not 0 <= j < self.n_binary:
                raise ValueError(f"binary row index {j} out of range [0, {self.n_binary})")

    @property
    def free(self) -> tuple:
        """Sorted tuple of still-relaxed binary row indices."""
        taken = self.fixed_lower | self.fixed_upper
        return tuple(j for j in range(self.n_binary) if j not in taken)

    def child(self, j: int, side: str) -> "RelaxationSpec":
        """Return a copy with free row j additionally fixed at `side` ('lower' or 'upper')."""
        if side == "lower":
            return RelaxationSpec(self.n_binary, self.fixed_lower | {j}, self.fixed_upper)
        if side == "upper":
            return RelaxationSpec(self.n_binary, self.fixed_lower, self.fixed_upper | {j})
        raise ValueError(f"side must be 'lower' or 'upper', got {side!r}")


@dataclass(frozen=True)
class RowLayout:
    """Index bookkeeping for the stacked dual constraint matrix.

    Row order of the stack: the m upper inequality rows (A z <= u), the
    m lower rows (-A z <= -l), the p upper binary rows (Abar z <= ubar),
    the p lower binary rows (-Abar z <= -lbar), then the q equality rows.
    """

    m: int
    p: int
    q: int

    @property
    def n_ineq(self) -> int:
        return 2 * (self.m + self.p)

    @property
    def n_rows(self) -> int:
        return self.n_ineq + self.q

    def bin_upper(self, j: int) -> int:
        return 2 * self.m + j

    def bin_lower(self, j: int) -> int:
        return 2 * self.m + self.p + j

    @property
    def bin_upper_rows(self) -> np.ndarray:
        return np.arange(2 * self.m, 2 * self.m + self.p)

    @property
    def bin_lower_rows(self) -> np.ndarray:
        return np.arange(2 * self.m + self.p, 2 * self.m + 2 * self.p)

    @property
    def eq_rows(self) -> slice:
        return slice(self.n_ineq, self.n_rows)


@dataclass
class DualData:
    """Preprocessed dual-side data shared by every QP relaxation of one problem.

    A_stacked and b_stacked hold the row-scaled stacked system, d the
    scaled offset b + A Qinv c, theta the per-row scale factors applied
    (ones when preconditioning is off), and L the gradient Lipschitz
    constant used as the fixed dual step size. The remaining fields are
    caches so the per-iteration work is two matrix-vector products.
    """

    problem: MiqpProblem
    A_stacked: np.ndarray
    b_stacked: np.ndarray
    d: np.ndarray
    Qinv_chol: np.ndarray
    L: float
    theta: np.ndarray
    row_map: RowLayout
    hdiag: np.ndarray = field(repr=False, default=None)
    Qinv_At: np.ndarray = field(repr=False, default=None)
    Qinv_c: np.ndarray = field(repr=False, default=None)
    c_Qinv_c: float = 0.0
    A_over_L: np.ndarray = field(repr=False, default=None)
    b_over_L: np.ndarray = field(repr=False, default=None)
    obj_const: float = 0.0

    def solve_Q(self, v: np.ndarray) -> np.ndarray:
        """Q^{-1} v through the cached Cholesky factor."""
        half = solve_triangular(self.Qinv_chol, v, trans="T", lower=False)
        return solve_triangular(self.Qinv_chol, half, lower=False)

    def quad_Qinv(self, a: np.ndarray) -> float:
        """a' Q^{-1} a, computed as a squared triangular solve."""
        half = solve_triangular(self.Qinv_chol, a, trans="T", lower=False)
        return float(half @ half)

    def dual_value(self, y: np.ndarray) -> float:
        """Dual objective at stacked multiplier y (lower bound on the primal optimum)."""
        a = self.A_stacked.T @ y
        return (
            -0.5 * self.quad_Qinv(a)
            - float(self.b_stacked @ y)
            - float(self.Qinv_c @ a)
            - 0.5 * self.c_Qinv_c
            + self.obj_const
        )

    def primal_from_dual(self, y: np.ndarray) -> np.ndarray:
        """Minimizer of the Lagrangian at stacked multiplier y."""
        return -(self.Qinv_At @ y) - self.Qinv_c


def _spectral_bound(gram: np.ndarray, fro: float) -> float:
    """Largest eigenvalue of a PSD gram matrix by power iteration.

    Falls back to the Frobenius norm if the iteration stalls before
    reaching a 1e-8 relative increment.
    """
    size = gram.shape[0]
    rng = np.random.default_rng(12345)
    v = rng.standard_normal(size)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(500):
        gv = gram @ v
        norm = np.linalg.norm(gv)
        if norm == 0.0:
            return 0.0
        v = gv / norm
        lam_new = float(v @ gram @ v)
        if abs(lam_new - lam) <= 1e-8 * max(1.0, abs(lam_new)):
            return lam_new
        lam = lam_new
    return fro


def build_dual_data(
    prob: MiqpProblem,
    precondition: bool = True,
    lipschitz: str = "spectral",
) -> DualData:
    """Stack the constraint system, scale it, and cache dual-side factors.

    precondition=True applies Jacobi row scaling so the dual Hessian has
    a unit diagonal; lipschitz picks how the step-size constant L is
    obtained ("spectral" for a power-iteration eigenvalue bound capped
    by the Frobenius norm, "frobenius" for the Frobenius norm alone).
    """
    if lipschitz not in ("spectral", "frobenius"):
        raise ValueError(f"lipschitz must be 'spectral' or 'frobenius', got {lipschitz!r}")

    layout = RowLayout(m=prob.m, p=prob.p, q=prob.q)
    A_stacked = np.vstack([prob.A, -prob.A, prob.A_bar, -prob.A_bar, prob.A_eq])
    b_stacked = np.concatenate([prob.u, -prob.l, prob.u_bar, -prob.l_bar, prob.b_eq])

    chol_upper = cholesky(prob.Q)  # Q = R' R with R upper triangular

    n_rows = layout.n_rows
    theta = np.ones(n_rows)
    if n_rows:
        # row_j Q^{-1} row_j' for every stacked row, via G = A_stacked R^{-1}
        G = solve_triangular(chol_upper, A_stacked.T, trans="T", lower=False).T
        row_norms_sq = np.einsum("ij,ij->i", G, G)
        if np.any(row_norms_sq <= 0.0):
            raise ZeroRow(
                f"stacked constraint row {int(np.argmax(row_norms_sq <= 0.0))} is zero"
            )
        if precondition:
            theta = 1.0 / np.sqrt(row_norms_sq)
            A_stacked = A_stacked * theta[:, None]
            b_stacked = b_stacked * theta
            G = G * theta[:, None]
            hdiag = np.einsum("ij,ij->i", G, G)
            assert np.abs(hdiag - 1.0).max() <= 1e-10
        else:
            hdiag = row_norms_sq

        if n_rows <= prob.n:
            gram = G @ G.T
        else:
            gram = G.T @ G
        fro = float(np.linalg.norm(gram, "fro"))
        if lipschitz == "spectral":
            L = min(1.001 * _spectral_bound(gram, fro), fro)
        else:
            L = fro
        L = max(L, np.finfo(float).tiny)
    else:
        hdiag = np.zeros(0)
        L = 1.0

    Qinv_c = solve_triangular(
        chol_upper, solve_triangular(chol_upper, prob.c, trans="T", lower=False), lower=False
    )
    Qinv_At = solve_triangular(
        chol_upper,
        solve_triangular(chol_upper, A_stacked.T, trans="T", lower=False),
        lower=False,
    )
    d = b_stacked + A_stacked @ Qinv_c

    return DualData(
        problem=prob,
        A_stacked=A_stacked,
        b_stacked=b_stacked,
        d=d,
        Qinv_chol=chol_upper,
        L=float(L),
        theta=theta,
        row_map=layout,
        hdiag=hdiag,
        Qinv_At=Qinv_At,
        Qinv_c=Qinv_c,
        c_Qinv_c=float(prob.c @ Qinv_c),
        A_over_L=A_stacked / L,
        b_over_L=b_stacked / L,
        obj_const=prob.obj_const,
    )


def check_feasibility(prob: MiqpProblem, z: np.ndarray, eps: float = 1e-6) -> bool:
    """True if z satisfies every constraint of the relaxed problem within eps.

    Binary rows are only required to land inside [l_bar, u_bar]; whether
    they sit at one of the two endpoints is a separate question.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (prob.n,):
        raise DimensionMismatch(f"z has shape {z.shape}, expected ({prob.n},)")
    if prob.m:
        az = prob.A @ z
        if np.any(az > prob.u + eps) or np.any(az < prob.l - eps):
            return False
    if prob.q:
        if np.abs(prob.A_eq @ z - prob.b_eq).max() > eps:
            return False
    if prob.p:
        t = prob.A_bar @ z
        if np.any(t > prob.u_bar + eps) or np.any(t < prob.l_bar - eps):
            return False
    return True
