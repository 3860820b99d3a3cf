"""Mixed-integer QP solver built on dual accelerated gradient projection."""

from .problem import (
    BoundsInverted,
    DimensionMismatch,
    DualData,
    MiqpError,
    MiqpProblem,
    NotPositiveDefinite,
    RelaxationSpec,
    RowLayout,
    ZeroRow,
    build_dual_data,
    build_problem,
    check_feasibility,
)

__version__ = "0.1.0"
