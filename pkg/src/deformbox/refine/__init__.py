from .problem import (
    FAMILIES,
    LookupMissError,
    RefineProblem,
    StableConstraint,
    SupportConstraint,
    SymmetryConstraint,
    build_problem,
    make_problem,
    side_axis,
    stable_constraints,
)
from .qp import QPResult, solve_qp
from .solver import FEAS_TOL, RefineInfeasibleError, RefineSolution, check_solution, evaluate_layout, solve, solve_or_none
