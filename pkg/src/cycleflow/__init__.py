"""Network flow optimisation through cycle-basis variable elimination.

Flow conservation ``I x = f`` is removed by writing every feasible flow as
``B' z + xp``, where ``B`` is an oriented cycle basis and ``xp`` a particular
solution traced along paths.  The package builds the bases, reduces
minimum-cost flow and multi-period DC optimal power flow problems, solves
them with a built-in QP solver, and simulates a distributed algorithm with
one agent per basis cycle.
"""

from .cycles import (
    BasisCertificate,
    CycleBasis,
    OrientedCycle,
    certify,
    fundamental_basis,
    horton_basis,
    verify_basis,
)
from .distributed import (
    AdmmParams,
    CyberLayer,
    RoundTrace,
    RunResult,
    build_cyber_layer,
    local_subproblem,
    run,
    split_costs,
)
from .errors import (
    CycleflowError,
    GraphError,
    HorizonMismatch,
    InvalidTree,
    IoError,
    LocalInfeasible,
    MaxRounds,
    MissingElementaryColumn,
    NotConnected,
    ParseError,
    ShapeMismatch,
    UnbalancedInjection,
    UncertifiedInputs,
    ValidationError,
)
from .graph import (
    OrientedGraph,
    build_incidence,
    is_biconnected,
    is_connected,
    shortest_path,
    spanning_tree,
)
from .maxflow import MaxFlowResult, check_capacity_feasibility, max_flow
from .opf import (
    OpfProblem,
    OpfSolution,
    ReducedOpfProblem,
    reduce_opf,
    solve_opf,
    solve_opf_full,
    validate_opf_solution,
)
from .reduction import (
    ElementarySolutionSet,
    FlowProblem,
    FlowSolution,
    ReducedFlowProblem,
    elementary_solutions,
    lift,
    particular_solution,
    reduce,
    solve_full,
    solve_reduced,
)
from .solver import QpSpec, QpWorkspace, SolveReport, SolverParams, Status, solve_qp

__version__ = "0.1.0"
