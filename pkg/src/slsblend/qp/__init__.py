from .admm import SolverOptions, solve
from .oracle import OracleInfeasible, OracleRefused, brute_force_oracle
from .problem import INFEASIBLE, MAX_ITER, OPTIMAL, QpProblem, QpSolution

__all__ = [
    "INFEASIBLE", "MAX_ITER", "OPTIMAL",
    "OracleInfeasible", "OracleRefused",
    "QpProblem", "QpSolution", "SolverOptions",
    "brute_force_oracle", "solve",
]
