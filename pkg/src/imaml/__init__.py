"""Implicit-gradient meta-learning on a small numpy autodiff core."""
from .errors import (CheckpointError, ConfigError, CurvatureError, DescentError,
                     DimensionError, DivergenceError, IMAMLError, NonFiniteError,
                     OracleError)
from .inner_solvers import InnerBudget, SolveResult, solve
from .linear_solver import CGResult, LinearOperator, cg_solve
from .meta_gradient import (MetaGradReport, fomaml_meta_gradient, imaml_meta_gradient,
                            maml_meta_gradient, meta_gradient, reptile_meta_gradient)
from .models import InnerObjective, Model, model_for
from .tasks import Task, TaskDistribution, sample_tasks

__version__ = "0.1.0"

__all__ = [
    "CheckpointError", "ConfigError", "CurvatureError", "DescentError", "DimensionError",
    "DivergenceError", "IMAMLError", "NonFiniteError", "OracleError",
    "InnerBudget", "SolveResult", "solve", "CGResult", "LinearOperator", "cg_solve",
    "MetaGradReport", "fomaml_meta_gradient", "imaml_meta_gradient", "maml_meta_gradient",
    "meta_gradient", "reptile_meta_gradient", "InnerObjective", "Model", "model_for",
    "Task", "TaskDistribution", "sample_tasks",
]
