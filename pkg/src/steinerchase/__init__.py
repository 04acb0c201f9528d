"""Convex body and convex function chasing via Steiner points of work functions."""
from .chasers import (FunctionalSteiner, Greedy, LevelSetSteiner, NestedSteiner, StepResult,
                      Trace, run)
from .errors import (ChaseError, DimensionTooLarge, DualNormViolation, EmptyLevelSet,
                     InfeasibleBody, InvalidSpec, MaxIterations, NotNested, ParseError,
                     SolverFailure, Unbounded, ValidationError)
from .geometry import (Halfspace, HPolytope, MaxAffine, NormTag, dual_norm, euclid_project,
                       norm, sample_dual_ball, sample_dual_sphere, support)
from .harness import RunConfig, RunReport, execute, growth, run_checks
from .instances import (HypercubeFaces, NestedCuts, RandomBodies, RandomMaxAffine, gen, load,
                        loads, save, dumps)
from .steiner import (SteinerConfig, SteinerEstimate, functional_steiner_dual,
                      functional_steiner_primal, level_set_steiner, steiner_body)
from .workfn import (Instance, SolverConfig, WorkFunctionHandle, brute_force_work, eval_conjugate,
                     eval_work, finite_diff_conjugate_rate, level_set_support, opt_value)

__version__ = "0.1.0"
