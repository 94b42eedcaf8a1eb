"""Multi-asset optimal liquidation with transient impact via penalized matrix Riccati equations."""

from .model import BlockSym, ConfigError, ModelParams, Schedule, StateVec, def_blocks, p_from_q, q_from_p, validate
from .riccati import (GridSpec, LadderWarning, PreconditionError, PSDViolation, RiccatiSolution,
                      default_ladder, read_solution_csv, solve_limit, solve_penalized)
from .bounds import BoundReport, alpha, beta, check_envelope, check_key_inequality, check_weighted_F, n0, pq_bounds, t0
from .comparison import GeneralRiccatiInstance, check_comparison, random_ordered_pair, solve_general
from .trajectory import (Trajectory, check_fundamental_bound, check_liquidation, cost, feedback, fundamental,
                         simulate, value, value_at)

__version__ = "0.1.0"
