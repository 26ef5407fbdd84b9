"""Monte Carlo laboratory for critical branching Markov processes.

Simulates critical branching particle systems with non-local offspring
placement, explores their genealogical trees depth-first, and verifies the
classical quantitative limits (survival probability, Yaglom law, moment
asymptotics, martingale functional CLT, continuum-random-tree convergence)
against exact finite-state oracles.
"""

from .errors import (
    CensoredQueryError,
    CrittreeError,
    DegenerateTreeError,
    ModelError,
    NoSurvivorsError,
    NonCriticalError,
    OutOfRangeError,
    ReducibleError,
    RejectionBudgetError,
    TooFewSurvivorsError,
    UnknownLabelError,
)
from .model import (
    EigenPair,
    ModelSpec,
    MotionSpec,
    OffspringSpec,
    StateSpace,
    binary_model,
    build_model,
    builtin_model,
    killed_model,
    load_model_file,
    torus_model,
    two_type_model,
)
from .genealogy import (
    ConditionedTree,
    ParticleRecord,
    SimConfig,
    Tree,
    condition_on_survival,
    population_at,
    simulate_forest,
    simulate_tree,
)

__version__ = "0.1.0"
