"""Symmetric generalized Heckman sample-selection models.

Maximum-likelihood estimation with covariate-dependent dispersion and
correlation under Gaussian, Student-t or user-supplied density generators,
plus simulation and residual diagnostics.
"""

__version__ = "0.1.0"

from symheckman.exceptions import (  # noqa: E402
    ComparisonError,
    ConfigError,
    DataError,
    DataWarning,
    DiagnosticError,
    DomainError,
    InitializationError,
    LikelihoodError,
    LockError,
    NonNormalizableGeneratorError,
    QuadratureError,
    SpecError,
    StudyError,
    SymHeckmanError,
    UnsupportedGeneratorError,
)
from symheckman.symdist import (  # noqa: E402
    ARCTANH,
    IDENTITY,
    LOG,
    DensityGenerator,
    G_function,
    H_function,
    LinkFunction,
    gaussian,
    student_t,
    tabulated,
)
from symheckman.selmodel import (  # noqa: E402
    ModelSpec,
    ParamVector,
    SelectionDataset,
    cond_density,
    loglik,
    predictors,
    score,
)
from symheckman.estimate import FitOptions, FitResult, fit, information_criteria  # noqa: E402
from symheckman.simulate import (  # noqa: E402
    SCENARIOS,
    MonteCarloSummary,
    ScenarioConfig,
    calibrate_threshold,
    generate_dataset,
    run_study,
    scenario,
)
from symheckman.diagnose import (  # noqa: E402
    ResidualSet,
    compare_models,
    mt_residuals,
    qq_data,
)
