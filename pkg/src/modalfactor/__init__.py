"""Modal factor analysis: factors and loadings that drive the conditional mode of a panel."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    DataError,
    DegeneracyWarning,
    DegenerateFactorsError,
    DiagnosticError,
    InvalidBandwidthError,
    ModalFactorError,
    NumericalError,
    ShapeError,
    TransformError,
)
from .core import (  # noqa: E402
    FactorModel,
    Panel,
    align_sign,
    bandwidth,
    common_component,
    component_distance,
    gaussian_kernel,
    inference_bandwidth,
    normalization_error,
    normalize,
    objective,
    read_panel_csv,
    scaled_kernel,
    write_panel_csv,
)
from .amem import EstimationConfig, FitResult, fit, mem_solve, sweep  # noqa: E402
from .selection import SelectionReport, select_factors, select_ic, select_rank  # noqa: E402
from .baselines import pca_fit, pcp1_select, trace_ratio  # noqa: E402
from .inference import factor_ci, factor_intervals, factor_variance, loading_variance  # noqa: E402
from .simulate import DgpSpec, StudyResult, generate, mixture_mode, run_study  # noqa: E402
from .forecast import ForecastReport, ForecastSpec, apply_tcode, fit_ar_bic, rolling_eval, standardize  # noqa: E402
