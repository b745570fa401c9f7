"""TFisher: truncated and weighted Fisher combination tests for p-values."""

__version__ = "0.1.0"

from .altdist import (DistortionFunction, SignalModel, SkewNormalParams, alt_moments,  # noqa: E402
                      alt_survival, delta, gaussian_mixture_distortion, power, sn_fit)
from .efficiency import (EfficiencyConfig, EfficiencySurface, GridSpec, apr, ape, be,  # noqa: E402
                         be_stationary_tau, boundary_a, boundary_b, g_tilde, local_max_condition,
                         mu_lower_bound, mu_prime_lower_bound, optimize)
from .errors import (ConvergenceError, DomainError, FitError, InfeasibleLevelError,  # noqa: E402
                     ModelError, ParseError, TFisherError)
from .nulldist import NullMoments, critical_value, null_moments, null_pvalue, null_survival  # noqa: E402
from .omnibus import (DEFAULT_GRID, OmnibusNullModel, TauGrid, mvn_rectangle,  # noqa: E402
                      omnibus_null_model, omnibus_pvalue, omnibus_statistic)
from .statistic import TFisherParams, soft_statistic, statistic  # noqa: E402

__all__ = [
    "DEFAULT_GRID", "ConvergenceError", "DistortionFunction", "DomainError", "EfficiencyConfig",
    "EfficiencySurface", "FitError", "GridSpec", "InfeasibleLevelError", "ModelError",
    "NullMoments", "OmnibusNullModel", "ParseError", "SignalModel", "SkewNormalParams",
    "TFisherError", "TFisherParams", "TauGrid", "alt_moments", "alt_survival", "ape", "apr", "be",
    "be_stationary_tau", "boundary_a", "boundary_b", "critical_value", "delta",
    "gaussian_mixture_distortion", "g_tilde", "local_max_condition", "mu_lower_bound",
    "mu_prime_lower_bound", "mvn_rectangle", "null_moments", "null_pvalue", "null_survival",
    "omnibus_null_model", "omnibus_pvalue", "omnibus_statistic", "optimize", "power",
    "sn_fit", "soft_statistic", "statistic",
]
