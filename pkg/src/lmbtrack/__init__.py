"""Multi-object tracking with labelled multi-Bernoulli filters.

The package provides the filtering stack (single-object Kalman/unscented
filters and smoothers, the joint multi-object prediction-update, the
multi-Bernoulli approximation with best-association bookkeeping and the
smoothed trajectory estimator built on it), simulation scenarios, OSPA
family metrics and a Monte Carlo command-line harness.
"""

from .errors import (
    ConfigError,
    ContractViolationError,
    DataIntegrityError,
    EmptyTrajectoryError,
    NumericalError,
)
from .gaussian import (
    GaussianState,
    LinearModel,
    NonlinearModel,
    kf_predict,
    kf_update,
    rts_smooth,
    ukf_predict,
    ukf_update,
    urts_smooth,
)
from .rfs import (
    AssociationHistory,
    AssociationMap,
    GaussianMixture,
    GlmbDensity,
    GlmbHypothesis,
    Label,
    LmbDensity,
    LmbTrack,
    extract_map_states,
    label_window_bounds,
    lmb_cardinality_distribution,
    map_cardinality,
)

__version__ = "0.1.0"
