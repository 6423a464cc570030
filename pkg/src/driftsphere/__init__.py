"""First-hitting-time densities on an absorbing sphere under uniform drift.

Exact series evaluation of the hitting-time density, a reweighting factor
connecting drift-free and drifted hitting statistics, a particle simulator
for validation, peak metrics for signal design, and a command-line front
end. Distances in micrometers, times in seconds.
"""

from .channel import (
    ChannelGeometry,
    CirCurve,
    DriftSpec,
    SeriesConfig,
    cir_curve,
    cir_drift,
    cir_nodrift_closed,
    cir_via_marginalization,
    drift_factor,
    hitting_probability,
    joint_density_drift,
    joint_density_nodrift,
    zero_drift,
)
from .errors import (
    ConfigError,
    DomainError,
    EvaluationOverflowError,
    GeometryError,
    GridMismatchError,
    NonConvergenceError,
    NotUnimodalError,
    TailNotConvergedError,
    WindowError,
)
from .metrics import (
    PeakMetrics,
    SweepTable,
    find_peak,
    sweep_radius,
    sweep_velocity,
)
from .montecarlo import (
    MODE_DIRECT,
    MODE_GIRSANOV,
    ComparisonReport,
    HitHistogram,
    McConfig,
    chi_square_compare,
    curve_on_centers,
    sample_histogram_from_curve,
    simulate,
    write_records_csv,
)
from .onedim import (
    OneDimChannel,
    girsanov_factor_1d,
    ig_mass,
    ig_mean,
    ig_pdf,
    levy_pdf,
)

__version__ = "0.1.0"

__all__ = [
    "ChannelGeometry",
    "CirCurve",
    "ComparisonReport",
    "ConfigError",
    "DomainError",
    "DriftSpec",
    "EvaluationOverflowError",
    "GeometryError",
    "GridMismatchError",
    "HitHistogram",
    "MODE_DIRECT",
    "MODE_GIRSANOV",
    "McConfig",
    "NonConvergenceError",
    "NotUnimodalError",
    "OneDimChannel",
    "PeakMetrics",
    "SeriesConfig",
    "SweepTable",
    "TailNotConvergedError",
    "WindowError",
    "chi_square_compare",
    "cir_curve",
    "cir_drift",
    "cir_nodrift_closed",
    "cir_via_marginalization",
    "curve_on_centers",
    "drift_factor",
    "find_peak",
    "girsanov_factor_1d",
    "hitting_probability",
    "ig_mass",
    "ig_mean",
    "ig_pdf",
    "joint_density_drift",
    "joint_density_nodrift",
    "levy_pdf",
    "sample_histogram_from_curve",
    "simulate",
    "sweep_radius",
    "sweep_velocity",
    "write_records_csv",
    "zero_drift",
]
