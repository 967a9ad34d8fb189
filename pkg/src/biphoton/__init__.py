"""Desk-scale simulator of a biphoton double-slit coincidence experiment.

Submodules cover the analytic two-photon optics, the down-conversion pair
source, the counting electronics (detectors, TAC/SCA/MCA), absolute
efficiency calibration, paired guided-trajectory analysis, and the scan
orchestration used by the command line tool.
"""

from .calibration import (
    CalibrationBench,
    CalibrationInputs,
    CalibrationProfile,
    CalibrationReport,
    efficiency_scan,
    full_efficiency,
    klyshko_basic,
    profile_fwhm,
)
from .detection import (
    AngularWindow,
    ClickStream,
    CountReport,
    DetectorModel,
    TacScaConfig,
    accidental_estimate,
    angular_window,
    coincidence_counts,
    detect,
    drift_correct,
    effective_coincidences,
    sca_count,
    tac_histogram,
)
from .optics import (
    CoincidenceMap,
    FilterSpec,
    FraunhoferWarning,
    OpticalConfig,
    SlitGeometry,
    biphoton_amplitude,
    coincidence_density,
    coincidence_map,
    conjugate_wavelength,
    envelope_bounds,
    fringe_period_rad,
    fringe_projection,
    fringe_spacing,
    fringe_visibility,
    marginal_singles,
    spectral_convolution,
)
from .scan import (
    DiscriminatorConfig,
    DiscriminatorRunReport,
    FitReport,
    ScanConfig,
    ScanRow,
    SimulationError,
    SinglesRatioReport,
    chi2_normalize,
    integrated_coincidence_prediction,
    run_calibration,
    run_discriminator,
    run_scan,
    scan_fit,
    singles_ratio_report,
)
from .source import (
    FourthOrderSampler,
    GainParam,
    PairStream,
    correlation_coefficient,
    cross_correlation,
    factorial_moment,
    generate_pairs,
    mean_pair_number,
)

__all__ = [
    "AngularWindow",
    "CalibrationBench",
    "CalibrationInputs",
    "CalibrationProfile",
    "CalibrationReport",
    "ClickStream",
    "CoincidenceMap",
    "CountReport",
    "DetectorModel",
    "DiscriminatorConfig",
    "DiscriminatorRunReport",
    "FilterSpec",
    "FitReport",
    "FourthOrderSampler",
    "FraunhoferWarning",
    "GainParam",
    "OpticalConfig",
    "PairStream",
    "ScanConfig",
    "ScanRow",
    "SimulationError",
    "SinglesRatioReport",
    "SlitGeometry",
    "TacScaConfig",
    "accidental_estimate",
    "angular_window",
    "biphoton_amplitude",
    "chi2_normalize",
    "coincidence_counts",
    "coincidence_density",
    "coincidence_map",
    "conjugate_wavelength",
    "correlation_coefficient",
    "cross_correlation",
    "envelope_bounds",
    "fringe_period_rad",
    "detect",
    "drift_correct",
    "effective_coincidences",
    "efficiency_scan",
    "factorial_moment",
    "fringe_projection",
    "fringe_spacing",
    "fringe_visibility",
    "full_efficiency",
    "generate_pairs",
    "integrated_coincidence_prediction",
    "klyshko_basic",
    "marginal_singles",
    "mean_pair_number",
    "profile_fwhm",
    "run_calibration",
    "run_discriminator",
    "run_scan",
    "scan_fit",
    "sca_count",
    "singles_ratio_report",
    "spectral_convolution",
    "tac_histogram",
]

__version__ = "0.1.0"
