"""Weak-measurement reconstruction of relativistic Bohmian photon dynamics."""

from .calibration import (
    CalibSample,
    CouplingFit,
    LinearCouplingRegressor,
    fit_linear_coupling,
    predict_phi,
    protocol_layout,
    synthesize_samples,
)
from .constants import DEFAULT_CONSTANTS, PhysicalConstants
from .continuity import (
    ContinuityReport,
    GaussianFit,
    GaussianHistogramFitter,
    continuity_report,
    divergence,
    gaussian_fit,
    residual_nonrelativistic,
    residual_relativistic,
    smooth_counts,
)
from .dynamics import (
    MassDensityMap,
    Trajectory,
    VelocityMap,
    effective_mass_sq,
    integrate_many,
    integrate_trajectory,
    interpolate_velocity,
    seed_trajectories,
    velocity_field,
)
from .exceptions import (
    DegenerateDesignError,
    FitFailureError,
    MaskedRegionError,
    NoSignalError,
    OutOfGridError,
    RelBohmError,
    ValidationError,
)
from .field import (
    BeamParams,
    FieldMap,
    InterferometerConfig,
    WeakValueMap,
    analytic_weak_values,
    beam_amplitude,
    intensity_map,
    superposed_field,
)
from .grid import ScanGrid
from .inversion import DesignMatrix, WeakValueInverter, build_design, invert_scan, solve_site
from .pointer import (
    MeasurementSet,
    NoiseModel,
    PlateConfig,
    coupling_phase,
    default_plates,
    phi_from_counts,
    run_scan,
    simulate_counts,
)
from .presets import DEFAULT_PRESET, NoisePreset, calibrate_noise_preset

__version__ = "0.1.0"
