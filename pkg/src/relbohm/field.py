"""Two-beam interferometer field and its analytic weak values.

Each arm is a two-dimensional paraxial Gaussian beam (one transverse
coordinate) tilted by its crossing half-angle about the z axis. The field
and its gradient are evaluated in closed form so the ground-truth weak
values never depend on finite differences.
"""

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from ._validation import check_finite_scalar, check_nonnegative, check_positive
from .constants import DEFAULT_CONSTANTS
from .exceptions import ValidationError
from .grid import ScanGrid

NODE_THRESHOLD = 1e-9
DEFAULT_WAVELENGTH = 1550e-9
DEFAULT_WAIST = 8.3e-6
DEFAULT_FRINGE_PERIOD = 3e-6


def crossing_angle_for_period(wavelength, period):
    """Half-angle giving an intensity fringe period ``wavelength / (2 sin(theta))``."""
    return math.asin(wavelength / (2.0 * period))


@dataclass(frozen=True)
class BeamParams:
    """One arm of the interferometer.

    ``waist_w0`` is the 1/e^2 intensity radius at focus. ``math.inf`` gives an
    ideal plane wave travelling at ``crossing_half_angle`` from +z.
    """

    wavelength: float = DEFAULT_WAVELENGTH
    waist_w0: float = DEFAULT_WAIST
    crossing_half_angle: float = 0.0
    amplitude: float = 1.0
    axis_offset: float = 0.0

    def __post_init__(self):
        check_positive(self.wavelength, "wavelength")
        check_positive(self.waist_w0, "waist_w0", allow_inf=True)
        check_finite_scalar(self.crossing_half_angle, "crossing_half_angle")
        check_nonnegative(self.amplitude, "amplitude")
        check_finite_scalar(self.axis_offset, "axis_offset")
        if not self.waist_w0 > self.wavelength:
            raise ValidationError("waist_w0 must exceed the wavelength (paraxial model)")
        if abs(self.crossing_half_angle) >= math.pi / 4:
            raise ValidationError("|crossing_half_angle| must be below pi/4")

    @property
    def is_plane_wave(self):
        return math.isinf(self.waist_w0)

    @property
    def rayleigh_range(self):
        return math.pi * self.waist_w0**2 / self.wavelength


@dataclass(frozen=True)
class InterferometerConfig:
    beam1: BeamParams
    beam2: BeamParams
    arm_phase: float = 0.0
    omega: float = None
    constants: object = field(default=DEFAULT_CONSTANTS, repr=False)

    def __post_init__(self):
        check_finite_scalar(self.arm_phase, "arm_phase")
        nominal = self.constants.angular_frequency(self.beam1.wavelength)
        if self.omega is None:
            object.__setattr__(self, "omega", nominal)
        check_positive(self.omega, "omega")
        for beam in (self.beam1, self.beam2):
            expected = self.constants.angular_frequency(beam.wavelength)
            if abs(expected - self.omega) > 1e-12 * self.omega:
                raise ValidationError(
                    "omega must equal 2*pi*c/wavelength for both beams (monochromatic model)"
                )

    @classmethod
    def symmetric(
        cls,
        wavelength=DEFAULT_WAVELENGTH,
        waist_w0=DEFAULT_WAIST,
        half_angle=None,
        arm_phase=0.0,
        amplitude2=1.0,
        constants=DEFAULT_CONSTANTS,
    ):
        """Mirror-symmetric pair of beams crossing at +/- ``half_angle``.

        The default half-angle gives a 3 um fringe period.
        """
        if half_angle is None:
            half_angle = crossing_angle_for_period(wavelength, DEFAULT_FRINGE_PERIOD)
        b1 = BeamParams(wavelength, waist_w0, half_angle, 1.0, 0.0)
        b2 = BeamParams(wavelength, waist_w0, -half_angle, amplitude2, 0.0)
        return cls(b1, b2, arm_phase, constants=constants)

    @classmethod
    def default(cls):
        return cls.symmetric()

    def with_arm_phase(self, arm_phase):
        return replace(self, arm_phase=arm_phase)

    @property
    def wavenumber(self):
        return self.omega / self.constants.speed_of_light


@dataclass(frozen=True)
class FieldMap:
    grid: ScanGrid
    amplitudes: np.ndarray

    @property
    def intensity(self):
        return np.abs(self.amplitudes) ** 2


@dataclass(frozen=True)
class WeakValueMap:
    """Per-site momentum and energy weak values.

    Masked sites (``mask`` True) hold NaN in every channel.
    """

    grid: ScanGrid
    kx: np.ndarray
    kz: np.ndarray
    omega: np.ndarray
    residual_norm: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        for name in ("kx", "kz", "omega", "residual_norm", "mask"):
            arr = getattr(self, name)
            if np.shape(arr) != self.grid.shape:
                raise ValidationError(f"{name} shape {np.shape(arr)} != grid {self.grid.shape}")
        ok = ~self.mask
        for name in ("kx", "kz", "omega"):
            if not np.all(np.isfinite(getattr(self, name)[ok])):
                raise ValidationError(f"{name} has non-finite values on unmasked sites")


class BeamComponents(NamedTuple):
    """Both arms and their gradients, before the arm phase is applied."""

    psi1: np.ndarray
    d1x: np.ndarray
    d1z: np.ndarray
    psi2: np.ndarray
    d2x: np.ndarray
    d2z: np.ndarray

    def combine(self, arm_phase):
        """Return (psi, dpsi/dx, dpsi/dz) for arm phase(s) ``arm_phase``."""
        rot = np.exp(1j * np.asarray(arm_phase))
        return (
            self.psi1 + rot * self.psi2,
            self.d1x + rot * self.d2x,
            self.d1z + rot * self.d2z,
        )


def _beam_with_gradient(params, x, z, omega, c):
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    k = omega / c
    sin_t = math.sin(params.crossing_half_angle)
    cos_t = math.cos(params.crossing_half_angle)
    zeta = x * sin_t + z * cos_t
    xi = x * cos_t - z * sin_t - params.axis_offset

    if params.is_plane_wave:
        psi = params.amplitude * np.exp(1j * k * zeta)
        g_xi = np.zeros_like(psi)
        g_zeta = np.full_like(psi, 1j * k)
    else:
        w0 = params.waist_w0
        zr = params.rayleigh_range
        s = zeta**2 + zr**2
        log_amp = -0.25 * np.log(s / zr**2) - xi**2 * zr**2 / (w0**2 * s)
        phase = k * zeta + k * xi**2 * zeta / (2.0 * s) - 0.5 * np.arctan2(zeta, zr)
        psi = params.amplitude * np.exp(log_amp + 1j * phase)
        g_xi = -2.0 * xi * zr**2 / (w0**2 * s) + 1j * k * xi * zeta / s
        g_zeta = (
            -0.5 * zeta / s
            + 2.0 * xi**2 * zr**2 * zeta / (w0**2 * s**2)
            + 1j * (k + k * xi**2 * (zr**2 - zeta**2) / (2.0 * s**2) - 0.5 * zr / s)
        )
    dx = psi * (cos_t * g_xi + sin_t * g_zeta)
    dz = psi * (-sin_t * g_xi + cos_t * g_zeta)
    return psi, dx, dz


def beam_amplitude(params, point, omega, constants=DEFAULT_CONSTANTS):
    """Complex amplitude of a single beam at ``point = (x, z)`` in metres."""
    x = check_finite_scalar(point[0], "x")
    z = check_finite_scalar(point[1], "z")
    omega = check_finite_scalar(omega, "omega")
    psi, _, _ = _beam_with_gradient(params, x, z, omega, constants.speed_of_light)
    return complex(psi)


def beam_gradient(params, point, omega, constants=DEFAULT_CONSTANTS):
    """Analytic (d/dx, d/dz) of :func:`beam_amplitude`."""
    _, dx, dz = _beam_with_gradient(
        params, point[0], point[1], omega, constants.speed_of_light
    )
    return complex(dx), complex(dz)


def beam_components(config, x, z):
    c = config.constants.speed_of_light
    p1, d1x, d1z = _beam_with_gradient(config.beam1, x, z, config.omega, c)
    p2, d2x, d2z = _beam_with_gradient(config.beam2, x, z, config.omega, c)
    return BeamComponents(p1, d1x, d1z, p2, d2x, d2z)


def superposed_field(config, grid):
    X, Z = grid.mesh()
    psi, _, _ = beam_components(config, X, Z).combine(config.arm_phase)
    return FieldMap(grid, psi)


def density_and_current(components, arm_phase):
    """|psi|^2 and the current Im(conj(psi) grad psi) for the given arm phase."""
    psi, gx, gz = components.combine(arm_phase)
    conj = np.conj(psi)
    return (psi.real**2 + psi.imag**2, (conj * gx).imag, (conj * gz).imag)


def slit_components(config, X, Z, slit_width, n_samples):
    """Beam components at ``n_samples`` midpoints across a top-hat slit in x."""
    offsets = (np.arange(n_samples) + 0.5) / n_samples - 0.5
    return [beam_components(config, X + slit_width * o, Z) for o in offsets]


def averaged_density_current(component_list, arm_phase):
    """Slit-averaged density and current numerators."""
    rho = jx = jz = 0.0
    for comp in component_list:
        r, a, b = density_and_current(comp, arm_phase)
        rho = rho + r
        jx = jx + a
        jz = jz + b
    n = len(component_list)
    return rho / n, jx / n, jz / n


def analytic_weak_values(
    config, grid, node_threshold=NODE_THRESHOLD, slit_width=0.0, slit_samples=21
):
    """Ground-truth weak values Re[-i grad(psi) / psi] and <H_w> = omega.

    Sites whose relative intensity falls below ``node_threshold`` are masked.
    A positive ``slit_width`` averages intensity and current numerators
    across a top-hat aperture in x before forming their ratio.
    """
    X, Z = grid.mesh()
    if slit_width > 0:
        comps = slit_components(config, X, Z, slit_width, slit_samples)
    else:
        comps = [beam_components(config, X, Z)]
    rho, jx, jz = averaged_density_current(comps, config.arm_phase)
    peak = rho.max()
    mask = ~(rho >= node_threshold * peak) if peak > 0 else np.ones(grid.shape, bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        kx = np.where(mask, np.nan, jx / rho)
        kz = np.where(mask, np.nan, jz / rho)
    omega = np.where(mask, np.nan, config.omega)
    return WeakValueMap(grid, kx, kz, omega, np.zeros(grid.shape), mask)


def intensity_map(field_map, rate, T):
    """Expected photon counts ``rate * T * |psi|^2 / max|psi|^2`` per site."""
    rate = check_positive(rate, "rate")
    T = check_positive(T, "T")
    rho = field_map.intensity
    peak = rho.max()
    if peak == 0:
        return np.zeros_like(rho)
    return rate * T * rho / peak
