"""Polarization-pointer forward model.

A birefringent plate rotates the photon polarization by an angle that is
linear in the local weak values. The rotation is read out by counting
photons in the H and V channels; both channels see Poisson shot noise,
a constant dark-count floor, and a slowly drifting interferometer phase.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._validation import check_finite_scalar, check_nonnegative, check_positive
from .exceptions import NoSignalError, ValidationError
from .field import (
    NODE_THRESHOLD,
    averaged_density_current,
    beam_components,
    slit_components,
)
from .grid import ScanGrid

# Calibrated coefficient triples (a [rad m], b [rad s], c [rad]) of the two plates.
PLATE_X_COEFFICIENTS = (2.04e-7, -2.75e-15, 4.08)
PLATE_Y_COEFFICIENTS = (1.64e-7, -2.71e-15, 4.21)
DEFAULT_TILTS_DEG = (-10.0, 0.0, 10.0)
DEFAULT_ACCUMULATION_S = 3.0

OPTIC_AXES = ("along-x", "along-y")
WALK_POLICIES = ("consecutive", "shared")

# Second Philox key word used for the phase-walk stream; record streams use
# (site << 16) | plate which never reaches the top bit.
_WALK_STREAM = np.uint64(1 << 63)


@dataclass(frozen=True)
class PlateConfig:
    """One birefringent-plate configuration.

    ``tilt`` rotates the plate normal about y; the normal is
    ``(sin(tilt), cos(tilt))`` in the (x, z) plane, so the momentum
    coefficients are ``a_x = a sin(tilt)`` and ``a_z = a cos(tilt)``.
    """

    id: str
    optic_axis: str
    tilt: float
    a: float
    b: float
    c: float

    def __post_init__(self):
        if self.optic_axis not in OPTIC_AXES:
            raise ValidationError(f"optic_axis must be one of {OPTIC_AXES}")
        for name in ("tilt", "a", "b", "c"):
            check_finite_scalar(getattr(self, name), name)

    @property
    def momentum_coefficients(self):
        return self.a * math.sin(self.tilt), self.a * math.cos(self.tilt)


def default_plates(x_coefficients=PLATE_X_COEFFICIENTS,
                   y_coefficients=PLATE_Y_COEFFICIENTS,
                   tilts_deg=DEFAULT_TILTS_DEG):
    """The six measurement configurations: two plates times three tilts."""
    plates = []
    for axis, (a, b, c) in (("along-x", x_coefficients), ("along-y", y_coefficients)):
        for tilt in tilts_deg:
            label = f"{axis[-1]}{tilt:+g}"
            plates.append(PlateConfig(label, axis, math.radians(tilt), a, b, c))
    return tuple(plates)


@dataclass(frozen=True)
class NoiseModel:
    dark_rate: float = 0.0
    phase_walk_sigma: float = 0.0
    shot_noise: bool = False
    rng_seed: int = 0
    phase_walk_policy: str = "consecutive"

    def __post_init__(self):
        check_nonnegative(self.dark_rate, "dark_rate")
        check_nonnegative(self.phase_walk_sigma, "phase_walk_sigma")
        if not 0 <= int(self.rng_seed) < 2**64:
            raise ValidationError("rng_seed must fit in an unsigned 64-bit integer")
        if self.phase_walk_policy not in WALK_POLICIES:
            raise ValidationError(f"phase_walk_policy must be one of {WALK_POLICIES}")

    @classmethod
    def off(cls):
        return cls()

    @property
    def is_off(self):
        return self.dark_rate == 0 and self.phase_walk_sigma == 0 and not self.shot_noise


@dataclass(frozen=True)
class MeasurementSet:
    """Counts for every (site, plate) record, sites in scan order.

    ``I_H`` and ``I_V`` have shape ``(n_sites, n_plates)``. The remaining
    fields are acquisition metadata: the extra H-V phase is carried but never
    enters the counts, ``arm_phases`` holds the drifted interferometer phase
    seen by each record, and ``clamped`` flags records whose rotation angle
    fell outside [0, pi] and was clamped.
    """

    grid: ScanGrid
    plates: tuple
    I_H: np.ndarray
    I_V: np.ndarray
    T: float = DEFAULT_ACCUMULATION_S
    extra_phase: float = 0.0
    arm_phases: Optional[np.ndarray] = None
    clamped: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = (self.grid.size, len(self.plates))
        for name in ("I_H", "I_V"):
            arr = getattr(self, name)
            if np.shape(arr) != shape:
                raise ValidationError(f"{name} shape {np.shape(arr)} != {shape}")
            if np.any(~np.isfinite(arr)) or np.any(np.asarray(arr) < 0):
                raise ValidationError(f"{name} must be finite and nonnegative")

    @property
    def n_records(self):
        return self.grid.size * len(self.plates)

    def fringe_counts(self):
        """Per-site counts (I_H + I_V averaged over plate passes), grid-shaped."""
        total = (self.I_H + self.I_V).mean(axis=1)
        return total.reshape(self.grid.shape)


def coupling_phase(plate, kx, kz, omega):
    """Rotation angle ``a (kx sin(tilt) + kz cos(tilt)) + b omega + c``."""
    ax, az = plate.momentum_coefficients
    return ax * kx + az * kz + plate.b * omega + plate.c


def _record_generator(seed, site, plate_index):
    key = np.array([seed, (int(site) << 16) | int(plate_index)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _walk_generator(seed):
    return np.random.Generator(np.random.Philox(key=np.array([seed, _WALK_STREAM], dtype=np.uint64)))


def expected_counts(phi, N_expected, dark_rate, T):
    half = np.asarray(phi) / 2.0
    floor = dark_rate * T
    return N_expected * np.cos(half) ** 2 + floor, N_expected * np.sin(half) ** 2 + floor


def simulate_counts(phi, N_expected, noise, T=DEFAULT_ACCUMULATION_S, site=0, plate_index=0):
    """Sample (I_H, I_V) for one record.

    With shot noise off the exact means are returned. Otherwise the draw
    comes from the counter-based stream keyed by (seed, site, plate), so a
    record's counts do not depend on which other records were simulated.
    """
    phi = check_finite_scalar(phi, "phi")
    if not 0.0 <= phi <= math.pi:
        raise ValidationError(f"phi must lie in [0, pi], got {phi}")
    N_expected = check_nonnegative(N_expected, "N_expected")
    T = check_positive(T, "T")
    mean_h, mean_v = expected_counts(phi, N_expected, noise.dark_rate, T)
    if not noise.shot_noise:
        return float(mean_h), float(mean_v)
    gen = _record_generator(noise.rng_seed, site, plate_index)
    h, v = gen.poisson([mean_h, mean_v])
    return int(h), int(v)


def phi_from_counts(I_H, I_V):
    """Rotation angle ``2 atan(sqrt(I_V / I_H))``; ``I_H == 0`` gives pi.

    Accepts scalars or arrays. Raises :class:`NoSignalError` if both
    channels are empty anywhere.
    """
    I_H = np.asarray(I_H, dtype=float)
    I_V = np.asarray(I_V, dtype=float)
    if np.any(I_H < 0) or np.any(I_V < 0):
        raise ValidationError("counts must be nonnegative")
    if np.any((I_H == 0) & (I_V == 0)):
        raise NoSignalError("no counts in either channel")
    phi = 2.0 * np.arctan2(np.sqrt(I_V), np.sqrt(I_H))
    return float(phi) if phi.ndim == 0 else phi


def phase_walk(noise, n_sites, n_plates, base_phase=0.0):
    """Interferometer phase seen by every record, shape (n_sites, n_plates).

    The walk advances once per acquisition. Under the ``consecutive`` policy
    the plate passes of one scan step occupy consecutive walk states; under
    ``shared`` all passes of a step see the same state.
    """
    if noise.phase_walk_sigma == 0:
        return np.full((n_sites, n_plates), float(base_phase))
    gen = _walk_generator(noise.rng_seed)
    if noise.phase_walk_policy == "consecutive":
        steps = gen.normal(0.0, noise.phase_walk_sigma, size=n_sites * n_plates)
        return base_phase + np.cumsum(steps).reshape(n_sites, n_plates)
    steps = gen.normal(0.0, noise.phase_walk_sigma, size=n_sites)
    return base_phase + np.repeat(np.cumsum(steps)[:, None], n_plates, axis=1)


def _sample_block(seed, sites, plate_count, mean_h, mean_v):
    out_h = np.empty_like(mean_h)
    out_v = np.empty_like(mean_v)
    for row, site in enumerate(sites):
        for p in range(plate_count):
            gen = _record_generator(seed, site, p)
            out_h[row, p], out_v[row, p] = gen.poisson([mean_h[row, p], mean_v[row, p]])
    return out_h, out_v


def run_scan(config, plates, grid, rate, noise, T=DEFAULT_ACCUMULATION_S,
             slit_width=0.0, slit_samples=21, threads=1):
    """Simulate the full scan: every site, every plate configuration.

    The weak values of each record are those of the field at the record's
    drifted arm phase. Rotation angles outside [0, pi] are clamped and the
    record is flagged in ``clamped``. Expected counts are normalized to the
    peak intensity of the undisturbed field.
    """
    from .inversion import build_design  # rank check before spending time

    build_design(plates)
    rate = check_positive(rate, "rate")
    T = check_positive(T, "T")
    xs, zs = grid.flat_coordinates()
    if slit_width > 0:
        comps = slit_components(config, xs, zs, slit_width, slit_samples)
    else:
        comps = [beam_components(config, xs, zs)]
    rho0, _, _ = averaged_density_current(comps, config.arm_phase)
    peak = rho0.max()
    n_sites, n_plates = grid.size, len(plates)
    arm = phase_walk(noise, n_sites, n_plates, config.arm_phase)

    mean_h = np.empty((n_sites, n_plates))
    mean_v = np.empty((n_sites, n_plates))
    clamped = np.zeros((n_sites, n_plates), dtype=bool)
    for p, plate in enumerate(plates):
        rho, jx, jz = averaged_density_current(comps, arm[:, p])
        dark = rho < NODE_THRESHOLD * peak
        safe = np.where(dark, 1.0, rho)
        phi = coupling_phase(plate, jx / safe, jz / safe, config.omega)
        phi = np.where(dark, math.pi / 2, phi)
        clamped[:, p] = (phi < 0) | (phi > math.pi)
        phi = np.clip(phi, 0.0, math.pi)
        N_exp = rate * T * rho / peak
        mean_h[:, p], mean_v[:, p] = expected_counts(phi, N_exp, noise.dark_rate, T)

    if noise.shot_noise:
        chunks = np.array_split(np.arange(n_sites), max(1, int(threads)))
        seed = int(noise.rng_seed)
        I_H = np.empty_like(mean_h)
        I_V = np.empty_like(mean_v)
        with ThreadPoolExecutor(max_workers=max(1, int(threads))) as pool:
            futures = [
                (idx, pool.submit(_sample_block, seed, idx, n_plates, mean_h[idx], mean_v[idx]))
                for idx in chunks if len(idx)
            ]
            for idx, fut in futures:
                I_H[idx], I_V[idx] = fut.result()
    else:
        I_H, I_V = mean_h, mean_v

    return MeasurementSet(
        grid=grid,
        plates=tuple(plates),
        I_H=I_H,
        I_V=I_V,
        T=T,
        arm_phases=arm,
        clamped=clamped,
        metadata={"rate": rate, "noise": noise, "n_clamped": int(clamped.sum())},
    )
