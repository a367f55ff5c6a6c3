"""Velocity field, effective squared mass and streamline reconstruction."""

import math
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .constants import DEFAULT_CONSTANTS
from .exceptions import MaskedRegionError, OutOfGridError, ValidationError
from .grid import ScanGrid

OMEGA_MASK_EPS = 1e-3
EDGES = ("z-min", "z-max", "x-min", "x-max")
TERMINATIONS = ("boundary", "max-steps", "masked-region")


@dataclass(frozen=True)
class VelocityMap:
    """Velocity in units of c; masked sites hold NaN."""

    grid: ScanGrid
    vx: np.ndarray
    vz: np.ndarray
    mask: np.ndarray

    @property
    def speed(self):
        return np.hypot(self.vx, self.vz)


@dataclass(frozen=True)
class MassDensityMap:
    grid: ScanGrid
    m2: np.ndarray
    omega0: float
    mask: np.ndarray


@dataclass
class Trajectory:
    seed: Tuple[float, float]
    step: float
    points: List[Tuple[float, float]] = field(default_factory=list)
    termination: str = "max-steps"

    def as_array(self):
        return np.asarray(self.points, dtype=float).reshape(-1, 2)


def _reference_omega(wv, omega0):
    if omega0 is not None:
        return float(omega0)
    good = wv.omega[~wv.mask]
    if good.size == 0:
        raise ValidationError("weak-value map is fully masked")
    return float(np.median(good))


def velocity_field(wv, omega0=None, eps=OMEGA_MASK_EPS, constants=DEFAULT_CONSTANTS):
    """``v = c <k_w> / <omega_w>`` in units of c.

    Sites with ``|<omega_w>| < eps * omega0`` are masked: the guidance
    velocity diverges there. ``omega0`` defaults to the median energy weak
    value. Speeds above 1 are kept.
    """
    omega0 = _reference_omega(wv, omega0)
    c = constants.speed_of_light
    mask = wv.mask | ~(np.abs(wv.omega) >= eps * omega0)
    with np.errstate(divide="ignore", invalid="ignore"):
        vx = np.where(mask, np.nan, c * wv.kx / wv.omega)
        vz = np.where(mask, np.nan, c * wv.kz / wv.omega)
    return VelocityMap(wv.grid, vx, vz, mask)


def effective_mass_sq(wv, omega0=None, constants=DEFAULT_CONSTANTS):
    """``(<omega_w>^2 - c^2 |<k_w>|^2) / omega0^2`` per site."""
    omega0 = _reference_omega(wv, omega0)
    c = constants.speed_of_light
    m2 = (wv.omega**2 - c**2 * (wv.kx**2 + wv.kz**2)) / omega0**2
    return MassDensityMap(wv.grid, np.where(wv.mask, np.nan, m2), omega0, wv.mask.copy())


class _Interpolator:
    """Bilinear sampler over a VelocityMap with masked-corner fallback."""

    def __init__(self, vm):
        self.grid = vm.grid
        self.vx = np.where(vm.mask, 0.0, vm.vx)
        self.vz = np.where(vm.mask, 0.0, vm.vz)
        self.valid = ~vm.mask

    def __call__(self, x, z):
        g = self.grid
        fx = (x - g.x0) / g.dx
        fz = (z - g.z0) / g.dz
        # small tolerance absorbs round-off at the far edges
        if not (-1e-9 <= fx <= g.nx - 1 + 1e-9 and -1e-9 <= fz <= g.nz - 1 + 1e-9):
            raise OutOfGridError(f"point ({x}, {z}) outside grid")
        i = min(max(int(math.floor(fx)), 0), g.nx - 2)
        j = min(max(int(math.floor(fz)), 0), g.nz - 2)
        tx = fx - i
        tz = fz - j
        corners = ((j, i), (j, i + 1), (j + 1, i), (j + 1, i + 1))
        ok = [self.valid[c] for c in corners]
        if all(ok):
            w = ((1 - tx) * (1 - tz), tx * (1 - tz), (1 - tx) * tz, tx * tz)
        elif any(ok):
            w = []
            for (cj, ci), good in zip(corners, ok):
                if not good:
                    w.append(0.0)
                    continue
                d2 = ((ci - fx) * g.dx) ** 2 + ((cj - fz) * g.dz) ** 2
                if d2 == 0.0:
                    return self.vx[cj, ci], self.vz[cj, ci]
                w.append(1.0 / d2)
            total = sum(w)
            w = [wi / total for wi in w]
        else:
            raise MaskedRegionError(f"all corners masked around ({x}, {z})")
        vx = sum(wi * self.vx[c] for wi, c in zip(w, corners))
        vz = sum(wi * self.vz[c] for wi, c in zip(w, corners))
        return vx, vz


def interpolate_velocity(vm, point):
    """Velocity at an arbitrary point inside the grid.

    Bilinear over the enclosing cell; if some corners are masked the
    unmasked ones are combined by inverse-distance weighting. Raises
    :class:`MaskedRegionError` when all four are masked and
    :class:`OutOfGridError` outside the grid.
    """
    vx, vz = _Interpolator(vm)(float(point[0]), float(point[1]))
    return float(vx), float(vz)


def integrate_trajectory(vm, seed, h=None, max_steps=10_000, normalize=True, _interp=None):
    """Classic RK4 streamline from ``seed``.

    With ``normalize`` (the default) the right-hand side is ``v / |v|`` so
    ``h`` is an arclength step in metres; otherwise it is ``v`` itself and
    ``h`` is a step in c*t. Integration stops at the grid boundary, after
    ``max_steps`` steps, or on entering a fully masked cell.
    """
    g = vm.grid
    if h is None:
        h = min(g.dx, g.dz) / 4
    interp = _interp or _Interpolator(vm)
    x, z = float(seed[0]), float(seed[1])
    if not g.contains(x, z):
        raise OutOfGridError(f"seed ({x}, {z}) outside grid")
    traj = Trajectory((x, z), h, [(x, z)])

    def rhs(px, pz):
        vx, vz = interp(px, pz)
        if not normalize:
            return vx, vz
        speed = math.hypot(vx, vz)
        if speed == 0.0:
            raise MaskedRegionError("stagnation point")
        return vx / speed, vz / speed

    for _ in range(max_steps):
        try:
            k1 = rhs(x, z)
            k2 = rhs(x + 0.5 * h * k1[0], z + 0.5 * h * k1[1])
            k3 = rhs(x + 0.5 * h * k2[0], z + 0.5 * h * k2[1])
            k4 = rhs(x + h * k3[0], z + h * k3[1])
        except OutOfGridError:
            traj.termination = "boundary"
            return traj
        except MaskedRegionError:
            traj.termination = "masked-region"
            return traj
        nx_ = x + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        nz_ = z + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        if not g.contains(nx_, nz_):
            traj.termination = "boundary"
            return traj
        x, z = nx_, nz_
        traj.points.append((x, z))
    traj.termination = "max-steps"
    return traj


def integrate_many(vm, seeds, h=None, max_steps=10_000, normalize=True, threads=1):
    """Integrate several seeds; results are independent of ``threads``."""
    interp = _Interpolator(vm)

    def one(seed):
        return integrate_trajectory(vm, seed, h, max_steps, normalize, _interp=interp)

    if threads <= 1:
        return [one(s) for s in seeds]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, seeds))


def seed_trajectories(intensity, grid, n, entry_edge="z-min"):
    """Seeds at the intensity-weighted quantiles of one grid edge.

    The edge profile is treated as piecewise constant over each site's cell
    (clipped to the edge span) and seeds sit at the quantiles
    ``(i + 1/2) / n`` of its cumulative distribution.
    """
    if int(n) != n or n < 1:
        raise ValidationError("n must be a positive integer")
    if entry_edge not in EDGES:
        raise ValidationError(f"entry_edge must be one of {EDGES}")
    intensity = np.asarray(intensity, dtype=float)
    if intensity.shape != grid.shape:
        raise ValidationError("intensity does not match grid")
    along_x = entry_edge.startswith("z")
    if along_x:
        profile = intensity[0 if entry_edge == "z-min" else -1, :]
        coords, step = grid.xs, grid.dx
        fixed = grid.z0 if entry_edge == "z-min" else grid.z_max
    else:
        profile = intensity[:, 0 if entry_edge == "x-min" else -1]
        coords, step = grid.zs, grid.dz
        fixed = grid.x0 if entry_edge == "x-min" else grid.x_max
    profile = np.clip(np.nan_to_num(profile), 0.0, None)
    lo = np.maximum(coords - step / 2, coords[0])
    hi = np.minimum(coords + step / 2, coords[-1])
    mass = profile * (hi - lo)
    total = mass.sum()
    if total <= 0:
        raise ValidationError("zero total intensity on the entry edge")
    cdf = np.concatenate([[0.0], np.cumsum(mass)]) / total
    targets = (np.arange(n) + 0.5) / n
    seeds = []
    for q in targets:
        k = int(np.searchsorted(cdf, q, side="left")) - 1
        k = min(max(k, 0), len(mass) - 1)
        while mass[k] == 0:
            k += 1
        frac = (q - cdf[k]) / (cdf[k + 1] - cdf[k])
        pos = lo[k] + frac * (hi[k] - lo[k])
        seeds.append((pos, fixed) if along_x else (fixed, pos))
    return seeds
