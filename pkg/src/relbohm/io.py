"""CSV, JSON and PPM persistence.

Floats are written with ``repr`` so every value re-parses to the identical
double. Files are UTF-8 with LF line endings and a mandatory header row;
readers reject any header that differs from the schema.
"""

import hashlib
import json
import math
import os

import numpy as np

from .exceptions import ValidationError
from .field import WeakValueMap
from .grid import ScanGrid

FRINGE_HEADER = ("x_m", "z_m", "counts")
WEAK_VALUE_HEADER = (
    "x_m", "z_m", "kx_rad_per_m", "kz_rad_per_m", "omega_rad_per_s", "residual_rad", "mask",
)
TRAJECTORY_HEADER = ("traj_id", "step", "x_m", "z_m")
RESIDUAL_HEADER = ("x_m", "z_m", "R_e_per_s", "R_n_per_s")
MEASUREMENT_HEADER = ("site", "x_m", "z_m", "plate_id", "I_H", "I_V")
MASS_HEADER = ("x_m", "z_m", "m2_normalized", "mask")
HISTOGRAM_HEADER = ("bin_left", "bin_right", "count")
CALIBRATION_HEADER = (
    "plate", "k_perp_rad_per_m", "omega_rad_per_s", "phi_rad",
    "plate_beam_angle_deg", "tilt_deg", "wavelength_nm",
)


def fmt(value):
    """Shortest decimal string that round-trips the value."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else fmt(v) for v in row) + "\n")


def read_csv(path, header):
    """Rows of a CSV as lists of strings, after checking the header exactly."""
    with open(path, encoding="utf-8", newline="") as fh:
        text = fh.read()
    if "\r" in text:
        raise ValidationError(f"{path}: CR line endings are not allowed")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ValidationError(f"{path}: empty file")
    found = tuple(lines[0].split(","))
    if found != tuple(header):
        raise ValidationError(f"{path}: header {found} does not match schema {tuple(header)}")
    rows = []
    for n, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != len(header):
            raise ValidationError(f"{path}:{n}: expected {len(header)} fields, got {len(cells)}")
        rows.append(cells)
    return rows


def _floats(rows, cols, path, allow_nan=False):
    try:
        arr = np.array([[float(r[c]) for c in cols] for r in rows], dtype=float).reshape(-1, len(cols))
    except ValueError as exc:
        raise ValidationError(f"{path}: non-numeric value ({exc})") from exc
    bad = ~np.isfinite(arr)
    if allow_nan:
        bad &= ~np.isnan(arr)
    if bad.any():
        raise ValidationError(f"{path}: non-finite values")
    return arr


def _grid_from_coordinates(x, z, path, expected=None):
    """Recover the ScanGrid from scan-ordered site coordinates.

    With ``expected`` the coordinates are checked against that grid and it
    is returned unchanged, so the grid's own step values survive the trip.
    """
    if expected is not None:
        if len(x) != expected.size:
            raise ValidationError(f"{path}: {len(x)} sites, expected {expected.size}")
        gx, gz = expected.flat_coordinates()
        tol = 1e-9 * max(expected.dx, expected.dz)
        if np.max(np.abs(gx - x)) > tol or np.max(np.abs(gz - z)) > tol:
            raise ValidationError(f"{path}: site coordinates do not match the configured grid")
        return expected
    xs = np.unique(x)
    zs = np.unique(z)
    nx, nz = len(xs), len(zs)
    if nx < 2 or nz < 2 or nx * nz != len(x):
        raise ValidationError(f"{path}: sites do not form a rectangular grid")
    grid = ScanGrid(float(xs[0]), float(zs[0]), float((xs[-1] - xs[0]) / (nx - 1)),
                    float((zs[-1] - zs[0]) / (nz - 1)), nx, nz)
    gx, gz = grid.flat_coordinates()
    tol = 1e-9 * max(grid.dx, grid.dz)
    if np.max(np.abs(gx - x)) > tol or np.max(np.abs(gz - z)) > tol:
        raise ValidationError(f"{path}: sites are not in scan order on a uniform grid")
    return grid


def _site_rows(grid, *columns):
    xs, zs = grid.flat_coordinates()
    flat = [np.asarray(c).ravel() for c in columns]
    for k in range(grid.size):
        yield (xs[k], zs[k], *(c[k] for c in flat))


def write_fringe(path, grid, counts):
    write_csv(path, FRINGE_HEADER, _site_rows(grid, counts))


def read_fringe(path, grid=None):
    rows = read_csv(path, FRINGE_HEADER)
    arr = _floats(rows, range(3), path)
    g = _grid_from_coordinates(arr[:, 0], arr[:, 1], path, grid)
    if np.any(arr[:, 2] < 0):
        raise ValidationError(f"{path}: negative counts")
    return g, arr[:, 2].reshape(g.shape)


def write_weak_values(path, wv):
    write_csv(path, WEAK_VALUE_HEADER,
              _site_rows(wv.grid, wv.kx, wv.kz, wv.omega, wv.residual_norm, wv.mask.astype(int)))


def read_weak_values(path, grid=None):
    rows = read_csv(path, WEAK_VALUE_HEADER)
    arr = _floats(rows, range(7), path, allow_nan=True)
    if np.isnan(arr[:, :2]).any():
        raise ValidationError(f"{path}: non-finite site coordinates")
    mask = arr[:, 6]
    if not np.all((mask == 0) | (mask == 1)):
        raise ValidationError(f"{path}: mask must be 0 or 1")
    mask = mask.astype(bool)
    if np.isnan(arr[~mask, 2:6]).any():
        raise ValidationError(f"{path}: non-finite weak values on unmasked sites")
    g = _grid_from_coordinates(arr[:, 0], arr[:, 1], path, grid)
    shape = g.shape
    return WeakValueMap(g, *(arr[:, c].reshape(shape) for c in range(2, 6)), mask.reshape(shape))


def write_measurements(path, ms):
    xs, zs = ms.grid.flat_coordinates()
    ids = [p.id for p in ms.plates]

    def rows():
        for s in range(ms.grid.size):
            for p, pid in enumerate(ids):
                yield (s, xs[s], zs[s], pid, ms.I_H[s, p], ms.I_V[s, p])

    write_csv(path, MEASUREMENT_HEADER, rows())


def read_measurements(path, plates, T=None, grid=None):
    """Rebuild a MeasurementSet; plate ids must match ``plates`` in order."""
    from .pointer import DEFAULT_ACCUMULATION_S, MeasurementSet

    rows = read_csv(path, MEASUREMENT_HEADER)
    ids = [p.id for p in plates]
    n_p = len(ids)
    if len(rows) == 0 or len(rows) % n_p:
        raise ValidationError(f"{path}: record count {len(rows)} is not a multiple of {n_p} plates")
    n_s = len(rows) // n_p
    found = [r[3] for r in rows]
    if found != ids * n_s:
        raise ValidationError(f"{path}: plate ids do not match the configured plates {ids}")
    try:
        sites = np.array([int(r[0]) for r in rows])
    except ValueError as exc:
        raise ValidationError(f"{path}: site index must be an integer") from exc
    if not np.array_equal(sites, np.repeat(np.arange(n_s), n_p)):
        raise ValidationError(f"{path}: sites must be consecutive with one record per plate")
    arr = _floats(rows, (1, 2, 4, 5), path)
    grid = _grid_from_coordinates(arr[::n_p, 0], arr[::n_p, 1], path, grid)
    I_H = arr[:, 2].reshape(n_s, n_p)
    I_V = arr[:, 3].reshape(n_s, n_p)
    return MeasurementSet(grid, tuple(plates), I_H, I_V, T=T or DEFAULT_ACCUMULATION_S)


def write_trajectories(path, trajectories):
    def rows():
        for tid, traj in enumerate(trajectories):
            for step, (x, z) in enumerate(traj.points):
                yield (tid, step, x, z)

    write_csv(path, TRAJECTORY_HEADER, rows())


def read_trajectories(path):
    rows = read_csv(path, TRAJECTORY_HEADER)
    out = {}
    for r in rows:
        try:
            tid, step = int(r[0]), int(r[1])
        except ValueError as exc:
            raise ValidationError(f"{path}: traj_id and step must be integers") from exc
        pts = out.setdefault(tid, [])
        if step != len(pts):
            raise ValidationError(f"{path}: steps of trajectory {tid} are not consecutive")
        x, z = float(r[2]), float(r[3])
        if not (math.isfinite(x) and math.isfinite(z)):
            raise ValidationError(f"{path}: non-finite trajectory point")
        pts.append((x, z))
    return [np.array(out[k]) for k in sorted(out)]


def write_residuals(path, grid, R_e, R_n):
    write_csv(path, RESIDUAL_HEADER, _site_rows(grid, R_e, R_n))


def read_residuals(path, grid=None):
    rows = read_csv(path, RESIDUAL_HEADER)
    arr = _floats(rows, range(4), path, allow_nan=True)
    g = _grid_from_coordinates(arr[:, 0], arr[:, 1], path, grid)
    return g, arr[:, 2].reshape(g.shape), arr[:, 3].reshape(g.shape)


def write_mass(path, mm):
    write_csv(path, MASS_HEADER, _site_rows(mm.grid, mm.m2, mm.mask.astype(int)))


def read_mass(path, grid=None):
    rows = read_csv(path, MASS_HEADER)
    arr = _floats(rows, range(4), path, allow_nan=True)
    g = _grid_from_coordinates(arr[:, 0], arr[:, 1], path, grid)
    return g, arr[:, 2].reshape(g.shape), arr[:, 3].astype(bool).reshape(g.shape)


def write_histogram(path, edges, counts):
    write_csv(path, HISTOGRAM_HEADER,
              ((edges[k], edges[k + 1], int(counts[k])) for k in range(len(counts))))


def read_histogram(path):
    rows = read_csv(path, HISTOGRAM_HEADER)
    arr = _floats(rows, range(3), path)
    edges = np.append(arr[:, 0], arr[-1, 1]) if len(arr) else np.array([])
    return edges, arr[:, 2].astype(int)


def write_calibration_samples(path, groups):
    """``groups`` maps a plate label to a list of CalibSample."""
    def rows():
        for label, samples in groups.items():
            for s in samples:
                yield (label, s.k_perp, s.omega, s.phi, s.plate_beam_angle_deg, s.tilt_deg,
                       s.wavelength_nm)

    write_csv(path, CALIBRATION_HEADER, rows())


def read_calibration_samples(path):
    from .calibration import CalibSample

    rows = read_csv(path, CALIBRATION_HEADER)
    groups = {}
    arr = _floats(rows, range(1, 7), path, allow_nan=True)
    if np.isnan(arr[:, :3]).any():
        raise ValidationError(f"{path}: k_perp, omega and phi must be finite")
    for r, vals in zip(rows, arr):
        groups.setdefault(r[0], []).append(CalibSample(*map(float, vals)))
    return groups


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from exc


# Linear colormap: 0 -> white (255, 255, 255), 1 -> cyan (0, 255, 255).
def colormap(t):
    t = np.clip(np.nan_to_num(t), 0.0, 1.0)
    rgb = np.empty(t.shape + (3,), dtype=np.uint8)
    rgb[..., 0] = np.round(255 * (1 - t)).astype(np.uint8)
    rgb[..., 1] = 255
    rgb[..., 2] = 255
    return rgb


def render_heatmap(grid, values, trajectories=()):
    """RGB image of ``values`` with black trajectory polylines.

    One pixel column per x site; rows are resampled to the x pitch so the
    image has square pixels. The top row is the largest z.
    """
    values = np.asarray(values, dtype=float)
    height = int(round((grid.z_max - grid.z0) / grid.dx)) + 1
    zpix = grid.z_max - np.arange(height) * grid.dx
    rows = np.clip(np.round((zpix - grid.z0) / grid.dz).astype(int), 0, grid.nz - 1)
    peak = np.nanmax(values) if np.isfinite(values).any() else 0.0
    norm = values / peak if peak > 0 else np.zeros_like(values)
    img = colormap(norm[rows, :])

    def pixel(x, z):
        col = int(round((x - grid.x0) / grid.dx))
        row = int(round((grid.z_max - z) / grid.dx))
        return min(max(row, 0), height - 1), min(max(col, 0), grid.nx - 1)

    for traj in trajectories:
        pts = np.asarray(traj, dtype=float).reshape(-1, 2)
        for k in range(len(pts)):
            r1, c1 = pixel(*pts[k])
            r0, c0 = pixel(*pts[k - 1]) if k else (r1, c1)
            n = max(abs(r1 - r0), abs(c1 - c0), 1)
            for t in range(n + 1):
                img[r0 + round((r1 - r0) * t / n), c0 + round((c1 - c0) * t / n)] = 0
    return img


def write_ppm(path, img):
    img = np.ascontiguousarray(img, dtype=np.uint8)
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_ppm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P6" or parts[2] != b"255":
        raise ValidationError(f"{path}: not a binary P6 pixmap")
    w, h = map(int, parts[1].split())
    pix = np.frombuffer(parts[3], dtype=np.uint8)
    if pix.size != w * h * 3:
        raise ValidationError(f"{path}: pixel data size mismatch")
    return pix.reshape(h, w, 3)


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    """``manifest.json`` in a run directory: config hash, seed, timings, digests."""

    NAME = "manifest.json"

    def __init__(self, out_dir):
        self.path = os.path.join(out_dir, self.NAME)
        self.out_dir = out_dir
        if os.path.exists(self.path):
            self.data = read_json(self.path)
        else:
            self.data = {"config_hash": None, "seed": None, "stages": {}, "files": {}}

    def record(self, stage, config, seconds, files):
        self.data["config_hash"] = config.digest()
        self.data["seed"] = config.seed
        self.data["stages"][stage] = {"seconds": seconds, "outputs": sorted(files)}
        for name in files:
            self.data["files"][name] = sha256_file(os.path.join(self.out_dir, name))
        write_json(self.path, self.data)
