import hashlib
import math
import os

import numpy as np
import pytest

from relbohm import (
    NoiseModel,
    ScanGrid,
    ValidationError,
    effective_mass_sq,
    invert_scan,
    run_scan,
    synthesize_samples,
)
from relbohm import io
from relbohm.cli import FILES, main
from relbohm.config import RunConfig

SMALL = """
[grid]
x0_um = -3.0
z0_um = -3.0
dx_nm = 200.0
dz_nm = 600.0
nx = 31
nz = 11

[trajectory]
n_seeds = 6
"""


def write_config(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return str(p)


def digests(d):
    out = {}
    for name in sorted(os.listdir(d)):
        if name.endswith((".csv", ".ppm")):
            out[name] = hashlib.sha256((d / name).read_bytes()).hexdigest()
    return out


def run_all(cfg, out, seed=7, threads=1):
    for cmd in ("simulate", "invert", "trajectories", "mass", "continuity", "calibrate", "report"):
        code = main(["--config", cfg, "--seed", str(seed), "--out", str(out), "--threads", str(threads), cmd])
        assert code == 0, cmd


def test_config_defaults_and_overrides(tmp_path):
    cfg = RunConfig.load()
    assert cfg.grid() == ScanGrid()
    assert len(cfg.plates()) == 6
    path = write_config(tmp_path, SMALL)
    small = RunConfig.load(path, seed=5)
    assert small.grid().shape == (11, 31) and small.seed == 5
    assert small.digest() != RunConfig.load(path, seed=6).digest()
    assert small.digest() == RunConfig.load(path, seed=5).digest()


@pytest.mark.parametrize("text", [
    "[grid]\nnx_points = 3\n",
    "[beams]\nwavelength_nm = 1550\n",
    "[run]\nschema_version = 2\n",
    "[grid]\ndx_nm = -1\n",
    "[noise]\nrate_per_s = nan\n",
    "[trajectory]\nentry_edge = top\n",
])
def test_config_rejections(tmp_path, text):
    with pytest.raises(ValidationError):
        RunConfig.load(write_config(tmp_path, text))


def test_config_ini_round_trip(tmp_path):
    cfg = RunConfig.load(write_config(tmp_path, SMALL), seed=3)
    again = RunConfig.load(write_config(tmp_path, cfg.to_ini(), "copy.ini"))
    assert again.values == cfg.values


def test_csv_round_trips(tmp_path, config, plates):
    g = ScanGrid(nx=15, nz=6)
    ms = run_scan(config, plates, g, 1e4, NoiseModel(dark_rate=10.0, shot_noise=True, rng_seed=1))
    io.write_measurements(tmp_path / "m.csv", ms)
    back = io.read_measurements(tmp_path / "m.csv", plates, grid=g)
    np.testing.assert_array_equal(back.I_H, ms.I_H)
    np.testing.assert_array_equal(back.I_V, ms.I_V)

    wv = invert_scan(ms)
    wv.mask[2, 3] = True
    for arr in (wv.kx, wv.kz, wv.omega, wv.residual_norm):
        arr[2, 3] = np.nan
    io.write_weak_values(tmp_path / "w.csv", wv)
    wb = io.read_weak_values(tmp_path / "w.csv", grid=g)
    for name in ("kx", "kz", "omega", "residual_norm", "mask"):
        np.testing.assert_array_equal(getattr(wb, name), getattr(wv, name))
    io.write_weak_values(tmp_path / "w2.csv", wb)
    assert (tmp_path / "w.csv").read_bytes() == (tmp_path / "w2.csv").read_bytes()

    N = ms.fringe_counts()
    io.write_fringe(tmp_path / "f.csv", g, N)
    g2, N2 = io.read_fringe(tmp_path / "f.csv")
    np.testing.assert_array_equal(N2, N)
    assert g2.shape == g.shape

    mm = effective_mass_sq(wv)
    io.write_mass(tmp_path / "mass.csv", mm)
    _, m2, mask = io.read_mass(tmp_path / "mass.csv", grid=g)
    np.testing.assert_array_equal(m2, mm.m2)
    np.testing.assert_array_equal(mask, mm.mask)

    io.write_residuals(tmp_path / "r.csv", g, wv.kx, wv.kz)
    _, a, b = io.read_residuals(tmp_path / "r.csv", grid=g)
    np.testing.assert_array_equal(a, wv.kx)
    np.testing.assert_array_equal(b, wv.kz)

    edges = np.array([0.1, 0.30000000000000004, 0.7])
    io.write_histogram(tmp_path / "h.csv", edges, [3, 4])
    e2, c2 = io.read_histogram(tmp_path / "h.csv")
    np.testing.assert_array_equal(e2, edges)
    assert list(c2) == [3, 4]

    groups = {"along-x": synthesize_samples(rng=1)[:5]}
    io.write_calibration_samples(tmp_path / "c.csv", groups)
    assert io.read_calibration_samples(tmp_path / "c.csv") == groups


def test_headers_are_exact(tmp_path):
    g = ScanGrid(nx=3, nz=2)
    io.write_fringe(tmp_path / "f.csv", g, np.ones(g.shape))
    first = (tmp_path / "f.csv").read_text().splitlines()[0]
    assert first == "x_m,z_m,counts"
    with pytest.raises(ValidationError):
        io.read_weak_values(tmp_path / "f.csv")
    (tmp_path / "crlf.csv").write_bytes(b"x_m,z_m,counts\r\n0.0,0.0,1.0\r\n")
    with pytest.raises(ValidationError):
        io.read_fringe(tmp_path / "crlf.csv")
    assert io.WEAK_VALUE_HEADER == ("x_m", "z_m", "kx_rad_per_m", "kz_rad_per_m",
                                    "omega_rad_per_s", "residual_rad", "mask")
    assert io.TRAJECTORY_HEADER == ("traj_id", "step", "x_m", "z_m")
    assert io.RESIDUAL_HEADER == ("x_m", "z_m", "R_e_per_s", "R_n_per_s")


def test_non_finite_unmasked_weak_value_rejected(tmp_path):
    g = ScanGrid(nx=2, nz=2)
    xs, zs = g.flat_coordinates()
    rows = [(x, z, 1.0, 2.0, 3.0, 0.0, 0) for x, z in zip(xs, zs)]
    rows[1] = (xs[1], zs[1], float("nan"), 2.0, 3.0, 0.0, 0)
    io.write_csv(tmp_path / "w.csv", io.WEAK_VALUE_HEADER, rows)
    with pytest.raises(ValidationError):
        io.read_weak_values(tmp_path / "w.csv")


def test_ppm_layout(tmp_path):
    g = ScanGrid(x0=0, z0=0, dx=1.0, dz=2.0, nx=4, nz=3)
    vals = np.zeros(g.shape)
    vals[-1, :] = 1.0  # top row in z
    img = io.render_heatmap(g, vals, [np.array([[0.0, 0.0], [0.0, 4.0]])])
    assert img.shape == (5, 4, 3)
    assert tuple(img[0, 3]) == (0, 255, 255)
    assert tuple(img[-1, 3]) == (255, 255, 255)
    assert (img[:, 0] == 0).all()
    io.write_ppm(tmp_path / "a.ppm", img)
    assert (tmp_path / "a.ppm").read_bytes().startswith(b"P6\n4 5\n255\n")
    np.testing.assert_array_equal(io.read_ppm(tmp_path / "a.ppm"), img)


def test_cli_end_to_end_and_manifest(tmp_path):
    cfg = write_config(tmp_path, SMALL)
    out = tmp_path / "run"
    run_all(cfg, out)
    for name in FILES.values():
        assert (out / name).exists(), name
    manifest = io.read_json(out / "manifest.json")
    assert manifest["seed"] == 7
    for name, digest in manifest["files"].items():
        assert digest == io.sha256_file(out / name)
    assert set(manifest["stages"]) == {"simulate", "invert", "trajectories", "mass",
                                       "continuity", "calibrate", "report"}
    assert "sigma(R_n)/sigma(R_e)" in (out / "report.txt").read_text()


def test_cli_reproducible_across_threads(tmp_path):
    cfg = write_config(tmp_path, SMALL)
    run_all(cfg, tmp_path / "a", threads=1)
    run_all(cfg, tmp_path / "b", threads=3)
    da, db = digests(tmp_path / "a"), digests(tmp_path / "b")
    assert da == db and len(da) >= 9
    run_all(cfg, tmp_path / "c", seed=8)
    assert digests(tmp_path / "c")["measurements.csv"] != da["measurements.csv"]


def test_cli_noise_off_identity(tmp_path):
    cfg = write_config(tmp_path, SMALL + "\n[noise]\nenabled = false\n")
    out = tmp_path / "quiet"
    for cmd in ("simulate", "invert", "report"):
        assert main(["--config", cfg, "--out", str(out), cmd]) == 0
    text = (out / "report.txt").read_text()
    devs = [float(line.split(":")[1]) for line in text.splitlines() if "relative" in line]
    assert len(devs) == 2 and max(devs) < 1e-6


def test_cli_default_fringe_rows(tmp_path):
    out = tmp_path / "default"
    assert main(["--out", str(out), "simulate"]) == 0
    lines = (out / "fringe.csv").read_text().splitlines()
    assert lines[0] == "x_m,z_m,counts" and len(lines) - 1 == 8326


def test_cli_exit_codes(tmp_path, capsys):
    bad = write_config(tmp_path, "[grid]\nbogus = 1\n", "bad.ini")
    assert main(["--config", bad, "--out", str(tmp_path / "x"), "simulate"]) == 2
    flat = write_config(tmp_path, SMALL + "\n[plates]\ntilts_deg = 0.0\n", "flat.ini")
    assert main(["--config", flat, "--out", str(tmp_path / "y"), "simulate"]) == 3
    assert main(["--config", write_config(tmp_path, SMALL), "--out", str(tmp_path / "z"), "invert"]) == 4
    with pytest.raises(SystemExit):
        main(["--seed", "-1", "simulate"])
    # a schema mismatch in an upstream file is a validation failure
    cfg = write_config(tmp_path, SMALL)
    out = tmp_path / "w"
    assert main(["--config", cfg, "--out", str(out), "simulate"]) == 0
    (out / "measurements.csv").write_text("site,x,z\n", encoding="utf-8")
    assert main(["--config", cfg, "--out", str(out), "invert"]) == 2


def test_cli_calibrate_from_samples(tmp_path):
    groups = {"plate-1": synthesize_samples((2.04e-7, -2.75e-15, 4.08), rng=3)}
    io.write_calibration_samples(tmp_path / "s.csv", groups)
    out = tmp_path / "cal"
    assert main(["--out", str(out), "calibrate", "--samples", str(tmp_path / "s.csv")]) == 0
    coeffs = io.read_json(out / "coefficients.json")["plate-1"]
    assert abs(coeffs["a_rad_m"] - 2.04e-7) < 4 * coeffs["a_se"]
    assert 0 < coeffs["phi_at_normal_incidence_rad"] < math.pi
