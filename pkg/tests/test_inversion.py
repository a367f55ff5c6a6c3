import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relbohm import (
    DegenerateDesignError,
    MeasurementSet,
    NoiseModel,
    PlateConfig,
    ScanGrid,
    ValidationError,
    WeakValueInverter,
    build_design,
    coupling_phase,
    invert_scan,
    run_scan,
    solve_site,
)

TRUE = (3.1e5, 4.02e6, 1.2161e15)


def angles(plates, kx, kz, w):
    return np.array([coupling_phase(p, kx, kz, w) for p in plates])


def test_default_design_rank_three(plates):
    d = build_design(plates)
    assert np.linalg.matrix_rank(d.rows / d.column_scale) == 3
    assert d.rows.shape == (6, 3)
    assert 1 < d.condition_number < 1e3


def test_single_plate_at_zero_tilt_is_degenerate():
    same = [PlateConfig(f"x{i}", "along-x", 0.0, 2.04e-7, -2.75e-15, 4.08) for i in range(6)]
    with pytest.raises(DegenerateDesignError):
        build_design(same)


def test_single_family_is_degenerate():
    tilts = np.radians([-10, 0, 10, -5, 5, 2])
    fam = [PlateConfig(f"x{i}", "along-x", t, 2.04e-7, -2.75e-15, 4.08) for i, t in enumerate(tilts)]
    with pytest.raises(DegenerateDesignError):
        build_design(fam)


def test_equal_tilts_two_families_is_degenerate():
    # no tilt means the kx column is identically zero
    pl = [PlateConfig(f"{a}{i}", ax, 0.0, a_, b_, c_)
          for i in range(3)
          for a, ax, a_, b_, c_ in (("x", "along-x", 2.04e-7, -2.75e-15, 4.08),
                                    ("y", "along-y", 1.64e-7, -2.71e-15, 4.21))]
    with pytest.raises(DegenerateDesignError):
        build_design(pl)


def test_exact_recovery(plates):
    d = build_design(plates)
    kx, kz, w, res = solve_site(angles(plates, *TRUE), d)
    np.testing.assert_allclose((kx, kz, w), TRUE, rtol=1e-9)
    assert res <= 1e-10


def test_offsets_only_give_zero(plates):
    d = build_design(plates)
    kx, kz, w, res = solve_site(d.offsets.copy(), d)
    assert (kx, kz, w) == pytest.approx((0.0, 0.0, 0.0), abs=1e-20)


def test_matches_normal_equation_oracle(plates, rng):
    d = build_design(plates)
    phi = angles(plates, *TRUE) + rng.normal(0, 1e-3, 6)
    got = solve_site(phi, d)[:3]
    mpmath.mp.dps = 60
    A = mpmath.matrix([[mpmath.mpf(float(v)) for v in row] for row in d.rows])
    y = mpmath.matrix([mpmath.mpf(float(v)) for v in phi - d.offsets])
    want = [float(v) for v in mpmath.lu_solve(A.T * A, A.T * y)]
    np.testing.assert_allclose(got, want, rtol=1e-8)


@settings(max_examples=25, deadline=None)
@given(perm=st.permutations(range(6)), noise=st.floats(0, 1e-2))
def test_permutation_invariance(plates, perm, noise):
    rng = np.random.default_rng(1)
    phi = angles(plates, *TRUE) + noise * rng.standard_normal(6)
    base = solve_site(phi, build_design(plates))
    permuted = solve_site(phi[list(perm)], build_design([plates[i] for i in perm]))
    np.testing.assert_allclose(permuted, base, rtol=1e-9, atol=1e-12)


def test_rejects_non_finite(plates):
    phi = angles(plates, *TRUE)
    phi[2] = np.nan
    with pytest.raises(ValidationError):
        solve_site(phi, build_design(plates))
    with pytest.raises(ValidationError):
        solve_site(phi[:5], build_design(plates))


def test_residual_positive_under_shot_noise(config, plates):
    g = ScanGrid(nx=21, nz=5)
    ms = run_scan(config, plates, g, 1e4, NoiseModel(shot_noise=True, rng_seed=4))
    wv = invert_scan(ms)
    assert np.all(wv.residual_norm[~wv.mask] > 0)


def test_noiseless_pipeline_identity(config, grid, plates, truth):
    ms = run_scan(config, plates, grid, 1e4, NoiseModel.off())
    wv = invert_scan(ms)
    ok = ~wv.mask & ~truth.mask
    assert ok.sum() > 8000
    k = np.hypot(truth.kx, truth.kz)[ok]
    assert np.max(np.abs(wv.kx - truth.kx)[ok] / k) < 1e-6
    assert np.max(np.abs(wv.kz - truth.kz)[ok] / k) < 1e-6
    assert np.max(np.abs(wv.omega[ok] / config.omega - 1)) < 1e-6
    assert np.max(wv.residual_norm[ok]) <= 1e-10
    # masked sites are exactly those with a clamped record
    np.testing.assert_array_equal(wv.mask.ravel(), ms.clamped.any(axis=1))


def test_all_dark_is_all_masked(grid, plates):
    z = np.zeros((grid.size, 6))
    wv = invert_scan(MeasurementSet(grid, plates, z, z))
    assert wv.mask.all()


def test_default_scan_solves_every_site(config, grid, plates):
    noise = NoiseModel(dark_rate=50.0, shot_noise=True, rng_seed=1)
    wv = invert_scan(run_scan(config, plates, grid, 1e4, noise))
    assert wv.grid.size == 8326 and (~wv.mask).sum() == 8326


def test_poisson_weighting_matches_weighted_oracle(plates, rng):
    inv = WeakValueInverter(plates, weighting="poisson").fit()
    I_H = rng.integers(100, 5000, size=(4, 6)).astype(float)
    I_V = rng.integers(100, 5000, size=(4, 6)).astype(float)
    out = inv.transform_counts(I_H, I_V)
    phi = 2 * np.arctan2(np.sqrt(I_V), np.sqrt(I_H))
    d = inv.design_
    for s in range(4):
        w = I_H[s] + I_V[s]
        A = d.rows * np.sqrt(w)[:, None]
        b = (phi[s] - d.offsets) * np.sqrt(w)
        scale = np.linalg.norm(A, axis=0)
        sol = np.linalg.lstsq(A / scale, b, rcond=None)[0] / scale
        np.testing.assert_allclose(out[s, :3], sol, rtol=1e-8)


def test_estimator_api(plates):
    from sklearn.base import clone

    inv = WeakValueInverter(plates)
    assert clone(inv).get_params()["weighting"] == "none"
    inv.fit()
    X = np.vstack([angles(plates, *TRUE), angles(plates, 0.0, 4e6, 1.2e15)])
    sol = inv.transform(X)
    np.testing.assert_allclose(inv.inverse_transform(sol), X, rtol=1e-12)
    with pytest.raises(ValidationError):
        WeakValueInverter(weighting="cauchy").fit()
