"""Recovering plate coupling coefficients from calibration scans.

The rotation angle is regressed on ``phi = a k_perp + b omega + c``. The two
regressors sit near 1e6 rad/m and 1e15 rad/s and vary by only a few
percent, so they are centred and scaled before a QR solve and the
coefficients are mapped back afterwards.
"""

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .constants import DEFAULT_CONSTANTS
from .exceptions import DegenerateDesignError, ValidationError
from .pointer import PLATE_X_COEFFICIENTS

RANK_TOLERANCE = 1e-10

PROTOCOL_ANGLES_DEG = (35.0, 45.0, 55.0)
PROTOCOL_TILT_RANGE_DEG = (-1.5, 1.5)
PROTOCOL_WAVELENGTH_RANGE_NM = (1529.83, 1564.95)


@dataclass(frozen=True)
class CalibSample:
    k_perp: float
    omega: float
    phi: float
    plate_beam_angle_deg: float = float("nan")
    tilt_deg: float = float("nan")
    wavelength_nm: float = float("nan")

    def __post_init__(self):
        if not 0.0 <= self.phi <= math.pi:
            raise ValidationError(f"phi must lie in [0, pi], got {self.phi}")


@dataclass(frozen=True)
class CouplingFit:
    a: float
    b: float
    c: float
    a_se: float = 0.0
    b_se: float = 0.0
    c_se: float = 0.0
    residual_rms: float = 0.0

    @property
    def coefficients(self):
        return (self.a, self.b, self.c)

    @property
    def standard_errors(self):
        return (self.a_se, self.b_se, self.c_se)


class LinearCouplingRegressor(RegressorMixin, BaseEstimator):
    """Ordinary least squares for ``phi = a k_perp + b omega + c``.

    ``X`` has two columns, ``k_perp`` and ``omega``. Fitted attributes:
    ``coef_`` (a, b), ``intercept_`` (c), ``stderr_`` (a, b, c),
    ``covariance_`` (3x3, order a, b, c) and ``residual_rms_``.
    """

    def __init__(self, rank_tolerance=RANK_TOLERANCE):
        self.rank_tolerance = rank_tolerance

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        if X.shape[1] != 2:
            raise ValidationError("X must have columns (k_perp, omega)")
        n = X.shape[0]
        if n < 3:
            raise DegenerateDesignError(f"need at least 3 samples, got {n}")
        mean = X.mean(axis=0)
        centred = X - mean
        scale = np.linalg.norm(centred, axis=0)
        if np.any(scale == 0):
            raise DegenerateDesignError("k_perp or omega does not vary across samples")
        D = np.column_stack([centred / scale, np.ones(n) / math.sqrt(n)])
        Q, R = np.linalg.qr(D)
        diag = np.abs(np.diag(R))
        if diag.min() < self.rank_tolerance * diag.max():
            raise DegenerateDesignError("k_perp and omega are collinear; design has rank < 3")
        beta = np.linalg.solve(R, Q.T @ y)
        resid = y - D @ beta

        # beta -> (a, b, c) is linear: a = b1/s1, b = b2/s2, c = b3/sqrt(n) - a m1 - b m2
        J = np.array([
            [1 / scale[0], 0.0, 0.0],
            [0.0, 1 / scale[1], 0.0],
            [-mean[0] / scale[0], -mean[1] / scale[1], 1 / math.sqrt(n)],
        ])
        a, b, c = J @ beta
        dof = n - 3
        sigma2 = float(resid @ resid) / dof if dof > 0 else 0.0
        Rinv = np.linalg.inv(R)
        cov = sigma2 * J @ (Rinv @ Rinv.T) @ J.T

        self.coef_ = np.array([a, b])
        self.intercept_ = float(c)
        self.covariance_ = cov
        self.stderr_ = np.sqrt(np.clip(np.diag(cov), 0.0, None))
        self.residual_rms_ = float(math.sqrt(resid @ resid / n))
        self.n_features_in_ = 2
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=float)
        return X @ self.coef_ + self.intercept_

    def to_fit(self):
        check_is_fitted(self, "coef_")
        return CouplingFit(
            float(self.coef_[0]), float(self.coef_[1]), self.intercept_,
            *map(float, self.stderr_), self.residual_rms_,
        )


def fit_linear_coupling(samples):
    """Fit a :class:`CouplingFit` to a list of :class:`CalibSample`."""
    samples = list(samples)
    if len(samples) < 3:
        raise DegenerateDesignError(f"need at least 3 samples, got {len(samples)}")
    X = np.array([[s.k_perp, s.omega] for s in samples])
    y = np.array([s.phi for s in samples])
    return LinearCouplingRegressor().fit(X, y).to_fit()


def predict_phi(fit, k_perp, omega):
    return fit.a * np.asarray(k_perp) + fit.b * np.asarray(omega) + fit.c


def protocol_layout(n_tilts=7, n_wavelengths=9, angles_deg=PROTOCOL_ANGLES_DEG,
                    constants=DEFAULT_CONSTANTS):
    """(angle, tilt, wavelength, k_perp, omega) rows of the calibration protocol.

    Three plate-beam angles, a tilt sweep over +/-1.5 degrees and a laser
    sweep over 1529.83-1564.95 nm. ``k_perp`` is the momentum component
    along the plate normal, ``k sin(angle + tilt)``.
    """
    tilts = np.linspace(*PROTOCOL_TILT_RANGE_DEG, n_tilts)
    lams = np.linspace(*PROTOCOL_WAVELENGTH_RANGE_NM, n_wavelengths)
    rows = []
    for angle in angles_deg:
        for tilt in tilts:
            for lam in lams:
                lam_m = lam * 1e-9
                k = constants.wavenumber(lam_m)
                k_perp = k * math.sin(math.radians(angle + tilt))
                rows.append((angle, tilt, lam, k_perp, constants.angular_frequency(lam_m)))
    return np.array(rows)


def synthesize_samples(coefficients=PLATE_X_COEFFICIENTS, phi_noise=0.01, rng=None,
                       n_tilts=7, n_wavelengths=9, constants=DEFAULT_CONSTANTS):
    """Calibration samples with planted coefficients and Gaussian angle noise."""
    rng = np.random.default_rng(rng)
    a, b, c = coefficients
    layout = protocol_layout(n_tilts, n_wavelengths, constants=constants)
    phi = a * layout[:, 3] + b * layout[:, 4] + c
    phi = np.clip(phi + rng.normal(0.0, phi_noise, size=len(phi)), 0.0, math.pi)
    return [
        CalibSample(kp, om, float(p), ang, tilt, lam)
        for (ang, tilt, lam, kp, om), p in zip(layout, phi)
    ]
