"""Per-site least-squares recovery of (<k_xw>, <k_zw>, <omega_w>).

Each plate configuration contributes one linear equation
``a sin(tilt) kx + a cos(tilt) kz + b omega = phi - c``. The momentum and
energy columns differ by nine orders of magnitude, so columns are scaled
to unit norm before an orthogonal (QR) factorization.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import DegenerateDesignError, ValidationError
from .field import WeakValueMap
from .pointer import default_plates

CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class DesignMatrix:
    rows: np.ndarray
    offsets: np.ndarray
    condition_number: float
    column_scale: np.ndarray

    @property
    def n_equations(self):
        return self.rows.shape[0]


def build_design(plates, condition_limit=CONDITION_LIMIT):
    """Assemble the plate equations and check they determine all three unknowns."""
    plates = list(plates)
    if len(plates) < 3:
        raise DegenerateDesignError(f"need at least 3 configurations, got {len(plates)}")
    if len({p.optic_axis for p in plates}) < 2:
        raise DegenerateDesignError(
            "all configurations share one optic-axis family; momentum and energy "
            "columns cannot be separated"
        )
    rows = np.array([[*p.momentum_coefficients, p.b] for p in plates], dtype=float)
    offsets = np.array([p.c for p in plates], dtype=float)
    scale = np.linalg.norm(rows, axis=0)
    if np.any(scale == 0):
        raise DegenerateDesignError("a design column is identically zero")
    sv = np.linalg.svd(rows / scale, compute_uv=False)
    cond = np.inf if sv[-1] == 0 else sv[0] / sv[-1]
    if not cond <= condition_limit:
        raise DegenerateDesignError(
            f"design is numerically rank deficient (condition number {cond:.3g})"
        )
    return DesignMatrix(rows, offsets, float(cond), scale)


def _solve(design, phi, weights=None):
    """Solve for an (n, m) block of angle vectors; returns (theta (n, 3), residual (n,))."""
    A = design.rows / design.column_scale
    rhs = phi - design.offsets
    if weights is None:
        Q, R = np.linalg.qr(A)
        theta = np.linalg.solve(R, Q.T @ rhs.T).T
    else:
        sw = np.sqrt(weights)
        Aw = A[None, :, :] * sw[:, :, None]
        Q, R = np.linalg.qr(Aw)
        qtb = np.einsum("nmk,nm->nk", Q, rhs * sw)
        theta = np.linalg.solve(R, qtb[:, :, None])[:, :, 0]
    residual = np.linalg.norm(theta @ A.T - rhs, axis=1)
    return theta / design.column_scale, residual


def solve_site(phi_vec, design, weights=None):
    """Least-squares weak values at one site.

    Returns ``(kx, kz, omega, residual_norm)``.
    """
    phi_vec = np.asarray(phi_vec, dtype=float)
    if phi_vec.shape != (design.n_equations,):
        raise ValidationError(f"expected {design.n_equations} angles, got {phi_vec.shape}")
    if not np.all(np.isfinite(phi_vec)):
        raise ValidationError("rotation angles must be finite")
    w = None if weights is None else np.asarray(weights, dtype=float)[None, :]
    theta, res = _solve(design, phi_vec[None, :], w)
    kx, kz, omega = theta[0]
    return float(kx), float(kz), float(omega), float(res[0])


class WeakValueInverter(TransformerMixin, BaseEstimator):
    """Map rotation-angle vectors to weak values by least squares.

    Parameters
    ----------
    plates : sequence of PlateConfig, optional
        Measurement configurations; defaults to the six calibrated ones.
    weighting : {"none", "poisson"}
        ``"poisson"`` weights each equation by ``I_H + I_V`` (inverse
        variance of the Poisson-limited angle) in :meth:`transform_counts`.
    condition_limit : float
        Largest acceptable condition number of the column-scaled design.

    After :meth:`fit`, ``design_`` holds the :class:`DesignMatrix`.
    :meth:`transform` takes angles of shape (n_sites, n_plates) and returns
    columns ``kx, kz, omega, residual_norm``; :meth:`inverse_transform`
    applies the forward coupling model.
    """

    def __init__(self, plates=None, weighting="none", condition_limit=CONDITION_LIMIT):
        self.plates = plates
        self.weighting = weighting
        self.condition_limit = condition_limit

    def fit(self, X=None, y=None):
        if self.weighting not in ("none", "poisson"):
            raise ValidationError(f"unknown weighting {self.weighting!r}")
        plates = default_plates() if self.plates is None else self.plates
        self.design_ = build_design(plates, self.condition_limit)
        self.n_features_in_ = self.design_.n_equations
        return self

    def transform(self, X, weights=None):
        check_is_fitted(self, "design_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValidationError(f"expected {self.n_features_in_} angles per row")
        theta, res = _solve(self.design_, X, weights)
        return np.column_stack([theta, res])

    def transform_counts(self, I_H, I_V):
        """Angles from counts, then the (optionally weighted) solve.

        Rows containing a record with no counts, or a saturated channel,
        come back as NaN.
        """
        check_is_fitted(self, "design_")
        I_H = np.asarray(I_H, dtype=float)
        I_V = np.asarray(I_V, dtype=float)
        valid = valid_count_rows(I_H, I_V)
        out = np.full((I_H.shape[0], 4), np.nan)
        if not valid.any():
            return out
        h, v = I_H[valid], I_V[valid]
        phi = 2.0 * np.arctan2(np.sqrt(v), np.sqrt(h))
        weights = (h + v) if self.weighting == "poisson" else None
        out[valid] = self.transform(phi, weights=weights)
        return out

    def inverse_transform(self, X):
        check_is_fitted(self, "design_")
        X = check_array(X, dtype=float)[:, :3]
        return X @ self.design_.rows.T + self.design_.offsets


def valid_count_rows(I_H, I_V):
    """Sites whose every record has counts in both channels.

    An empty channel pins the angle to 0 or pi, where the pointer carries
    no information about the weak values.
    """
    finite = np.isfinite(I_H) & np.isfinite(I_V)
    return np.all(finite & (I_H > 0) & (I_V > 0), axis=1)


def invert_scan(ms, design=None, weighting="none"):
    """Recover the weak-value map of a whole :class:`MeasurementSet`."""
    inverter = WeakValueInverter(ms.plates, weighting=weighting)
    if design is None:
        inverter.fit()
    else:
        inverter.design_ = design
        inverter.n_features_in_ = design.n_equations
    sol = inverter.transform_counts(ms.I_H, ms.I_V)
    shape = ms.grid.shape
    mask = np.isnan(sol[:, 0]).reshape(shape)
    return WeakValueMap(
        ms.grid,
        sol[:, 0].reshape(shape),
        sol[:, 1].reshape(shape),
        sol[:, 2].reshape(shape),
        np.where(mask, np.nan, sol[:, 3].reshape(shape)),
        mask,
    )
