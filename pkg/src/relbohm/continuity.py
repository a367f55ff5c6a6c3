"""Discrete continuity residuals and their histogram statistics.

``R_e`` tests the Klein-Gordon (energy) continuity equation using the
measured momentum weak values and the central frequency; ``R_n`` tests the
Schroedinger (particle-number) form using the measured velocity field. Both
are expressed in 1/s.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import convolve1d
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_grid_shape, check_nonnegative
from .constants import DEFAULT_CONSTANTS
from .exceptions import FitFailureError, ValidationError

COUNT_FLOOR = 1e-4
MAX_BINS = 200_000


def _axis_derivative(f, valid, step, axis):
    """Derivative along one axis honouring a validity mask.

    Central differences where both neighbours are valid; second-order
    one-sided stencils at the array border; first-order one-sided when a
    neighbour is masked. Returns (derivative, ok).
    """
    f = np.moveaxis(np.where(valid, f, 0.0), axis, -1)
    v = np.moveaxis(valid, axis, -1)
    n = f.shape[-1]
    d = np.full(f.shape, np.nan)
    ok = np.zeros(f.shape, dtype=bool)

    def shifted(arr, k, fill):
        out = np.full(arr.shape, fill, dtype=arr.dtype)
        if k > 0:
            out[..., :-k] = arr[..., k:]
        elif k < 0:
            out[..., -k:] = arr[..., :k]
        else:
            out[...] = arr
        return out

    fp1, fm1 = shifted(f, 1, 0.0), shifted(f, -1, 0.0)
    fp2, fm2 = shifted(f, 2, 0.0), shifted(f, -2, 0.0)
    vp1, vm1 = shifted(v, 1, False), shifted(v, -1, False)
    vp2, vm2 = shifted(v, 2, False), shifted(v, -2, False)
    idx = np.arange(n)
    left_border = np.broadcast_to(idx == 0, f.shape)
    right_border = np.broadcast_to(idx == n - 1, f.shape)

    central = v & vp1 & vm1
    d = np.where(central, (fp1 - fm1) / (2 * step), d)
    ok |= central

    fwd2 = v & ~ok & left_border & vp1 & vp2
    d = np.where(fwd2, (-3 * f + 4 * fp1 - fp2) / (2 * step), d)
    ok |= fwd2
    bwd2 = v & ~ok & right_border & vm1 & vm2
    d = np.where(bwd2, (3 * f - 4 * fm1 + fm2) / (2 * step), d)
    ok |= bwd2

    fwd1 = v & ~ok & vp1
    d = np.where(fwd1, (fp1 - f) / step, d)
    ok |= fwd1
    bwd1 = v & ~ok & vm1
    d = np.where(bwd1, (f - fm1) / step, d)
    ok |= bwd1
    return np.moveaxis(d, -1, axis), np.moveaxis(ok, -1, axis)


def divergence(fx, fz, grid, mask=None):
    """Finite-difference divergence of a gridded vector field.

    ``mask`` marks invalid sites (True = masked). Sites with no usable
    neighbour along either axis come back NaN.
    """
    fx = check_grid_shape(np.asarray(fx, dtype=float), grid, "fx")
    fz = check_grid_shape(np.asarray(fz, dtype=float), grid, "fz")
    valid = np.isfinite(fx) & np.isfinite(fz)
    if mask is not None:
        valid &= ~np.asarray(mask, dtype=bool)
    dfx, okx = _axis_derivative(fx, valid, grid.dx, axis=1)
    dfz, okz = _axis_derivative(fz, valid, grid.dz, axis=0)
    return np.where(okx & okz, dfx + dfz, np.nan)


def _count_mask(N, floor):
    N = np.asarray(N, dtype=float)
    peak = np.nanmax(N) if N.size else 0.0
    return ~(N >= floor * peak) | ~(N > 0)


def residual_relativistic(N, wv, omega, count_floor=COUNT_FLOOR, constants=DEFAULT_CONSTANTS):
    """``R_e = c^2 div(N <k_w>) / (N omega)`` in 1/s; NaN where masked.

    Sites with counts below ``count_floor * max(N)`` are masked in the
    output; their flux still feeds neighbouring stencils unless the weak
    values themselves are masked.
    """
    N = check_grid_shape(np.asarray(N, dtype=float), wv.grid, "N")
    mask = wv.mask | _count_mask(N, count_floor)
    div = divergence(N * wv.kx, N * wv.kz, wv.grid, wv.mask)
    c2 = constants.speed_of_light**2
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(mask, np.nan, c2 * div / (N * omega))


def residual_nonrelativistic(N, vm, count_floor=COUNT_FLOOR, constants=DEFAULT_CONSTANTS):
    """``R_n = c div(N v) / N`` in 1/s with ``v`` the measured velocity (units of c)."""
    N = check_grid_shape(np.asarray(N, dtype=float), vm.grid, "N")
    mask = vm.mask | _count_mask(N, count_floor)
    div = divergence(N * vm.vx, N * vm.vz, vm.grid, vm.mask)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(mask, np.nan, constants.speed_of_light * div / N)


def gaussian_kernel(sigma_samples, truncate=4.0):
    radius = max(1, int(math.ceil(truncate * sigma_samples)))
    t = np.arange(-radius, radius + 1)
    w = np.exp(-0.5 * (t / sigma_samples) ** 2)
    return w / w.sum()


def smooth_counts(N, grid, kernel_sigma):
    """Separable Gaussian smoothing with edge renormalization.

    ``kernel_sigma`` is in metres and converted per axis. Near the border
    the truncated kernel is renormalized so a constant field is unchanged.
    """
    kernel_sigma = check_nonnegative(kernel_sigma, "kernel_sigma")
    N = check_grid_shape(np.asarray(N, dtype=float), grid, "N")
    if kernel_sigma == 0:
        return N.copy()
    out = N
    weight = np.ones_like(N)
    for axis, step in ((1, grid.dx), (0, grid.dz)):
        k = gaussian_kernel(kernel_sigma / step)
        out = convolve1d(out, k, axis=axis, mode="constant", cval=0.0)
        weight = convolve1d(weight, k, axis=axis, mode="constant", cval=0.0)
    return out / weight


def fd_bin_edges(samples, max_bins=MAX_BINS):
    """Freedman-Diaconis bin edges spanning every sample."""
    samples = np.asarray(samples, dtype=float)
    lo, hi = samples.min(), samples.max()
    q25, q75 = np.percentile(samples, [25, 75])
    width = 2 * (q75 - q25) / len(samples) ** (1 / 3)
    if not width > 0:
        width = (hi - lo) / 10 if hi > lo else 1.0
    nbins = int(math.ceil((hi - lo) / width)) if hi > lo else 1
    if nbins > max_bins:
        nbins = max_bins
        width = (hi - lo) / nbins
    # centre the bin grid on the span so symmetric data gives symmetric bins
    mid = 0.5 * (lo + hi)
    half = 0.5 * nbins * width
    return np.linspace(mid - half, mid + half, nbins + 1)


def _gauss(x, amp, mu, sigma):
    return amp * np.exp(-0.5 * ((x - mu) / sigma) ** 2)


@dataclass(frozen=True)
class GaussianFit:
    mu: float
    sigma: float
    sigma_uncertainty: float
    amplitude: float
    mu_uncertainty: float
    iterations: int


def gaussian_fit(counts, edges, max_iter=200, tol=1e-10, init=None):
    """Levenberg-Marquardt fit of ``A exp(-(x - mu)^2 / (2 sigma^2))`` to bin counts.

    Starts from the histogram's moments (or ``init = (A, mu, sigma)``).
    The parameter uncertainties come from ``s^2 (J^T J)^-1`` at the optimum,
    with ``s^2`` the residual variance. Raises :class:`FitFailureError` if
    the iteration does not converge.
    """
    y = np.asarray(counts, dtype=float)
    edges = np.asarray(edges, dtype=float)
    if edges.shape != (len(y) + 1,):
        raise ValidationError("edges must have len(counts) + 1 entries")
    if np.count_nonzero(y) < 5:
        raise ValidationError("need at least 5 nonempty bins")
    x = 0.5 * (edges[1:] + edges[:-1])
    if init is None:
        w = y / y.sum()
        mu0 = float(w @ x)
        sig0 = float(math.sqrt(max(w @ (x - mu0) ** 2, 0.0))) or float(edges[-1] - edges[0])
        init = (float(y.max()), mu0, sig0)
    p = np.array(init, dtype=float)
    # work in units of the initial width to keep J^T J well scaled
    shift, scale = p[1], p[2]
    xs = (x - shift) / scale
    q = np.array([p[0], 0.0, 1.0])

    def model_and_jac(q):
        a, m, s = q
        t = (xs - m) / s
        g = np.exp(-0.5 * t * t)
        J = np.column_stack([g, a * g * t / s, a * g * t * t / s])
        return a * g, J

    lam = 1e-3
    f, J = model_and_jac(q)
    r = y - f
    cost = r @ r
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        A = J.T @ J
        g = J.T @ r
        step = np.linalg.solve(A + lam * np.diag(np.diag(A) + 1e-300), g)
        trial = q + step
        if trial[2] <= 0:
            lam *= 10
            continue
        f_t, J_t = model_and_jac(trial)
        r_t = y - f_t
        cost_t = r_t @ r_t
        if cost_t <= cost:
            rel = (cost - cost_t) / max(cost, 1e-300)
            q, f, J, r, cost = trial, f_t, J_t, r_t, cost_t
            lam = max(lam / 10, 1e-12)
            if rel < tol or cost == 0:
                converged = True
                break
        else:
            lam *= 10
            if lam > 1e16:
                break
    if not converged:
        raise FitFailureError(
            "Gaussian fit did not converge",
            {"iterations": it, "params": q.tolist(), "cost": float(cost), "lambda": lam},
        )
    dof = max(len(y) - 3, 1)
    s2 = cost / dof
    try:
        cov = s2 * np.linalg.inv(J.T @ J)
    except np.linalg.LinAlgError as exc:
        raise FitFailureError("singular Jacobian at optimum", {"params": q.tolist()}) from exc
    err = np.sqrt(np.clip(np.diag(cov), 0, None))
    return GaussianFit(
        mu=float(shift + scale * q[1]),
        sigma=float(scale * q[2]),
        sigma_uncertainty=float(scale * err[2]),
        amplitude=float(q[0]),
        mu_uncertainty=float(scale * err[1]),
        iterations=it,
    )


class GaussianHistogramFitter(BaseEstimator):
    """Histogram residual samples and fit a Gaussian to the bin counts.

    ``bins`` is ``"fd"`` (Freedman-Diaconis over the full sample span) or an
    explicit edge array. The initial guess uses the median and the
    interquartile range, so heavy tails do not drag the start point.
    """

    def __init__(self, bins="fd", max_iter=200):
        self.bins = bins
        self.max_iter = max_iter

    def fit(self, X, y=None):
        samples = np.asarray(X, dtype=float).ravel()
        samples = samples[np.isfinite(samples)]
        if samples.size < 5:
            raise ValidationError("need at least 5 finite samples")
        edges = fd_bin_edges(samples) if isinstance(self.bins, str) else np.asarray(self.bins)
        counts, edges = np.histogram(samples, edges)
        q25, med, q75 = np.percentile(samples, [25, 50, 75])
        sig0 = (q75 - q25) / 1.349 or samples.std() or 1.0
        peak = counts.max()
        result = gaussian_fit(counts, edges, self.max_iter, init=(peak, med, sig0))
        self.bin_edges_ = edges
        self.counts_ = counts
        self.result_ = result
        self.mu_ = result.mu
        self.sigma_ = result.sigma
        self.sigma_uncertainty_ = result.sigma_uncertainty
        return self

    def summary(self):
        check_is_fitted(self, "result_")
        return {
            "mu": self.mu_,
            "sigma": self.sigma_,
            "sigma_uncertainty": self.sigma_uncertainty_,
            "n_bins": int(len(self.counts_)),
            "n_samples": int(self.counts_.sum()),
        }


@dataclass(frozen=True)
class ContinuityReport:
    grid: object
    R_e: np.ndarray
    R_n: np.ndarray
    fit_e: GaussianHistogramFitter
    fit_n: GaussianHistogramFitter

    @property
    def sigma_ratio(self):
        return self.fit_n.sigma_ / self.fit_e.sigma_


def continuity_report(N, wv, vm, omega, count_floor=COUNT_FLOOR, smoothing_sigma=0.0,
                      bins="fd", constants=DEFAULT_CONSTANTS):
    """Both residual maps plus Gaussian fits of their histograms."""
    if smoothing_sigma > 0:
        N = smooth_counts(N, wv.grid, smoothing_sigma)
    R_e = residual_relativistic(N, wv, omega, count_floor, constants)
    R_n = residual_nonrelativistic(N, vm, count_floor, constants)
    fit_e = GaussianHistogramFitter(bins).fit(R_e)
    fit_n = GaussianHistogramFitter(bins).fit(R_n)
    return ContinuityReport(wv.grid, R_e, R_n, fit_e, fit_n)
