"""Rectangular (x, z) sampling lattice.

All gridded arrays in the package have shape ``(nz, nx)`` and are indexed
``[j, i]`` so that the row-major site index ``j * nx + i`` follows the scan
order of the translation stage (x fastest).
"""

from dataclasses import dataclass

import numpy as np

from ._validation import check_finite_scalar, check_positive
from .exceptions import ValidationError


@dataclass(frozen=True)
class ScanGrid:
    x0: float = -9e-6
    z0: float = -9e-6
    dx: float = 100e-9
    dz: float = 400e-9
    nx: int = 181
    nz: int = 46

    def __post_init__(self):
        check_finite_scalar(self.x0, "x0")
        check_finite_scalar(self.z0, "z0")
        check_positive(self.dx, "dx")
        check_positive(self.dz, "dz")
        for name in ("nx", "nz"):
            n = getattr(self, name)
            if int(n) != n or n < 2:
                raise ValidationError(f"{name} must be an integer >= 2, got {n}")

    @classmethod
    def centered(cls, half_width_x, half_width_z, dx, dz):
        """Grid spanning [-half_width, +half_width] on both axes."""
        nx = int(round(2 * half_width_x / dx)) + 1
        nz = int(round(2 * half_width_z / dz)) + 1
        return cls(-half_width_x, -half_width_z, dx, dz, nx, nz)

    @property
    def shape(self):
        return (self.nz, self.nx)

    @property
    def size(self):
        return self.nx * self.nz

    @property
    def xs(self):
        return self.x0 + self.dx * np.arange(self.nx)

    @property
    def zs(self):
        return self.z0 + self.dz * np.arange(self.nz)

    @property
    def x_max(self):
        return self.x0 + self.dx * (self.nx - 1)

    @property
    def z_max(self):
        return self.z0 + self.dz * (self.nz - 1)

    def site(self, i, j):
        return (self.x0 + i * self.dx, self.z0 + j * self.dz)

    def mesh(self):
        """Return (X, Z) coordinate arrays of shape (nz, nx)."""
        return np.meshgrid(self.xs, self.zs, indexing="xy")

    def flat_coordinates(self):
        """Site coordinates in scan order, each of length nx*nz."""
        X, Z = self.mesh()
        return X.ravel(), Z.ravel()

    def contains(self, x, z, tol=0.0):
        pad_x = tol * self.dx
        pad_z = tol * self.dz
        return (
            self.x0 - pad_x <= x <= self.x_max + pad_x
            and self.z0 - pad_z <= z <= self.z_max + pad_z
        )

    def refined(self, factor=2):
        """Same window sampled ``factor`` times more finely on both axes."""
        return ScanGrid(
            self.x0,
            self.z0,
            self.dx / factor,
            self.dz / factor,
            (self.nx - 1) * factor + 1,
            (self.nz - 1) * factor + 1,
        )
