"""Physical constants and reporting conventions.

Solvers work in SI throughout. Conversion to natural units (velocities in
units of c, squared masses in units of (hbar*omega0)^2) happens only when
results are reported.
"""

import math
from dataclasses import dataclass

from ._validation import check_positive

SPEED_OF_LIGHT = 299_792_458.0
REDUCED_PLANCK = 1.054_571_817e-34


@dataclass(frozen=True)
class PhysicalConstants:
    speed_of_light: float = SPEED_OF_LIGHT
    reduced_planck: float = REDUCED_PLANCK
    natural_units: bool = True

    def __post_init__(self):
        check_positive(self.speed_of_light, "speed_of_light")
        check_positive(self.reduced_planck, "reduced_planck")

    def angular_frequency(self, wavelength):
        """Vacuum angular frequency (rad/s) for a wavelength in metres."""
        return 2.0 * math.pi * self.speed_of_light / wavelength

    def wavenumber(self, wavelength):
        return 2.0 * math.pi / wavelength


DEFAULT_CONSTANTS = PhysicalConstants()
