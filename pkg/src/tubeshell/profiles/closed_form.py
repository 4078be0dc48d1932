import numpy as np
from numpy.polynomial import Polynomial

from tubeshell.core.errors import DomainError
from tubeshell.profiles.base import ProfileCurve


class CosineProfile(ProfileCurve):
    """Psi(s) = a + A cos(2 pi s / l).

    Satisfies Psi' = Psi''' = 0 at both ends and, for 0 < A < a, has a neck at
    s = l/2 where the pattern criterion holds with margin A (2 pi / l)^2 (a - A).
    A = 0 gives the straight cylinder of radius a.
    """

    def __init__(self, a: float = 1.0, amplitude: float = 0.5, length: float = 1.0):
        if length <= 0:
            raise DomainError("profile length must be positive")
        if a - abs(amplitude) <= 0:
            raise DomainError("cosine profile needs a > |A| so that Psi > 0")
        self.a = float(a)
        self.amplitude = float(amplitude)
        self._length = float(length)

    @property
    def length(self) -> float:
        return self._length

    def evaluate(self, s, nu=0):
        k = 2.0 * np.pi / self._length
        x = k * s
        A = self.amplitude
        if nu == 0:
            return self.a + A * np.cos(x)
        if nu == 1:
            return -A * k * np.sin(x)
        if nu == 2:
            return -A * k**2 * np.cos(x)
        return A * k**3 * np.sin(x)

    @property
    def max_radius(self) -> float:
        return self.a + abs(self.amplitude)

    @property
    def min_radius(self) -> float:
        return self.a - abs(self.amplitude)

    def __repr__(self):
        return f"CosineProfile(a={self.a!r}, A={self.amplitude!r}, l={self._length!r})"


class PolynomialProfile(ProfileCurve):
    """Psi given by a polynomial in s (coefficients in increasing degree)."""

    def __init__(self, coefficients, length: float = 1.0):
        if length <= 0:
            raise DomainError("profile length must be positive")
        self.polynomial = Polynomial(coefficients)
        self._derivs = [self.polynomial.deriv(m) if m else self.polynomial for m in range(4)]
        self._length = float(length)

    @property
    def length(self) -> float:
        return self._length

    def evaluate(self, s, nu=0):
        return self._derivs[nu](s)
