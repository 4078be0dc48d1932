from abc import ABC, abstractmethod

import numpy as np

from tubeshell.core.errors import DomainError


class ProfileCurve(ABC):
    """Base class for all generating profiles Psi(s) on [0, l].

    To add a new profile family:
    1. Create a new class inheriting from ProfileCurve.
    2. Implement `length` and `evaluate` for orders 0 to 3.
    3. Register the family in core/profile_manager.py.
    """

    @property
    @abstractmethod
    def length(self) -> float:
        """The profile length l in the s variable."""
        pass

    @abstractmethod
    def evaluate(self, s, nu: int = 0) -> np.ndarray:
        """Return the nu-th derivative of Psi at s (nu in 0..3)."""
        pass

    def __call__(self, s, nu: int = 0) -> np.ndarray:
        if nu not in (0, 1, 2, 3):
            raise DomainError(f"derivative order {nu} not supported")
        return self.evaluate(np.asarray(s, dtype=float), nu)

    def derivatives(self, s):
        """(Psi, Psi', Psi'', Psi''') at s."""
        return tuple(self(s, nu) for nu in range(4))

    @property
    def max_radius(self) -> float:
        samples = np.linspace(0.0, self.length, 1025)
        return float(np.max(self(samples)))

    @property
    def min_radius(self) -> float:
        samples = np.linspace(0.0, self.length, 1025)
        return float(np.min(self(samples)))
