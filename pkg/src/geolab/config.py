"""Default tolerances and integrator settings."""

from dataclasses import dataclass, replace


@dataclass(frozen=True)
class Tolerances:
    surface: float = 1e-9        # |Q(x)| on accepted surface points
    gradient: float = 1e-10      # singular-gradient floor for |grad Q|
    tangent: float = 1e-8        # relative tangency of velocities
    drift_budget: float = 1e-8   # relative energy drift per 100 time units
    newton: float = 1e-9         # closed-orbit residual
    capture: float = 0.1         # Newton capture radius for orbit search
    t_max_return: float = 1e3    # Poincare return time cap


@dataclass(frozen=True)
class IntegratorSettings:
    rtol: float = 1e-11
    atol: float = 1e-12
    h0: float = 1e-3
    h_max: float = float("inf")
    max_steps: int = 5_000_000
    proj_tol: float = 1e-12
    renorm: bool = True

    def scaled(self, factor):
        return replace(self, rtol=self.rtol * factor, atol=self.atol * factor)

    def capped(self, h_max):
        return replace(self, h_max=min(self.h_max, h_max))


DEFAULT_TOL = Tolerances()
DEFAULT_INT = IntegratorSettings()
