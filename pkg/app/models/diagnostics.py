import numpy as np
from dataclasses import dataclass, field
from typing import List, Tuple

from app.utils.error_handlers import NegativeGapError

# Most negative energy gap attributed to round-off
GAP_FLOOR = -1e-12


@dataclass
class LojaTrace:
    """
    Time series for Łojasiewicz diagnostics: energy gap E(γ_t) − E_ref, dual
    gradient norm, L²(dθ) velocity norm and length at increasing times.
    """
    t: np.ndarray
    energy_gap: np.ndarray
    dual_grad_norm: np.ndarray
    vel_l2dtheta: np.ndarray
    length: np.ndarray
    e_ref: float = 0.0

    def __post_init__(self):
        """Validate shapes, time ordering and the sign of the energy gap."""
        for name in ("t", "energy_gap", "dual_grad_norm", "vel_l2dtheta", "length"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))

        size = self.t.shape[0]
        if any(getattr(self, name).shape != (size,) for name in ("energy_gap", "dual_grad_norm", "vel_l2dtheta", "length")):
            raise ValueError("Trace columns must be one-dimensional and of equal length")

        if size > 1 and np.any(np.diff(self.t) <= 0):
            raise ValueError("Trace times must be strictly increasing")

        if size and np.min(self.energy_gap) < GAP_FLOOR:
            worst = int(np.argmin(self.energy_gap))
            raise NegativeGapError(
                "Energy gap is negative",
                {"t": float(self.t[worst]), "gap": float(self.energy_gap[worst])}
            )

    def __len__(self) -> int:
        return self.t.shape[0]

    def is_dissipative(self, tol: float = 1e-12) -> bool:
        """Energy gap non-increasing and non-negative within tol."""
        return bool(np.all(np.diff(self.energy_gap) <= tol) and np.all(self.energy_gap >= -tol))


@dataclass
class LojaFit:
    """
    Fitted exponent and constant of |E − E_ref|^{1−α} ≤ C‖δE‖ over a gap window.
    """
    alpha: float
    C: float
    window: Tuple[float, float]
    residual: float
    violations: int
    points: int
    slope: float
    c_envelope: float

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("Fitted alpha must lie in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "C": self.C,
            "window": list(self.window),
            "residual": self.residual,
            "violations": self.violations,
            "points": self.points,
            "slope": self.slope,
            "c_envelope": self.c_envelope,
        }


@dataclass
class CauchyReport:
    """L²(dθ) distances between normal-graph representations of flow snapshots."""
    times: List[float] = field(default_factory=list)
    consecutive: np.ndarray = field(default_factory=lambda: np.zeros(0))
    tail_sup: np.ndarray = field(default_factory=lambda: np.zeros(0))
    tail_decreasing: bool = True
