import numpy as np
from uuid import uuid4
from functools import cached_property
from dataclasses import dataclass, field
from typing import Optional

from app.config import ACTIVE_DIFF_SCHEME, DiffScheme, MIN_SAMPLES, TOL_PERP
from app.utils.error_handlers import ShapeMismatchError, NotNormalError


def _as_readonly(values, ndim: int, name: str) -> np.ndarray:
    array = np.array(values, dtype=float)
    if array.ndim != ndim:
        raise ValueError(f"{name} must be a {ndim}-dimensional array, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} must contain only finite values")
    array.setflags(write=False)
    return array


@dataclass(eq=False)
class DiscreteCurve:
    """
    A closed curve in R^n sampled on the uniform periodic grid θ_i = 2πi/N.

    Attributes:
        points (np.ndarray): N×n sample positions, no duplicated endpoint
        scheme (DiffScheme): differentiation scheme used for every derivative along the curve
        curve_id (str): identity recorded by the fields attached to this curve
    """
    points: np.ndarray
    scheme: DiffScheme = ACTIVE_DIFF_SCHEME
    # Auto-generated identity
    curve_id: str = field(default_factory=lambda: str(uuid4()))
    # Derived quantities (tangent, speed) memoized by the geometry kernel
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        """Validate the samples and the regularity of the curve."""
        self.points = _as_readonly(self.points, 2, "Curve points")
        samples, dim = self.points.shape

        if dim < 2:
            raise ValueError("Curve dimension must be at least 2")

        if samples < MIN_SAMPLES:
            raise ValueError(f"Curve must have at least {MIN_SAMPLES} samples, got {samples}")

        if samples % 2:
            raise ValueError(f"Curve sample count must be even, got {samples}")

        if not isinstance(self.scheme, DiffScheme):
            self.scheme = DiffScheme(self.scheme)

        # Raises DegenerateCurveError when |γ'| vanishes somewhere
        from app.numerics.geometry import check_regular
        check_regular(self)

    @property
    def samples(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def spacing(self) -> float:
        """Grid step Δθ = 2π/N."""
        return 2.0 * np.pi / self.samples

    @cached_property
    def theta(self) -> np.ndarray:
        return self.spacing * np.arange(self.samples)

    def with_points(self, points) -> 'DiscreteCurve':
        """Create a new curve on the same grid and with the same scheme."""
        return DiscreteCurve(points, scheme=self.scheme)

    def translated(self, offset) -> 'DiscreteCurve':
        return self.with_points(self.points + np.asarray(offset, dtype=float))

    def to_dict(self) -> dict:
        """Convert the curve to the curve-file dictionary."""
        return {
            "dim": self.dim,
            "samples": self.samples,
            "points": self.points.tolist()
        }

    @classmethod
    def from_dict(cls, data: dict, scheme: Optional[DiffScheme] = None) -> 'DiscreteCurve':
        """Create a curve from a curve-file dictionary."""
        points = np.array(data["points"], dtype=float)
        if points.ndim != 2 or points.shape != (int(data["samples"]), int(data["dim"])):
            raise ValueError(
                f"Curve header (samples={data['samples']}, dim={data['dim']}) "
                f"does not match points of shape {points.shape}"
            )
        return cls(points, scheme=scheme or ACTIVE_DIFF_SCHEME)


@dataclass(eq=False)
class ScalarField:
    """A real function sampled along a curve."""
    values: np.ndarray
    curve: DiscreteCurve

    def __post_init__(self):
        self.values = _as_readonly(self.values, 1, "Scalar field values")
        if self.values.shape[0] != self.curve.samples:
            raise ShapeMismatchError(
                "Scalar field length does not match its curve",
                {"field": self.values.shape[0], "curve": self.curve.samples}
            )

    @property
    def curve_id(self) -> str:
        return self.curve.curve_id


@dataclass(eq=False)
class VectorField:
    """A vector field along a curve: one R^n vector per sample."""
    values: np.ndarray
    curve: DiscreteCurve

    def __post_init__(self):
        self.values = _as_readonly(self.values, 2, "Vector field values")
        if self.values.shape != self.curve.points.shape:
            raise ShapeMismatchError(
                "Vector field shape does not match its curve",
                {"field": list(self.values.shape), "curve": list(self.curve.points.shape)}
            )

    @property
    def curve_id(self) -> str:
        return self.curve.curve_id

    def to_dict(self) -> dict:
        return {
            "dim": self.curve.dim,
            "samples": self.curve.samples,
            "values": self.values.tolist()
        }


@dataclass(eq=False)
class NormalField(VectorField):
    """
    A vector field with no tangential component:
    |⟨X_i, τ_i⟩| ≤ tol_perp·|X_i| at every sample.
    """
    tol_perp: float = TOL_PERP

    def __post_init__(self):
        super().__post_init__()
        from app.numerics.geometry import tangent

        tau = tangent(self.curve).values
        along = np.abs(np.einsum("ij,ij->i", self.values, tau))
        norms = np.linalg.norm(self.values, axis=1)
        # Round-off floor for fields that vanish up to projection error
        floor = 16.0 * np.finfo(float).eps * max(1.0, float(np.max(norms)))
        bound = self.tol_perp * norms
        violations = along > np.maximum(bound, floor)
        if np.any(violations):
            worst = int(np.argmax(along - bound))
            raise NotNormalError(
                "Field has a tangential component",
                {"sample": worst, "tangential": float(along[worst]), "tol_perp": self.tol_perp}
            )


@dataclass(eq=False)
class TubularData:
    """
    A reference curve together with a radius ρ inside which every point has a
    unique orthogonal projection onto the curve.
    """
    reference: DiscreteCurve
    radius: float

    def __post_init__(self):
        if not np.isfinite(self.radius) or self.radius <= 0:
            raise ValueError(f"Tubular radius must be positive, got {self.radius}")
