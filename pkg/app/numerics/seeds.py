import logging
import numpy as np
from typing import Callable, Dict

from app.config import LOGGER_NAME
from app.models.curve import DiscreteCurve
from app.models.schemas import SEED_PARAMETERS, SeedSpec
from app.utils.error_handlers import DegenerateCurveError, InvalidSpecError

logger = logging.getLogger(LOGGER_NAME)


def _grid(spec: SeedSpec) -> np.ndarray:
    return 2.0 * np.pi * np.arange(spec.samples) / spec.samples


def _embed(planar: np.ndarray, dim: int) -> np.ndarray:
    points = np.zeros((planar.shape[0], dim))
    points[:, :2] = planar
    return points


def _positive(name: str, value: float) -> float:
    if not value > 0:
        raise InvalidSpecError(f"Seed parameter '{name}' must be positive", {name: value})
    return value


def _circle(spec: SeedSpec) -> np.ndarray:
    radius = _positive("radius", spec.params[0])
    theta = _grid(spec)
    return _embed(radius * np.column_stack([np.cos(theta), np.sin(theta)]), spec.dim)


def _ellipse(spec: SeedSpec) -> np.ndarray:
    a = _positive("a", spec.params[0])
    b = _positive("b", spec.params[1])
    theta = _grid(spec)
    return _embed(np.column_stack([a * np.cos(theta), b * np.sin(theta)]), spec.dim)


def _w_covered_circle(spec: SeedSpec) -> np.ndarray:
    radius = _positive("radius", spec.params[0])
    winding = spec.params[1]
    if winding != int(winding) or winding < 1:
        raise InvalidSpecError("Winding number must be a positive integer", {"winding": winding})
    if 2 * int(winding) >= spec.samples // 2:
        raise InvalidSpecError("Too few samples for this winding number", {"winding": winding, "samples": spec.samples})
    theta = int(winding) * _grid(spec)
    return _embed(radius * np.column_stack([np.cos(theta), np.sin(theta)]), spec.dim)


def _figure_eight(spec: SeedSpec) -> np.ndarray:
    scale = _positive("scale", spec.params[0])
    # Half-step shift keeps the double point off the grid
    theta = _grid(spec) + np.pi / spec.samples
    points = _embed(scale * np.column_stack([np.sin(theta), np.sin(theta) * np.cos(theta)]), spec.dim)
    if spec.dim >= 3:
        points[:, 2] = 0.1 * scale * np.cos(theta)
    return points


def _fourier_perturbed_circle(spec: SeedSpec) -> np.ndarray:
    radius = _positive("radius", spec.params[0])
    if not spec.modes or any(mode < 1 or mode >= spec.samples // 4 for mode in spec.modes):
        raise InvalidSpecError("Perturbed modes must lie in [1, N/4)", {"modes": spec.modes, "samples": spec.samples})

    rng = np.random.default_rng(spec.rng_seed)
    theta = _grid(spec)
    coefficients = rng.uniform(-1.0, 1.0, size=(len(spec.modes), 2))
    # Each mode gets amplitude at most `amplitude` in the radial profile
    profile = sum(
        a * np.cos(mode * theta) + b * np.sin(mode * theta)
        for mode, (a, b) in zip(spec.modes, coefficients)
    ) / np.sqrt(2.0)
    if spec.amplitude * len(spec.modes) >= 1.0:
        raise InvalidSpecError("Perturbation amplitude too large for a regular curve", {"amplitude": spec.amplitude})

    r = radius * (1.0 + spec.amplitude * profile)
    points = _embed(np.column_stack([r * np.cos(theta), r * np.sin(theta)]), spec.dim)
    if spec.dim >= 3:
        lift = rng.uniform(-1.0, 1.0, size=len(spec.modes))
        points[:, 2] = radius * spec.amplitude * sum(c * np.cos(mode * theta) for mode, c in zip(spec.modes, lift))
    return points


GENERATORS: Dict[str, Callable[[SeedSpec], np.ndarray]] = {
    "circle": _circle,
    "ellipse": _ellipse,
    "w_covered_circle": _w_covered_circle,
    "figure_eight": _figure_eight,
    "fourier_perturbed_circle": _fourier_perturbed_circle,
}


def seed_curve(spec: SeedSpec) -> DiscreteCurve:
    """
    Generate a seed curve.

    Raises:
        InvalidSpecError: for unknown kinds, wrong parameter counts or parameters
            that do not produce a regular curve.
    """
    expected = SEED_PARAMETERS.get(spec.kind)
    if expected is None:
        raise InvalidSpecError(f"Unknown seed kind '{spec.kind}'", {"kind": spec.kind})
    if len(spec.params) != len(expected):
        raise InvalidSpecError(
            f"Seed '{spec.kind}' expects parameters {', '.join(expected)}",
            {"kind": spec.kind, "params": spec.params}
        )

    points = GENERATORS[spec.kind](spec)
    try:
        curve = DiscreteCurve(points, scheme=spec.scheme)
    except (ValueError, DegenerateCurveError) as e:
        raise InvalidSpecError(f"Seed '{spec.kind}' does not give a regular curve: {e}", {"kind": spec.kind})

    logger.debug(f"Generated {spec.kind} seed with N={spec.samples}, n={spec.dim}")
    return curve
