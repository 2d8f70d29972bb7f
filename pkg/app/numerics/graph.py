"""
Tubular neighborhoods of a reference curve: nearest-point projection and the
description of nearby curves as normal graphs γ + Y over the reference.
"""
import logging
import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq
from scipy.spatial import cKDTree
from typing import Tuple

from app.config import LOGGER_NAME
from app.models.curve import DiscreteCurve, NormalField, TubularData
from app.numerics import geometry
from app.utils.error_handlers import FoldedGraphError, NewtonFailureError, OutsideTubeError

logger = logging.getLogger(LOGGER_NAME)

MAX_NEWTON_ITERATIONS = 50
NEWTON_TOL = 1e-12


def _double_critical_chord(curve: DiscreteCurve) -> float:
    """
    Shortest chord orthogonal to the curve at both ends, located on the
    grid as cells (i, j) where ⟨x_j − x_i, τ_j⟩ and ⟨x_i − x_j, τ_i⟩ both
    change sign. Pairs closer than N/8 along the curve are excluded.
    """
    points = curve.points
    tau = geometry.tangent(curve).values
    samples = curve.samples
    chords = points[None, :, :] - points[:, None, :]
    at_end = np.einsum("ijk,jk->ij", chords, tau)
    at_start = -np.einsum("ijk,ik->ij", chords, tau)
    distance = np.linalg.norm(chords, axis=2)

    shifts = [(0, 0), (1, 0), (0, 1), (1, 1)]
    corners_end = np.stack([np.roll(at_end, (-a, -b), axis=(0, 1)) for a, b in shifts])
    corners_start = np.stack([np.roll(at_start, (-a, -b), axis=(0, 1)) for a, b in shifts])
    corners_distance = np.stack([np.roll(distance, (-a, -b), axis=(0, 1)) for a, b in shifts])

    index = np.arange(samples)
    gap = np.abs(index[:, None] - index[None, :])
    gap = np.minimum(gap, samples - gap)
    candidates = (
        (corners_end.min(axis=0) <= 0) & (corners_end.max(axis=0) >= 0)
        & (corners_start.min(axis=0) <= 0) & (corners_start.max(axis=0) >= 0)
        & (gap >= samples // 8)
    )
    if not np.any(candidates):
        return np.inf

    # Representative corner: the most nearly double-critical one
    with np.errstate(divide="ignore", invalid="ignore"):
        score = (np.abs(corners_end) + np.abs(corners_start)) / corners_distance
    score = np.where(np.isfinite(score), score, np.inf)
    best = np.take_along_axis(corners_distance, np.argmin(score, axis=0)[None], axis=0)[0]
    return float(np.min(best[candidates]))


def tubular_radius(reference: DiscreteCurve) -> float:
    """
    ρ = 0.5·min(1/max|k|, half the shortest double-critical chord).

    For a circle of radius R both terms equal R, so ρ = R/2.
    """
    k = geometry.curvature(reference).values
    bound = 1.0 / float(np.max(np.linalg.norm(k, axis=1)))
    chord = _double_critical_chord(reference)
    radius = 0.5 * min(bound, 0.5 * chord)
    logger.debug(f"Tubular radius {radius:.6g} (curvature bound {bound:.6g}, chord {chord:.6g})")
    return radius


def tubular_data(reference: DiscreteCurve) -> TubularData:
    return TubularData(reference, tubular_radius(reference))


def _interpolant(reference: DiscreteCurve) -> geometry.TrigInterpolant:
    if "interpolant" not in reference._cache:
        reference._cache["interpolant"] = geometry.TrigInterpolant(reference.points)
    return reference._cache["interpolant"]


def _tree(reference: DiscreteCurve) -> cKDTree:
    if "tree" not in reference._cache:
        reference._cache["tree"] = cKDTree(reference.points)
    return reference._cache["tree"]


def project(tub: TubularData, x) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    Nearest-point projection of x onto the reference curve.

    Newton's method on g(θ) = ⟨x − γ(θ), γ'(θ)⟩ from the nearest sample,
    kept within ±π/4 of it; bisection on the same window if Newton fails.

    Returns:
        tuple: (θ*, foot γ(θ*), offset x − γ(θ*))

    Raises:
        OutsideTubeError: if |x − γ(θ*)| ≥ ρ.
        NewtonFailureError: if neither iteration locates the foot point.
    """
    x = np.asarray(x, dtype=float)
    reference = tub.reference
    if x.shape != (reference.dim,):
        raise ValueError(f"Point must have {reference.dim} coordinates, got shape {x.shape}")

    interpolant = _interpolant(reference)
    _, nearest = _tree(reference).query(x)
    start = reference.theta[nearest]
    window = np.pi / 4.0

    def g(theta: float) -> float:
        return float(np.dot(x - interpolant(theta), interpolant(theta, 1)))

    theta = start
    converged = False
    for _ in range(MAX_NEWTON_ITERATIONS):
        position = interpolant(theta)
        velocity = interpolant(theta, 1)
        value = float(np.dot(x - position, velocity))
        if abs(value) <= NEWTON_TOL:
            converged = True
            break
        slope = -float(np.dot(velocity, velocity)) + float(np.dot(x - position, interpolant(theta, 2)))
        if slope >= 0:
            break
        update = value / slope
        theta -= update
        if abs(theta - start) > window:
            break
        if abs(update) < 1e-14:
            converged = True
            break

    if not converged or abs(theta - start) > window:
        theta = _bisect(g, start, reference.spacing, window)

    foot = interpolant(theta)
    offset = x - foot
    distance = float(np.linalg.norm(offset))
    if distance >= tub.radius:
        raise OutsideTubeError(distance, tub.radius)
    return float(np.mod(theta, 2.0 * np.pi)), foot, offset


def _bisect(g, start: float, spacing: float, window: float) -> float:
    # Smallest bracket around the seed with a sign change of g
    for half in (spacing, 2.0 * spacing, window):
        low, high = start - half, start + half
        if g(low) * g(high) <= 0:
            return brentq(g, low, high, xtol=1e-15, maxiter=200)
    raise NewtonFailureError(
        "Nearest-point iteration did not converge",
        {"start": start, "window": window, "iterations": MAX_NEWTON_ITERATIONS}
    )


def normal_graph(tub: TubularData, sigma: DiscreteCurve) -> NormalField:
    """
    Normal field Y over the reference with σ = γ + Y up to reparametrization.

    Every sample of σ is projected; the foot angles must advance monotonically
    once around the reference. The offsets are interpolated back to the
    reference grid by a periodic cubic spline in the foot angle.

    Raises:
        OutsideTubeError: if a sample of σ leaves the tube.
        FoldedGraphError: if the induced parameter map is not monotone.
    """
    reference = tub.reference
    if sigma.dim != reference.dim:
        raise ValueError(f"Curves live in different dimensions: {sigma.dim} and {reference.dim}")

    feet = np.empty(sigma.samples)
    offsets = np.empty_like(sigma.points)
    for j, point in enumerate(sigma.points):
        feet[j], _, offsets[j] = project(tub, point)

    steps = np.mod(np.diff(np.append(feet, feet[0])), 2.0 * np.pi)
    if np.any(steps <= 0) or not np.isclose(np.sum(steps), 2.0 * np.pi, rtol=0, atol=1e-8):
        logger.warning(f"Folded graph: parameter map winds {np.sum(steps) / (2.0 * np.pi):.3f} times")
        raise FoldedGraphError(
            "Curve is not a normal graph over the reference",
            {"winding": float(np.sum(steps) / (2.0 * np.pi)), "min_step": float(np.min(steps))}
        )

    first = int(np.argmin(feet))
    order = np.roll(np.arange(sigma.samples), -first)
    knots = feet[first] + np.concatenate([[0.0], np.cumsum(steps[order][:-1]), [2.0 * np.pi]])
    values = np.vstack([offsets[order], offsets[order][:1]])
    spline = CubicSpline(knots, values, bc_type="periodic", axis=0)

    theta = knots[0] + np.mod(reference.theta - knots[0], 2.0 * np.pi)
    tau = geometry.tangent(reference).values
    return NormalField(geometry.project_normal(spline(theta), tau), reference)


def quotient_translation(curve: DiscreteCurve) -> DiscreteCurve:
    """Translate so that the ds-weighted barycenter is at the origin."""
    return curve.translated(-geometry.barycenter(curve))
