"""
Discrete closed-curve kernel.

Every quantity lives on the uniform periodic grid θ_i = 2πi/N. Derivatives in θ
are taken either with the periodic fourth-order centered stencil or
spectrally, depending on the scheme recorded on the curve; arclength
derivatives divide by |γ'| pointwise and integrals use the periodic
trapezoid rule with weights |γ'(θ_i)|·2π/N.
"""
import logging
import numpy as np
from scipy import fft
from typing import Union

from app.config import DiffScheme, EPS_REG, LOGGER_NAME, MIN_SAMPLES
from app.models.curve import DiscreteCurve, NormalField, ScalarField, VectorField
from app.utils.error_handlers import DegenerateCurveError, NotNormalError, ShapeMismatchError

logger = logging.getLogger(LOGGER_NAME)

Field = Union[ScalarField, VectorField]

# Centered periodic stencils of order four
_FD4_FIRST = {-2: 1.0 / 12.0, -1: -8.0 / 12.0, 1: 8.0 / 12.0, 2: -1.0 / 12.0}
_FD4_FOURTH = {-3: -1.0 / 6.0, -2: 2.0, -1: -13.0 / 2.0, 0: 28.0 / 3.0, 1: -13.0 / 2.0, 2: 2.0, 3: -1.0 / 6.0}


def wavenumbers(samples: int) -> np.ndarray:
    """Integer Fourier modes in numpy FFT order: 0, 1, …, N/2−1, −N/2, …, −1."""
    return np.fft.fftfreq(samples, d=1.0 / samples)


def _apply_stencil(values: np.ndarray, stencil: dict) -> np.ndarray:
    result = np.zeros_like(values)
    for offset, weight in stencil.items():
        # np.roll by -offset brings f_{i+offset} to position i
        result += weight * np.roll(values, -offset, axis=0)
    return result


def theta_derivative(values: np.ndarray, scheme: DiffScheme, order: int = 1) -> np.ndarray:
    """
    Periodic derivative ∂_θ^order of samples along axis 0.

    Args:
        values (np.ndarray): samples of shape (N,) or (N, n).
        scheme (DiffScheme): FD4 stencil or spectral differentiation.
        order (int): derivative order.

    Returns:
        np.ndarray: derivative samples with the shape of `values`.
    """
    values = np.asarray(values, dtype=float)
    samples = values.shape[0]
    if scheme is DiffScheme.SPECTRAL:
        modes = wavenumbers(samples)
        symbol = (1j * modes) ** order
        if order % 2:
            # Odd derivatives of the Nyquist mode are not representable on the grid
            symbol[samples // 2] = 0.0
        shape = (samples,) + (1,) * (values.ndim - 1)
        return np.real(fft.ifft(symbol.reshape(shape) * fft.fft(values, axis=0), axis=0))

    step = 2.0 * np.pi / samples
    result = values
    for _ in range(order):
        result = _apply_stencil(result, _FD4_FIRST) / step
    return result


def fourth_derivative_column(samples: int, scheme: DiffScheme) -> np.ndarray:
    """First column of the circulant matrix of ∂_θ⁴ on the grid."""
    if scheme is DiffScheme.SPECTRAL:
        return np.real(fft.ifft(wavenumbers(samples) ** 4))
    step = 2.0 * np.pi / samples
    column = np.zeros(samples)
    for offset, weight in _FD4_FOURTH.items():
        column[offset % samples] += weight
    return column / step ** 4


def _theta_velocity(curve: DiscreteCurve) -> np.ndarray:
    if "velocity" not in curve._cache:
        velocity = theta_derivative(curve.points, curve.scheme)
        velocity.setflags(write=False)
        curve._cache["velocity"] = velocity
    return curve._cache["velocity"]


def speed(curve: DiscreteCurve) -> np.ndarray:
    """|γ'(θ_i)| at every sample."""
    return np.linalg.norm(_theta_velocity(curve), axis=1)


def check_regular(curve: DiscreteCurve) -> None:
    """Raise DegenerateCurveError unless min_i |γ'(θ_i)| ≥ eps_reg."""
    velocity = speed(curve)
    slowest = int(np.argmin(velocity))
    if velocity[slowest] < EPS_REG:
        raise DegenerateCurveError(
            "Curve is not regular",
            {"sample": slowest, "speed": float(velocity[slowest]), "eps_reg": EPS_REG}
        )


def ds_weights(curve: DiscreteCurve) -> np.ndarray:
    """Quadrature weights |γ'(θ_i)|·2π/N of the arclength measure."""
    return speed(curve) * curve.spacing


def project_normal(values: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """Remove the component along the unit tangent τ at every sample."""
    return values - np.einsum("ij,ij->i", values, tau)[:, None] * tau


def _values(field_or_array) -> np.ndarray:
    return field_or_array.values if isinstance(field_or_array, (ScalarField, VectorField)) else np.asarray(field_or_array, dtype=float)


def _check_attached(field: Field, curve: DiscreteCurve) -> None:
    if field.curve is not curve and field.values.shape[0] != curve.samples:
        raise ShapeMismatchError(
            "Field is not attached to this curve",
            {"field_samples": field.values.shape[0], "curve_samples": curve.samples}
        )


def tangent(curve: DiscreteCurve) -> VectorField:
    """Unit tangent τ = γ'/|γ'|."""
    derivative = _theta_velocity(curve)
    velocity = np.linalg.norm(derivative, axis=1)
    if np.min(velocity) < EPS_REG:
        raise DegenerateCurveError("Curve is not regular", {"speed": float(np.min(velocity)), "eps_reg": EPS_REG})
    return VectorField(derivative / velocity[:, None], curve)


def arclength_derivative(values: np.ndarray, curve: DiscreteCurve) -> np.ndarray:
    """∂_s = |γ'|^{-1} ∂_θ applied to raw samples."""
    derivative = theta_derivative(values, curve.scheme)
    velocity = speed(curve)
    if np.min(velocity) < EPS_REG:
        raise DegenerateCurveError("Curve is not regular", {"speed": float(np.min(velocity)), "eps_reg": EPS_REG})
    if derivative.ndim == 1:
        return derivative / velocity
    return derivative / velocity[:, None]


def deriv_s(field: Field, curve: DiscreteCurve) -> Field:
    """Arclength derivative of a scalar or vector field; the result is a field of the same kind."""
    _check_attached(field, curve)
    derivative = arclength_derivative(field.values, curve)
    if isinstance(field, ScalarField):
        return ScalarField(derivative, curve)
    return VectorField(derivative, curve)


def curvature(curve: DiscreteCurve) -> NormalField:
    """Curvature vector k = ∂_s τ, projected onto the normal space."""
    tau = tangent(curve).values
    k = arclength_derivative(tau, curve)
    return NormalField(project_normal(k, tau), curve)


def normal_part(field: VectorField, curve: DiscreteCurve) -> NormalField:
    """X⊥ = X − ⟨X, τ⟩τ."""
    _check_attached(field, curve)
    return NormalField(project_normal(field.values, tangent(curve).values), curve)


def nabla_perp(field: VectorField, curve: DiscreteCurve) -> NormalField:
    """
    Normal connection ∇⊥X = ∂_sX − ⟨∂_sX, τ⟩τ of a normal field.

    Raises:
        NotNormalError: if `field` has a tangential component.
    """
    _check_attached(field, curve)
    tau = tangent(curve).values
    if not isinstance(field, NormalField):
        # Validates the invariant, raising NotNormalError on violation
        NormalField(field.values, curve)
    return NormalField(project_normal(arclength_derivative(field.values, curve), tau), curve)


def nabla_perp_power(field: NormalField, curve: DiscreteCurve, power: int) -> NormalField:
    """(∇⊥)^power X."""
    result = field
    for _ in range(power):
        result = nabla_perp(result, curve)
    return result


def integrate_ds(field: ScalarField, curve: DiscreteCurve) -> float:
    """∫ f ds by the periodic trapezoid rule."""
    _check_attached(field, curve)
    return float(np.dot(field.values, ds_weights(curve)))


def length(curve: DiscreteCurve) -> float:
    return float(np.sum(ds_weights(curve)))


def _pointwise_dot(X, Y) -> np.ndarray:
    x, y = _values(X), _values(Y)
    if x.shape != y.shape:
        raise ShapeMismatchError("Fields have different shapes", {"X": list(x.shape), "Y": list(y.shape)})
    return x * y if x.ndim == 1 else np.einsum("ij,ij->i", x, y)


def inner_l2ds(X, Y, curve: DiscreteCurve) -> float:
    """⟨X, Y⟩ in L²(ds)."""
    products = _pointwise_dot(X, Y)
    if products.shape[0] != curve.samples:
        raise ShapeMismatchError("Fields do not match the curve", {"field": products.shape[0], "curve": curve.samples})
    return float(np.dot(products, ds_weights(curve)))


def inner_l2dtheta(X, Y) -> float:
    """⟨X, Y⟩ in L²(dθ)."""
    products = _pointwise_dot(X, Y)
    return float(np.sum(products) * 2.0 * np.pi / products.shape[0])


def norm_l2ds(X, curve: DiscreteCurve) -> float:
    return float(np.sqrt(max(inner_l2ds(X, X, curve), 0.0)))


def norm_l2dtheta(X) -> float:
    return float(np.sqrt(max(inner_l2dtheta(X, X), 0.0)))


class TrigInterpolant:
    """
    Trigonometric interpolant of periodic samples, evaluable (with
    derivatives) at arbitrary angles. The Nyquist mode is split evenly
    between ±N/2 so the interpolant is real.
    """

    def __init__(self, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        self.samples = values.shape[0]
        self.trailing = values.shape[1:]
        coefficients = fft.fft(values, axis=0) / self.samples
        modes = wavenumbers(self.samples)
        nyquist = self.samples // 2
        coefficients[nyquist] *= 0.5
        self.modes = np.concatenate([modes, [float(nyquist)]])
        self.coefficients = np.concatenate([coefficients, coefficients[nyquist:nyquist + 1]], axis=0)

    def __call__(self, theta, derivative: int = 0) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        scalar = theta.ndim == 0
        phases = np.exp(1j * np.outer(np.atleast_1d(theta), self.modes))
        weights = (1j * self.modes) ** derivative
        coefficients = self.coefficients * weights.reshape((-1,) + (1,) * len(self.trailing))
        result = np.real(phases @ coefficients.reshape(self.modes.shape[0], -1))
        result = result.reshape((phases.shape[0],) + self.trailing)
        return result[0] if scalar else result

    def antiderivative(self, theta) -> np.ndarray:
        """∫_0^θ of a scalar interpolant."""
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        mean = np.real(self.coefficients[0])
        modes = self.modes[1:]
        phases = (np.exp(1j * np.outer(theta, modes)) - 1.0) / (1j * modes)
        return mean * theta + np.real(phases @ self.coefficients[1:])


def resample(curve: DiscreteCurve, samples: int) -> DiscreteCurve:
    """
    Trigonometric interpolation of a curve onto a uniform grid of a new size.

    Raises:
        ValueError: if the new size is odd or below the minimum.
        DegenerateCurveError: if the resampled curve is not regular.
    """
    if samples < MIN_SAMPLES or samples % 2:
        raise ValueError(f"Resampling target must be even and at least {MIN_SAMPLES}, got {samples}")
    if samples == curve.samples:
        return curve.with_points(curve.points)

    old = curve.samples
    spectrum = fft.fft(curve.points, axis=0) / old
    resampled = np.zeros((samples, curve.dim), dtype=complex)
    keep = min(old, samples) // 2
    resampled[:keep] = spectrum[:keep]
    resampled[samples - keep + 1:] = spectrum[old - keep + 1:]
    if samples > old:
        # Old Nyquist mode is split between ±N/2 of the finer grid
        resampled[keep] = 0.5 * spectrum[keep]
        resampled[samples - keep] = 0.5 * spectrum[keep]
    else:
        # New Nyquist mode collects both ±N'/2 of the finer grid
        resampled[keep] = spectrum[keep] + spectrum[old - keep]
    points = np.real(fft.ifft(resampled * samples, axis=0))
    logger.debug(f"Resampled curve from {old} to {samples} samples")
    return curve.with_points(points)


def barycenter(curve: DiscreteCurve) -> np.ndarray:
    """ds-weighted mean of the samples, ∫γ ds / L."""
    weights = ds_weights(curve)
    return weights @ curve.points / np.sum(weights)
