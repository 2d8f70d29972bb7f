"""
Elastic energy E_λ(γ) = ∫ λ + |k|²/2 ds, its L²(ds) gradient and the
second-variation machinery on normal fields.

Operators are assembled on the pointwise normal-frame basis: basis field
(i, β) equals ν_i^β at sample i and vanishes elsewhere, so the L²(ds) Gram
matrix of the basis is the diagonal of ds weights.
"""
import logging
import numpy as np
import scipy.linalg
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Tuple

from app.config import LOGGER_NAME, MAX_THREADS
from app.models.curve import DiscreteCurve, NormalField, ScalarField, VectorField
from app.models.operators import NormalBasis, OperatorMatrix
from app.models.schemas import EnergyParams
from app.numerics import geometry
from app.utils.error_handlers import ShapeMismatchError

logger = logging.getLogger(LOGGER_NAME)

# Relative step of the Hessian differences: h = HESSIAN_STEP·(1 + ‖γ‖∞), divided by m² on mode m
HESSIAN_STEP = 1e-4
# Mode fields with m ≤ KERNEL_REFERENCE_MODE set the scale of the kernel threshold
KERNEL_REFERENCE_MODE = 4
KERNEL_REL_TOL = 1e-4


def elastic_energy(curve: DiscreteCurve, params: EnergyParams) -> float:
    """∫ λ + |k|²/2 ds."""
    k = geometry.curvature(curve).values
    density = params.lam + 0.5 * np.einsum("ij,ij->i", k, k)
    return geometry.integrate_ds(ScalarField(density, curve), curve)


def gradient(curve: DiscreteCurve, params: EnergyParams) -> NormalField:
    """
    L²(ds) gradient G = ∇⊥∇⊥k + |k|²k/2 − λk of the elastic energy.

    Raises:
        DegenerateCurveError: if the curve is not regular.
    """
    k = geometry.curvature(curve)
    second = geometry.nabla_perp_power(k, curve, 2).values
    squared = np.einsum("ij,ij->i", k.values, k.values)
    values = second + (0.5 * squared - params.lam)[:, None] * k.values
    tau = geometry.tangent(curve).values
    return NormalField(geometry.project_normal(values, tau), curve)


def first_variation(curve: DiscreteCurve, field: VectorField, params: EnergyParams) -> float:
    """δE(X) = ⟨G, X⊥⟩ in L²(ds); the tangential part of X does not contribute."""
    normal = geometry.normal_part(field, curve)
    return geometry.inner_l2ds(gradient(curve, params), normal, curve)


def fd_directional(curve: DiscreteCurve, field: VectorField, params: EnergyParams, h: float = 1e-5) -> float:
    """
    Central difference [E(γ + hX) − E(γ − hX)] / 2h.

    Raises:
        ValueError: if h is not positive.
        DegenerateCurveError: if a perturbed curve is not regular.
    """
    if h <= 0:
        raise ValueError(f"Finite-difference step must be positive, got {h}")
    if field.values.shape != curve.points.shape:
        raise ShapeMismatchError(
            "Field does not match the curve",
            {"field": list(field.values.shape), "curve": list(curve.points.shape)}
        )
    forward = elastic_energy(curve.with_points(curve.points + h * field.values), params)
    backward = elastic_energy(curve.with_points(curve.points - h * field.values), params)
    return (forward - backward) / (2.0 * h)


def random_smooth_field(curve: DiscreteCurve, rng: np.random.Generator, modes: int = 4, normal: bool = True) -> VectorField:
    """A random trigonometric field with Fourier modes up to `modes`, unit sup-norm."""
    theta = curve.theta
    values = np.zeros_like(curve.points)
    for mode in range(modes + 1):
        a, b = rng.standard_normal((2, curve.dim)) / (1.0 + mode) ** 2
        values += np.outer(np.cos(mode * theta), a) + np.outer(np.sin(mode * theta), b)
    values /= np.max(np.abs(values))
    field = VectorField(values, curve)
    return geometry.normal_part(field, curve) if normal else field


def gradient_check(curve: DiscreteCurve, params: EnergyParams, fields: int = 20,
                   rng_seed: int = 0, step: float = 1e-5) -> Dict[str, float]:
    """
    Compare first_variation against fd_directional on random smooth normal fields.

    A probe passes when |δE − fd| ≤ max(1e-5·|fd|, 1e-8).

    Returns:
        dict: max_rel_mismatch, passed and probes.
    """
    rng = np.random.default_rng(rng_seed)
    worst, passed = 0.0, True
    for _ in range(fields):
        field = random_smooth_field(curve, rng)
        exact = first_variation(curve, field, params)
        approx = fd_directional(curve, field, params, step)
        mismatch = abs(exact - approx)
        passed = passed and mismatch <= max(1e-5 * abs(approx), 1e-8)
        worst = max(worst, mismatch / max(abs(approx), 1e-3))
    logger.info(f"Gradient check on {fields} fields: max relative mismatch {worst:.3e}")
    return {"max_rel_mismatch": worst, "passed": passed, "probes": fields}


def normal_frame(curve: DiscreteCurve) -> np.ndarray:
    """
    Orthonormal frames {ν_i^1, …, ν_i^{n−1}} of the normal spaces, shape N×(n−1)×n.

    In the plane ν = Jτ (τ rotated by +90°). In higher dimension the frame
    at sample 0 comes from Gram–Schmidt of the ambient axes against τ_0 and is
    carried along the curve by projecting the previous frame onto the next
    normal space and re-orthonormalizing.
    """
    tau = geometry.tangent(curve).values
    samples, dim = tau.shape
    if dim == 2:
        rotated = np.stack([-tau[:, 1], tau[:, 0]], axis=1)
        return rotated[:, None, :]

    frame = np.zeros((samples, dim - 1, dim))
    # Axes least aligned with τ_0 first
    axes = np.eye(dim)[np.argsort(np.abs(tau[0]))]
    frame[0] = _orthonormalize(axes, tau[0])[: dim - 1]
    for i in range(1, samples):
        frame[i] = _orthonormalize(frame[i - 1], tau[i])
    return frame


def _orthonormalize(vectors: np.ndarray, tau: np.ndarray) -> np.ndarray:
    basis: List[np.ndarray] = []
    for vector in vectors:
        v = vector - np.dot(vector, tau) * tau
        for u in basis:
            v = v - np.dot(v, u) * u
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            basis.append(v / norm)
    return np.array(basis)


def normal_basis(curve: DiscreteCurve) -> NormalBasis:
    return NormalBasis(curve, normal_frame(curve))


def basis_weights(basis: NormalBasis) -> np.ndarray:
    """ds weights of the basis fields: w_i repeated n−1 times."""
    return np.repeat(geometry.ds_weights(basis.curve), basis.frame.shape[1])


def grid_modes(samples: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Real Fourier basis of grid functions and its wavenumbers.

    Columns are 1, then cos mθ and sin mθ for 1 ≤ m < N/2, then the sawtooth
    (−1)^i with wavenumber N/2. The columns are orthogonal on the grid.
    """
    theta = 2.0 * np.pi * np.arange(samples) / samples
    columns = [np.ones(samples)]
    numbers = [0]
    for m in range(1, samples // 2):
        columns += [np.cos(m * theta), np.sin(m * theta)]
        numbers += [m, m]
    columns.append(np.where(np.arange(samples) % 2, -1.0, 1.0))
    numbers.append(samples // 2)
    return np.column_stack(columns), np.array(numbers)


def mode_fields(basis: NormalBasis) -> Tuple[np.ndarray, np.ndarray]:
    """
    Coefficients of the mode fields φ_m(θ)·ν^β on the pointwise basis, one
    column per (mode, β), and the wavenumber of each column.
    """
    rank = basis.frame.shape[1]
    table, numbers = grid_modes(basis.curve.samples)
    return np.kron(table, np.eye(rank)), np.repeat(numbers, rank)


def _weighted_components(points: np.ndarray, curve: DiscreteCurve, basis: NormalBasis, params: EnergyParams) -> np.ndarray:
    # δE of the perturbed curve along each (fixed) basis field
    perturbed = curve.with_points(points)
    values = gradient(perturbed, params).values
    weights = geometry.ds_weights(perturbed)
    return (weights[:, None] * np.einsum("ij,ibj->ib", values, basis.frame)).reshape(-1)


def _hessian_column(direction: np.ndarray, curve: DiscreteCurve, basis: NormalBasis, params: EnergyParams,
                    h: float) -> np.ndarray:
    def central(step: float) -> np.ndarray:
        forward = _weighted_components(curve.points + step * direction, curve, basis, params)
        backward = _weighted_components(curve.points - step * direction, curve, basis, params)
        return (forward - backward) / (2.0 * step)

    # Richardson extrapolation removes the O(h²) term
    return (4.0 * central(h) - central(2.0 * h)) / 3.0


def _energy_second_difference(curve: DiscreteCurve, direction: np.ndarray, params: EnergyParams, h: float) -> float:
    plus = elastic_energy(curve.with_points(curve.points + h * direction), params)
    minus = elastic_energy(curve.with_points(curve.points - h * direction), params)
    return (plus - 2.0 * elastic_energy(curve, params) + minus) / h ** 2


def _sawtooth_block(curve: DiscreteCurve, basis: NormalBasis, fields: np.ndarray, params: EnergyParams,
                    h: float) -> np.ndarray:
    # δ²E on the sawtooth fields from the energy itself, off-diagonals by polarization
    directions = [basis.expand(column) for column in fields.T]
    count = len(directions)
    block = np.zeros((count, count))
    for a in range(count):
        block[a, a] = _energy_second_difference(curve, directions[a], params, h)
        for b in range(a):
            plus = _energy_second_difference(curve, directions[a] + directions[b], params, h)
            minus = _energy_second_difference(curve, directions[a] - directions[b], params, h)
            block[a, b] = block[b, a] = 0.25 * (plus - minus)
    return block


def hessian_matrix(curve: DiscreteCurve, params: EnergyParams, basis: Optional[NormalBasis] = None,
                   workers: Optional[int] = None) -> OperatorMatrix:
    """
    Finite-difference Hessian H_ab = δ²E(b_a, b_b) on the normal basis.

    The gradient is differentiated along the mode fields φ_m·ν^β rather than
    along single basis fields, with step h/max(1, m)², h = HESSIAN_STEP·(1 + ‖γ‖∞),
    so every perturbation moves the curvature by about the same amount. The sawtooth
    fields (m = N/2) are annihilated by the grid's first derivative and do not
    see the discrete gradient; their block comes from second differences of
    the energy. The form on mode fields is mapped back to the pointwise
    basis, symmetrized, and the defect max|H − Hᵀ| recorded.
    """
    basis = basis or normal_basis(curve)
    modes, wavenumbers = mode_fields(basis)
    h = HESSIAN_STEP * (1.0 + float(np.max(np.abs(curve.points))))
    steps = h / np.maximum(wavenumbers, 1) ** 2
    workers = max(1, min(workers or MAX_THREADS, basis.size))
    logger.info(f"Assembling Hessian of size {basis.size} with step {h:.3e} on {workers} worker(s)")

    def column(p: int) -> np.ndarray:
        return _hessian_column(basis.expand(modes[:, p]), curve, basis, params, steps[p])

    indices = range(basis.size)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            columns = list(pool.map(column, indices))
    else:
        columns = [column(p) for p in indices]

    # Φᵀ H Φ: the form on mode fields
    form = modes.T @ np.column_stack(columns)
    sawtooth = np.flatnonzero(wavenumbers == curve.samples // 2)
    form[:, sawtooth] = form[sawtooth, :].T
    form[np.ix_(sawtooth, sawtooth)] = _sawtooth_block(curve, basis, modes[:, sawtooth], params, steps[sawtooth[0]])

    # Columns of Φ are orthogonal, so Φ⁻¹ = D⁻¹Φᵀ
    inverse = modes.T / np.sum(modes ** 2, axis=0)[:, None]
    raw = inverse.T @ form @ inverse
    defect = float(np.max(np.abs(raw - raw.T)))
    logger.debug(f"Hessian symmetry defect {defect:.3e}")
    return OperatorMatrix(0.5 * (raw + raw.T), basis_weights(basis), basis, "hessian", defect)


def nabla_perp_matrix(basis: NormalBasis) -> np.ndarray:
    """Matrix T of ∇⊥ acting on basis coefficients."""
    curve = basis.curve
    derivative = geometry.theta_derivative(np.eye(curve.samples), curve.scheme)
    # T_{jβ, iα} = D_ji ⟨ν_j^β, ν_i^α⟩ / |γ'_j|
    overlap = np.einsum("jbk,iak->jbia", basis.frame, basis.frame)
    speed = geometry.speed(curve)
    matrix = derivative[:, None, :, None] * overlap / speed[:, None, None, None]
    return matrix.reshape(basis.size, basis.size)


def leading_part_matrix(curve: DiscreteCurve, basis: Optional[NormalBasis] = None) -> OperatorMatrix:
    """
    The (∇⊥)⁴ part of the Hessian, ⟨(∇⊥)²b_a, (∇⊥)²b_b⟩_ds, which is
    W·T⁴ because ∇⊥ is skew-adjoint in L²(ds).
    """
    basis = basis or normal_basis(curve)
    weights = basis_weights(basis)
    derivative = nabla_perp_matrix(basis)
    square = derivative @ derivative
    scaled = np.sqrt(weights)[:, None] * square
    return OperatorMatrix(scaled.T @ scaled, weights, basis, "nabla4")


def id_plus_nabla4_matrix(curve: DiscreteCurve, basis: Optional[NormalBasis] = None) -> OperatorMatrix:
    """Matrix of X ↦ X + (∇⊥)⁴X: W + W·T⁴, positive with Rayleigh quotient ≥ 1."""
    leading = leading_part_matrix(curve, basis)
    return OperatorMatrix(np.diag(leading.weights) + leading.matrix, leading.weights, leading.basis, "id_plus_nabla4")


def lower_order_matrix(hessian: OperatorMatrix) -> OperatorMatrix:
    """Hessian with its (∇⊥)⁴ part removed."""
    leading = leading_part_matrix(hessian.curve, hessian.basis)
    return OperatorMatrix(hessian.matrix - leading.matrix, hessian.weights, hessian.basis, "lower_order", hessian.symmetry_defect)


def weighted_spectrum(op: OperatorMatrix) -> np.ndarray:
    """Ascending eigenvalues μ of A x = μ W x."""
    return scipy.linalg.eigh(op.matrix, np.diag(op.weights), eigvals_only=True)


def kernel_threshold(op: OperatorMatrix, rel_tol: float = KERNEL_REL_TOL) -> float:
    """
    rel_tol times the largest |Rayleigh quotient| of `op` on the mode fields
    with m ≤ KERNEL_REFERENCE_MODE. Unlike max|μ|, which grows like N⁴, this
    scale does not depend on the grid.
    """
    modes, wavenumbers = mode_fields(op.basis)
    low = modes[:, wavenumbers <= KERNEL_REFERENCE_MODE]
    quotients = np.einsum("ap,ab,bp->p", low, op.matrix, low) / np.einsum("ap,a,ap->p", low, op.weights, low)
    return rel_tol * float(np.max(np.abs(quotients)))


def kernel_dim(op: OperatorMatrix, curve: Optional[DiscreteCurve] = None, rel_tol: float = KERNEL_REL_TOL) -> int:
    """Number of weighted eigenvalues with |μ| ≤ kernel_threshold(op, rel_tol)."""
    if curve is not None and curve.samples * (curve.dim - 1) != op.size:
        raise ShapeMismatchError("Operator was assembled on another curve", {"operator": op.size, "curve": curve.samples})
    eigenvalues = weighted_spectrum(op)
    return int(np.sum(np.abs(eigenvalues) <= kernel_threshold(op, rel_tol)))


def rayleigh_quotient(op: OperatorMatrix, coefficients: np.ndarray) -> float:
    """xᵀAx / xᵀWx."""
    x = np.asarray(coefficients, dtype=float)
    return float(x @ op.matrix @ x) / float(x @ (op.weights * x))


def fourier_symbol_at_circle(radius: float, modes, out_of_plane: bool = False) -> np.ndarray:
    """
    Second variation of E at the critical circle (λ = 1/(2R²)) on the normal
    field cos(mθ)·ν: (m² − 1)²/R⁴ in the plane of the circle and
    m²(m² − 1)/R⁴ along a constant out-of-plane direction.
    """
    m = np.asarray(modes, dtype=float)
    if out_of_plane:
        return m ** 2 * (m ** 2 - 1.0) / radius ** 4
    return (m ** 2 - 1.0) ** 2 / radius ** 4


def fredholm_check(curve: DiscreteCurve, tol: float = 1e-6) -> Dict[str, float]:
    """Smallest weighted eigenvalue and kernel of Id + (∇⊥)⁴, passing when ≥ 1 − tol."""
    op = id_plus_nabla4_matrix(curve)
    eigenvalues = weighted_spectrum(op)
    smallest = float(eigenvalues[0])
    threshold = kernel_threshold(op)
    result = {
        "min_eigenvalue": smallest,
        "kernel_dim": int(np.sum(np.abs(eigenvalues) <= threshold)),
        "passed": smallest >= 1.0 - tol,
    }
    logger.info(f"Fredholm check: min eigenvalue {smallest:.12g}, passed={result['passed']}")
    return result
