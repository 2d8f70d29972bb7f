import numpy as np
from dataclasses import dataclass

from app.models.curve import DiscreteCurve


@dataclass(eq=False)
class NormalBasis:
    """
    Pointwise basis of the discrete normal-field space: basis field (i, β) is
    the frame vector ν_i^β at sample i and zero elsewhere. Index a = i·(n−1) + β.
    """
    curve: DiscreteCurve
    frame: np.ndarray  # N × (n−1) × n orthonormal normal frames

    def __post_init__(self):
        expected = (self.curve.samples, self.curve.dim - 1, self.curve.dim)
        if self.frame.shape != expected:
            raise ValueError(f"Normal frame must have shape {expected}, got {self.frame.shape}")

    @property
    def size(self) -> int:
        return self.frame.shape[0] * self.frame.shape[1]

    @property
    def descriptor(self) -> str:
        return f"pointwise-normal-frame(N={self.curve.samples}, rank={self.curve.dim - 1})"

    def field_values(self, index: int) -> np.ndarray:
        """Samples of basis field number `index`."""
        sample, direction = divmod(index, self.frame.shape[1])
        values = np.zeros((self.curve.samples, self.curve.dim))
        values[sample] = self.frame[sample, direction]
        return values

    def expand(self, coefficients: np.ndarray) -> np.ndarray:
        """Field samples Σ x_a b_a for a coefficient vector x."""
        coefficients = np.asarray(coefficients, dtype=float).reshape(self.frame.shape[:2])
        return np.einsum("ib,ibj->ij", coefficients, self.frame)

    def coefficients(self, values: np.ndarray) -> np.ndarray:
        """Frame components ⟨X_i, ν_i^β⟩ flattened to a coefficient vector."""
        return np.einsum("ij,ibj->ib", values, self.frame).reshape(-1)


@dataclass(eq=False)
class OperatorMatrix:
    """
    Dense symmetric matrix of a bilinear form on normal fields,
    A_ab = B(b_a, b_b), together with the ds weights of the basis.

    Attributes:
        matrix (np.ndarray): symmetrized M×M matrix
        weights (np.ndarray): ds weights of the basis fields (diagonal of W)
        basis (NormalBasis): the basis it was assembled on
        kind (str): which operator ("hessian", "id_plus_nabla4", …)
        symmetry_defect (float): max-norm of A − Aᵀ before symmetrization
    """
    matrix: np.ndarray
    weights: np.ndarray
    basis: NormalBasis
    kind: str
    symmetry_defect: float = 0.0

    def __post_init__(self):
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise ValueError("Operator matrix must be square")
        if self.matrix.shape[0] != self.weights.shape[0]:
            raise ValueError("Operator matrix and weights differ in size")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("Operator matrix has non-finite entries")

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def curve(self) -> DiscreteCurve:
        return self.basis.curve

    @property
    def scale(self) -> float:
        """max |A_ab|"""
        return float(np.max(np.abs(self.matrix)))
