from enum import Enum
from pathlib import Path
from typing import List, Literal, Optional, Tuple
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.config import ACTIVE_DIFF_SCHEME, DiffScheme, MIN_SAMPLES


class EnergyParams(BaseModel):
    """Length weight λ of the modified functional E_λ = ∫ λ + |k|²/2 ds."""
    model_config = ConfigDict(populate_by_name=True, frozen=True)

    lam: float = Field(1.0, gt=0, alias="lambda", description="Length weight λ")


class StepScheme(str, Enum):
    EXPLICIT = "explicit"
    SEMI_IMPLICIT = "semi_implicit"


class StepperConfig(BaseModel):
    """Time stepping, step control and stopping rules of the flow."""
    model_config = ConfigDict(frozen=True)

    scheme: StepScheme = Field(StepScheme.SEMI_IMPLICIT, description="Time integrator")
    dt_init: float = Field(1e-4, gt=0, description="Initial step")
    dt_min: float = Field(1e-14, gt=0, description="Smallest step before the run fails")
    dt_max: float = Field(0.1, gt=0, description="Largest step")
    energy_tol: float = Field(1e-12, ge=0, description="Allowed energy increase per step")
    local_tol: float = Field(1e-6, ge=0, description="Largest point distance between one step and two half steps (0 disables)")
    redistribute: bool = Field(True, description="Tangential redistribution after accepted steps")
    stop_grad_tol: float = Field(1e-6, gt=0, description="Stop when ‖G‖_{L²(ds)} drops below")
    stop_t_max: float = Field(50.0, gt=0, description="Stop at this time")
    checkpoint_every: int = Field(0, ge=0, description="Accepted steps between checkpoints (0 disables)")
    growth_after: int = Field(10, ge=1, description="Consecutive acceptances before dt doubles")

    @model_validator(mode="after")
    def check_step_bounds(self) -> 'StepperConfig':
        if not self.dt_min <= self.dt_init <= self.dt_max:
            raise ValueError("Step bounds must satisfy dt_min <= dt_init <= dt_max")
        return self


SeedKind = Literal["circle", "ellipse", "w_covered_circle", "figure_eight", "fourier_perturbed_circle"]

# Positional parameter names per seed kind
SEED_PARAMETERS = {
    "circle": ("radius",),
    "ellipse": ("a", "b"),
    "w_covered_circle": ("radius", "winding"),
    "figure_eight": ("scale",),
    "fourier_perturbed_circle": ("radius",),
}


class SeedSpec(BaseModel):
    """Description of a seed curve: generator kind, parameters and grid."""
    model_config = ConfigDict(frozen=True)

    kind: SeedKind
    params: List[float] = Field(default_factory=list, description="Positional generator parameters")
    samples: int = Field(256, ge=MIN_SAMPLES, description="Grid size N")
    dim: int = Field(2, ge=2, description="Ambient dimension n")
    modes: List[int] = Field(default_factory=list, description="Perturbed Fourier modes")
    amplitude: float = Field(0.0, ge=0, description="Perturbation amplitude")
    rng_seed: Optional[int] = Field(None, description="Seed of the perturbation generator")
    scheme: DiffScheme = Field(ACTIVE_DIFF_SCHEME, description="Differentiation scheme of the curve")

    @field_validator("samples")
    @classmethod
    def check_even(cls, value: int) -> int:
        if value % 2:
            raise ValueError("Sample count must be even")
        return value

    @classmethod
    def parse(cls, text: str, **overrides) -> 'SeedSpec':
        """
        Parse the command-line form `kind:p1,p2,…`.

        For `fourier_perturbed_circle` the form is `radius,modes,amplitude,rng_seed`
        with modes separated by `/`, e.g. `fourier_perturbed_circle:1,2/3,0.05,7`.
        """
        kind, _, raw = text.partition(":")
        parts = [part.strip() for part in raw.split(",") if part.strip()]
        data = {"kind": kind.strip()}
        if data["kind"] == "fourier_perturbed_circle":
            if len(parts) != 4:
                raise ValueError("fourier_perturbed_circle expects radius,modes,amplitude,rng_seed")
            data.update(
                params=[float(parts[0])],
                modes=[int(mode) for mode in parts[1].split("/")],
                amplitude=float(parts[2]),
                rng_seed=int(parts[3]),
            )
        else:
            data["params"] = [float(part) for part in parts]
        data.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**data)


class RunConfig(BaseModel):
    """Everything a single `evolve` run needs; deterministic for a fixed config."""
    seed: Optional[SeedSpec] = Field(None, description="Seed curve generator")
    curve_file: Optional[Path] = Field(None, description="Curve JSON used instead of a seed")
    energy: EnergyParams = Field(default_factory=EnergyParams)
    stepper: StepperConfig = Field(default_factory=StepperConfig)
    output_dir: Path = Field(Path("runs/default"), description="Directory receiving the run artifacts")
    snapshot_every: int = Field(0, ge=0, description="Accepted steps between curve snapshots (0 disables)")
    loja: bool = Field(False, description="Fit the Łojasiewicz exponent at the end of the run")
    fit_window: Tuple[float, float] = Field((1e-10, 1e-2), description="Energy-gap window of the fit")

    @field_validator("fit_window")
    @classmethod
    def check_window(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        low, high = value
        if not 0 < low < high:
            raise ValueError("Fit window must satisfy 0 < g_min < g_max")
        return value

    @model_validator(mode="after")
    def check_initial_curve(self) -> 'RunConfig':
        if (self.seed is None) == (self.curve_file is None):
            raise ValueError("Provide exactly one of 'seed' or 'curve_file'")
        return self


# API bodies
class CurvePayload(BaseModel):
    """A curve in the curve-file layout."""
    dim: int = Field(..., ge=2)
    samples: int = Field(..., ge=MIN_SAMPLES)
    points: List[List[float]] = Field(..., min_length=MIN_SAMPLES)


class CurveRequest(BaseModel):
    """A curve given either explicitly or as a seed specification."""
    curve: Optional[CurvePayload] = None
    seed: Optional[SeedSpec] = None
    energy: EnergyParams = Field(default_factory=EnergyParams)

    @model_validator(mode="after")
    def check_source(self) -> 'CurveRequest':
        if (self.curve is None) == (self.seed is None):
            raise ValueError("Provide exactly one of 'curve' or 'seed'")
        return self


class EnergyResponse(BaseModel):
    energy: float
    length: float
    grad_norm_l2ds: float
    dual_grad_norm: float


class GradCheckRequest(CurveRequest):
    fields: int = Field(20, ge=1, le=200, description="Number of random probe fields")
    rng_seed: int = 0
    step: float = Field(1e-5, gt=0)


class GradCheckResponse(BaseModel):
    max_rel_mismatch: float
    passed: bool
    probes: int


class SpectrumResponse(BaseModel):
    eigenvalues: List[float]
    kernel_dim: int
    symmetry_defect: float


class FredholmResponse(BaseModel):
    min_eigenvalue: float
    kernel_dim: int
    passed: bool


class EvolveRequest(CurveRequest):
    stepper: StepperConfig = Field(default_factory=lambda: StepperConfig(stop_t_max=5.0))


class EvolveResponse(BaseModel):
    converged: bool
    steps: int
    t: float
    energy: float
    grad_norm_l2ds: float
    curve: CurvePayload


class GraphRequest(BaseModel):
    reference: CurvePayload
    curve: CurvePayload


class GraphResponse(BaseModel):
    radius: float
    dim: int
    samples: int
    values: List[List[float]]


class TraceRowPayload(BaseModel):
    t: float
    energy: float
    dual_grad_norm: float
    vel_norm_l2dtheta: float
    length: float


class LojaFitRequest(BaseModel):
    rows: List[TraceRowPayload] = Field(..., min_length=2)
    e_ref: Optional[float] = None
    window: Tuple[float, float] = (1e-10, 1e-2)


class LojaFitResponse(BaseModel):
    alpha: float
    C: float
    window: Tuple[float, float]
    residual: float
    violations: int
    points: int
