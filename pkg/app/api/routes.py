from fastapi import APIRouter, Depends, Query
from typing import Literal
import logging
import numpy as np

from app.config import LOGGER_NAME
from app.models.curve import DiscreteCurve
from app.models.diagnostics import LojaTrace
from app.models.schemas import (
    CurvePayload, CurveRequest, EnergyResponse, EvolveRequest, EvolveResponse,
    FredholmResponse, GradCheckRequest, GradCheckResponse, GraphRequest, GraphResponse,
    LojaFitRequest, LojaFitResponse, SeedSpec, SpectrumResponse
)
from app.numerics import diagnostics, geometry, graph, variation
from app.numerics.flow import evolve
from app.numerics.seeds import seed_curve
from app.storage.store import RunStore, get_store
from app.utils.error_handlers import ElasticFlowError, InvalidSpecError, StorageError

# Configure logging
logger = logging.getLogger(LOGGER_NAME)

# Create router instance
router = APIRouter(prefix="/api/curves", tags=["curves"])


def _curve_from_payload(payload: CurvePayload) -> DiscreteCurve:
    try:
        return DiscreteCurve.from_dict(payload.model_dump())
    except ValueError as e:
        # Convert ValueError to InvalidSpecError
        logger.warning(f"Invalid curve payload: {str(e)}")
        raise InvalidSpecError("Invalid curve", {"error": str(e)})


def resolve_curve(request: CurveRequest) -> DiscreteCurve:
    """Curve given explicitly or generated from a seed specification."""
    if request.curve is not None:
        return _curve_from_payload(request.curve)
    return seed_curve(request.seed)


def _payload(curve: DiscreteCurve) -> CurvePayload:
    return CurvePayload(**curve.to_dict())


@router.post("/seed", response_model=CurvePayload)
def create_seed(spec: SeedSpec):
    """
    Generate a seed curve.

    Raises:
        InvalidSpecError: If the parameters do not give a regular curve.
    """
    logger.info(f"Request to generate seed: {spec.kind} {spec.params}")
    return _payload(seed_curve(spec))


@router.post("/energy", response_model=EnergyResponse)
def compute_energy(request: CurveRequest):
    """
    Energy, length and gradient norms of a curve.

    Returns:
        EnergyResponse: E_λ, L, ‖G‖_{L²(ds)} and the dual gradient norm.
    """
    try:
        curve = resolve_curve(request)
        G = variation.gradient(curve, request.energy)
        return EnergyResponse(
            energy=variation.elastic_energy(curve, request.energy),
            length=geometry.length(curve),
            grad_norm_l2ds=geometry.norm_l2ds(G, curve),
            dual_grad_norm=diagnostics.dual_grad_norm(curve, request.energy, G),
        )
    except ElasticFlowError:
        # Let the exception handlers handle domain errors
        raise
    except Exception as e:
        logger.error(f"Unexpected error in compute_energy: {str(e)}", exc_info=True)
        raise


@router.post("/grad-check", response_model=GradCheckResponse)
def check_gradient(request: GradCheckRequest):
    """Compare the first variation with central differences of the energy on random fields."""
    logger.info(f"Request for gradient check with {request.fields} fields")
    curve = resolve_curve(request)
    return GradCheckResponse(**variation.gradient_check(curve, request.energy, request.fields, request.rng_seed, request.step))


@router.post("/fredholm-check", response_model=FredholmResponse)
def check_fredholm(request: CurveRequest):
    """Smallest ds-weighted eigenvalue of Id + (∇⊥)⁴."""
    return FredholmResponse(**variation.fredholm_check(resolve_curve(request)))


@router.post("/spectrum", response_model=SpectrumResponse)
def compute_spectrum(request: CurveRequest,
                     operator: Literal["hessian", "id_plus_nabla4"] = Query("hessian"),
                     rel_tol: float = Query(variation.KERNEL_REL_TOL, gt=0)):
    """
    Weighted spectrum A x = μ W x of the Hessian or of Id + (∇⊥)⁴.

    Returns:
        SpectrumResponse: ascending eigenvalues, kernel dimension and symmetry defect.
    """
    logger.info(f"Request for the {operator} spectrum")
    curve = resolve_curve(request)
    if operator == "hessian":
        op = variation.hessian_matrix(curve, request.energy)
    else:
        op = variation.id_plus_nabla4_matrix(curve)
    eigenvalues = variation.weighted_spectrum(op)
    threshold = variation.kernel_threshold(op, rel_tol)
    return SpectrumResponse(
        eigenvalues=eigenvalues.tolist(),
        kernel_dim=int(np.sum(np.abs(eigenvalues) <= threshold)),
        symmetry_defect=op.symmetry_defect,
    )


@router.post("/evolve", response_model=EvolveResponse)
def evolve_curve(request: EvolveRequest, store: RunStore = Depends(get_store)):
    """
    Run the elastic flow and store its trace under `api/<curve id>/trace.csv`.

    Raises:
        StepFailureError: If the step controller drops below dt_min.
        StorageError: If the trace cannot be written.
    """
    try:
        curve = resolve_curve(request)
        logger.info(f"Request to evolve curve {curve.curve_id} until t={request.stepper.stop_t_max}")
        state, trace = evolve(curve, request.stepper, request.energy)
        store.write_trace(trace, f"api/{curve.curve_id}/trace.csv")
        return EvolveResponse(
            converged=trace.converged,
            steps=state.step_count,
            t=state.t,
            energy=state.energy,
            grad_norm_l2ds=state.grad_norm_l2ds,
            curve=_payload(state.curve),
        )
    except ElasticFlowError:
        raise
    except Exception as e:
        # Log unexpected errors and convert to StorageError
        logger.error(f"Unexpected error in evolve_curve: {str(e)}", exc_info=True)
        raise StorageError("An unexpected error occurred while evolving the curve", {"error": str(e)})


@router.post("/graph", response_model=GraphResponse)
def compute_graph(request: GraphRequest):
    """Normal graph Y of `curve` over `reference`."""
    reference = _curve_from_payload(request.reference)
    sigma = _curve_from_payload(request.curve)
    tub = graph.tubular_data(reference)
    field = graph.normal_graph(tub, sigma)
    return GraphResponse(radius=tub.radius, dim=reference.dim, samples=reference.samples, values=field.values.tolist())


@router.post("/loja-fit", response_model=LojaFitResponse)
def fit_lojasiewicz(request: LojaFitRequest):
    """
    Fit the Łojasiewicz exponent of posted trace rows.

    Raises:
        InsufficientDataError: If fewer than 10 rows lie in the gap window.
        NegativeGapError: If E_ref lies above a posted energy by more than round-off.
    """
    rows = request.rows
    energy = np.array([row.energy for row in rows])
    e_ref = float(energy[-1]) if request.e_ref is None else request.e_ref
    try:
        trace = LojaTrace(
            t=[row.t for row in rows],
            energy_gap=energy - e_ref,
            dual_grad_norm=[row.dual_grad_norm for row in rows],
            vel_l2dtheta=[row.vel_norm_l2dtheta for row in rows],
            length=[row.length for row in rows],
            e_ref=e_ref,
        )
    except ValueError as e:
        raise InvalidSpecError("Invalid trace rows", {"error": str(e)})
    fit = diagnostics.fit_alpha(trace, request.window)
    return LojaFitResponse(**{key: value for key, value in fit.to_dict().items() if key in LojaFitResponse.model_fields})
