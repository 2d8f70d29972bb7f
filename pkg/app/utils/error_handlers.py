from fastapi import HTTPException, Request, status
from fastapi.responses import JSONResponse
from fastapi.exceptions import RequestValidationError
from typing import Dict, Any, Optional
import logging

from app.config import LOGGER_NAME

logger = logging.getLogger(LOGGER_NAME)

# Custom exception classes
class ElasticFlowError(Exception):
    """Base class for every error raised by the elastic flow library."""
    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        self.message = message
        self.details = details
        super().__init__(self.message)


class DegenerateCurveError(ElasticFlowError):
    """Raised when a curve is not regular (|γ'| below the regularity floor) or not finite."""


class NotNormalError(ElasticFlowError):
    """Raised when a field that must be normal has a tangential component."""


class ShapeMismatchError(ElasticFlowError):
    """Raised when a field does not match the curve it is used with."""


class StepFailureError(ElasticFlowError):
    """Raised when the step controller drops below dt_min."""
    def __init__(self, dt: float, dt_min: float, t: float):
        self.dt = dt
        self.dt_min = dt_min
        self.t = t
        super().__init__(
            f"Step size {dt:.3e} fell below dt_min={dt_min:.3e} at t={t:.6g}",
            {"dt": dt, "dt_min": dt_min, "t": t},
        )


class OutsideTubeError(ElasticFlowError):
    """Raised when a point lies outside the tubular neighborhood of a reference curve."""
    def __init__(self, distance: float, radius: float):
        self.distance = distance
        self.radius = radius
        super().__init__(
            f"Point at distance {distance:.6g} is outside the tube of radius {radius:.6g}",
            {"distance": distance, "radius": radius},
        )


class NewtonFailureError(ElasticFlowError):
    """Raised when the nearest-point iteration does not converge."""


class FoldedGraphError(ElasticFlowError):
    """Raised when the induced parameter map of a normal graph is not monotone."""


class InsufficientDataError(ElasticFlowError):
    """Raised when a trace has too few usable rows for an analysis."""


class NegativeGapError(ElasticFlowError):
    """Raised when the energy gap of a trace is negative beyond round-off."""


class InvalidSpecError(ElasticFlowError):
    """Raised for malformed seed curve or run specifications."""


class StorageError(ElasticFlowError):
    """Raised for errors reading or writing run artifacts."""


GEOMETRY_ERRORS = (
    DegenerateCurveError, NotNormalError, ShapeMismatchError,
    OutsideTubeError, NewtonFailureError, FoldedGraphError, InvalidSpecError,
)
ANALYSIS_ERRORS = (InsufficientDataError, NegativeGapError)


def _error_body(error: str, exc: ElasticFlowError) -> Dict[str, Any]:
    return {
        "error": error,
        "message": exc.message,
        "details": exc.details if exc.details else None
    }


# Exception handlers
async def geometry_exception_handler(request: Request, exc: ElasticFlowError) -> JSONResponse:
    """Handle invalid curves, fields and seed specifications."""
    logger.warning(f"Geometry error ({type(exc).__name__}): {exc.message}")

    return JSONResponse(
        status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
        content=_error_body("Geometry Error", exc)
    )


async def analysis_exception_handler(request: Request, exc: ElasticFlowError) -> JSONResponse:
    """Handle diagnostics run on unusable traces."""
    logger.warning(f"Analysis error ({type(exc).__name__}): {exc.message}")

    return JSONResponse(
        status_code=status.HTTP_400_BAD_REQUEST,
        content=_error_body("Analysis Error", exc)
    )


async def step_failure_exception_handler(request: Request, exc: StepFailureError) -> JSONResponse:
    """Handle flows whose step controller gave up."""
    logger.error(f"Step failure: {exc.message}")

    return JSONResponse(
        status_code=status.HTTP_409_CONFLICT,
        content=_error_body("Step Failure", exc)
    )


async def storage_exception_handler(request: Request, exc: StorageError) -> JSONResponse:
    """Handle artifact persistence errors."""
    logger.error(f"Storage error: {exc.message}", exc_info=True)

    return JSONResponse(
        status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
        content=_error_body("Storage Error", exc)
    )


def _request_tag(request: Request) -> Dict[str, Any]:
    return {
        "path": request.url.path,
        "request_id": getattr(request.state, "request_id", None),
    }


async def http_exception_handler(request: Request, exc: HTTPException) -> JSONResponse:
    """Handle unknown routes and methods outside the curve endpoints."""
    logger.warning(f"{request.method} {request.url.path} rejected with {exc.status_code}: {exc.detail}")

    return JSONResponse(
        status_code=exc.status_code,
        content={
            "error": "Route Error",
            "message": f"{request.method} {request.url.path}: {exc.detail}",
            "details": _request_tag(request)
        }
    )


async def request_validation_exception_handler(request: Request, exc: RequestValidationError) -> JSONResponse:
    """Handle curve, seed and stepper payloads that fail schema validation."""
    errors = []
    for error in exc.errors():
        # Drop the "body" prefix so locations name request fields
        location = [str(part) for part in error["loc"] if part != "body"]
        errors.append({
            "field": ".".join(location) or "body",
            "msg": error["msg"],
            "type": error["type"]
        })

    logger.warning(f"Invalid payload for {request.url.path}: {errors}")

    return JSONResponse(
        status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
        content={
            "error": "Validation Error",
            "message": f"Payload for {request.url.path} has {len(errors)} invalid field(s)",
            "errors": errors
        }
    )


async def general_exception_handler(request: Request, exc: Exception) -> JSONResponse:
    """Handle failures the curve library does not classify."""
    tag = _request_tag(request)
    logger.error(f"Unclassified {type(exc).__name__} in {tag['path']} [{tag['request_id']}]: {str(exc)}", exc_info=True)

    return JSONResponse(
        status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
        content={
            "error": "Internal Server Error",
            "message": f"The computation for {tag['path']} failed; the server log has the traceback",
            "details": {**tag, "exception": type(exc).__name__}
        }
    )
