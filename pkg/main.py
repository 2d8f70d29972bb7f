"""
Elastic Flow API.

    python main.py                     # serve on port 8000
    python main.py evolve --seed ...   # any other command-line subcommand
"""
import sys
import time
import uuid
import logging
from typing import Callable, Dict, Type

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.exceptions import RequestValidationError
from starlette.exceptions import HTTPException as StarletteHTTPException

from app.api.routes import router as curves_router
from app.cli import configure_logging, main as cli_main
from app.config import ACTIVE_DIFF_SCHEME, LOGGER_NAME, MAX_THREADS, VERSION
from app.utils.error_handlers import (
    GEOMETRY_ERRORS, ANALYSIS_ERRORS, StepFailureError, StorageError,
    geometry_exception_handler, analysis_exception_handler,
    step_failure_exception_handler, storage_exception_handler, http_exception_handler,
    request_validation_exception_handler, general_exception_handler
)

logger = logging.getLogger(LOGGER_NAME)

DESCRIPTION = "Elastic flow of closed curves with variational and convergence diagnostics"


def _exception_handlers() -> Dict[Type[Exception], Callable]:
    handlers: Dict[Type[Exception], Callable] = {}
    handlers.update({error: geometry_exception_handler for error in GEOMETRY_ERRORS})
    handlers.update({error: analysis_exception_handler for error in ANALYSIS_ERRORS})
    handlers[StepFailureError] = step_failure_exception_handler
    handlers[StorageError] = storage_exception_handler
    handlers[StarletteHTTPException] = http_exception_handler
    handlers[RequestValidationError] = request_validation_exception_handler
    # Catch-all last
    handlers[Exception] = general_exception_handler
    return handlers


async def tag_request(request: Request, call_next):
    """Log each request and tag the response with its id and duration."""
    request_id = uuid.uuid4().hex
    request.state.request_id = request_id
    started = time.perf_counter()
    logger.info(f"[{request_id}] {request.method} {request.url.path}")

    try:
        response = await call_next(request)
    except Exception as e:
        logger.error(f"[{request_id}] failed after {time.perf_counter() - started:.4f}s: {str(e)}", exc_info=True)
        raise

    elapsed = time.perf_counter() - started
    response.headers["X-Request-ID"] = request_id
    response.headers["X-Process-Time"] = f"{elapsed:.4f}"
    logger.info(f"[{request_id}] status {response.status_code} in {elapsed:.4f}s")
    return response


def create_app() -> FastAPI:
    application = FastAPI(title="Elastic Flow API", description=DESCRIPTION, version=VERSION)
    application.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["GET", "POST"],
        allow_headers=["*"],
    )
    application.middleware("http")(tag_request)
    for error_class, handler in _exception_handlers().items():
        application.add_exception_handler(error_class, handler)
    application.include_router(curves_router)

    @application.get("/")
    async def root():
        """Service name, version and the library endpoints."""
        return {
            "name": "Elastic Flow API",
            "version": VERSION,
            "description": DESCRIPTION,
            "endpoints": sorted(route.path for route in curves_router.routes),
            "documentation": "/docs",
            "alternative_documentation": "/redoc"
        }

    @application.get("/health")
    async def health_check():
        return {
            "status": "healthy",
            "timestamp": time.time(),
            "diff_scheme": ACTIVE_DIFF_SCHEME.value,
            "workers": MAX_THREADS,
        }

    return application


configure_logging()
app = create_app()


if __name__ == "__main__":
    sys.exit(cli_main(sys.argv[1:] or ["serve"]))
