import os
import json
import logging
import numpy as np
import pandas as pd
from pathlib import Path
from datetime import datetime
from contextlib import contextmanager
from typing import Any, Dict, Iterator, Optional, Tuple, Union

from app.config import ACTIVE_DIFF_SCHEME, DiffScheme, LOGGER_NAME, VERSION
from app.models.curve import DiscreteCurve, VectorField
from app.models.flow import FlowState, FlowTrace
from app.models.operators import OperatorMatrix
from app.models.schemas import RunConfig
from app.utils.error_handlers import ElasticFlowError, StorageError

# Configure logging
logger = logging.getLogger(LOGGER_NAME)

STORE_ROOT = os.environ.get("ELASTIC_FLOW_STORE", "runs")

# Floats in CSV files keep 17 significant digits
CSV_FLOAT_FORMAT = "%.17g"

PathLike = Union[str, Path]


def _reject_constant(name: str):
    raise ValueError(f"Non-finite number {name} is not allowed")


@contextmanager
def _guard(action: str, path: Path) -> Iterator[None]:
    """Convert I/O and format failures into StorageError."""
    try:
        yield
    except ElasticFlowError:
        raise
    except OSError as e:
        logger.error(f"I/O error while trying to {action} {path}: {str(e)}")
        raise StorageError(f"Failed to {action} {path}", {"os_error": str(e)})
    except (ValueError, KeyError, TypeError) as e:
        logger.error(f"Invalid data while trying to {action} {path}: {str(e)}")
        raise StorageError(f"Invalid data in {path}", {"error": str(e)})
    except Exception as e:
        logger.error(f"Unexpected error while trying to {action} {path}: {str(e)}", exc_info=True)
        raise StorageError("An unexpected storage error occurred", {"error": str(e)})


class RunStore:
    """File-based store for run artifacts: curves, fields, traces, checkpoints and reports."""

    def __init__(self, root: PathLike = STORE_ROOT):
        """Create the store directory if needed."""
        self.root = Path(root)
        with _guard("create store directory", self.root):
            self.root.mkdir(parents=True, exist_ok=True)

    def path(self, name: PathLike) -> Path:
        """Resolve a name against the store root; absolute paths are kept."""
        return self.root / Path(name)

    def _write_text(self, name: PathLike, text: str) -> Path:
        target = self.path(name)
        with _guard("write", target):
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(text)
        return target

    def _read_json(self, name: PathLike) -> Any:
        source = self.path(name)
        with _guard("read", source):
            with source.open() as handle:
                return json.load(handle, parse_constant=_reject_constant)

    def write_json(self, payload: Dict[str, Any], name: PathLike) -> Path:
        with _guard("serialize", self.path(name)):
            text = json.dumps(payload, indent=2, allow_nan=False)
        return self._write_text(name, text)

    def read_json(self, name: PathLike) -> Dict[str, Any]:
        return self._read_json(name)

    def write_curve(self, curve: DiscreteCurve, name: PathLike) -> Path:
        """
        Write a curve file {"dim", "samples", "points"}.

        Returns:
            Path: the written file.
        """
        target = self.write_json(curve.to_dict(), name)
        logger.debug(f"Wrote curve with {curve.samples} samples to {target}")
        return target

    def read_curve(self, name: PathLike, scheme: Optional[DiffScheme] = None) -> DiscreteCurve:
        """
        Read a curve file.

        Raises:
            StorageError: if the file is missing, holds non-finite numbers, an
                odd sample count or a header that disagrees with the points.
            DegenerateCurveError: if the stored curve is not regular.
        """
        source = self.path(name)
        data = self._read_json(name)
        with _guard("parse curve", source):
            return DiscreteCurve.from_dict(data, scheme=scheme or ACTIVE_DIFF_SCHEME)

    def write_field(self, field: VectorField, name: PathLike) -> Path:
        return self.write_json(field.to_dict(), name)

    def read_field(self, name: PathLike, curve: DiscreteCurve) -> VectorField:
        source = self.path(name)
        data = self._read_json(name)
        with _guard("parse field", source):
            values = np.array(data["values"], dtype=float)
            if values.shape != (int(data["samples"]), int(data["dim"])):
                raise ValueError(f"Field header does not match values of shape {values.shape}")
            return VectorField(values, curve)

    def write_frame(self, frame: pd.DataFrame, name: PathLike) -> Path:
        target = self.path(name)
        with _guard("write", target):
            target.parent.mkdir(parents=True, exist_ok=True)
            frame.to_csv(target, index=False, float_format=CSV_FLOAT_FORMAT)
        return target

    def read_frame(self, name: PathLike) -> pd.DataFrame:
        source = self.path(name)
        with _guard("read", source):
            return pd.read_csv(source, float_precision="round_trip")

    def write_trace(self, trace: FlowTrace, name: PathLike = "trace.csv") -> Path:
        return self.write_frame(trace.to_frame(), name)

    def read_trace(self, name: PathLike = "trace.csv") -> FlowTrace:
        frame = self.read_frame(name)
        with _guard("parse trace", self.path(name)):
            return FlowTrace.from_frame(frame)

    def write_spectrum(self, eigenvalues: np.ndarray, name: PathLike) -> Path:
        frame = pd.DataFrame({"index": np.arange(len(eigenvalues)), "eigenvalue": eigenvalues})
        return self.write_frame(frame, name)

    def write_operator(self, op: OperatorMatrix, name: PathLike) -> Path:
        """Dense row-major dump: M as little-endian u64, then M·M little-endian f64."""
        target = self.path(name)
        with _guard("write", target):
            target.parent.mkdir(parents=True, exist_ok=True)
            with target.open("wb") as handle:
                handle.write(np.array([op.size], dtype="<u8").tobytes())
                handle.write(np.ascontiguousarray(op.matrix, dtype="<f8").tobytes())
        logger.info(f"Wrote {op.kind} operator of size {op.size} to {target}")
        return target

    def read_operator(self, name: PathLike) -> np.ndarray:
        source = self.path(name)
        with _guard("read", source):
            raw = source.read_bytes()
            size = int(np.frombuffer(raw[:8], dtype="<u8")[0])
            if len(raw) != 8 + 8 * size * size:
                raise ValueError(f"Operator file holds {len(raw)} bytes, expected {8 + 8 * size * size}")
            return np.frombuffer(raw[8:], dtype="<f8").reshape(size, size).copy()

    def write_manifest(self, config: RunConfig, name: PathLike = "manifest.json") -> Path:
        """Config echo plus library version."""
        payload = {
            "version": VERSION,
            "created": datetime.now().isoformat(),
            "config": config.model_dump(mode="json", by_alias=True),
        }
        return self.write_json(payload, name)

    def write_checkpoint(self, state: FlowState, trace: FlowTrace, name: PathLike = "checkpoint") -> Path:
        """
        Write curve.json, trace.csv and state.json into a checkpoint directory.
        state.json is written last so a complete state always has its curve and trace.
        """
        # Inner writers resolve against the root themselves
        relative = Path(name)
        self.write_curve(state.curve, relative / "curve.json")
        self.write_trace(trace, relative / "trace.csv")
        self.write_json(state.to_dict(), relative / "state.json")
        directory = self.path(relative)
        logger.info(f"Checkpoint written at step {state.step_count} (t={state.t:.6g}) to {directory}")
        return directory

    def read_checkpoint(self, name: PathLike = "checkpoint") -> Tuple[FlowState, FlowTrace]:
        relative = Path(name)
        directory = self.path(relative)
        data = self._read_json(relative / "state.json")
        with _guard("parse checkpoint", directory):
            scheme = DiffScheme(data.get("scheme", ACTIVE_DIFF_SCHEME.value))
        curve = self.read_curve(relative / "curve.json", scheme=scheme)
        trace = self.read_trace(relative / "trace.csv")
        with _guard("parse checkpoint", directory):
            state = FlowState.from_dict(data, curve)
        if len(trace) != state.step_count + 1:
            raise StorageError(
                "Checkpoint trace does not match its state",
                {"rows": len(trace), "step_count": state.step_count}
            )
        return state, trace


# Store instance shared by the API
_store: Optional[RunStore] = None

def get_store() -> RunStore:
    """Get the store instance."""
    global _store
    if _store is None:
        _store = RunStore()
    return _store
