import math
import numpy as np
import pandas as pd
from dataclasses import dataclass, field, asdict, fields
from typing import List, Optional

from app.models.curve import DiscreteCurve

# Trace file columns, in file order
TRACE_COLUMNS = [
    "step", "t", "dt", "energy", "grad_norm_l2ds", "vel_norm_l2dtheta", "vel_norm_l2ds", "length",
    "dual_grad_norm", "k_norm_0", "k_norm_1", "k_norm_2", "extent",
]


@dataclass
class FlowState:
    """
    The evolving curve together with its time and step-control bookkeeping.

    Attributes:
        curve (DiscreteCurve): current curve γ_t
        t (float): current time
        energy (float): E(γ_t)
        grad_norm_l2ds (float): ‖G‖ in L²(ds)
        dt_last (float): step used by the last accepted step
        dt_next (float): step proposed for the next step
        step_count (int): accepted steps so far
        accept_streak (int): consecutive acceptances since the last rejection or growth
        origin (np.ndarray): ds-barycenter of the initial curve
    """
    curve: DiscreteCurve
    t: float
    energy: float
    grad_norm_l2ds: float
    dt_last: float
    dt_next: float
    step_count: int = 0
    accept_streak: int = 0
    origin: Optional[np.ndarray] = None

    def __post_init__(self):
        """Validate the state after initialization."""
        if not math.isfinite(self.energy):
            raise ValueError("Flow state energy must be finite")

        if not self.grad_norm_l2ds >= 0:
            raise ValueError("Gradient norm must be non-negative")

        if self.dt_next <= 0 or self.dt_last < 0:
            raise ValueError("Step sizes must be positive")

        if self.origin is None:
            self.origin = np.zeros(self.curve.dim)
        self.origin = np.asarray(self.origin, dtype=float)

    def to_dict(self) -> dict:
        """Convert the state (without the curve) to a dictionary for checkpoints."""
        return {
            "t": self.t,
            "energy": self.energy,
            "grad_norm_l2ds": self.grad_norm_l2ds,
            "dt_last": self.dt_last,
            "dt_next": self.dt_next,
            "step_count": self.step_count,
            "accept_streak": self.accept_streak,
            "origin": self.origin.tolist(),
            "scheme": self.curve.scheme.value,
        }

    @classmethod
    def from_dict(cls, data: dict, curve: DiscreteCurve) -> 'FlowState':
        """Rebuild a state from its checkpoint dictionary and curve."""
        return cls(
            curve=curve,
            t=float(data["t"]),
            energy=float(data["energy"]),
            grad_norm_l2ds=float(data["grad_norm_l2ds"]),
            dt_last=float(data["dt_last"]),
            dt_next=float(data["dt_next"]),
            step_count=int(data["step_count"]),
            accept_streak=int(data["accept_streak"]),
            origin=np.array(data["origin"], dtype=float),
        )


@dataclass
class TraceRow:
    """One accepted step of a flow (row 0 is the initial curve)."""
    step: int
    t: float
    dt: float
    energy: float
    grad_norm_l2ds: float
    vel_norm_l2dtheta: float
    vel_norm_l2ds: float
    length: float
    dual_grad_norm: float
    k_norm_0: float
    k_norm_1: float
    k_norm_2: float
    extent: float


@dataclass
class FlowTrace:
    """Per-step record of a flow run."""
    rows: List[TraceRow] = field(default_factory=list)
    converged: bool = False

    def append(self, row: TraceRow) -> None:
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(row, name) for row in self.rows], dtype=float)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(row) for row in self.rows], columns=TRACE_COLUMNS)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> 'FlowTrace':
        names = [f.name for f in fields(TraceRow)]
        missing = [name for name in names if name not in frame.columns]
        if missing:
            raise ValueError(f"Trace is missing columns: {missing}")
        rows = [
            TraceRow(**{name: (int(record[name]) if name == "step" else float(record[name])) for name in names})
            for record in frame.to_dict(orient="records")
        ]
        return cls(rows=rows)
