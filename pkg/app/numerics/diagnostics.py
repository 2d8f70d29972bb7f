"""
Convergence diagnostics for elastic-flow traces.

The Łojasiewicz inequality |E − E_ref|^{1−α} ≤ C‖δE‖ is fitted in log–log
coordinates, with ‖δE‖ the dual norm ‖|γ'|·G‖_{L²(dθ)} of the first variation.
"""
import logging
import math
import numpy as np
import pandas as pd
from scipy.integrate import trapezoid
from typing import Dict, Optional, Sequence, Tuple

from app.config import LOGGER_NAME
from app.models.curve import DiscreteCurve, NormalField
from app.models.diagnostics import CauchyReport, LojaFit, LojaTrace
from app.models.flow import FlowTrace
from app.models.schemas import EnergyParams
from app.numerics import geometry
from app.numerics.graph import normal_graph, tubular_data
from app.numerics.variation import gradient
from app.utils.error_handlers import InsufficientDataError

logger = logging.getLogger(LOGGER_NAME)

DEFAULT_WINDOW = (1e-10, 1e-2)
MIN_FIT_POINTS = 10
# Relative slack on C when counting violations of the fitted inequality
C_SLACK = 1.05


def dual_grad_norm(curve: DiscreteCurve, params: EnergyParams, grad: Optional[NormalField] = None) -> float:
    """(∫ |γ'|²|G|² dθ)^{1/2}."""
    G = grad if grad is not None else gradient(curve, params)
    weighted = geometry.speed(curve)[:, None] * G.values
    return geometry.norm_l2dtheta(weighted)


def lojasiewicz_trace(trace: FlowTrace, e_ref: Optional[float] = None) -> LojaTrace:
    """Diagnostics view of a flow trace; E_ref defaults to the last energy."""
    if len(trace) == 0:
        raise InsufficientDataError("Trace is empty")
    energy = trace.column("energy")
    reference = float(energy[-1]) if e_ref is None else float(e_ref)
    return LojaTrace(
        t=trace.column("t"),
        energy_gap=energy - reference,
        dual_grad_norm=trace.column("dual_grad_norm"),
        vel_l2dtheta=trace.column("vel_norm_l2dtheta"),
        length=trace.column("length"),
        e_ref=reference,
    )


def _window_mask(trace: LojaTrace, window: Tuple[float, float]) -> np.ndarray:
    low, high = window
    return (trace.energy_gap >= low) & (trace.energy_gap <= high) & (trace.dual_grad_norm > 0)


def fit_alpha(trace: LojaTrace, window: Tuple[float, float] = DEFAULT_WINDOW) -> LojaFit:
    """
    Total-least-squares fit of log‖δE‖ = (1 − α)·log gap − log C on the rows
    whose energy gap lies in `window`.

    Raises:
        InsufficientDataError: if fewer than 10 rows fall in the window.
    """
    mask = _window_mask(trace, window)
    points = int(np.sum(mask))
    if points < MIN_FIT_POINTS:
        raise InsufficientDataError(
            f"Fit needs at least {MIN_FIT_POINTS} rows in the gap window, found {points}",
            {"window": list(window), "points": points}
        )

    gap = trace.energy_gap[mask]
    dual = trace.dual_grad_norm[mask]
    x, y = np.log(gap), np.log(dual)
    centered = np.column_stack([x - x.mean(), y - y.mean()])
    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    direction = vt[0]
    if abs(direction[0]) < np.finfo(float).eps:
        raise InsufficientDataError("Energy gap does not vary over the fit window", {"window": list(window)})
    slope = float(direction[1] / direction[0])
    intercept = float(y.mean() - slope * x.mean())

    alpha = float(np.clip(1.0 - slope, np.finfo(float).eps, 1.0))
    constant = math.exp(-intercept)
    ratio = gap ** (1.0 - alpha) / dual
    violations = int(np.sum(ratio > C_SLACK * constant))
    fit = LojaFit(
        alpha=alpha,
        C=constant,
        window=(float(window[0]), float(window[1])),
        residual=float(singular[1] / math.sqrt(points)),
        violations=violations,
        points=points,
        slope=slope,
        c_envelope=float(np.max(ratio)),
    )
    logger.info(f"Łojasiewicz fit on {points} rows: alpha={alpha:.4f}, C={constant:.4g}, violations={violations}")
    return fit


def h_function(trace: LojaTrace, alpha: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    H(t) = (E(γ_t) − E_ref)^α.

    Raises:
        ValueError: if alpha is outside (0, 1].
    """
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    # Gaps below the round-off floor are rejected when the trace is built
    return trace.t.copy(), np.maximum(trace.energy_gap, 0.0) ** alpha


def l1_velocity(trace: LojaTrace, t0: float) -> float:
    """∫_{t0}^{T} ‖∂_tγ‖_{L²(dθ)} dt by the trapezoid rule."""
    if len(trace) < 2:
        raise InsufficientDataError("Velocity integral needs at least two rows", {"rows": len(trace)})
    if not trace.t[0] <= t0 <= trace.t[-1]:
        raise InsufficientDataError(
            "t0 lies outside the trace",
            {"t0": t0, "t_start": float(trace.t[0]), "t_end": float(trace.t[-1])}
        )
    later = trace.t > t0
    times = np.concatenate([[t0], trace.t[later]])
    values = np.concatenate([[np.interp(t0, trace.t, trace.vel_l2dtheta)], trace.vel_l2dtheta[later]])
    return float(trapezoid(values, times))


def l1_ratio(trace: LojaTrace, t0: float, alpha: float) -> float:
    """l1_velocity(t0) / H(t0): the measured 1/C of the velocity estimate."""
    times, H = h_function(trace, alpha)
    h0 = float(np.interp(t0, times, H))
    integral = l1_velocity(trace, t0)
    return math.inf if h0 == 0 else integral / h0


def h_dissipation_constant(trace: LojaTrace, alpha: float, gap_floor: float = DEFAULT_WINDOW[0]) -> float:
    """
    Largest c with H(t_i) − H(t_{i+1}) ≥ c·∫_{t_i}^{t_{i+1}} ‖∂_tγ‖_{L²(dθ)} dt
    on every step whose gap stays above `gap_floor`.
    """
    _, H = h_function(trace, alpha)
    usable = trace.energy_gap[1:] >= gap_floor
    integrals = 0.5 * (trace.vel_l2dtheta[1:] + trace.vel_l2dtheta[:-1]) * np.diff(trace.t)
    usable &= integrals > 0
    if not np.any(usable):
        raise InsufficientDataError("No steps above the gap floor", {"gap_floor": gap_floor})
    return float(np.min((H[:-1] - H[1:])[usable] / integrals[usable]))


def cauchy_check(snapshots: Sequence[DiscreteCurve], reference: DiscreteCurve,
                 times: Optional[Sequence[float]] = None) -> CauchyReport:
    """
    L²(dθ) distances between the normal graphs of consecutive snapshots over
    `reference`, and the tail suprema sup_{j>k≥i} ‖Y_j − Y_k‖.
    """
    tub = tubular_data(reference)
    graphs = [normal_graph(tub, snapshot).values for snapshot in snapshots]
    count = len(graphs)
    pairwise = np.zeros((count, count))
    for i in range(count):
        for j in range(i + 1, count):
            pairwise[i, j] = pairwise[j, i] = geometry.norm_l2dtheta(graphs[j] - graphs[i])

    consecutive = np.array([pairwise[i, i + 1] for i in range(count - 1)])
    tail_sup = np.array([np.max(pairwise[i:, i:]) for i in range(count - 1)])
    decreasing = bool(np.all(np.diff(tail_sup) <= 0) and (count < 3 or tail_sup[0] == 0 or tail_sup[-1] < tail_sup[0]))
    logger.info(f"Cauchy check over {count} snapshots: tail sup {tail_sup[-1] if count > 1 else 0.0:.3e}")
    return CauchyReport(
        times=list(times) if times is not None else list(range(count)),
        consecutive=consecutive,
        tail_sup=tail_sup,
        tail_decreasing=decreasing,
    )


def length_bounds(trace: FlowTrace) -> Dict[str, float]:
    """C_L with 1/C_L ≤ L(γ_t) ≤ C_L along the trace."""
    lengths = trace.column("length")
    low, high = float(np.min(lengths)), float(np.max(lengths))
    return {"min_length": low, "max_length": high, "C_L": max(high, 1.0 / low)}


def curvature_bounds(trace: FlowTrace) -> Dict[str, float]:
    """Maxima of ‖(∇⊥)^m k‖_{L²(ds)}, m = 0, 1, 2, along the trace."""
    return {f"max_k_norm_{m}": float(np.max(trace.column(f"k_norm_{m}"))) for m in range(3)}


def plot_data(trace: LojaTrace, window: Tuple[float, float] = DEFAULT_WINDOW) -> pd.DataFrame:
    """log gap against log dual norm for the rows with positive gap."""
    positive = (trace.energy_gap > 0) & (trace.dual_grad_norm > 0)
    return pd.DataFrame({
        "t": trace.t[positive],
        "log_gap": np.log(trace.energy_gap[positive]),
        "log_dual_grad_norm": np.log(trace.dual_grad_norm[positive]),
        "in_window": _window_mask(trace, window)[positive].astype(int),
    })
