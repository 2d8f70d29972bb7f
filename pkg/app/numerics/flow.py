"""
Elastic flow ∂_t γ = −G integrated with an energy-monotone step controller.

Two integrators are available: classical RK4 on the full velocity, and a
semi-implicit splitting in which the frozen leading term a·∂_θ⁴, with
a = mean |γ'|⁻⁴, is treated implicitly through a circulant solve.
"""
import logging
import numpy as np
import scipy.linalg
from scipy import fft
from typing import Callable, Optional, Tuple

from app.config import DiffScheme, LOGGER_NAME
from app.models.curve import DiscreteCurve, NormalField
from app.models.flow import FlowState, FlowTrace, TraceRow
from app.models.schemas import EnergyParams, StepperConfig, StepScheme
from app.numerics import geometry
from app.numerics.diagnostics import dual_grad_norm
from app.numerics.variation import elastic_energy, gradient
from app.utils.error_handlers import DegenerateCurveError, StepFailureError

logger = logging.getLogger(LOGGER_NAME)

# Denominator of the explicit step guard 0.9·(Δθ·min|γ'|)⁴ / c, per scheme
_CFL_DENOMINATOR = {DiffScheme.FD4: 8.0, DiffScheme.SPECTRAL: np.pi ** 4 / 2.0}

# Speed ratio below which redistribution is skipped
_UNIFORM_SPEED_TOL = 1e-10

StepCallback = Callable[[FlowState, FlowTrace], None]


def velocity(curve: DiscreteCurve, params: EnergyParams) -> NormalField:
    """Normal velocity V = −G of the flow."""
    G = gradient(curve, params)
    return NormalField(-G.values, curve)


def cfl_bound(curve: DiscreteCurve) -> float:
    """Largest explicit step the initial step guard allows."""
    return 0.9 * (curve.spacing * float(np.min(geometry.speed(curve)))) ** 4 / _CFL_DENOMINATOR[curve.scheme]


def _rk4(curve: DiscreteCurve, dt: float, params: EnergyParams) -> np.ndarray:
    def rate(points: np.ndarray) -> np.ndarray:
        return velocity(curve.with_points(points), params).values

    k1 = velocity(curve, params).values
    k2 = rate(curve.points + 0.5 * dt * k1)
    k3 = rate(curve.points + 0.5 * dt * k2)
    k4 = rate(curve.points + dt * k3)
    return curve.points + dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0


def _semi_implicit(curve: DiscreteCurve, dt: float, params: EnergyParams) -> np.ndarray:
    # (I + dt·a·C4) γ_new = γ_old + dt·(V + a·C4 γ_old)
    a = float(np.mean(geometry.speed(curve) ** -4))
    column = geometry.fourth_derivative_column(curve.samples, curve.scheme)
    leading = np.real(fft.ifft(fft.fft(column)[:, None] * fft.fft(curve.points, axis=0), axis=0))
    rhs = curve.points + dt * (velocity(curve, params).values + a * leading)
    system = dt * a * column
    system[0] += 1.0
    return scipy.linalg.solve_circulant(system, rhs)


_INTEGRATORS = {StepScheme.EXPLICIT: _rk4, StepScheme.SEMI_IMPLICIT: _semi_implicit}


def tangential_redistribute(curve: DiscreteCurve) -> DiscreteCurve:
    """
    Reparametrize to constant speed.

    Arclength s(θ) is the antiderivative of the trigonometric interpolant of
    |γ'|; the new nodes θ_j solve s(θ_j) = jL/N by Newton's method and the
    curve is evaluated there by trigonometric interpolation.
    """
    speed = geometry.speed(curve)
    if np.max(speed) - np.min(speed) <= _UNIFORM_SPEED_TOL * np.max(speed):
        return curve

    density = geometry.TrigInterpolant(speed)
    total = float(np.mean(speed)) * 2.0 * np.pi
    targets = total * np.arange(curve.samples) / curve.samples
    nodes = curve.theta.copy()
    for _ in range(50):
        update = (density.antiderivative(nodes) - targets) / density(nodes)
        nodes -= update
        if np.max(np.abs(update)) < 1e-14:
            break
    points = geometry.TrigInterpolant(curve.points)(nodes)
    return curve.with_points(points)


def _local_error(curve: DiscreteCurve, dt: float, params: EnergyParams, advance, proposal: np.ndarray) -> float:
    # Max point distance between the full step and two half steps
    half = curve.with_points(advance(curve, 0.5 * dt, params))
    refined = advance(half, 0.5 * dt, params)
    return float(np.max(np.linalg.norm(refined - proposal, axis=1)))


def step(state: FlowState, config: StepperConfig, params: EnergyParams) -> FlowState:
    """
    Advance one accepted step.

    The proposed step is halved while it differs from two half steps by more
    than local_tol, the new energy exceeds the old one by more than
    energy_tol, or the new curve degenerates. It doubles (up to dt_max) after
    growth_after consecutive acceptances if the last local error was at most
    local_tol/4.

    Raises:
        StepFailureError: if the step drops below dt_min.
    """
    dt = min(state.dt_next, config.dt_max)
    advance = _INTEGRATORS[config.scheme]
    rejected = False
    while True:
        if dt < config.dt_min:
            logger.error(f"Step size {dt:.3e} below dt_min at t={state.t:.6g}")
            raise StepFailureError(dt, config.dt_min, state.t)
        try:
            points = advance(state.curve, dt, params)
            curve = state.curve.with_points(points)
            energy = elastic_energy(curve, params)
            error = _local_error(state.curve, dt, params, advance, points) if config.local_tol > 0 else 0.0
        except (DegenerateCurveError, ValueError) as e:
            logger.warning(f"Step rejected at t={state.t:.6g}, dt={dt:.3e}: {e}")
            dt *= 0.5
            rejected = True
            continue
        if error > config.local_tol:
            logger.debug(f"Local error {error:.3e} above tolerance at dt={dt:.3e}, halving")
            dt *= 0.5
            rejected = True
            continue
        if energy <= state.energy + config.energy_tol:
            break
        logger.debug(f"Energy rose by {energy - state.energy:.3e} at dt={dt:.3e}, halving")
        dt *= 0.5
        rejected = True

    if config.redistribute:
        candidate = tangential_redistribute(curve)
        if candidate is not curve:
            candidate_energy = elastic_energy(candidate, params)
            if candidate_energy <= state.energy + config.energy_tol:
                curve, energy = candidate, candidate_energy
            else:
                logger.warning(f"Redistribution skipped at t={state.t + dt:.6g}: energy would rise")

    streak = 0 if rejected else state.accept_streak + 1
    dt_next = dt
    if streak >= config.growth_after and error <= 0.25 * config.local_tol:
        dt_next = min(2.0 * dt, config.dt_max)
        streak = 0

    G = gradient(curve, params)
    return FlowState(
        curve=curve,
        t=state.t + dt,
        energy=energy,
        grad_norm_l2ds=geometry.norm_l2ds(G, curve),
        dt_last=dt,
        dt_next=dt_next,
        step_count=state.step_count + 1,
        accept_streak=streak,
        origin=state.origin,
    )


def initial_state(curve: DiscreteCurve, config: StepperConfig, params: EnergyParams) -> FlowState:
    """Flow state at t = 0; explicit runs start below the step guard."""
    dt = config.dt_init
    if config.scheme is StepScheme.EXPLICIT:
        dt = max(min(dt, cfl_bound(curve)), config.dt_min)
    G = gradient(curve, params)
    return FlowState(
        curve=curve,
        t=0.0,
        energy=elastic_energy(curve, params),
        grad_norm_l2ds=geometry.norm_l2ds(G, curve),
        dt_last=0.0,
        dt_next=dt,
        origin=geometry.barycenter(curve),
    )


def trace_row(state: FlowState, params: EnergyParams) -> TraceRow:
    """Monitoring quantities of a flow state."""
    curve = state.curve
    G = gradient(curve, params)
    k = geometry.curvature(curve)
    first = geometry.nabla_perp(k, curve)
    second = geometry.nabla_perp(first, curve)
    return TraceRow(
        step=state.step_count,
        t=state.t,
        dt=state.dt_last,
        energy=state.energy,
        grad_norm_l2ds=state.grad_norm_l2ds,
        vel_norm_l2dtheta=geometry.norm_l2dtheta(G),
        vel_norm_l2ds=state.grad_norm_l2ds,
        length=geometry.length(curve),
        dual_grad_norm=dual_grad_norm(curve, params, G),
        k_norm_0=geometry.norm_l2ds(k, curve),
        k_norm_1=geometry.norm_l2ds(first, curve),
        k_norm_2=geometry.norm_l2ds(second, curve),
        extent=float(np.max(np.linalg.norm(curve.points - state.origin, axis=1))),
    )


def evolve(initial: DiscreteCurve, config: StepperConfig, params: EnergyParams,
           state: Optional[FlowState] = None, trace: Optional[FlowTrace] = None,
           on_step: Optional[StepCallback] = None) -> Tuple[FlowState, FlowTrace]:
    """
    Iterate `step` until ‖G‖_{L²(ds)} < stop_grad_tol or t ≥ stop_t_max.

    Passing a checkpointed `state` and its `trace` continues that run; the
    continuation is identical to an uninterrupted run with the same config.
    Hitting stop_t_max is a normal return with trace.converged False.
    """
    if state is None:
        state = initial_state(initial, config, params)
        trace = FlowTrace()
        trace.append(trace_row(state, params))
        logger.info(
            f"Starting {config.scheme.value} flow: N={initial.samples}, n={initial.dim}, "
            f"E={state.energy:.12g}, |G|={state.grad_norm_l2ds:.3e}"
        )
    elif trace is None:
        trace = FlowTrace()
    else:
        logger.info(f"Resuming flow at t={state.t:.6g} after {state.step_count} steps")

    while state.grad_norm_l2ds >= config.stop_grad_tol and state.t < config.stop_t_max:
        state = step(state, config, params)
        trace.append(trace_row(state, params))
        logger.debug(f"step {state.step_count}: t={state.t:.6g} dt={state.dt_last:.3e} E={state.energy:.15g}")
        if on_step is not None:
            on_step(state, trace)

    trace.converged = state.grad_norm_l2ds < config.stop_grad_tol
    logger.info(
        f"Flow {'converged' if trace.converged else 'stopped at t_max'}: "
        f"t={state.t:.6g}, steps={state.step_count}, E={state.energy:.12g}, |G|={state.grad_norm_l2ds:.3e}"
    )
    return state, trace
