import numpy as np
import pytest

from app.models.diagnostics import LojaTrace
from app.models.flow import FlowTrace, TraceRow
from app.models.schemas import StepperConfig
from app.numerics import diagnostics
from app.numerics.flow import evolve
from app.utils.error_handlers import InsufficientDataError, NegativeGapError
from tests.conftest import make_curve


def _synthetic_trace(gap, dual, t=None, vel=None):
    count = len(gap)
    return LojaTrace(
        t=np.arange(count, dtype=float) if t is None else t,
        energy_gap=np.asarray(gap, dtype=float),
        dual_grad_norm=np.asarray(dual, dtype=float),
        vel_l2dtheta=np.ones(count) if vel is None else vel,
        length=np.ones(count),
    )


def _row(step, t, energy, length=1.0, k0=1.0):
    return TraceRow(
        step=step, t=t, dt=0.1, energy=energy, grad_norm_l2ds=1.0, vel_norm_l2dtheta=1.0,
        vel_norm_l2ds=1.0, length=length, dual_grad_norm=1.0, k_norm_0=k0, k_norm_1=0.5,
        k_norm_2=0.25, extent=1.0,
    )


class TestDualGradNorm:
    """Tests for the dual norm of the first variation."""

    def test_circle_of_radius_two(self, params):
        """Test ‖|γ'|G‖_{L²(dθ)} = (7/8)√(2π) on the circle of radius 2."""
        curve = make_curve("circle", 2.0, samples=64)
        assert diagnostics.dual_grad_norm(curve, params) == pytest.approx(7.0 / 8.0 * np.sqrt(2 * np.pi), rel=1e-10)

    def test_vanishes_at_critical_circle(self, critical_circle, params):
        """Test that the dual norm vanishes at a critical point."""
        assert diagnostics.dual_grad_norm(critical_circle, params) < 1e-6


class TestFitAlpha:
    """Tests for the Łojasiewicz exponent fit."""

    @pytest.mark.parametrize("alpha, C", [(0.5, 2.0), (0.25, 0.7), (1.0, 3.0)])
    def test_exact_power_law(self, alpha, C):
        """Test that an exact power law gives back its exponent and constant."""
        gap = np.logspace(-2.5, -9, 40)
        trace = _synthetic_trace(gap, gap ** (1 - alpha) / C)
        fit = diagnostics.fit_alpha(trace)
        assert fit.alpha == pytest.approx(alpha, abs=1e-8)
        assert fit.C == pytest.approx(C, rel=1e-6)
        assert fit.points == 40
        assert fit.violations == 0
        assert fit.residual < 1e-10

    def test_exponential_decay_clips_alpha(self):
        """Test that a slope above one is clipped to the smallest positive alpha."""
        gap = np.logspace(-3, -8, 20)
        fit = diagnostics.fit_alpha(_synthetic_trace(gap, gap ** 1.2))
        assert 0 < fit.alpha < 1e-10
        assert fit.slope == pytest.approx(1.2, rel=1e-8)

    def test_rows_outside_window_are_ignored(self):
        """Test that only rows inside the gap window enter the fit."""
        gap = np.concatenate([np.logspace(0, -1.9, 5), np.logspace(-3, -8, 15), np.zeros(3)])
        dual = np.sqrt(gap)
        dual[:5] = 100.0
        fit = diagnostics.fit_alpha(_synthetic_trace(gap, dual))
        assert fit.points == 15
        assert fit.alpha == pytest.approx(0.5, abs=1e-8)

    def test_too_few_rows(self):
        """Test that fewer than ten usable rows raise InsufficientDataError."""
        gap = np.logspace(-3, -5, 9)
        with pytest.raises(InsufficientDataError):
            diagnostics.fit_alpha(_synthetic_trace(gap, gap))

    def test_violations_are_counted(self):
        """Test that points above the fitted envelope are counted."""
        gap = np.logspace(-3, -8, 30)
        dual = np.sqrt(gap)
        dual[10] *= 0.5
        fit = diagnostics.fit_alpha(_synthetic_trace(gap, dual))
        assert fit.violations >= 1
        assert fit.c_envelope >= fit.C

    def test_flow_to_critical_circle_has_half_exponent(self, params):
        """Test that the flow of the unit circle shows the exponent 1/2."""
        config = StepperConfig(stop_grad_tol=1e-7, stop_t_max=50.0)
        _, trace = evolve(make_curve("circle", 1.0, samples=32), config, params)
        loja = diagnostics.lojasiewicz_trace(trace, e_ref=2 * np.sqrt(2) * np.pi)
        assert loja.is_dissipative(tol=1e-12)
        fit = diagnostics.fit_alpha(loja, (1e-9, 1e-2))
        assert fit.alpha == pytest.approx(0.5, abs=0.02)

    def test_flow_fit_with_default_reference(self, params):
        """Test the exponent of a flow trace when E_ref is its last energy."""
        config = StepperConfig(stop_grad_tol=1e-7, stop_t_max=50.0)
        _, trace = evolve(make_curve("circle", 1.0, samples=32), config, params)
        loja = diagnostics.lojasiewicz_trace(trace)
        assert loja.e_ref == trace.rows[-1].energy
        fit = diagnostics.fit_alpha(loja, (1e-10, 1e-4))
        assert 0.35 <= fit.alpha <= 0.55
        assert fit.violations == 0


class TestTraceConversion:
    """Tests for building diagnostics traces from flow traces."""

    def test_reference_energy_defaults_to_last(self):
        """Test that E_ref is the last energy unless given."""
        trace = FlowTrace(rows=[_row(0, 0.0, 3.0), _row(1, 0.1, 2.5), _row(2, 0.2, 2.0)])
        loja = diagnostics.lojasiewicz_trace(trace)
        assert loja.e_ref == 2.0
        np.testing.assert_allclose(loja.energy_gap, [1.0, 0.5, 0.0])

    def test_empty_trace(self):
        """Test that an empty trace cannot be analysed."""
        with pytest.raises(InsufficientDataError):
            diagnostics.lojasiewicz_trace(FlowTrace())

    def test_times_must_increase(self):
        """Test that LojaTrace rejects non-increasing times."""
        with pytest.raises(ValueError):
            _synthetic_trace([1.0, 0.5], [1.0, 1.0], t=np.array([0.0, 0.0]))

    def test_length_and_curvature_bounds(self):
        """Test the running bounds on length and curvature norms."""
        trace = FlowTrace(rows=[_row(0, 0.0, 3.0, length=0.5, k0=2.0), _row(1, 0.1, 2.0, length=1.5, k0=1.0)])
        bounds = diagnostics.length_bounds(trace)
        assert bounds["C_L"] == pytest.approx(2.0)
        assert bounds["max_length"] == pytest.approx(1.5)
        curvature = diagnostics.curvature_bounds(trace)
        assert curvature["max_k_norm_0"] == pytest.approx(2.0)
        assert curvature["max_k_norm_2"] == pytest.approx(0.25)

    def test_plot_data_columns(self):
        """Test the plot-data table of a trace."""
        gap = np.array([1.0, 1e-3, 1e-6, 0.0])
        frame = diagnostics.plot_data(_synthetic_trace(gap, np.sqrt(gap) + 1e-3))
        assert list(frame.columns) == ["t", "log_gap", "log_dual_grad_norm", "in_window"]
        assert len(frame) == 3
        assert frame["in_window"].tolist() == [0, 1, 1]


class TestVelocityEstimates:
    """Tests for H(t) and the integrated velocity."""

    def test_h_function(self):
        """Test H = gap^α."""
        times, H = diagnostics.h_function(_synthetic_trace([4.0, 1.0, 0.0], [1.0, 1.0, 0.0]), 0.5)
        np.testing.assert_allclose(times, [0.0, 1.0, 2.0])
        np.testing.assert_allclose(H, [2.0, 1.0, 0.0])

    def test_negative_gap_rejected_from_flow_trace(self):
        """Test that an E_ref above the final energy of a trace raises NegativeGapError."""
        rows = [_row(0, 0.0, 2.0), _row(1, 0.1, 1.5), _row(2, 0.2, 1.0)]
        with pytest.raises(NegativeGapError):
            diagnostics.lojasiewicz_trace(FlowTrace(rows=rows), e_ref=1.0 + 1e-6)

    def test_h_function_rejects_bad_alpha(self):
        """Test that alpha must lie in (0, 1]."""
        with pytest.raises(ValueError):
            diagnostics.h_function(_synthetic_trace([1.0, 0.5], [1.0, 1.0]), 1.5)

    def test_l1_velocity_of_constant_speed(self):
        """Test ∫ 2 dt over [1.5, 5]."""
        trace = _synthetic_trace(np.linspace(1.0, 0.0, 6), np.ones(6), vel=2.0 * np.ones(6))
        assert diagnostics.l1_velocity(trace, 1.5) == pytest.approx(7.0)

    def test_l1_velocity_outside_trace(self):
        """Test that t0 must lie inside the trace."""
        trace = _synthetic_trace(np.linspace(1.0, 0.0, 6), np.ones(6))
        with pytest.raises(InsufficientDataError):
            diagnostics.l1_velocity(trace, 10.0)

    def test_l1_ratio(self):
        """Test the velocity integral divided by H(t0)."""
        trace = _synthetic_trace([4.0, 1.0, 0.25], [1.0, 1.0, 1.0], vel=np.ones(3))
        assert diagnostics.l1_ratio(trace, 0.0, 0.5) == pytest.approx(2.0 / 2.0)

    def test_h_dissipation_constant(self):
        """Test the smallest ratio of H decrease to velocity integral."""
        trace = _synthetic_trace([1.0, 0.25, 0.0625], [1.0, 1.0, 1.0], vel=np.ones(3))
        assert diagnostics.h_dissipation_constant(trace, 0.5) == pytest.approx(0.25)


class TestCauchyCheck:
    """Tests for distances between snapshots as normal graphs."""

    def test_concentric_circles(self):
        """Test ‖Y_i − Y_j‖ = √(2π)|r_i − r_j| for concentric circles over the unit circle."""
        reference = make_curve("circle", 1.0, samples=64)
        radii = [1.2, 1.1, 1.05, 1.02]
        snapshots = [make_curve("circle", r, samples=64) for r in radii]
        report = diagnostics.cauchy_check(snapshots, reference, times=[0.0, 1.0, 2.0, 3.0])
        scale = np.sqrt(2 * np.pi)
        np.testing.assert_allclose(report.consecutive, scale * np.array([0.1, 0.05, 0.03]), atol=1e-9)
        np.testing.assert_allclose(report.tail_sup, scale * np.array([0.18, 0.08, 0.03]), atol=1e-9)
        assert report.tail_decreasing is True
        assert report.times == [0.0, 1.0, 2.0, 3.0]

    def test_graph_distance_matches_velocity_integral(self):
        """Test that the distance between two snapshots is bounded by the integrated velocity."""
        reference = make_curve("circle", 1.0, samples=64)
        report = diagnostics.cauchy_check(
            [make_curve("circle", 1.2, samples=64), make_curve("circle", 1.0, samples=64)], reference
        )
        # Radial speed 0.2 over unit time
        trace = _synthetic_trace([1.0, 0.0], [1.0, 1.0], vel=0.2 * np.sqrt(2 * np.pi) * np.ones(2))
        assert report.consecutive[0] <= diagnostics.l1_velocity(trace, 0.0) + 1e-9

    def test_flow_snapshots_match_velocity_integrals(self, params):
        """Test graph distances between flow snapshots against the integrated velocity."""
        snapshots = {}

        def keep(state, trace):
            if state.step_count % 10 == 0:
                snapshots[state.t] = state.curve

        config = StepperConfig(stop_grad_tol=1e-6, stop_t_max=50.0)
        final, trace = evolve(make_curve("circle", 1.0, samples=64), config, params, on_step=keep)
        times = sorted(snapshots)
        report = diagnostics.cauchy_check([snapshots[t] for t in times], final.curve, times=times)
        loja = diagnostics.lojasiewicz_trace(trace)
        integrals = np.array([diagnostics.l1_velocity(loja, t) for t in times])
        np.testing.assert_allclose(report.consecutive, integrals[:-1] - integrals[1:], rtol=0.1, atol=1e-8)
        assert report.tail_decreasing is True
