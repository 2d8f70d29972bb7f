import numpy as np
import pytest
from pydantic import ValidationError

from app.config import DiffScheme
from app.models.curve import DiscreteCurve
from app.models.diagnostics import LojaFit, LojaTrace
from app.models.flow import FlowState, FlowTrace, TraceRow, TRACE_COLUMNS
from app.models.operators import NormalBasis, OperatorMatrix
from app.models.schemas import EnergyParams, RunConfig, SeedSpec, StepperConfig, StepScheme
from app.numerics.seeds import seed_curve
from app.utils.error_handlers import InvalidSpecError, NegativeGapError
from tests.conftest import make_curve


class TestDiscreteCurveModel:
    """Tests for the curve model and its file layout."""

    def test_curve_creation(self, unit_circle):
        """Test creating a curve with valid samples."""
        assert unit_circle.samples == 256
        assert unit_circle.dim == 2
        assert unit_circle.scheme is DiffScheme.SPECTRAL
        assert unit_circle.curve_id is not None
        assert unit_circle.spacing == pytest.approx(2 * np.pi / 256)

    def test_curve_dict_round_trip(self, ellipse):
        """Test converting a curve to the curve-file dictionary and back."""
        data = ellipse.to_dict()
        assert data["dim"] == 2
        assert data["samples"] == 256
        restored = DiscreteCurve.from_dict(data)
        np.testing.assert_array_equal(restored.points, ellipse.points)
        assert restored.curve_id != ellipse.curve_id

    def test_header_must_match_points(self, ellipse):
        """Test that a curve file whose header disagrees with its points is rejected."""
        data = ellipse.to_dict()
        data["samples"] = 128
        with pytest.raises(ValueError):
            DiscreteCurve.from_dict(data)

    def test_scheme_from_string(self):
        """Test that a scheme given by value is converted."""
        points = make_curve("circle", 1.0, samples=32).points
        curve = DiscreteCurve(points, scheme="fd4")
        assert curve.scheme is DiffScheme.FD4


class TestFlowModels:
    """Tests for the flow state and trace models."""

    def test_state_validation(self, unit_circle):
        """Test FlowState validation for invalid data."""
        with pytest.raises(ValueError):
            FlowState(unit_circle, t=0.0, energy=float("nan"), grad_norm_l2ds=1.0, dt_last=0.0, dt_next=1e-3)
        with pytest.raises(ValueError):
            FlowState(unit_circle, t=0.0, energy=1.0, grad_norm_l2ds=-1.0, dt_last=0.0, dt_next=1e-3)
        with pytest.raises(ValueError):
            FlowState(unit_circle, t=0.0, energy=1.0, grad_norm_l2ds=1.0, dt_last=0.0, dt_next=0.0)

    def test_state_dict_round_trip(self, unit_circle):
        """Test converting a state to its checkpoint dictionary and back."""
        state = FlowState(unit_circle, t=0.5, energy=3.0, grad_norm_l2ds=0.1, dt_last=1e-3,
                          dt_next=2e-3, step_count=7, accept_streak=3, origin=[0.5, -0.5])
        data = state.to_dict()
        assert data["scheme"] == "spectral"
        restored = FlowState.from_dict(data, unit_circle)
        assert restored.t == state.t
        assert restored.step_count == 7
        assert restored.accept_streak == 3
        np.testing.assert_array_equal(restored.origin, [0.5, -0.5])

    def test_origin_defaults_to_zero(self, unit_circle):
        """Test that a missing origin is the zero vector."""
        state = FlowState(unit_circle, t=0.0, energy=1.0, grad_norm_l2ds=1.0, dt_last=0.0, dt_next=1e-3)
        np.testing.assert_array_equal(state.origin, [0.0, 0.0])

    def test_trace_frame_columns(self):
        """Test that the trace frame has the file columns in order."""
        row = TraceRow(0, 0.0, 0.0, 3.0, 1.0, 1.0, 1.0, 6.28, 1.0, 2.5, 0.0, 0.0, 1.0)
        trace = FlowTrace(rows=[row])
        frame = trace.to_frame()
        assert list(frame.columns) == TRACE_COLUMNS
        restored = FlowTrace.from_frame(frame)
        assert restored.rows[0] == row

    def test_trace_frame_missing_column(self):
        """Test that a trace table without every column is rejected."""
        row = TraceRow(0, 0.0, 0.0, 3.0, 1.0, 1.0, 1.0, 6.28, 1.0, 2.5, 0.0, 0.0, 1.0)
        frame = FlowTrace(rows=[row]).to_frame().drop(columns=["energy"])
        with pytest.raises(ValueError):
            FlowTrace.from_frame(frame)

    def test_loja_trace_gap_floor(self):
        """Test that a diagnostics trace accepts round-off gaps and rejects negative ones."""
        columns = {"t": [0.0, 1.0, 2.0], "dual_grad_norm": [1.0, 0.5, 0.1],
                   "vel_l2dtheta": [1.0, 0.5, 0.1], "length": [1.0, 1.0, 1.0]}
        trace = LojaTrace(energy_gap=[1e-3, 1e-6, -5e-13], **columns)
        assert len(trace) == 3
        with pytest.raises(NegativeGapError) as exc_info:
            LojaTrace(energy_gap=[1e-3, -1e-9, 0.0], **columns)
        assert exc_info.value.details["t"] == 1.0
        assert exc_info.value.details["gap"] == -1e-9


class TestOperatorModels:
    """Tests for the normal basis and operator matrix models."""

    def test_basis_frame_shape(self, unit_circle):
        """Test that the frame must have shape N × (n − 1) × n."""
        with pytest.raises(ValueError):
            NormalBasis(unit_circle, np.zeros((256, 2, 2)))

    def test_operator_must_be_square(self, unit_circle):
        """Test OperatorMatrix validation."""
        basis = NormalBasis(unit_circle, np.zeros((256, 1, 2)))
        with pytest.raises(ValueError):
            OperatorMatrix(np.zeros((256, 255)), np.ones(256), basis, "hessian")
        with pytest.raises(ValueError):
            OperatorMatrix(np.zeros((256, 256)), np.ones(10), basis, "hessian")
        with pytest.raises(ValueError):
            OperatorMatrix(np.full((256, 256), np.inf), np.ones(256), basis, "hessian")

    def test_lojasiewicz_fit_range(self):
        """Test that a fitted alpha outside (0, 1] is rejected."""
        with pytest.raises(ValueError):
            LojaFit(alpha=0.0, C=1.0, window=(1e-10, 1e-2), residual=0.0, violations=0, points=10,
                    slope=1.0, c_envelope=1.0)


class TestSchemas:
    """Tests for configuration schemas."""

    def test_energy_params_alias(self):
        """Test that λ is accepted as 'lambda' and must be positive."""
        assert EnergyParams(**{"lambda": 2.0}).lam == 2.0
        assert EnergyParams(lam=0.5).lam == 0.5
        with pytest.raises(ValidationError):
            EnergyParams(lam=0.0)

    def test_stepper_defaults(self):
        """Test the default stepper configuration."""
        config = StepperConfig()
        assert config.scheme is StepScheme.SEMI_IMPLICIT
        assert config.redistribute is True
        assert config.growth_after == 10

    def test_stepper_bounds(self):
        """Test that dt_init must lie between dt_min and dt_max."""
        with pytest.raises(ValidationError):
            StepperConfig(dt_init=1.0, dt_max=0.1)

    def test_seed_parse(self):
        """Test the command-line seed syntax."""
        spec = SeedSpec.parse("ellipse:1.2,0.8", samples=64)
        assert spec.kind == "ellipse"
        assert spec.params == [1.2, 0.8]
        assert spec.samples == 64

    def test_seed_parse_perturbed_circle(self):
        """Test the seed syntax with modes, amplitude and generator seed."""
        spec = SeedSpec.parse("fourier_perturbed_circle:1,2/3,0.05,7")
        assert spec.params == [1.0]
        assert spec.modes == [2, 3]
        assert spec.amplitude == 0.05
        assert spec.rng_seed == 7

    def test_seed_requires_even_samples(self):
        """Test that odd grid sizes are rejected."""
        with pytest.raises(ValidationError):
            SeedSpec(kind="circle", params=[1.0], samples=33)

    def test_run_config_needs_one_source(self, tmp_path):
        """Test that exactly one of seed and curve_file is required."""
        with pytest.raises(ValidationError):
            RunConfig()
        with pytest.raises(ValidationError):
            RunConfig(seed=SeedSpec(kind="circle", params=[1.0]), curve_file=tmp_path / "curve.json")
        config = RunConfig(seed=SeedSpec(kind="circle", params=[1.0]))
        assert config.fit_window == (1e-10, 1e-2)

    def test_run_config_window(self):
        """Test that the fit window must be ordered and positive."""
        with pytest.raises(ValidationError):
            RunConfig(seed=SeedSpec(kind="circle", params=[1.0]), fit_window=(1e-2, 1e-10))


class TestSeeds:
    """Tests for the seed curve generators."""

    def test_every_kind(self):
        """Test that every generator gives a regular curve of the requested size."""
        specs = [
            SeedSpec(kind="circle", params=[1.0], samples=64),
            SeedSpec(kind="ellipse", params=[2.0, 1.0], samples=64),
            SeedSpec(kind="w_covered_circle", params=[1.0, 3.0], samples=64),
            SeedSpec(kind="figure_eight", params=[1.0], samples=64, dim=3),
            SeedSpec(kind="fourier_perturbed_circle", params=[1.0], samples=64, modes=[2], amplitude=0.1, rng_seed=1),
        ]
        for spec in specs:
            curve = seed_curve(spec)
            assert curve.points.shape == (64, spec.dim)

    def test_perturbed_circle_is_deterministic(self):
        """Test that a fixed generator seed gives the same curve."""
        first = make_curve("fourier_perturbed_circle", 1.0, samples=64, modes=[2, 3], amplitude=0.05, rng_seed=3)
        second = make_curve("fourier_perturbed_circle", 1.0, samples=64, modes=[2, 3], amplitude=0.05, rng_seed=3)
        np.testing.assert_array_equal(first.points, second.points)

    @pytest.mark.parametrize("kind, params, extra", [
        ("circle", [-1.0], {}),
        ("circle", [1.0, 2.0], {}),
        ("w_covered_circle", [1.0, 1.5], {}),
        ("fourier_perturbed_circle", [1.0], {"modes": [40], "amplitude": 0.1}),
        ("fourier_perturbed_circle", [1.0], {"modes": [2], "amplitude": 1.0}),
    ])
    def test_invalid_specs(self, kind, params, extra):
        """Test that bad parameters raise InvalidSpecError."""
        with pytest.raises(InvalidSpecError):
            seed_curve(SeedSpec(kind=kind, params=params, samples=64, **extra))
