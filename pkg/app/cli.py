"""
Command-line front end.

    python -m app.cli evolve --seed circle:1 --stop-grad 1e-6 --out runs/circle
    python -m app.cli grad-check --seed ellipse:1.2,0.8
    python -m app.cli fredholm-check --seed figure_eight:1

Exit status: 0 on success or convergence, 2 when an evolve run reaches
t_max without converging, 1 on any error.
"""
import sys
import json
import logging
import argparse
from pathlib import Path
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Dict, List, Optional, Sequence, Tuple

from pydantic import ValidationError

from app.config import ACTIVE_DIFF_SCHEME, DiffScheme, LOG_FILE, LOGGER_NAME, MAX_THREADS, VERSION
from app.models.curve import DiscreteCurve
from app.models.flow import FlowState, FlowTrace
from app.models.schemas import EnergyParams, RunConfig, SeedSpec
from app.numerics import diagnostics, geometry, graph, variation
from app.numerics.flow import evolve
from app.numerics.seeds import seed_curve
from app.storage.store import RunStore
from app.utils.error_handlers import ElasticFlowError, InvalidSpecError

logger = logging.getLogger(LOGGER_NAME)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2


def configure_logging(log_file: str = LOG_FILE, level: str = "INFO") -> None:
    """Log to a file and to the console."""
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(log_file),
            logging.StreamHandler()
        ],
        force=True,
    )


def _emit(payload: Dict[str, Any]) -> None:
    print(json.dumps(payload, indent=2))


def _parse_seed(text: str, samples: Optional[int] = None, dim: Optional[int] = None,
                scheme: Optional[str] = None) -> SeedSpec:
    try:
        return SeedSpec.parse(text, samples=samples, dim=dim, scheme=scheme)
    except (ValidationError, ValueError) as e:
        raise InvalidSpecError(f"Invalid seed specification '{text}'", {"error": str(e)})


def _load_curve(args: argparse.Namespace) -> DiscreteCurve:
    """Curve from --curve FILE or --seed SPEC."""
    scheme = DiffScheme(args.scheme) if args.scheme else ACTIVE_DIFF_SCHEME
    if args.curve:
        return RunStore(".").read_curve(args.curve, scheme=scheme)
    if not args.seed:
        raise InvalidSpecError("Provide --seed or --curve")
    return seed_curve(_parse_seed(args.seed, args.samples, args.dim, args.scheme))


def _params(args: argparse.Namespace) -> EnergyParams:
    try:
        return EnergyParams() if args.lam is None else EnergyParams(lam=args.lam)
    except ValidationError as e:
        raise InvalidSpecError("Invalid energy parameters", {"error": str(e)})


# Subcommands
def cmd_seed(args: argparse.Namespace) -> int:
    curve = _load_curve(args)
    target = RunStore(".").write_curve(curve, args.out)
    logger.info(f"Seed curve written to {target}")
    return EXIT_OK


def cmd_energy(args: argparse.Namespace) -> int:
    curve, params = _load_curve(args), _params(args)
    G = variation.gradient(curve, params)
    _emit({
        "energy": variation.elastic_energy(curve, params),
        "length": geometry.length(curve),
        "grad_norm_l2ds": geometry.norm_l2ds(G, curve),
        "dual_grad_norm": diagnostics.dual_grad_norm(curve, params, G),
    })
    return EXIT_OK


def cmd_grad_check(args: argparse.Namespace) -> int:
    curve, params = _load_curve(args), _params(args)
    result = variation.gradient_check(curve, params, args.fields, args.rng_seed, args.step)
    _emit(result)
    return EXIT_OK if result["passed"] else EXIT_ERROR


def _operator(args: argparse.Namespace, curve: DiscreteCurve):
    if args.operator == "hessian":
        return variation.hessian_matrix(curve, _params(args))
    return variation.id_plus_nabla4_matrix(curve)


def cmd_hessian(args: argparse.Namespace) -> int:
    curve = _load_curve(args)
    op = variation.hessian_matrix(curve, _params(args))
    store = RunStore(".")
    if args.out:
        store.write_operator(op, args.out)
        if args.split:
            stem = Path(args.out)
            store.write_operator(variation.leading_part_matrix(curve, op.basis), stem.with_suffix(".nabla4.bin"))
            store.write_operator(variation.lower_order_matrix(op), stem.with_suffix(".lower.bin"))
    _emit({
        "size": op.size,
        "symmetry_defect": op.symmetry_defect,
        "relative_defect": op.symmetry_defect / op.scale,
        "kernel_dim": variation.kernel_dim(op, curve, args.rel_tol),
    })
    return EXIT_OK


def cmd_spectrum(args: argparse.Namespace) -> int:
    curve = _load_curve(args)
    op = _operator(args, curve)
    eigenvalues = variation.weighted_spectrum(op)
    if args.out:
        RunStore(".").write_spectrum(eigenvalues, args.out)
    _emit({
        "operator": op.kind,
        "size": op.size,
        "min_eigenvalue": float(eigenvalues[0]),
        "max_eigenvalue": float(eigenvalues[-1]),
        "kernel_dim": variation.kernel_dim(op, curve, args.rel_tol),
    })
    return EXIT_OK


def cmd_fredholm_check(args: argparse.Namespace) -> int:
    result = variation.fredholm_check(_load_curve(args), args.tol)
    _emit(result)
    return EXIT_OK if result["passed"] else EXIT_ERROR


def cmd_graph(args: argparse.Namespace) -> int:
    store = RunStore(".")
    scheme = DiffScheme(args.scheme) if args.scheme else ACTIVE_DIFF_SCHEME
    reference = store.read_curve(args.reference, scheme=scheme)
    sigma = store.read_curve(args.curve, scheme=scheme)
    tub = graph.tubular_data(reference)
    field = graph.normal_graph(tub, sigma)
    store.write_field(field, args.out)
    _emit({"radius": tub.radius, "sup_norm": float(abs(field.values).max()), "out": str(args.out)})
    return EXIT_OK


def cmd_loja_fit(args: argparse.Namespace) -> int:
    store = RunStore(".")
    trace = diagnostics.lojasiewicz_trace(store.read_trace(args.trace), args.e_ref)
    window = tuple(args.window)
    fit = diagnostics.fit_alpha(trace, window)
    store.write_json(fit.to_dict(), args.out)
    if args.plot_data:
        store.write_frame(diagnostics.plot_data(trace, window), args.plot_data)
    _emit(fit.to_dict())
    return EXIT_OK


# Runs
def _stepper_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    flags = {
        "scheme": args.integrator,
        "dt_init": args.dt_init,
        "dt_min": args.dt_min,
        "dt_max": args.dt_max,
        "energy_tol": args.energy_tol,
        "stop_grad_tol": args.stop_grad,
        "stop_t_max": args.t_max,
        "checkpoint_every": args.checkpoint_every,
        "growth_after": args.growth_after,
    }
    if args.no_redistribute:
        flags["redistribute"] = False
    return {key: value for key, value in flags.items() if value is not None}


def build_run_config(args: argparse.Namespace) -> RunConfig:
    """RunConfig from --config FILE with command-line flags taking precedence."""
    try:
        data: Dict[str, Any] = RunStore(".").read_json(args.config) if args.config else {}
        if args.seed:
            data["seed"] = _parse_seed(args.seed, args.samples, args.dim, args.scheme).model_dump()
            data.pop("curve_file", None)
        elif args.curve:
            data["curve_file"] = args.curve
            data.pop("seed", None)
        stepper = dict(data.get("stepper", {}))
        stepper.update(_stepper_overrides(args))
        data["stepper"] = stepper
        if args.lam is not None:
            data["energy"] = {"lambda": args.lam}
        if args.out:
            data["output_dir"] = args.out
        if args.snapshot_every is not None:
            data["snapshot_every"] = args.snapshot_every
        if args.loja:
            data["loja"] = True
        if args.window:
            data["fit_window"] = tuple(args.window)
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise InvalidSpecError("Invalid run configuration", {"error": str(e)})


def _initial_curve(config: RunConfig) -> DiscreteCurve:
    if config.seed is not None:
        return seed_curve(config.seed)
    return RunStore(".").read_curve(config.curve_file)


def run(config: RunConfig, resume: Optional[Path] = None) -> Tuple[int, Optional[FlowState], Optional[FlowTrace]]:
    """
    Execute one evolve run and write its artifacts into config.output_dir:
    manifest.json, trace.csv, final_curve.json, summary.json, snapshots/,
    checkpoint/ and, with loja set, fit.json and plot_data.csv.

    Returns:
        tuple: (exit status, final state, trace)
    """
    store = RunStore(config.output_dir)
    store.write_manifest(config)
    initial = _initial_curve(config)
    state, trace = None, None
    if resume is not None:
        state, trace = RunStore(resume).read_checkpoint(".")
    progress: Dict[str, Any] = {}

    def on_step(current: FlowState, current_trace: FlowTrace) -> None:
        progress["trace"] = current_trace
        count = current.step_count
        if config.stepper.checkpoint_every and count % config.stepper.checkpoint_every == 0:
            store.write_checkpoint(current, current_trace, "checkpoint")
        if config.snapshot_every and count % config.snapshot_every == 0:
            store.write_curve(current.curve, Path("snapshots") / f"curve_{count:06d}.json")

    if config.snapshot_every and state is None:
        store.write_curve(initial, Path("snapshots") / f"curve_{0:06d}.json")

    logger.info(f"Run started: output directory {store.root}")
    try:
        state, trace = evolve(initial, config.stepper, config.energy, state=state, trace=trace, on_step=on_step)
    except ElasticFlowError:
        if "trace" in progress:
            store.write_trace(progress["trace"], "trace.csv")
        raise

    store.write_trace(trace, "trace.csv")
    store.write_curve(state.curve, "final_curve.json")
    summary = {
        "converged": trace.converged,
        "steps": state.step_count,
        "t": state.t,
        "energy": state.energy,
        "grad_norm_l2ds": state.grad_norm_l2ds,
        **diagnostics.length_bounds(trace),
        **diagnostics.curvature_bounds(trace),
    }
    if config.loja:
        loja = diagnostics.lojasiewicz_trace(trace)
        fit = diagnostics.fit_alpha(loja, config.fit_window)
        store.write_json(fit.to_dict(), "fit.json")
        store.write_frame(diagnostics.plot_data(loja, config.fit_window), "plot_data.csv")
        summary["alpha"] = fit.alpha
        summary["h_dissipation_constant"] = diagnostics.h_dissipation_constant(loja, fit.alpha, config.fit_window[0])
    store.write_json(summary, "summary.json")

    status = EXIT_OK if trace.converged else EXIT_NOT_CONVERGED
    logger.info(f"Run finished with status {status}")
    return status, state, trace


def _run_entry(data: Dict[str, Any]) -> int:
    # Worker-process entry of a sweep
    try:
        return run(RunConfig.model_validate(data))[0]
    except Exception as e:
        logger.error(f"Sweep entry {data.get('output_dir')} failed: {str(e)}", exc_info=True)
        return EXIT_ERROR


def run_sweep(configs: List[RunConfig], workers: Optional[int] = None) -> int:
    """
    Run independent configs on a process pool capped by ELASTICA_THREADS.
    The sweep status is the worst of its runs (error over non-convergence).
    """
    directories = [config.output_dir.resolve() for config in configs]
    if len(set(directories)) != len(directories):
        raise InvalidSpecError("Sweep entries must use distinct output directories")
    workers = max(1, min(workers or MAX_THREADS, len(configs)))
    logger.info(f"Sweep of {len(configs)} runs on {workers} worker(s)")
    payloads = [config.model_dump(mode="json", by_alias=True) for config in configs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        statuses = list(pool.map(_run_entry, payloads))
    if EXIT_ERROR in statuses:
        return EXIT_ERROR
    return EXIT_NOT_CONVERGED if EXIT_NOT_CONVERGED in statuses else EXIT_OK


def cmd_evolve(args: argparse.Namespace) -> int:
    if args.sweep:
        entries = RunStore(".").read_json(args.sweep)
        try:
            configs = [RunConfig.model_validate(entry) for entry in entries]
        except (ValidationError, TypeError) as e:
            raise InvalidSpecError("Invalid sweep file", {"error": str(e)})
        return run_sweep(configs)
    config = build_run_config(args)
    status, state, _ = run(config, Path(args.resume) if args.resume else None)
    _emit({"converged": status == EXIT_OK, "steps": state.step_count, "t": state.t, "energy": state.energy})
    return status


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    logger.info("Starting Elastic Flow API")
    uvicorn.run("main:app", host=args.host, port=args.port, reload=args.reload)
    return EXIT_OK


def _add_curve_options(parser: argparse.ArgumentParser) -> None:
    source = parser.add_mutually_exclusive_group()
    source.add_argument("--seed", help="Seed curve, e.g. circle:1 or ellipse:1.2,0.8")
    source.add_argument("--curve", help="Curve JSON file")
    parser.add_argument("--samples", type=int, help="Grid size N of a seed curve")
    parser.add_argument("--dim", type=int, help="Ambient dimension n of a seed curve")
    parser.add_argument("--scheme", choices=[s.value for s in DiffScheme], help="Differentiation scheme")
    parser.add_argument("--lambda", dest="lam", type=float, default=None, help="Length weight λ (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="elastic-flow", description="Elastic flow of closed curves")
    parser.add_argument("--version", action="version", version=VERSION)
    parser.add_argument("--log-file", default=LOG_FILE)
    parser.add_argument("--log-level", default="INFO")
    commands = parser.add_subparsers(dest="command", required=True)

    evolve_parser = commands.add_parser("evolve", help="Run the elastic flow")
    _add_curve_options(evolve_parser)
    evolve_parser.add_argument("--config", help="RunConfig JSON file")
    evolve_parser.add_argument("--out", help="Output directory")
    evolve_parser.add_argument("--integrator", choices=["explicit", "semi_implicit"])
    evolve_parser.add_argument("--dt-init", type=float)
    evolve_parser.add_argument("--dt-min", type=float)
    evolve_parser.add_argument("--dt-max", type=float)
    evolve_parser.add_argument("--energy-tol", type=float)
    evolve_parser.add_argument("--stop-grad", type=float)
    evolve_parser.add_argument("--t-max", type=float)
    evolve_parser.add_argument("--growth-after", type=int)
    evolve_parser.add_argument("--checkpoint-every", type=int)
    evolve_parser.add_argument("--snapshot-every", type=int)
    evolve_parser.add_argument("--no-redistribute", action="store_true")
    evolve_parser.add_argument("--resume", help="Checkpoint directory to continue from")
    evolve_parser.add_argument("--loja", action="store_true", help="Fit the Łojasiewicz exponent at the end")
    evolve_parser.add_argument("--window", type=float, nargs=2, metavar=("G_MIN", "G_MAX"))
    evolve_parser.add_argument("--sweep", help="JSON list of RunConfigs to run in parallel")
    evolve_parser.set_defaults(handler=cmd_evolve)

    energy_parser = commands.add_parser("energy", help="Energy, length and gradient norms of a curve")
    _add_curve_options(energy_parser)
    energy_parser.set_defaults(handler=cmd_energy)

    check_parser = commands.add_parser("grad-check", help="Compare the gradient with finite differences")
    _add_curve_options(check_parser)
    check_parser.add_argument("--fields", type=int, default=20)
    check_parser.add_argument("--rng-seed", type=int, default=0)
    check_parser.add_argument("--step", type=float, default=1e-5)
    check_parser.set_defaults(handler=cmd_grad_check)

    hessian_parser = commands.add_parser("hessian", help="Assemble the finite-difference Hessian")
    _add_curve_options(hessian_parser)
    hessian_parser.add_argument("--out", help="Binary operator dump")
    hessian_parser.add_argument("--split", action="store_true", help="Also dump the (∇⊥)⁴ and lower-order parts")
    hessian_parser.add_argument("--rel-tol", type=float, default=variation.KERNEL_REL_TOL)
    hessian_parser.set_defaults(handler=cmd_hessian)

    spectrum_parser = commands.add_parser("spectrum", help="Weighted spectrum of an operator")
    _add_curve_options(spectrum_parser)
    spectrum_parser.add_argument("--operator", choices=["hessian", "id_plus_nabla4"], default="hessian")
    spectrum_parser.add_argument("--out", help="CSV file (index, eigenvalue)")
    spectrum_parser.add_argument("--rel-tol", type=float, default=variation.KERNEL_REL_TOL)
    spectrum_parser.set_defaults(handler=cmd_spectrum)

    fredholm_parser = commands.add_parser("fredholm-check", help="Coercivity of Id + (∇⊥)⁴")
    _add_curve_options(fredholm_parser)
    fredholm_parser.add_argument("--tol", type=float, default=1e-6)
    fredholm_parser.set_defaults(handler=cmd_fredholm_check)

    graph_parser = commands.add_parser("graph", help="Normal graph of a curve over a reference")
    graph_parser.add_argument("--reference", required=True)
    graph_parser.add_argument("--curve", required=True)
    graph_parser.add_argument("--out", required=True)
    graph_parser.add_argument("--scheme", choices=[s.value for s in DiffScheme])
    graph_parser.set_defaults(handler=cmd_graph)

    fit_parser = commands.add_parser("loja-fit", help="Fit the Łojasiewicz exponent of a trace")
    fit_parser.add_argument("--trace", required=True)
    fit_parser.add_argument("--out", required=True)
    fit_parser.add_argument("--plot-data")
    fit_parser.add_argument("--e-ref", type=float)
    fit_parser.add_argument("--window", type=float, nargs=2, default=list(diagnostics.DEFAULT_WINDOW), metavar=("G_MIN", "G_MAX"))
    fit_parser.set_defaults(handler=cmd_loja_fit)

    seed_parser = commands.add_parser("seed", help="Write a seed curve")
    _add_curve_options(seed_parser)
    seed_parser.add_argument("--out", required=True)
    seed_parser.set_defaults(handler=cmd_seed)

    serve_parser = commands.add_parser("serve", help="Serve the HTTP API")
    serve_parser.add_argument("--host", default="0.0.0.0")
    serve_parser.add_argument("--port", type=int, default=8000)
    serve_parser.add_argument("--reload", action="store_true")
    serve_parser.set_defaults(handler=cmd_serve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_file, args.log_level)
    try:
        return args.handler(args)
    except ElasticFlowError as e:
        logger.error(f"{type(e).__name__}: {e.message} {e.details or ''}")
        return EXIT_ERROR
    except Exception as e:
        logger.error(f"Unexpected error: {str(e)}", exc_info=True)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
