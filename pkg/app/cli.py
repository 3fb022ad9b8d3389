"""
Command-line surface: `python main.py <subcommand> ...`.

Exit codes: 0 success, 1 invariant or certification failure, 2 usage or
configuration error, 3 numerical blowup.
"""

import argparse
import logging
import logging.config
import os
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from .config import RunConfig, build_config, dump_manifest, load_manifest, max_workers, output_root
from .core.builder import CAUCHY_COLUMNS, ConstructionRun, decay_fit
from .core.evolution import Direction, evolve, track_peak_speed
from .core.functionals import CutoffSystem, localized_functionals
from .core.grid import Grid, h_norm
from .core.modulation import modulate, parameter_drift_bound_check, unstable_projections
from .core.solitons import Regime, SolitonParams, mass, soliton_sum
from .core.spectrum import assemble_linearized, certify_spectrum, mode_grid, modes_for, reconstruct_gamma0, sweep
from .core.worker import JobRunner, JobType
from .exceptions import (
    EXIT_BLOWUP,
    EXIT_INVARIANT,
    EXIT_OK,
    EXIT_USAGE,
    InsufficientDataError,
    LabError,
    NumericalBlowupError,
    exit_code_for,
    register_exit_codes,
)
from .persistence import load_trajectory, save_checkpoint, write_report, write_rows
from .reporting import write_summary

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
DEFAULT_LOG_CONFIG = "logging_config.yml"
ANALYTIC_TOLERANCE = 1e-6


def setup_logging(verbose: bool = False):
    path = Path(os.environ.get("BLAB_LOG_CONFIG", DEFAULT_LOG_CONFIG))
    if path.is_file():
        with open(path) as handle:
            logging.config.dictConfig(yaml.safe_load(handle))
    else:
        logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)
        logging.getLogger("app").setLevel(logging.DEBUG)


def _emit(lines: Sequence[str]):
    for line in lines:
        print(line)


def _single_config(args, **extra) -> RunConfig:
    values = {"p": args.p, "solitons": [{"omega": args.omega, "x0": args.x0}], **extra}
    return build_config({k: v for k, v in values.items() if v is not None})


def _config(args, **extra) -> RunConfig:
    if getattr(args, "config", None):
        return load_manifest(args.config, **extra)
    if args.p is None or args.omega is None:
        raise argparse.ArgumentTypeError("either --config or both --p and --omega are required")
    return _single_config(args, **extra)


def _out(args, default: Path) -> Path:
    return Path(args.out) if getattr(args, "out", None) else default


def cmd_soliton(args) -> int:
    family_grid = _single_config(args).grid()
    params = SolitonParams(p=args.p, omega=args.omega, x0=args.x0)
    result = JobRunner().run_one(JobType.SOLITON, {"params": params, "grid": family_grid})
    if not result.ok:
        raise result.error
    state, residual = result.value
    out = _out(args, output_root() / f"soliton_p{args.p:g}_w{args.omega:g}")
    write_rows(out / "profile.csv", ({"x": x, "u1": a, "u2": b} for x, a, b in zip(state.grid.x, state.u1, state.u2)))
    lines = [
        f"p: {args.p}",
        f"omega: {args.omega}",
        f"x0: {args.x0}",
        f"grid: L={family_grid.half_length} n={family_grid.n_points}",
        f"mass: {mass(args.p, args.omega):.12g}",
        f"h_norm: {h_norm(state):.12g}",
        f"elliptic_residual: {residual:.3e}",
    ]
    write_report(out / "soliton.txt", lines)
    _emit(lines)
    return EXIT_OK


def _localized_rows(trajectory, family, t_min: float) -> list[dict]:
    cutoffs = CutoffSystem.for_family(family)
    return [
        localized_functionals(s, family, cutoffs, family.p).as_row()
        for s in sorted(trajectory.states, key=lambda s: s.time)
        if s.time >= t_min and s.time > 0
    ]


def cmd_evolve(args) -> int:
    direction = Direction.BACKWARD if args.backward else None
    cfg = _config(args, t_end=args.t_end, direction=direction, dt=args.dt)
    family = cfg.family()
    horizon = max(abs(cfg.t_start), abs(cfg.t_end))
    grid = cfg.grid(horizon=horizon)
    initial = soliton_sum(family, grid, cfg.t_start)
    out = _out(args, cfg.run_dir())
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.txt").write_text(dump_manifest(cfg))

    result = JobRunner(timing_dir=out).run_one(JobType.EVOLVE, {"initial": initial, "config": cfg.evolve_config()})
    if not result.ok:
        raise result.error
    trajectory = result.value
    write_rows(out / "conservation.csv", trajectory.history)
    save_checkpoint(out / "trajectory.ckpt", trajectory.states)
    final = trajectory.final
    lines = [
        f"t_start: {cfg.t_start}",
        f"t_end: {final.time:.12g}",
        f"grid: L={grid.half_length} n={grid.n_points}",
        f"checkpoints: {len(trajectory.states)}",
        f"wall_seconds: {trajectory.wall_seconds:.3f}",
        f"energy_drift: {max(r['energy_drift'] for r in trajectory.history):.3e}",
        f"momentum_drift: {max(r['momentum_drift'] for r in trajectory.history):.3e}",
    ]
    if family.size == 1:
        exact = soliton_sum(family, grid, final.time)
        lines += [
            f"analytic_sup_error: {float(np.max(np.abs(final.u1 - exact.u1))):.3e}",
            f"analytic_tolerance: {ANALYTIC_TOLERANCE:g}",
            f"peak_speed: {track_peak_speed(trajectory):.10f}",
        ]
    else:
        rows = _localized_rows(trajectory, family, cfg.t0)
        if rows:
            write_rows(out / "localized.csv", rows)
    if args.roundtrip:
        back_cfg = cfg.evolve_config(t_end=cfg.t_start, direction=Direction.BACKWARD if not args.backward else Direction.FORWARD)
        returned = evolve(final, back_cfg).final
        lines.append(f"roundtrip_h_error: {h_norm(returned - initial):.3e}")
    write_report(out / "evolve.txt", lines)
    _emit(lines)
    return EXIT_OK


def cmd_modulate(args) -> int:
    cfg = _config(args)
    family = cfg.family()
    states = load_trajectory(args.checkpoint)
    mode = Regime(args.mode) if args.mode else None
    out = _out(args, cfg.run_dir())
    rows = []
    modes = None
    if (mode or family.regime) == Regime.SUPERCRITICAL:
        modes = [modes_for(family.p, float(w)) for w in family.omegas]
        if any(m is None for m in modes):
            modes = None
    for state in states if args.all else states[-1:]:
        decomposition = modulate(state, family, mode)
        gammas = unstable_projections(decomposition, modes) if modes is not None else None
        rows.append(decomposition.as_row(gammas))
    write_rows(out / "modulation.csv", rows)
    if args.drift and len(states) > 1:
        report = parameter_drift_bound_check(states, family, mode, max_workers())
        if report.rows:
            write_rows(out / "drift.csv", report.rows)
        print(f"drift_ratio_max: {report.max_ratio:.4e}")
    for key, value in rows[-1].items():
        print(f"{key}: {value:.12g}")
    return EXIT_OK


def _spectrum_grid(args) -> Grid:
    if args.n_points:
        return Grid(args.half_length, args.n_points)
    return mode_grid(args.p, args.omega)


def cmd_spectrum(args) -> int:
    if args.sweep:
        p_values = args.p_values or [args.p]
        omega_values = args.omega_values or [args.omega]
        factory = (lambda p, w: Grid(args.half_length, args.n_points)) if args.n_points else None
        rows = sweep(p_values, omega_values, factory, max_workers())
        out = _out(args, output_root() / "spectrum_sweep")
        write_rows(out / "sweep.csv", rows)
        for row in rows:
            print(", ".join(f"{k}={v}" for k, v in row.items()))
        return EXIT_OK

    if args.p is None or args.omega is None:
        raise argparse.ArgumentTypeError("spectrum needs --p and --omega (or --sweep)")
    assembly = assemble_linearized(args.p, args.omega, _spectrum_grid(args))
    report = certify_spectrum(assembly, strict=False)
    _, correlation = reconstruct_gamma0(assembly, report)
    lines = report.as_lines() + [f"gamma0_correlation: {correlation:.10f}"]
    if report.unstable_rate is not None:
        modes = modes_for(args.p, args.omega)
        biorthogonality = modes.biorthogonality()
        lines += [
            f"pw_residual: {modes.residual:.3e}",
            f"biorthogonality_defect: {np.max(np.abs(biorthogonality - np.array([[0, 1], [1, 0]]))):.3e}",
        ]
    out = _out(args, output_root() / f"spectrum_p{args.p:g}_w{args.omega:g}")
    write_report(out / "spectrum.txt", lines)
    _emit(lines)
    return EXIT_OK if report.certified else EXIT_INVARIANT


def _write_construction(run: ConstructionRun, cfg: RunConfig, out: Path):
    write_rows(out / "errors.csv", run.error_rows(), ["T", "t", "error_h", "bound"])
    completed = run.completed
    write_rows(out / "cauchy.csv", run.cauchy_rows(), CAUCHY_COLUMNS)
    write_rows(out / "failures.csv", [{"T": T, "reason": r} for T, r in run.failures.items()], ["T", "reason"])
    for T, rows in run.diagnostics.items():
        if rows:
            write_rows(out / f"diagnostics_T{T:g}.csv", rows)
    for T in completed:
        save_checkpoint(out / f"u_T{T:g}.ckpt", run.trajectories[T].states)
    if run.alphas:
        write_rows(
            out / "shooting.csv",
            [
                {
                    "T": T,
                    "objective": run.objectives[T],
                    "alpha_norm": float(np.linalg.norm(run.alphas[T])),
                    "a_norm": float(np.linalg.norm(run.targets[T])),
                    "alpha_bounded": run.alpha_bounded[T],
                }
                for T in run.alphas
            ],
            ["T", "objective", "alpha_norm", "a_norm", "alpha_bounded"],
        )
    try:
        fit = decay_fit(run, t_min=cfg.t0)
    except InsufficientDataError as e:
        logger.warning(f"No decay fit for {out}: {e}")
        return
    write_report(out / "decay.txt", [
        f"rate: {fit.rate:.10g}",
        f"constant: {fit.constant:.10g}",
        f"r2: {fit.r2:.10f}",
        f"theory_rate: {run.family.omega_star**1.5:.6e}",
    ])


def cmd_multisoliton(args) -> int:
    configs = [load_manifest(path, output_dir=args.out if len(args.config) == 1 else None) for path in args.config]
    workers = max_workers()
    runner = JobRunner(max_workers=workers, timing_dir=output_root())
    jobs = []
    for cfg in configs:
        family = cfg.family()
        jobs.append(runner.make_job(JobType.MULTISOLITON, {
            "family": family,
            "t0": cfg.t0,
            "final_times": list(cfg.final_times),
            "config": cfg.evolve_config(),
            "shoot_config": cfg.shoot_config(),
            "max_workers": workers,
            "strict": False,
        }))
    code = EXIT_OK
    for cfg, result in zip(configs, runner.run(jobs)):
        out = cfg.run_dir()
        out.mkdir(parents=True, exist_ok=True)
        (out / "manifest.txt").write_text(dump_manifest(cfg))
        if not result.ok:
            logger.error(f"Run {cfg.name} failed: {result.error}")
            code = max(code, exit_code_for(result.error))
            continue
        run: ConstructionRun = result.value
        _write_construction(run, cfg, out)
        if run.failures:
            blowups = cfg.regime == Regime.SUBCRITICAL
            code = max(code, EXIT_BLOWUP if blowups else EXIT_INVARIANT)
        print(f"{cfg.name}: completed T^n={run.completed}, cauchy={[f'{c:.3e}' for c in run.cauchy_series]}")
    return code


def cmd_report(args) -> int:
    path, passed = write_summary(args.directory)
    _emit(path.read_text().splitlines())
    return EXIT_OK if passed else EXIT_INVARIANT


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="boussinesq-lab",
        description="Solitons and multi-solitons of the good Boussinesq equation",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python main.py soliton --p 1 --omega 0.5
  python main.py spectrum --p 1 --omega 0
  python main.py spectrum --sweep --p-values 1 3 --omega-values 0 0.3 0.6
  python main.py multisoliton --config runs/two_solitons.txt
  python main.py report runs/two_solitons
        """,
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="DEBUG logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def soliton_flags(p, required=False):
        p.add_argument("--p", type=float, required=required, help="nonlinearity exponent")
        p.add_argument("--omega", type=float, required=required, help="soliton speed, |omega| < 1")
        p.add_argument("--x0", type=float, default=0.0)
        p.add_argument("--out", help="output directory")

    soliton = sub.add_parser("soliton", help="profile samples and elliptic residual")
    soliton_flags(soliton, required=True)
    soliton.set_defaults(handler=cmd_soliton)

    evolve_p = sub.add_parser("evolve", help="forward/backward evolution with conservation CSV")
    soliton_flags(evolve_p)
    evolve_p.add_argument("--config", help="run manifest")
    evolve_p.add_argument("--t-end", type=float)
    evolve_p.add_argument("--dt", type=float)
    evolve_p.add_argument("--backward", action="store_true")
    evolve_p.add_argument("--roundtrip", action="store_true", help="integrate back and report the H error")
    evolve_p.set_defaults(handler=cmd_evolve)

    modulate_p = sub.add_parser("modulate", help="decompose a checkpoint")
    soliton_flags(modulate_p)
    modulate_p.add_argument("--config", help="run manifest")
    modulate_p.add_argument("--checkpoint", required=True)
    modulate_p.add_argument("--mode", choices=[r.value for r in Regime])
    modulate_p.add_argument("--all", action="store_true", help="every record of a trajectory file")
    modulate_p.add_argument("--drift", action="store_true", help="parameter drift bound over the trajectory")
    modulate_p.set_defaults(handler=cmd_modulate)

    spectrum_p = sub.add_parser("spectrum", help="linearized spectrum report")
    soliton_flags(spectrum_p)
    spectrum_p.add_argument("--n-points", type=int)
    spectrum_p.add_argument("--half-length", type=float, default=24.0)
    spectrum_p.add_argument("--sweep", action="store_true")
    spectrum_p.add_argument("--p-values", type=float, nargs="+")
    spectrum_p.add_argument("--omega-values", type=float, nargs="+")
    spectrum_p.set_defaults(handler=cmd_spectrum)

    multi = sub.add_parser("multisoliton", help="backward multi-soliton construction")
    multi.add_argument("--config", nargs="+", required=True, help="one or more run manifests")
    multi.add_argument("--out", help="output directory (single manifest only)")
    multi.set_defaults(handler=cmd_multisoliton)

    report = sub.add_parser("report", help="aggregate a run directory into summary.txt")
    report.add_argument("directory")
    report.set_defaults(handler=cmd_report)
    return parser


def cli_dispatch(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    setup_logging(args.verbose)
    register_exit_codes()
    try:
        return args.handler(args)
    except argparse.ArgumentTypeError as e:
        print(f"error: {e}")
        return EXIT_USAGE
    except NumericalBlowupError as e:
        logger.error(f"{args.command}: {e}")
        print(f"error: {e}")
        return EXIT_BLOWUP
    except LabError as e:
        logger.error(f"{args.command}: {e}")
        print(f"error: {e}")
        return e.exit_code
    except Exception as e:
        code = exit_code_for(e)
        logger.exception(f"{args.command} failed: {e}")
        print(f"error: {e}")
        return code
