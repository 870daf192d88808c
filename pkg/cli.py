import argparse
import logging
import sys
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from functools import wraps
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

import helicity
import lindblad
import micromag
import thiele
import transmon
from data_store import ResultStore, RunManifest, file_sha256, write_manifest
from errors import EmptyWindow, SchemaError, SkyrlabError
from geometry import build_t_track, mask_pgm, potential_for, potential_rows
from params import ExperimentConfig, config_hash, load_config
from plots import emit_svg
from sweep import resolve_threads

logger = logging.getLogger(__name__)

__version__ = "0.1.0"

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

TRAJECTORY_HEADER = ["t_ns", "x_nm", "y_nm", "Q", "E_joule"]
TEXTURE_HEADER = ["x_nm", "y_nm", "mx", "my", "mz"]


@dataclass(frozen=True)
class RunOptions:
    svg: bool
    threads: int


@dataclass(frozen=True)
class Subcommand:
    name: str
    help: str
    handler: Callable[[ExperimentConfig, ResultStore, RunOptions], None]


SUBCOMMANDS: Dict[str, Subcommand] = {}


def subcommand(name: str, help_text: str):
    """Register a handler that fills a ResultStore for one experiment."""
    def decorator(func):
        @wraps(func)
        def wrapped(cfg: ExperimentConfig, store: ResultStore, options: RunOptions) -> None:
            logger.info(f"Running {name} on {options.threads} thread(s)")
            func(cfg, store, options)
            logger.info(f"Finished {name}")
        SUBCOMMANDS[name] = Subcommand(name, help_text, wrapped)
        return wrapped
    return decorator


def _add_svg(store: ResultStore, filename: str, table_name: str, kind: str, **kwargs) -> None:
    """Render one table to an SVG document; empty or missing tables are skipped."""
    if not store.table_exists(table_name) or not store.get_table(table_name).rows:
        logger.warning(f"No rows in '{table_name}', skipping {filename}")
        return
    store.add_document(filename, emit_svg(store.get_table(table_name), kind, **kwargs))


def _record_diode(store: ResultStore, outcomes: Sequence[thiele.DiodeOutcome], options: RunOptions) -> None:
    store.create_table("diode", ["direction", "class", "time_ns", "flag"])
    for outcome in outcomes:
        time_ns = outcome.time * 1e9 if outcome.time is not None else None
        store.add_row("diode", (outcome.direction.value, outcome.kind.value, time_ns, outcome.flag))
        name = f"trajectory_{outcome.direction.value}"
        store.create_table(name, TRAJECTORY_HEADER)
        store.add_rows(name, micromag.trajectory_rows(outcome.trajectory))
    if options.svg:
        store.create_table("trajectories", ["direction"] + TRAJECTORY_HEADER)
        for outcome in outcomes:
            store.add_rows("trajectories", [(outcome.direction.value,) + row
                                            for row in micromag.trajectory_rows(outcome.trajectory)])
        _add_svg(store, "trajectories.svg", "trajectories", "line", x="x_nm", y="y_nm",
                 series="direction", title="Skyrmion core trajectories")
        store.delete_table("trajectories")


@subcommand("relax", "relax a seeded skyrmion for every Ku in llg.ku_values")
def run_relax(cfg: ExperimentConfig, store: ResultStore, options: RunOptions) -> None:
    results = micromag.size_sweep(cfg, threads=options.threads)
    store.create_table("relax", ["Ku", "cell_nm", "Q", "diameter_nm", "energy_joule", "x_nm", "y_nm"])
    for k, r in enumerate(results):
        o = r.observables
        store.add_row("relax", (r.Ku, r.geometry.cell_size * 1e9, o.Q, o.diameter * 1e9, o.energy,
                                o.x * 1e9, o.y * 1e9))
        if cfg.llg.snapshot_stride > 0:
            store.create_table(f"texture_{k:03d}", TEXTURE_HEADER)
            store.add_rows(f"texture_{k:03d}", micromag.texture_rows(r.m, r.geometry))
    if options.svg:
        _add_svg(store, "relax.svg", "relax", "line", x="Ku", y="diameter_nm", title="Relaxed diameter")


@subcommand("diode-llg", "forward and reverse diode runs with the micromagnetic solver")
def run_diode_llg(cfg: ExperimentConfig, store: ResultStore, options: RunOptions) -> None:
    geometry = build_t_track(cfg.geometry, cfg.material)
    outcomes = [micromag.run_diode_llg(cfg, d, geometry) for d in (thiele.Direction.FORWARD, thiele.Direction.REVERSE)]
    _record_diode(store, outcomes, options)
    for outcome in outcomes:
        for k, (_, m) in enumerate(outcome.snapshots):
            name = f"snapshot_{outcome.direction.value}_{k:04d}"
            store.create_table(name, TEXTURE_HEADER)
            store.add_rows(name, micromag.texture_rows(m, geometry))


@subcommand("diode-thiele", "forward and reverse diode runs with the Thiele model")
def run_diode_thiele(cfg: ExperimentConfig, store: ResultStore, options: RunOptions) -> None:
    geometry = build_t_track(cfg.geometry, cfg.material)
    pot = potential_for(geometry, cfg.geometry, cfg.material)
    p = thiele.thiele_params(cfg)
    outcomes = [thiele.classify_diode(p, pot, geometry, d, cfg.thiele.timeout, cfg.thiele, cfg.thiele.charge)
                for d in (thiele.Direction.FORWARD, thiele.Direction.REVERSE)]
    _record_diode(store, outcomes, options)
    store.add_document("mask.pgm", mask_pgm(geometry))
    store.create_table("potential", ["x_nm", "y_nm", "U_joule"])
    store.add_rows("potential", potential_rows(geometry, pot))


@subcommand("sweep-window", "classify both directions over a current-density grid")
def run_sweep_window(cfg: ExperimentConfig, store: ResultStore, options: RunOptions) -> None:
    store.create_table("sweep", ["J_A_per_m2", "forward_class", "reverse_class", "tau_fwd_ns", "tau_rev_ns"])

    def add_rows(rows):
        for j, fwd, rev, t_fwd, t_rev in rows:
            store.add_row("sweep", (j, fwd, rev,
                                    t_fwd * 1e9 if t_fwd is not None else None,
                                    t_rev * 1e9 if t_rev is not None else None))

    try:
        result = thiele.efficiency_sweep(cfg, thiele.sweep_currents(cfg.thiele), options.threads)
    except EmptyWindow as e:
        add_rows(e.rows or [])
        raise
    add_rows(result.rows)
    store.create_table("window", ["j_min", "j_max"])
    store.add_row("window", result.window)


@subcommand("fidelity-map", "forward and reverse fidelity over time and diode efficiency")
def run_fidelity_map(cfg: ExperimentConfig, store: ResultStore, options: RunOptions) -> None:
    eta_grid, t_grid = lindblad.default_grids(cfg.lindblad)
    forward, reverse = lindblad.fidelity_maps(cfg.lindblad, eta_grid, t_grid, options.threads)
    store.create_table("fidelity", ["eta", "t_over_J", "F_forward", "F_reverse"])
    store.add_rows("fidelity", lindblad.map_rows(forward, reverse))
    if options.svg:
        for column, filename in (("F_forward", "fidelity_forward.svg"), ("F_reverse", "fidelity_reverse.svg")):
            _add_svg(store, filename, "fidelity", "heatmap", x="t_over_J", y="eta", value=column, title=column)


@subcommand("rotor-spectrum", "helicity rotor levels and their classically allowed regions")
def run_rotor_spectrum(cfg: ExperimentConfig, store: ResultStore, options: RunOptions) -> None:
    p = helicity.RotorParams.from_config(cfg.rotor)
    n_levels = cfg.rotor.n_levels
    spectra = {eta: helicity.spectrum(replace(p, eta=eta), n_levels) for eta in sorted({0.0, p.eta})}
    store.create_table("spectrum", ["eta", "level_index", "energy"])
    for eta, s in spectra.items():
        store.add_rows("spectrum", [(eta, k, float(E)) for k, E in enumerate(s.energies)])

    s = spectra[p.eta]
    diagram = helicity.level_diagram(p, helicity.phi_grid(cfg.rotor.phi_points), s.energies)
    store.create_table("levels", ["eta", "level_index", "energy", "phi_start", "phi_end"])
    for k, (E, intervals) in enumerate(zip(diagram.energies, diagram.intervals)):
        store.add_rows("levels", [(p.eta, k, float(E), a, b) for a, b in intervals])
    store.create_table("potential", ["phi", "V"])
    store.add_rows("potential", zip(diagram.phi.tolist(), diagram.V.tolist()))
    if options.svg:
        _add_svg(store, "levels.svg", "levels", "levels", title=f"Rotor levels at eta = {p.eta:g}",
                 curve=store.get_table("potential"))


@subcommand("anharmonicity", "rotor level spacings across diode efficiency")
def run_anharmonicity(cfg: ExperimentConfig, store: ResultStore, options: RunOptions) -> None:
    p = helicity.RotorParams.from_config(cfg.rotor)
    eta_grid = np.linspace(0.0, 1.0, cfg.rotor.eta_points)
    store.create_table("anharmonicity", ["eta", "omega01", "omega12", "delta_omega"])
    store.add_rows("anharmonicity", helicity.anharmonicity_sweep(p, eta_grid, threads=options.threads))
    if options.svg:
        _add_svg(store, "anharmonicity.svg", "anharmonicity", "line", x="eta", y="delta_omega",
                 title="Rotor anharmonicity")


@subcommand("transmon-map", "transmon f01 over reduced flux and junction imbalance")
def run_transmon_map(cfg: ExperimentConfig, store: ResultStore, options: RunOptions) -> None:
    t = cfg.transmon
    phi_grid = transmon.flux_grid(t.phi_points)
    eps_grid = np.linspace(t.eps_start, t.eps_stop, t.eps_points)
    rows = transmon.f01_map(t, phi_grid, eps_grid, options.threads)
    store.create_table("transmon", ["phi_e", "epsilon", "EJ_eff_GHz", "f01_duffing_GHz", "f01_exact_GHz",
                                    "regime_flag"])
    store.add_rows("transmon", [(r.phi_e, r.epsilon, r.EJ_eff, r.f01_duffing, r.f01_exact, r.regime_flag)
                                for r in rows])
    if options.svg:
        _add_svg(store, "transmon.svg", "transmon", "heatmap", x="phi_e", y="epsilon", value="f01_duffing_GHz",
                 title="Transmon f01 [GHz]")


@subcommand("dipole", "skyrmion stray field and pickup-loop flux")
def run_dipole(cfg: ExperimentConfig, store: ResultStore, options: RunOptions) -> None:
    store.create_table("dipole", ["z_nm", "Bz_mT", "flux_over_flux0", "flux_numeric_over_flux0"])
    store.add_rows("dipole", transmon.dipole_rows(cfg.transmon))
    if options.svg:
        _add_svg(store, "dipole.svg", "dipole", "line", x="z_nm", y="Bz_mT", title="Axial dipole field")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec='seconds')


def run(name: str, config_path: Optional[str] = None, out_dir: str = ".", svg: bool = False,
        threads: Optional[int] = None) -> int:
    """
    Run one experiment and write its artifacts plus manifest.json.

    Args:
        name: subcommand name
        config_path: TOML config, defaults when None
        out_dir: output directory
        svg: also render SVG figures
        threads: worker threads, falls back to SKYRLAB_THREADS

    Returns:
        int: 0 on success, 1 for config or usage errors, 2 for simulation errors
    """
    entry = SUBCOMMANDS.get(name)
    if entry is None:
        logger.error(f"Unknown subcommand: {name}")
        return 1

    started = _now()
    store = ResultStore()
    status, code = "ok", 0
    cfg_hash = ""
    try:
        cfg = load_config(config_path)
        cfg_hash = config_hash(cfg)
        options = RunOptions(svg=svg or cfg.output.svg, threads=resolve_threads(threads))
        entry.handler(cfg, store, options)
    except SchemaError as e:
        logger.error(f"Config error: {e}")
        for violation in e.violations:
            print(f"config error: {violation}", file=sys.stderr)
        status, code = "config_error", 1
        if config_path is not None:
            try:
                cfg_hash = file_sha256(config_path)
            except OSError:
                pass
    except SkyrlabError as e:
        logger.error(f"{name} failed: {type(e).__name__}: {e}")
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        status, code = "runtime_error", 2
    except ValueError as e:
        logger.error(f"{name} failed: {e}")
        print(f"ValueError: {e}", file=sys.stderr)
        status, code = "runtime_error", 2

    paths = store.write_all(out_dir)
    manifest = RunManifest(config_hash=cfg_hash, subcommand=name, started_at=started, finished_at=_now(),
                           status=status, tool_version=__version__)
    write_manifest(out_dir, manifest, paths)
    return code


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="skyrlab", description="Skyrmion diode and helicity-qubit simulations")
    parser.add_argument('--version', action='version', version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest='subcommand', required=True, metavar='SUBCOMMAND')
    for entry in SUBCOMMANDS.values():
        p = sub.add_parser(entry.name, help=entry.help)
        p.add_argument('--config', help="TOML experiment config")
        p.add_argument('--out', default=".", help="output directory")
        p.add_argument('--svg', action='store_true', help="also write SVG figures")
        p.add_argument('--threads', type=int, help="worker threads (default SKYRLAB_THREADS or 1)")
        p.add_argument('--verbose', action='store_true', help="debug logging")
    return parser


def configure_logging(verbose: bool = False) -> None:
    root = logging.getLogger()
    if not root.handlers:
        logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT)
    elif verbose:
        root.setLevel(logging.DEBUG)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(parser.format_usage(), end="", file=sys.stderr)
        print(f"skyrlab: error: {e}", file=sys.stderr)
        return 1
    configure_logging(args.verbose)
    return run(args.subcommand, args.config, args.out, svg=args.svg, threads=args.threads)
