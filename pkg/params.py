import hashlib
import json
import logging
import math
import tomllib
from dataclasses import dataclass, field, fields
from typing import Any, Callable, Dict, List, Optional, Tuple

from scipy import constants

from errors import NonPerpendicularEasyAxis, SchemaError, Violation

logger = logging.getLogger(__name__)

# Physical constants (SI)
MU0 = constants.mu_0
GAMMA_E = constants.physical_constants['electron gyromag. ratio'][0]
GAMMA0 = MU0 * GAMMA_E
HBAR = constants.hbar
E_CHARGE = constants.e
H_PLANCK = constants.h
FLUX_QUANTUM = constants.physical_constants['mag. flux quantum'][0]
MU_B = constants.physical_constants['Bohr magneton'][0]
G_FACTOR = abs(constants.physical_constants['electron g factor'][0])

TORQUE_KINDS = ("SOT_damping_like", "STT_zhang_li")


def _param(default: Any, check: Optional[Callable[[Any], bool]] = None, reason: str = "",
           key: Optional[str] = None) -> Any:
    """Dataclass field carrying its validation rule and optional TOML key."""
    return field(default=default, metadata={'check': check, 'reason': reason, 'key': key})


def _positive(default, **kw):
    return _param(default, lambda v: v > 0, "must be > 0", **kw)


def _non_negative(default, **kw):
    return _param(default, lambda v: v >= 0, "must be ≥ 0", **kw)


def _fraction(default, **kw):
    return _param(default, lambda v: 0 < v < 1, "must be in (0, 1)", **kw)


def _unit_interval(default, **kw):
    return _param(default, lambda v: 0 <= v <= 1, "must be in [0, 1]", **kw)


def _one_of(default, choices, **kw):
    return _param(default, lambda v: v in choices, f"must be one of {', '.join(choices)}", **kw)


def _int_at_least(default, low, **kw):
    return _param(default, lambda v: v >= low, f"must be ≥ {low}", **kw)


@dataclass(frozen=True)
class MaterialParams:
    Ms: float = _positive(580e3)
    Aex: float = _positive(15e-12)
    Dmi: float = _param(3.0e-3)
    Ku: float = _non_negative(0.8e6)
    alpha: float = _param(0.1, lambda v: 0 < v <= 1, "must be in (0, 1]")
    thickness: float = _positive(1e-9)
    units: str = _one_of("SI", ("SI",))

    @property
    def k_eff(self) -> float:
        """Anisotropy after the thin-film demagnetization correction [J/m³]."""
        return self.Ku - 0.5 * MU0 * self.Ms ** 2


@dataclass(frozen=True)
class DerivedScales:
    l_ex: float
    delta_dw: float
    k_eff: float


@dataclass(frozen=True)
class GeometryConfig:
    length: float = _positive(300e-9)
    width: float = _positive(100e-9)
    cell_size: float = _positive(1e-9)
    arm_width_in: float = _positive(40e-9)
    arm_width_out: float = _positive(60e-9)
    throat_width: float = _non_negative(24e-9)
    throat_length: float = _positive(40e-9)
    stem_width: float = _positive(40e-9)
    foot_width: float = _non_negative(30e-9)
    foot_length: float = _non_negative(60e-9)
    junction_x: float = _fraction(0.5)
    widen_side: str = _one_of("right", ("left", "right"))
    U0: float = _positive(2e-19)
    lam: float = _non_negative(0.0, key="lambda")
    resolution_slack: float = _non_negative(0.25)
    units: str = _one_of("SI", ("SI",))


def _unit_vector(v) -> bool:
    return len(v) == 3 and abs(math.sqrt(sum(x * x for x in v)) - 1.0) < 1e-9


@dataclass(frozen=True)
class DriveParams:
    current_density: float = _non_negative(0.2e12)
    torque_kind: str = _one_of("SOT_damping_like", TORQUE_KINDS)
    polarization_dir: Tuple[float, ...] = _param((0.0, -1.0, 0.0), _unit_vector, "must be a unit 3-vector")
    spin_hall_angle: float = _param(0.1)
    nonadiabaticity_beta: float = _non_negative(0.1)
    polarization: float = _unit_interval(0.5)
    units: str = _one_of("SI", ("SI",))


@dataclass(frozen=True)
class LLGConfig:
    relax_time: float = _positive(1e-9)
    torque_tol: float = _positive(50.0)
    run_time: float = _positive(10e-9)
    sample_interval: float = _positive(10e-12)
    B_ext: Tuple[float, ...] = _param((0.0, 0.0, 0.0), lambda v: len(v) == 3, "must be a 3-vector")
    seed_radius: float = _non_negative(0.0)
    patch_size: float = _positive(80e-9)
    snapshot_stride: int = _int_at_least(0, 0)
    max_halvings: int = _int_at_least(10, 0)
    ku_values: Tuple[float, ...] = _param((), lambda v: all(x >= 0 for x in v), "entries must be ≥ 0")
    integrator: str = _one_of("bdf", ("bdf", "heun"))
    rtol: float = _positive(1e-5)
    atol: float = _positive(1e-7)
    refinements: int = _int_at_least(2, 0)
    units: str = _one_of("SI", ("SI",))


@dataclass(frozen=True)
class ThieleConfig:
    radius: float = _positive(10e-9)
    charge: int = _param(-1, lambda v: v != 0, "must be nonzero")
    G: float = _param(0.0)
    d_diss: float = _non_negative(0.0)
    F_dl: float = _non_negative(0.0)
    alpha_G: float = _positive(0.02)
    dt: float = _non_negative(0.0)
    timeout: float = _positive(20e-9)
    injection_fraction: float = _fraction(0.25)
    output_fraction: float = _fraction(0.75)
    start_fraction: float = _fraction(0.15)
    j_start: float = _non_negative(0.0)
    j_stop: float = _non_negative(1e12)
    j_points: int = _int_at_least(11, 1)
    units: str = _one_of("SI", ("SI",))


@dataclass(frozen=True)
class RotorConfig:
    kappa_z: float = _positive(1.0)
    h_z: float = _param(0.0)
    K2: float = _param(10.0)
    K2_base: float = _param(0.0)
    e_z: float = _param(1.0)
    eta: float = _unit_interval(1.0)
    m_max: int = _int_at_least(40, 10)
    n_levels: int = _int_at_least(6, 3)
    eta_points: int = _int_at_least(41, 2)
    phi_points: int = _int_at_least(721, 16)
    sector: str = _one_of("full", ("full", "even", "odd"))
    units: str = _one_of("natural", ("natural",))


@dataclass(frozen=True)
class LindbladConfig:
    J_coupling: float = _non_negative(1.0)
    delta: float = _param(0.0)
    gamma_max: float = _non_negative(100.0)
    eta_points: int = _int_at_least(41, 2)
    t_max: float = _positive(10.0)
    t_points: int = _int_at_least(400, 2)
    units: str = _one_of("natural", ("natural",))


@dataclass(frozen=True)
class TransmonConfig:
    EJ_sigma: float = _positive(50.0)
    EC: float = _positive(0.2)
    epsilon: float = _param(0.0, lambda v: 0 <= v < 1, "must be in [0, 1)")
    phi_e: float = _param(0.0)
    phi_points: int = _int_at_least(201, 2)
    eps_start: float = _param(0.0, lambda v: 0 <= v < 1, "must be in [0, 1)")
    eps_stop: float = _param(0.5, lambda v: 0 <= v < 1, "must be in [0, 1)")
    eps_points: int = _int_at_least(11, 1)
    exact: bool = _param(True)
    charge_cutoff: int = _int_at_least(0, 0)
    n_levels: int = _int_at_least(3, 3)
    dipole_Ms: float = _positive(1e6)
    volume: float = _positive(8e-24)
    z_values: Tuple[float, ...] = _param((20e-9, 50e-9, 100e-9), lambda v: len(v) > 0 and all(x > 0 for x in v),
                                         "must be a nonempty list of positive values")
    loop_side: float = _positive(100e-9)
    units: str = _one_of("GHz", ("GHz",))


@dataclass(frozen=True)
class OutputConfig:
    svg: bool = _param(False)


SECTIONS: Dict[str, type] = {
    'material': MaterialParams,
    'geometry': GeometryConfig,
    'drive': DriveParams,
    'llg': LLGConfig,
    'thiele': ThieleConfig,
    'rotor': RotorConfig,
    'lindblad': LindbladConfig,
    'transmon': TransmonConfig,
    'output': OutputConfig,
}


@dataclass(frozen=True)
class ExperimentConfig:
    material: MaterialParams = field(default_factory=MaterialParams)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    drive: DriveParams = field(default_factory=DriveParams)
    llg: LLGConfig = field(default_factory=LLGConfig)
    thiele: ThieleConfig = field(default_factory=ThieleConfig)
    rotor: RotorConfig = field(default_factory=RotorConfig)
    lindblad: LindbladConfig = field(default_factory=LindbladConfig)
    transmon: TransmonConfig = field(default_factory=TransmonConfig)
    output: OutputConfig = field(default_factory=OutputConfig)


def derive_scales(m: MaterialParams) -> DerivedScales:
    """
    Compute the micromagnetic length scales of a material.

    Args:
        m: Material parameters

    Returns:
        DerivedScales: exchange length, wall-width parameter and effective anisotropy

    Raises:
        NonPerpendicularEasyAxis: if the demagnetization correction leaves k_eff ≤ 0
    """
    k_eff = m.k_eff
    if k_eff <= 0:
        raise NonPerpendicularEasyAxis(
            f"k_eff = {k_eff:.4g} J/m³ ≤ 0 for Ku = {m.Ku:.4g}, Ms = {m.Ms:.4g}: easy axis is in-plane")
    l_ex = math.sqrt(2.0 * m.Aex / (MU0 * m.Ms ** 2))
    delta_dw = math.sqrt(m.Aex / m.Ku)
    return DerivedScales(l_ex=l_ex, delta_dw=delta_dw, k_eff=k_eff)


def _toml_key(f) -> str:
    return f.metadata.get('key') or f.name


def _coerce(value: Any, default: Any) -> Tuple[Any, Optional[str]]:
    """Convert a TOML value to the type of the field default."""
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value, None
        return None, "must be a boolean"
    if isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value, None
        return None, "must be an integer"
    if isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value), None
        return None, "must be a number"
    if isinstance(default, str):
        if isinstance(value, str):
            return value, None
        return None, "must be a string"
    if isinstance(default, tuple):
        if isinstance(value, list) and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in value):
            return tuple(float(x) for x in value), None
        return None, "must be a list of numbers"
    return value, None


def _build_section(name: str, cls: type, values: Dict[str, Any]) -> Tuple[Any, List[Violation]]:
    violations = []
    known = {_toml_key(f): f for f in fields(cls)}
    for key in values:
        if key not in known:
            violations.append(Violation(name, key, "unknown key"))

    kwargs = {}
    for key, f in known.items():
        if key not in values:
            logger.debug(f"Defaulted {name}.{key} = {f.default!r}")
            continue
        value, problem = _coerce(values[key], f.default)
        if problem is None:
            check = f.metadata.get('check')
            if check is not None and not check(value):
                problem = f.metadata['reason']
        if problem is not None:
            violations.append(Violation(name, key, problem))
        else:
            kwargs[f.name] = value

    if violations:
        return None, violations
    return cls(**kwargs), []


def sector_dimension(sector: str, m_max: int) -> int:
    """Number of m in [−m_max, m_max] kept by a parity sector."""
    if sector == "even":
        return 2 * (m_max // 2) + 1
    if sector == "odd":
        return 2 * ((m_max + 1) // 2)
    return 2 * m_max + 1


def _cross_checks(sections: Dict[str, Any]) -> List[Violation]:
    """Rules that involve more than one key."""
    violations = []
    rotor = sections.get('rotor')
    if rotor is not None:
        if rotor.sector != "full" and rotor.e_z != 0:
            violations.append(Violation('rotor', 'sector', "parity sectors require e_z = 0"))
        limit = min(2 * rotor.m_max - 3, sector_dimension(rotor.sector, rotor.m_max))
        if rotor.n_levels > limit:
            violations.append(Violation('rotor', 'n_levels',
                                        f"must be ≤ {limit} for m_max = {rotor.m_max} in the {rotor.sector} sector"))
    thiele = sections.get('thiele')
    if thiele is not None:
        if thiele.output_fraction <= thiele.injection_fraction:
            violations.append(Violation('thiele', 'output_fraction', "must exceed injection_fraction"))
        if thiele.start_fraction >= thiele.injection_fraction:
            violations.append(Violation('thiele', 'start_fraction', "must be below injection_fraction"))
        if thiele.j_stop < thiele.j_start:
            violations.append(Violation('thiele', 'j_stop', "must be ≥ j_start"))
    transmon = sections.get('transmon')
    if transmon is not None and transmon.eps_stop < transmon.eps_start:
        violations.append(Violation('transmon', 'eps_stop', "must be ≥ eps_start"))
    return violations


def parse_config(text: str) -> ExperimentConfig:
    """
    Parse and validate an experiment config.

    Args:
        text: TOML document with the sections listed in SECTIONS

    Returns:
        ExperimentConfig: validated config, missing keys defaulted

    Raises:
        SchemaError: with every violation found, not just the first
    """
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise SchemaError([Violation("", "", f"invalid TOML: {e}")])

    violations = []
    for name, values in raw.items():
        if name not in SECTIONS:
            violations.append(Violation(name, "", "unknown section"))
        elif not isinstance(values, dict):
            violations.append(Violation(name, "", "must be a table"))

    sections = {}
    for name, cls in SECTIONS.items():
        values = raw.get(name, {})
        if not isinstance(values, dict):
            continue
        if name not in raw:
            logger.debug(f"Section [{name}] missing, using defaults")
        section, problems = _build_section(name, cls, values)
        violations.extend(problems)
        if section is not None:
            sections[name] = section

    violations.extend(_cross_checks(sections))
    if violations:
        for v in violations:
            logger.warning(f"Config violation: {v}")
        raise SchemaError(violations)
    return ExperimentConfig(**sections)


def load_config(path: Optional[str]) -> ExperimentConfig:
    """Read and parse a config file; None yields the defaults."""
    if path is None:
        logger.info("No config file given, using defaults")
        return parse_config("")
    try:
        with open(path, 'rb') as f:
            raw = f.read()
    except OSError as e:
        raise SchemaError([Violation("", "", f"cannot read config: {e}")])
    try:
        text = raw.decode('utf-8')
    except UnicodeDecodeError as e:
        raise SchemaError([Violation("", "", f"config is not UTF-8: {e}")])
    return parse_config(text)


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, tuple):
        return "[" + ", ".join(_format_value(float(x)) for x in value) + "]"
    raise TypeError(f"Cannot serialize {value!r}")


def serialize_config(cfg: ExperimentConfig) -> str:
    """
    Render the canonical text form of a config.

    Sections come in SECTIONS order, keys sorted case-insensitively,
    floats as their shortest round-trip decimal.
    """
    blocks = []
    for name in SECTIONS:
        section = getattr(cfg, name)
        lines = [f"[{name}]"]
        entries = sorted(((_toml_key(f), getattr(section, f.name)) for f in fields(section)),
                         key=lambda kv: (kv[0].lower(), kv[0]))
        for key, value in entries:
            lines.append(f"{key} = {_format_value(value)}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    """SHA-256 of the canonical serialization."""
    return hashlib.sha256(serialize_config(cfg).encode('utf-8')).hexdigest()
