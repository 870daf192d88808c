import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, linalg

from errors import CutoffError, OutOfRegime
from params import FLUX_QUANTUM, MU0, TransmonConfig
from sweep import run_sweep

logger = logging.getLogger(__name__)

# EJ/EC thresholds of the transmon regime
REGIME_FLOOR = 20.0
REGIME_WARN = 50.0
CUTOFF_TOL = 1e-10


@dataclass(frozen=True)
class TransmonParams:
    """Flux-tunable transmon; energies in GHz·h, phi_e in flux quanta."""
    EJ_sigma: float
    EC: float
    epsilon: float = 0.0
    phi_e: float = 0.0

    def __post_init__(self):
        if self.EJ_sigma <= 0 or self.EC <= 0:
            raise ValueError("EJ_sigma and EC must be > 0")
        if not 0 <= self.epsilon < 1:
            raise ValueError("epsilon must be in [0, 1)")

    @classmethod
    def from_config(cls, cfg: TransmonConfig) -> 'TransmonParams':
        return cls(EJ_sigma=cfg.EJ_sigma, EC=cfg.EC, epsilon=cfg.epsilon, phi_e=cfg.phi_e)


@dataclass
class DuffingLevels:
    energies: np.ndarray
    plasma: float
    f01: float
    anharmonicity: float


@dataclass
class DipoleEstimate:
    moment: float
    z: float
    B_z: float
    loop_side: float
    flux_quanta: float
    flux_numeric_quanta: float


@dataclass
class TransmonRow:
    phi_e: float
    epsilon: float
    EJ_eff: float
    f01_duffing: float
    f01_exact: Optional[float]
    regime_flag: str


def ej_eff(p: TransmonParams) -> float:
    """
    Effective Josephson energy of the asymmetric SQUID.

    E_JΣ·√(cos²(πφ_e) + ε²·sin²(πφ_e)). Dividing under the root by cos²
    gives the |cos(πφ_e)|·√(1 + ε²·tan²(πφ_e)) form (ej_eff_tan), which
    is singular at φ_e = 1/2 where this one is not.
    """
    c = math.cos(math.pi * p.phi_e)
    s = math.sin(math.pi * p.phi_e)
    return p.EJ_sigma * math.sqrt(c * c + p.epsilon ** 2 * s * s)


def ej_eff_tan(p: TransmonParams) -> float:
    t = math.tan(math.pi * p.phi_e)
    return p.EJ_sigma * abs(math.cos(math.pi * p.phi_e)) * math.sqrt(1.0 + p.epsilon ** 2 * t * t)


def regime_flag(ej: float, EC: float) -> str:
    ratio = ej / EC
    if ratio < REGIME_FLOOR:
        return "out_of_regime"
    if ratio < REGIME_WARN:
        return "weak"
    return "transmon"


def _duffing(ej: float, EC: float, n: int) -> DuffingLevels:
    plasma = math.sqrt(8.0 * EC * ej)
    m = np.arange(n, dtype=float)
    energies = -ej + plasma * (m + 0.5) - EC / 12.0 * (6 * m ** 2 + 6 * m + 3)
    anharmonicity = float((energies[2] - energies[1]) - (energies[1] - energies[0]))
    return DuffingLevels(energies=energies, plasma=plasma, f01=plasma - EC, anharmonicity=anharmonicity)


def duffing_levels(p: TransmonParams, n: int = 3, ej: Optional[float] = None) -> DuffingLevels:
    """
    Perturbative Duffing ladder E_m = −E_J + ħω_p(m + ½) − (E_C/12)(6m² + 6m + 3).

    Args:
        p: transmon parameters
        n: number of levels, at least 3
        ej: Josephson energy to use instead of ej_eff(p)

    Returns:
        DuffingLevels: levels, ħω_p = √(8·E_C·E_J), f01 = ħω_p − E_C and E12 − E01

    Raises:
        OutOfRegime: E_J/E_C below 20
    """
    if n < 3:
        raise ValueError("need at least 3 levels")
    ej = ej_eff(p) if ej is None else ej
    ratio = ej / p.EC
    if ratio < REGIME_FLOOR:
        raise OutOfRegime(f"EJ/EC = {ratio:.3g} is below the transmon floor {REGIME_FLOOR:g}")
    if ratio < REGIME_WARN:
        logger.warning(f"EJ/EC = {ratio:.3g} is below {REGIME_WARN:g}; Duffing levels are approximate")
    return _duffing(ej, p.EC, n)


def min_cutoff(EC: float, EJ: float) -> int:
    return 10 + int(math.ceil(math.sqrt(EJ / EC)))


def charge_hamiltonian(EC: float, EJ: float, N: int) -> np.ndarray:
    """Dense (2N+1)-dim charge-basis matrix: 4·EC·n² on the diagonal, −EJ/2 between n and n±1."""
    n = np.arange(-N, N + 1, dtype=float)
    off = np.full(2 * N, -0.5 * EJ)
    return np.diag(4.0 * EC * n ** 2) + np.diag(off, 1) + np.diag(off, -1)


def _tridiagonal_levels(EC: float, EJ: float, N: int, n_levels: int) -> np.ndarray:
    n = np.arange(-N, N + 1, dtype=float)
    return linalg.eigh_tridiagonal(4.0 * EC * n ** 2, np.full(2 * N, -0.5 * EJ),
                                   eigvals_only=True, select='i', select_range=(0, n_levels - 1))


def exact_levels(EC: float, EJ: float, n_levels: int = 3, charge_cutoff: Optional[int] = None) -> np.ndarray:
    """
    Charge-basis diagonalization of 4·E_C·n² − E_J·cos φ at zero offset charge.

    Args:
        EC: charging energy
        EJ: Josephson energy
        n_levels: number of lowest levels
        charge_cutoff: N, the basis is −N..N; default 10 + ceil(√(EJ/EC))

    Returns:
        np.ndarray: ascending energies

    Raises:
        CutoffError: N below 10 + ceil(√(EJ/EC)), or the levels still move
                     by more than 1e-10 relative at N + 5
    """
    floor = min_cutoff(EC, EJ)
    N = floor if charge_cutoff is None else int(charge_cutoff)
    if N < floor:
        raise CutoffError(f"charge cutoff {N} is below {floor} for EJ/EC = {EJ / EC:.3g}")
    energies = _tridiagonal_levels(EC, EJ, N, n_levels)
    wider = _tridiagonal_levels(EC, EJ, N + 5, n_levels)
    shift = float(np.max(np.abs(wider - energies)))
    if shift > CUTOFF_TOL * max(float(np.max(np.abs(energies))), EC):
        raise CutoffError(f"levels shift by {shift:.3g} between cutoffs {N} and {N + 5}")
    return energies


def f01_exact(EC: float, EJ: float, charge_cutoff: Optional[int] = None) -> float:
    E = exact_levels(EC, EJ, 2, charge_cutoff)
    return float(E[1] - E[0])


def flux_grid(points: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, points, endpoint=False)


def f01_map(cfg: TransmonConfig, phi_grid: Sequence[float], eps_grid: Sequence[float],
            threads: int = 1) -> List[TransmonRow]:
    """
    f01 over reduced flux and junction imbalance.

    Points below the regime floor are kept and flagged; their Duffing value
    is the bare formula. The exact column is filled when cfg.exact is set.

    Args:
        cfg: transmon section
        phi_grid: reduced fluxes
        eps_grid: imbalances in [0, 1)
        threads: worker threads, one ε column per task

    Returns:
        List[TransmonRow]: ε outer, φ_e inner
    """
    cutoff = cfg.charge_cutoff if cfg.charge_cutoff > 0 else None

    def run_column(eps):
        rows = []
        for phi in phi_grid:
            p = TransmonParams(cfg.EJ_sigma, cfg.EC, eps, float(phi))
            ej = ej_eff(p)
            exact = None
            if cfg.exact:
                # a fixed cutoff is raised to the floor where E_J grows past it
                n_cut = None if cutoff is None else max(cutoff, min_cutoff(cfg.EC, ej))
                exact = f01_exact(cfg.EC, ej, n_cut)
            rows.append(TransmonRow(phi_e=float(phi), epsilon=eps, EJ_eff=ej,
                                    f01_duffing=_duffing(ej, cfg.EC, 3).f01,
                                    f01_exact=exact, regime_flag=regime_flag(ej, cfg.EC)))
        return rows

    columns = run_sweep(run_column, [float(e) for e in eps_grid], threads)
    rows = [row for _, column in columns for row in column]
    flagged = sum(1 for r in rows if r.regime_flag == "out_of_regime")
    if flagged:
        logger.warning(f"{flagged} of {len(rows)} transmon points are below EJ/EC = {REGIME_FLOOR:g}")
    logger.info(f"Transmon map: {len(rows)} points")
    return rows


def dipole_field(moment: float, z: float) -> float:
    """On-axis dipole field B_z = (μ0/4π)·2m/z³."""
    if z <= 0:
        raise ValueError("z must be > 0")
    return MU0 / (4.0 * math.pi) * 2.0 * moment / z ** 3


def dipole_flux_circle(moment: float, z: float, loop_side: float) -> float:
    """Flux through a coaxial disc with the loop's area, μ0·m·R²/(2(R² + z²)^{3/2})."""
    R2 = loop_side ** 2 / math.pi
    return MU0 * moment * R2 / (2.0 * (R2 + z * z) ** 1.5)


def dipole_flux_numeric(moment: float, z: float, loop_side: float) -> float:
    """
    Flux of the point-dipole B_z through a centered square loop.

    Integrated in units of z, where B_z·dA = (μ0·m/4πz)·(3 − w)/w^{5/2} du dv
    with w = 1 + u² + v², over one quadrant.
    """
    a = 0.5 * loop_side / z

    def integrand(v, u):
        w = 1.0 + u * u + v * v
        return (3.0 - w) / w ** 2.5

    quadrant, _ = integrate.dblquad(integrand, 0.0, a, 0.0, a, epsabs=1e-12, epsrel=1e-10)
    return MU0 * moment / (4.0 * math.pi * z) * 4.0 * quadrant


def dipole_estimate(Ms: float, volume: float, z: float, loop_side: float) -> DipoleEstimate:
    """
    Stray field and loop flux of a skyrmion-sized moment m = Ms·volume.

    Args:
        Ms: saturation magnetization [A/m]
        volume: magnetic volume [m³]
        z: standoff above the loop [m]
        loop_side: side of the square pickup loop [m]

    Returns:
        DipoleEstimate: B_z in tesla, flux in flux quanta by the equal-area
        disc formula and by direct integration
    """
    moment = Ms * volume
    return DipoleEstimate(moment=moment, z=z, B_z=dipole_field(moment, z), loop_side=loop_side,
                          flux_quanta=dipole_flux_circle(moment, z, loop_side) / FLUX_QUANTUM,
                          flux_numeric_quanta=dipole_flux_numeric(moment, z, loop_side) / FLUX_QUANTUM)


def dipole_rows(cfg: TransmonConfig) -> List[Tuple[float, float, float, float]]:
    """Rows z_nm, Bz_mT, flux_over_flux0, flux_numeric_over_flux0."""
    rows = []
    for z in cfg.z_values:
        d = dipole_estimate(cfg.dipole_Ms, cfg.volume, z, cfg.loop_side)
        rows.append((z * 1e9, d.B_z * 1e3, d.flux_quanta, d.flux_numeric_quanta))
    return rows
