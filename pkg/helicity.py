import logging
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, optimize

from errors import NoConvergence, TruncationError
from params import RotorConfig
from sweep import run_sweep

logger = logging.getLogger(__name__)

TRUNCATION_TOL = 1e-8
RESIDUAL_TOL = 1e-9


@dataclass(frozen=True)
class RotorParams:
    """
    Helicity rotor H = κ_z·S_z² − h_z·S_z + K2_eff·cos 2φ0 − e_z·cos φ0,
    written in the integer S_z basis |m⟩, −m_max ≤ m ≤ m_max.

    K2_eff = K2_base + η·K2. The sector field keeps every m ("full") or
    only even / odd m, which needs e_z = 0.
    """
    kappa_z: float
    h_z: float
    K2: float
    e_z: float
    eta: float
    m_max: int
    K2_base: float = 0.0
    sector: str = "full"

    @property
    def k2_eff(self) -> float:
        return self.K2_base + self.eta * self.K2

    @classmethod
    def from_config(cls, cfg: RotorConfig) -> 'RotorParams':
        return cls(kappa_z=cfg.kappa_z, h_z=cfg.h_z, K2=cfg.K2, e_z=cfg.e_z, eta=cfg.eta,
                   m_max=cfg.m_max, K2_base=cfg.K2_base, sector=cfg.sector)


@dataclass
class RotorSpectrum:
    energies: np.ndarray
    vectors: np.ndarray
    m_values: np.ndarray
    omega01: float
    omega12: float
    anharmonicity: float


@dataclass
class LevelDiagram:
    """V(φ0) on a grid plus, per level, the φ0 intervals where E_n ≥ V."""
    phi: np.ndarray
    V: np.ndarray
    energies: np.ndarray
    intervals: List[List[Tuple[float, float]]]


def m_values(p: RotorParams) -> np.ndarray:
    m = np.arange(-p.m_max, p.m_max + 1)
    if p.sector == "even":
        return m[m % 2 == 0]
    if p.sector == "odd":
        return m[m % 2 != 0]
    return m


def build_hamiltonian(p: RotorParams) -> np.ndarray:
    """
    Real symmetric rotor matrix in the |m⟩ basis.

    Diagonal κ_z·m² − h_z·m, ⟨m|H|m±1⟩ = −e_z/2, ⟨m|H|m±2⟩ = K2_eff/2.

    Args:
        p: rotor parameters; m_max below 10 is accepted here so that small
           matrices can be checked directly

    Returns:
        np.ndarray: matrix of dimension len(m_values(p))
    """
    if p.kappa_z <= 0:
        raise ValueError("kappa_z must be > 0")
    if p.m_max < 1:
        raise ValueError("m_max must be ≥ 1")
    if p.sector not in ("full", "even", "odd"):
        raise ValueError(f"unknown sector {p.sector!r}")
    if p.sector != "full" and p.e_z != 0:
        raise ValueError("parity sectors need e_z = 0")

    m = m_values(p).astype(float)
    gap = np.abs(m[:, None] - m[None, :])
    H = np.diag(p.kappa_z * m ** 2 - p.h_z * m)
    H = H + np.where(gap == 1, -0.5 * p.e_z, 0.0) + np.where(gap == 2, 0.5 * p.k2_eff, 0.0)
    return H


def diagonalize(H: np.ndarray, n_levels: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Lowest eigenpairs of a real symmetric matrix, ascending.

    Raises:
        NoConvergence: a residual ‖Hv − Ev‖ reaches 1e-9·‖H‖
    """
    n = H.shape[0] if n_levels is None else n_levels
    energies, vectors = linalg.eigh(H, subset_by_index=[0, n - 1])
    scale = linalg.norm(H, 2)
    residual = np.linalg.norm(H @ vectors - vectors * energies, axis=0)
    worst = float(residual.max()) if residual.size else 0.0
    if worst >= RESIDUAL_TOL * max(scale, 1.0):
        raise NoConvergence(f"eigensolver residual {worst:.3g} exceeds {RESIDUAL_TOL:g}·‖H‖")
    return energies, vectors


def spectrum(p: RotorParams, n_levels: int = 6) -> RotorSpectrum:
    """
    Lowest n_levels rotor levels, checked against a basis ten m larger.

    Args:
        p: rotor parameters
        n_levels: number of levels, 3 ≤ n_levels ≤ 2·m_max − 3

    Returns:
        RotorSpectrum: energies, m-basis eigenvectors and the level spacings

    Raises:
        TruncationError: levels move by more than 1e-8 relative when m_max grows by 10
    """
    H = build_hamiltonian(p)
    if n_levels < 3 or n_levels > min(2 * p.m_max - 3, H.shape[0]):
        raise ValueError(f"n_levels must be in [3, {min(2 * p.m_max - 3, H.shape[0])}], got {n_levels}")
    energies, vectors = diagonalize(H, n_levels)

    wider, _ = diagonalize(build_hamiltonian(replace(p, m_max=p.m_max + 10)), n_levels)
    shift = float(np.max(np.abs(wider - energies)))
    scale = max(float(np.max(np.abs(energies))), p.kappa_z)
    if shift > TRUNCATION_TOL * scale:
        raise TruncationError(f"levels shift by {shift:.3g} when m_max grows from {p.m_max} to {p.m_max + 10}")
    logger.debug(f"Rotor spectrum: dim {H.shape[0]}, truncation shift {shift:.2g}")

    omega01 = float(energies[1] - energies[0])
    omega12 = float(energies[2] - energies[1])
    return RotorSpectrum(energies=energies, vectors=vectors, m_values=m_values(p),
                         omega01=omega01, omega12=omega12, anharmonicity=omega12 - omega01)


def anharmonicity_sweep(p: RotorParams, eta_grid: Sequence[float], n_levels: int = 3,
                        threads: int = 1) -> List[Tuple[float, float, float, float]]:
    """
    Level spacings across diode efficiencies with a shared basis size.

    Returns:
        List[Tuple[float, float, float, float]]: rows (η, ω01, ω12, Δω), ascending η
    """
    etas = [float(e) for e in eta_grid]
    if any(e < 0 or e > 1 for e in etas):
        raise ValueError("eta grid must lie in [0, 1]")

    def run_point(eta):
        s = spectrum(replace(p, eta=eta), n_levels)
        return s.omega01, s.omega12, s.anharmonicity

    rows = [(eta, *result) for eta, result in run_sweep(run_point, etas, threads)]
    logger.info(f"Anharmonicity sweep over {len(rows)} efficiencies")
    return rows


def brute_force_eigenvalues(H: np.ndarray, samples: int = 20001) -> np.ndarray:
    """
    Eigenvalues as roots of det(H − x·I), bracketed on a grid spanning the
    Gershgorin discs and refined with brentq. Simple roots only; meant for
    matrices of dimension ≤ 9.

    Raises:
        NoConvergence: the number of roots found differs from the dimension
    """
    n = H.shape[0]
    radius = np.sum(np.abs(H), axis=1) - np.abs(np.diag(H))
    lo = float(np.min(np.diag(H) - radius)) - 1.0
    hi = float(np.max(np.diag(H) + radius)) + 1.0
    eye = np.eye(n)

    def char_poly(x):
        return linalg.det(H - x * eye)

    xs = np.linspace(lo, hi, samples)
    values = np.array([char_poly(x) for x in xs])
    roots = []
    for k in range(samples - 1):
        if values[k] == 0.0:
            roots.append(xs[k])
        elif values[k] * values[k + 1] < 0:
            roots.append(optimize.brentq(char_poly, xs[k], xs[k + 1], xtol=1e-14, rtol=1e-15))
    if len(roots) != n:
        raise NoConvergence(f"found {len(roots)} roots for a {n}×{n} matrix")
    return np.array(sorted(roots))


def potential(p: RotorParams, phi: np.ndarray) -> np.ndarray:
    return p.k2_eff * np.cos(2.0 * phi) - p.e_z * np.cos(phi)


def allowed_intervals(phi: np.ndarray, V: np.ndarray, E: float) -> List[Tuple[float, float]]:
    """
    φ intervals of a periodic grid on [0, 2π) where V ≤ E.

    Edges are placed by linear interpolation between grid points. An
    interval that wraps through 2π keeps its start below 2π and ends past it.
    """
    two_pi = 2.0 * math.pi
    inside = V <= E
    if inside.all():
        return [(0.0, two_pi)]
    if not inside.any():
        return []

    # walk once around the circle starting from a point outside every interval
    n = phi.size
    start = int(np.argmin(inside))
    steps = start + np.arange(n + 1)
    idx = steps % n
    x = phi[idx] + two_pi * (steps // n)
    v = V[idx]
    flags = inside[idx]

    edges = []
    for s in range(n):
        if flags[s] != flags[s + 1]:
            edges.append(x[s] + (E - v[s]) / (v[s + 1] - v[s]) * (x[s + 1] - x[s]))
    intervals = []
    for left, right in zip(edges[::2], edges[1::2]):
        if left >= two_pi:
            left, right = left - two_pi, right - two_pi
        intervals.append((float(left), float(right)))
    return sorted(intervals)


def level_diagram(p: RotorParams, phi_grid: np.ndarray, energies: Sequence[float]) -> LevelDiagram:
    """
    Rotor potential and the classically allowed region of every level.

    Args:
        p: rotor parameters
        phi_grid: ascending samples covering [0, 2π)
        energies: level energies, e.g. spectrum(p).energies

    Returns:
        LevelDiagram: V(φ0) and one interval list per level
    """
    phi = np.asarray(phi_grid, dtype=float)
    V = potential(p, phi)
    energies = np.asarray(energies, dtype=float)
    return LevelDiagram(phi=phi, V=V, energies=energies,
                        intervals=[allowed_intervals(phi, V, float(E)) for E in energies])


def phi_grid(points: int) -> np.ndarray:
    return np.linspace(0.0, 2.0 * math.pi, points, endpoint=False)
