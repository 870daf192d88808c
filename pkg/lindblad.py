import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import InvalidState
from params import LindbladConfig
from sweep import run_sweep

logger = logging.getLogger(__name__)

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
LOWER = np.array([[0, 1], [0, 0]], dtype=complex)  # |0⟩⟨1|
IDENTITY = np.eye(2, dtype=complex)

KET0 = np.array([[1, 0], [0, 0]], dtype=complex)
KET1 = np.array([[0, 0], [0, 1]], dtype=complex)


@dataclass(frozen=True)
class QubitModel:
    J_coupling: float
    delta: float
    gamma_max: float
    eta: float

    @property
    def gamma(self) -> float:
        return self.eta * self.gamma_max


@dataclass
class FidelityMap:
    """F[i, j] at time t[i] and efficiency eta[j]."""
    t: np.ndarray
    eta: np.ndarray
    F: np.ndarray


def hamiltonian(model: QubitModel) -> np.ndarray:
    return model.J_coupling * SIGMA_X + model.delta * SIGMA_Z


def collapse_operator(model: QubitModel) -> np.ndarray:
    return math.sqrt(model.gamma) * LOWER


def liouvillian(model: QubitModel) -> np.ndarray:
    """
    4×4 generator acting on column-stacked vec(ρ).

    Uses vec(AρB) = (Bᵀ ⊗ A)·vec(ρ).
    """
    H = hamiltonian(model)
    C = collapse_operator(model)
    CdC = C.conj().T @ C
    return (-1j * (np.kron(IDENTITY, H) - np.kron(H.T, IDENTITY))
            + np.kron(C.conj(), C)
            - 0.5 * np.kron(IDENTITY, CdC)
            - 0.5 * np.kron(CdC.T, IDENTITY))


def vec(rho: np.ndarray) -> np.ndarray:
    return rho.reshape(-1, order='F')


def unvec(v: np.ndarray) -> np.ndarray:
    return v.reshape(2, 2, order='F')


def validate_state(rho: np.ndarray) -> None:
    """
    Check that rho is a density matrix.

    Raises:
        InvalidState: not 2×2, not Hermitian, trace ≠ 1 or a negative eigenvalue
    """
    rho = np.asarray(rho)
    if rho.shape != (2, 2):
        raise InvalidState(f"expected a 2×2 matrix, got shape {rho.shape}")
    if np.linalg.norm(rho - rho.conj().T) >= 1e-10:
        raise InvalidState("rho is not Hermitian")
    if abs(np.trace(rho) - 1.0) > 1e-9:
        raise InvalidState(f"trace {np.trace(rho).real:.12g} ≠ 1")
    if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() < -1e-9:
        raise InvalidState("rho has a negative eigenvalue")


def _rk4_propagator(L: np.ndarray, h: float) -> np.ndarray:
    """One classical RK4 step for a linear system: Σ_{k≤4} (hL)^k / k!."""
    A = h * L
    P = np.eye(L.shape[0], dtype=complex)
    term = np.eye(L.shape[0], dtype=complex)
    for k in range(1, 5):
        term = term @ A / k
        P = P + term
    return P


def evolve(model: QubitModel, rho0: np.ndarray, t_grid: Sequence[float],
           max_step: Optional[float] = None) -> np.ndarray:
    """
    Lindblad evolution dρ/dt = −i[H,ρ] + CρC† − ½{C†C, ρ} from ρ(0) = rho0.

    Fixed-step RK4 on the vectorized system; each output interval is split
    into equal sub-steps no longer than a tenth of the mean output spacing
    nor 0.05/‖L‖.

    Args:
        model: qubit parameters
        rho0: initial density matrix
        t_grid: ascending output times, ≥ 0
        max_step: optional extra cap on the sub-step

    Returns:
        np.ndarray: ρ(t) for every t, shape (len(t_grid), 2, 2)

    Raises:
        InvalidState: rho0 is not a density matrix
    """
    validate_state(rho0)
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size and (np.any(np.diff(t_grid) < 0) or t_grid[0] < 0):
        raise ValueError("t_grid must be ascending and non-negative")
    L = liouvillian(model)
    norm = np.linalg.norm(L, 2)
    h_max = 0.05 / norm if norm > 0 else math.inf
    if t_grid.size > 1:
        h_max = min(h_max, (t_grid[-1] - t_grid[0]) / (t_grid.size - 1) / 10.0)
    if max_step is not None:
        h_max = min(h_max, max_step)

    cache: Dict[Tuple[int, float], np.ndarray] = {}
    state = vec(np.asarray(rho0, dtype=complex))
    out = np.empty((t_grid.size, 2, 2), dtype=complex)
    t_prev = 0.0
    for i, t in enumerate(t_grid):
        interval = t - t_prev
        if interval > 0:
            n_sub = max(1, int(math.ceil(interval / h_max - 1e-9)))
            key = (n_sub, interval)
            if key not in cache:
                cache[key] = np.linalg.matrix_power(_rk4_propagator(L, interval / n_sub), n_sub)
            state = cache[key] @ state
        out[i] = unvec(state)
        t_prev = t
    return out


def forward_fidelity(model: QubitModel, t_grid: Sequence[float]) -> np.ndarray:
    """⟨1|ρ(t)|1⟩ from ρ(0) = |0⟩⟨0|, clipped to [0, 1]."""
    rho = evolve(model, KET0, t_grid)
    return np.clip(rho[:, 1, 1].real, 0.0, 1.0)


def reverse_fidelity(model: QubitModel, t_grid: Sequence[float]) -> np.ndarray:
    """⟨0|ρ(t)|0⟩ from ρ(0) = |1⟩⟨1|, clipped to [0, 1]."""
    rho = evolve(model, KET1, t_grid)
    return np.clip(rho[:, 0, 0].real, 0.0, 1.0)


def fidelity_maps(cfg: LindbladConfig, eta_grid: Sequence[float], t_grid: Sequence[float],
                  threads: int = 1) -> Tuple[FidelityMap, FidelityMap]:
    """
    Forward and reverse fidelity over an efficiency grid.

    Args:
        cfg: lindblad section (J, δ, γ_max)
        eta_grid: efficiencies in [0, 1]
        t_grid: output times in units of 1/J (plain time units when J = 0)
        threads: worker threads, one η column per task

    Returns:
        Tuple[FidelityMap, FidelityMap]: (forward, reverse)
    """
    eta_grid = np.asarray(eta_grid, dtype=float)
    if np.any(eta_grid < 0) or np.any(eta_grid > 1):
        raise ValueError("eta grid must lie in [0, 1]")
    t_grid = np.asarray(t_grid, dtype=float)
    times = t_grid / cfg.J_coupling if cfg.J_coupling > 0 else t_grid

    def column(eta):
        model = QubitModel(cfg.J_coupling, cfg.delta, cfg.gamma_max, eta)
        return forward_fidelity(model, times), reverse_fidelity(model, times)

    results = run_sweep(column, [float(e) for e in eta_grid], threads)
    etas = np.array([e for e, _ in results])
    fwd = np.stack([r[0] for _, r in results], axis=1)
    rev = np.stack([r[1] for _, r in results], axis=1)
    logger.info(f"Fidelity maps: {t_grid.size} times × {etas.size} efficiencies")
    return FidelityMap(t_grid, etas, fwd), FidelityMap(t_grid, etas, rev)


def default_grids(cfg: LindbladConfig) -> Tuple[np.ndarray, np.ndarray]:
    """η uniformly on [0, 1] and t on [0, t_max]."""
    return np.linspace(0.0, 1.0, cfg.eta_points), np.linspace(0.0, cfg.t_max, cfg.t_points)


def map_rows(forward: FidelityMap, reverse: FidelityMap) -> List[Tuple[float, float, float, float]]:
    """Long-form rows eta, t_over_J, F_forward, F_reverse, η outer."""
    rows = []
    for j, eta in enumerate(forward.eta):
        for i, t in enumerate(forward.t):
            rows.append((float(eta), float(t), float(forward.F[i, j]), float(reverse.F[i, j])))
    return rows
