import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.integrate import BDF

from errors import NoConvergence, SkyrmionAnnihilated, StepUnstable
from geometry import (TrackGeometry, build_rectangle, build_t_track, check_resolution, masked_gradient,
                      resolved_cell_size)
from params import (E_CHARGE, G_FACTOR, GAMMA0, GAMMA_E, HBAR, MU0, MU_B, DriveParams, ExperimentConfig,
                    LLGConfig, MaterialParams, derive_scales)
from sweep import run_sweep
from thiele import DiodeClassifier, DiodeOutcome, Direction, OutcomeClass, TrajectorySample, start_position

logger = logging.getLogger(__name__)

NORM_TOLERANCE = 1e-3
# BDF runs in ns; NORM_RATE [1/s] pulls |m| back to 1 between steps
TIME_UNIT = 1e-9
NORM_RATE = 1e12
# skyrmion charge is summed within the core radius plus this many wall widths
CHARGE_MARGIN = 3.0
REFINE_FACTOR = 0.75

Vector = Sequence[float]


@dataclass
class EffectiveField:
    """Per-cell field contributions [A/m], each of shape (nx, ny, 3)."""
    exchange: np.ndarray
    dmi: np.ndarray
    anisotropy: np.ndarray
    zeeman: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.exchange + self.dmi + self.anisotropy + self.zeeman


@dataclass(frozen=True)
class SkyrmionObservables:
    Q: float
    x: float
    y: float
    diameter: float
    energy: float


def normalize(m: np.ndarray, g: TrackGeometry) -> np.ndarray:
    """Project every magnetic cell onto the unit sphere; zero elsewhere."""
    norm = np.linalg.norm(m, axis=-1, keepdims=True)
    out = np.divide(m, norm, out=np.zeros_like(m), where=norm > 0)
    out[~g.mask] = 0.0
    return out


def uniform_state(g: TrackGeometry, direction: Vector = (0.0, 0.0, 1.0)) -> np.ndarray:
    m = np.zeros((g.nx, g.ny, 3))
    m[g.mask] = np.asarray(direction, dtype=float)
    return normalize(m, g)


def seed_skyrmion(g: TrackGeometry, center: Tuple[float, float], radius: float, wall_width: float,
                  helicity: float = 0.0) -> np.ndarray:
    """
    Analytic 360° wall ansatz in a +ẑ background.

    θ(r) = 2·atan(sinh(R/w)/sinh(r/w)), core down. helicity = 0 gives the
    outward Néel texture, whose charge is −1.

    Args:
        g: raster
        center: core position [m]
        radius: R [m]
        wall_width: w [m]
        helicity: in-plane angle relative to the radial direction [rad]
    """
    xs, ys = g.centers
    dx = xs - center[0]
    dy = ys - center[1]
    r = np.hypot(dx, dy)
    theta = 2.0 * np.arctan2(np.sinh(radius / wall_width), np.sinh(r / wall_width))
    phi = np.arctan2(dy, dx) + helicity
    m = np.stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], axis=-1)
    m[~g.mask] = 0.0
    return normalize(m, g)


def _bond_differences(m: np.ndarray, g: TrackGeometry) -> Tuple[np.ndarray, np.ndarray]:
    dx = (m[1:] - m[:-1]) * g.x_bonds[..., None]
    dy = (m[:, 1:] - m[:, :-1]) * g.y_bonds[..., None]
    return dx, dy


def effective_field(m: np.ndarray, g: TrackGeometry, p: MaterialParams,
                    B_ext: Vector = (0.0, 0.0, 0.0)) -> EffectiveField:
    """
    Field of the bond-sum energy, H = −(1/μ0·Ms·h²·t)·∂E/∂m.

    Exchange and DMI come from nearest-neighbour bonds inside the mask, so the
    free-boundary condition at edges follows from the missing bonds.
    Anisotropy uses k_eff; Zeeman is B_ext/μ0.
    """
    h = g.cell_size
    bx = g.x_bonds[..., None]
    by = g.y_bonds[..., None]

    dx, dy = _bond_differences(m, g)
    lap = np.zeros_like(m)
    lap[:-1] += dx
    lap[1:] -= dx
    lap[:, :-1] += dy
    lap[:, 1:] -= dy
    exchange = (2.0 * p.Aex / (MU0 * p.Ms * h ** 2)) * lap

    east_west = np.zeros_like(m)
    east_west[:-1] += m[1:] * bx
    east_west[1:] -= m[:-1] * bx
    north_south = np.zeros_like(m)
    north_south[:, :-1] += m[:, 1:] * by
    north_south[:, 1:] -= m[:, :-1] * by
    dmi = (p.Dmi / (MU0 * p.Ms * h)) * np.stack(
        [east_west[..., 2], north_south[..., 2], -east_west[..., 0] - north_south[..., 1]], axis=-1)

    anisotropy = np.zeros_like(m)
    anisotropy[..., 2] = 2.0 * p.k_eff * m[..., 2] / (MU0 * p.Ms)

    zeeman = np.zeros_like(m)
    zeeman[g.mask] = np.asarray(B_ext, dtype=float) / MU0

    for part in (exchange, dmi, anisotropy):
        part[~g.mask] = 0.0
    return EffectiveField(exchange=exchange, dmi=dmi, anisotropy=anisotropy, zeeman=zeeman)


def energy_terms(m: np.ndarray, g: TrackGeometry, p: MaterialParams,
                 B_ext: Vector = (0.0, 0.0, 0.0)) -> Dict[str, float]:
    """Exchange, DMI, anisotropy and Zeeman energies [J]."""
    h, t = g.cell_size, p.thickness
    dx, dy = _bond_differences(m, g)
    exchange = p.Aex * t * (float(np.sum(dx * dx)) + float(np.sum(dy * dy)))

    a, b = m[:-1], m[1:]
    dmi_x = np.sum((a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]) * g.x_bonds)
    a, b = m[:, :-1], m[:, 1:]
    dmi_y = -np.sum((a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]) * g.y_bonds)
    dmi = p.Dmi * h * t * float(dmi_x + dmi_y)

    mz = m[..., 2][g.mask]
    anisotropy = -p.k_eff * h * h * t * float(np.sum(mz * mz))
    zeeman = -p.Ms * h * h * t * float(np.sum(m[g.mask] @ np.asarray(B_ext, dtype=float)))
    return {'exchange': exchange, 'dmi': dmi, 'anisotropy': anisotropy, 'zeeman': zeeman}


def energy(m: np.ndarray, g: TrackGeometry, p: MaterialParams, B_ext: Vector = (0.0, 0.0, 0.0)) -> float:
    return sum(energy_terms(m, g, p, B_ext).values())


def dl_field(p: MaterialParams, drive: DriveParams) -> float:
    """Damping-like SOT field amplitude ħθJ/(2e·μ0·Ms·t) [A/m]."""
    return HBAR * drive.spin_hall_angle * drive.current_density / (2.0 * E_CHARGE * MU0 * p.Ms * p.thickness)


def stt_velocity(p: MaterialParams, drive: DriveParams) -> float:
    """Zhang–Li drift velocity u = P·g·μB·J/(2e·Ms) [m/s]."""
    return drive.polarization * G_FACTOR * MU_B * drive.current_density / (2.0 * E_CHARGE * p.Ms)


def drive_torque(m: np.ndarray, g: TrackGeometry, p: MaterialParams, drive: DriveParams,
                 sign: float = 1.0) -> np.ndarray:
    """Current-induced torque in Gilbert form; sign = −1 reverses the current."""
    if drive.current_density == 0:
        return np.zeros_like(m)
    if drive.torque_kind == "STT_zhang_li":
        u = sign * stt_velocity(p, drive)
        u_grad = u * masked_gradient(m, g.mask, g.cell_size, 0)
        return -u_grad + drive.nonadiabaticity_beta * np.cross(m, u_grad)
    sigma = np.asarray(drive.polarization_dir, dtype=float)
    return -GAMMA0 * sign * dl_field(p, drive) * np.cross(m, np.cross(m, sigma))


def llg_rhs(m: np.ndarray, g: TrackGeometry, p: MaterialParams, drive: Optional[DriveParams] = None,
            B_ext: Vector = (0.0, 0.0, 0.0), sign: float = 1.0, precession: bool = True) -> np.ndarray:
    """
    dm/dt in Landau–Lifshitz form with γ' = γ0/(1+α²).

    With precession=False only the relaxation term −γ'·m×(m×H) remains.
    """
    H = effective_field(m, g, p, B_ext).total
    gp = GAMMA0 / (1.0 + p.alpha ** 2)
    mxH = np.cross(m, H)
    mxmxH = np.cross(m, mxH)
    if precession:
        rhs = -gp * mxH - gp * p.alpha * mxmxH
    else:
        rhs = -gp * mxmxH
    if drive is not None and drive.current_density != 0:
        tau = drive_torque(m, g, p, drive, sign)
        rhs += (tau + p.alpha * np.cross(m, tau)) / (1.0 + p.alpha ** 2)
    rhs[~g.mask] = 0.0
    return rhs


def _check_norm(m: np.ndarray, g: TrackGeometry) -> None:
    deviation = np.abs(np.linalg.norm(m[g.mask], axis=-1) - 1.0)
    worst = float(deviation.max()) if deviation.size else 0.0
    if worst > NORM_TOLERANCE:
        raise StepUnstable(f"|m| deviates from 1 by {worst:.3g} before renormalization")


def step_llg(m: np.ndarray, g: TrackGeometry, p: MaterialParams, drive: Optional[DriveParams], dt: float,
             B_ext: Vector = (0.0, 0.0, 0.0), sign: float = 1.0, precession: bool = True) -> np.ndarray:
    """
    One Heun predictor–corrector step, renormalized.

    Raises:
        StepUnstable: if the predictor or corrector leaves the unit sphere by more than 1e-3
    """
    k1 = llg_rhs(m, g, p, drive, B_ext, sign, precession)
    predictor = m + dt * k1
    _check_norm(predictor, g)
    predictor = normalize(predictor, g)
    k2 = llg_rhs(predictor, g, p, drive, B_ext, sign, precession)
    corrected = m + 0.5 * dt * (k1 + k2)
    _check_norm(corrected, g)
    return normalize(corrected, g)


def stability_dt(m: np.ndarray, g: TrackGeometry, p: MaterialParams, drive: Optional[DriveParams] = None,
                 B_ext: Vector = (0.0, 0.0, 0.0)) -> float:
    """
    Half the explicit stability bound 1/(γ'·H_max).

    H_max is the largest field magnitude at t = 0 plus the largest exchange
    and DMI fields any unit texture can produce on this raster.
    """
    H = effective_field(m, g, p, B_ext).total
    h = g.cell_size
    h_now = float(np.linalg.norm(H[g.mask], axis=-1).max()) if g.mask.any() else 0.0
    h_stiff = (8.0 * p.Aex + 4.0 * abs(p.Dmi) * h) / (MU0 * p.Ms * h * h)
    if not (g.x_bonds.any() or g.y_bonds.any()):
        h_stiff = 0.0
    h_drive = dl_field(p, drive) if drive is not None else 0.0
    gp = GAMMA0 / (1.0 + p.alpha ** 2)
    h_max = h_now + h_stiff + abs(h_drive)
    if h_max == 0.0:
        return 1e-13
    return 0.5 / (gp * h_max)


def max_torque(m: np.ndarray, g: TrackGeometry, p: MaterialParams, B_ext: Vector = (0.0, 0.0, 0.0)) -> float:
    """Largest |m×H_eff| over the mask [A/m]."""
    H = effective_field(m, g, p, B_ext).total
    torque = np.linalg.norm(np.cross(m, H)[g.mask], axis=-1)
    return float(torque.max()) if torque.size else 0.0


def jacobian_pattern(g: TrackGeometry) -> sparse.csr_matrix:
    """Nonzeros of ∂(dm/dt)/∂m over the masked cells: every cell couples to itself and its bonded neighbours."""
    n = int(g.mask.sum())
    index = np.full(g.mask.shape, -1, dtype=np.int64)
    index[g.mask] = np.arange(n)
    a = np.concatenate([index[:-1][g.x_bonds], index[:, :-1][g.y_bonds]])
    b = np.concatenate([index[1:][g.x_bonds], index[:, 1:][g.y_bonds]])
    rows = np.concatenate([np.arange(n), a, b])
    cols = np.concatenate([np.arange(n), b, a])
    adjacency = sparse.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
    return sparse.kron(adjacency, np.ones((3, 3)), format='csr')


class MaskedFlow:
    """
    dm/dt on the masked cells as one flat vector, in the form scipy's
    implicit solvers take.

    The right-hand side is llg_rhs plus NORM_RATE·(1 − |m|²)·m, which leaves
    unit textures untouched and pulls solver drift back onto the sphere.
    Time is measured in TIME_UNIT.
    """

    def __init__(self, g: TrackGeometry, p: MaterialParams, drive: Optional[DriveParams] = None,
                 B_ext: Vector = (0.0, 0.0, 0.0), sign: float = 1.0, precession: bool = True):
        self.g = g
        self.p = p
        self.drive = drive
        self.B_ext = B_ext
        self.sign = sign
        self.precession = precession

    def pack(self, m: np.ndarray) -> np.ndarray:
        return m[self.g.mask].ravel()

    def unpack(self, y: np.ndarray) -> np.ndarray:
        m = np.zeros((self.g.nx, self.g.ny, 3))
        m[self.g.mask] = y.reshape(-1, 3)
        return m

    def __call__(self, tau: float, y: np.ndarray) -> np.ndarray:
        m = self.unpack(y)
        rhs = llg_rhs(m, self.g, self.p, self.drive, self.B_ext, self.sign, self.precession)[self.g.mask]
        cells = y.reshape(-1, 3)
        rhs += NORM_RATE * (1.0 - np.einsum('ij,ij->i', cells, cells))[:, None] * cells
        return TIME_UNIT * rhs.ravel()


def implicit_flow(m: np.ndarray, g: TrackGeometry, p: MaterialParams, t_end: float,
                  drive: Optional[DriveParams] = None, B_ext: Vector = (0.0, 0.0, 0.0), sign: float = 1.0,
                  precession: bool = True, rtol: float = 1e-5,
                  atol: float = 1e-7) -> Iterator[Tuple[float, float, Callable[[float], np.ndarray]]]:
    """
    Variable-order BDF over the masked cells with a finite-difference
    Jacobian on the nearest-neighbour pattern.

    Exchange stiffness caps explicit steps near 1e-14 s at nanometre cells;
    BDF step sizes follow the texture dynamics instead.

    Args:
        m: initial texture
        g: raster
        p: material
        t_end: final time [s]
        drive: current drive, None for none
        B_ext: applied field [T]
        sign: −1 reverses the current
        precession: False keeps only the damping term
        rtol: relative tolerance on m
        atol: absolute tolerance on m

    Yields:
        Tuple[float, float, Callable]: (t_old, t, state) after every accepted step, state(t')
        giving the unit texture at any t' in [t_old, t]

    Raises:
        StepUnstable: if the solver fails or |m| drifts by more than NORM_TOLERANCE
    """
    flow = MaskedFlow(g, p, drive, B_ext, sign, precession)
    solver = BDF(flow, 0.0, flow.pack(normalize(m, g)), t_end / TIME_UNIT, rtol=rtol, atol=atol,
                 jac_sparsity=jacobian_pattern(g))
    logger.debug(f"BDF over {int(g.mask.sum())} cells up to {t_end * 1e9:.3f} ns")
    while solver.status == 'running':
        message = solver.step()
        if solver.status == 'failed':
            raise StepUnstable(f"BDF failed at {solver.t * TIME_UNIT * 1e9:.4f} ns: {message}")
        cells = solver.y.reshape(-1, 3)
        drift = float(np.abs(np.linalg.norm(cells, axis=-1) - 1.0).max()) if cells.size else 0.0
        if drift > NORM_TOLERANCE:
            raise StepUnstable(f"|m| deviates from 1 by {drift:.3g} at {solver.t * TIME_UNIT * 1e9:.4f} ns")
        interpolant = solver.dense_output()

        def state(t: float, interpolant=interpolant) -> np.ndarray:
            return normalize(flow.unpack(interpolant(t / TIME_UNIT)), g)

        yield solver.t_old * TIME_UNIT, solver.t * TIME_UNIT, state


def _relax_implicit(m: np.ndarray, g: TrackGeometry, p: MaterialParams, max_time: float, torque_tol: float,
                    B_ext: Vector, rtol: float, atol: float) -> np.ndarray:
    m = normalize(m, g)
    torque = max_torque(m, g, p, B_ext)
    if torque < torque_tol:
        return m
    for _, t, state in implicit_flow(m, g, p, max_time, B_ext=B_ext, precession=False, rtol=rtol, atol=atol):
        m = state(t)
        torque = max_torque(m, g, p, B_ext)
        if torque < torque_tol:
            logger.info(f"Relaxed after {t * 1e9:.3f} ns, max torque {torque:.3g} A/m")
            return m
    raise NoConvergence(f"max torque {torque:.3g} A/m above {torque_tol} after {max_time * 1e9:.3f} ns")


def relax(m: np.ndarray, g: TrackGeometry, p: MaterialParams, max_time: float, torque_tol: float,
          B_ext: Vector = (0.0, 0.0, 0.0), max_halvings: int = 10, check_every: int = 20,
          method: str = "heun", rtol: float = 1e-5, atol: float = 1e-7) -> np.ndarray:
    """
    Damping-only flow until the largest cell torque drops below torque_tol.

    Args:
        m: initial texture
        g: raster
        p: material
        max_time: flow time budget [s]
        torque_tol: convergence threshold on max |m×H| [A/m]
        B_ext: applied field [T]
        max_halvings: StepUnstable retries with half the step (heun)
        check_every: steps between torque checks (heun)
        method: "heun" for fixed steps at half the stability bound, "bdf" for implicit_flow
        rtol: BDF relative tolerance
        atol: BDF absolute tolerance

    Returns:
        np.ndarray: relaxed texture

    Raises:
        NoConvergence: if max_time passes with the torque above tolerance
    """
    if method == "bdf":
        return _relax_implicit(m, g, p, max_time, torque_tol, B_ext, rtol, atol)
    m = normalize(m, g)
    dt = stability_dt(m, g, p, None, B_ext)
    halvings = 0
    t = 0.0
    steps = 0
    logger.debug(f"Relaxing {int(g.mask.sum())} cells with dt = {dt:.3g} s")
    while True:
        if steps % check_every == 0:
            torque = max_torque(m, g, p, B_ext)
            if torque < torque_tol:
                logger.info(f"Relaxed after {t * 1e9:.3f} ns, max torque {torque:.3g} A/m")
                return m
            if t >= max_time:
                raise NoConvergence(f"max torque {torque:.3g} A/m above {torque_tol} after {t * 1e9:.3f} ns")
        try:
            m = step_llg(m, g, p, None, dt, B_ext, precession=False)
        except StepUnstable:
            if halvings >= max_halvings:
                raise
            halvings += 1
            dt *= 0.5
            logger.warning(f"Relaxation step unstable, dt halved to {dt:.3g} s")
            continue
        t += dt
        steps += 1


def _triangle_angle(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    triple = np.einsum('...i,...i->...', a, np.cross(b, c))
    denom = 1.0 + np.einsum('...i,...i->...', a, b) + np.einsum('...i,...i->...', b, c) \
        + np.einsum('...i,...i->...', c, a)
    return 2.0 * np.arctan2(triple, denom)


def _plaquette_charge(m: np.ndarray, g: TrackGeometry) -> Tuple[np.ndarray, np.ndarray]:
    mask = g.mask
    plaquettes = mask[:-1, :-1] & mask[1:, :-1] & mask[1:, 1:] & mask[:-1, 1:]
    a, b, c, d = m[:-1, :-1], m[1:, :-1], m[1:, 1:], m[:-1, 1:]
    omega = _triangle_angle(a, b, c) + _triangle_angle(a, c, d)
    return omega / (4.0 * math.pi), plaquettes


def topological_charge(m: np.ndarray, g: TrackGeometry) -> float:
    """
    Berg–Lüscher lattice charge: signed solid angles of two counter-clockwise
    triangles per fully magnetic plaquette, summed and divided by 4π.
    """
    if g.nx < 2 or g.ny < 2:
        return 0.0
    density, plaquettes = _plaquette_charge(m, g)
    if not plaquettes.any():
        return 0.0
    return float(np.sum(density[plaquettes]))


def core_charge(m: np.ndarray, g: TrackGeometry, center: Tuple[float, float], radius: float) -> float:
    """
    Lattice charge of the plaquettes whose shared corner lies within radius of center.

    Edge canting puts a fractional charge at every corner of the film; summing
    around the core leaves it out.
    """
    if g.nx < 2 or g.ny < 2:
        return 0.0
    density, plaquettes = _plaquette_charge(m, g)
    corners = (np.arange(1, g.nx) * g.cell_size, np.arange(1, g.ny) * g.cell_size)
    px, py = np.meshgrid(*corners, indexing='ij')
    near = plaquettes & (np.hypot(px - center[0], py - center[1]) <= radius)
    return float(np.sum(density[near]))


def skyrmion_charge(m: np.ndarray, g: TrackGeometry, p: MaterialParams) -> float:
    """Charge around the core centroid (cells with m_z < 0); the whole-film charge when there is no core."""
    core = g.mask & (m[..., 2] < 0)
    n_core = int(core.sum())
    if not n_core or p.k_eff <= 0:
        return topological_charge(m, g)
    xs, ys = g.centers
    center = (float(xs[core].mean()), float(ys[core].mean()))
    radius = math.sqrt(n_core / math.pi) * g.cell_size + CHARGE_MARGIN * math.sqrt(p.Aex / p.k_eff)
    return core_charge(m, g, center, radius)


def observables(m: np.ndarray, g: TrackGeometry, p: MaterialParams,
                B_ext: Vector = (0.0, 0.0, 0.0)) -> SkyrmionObservables:
    """Charge around the core, core centroid (cells with m_z < 0), equivalent-area diameter and energy."""
    core = g.mask & (m[..., 2] < 0)
    n_core = int(core.sum())
    xs, ys = g.centers
    if n_core:
        x, y = float(xs[core].mean()), float(ys[core].mean())
    else:
        x, y = math.nan, math.nan
    diameter = 2.0 * math.sqrt(n_core * g.cell_size ** 2 / math.pi)
    return SkyrmionObservables(Q=skyrmion_charge(m, g, p), x=x, y=y, diameter=diameter,
                               energy=energy(m, g, p, B_ext))


def texture_helicity(m: np.ndarray, g: TrackGeometry) -> float:
    """Mean angle of the in-plane magnetization relative to the outward radial direction [rad]."""
    core = g.mask & (m[..., 2] < 0)
    if not core.any():
        return math.nan
    xs, ys = g.centers
    rx = xs - xs[core].mean()
    ry = ys - ys[core].mean()
    r = np.hypot(rx, ry)
    use = g.mask & (r > 0)
    radial = (m[..., 0] * rx + m[..., 1] * ry)[use] / r[use]
    tangential = (rx * m[..., 1] - ry * m[..., 0])[use] / r[use]
    return math.atan2(float(tangential.sum()), float(radial.sum()))


def mirror_texture(m: np.ndarray) -> np.ndarray:
    """Left–right spatial mirror with m_x → −m_x."""
    out = m[::-1, :, :].copy()
    out[..., 0] *= -1.0
    return out


def thiele_from_texture(m: np.ndarray, g: TrackGeometry, p: MaterialParams) -> Tuple[float, float]:
    """
    Gyrocoupling G = 4πQ·Ms·t/γ and dissipative diagonal d = (Ms·t/γ)·∫(∂ᵢm)² of a texture.

    Returns:
        Tuple[float, float]: (G, d_diss) [kg/s]
    """
    scale = p.Ms * p.thickness / GAMMA_E
    G = 4.0 * math.pi * skyrmion_charge(m, g, p) * scale
    dx, dy = _bond_differences(m, g)
    d_diss = scale * 0.5 * (float(np.sum(dx * dx)) + float(np.sum(dy * dy)))
    return G, d_diss


@dataclass
class RelaxedSkyrmion:
    Ku: float
    observables: SkyrmionObservables
    m: np.ndarray
    geometry: TrackGeometry


def relax_seeded(cfg: ExperimentConfig, material: MaterialParams,
                 cell_size: Optional[float] = None) -> RelaxedSkyrmion:
    """
    Seed one skyrmion at the middle of a square patch and relax it.

    Args:
        cfg: experiment config; llg sets the patch, seed and relaxation budget
        material: material of this point
        cell_size: raster cell [m]; None takes geometry.cell_size under geometry.resolution_slack,
            an explicit cell must meet the mesh rule without slack

    Returns:
        RelaxedSkyrmion: observables, texture and patch
    """
    llg = cfg.llg
    if cell_size is None:
        cell_size = cfg.geometry.cell_size
        check_resolution(cell_size, material, cfg.geometry.resolution_slack)
    else:
        check_resolution(cell_size, material, 0.0)
    scales = derive_scales(material)
    g = build_rectangle(llg.patch_size, llg.patch_size, cell_size)
    radius = llg.seed_radius if llg.seed_radius > 0 else 2.0 * scales.delta_dw
    center = (0.5 * g.length, 0.5 * g.width)
    m = seed_skyrmion(g, center, radius, scales.delta_dw)
    m = relax(m, g, material, llg.relax_time, llg.torque_tol, llg.B_ext, llg.max_halvings,
              method=llg.integrator, rtol=llg.rtol, atol=llg.atol)
    obs = observables(m, g, material, llg.B_ext)
    logger.info(f"Ku = {material.Ku:.3g}, cell {cell_size * 1e9:.3f} nm: Q = {obs.Q:.3f}, "
                f"diameter = {obs.diameter * 1e9:.2f} nm")
    return RelaxedSkyrmion(Ku=material.Ku, observables=obs, m=m, geometry=g)


def holds_charge(obs: SkyrmionObservables, tolerance: float = 0.05) -> bool:
    """True while the core charge is within tolerance of ±1."""
    return abs(abs(obs.Q) - 1.0) < tolerance


def size_sweep(cfg: ExperimentConfig, ku_values: Optional[Sequence[float]] = None,
               threads: int = 1) -> List[RelaxedSkyrmion]:
    """
    Relaxed skyrmion for every anisotropy in ku_values (default llg.ku_values or material.Ku).

    Each point runs on the mesh rule's own cell, min(l_ex, delta_dw)/5 for that
    Ku, or on geometry.cell_size when that is finer. A texture that loses its
    charge through the lattice is relaxed again on a cell REFINE_FACTOR
    smaller, up to llg.refinements times.
    """
    if ku_values is None:
        ku_values = cfg.llg.ku_values or (cfg.material.Ku,)

    def run_point(ku):
        material = replace(cfg.material, Ku=ku)
        cell_size = min(cfg.geometry.cell_size, resolved_cell_size(material))
        result = relax_seeded(cfg, material, cell_size)
        for _ in range(cfg.llg.refinements):
            if holds_charge(result.observables):
                break
            cell_size *= REFINE_FACTOR
            logger.warning(f"Ku = {ku:.3g}: Q = {result.observables.Q:.3f}, refining the cell "
                           f"to {cell_size * 1e9:.3f} nm")
            result = relax_seeded(cfg, material, cell_size)
        return result

    return [result for _, result in run_sweep(run_point, [float(k) for k in ku_values], threads)]


def _heun_samples(m: np.ndarray, g: TrackGeometry, p: MaterialParams, drive: DriveParams, llg: LLGConfig,
                  sign: float, n_samples: int) -> Iterator[Tuple[float, np.ndarray]]:
    dt = stability_dt(m, g, p, drive, llg.B_ext)
    steps_per_sample = max(1, int(math.ceil(llg.sample_interval / dt)))
    dt = llg.sample_interval / steps_per_sample
    halvings = 0
    logger.info(f"Heun: {steps_per_sample} steps of {dt:.3g} s per sample")
    for k in range(1, n_samples + 1):
        done = 0
        while done < steps_per_sample:
            try:
                m = step_llg(m, g, p, drive, dt, llg.B_ext, sign)
                done += 1
            except StepUnstable:
                if halvings >= llg.max_halvings:
                    raise
                halvings += 1
                dt *= 0.5
                done *= 2
                steps_per_sample *= 2
                logger.warning(f"LLG step unstable, dt halved to {dt:.3g} s")
        yield k * llg.sample_interval, m


def _bdf_samples(m: np.ndarray, g: TrackGeometry, p: MaterialParams, drive: DriveParams, llg: LLGConfig,
                 sign: float, n_samples: int) -> Iterator[Tuple[float, np.ndarray]]:
    k = 1
    steps = 0
    for _, t, state in implicit_flow(m, g, p, n_samples * llg.sample_interval, drive, llg.B_ext, sign,
                                     rtol=llg.rtol, atol=llg.atol):
        steps += 1
        while k <= n_samples and k * llg.sample_interval <= t * (1.0 + 1e-12):
            yield k * llg.sample_interval, state(k * llg.sample_interval)
            k += 1
    logger.debug(f"BDF: {steps} steps for {n_samples} samples")


def _record_sample(samples: List[TrajectorySample], m: np.ndarray, g: TrackGeometry, p: MaterialParams,
                   B_ext: Vector, t: float) -> TrajectorySample:
    """Append the core sample at t; raises SkyrmionAnnihilated once the charge is gone."""
    obs = observables(m, g, p, B_ext)
    sample = TrajectorySample(t, obs.x, obs.y, obs.Q, obs.energy)
    samples.append(sample)
    if abs(obs.Q) < 0.5:
        raise SkyrmionAnnihilated(f"charge {obs.Q:.3f} at {t * 1e9:.3f} ns", t=t)
    return sample


def run_diode_llg(cfg: ExperimentConfig, direction: Direction,
                  geometry: Optional[TrackGeometry] = None) -> DiodeOutcome:
    """
    Relax a seeded skyrmion in the injection arm, then drive it until the
    diode rule fires, the skyrmion annihilates or llg.run_time passes.

    Args:
        cfg: experiment config
        direction: Forward drives from the left arm, Reverse from the right arm with the current reversed
        geometry: track, built from cfg when None

    Returns:
        DiodeOutcome: class, time, core trajectory and optional snapshots
    """
    g = geometry if geometry is not None else build_t_track(cfg.geometry, cfg.material)
    p, drive, llg = cfg.material, cfg.drive, cfg.llg
    scales = derive_scales(p)
    x0, y0 = start_position(g, direction, cfg.thiele)
    radius = llg.seed_radius if llg.seed_radius > 0 else 2.0 * scales.delta_dw
    m = seed_skyrmion(g, (x0, y0), radius, scales.delta_dw)
    m = relax(m, g, p, llg.relax_time, llg.torque_tol, llg.B_ext, llg.max_halvings,
              method=llg.integrator, rtol=llg.rtol, atol=llg.atol)

    sign = 1.0 if direction == Direction.FORWARD else -1.0
    classifier = DiodeClassifier(g, direction, cfg.thiele)
    obs = observables(m, g, p, llg.B_ext)
    samples = [TrajectorySample(0.0, obs.x, obs.y, obs.Q, obs.energy)]
    snapshots = []
    if llg.snapshot_stride > 0:
        snapshots.append((0.0, m.copy()))
    n_samples = int(math.ceil(llg.run_time / llg.sample_interval))
    logger.info(f"LLG {direction.value}: {llg.integrator}, up to {n_samples} samples of "
                f"{llg.sample_interval * 1e12:.3g} ps")

    stepper = _bdf_samples if llg.integrator == "bdf" else _heun_samples
    try:
        for k, (t, m) in enumerate(stepper(m, g, p, drive, llg, sign, n_samples), start=1):
            if llg.snapshot_stride > 0 and k % llg.snapshot_stride == 0:
                snapshots.append((t, m.copy()))
            s = _record_sample(samples, m, g, p, llg.B_ext, t)
            result = classifier.update(t, s.x, s.y)
            if result is not None:
                kind, flag = result
                logger.info(f"LLG {direction.value}: {kind.value} at {t * 1e9:.3f} ns")
                return DiodeOutcome(direction, kind, t, samples, flag, snapshots)
    except SkyrmionAnnihilated as e:
        logger.warning(f"LLG {direction.value}: {e}; counted as Annihilated")
        return DiodeOutcome(direction, OutcomeClass.ANNIHILATED, e.t, samples, "annihilated", snapshots)

    logger.info(f"LLG {direction.value}: Stalled after {llg.run_time * 1e9:.1f} ns")
    return DiodeOutcome(direction, OutcomeClass.STALLED, None, samples, "", snapshots)


def texture_rows(m: np.ndarray, g: TrackGeometry):
    """Rows x_nm, y_nm, mx, my, mz for every magnetic cell."""
    xs, ys = g.centers
    return [(xs[i, j] * 1e9, ys[i, j] * 1e9, m[i, j, 0], m[i, j, 1], m[i, j, 2]) for i, j in np.argwhere(g.mask)]


def trajectory_rows(samples: Sequence[TrajectorySample]):
    """Rows t_ns, x_nm, y_nm, Q, E_joule."""
    return [(s.t * 1e9, s.x * 1e9, s.y * 1e9, s.Q, s.E) for s in samples]
