import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from errors import EmptyWindow, LeftDomain, SingularMobility
from geometry import ConfinementPotential, TrackGeometry, build_t_track, gradient_at, potential_at, potential_for
from params import (E_CHARGE, G_FACTOR, GAMMA_E, HBAR, MU_B, ExperimentConfig, ThieleConfig,
                    derive_scales)
from sweep import run_sweep

logger = logging.getLogger(__name__)


class Direction(str, Enum):
    FORWARD = "forward"
    REVERSE = "reverse"


class OutcomeClass(str, Enum):
    TRANSMITTED = "Transmitted"
    REFLECTED = "Reflected"
    STALLED = "Stalled"
    ANNIHILATED = "Annihilated"


@dataclass(frozen=True)
class ThieleParams:
    """
    Coefficients of G×v + α_G·D·v = F − ∇U.

    G carries the sign of the topological charge; F is the forward drive force.
    """
    G: float
    d_diss: float
    alpha_G: float
    F: Tuple[float, float]

    def mirrored(self) -> 'ThieleParams':
        """Parameters seen in the left–right mirror image."""
        return replace(self, G=-self.G, F=(self.F[0], -self.F[1]))


@dataclass(frozen=True)
class TrajectorySample:
    t: float
    x: float
    y: float
    Q: float
    E: float


@dataclass
class DiodeOutcome:
    direction: Direction
    kind: OutcomeClass
    time: Optional[float]
    trajectory: List[TrajectorySample] = field(default_factory=list)
    flag: str = ""
    snapshots: List[Tuple[float, np.ndarray]] = field(default_factory=list)


@dataclass
class Trajectory:
    t: np.ndarray
    r: np.ndarray
    v: np.ndarray


@dataclass
class SweepResult:
    rows: List[Tuple[float, str, str, Optional[float], Optional[float]]]
    window: Optional[Tuple[float, float]]


def steady_velocity(p: ThieleParams, F: Sequence[float]) -> np.ndarray:
    """
    Solve the 2×2 Thiele system for a constant force.

    Args:
        p: Thiele coefficients
        F: force (F_x, F_y) [N]

    Returns:
        np.ndarray: velocity (v_x, v_y) [m/s]

    Raises:
        SingularMobility: if G and α_G·d_diss both vanish
    """
    ad = p.alpha_G * p.d_diss
    norm = p.G ** 2 + ad ** 2
    if norm == 0.0:
        raise SingularMobility("G and alpha_G·d_diss are both zero")
    fx, fy = float(F[0]), float(F[1])
    return np.array([(ad * fx + p.G * fy) / norm, (-p.G * fx + ad * fy) / norm])


def auto_dt(p: ThieleParams, pot: ConfinementPotential) -> float:
    """RK4 step resolving the stiffest edge curvature U0/λ² with a margin of four."""
    ad = p.alpha_G * p.d_diss
    return 0.25 * math.sqrt(p.G ** 2 + ad ** 2) * pot.lam ** 2 / pot.U0


def integrate(p: ThieleParams, pot: ConfinementPotential, r0: Sequence[float], T: float,
              dt: Optional[float] = None, force: Optional[Sequence[float]] = None,
              stop: Optional[Callable[[float, np.ndarray, np.ndarray], bool]] = None) -> Trajectory:
    """
    RK4 over the massless Thiele flow dr/dt = v(r).

    Args:
        p: Thiele coefficients
        pot: confinement potential, ∇U interpolated bilinearly
        r0: start position [m]
        T: final time [s]
        dt: step [s]; None picks auto_dt
        force: drive force, defaults to p.F
        stop: called as stop(t, r, v) after each step; True ends the run

    Returns:
        Trajectory: times, positions and velocities at every step

    Raises:
        LeftDomain: if r leaves the raster bounding box; carries the path up to the last step inside
    """
    F = np.asarray(p.F if force is None else force, dtype=float)
    if dt is None or dt <= 0:
        dt = auto_dt(p, pot)
    nx, ny = pot.U.shape
    x_max = nx * pot.cell_size
    y_max = ny * pot.cell_size
    ts, rs, vs = [], [], []

    def velocity(r):
        return steady_velocity(p, F - gradient_at(pot, r[0], r[1]))

    def check(r, t):
        if not (0.0 <= r[0] <= x_max and 0.0 <= r[1] <= y_max):
            partial = Trajectory(t=np.array(ts), r=np.array(rs).reshape(-1, 2), v=np.array(vs).reshape(-1, 2))
            raise LeftDomain(f"core left the domain at ({r[0] * 1e9:.1f}, {r[1] * 1e9:.1f}) nm", t=t,
                             trajectory=partial)

    r = np.asarray(r0, dtype=float)
    check(r, 0.0)
    v = velocity(r)
    ts.append(0.0)
    rs.append(r.copy())
    vs.append(v)
    n_steps = int(math.ceil(T / dt))
    logger.debug(f"Thiele RK4: {n_steps} steps of {dt:.3g} s")
    for k in range(1, n_steps + 1):
        t = k * dt
        k1 = v
        k2 = velocity(r + 0.5 * dt * k1)
        k3 = velocity(r + 0.5 * dt * k2)
        k4 = velocity(r + dt * k3)
        r = r + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        check(r, t)
        v = velocity(r)
        ts.append(t)
        rs.append(r.copy())
        vs.append(v)
        if stop is not None and stop(t, r, v):
            break
    return Trajectory(t=np.array(ts), r=np.array(rs), v=np.array(vs))


class DiodeClassifier:
    """
    Outcome rule shared by the Thiele and LLG protocols.

    Transmitted when the core crosses the output plane. Reflected when, after
    coming within one input-arm width of the throat, the core re-crosses the
    injection plane moving away. A core pinned anywhere else is Stalled at timeout.
    """

    def __init__(self, geometry: TrackGeometry, direction: Direction, rules: ThieleConfig):
        L = geometry.length
        if direction == Direction.FORWARD:
            self.sense = 1.0
            self.injection_x = rules.injection_fraction * L
            self.output_x = rules.output_fraction * L
        else:
            self.sense = -1.0
            self.injection_x = (1.0 - rules.injection_fraction) * L
            self.output_x = (1.0 - rules.output_fraction) * L
        self.throat_x = geometry.throat_x
        self.approach_radius = geometry.arm_width_in
        self.approached = False
        self.prev_x: Optional[float] = None

    def _throat_distance(self, x: float) -> float:
        x0, x1 = self.throat_x
        if x < x0:
            return x0 - x
        if x > x1:
            return x - x1
        return 0.0

    def update(self, t: float, x: float, y: float) -> Optional[Tuple[OutcomeClass, str]]:
        """
        Feed one sample.

        Returns:
            Optional[Tuple[OutcomeClass, str]]: the outcome and a flag once the rule fires, else None
        """
        s = self.sense
        prev_x = self.prev_x
        self.prev_x = x
        if s * (x - self.output_x) >= 0:
            return OutcomeClass.TRANSMITTED, ""
        if self._throat_distance(x) <= self.approach_radius:
            self.approached = True
        if not self.approached:
            return None
        if prev_x is not None and s * (prev_x - self.injection_x) > 0 >= s * (x - self.injection_x):
            return OutcomeClass.REFLECTED, "returned"
        return None


def drive_force(cfg: ExperimentConfig, G: float, d_diss: float, j: float) -> Tuple[float, float]:
    """
    Forward drive force at current density j.

    SOT gives a longitudinal force π²ħθJR/(2e); Zhang–Li STT gives
    (β·d·u, G·u) with u = P·g·μB·J/(2e·Ms).
    """
    th, drive = cfg.thiele, cfg.drive
    if th.F_dl > 0:
        scale = j / drive.current_density if drive.current_density > 0 else 0.0
        return th.F_dl * scale, 0.0
    if drive.torque_kind == "STT_zhang_li":
        u = drive.polarization * G_FACTOR * MU_B * j / (2.0 * E_CHARGE * cfg.material.Ms)
        return drive.nonadiabaticity_beta * d_diss * u, G * u
    return math.pi ** 2 * HBAR * drive.spin_hall_angle * j * th.radius / (2.0 * E_CHARGE), 0.0


def thiele_params(cfg: ExperimentConfig, j: Optional[float] = None) -> ThieleParams:
    """
    Rigid-core coefficients from the config.

    G = 4πQ·Ms·t/γ and d_diss = |G|·π²R/(8·delta_dw) unless set explicitly.
    """
    th, mat = cfg.thiele, cfg.material
    scales = derive_scales(mat)
    G = th.G if th.G != 0 else 4.0 * math.pi * th.charge * mat.Ms * mat.thickness / GAMMA_E
    d_diss = th.d_diss if th.d_diss > 0 else abs(G) * math.pi ** 2 * th.radius / (8.0 * scales.delta_dw)
    current = cfg.drive.current_density if j is None else j
    F = drive_force(cfg, G, d_diss, current)
    return ThieleParams(G=G, d_diss=d_diss, alpha_G=th.alpha_G, F=F)


def start_position(geometry: TrackGeometry, direction: Direction, rules: ThieleConfig) -> Tuple[float, float]:
    """Center line of the injection arm, start_fraction of the length in from its end."""
    L = geometry.length
    if direction == Direction.FORWARD:
        return rules.start_fraction * L, geometry.arm_center_y("left")
    return (1.0 - rules.start_fraction) * L, geometry.arm_center_y("right")


def _samples(traj: Optional[Trajectory], pot: ConfinementPotential, charge: float) -> List[TrajectorySample]:
    if traj is None:
        return []
    return [TrajectorySample(float(t), float(r[0]), float(r[1]), charge, potential_at(pot, r[0], r[1]))
            for t, r in zip(traj.t, traj.r)]


def classify_diode(p: ThieleParams, pot: ConfinementPotential, geometry: TrackGeometry,
                   direction: Direction, timeout: float, rules: ThieleConfig = ThieleConfig(),
                   charge: float = -1.0) -> DiodeOutcome:
    """
    Run one diode protocol with the Thiele integrator.

    Args:
        p: Thiele coefficients, p.F the forward force
        pot: confinement potential of geometry
        geometry: track with input/output arms
        direction: Forward starts in the left arm pushing +x, Reverse the right arm pushing −x
        timeout: Stalled after this time [s]
        rules: classification planes and fractions
        charge: Q reported in the trajectory

    Returns:
        DiodeOutcome: class, transit or return time and the trajectory
    """
    sense = 1.0 if direction == Direction.FORWARD else -1.0
    force = (sense * p.F[0], sense * p.F[1])
    classifier = DiodeClassifier(geometry, direction, rules)
    r0 = start_position(geometry, direction, rules)
    fired: List[Tuple[float, OutcomeClass, str]] = []

    def stop(t, r, v):
        result = classifier.update(t, r[0], r[1])
        if result is not None:
            fired.append((t, result[0], result[1]))
            return True
        return False

    dt = rules.dt if rules.dt > 0 else None
    try:
        traj = integrate(p, pot, r0, timeout, dt=dt, force=force, stop=stop)
    except LeftDomain as e:
        logger.warning(f"{direction.value}: {e}; counted as Reflected")
        return DiodeOutcome(direction, OutcomeClass.REFLECTED, e.t,
                            _samples(e.trajectory, pot, charge), flag="left_domain")

    samples = _samples(traj, pot, charge)
    if fired:
        t, kind, flag = fired[0]
        logger.info(f"Thiele {direction.value}: {kind.value} at {t * 1e9:.3f} ns ({flag or 'crossed'})")
        return DiodeOutcome(direction, kind, t, samples, flag)
    logger.info(f"Thiele {direction.value}: Stalled after {timeout * 1e9:.1f} ns")
    return DiodeOutcome(direction, OutcomeClass.STALLED, None, samples)


def run_diode_thiele(cfg: ExperimentConfig) -> Tuple[DiodeOutcome, DiodeOutcome]:
    """Forward and reverse protocol on the configured track."""
    geometry = build_t_track(cfg.geometry, cfg.material)
    pot = potential_for(geometry, cfg.geometry, cfg.material)
    p = thiele_params(cfg)
    return tuple(classify_diode(p, pot, geometry, d, cfg.thiele.timeout, cfg.thiele, cfg.thiele.charge)
                 for d in (Direction.FORWARD, Direction.REVERSE))


def sweep_currents(rules: ThieleConfig) -> np.ndarray:
    return np.linspace(rules.j_start, rules.j_stop, rules.j_points)


def efficiency_sweep(cfg: ExperimentConfig, j_values: Sequence[float], threads: int = 1,
                     geometry: Optional[TrackGeometry] = None,
                     pot: Optional[ConfinementPotential] = None) -> SweepResult:
    """
    Classify both directions at each current density.

    Args:
        cfg: experiment config
        j_values: ascending current densities [A/m²]
        threads: worker threads
        geometry: track, built from cfg when None
        pot: potential, built from cfg when None

    Returns:
        SweepResult: rows (J, forward class, reverse class, τ_fwd, τ_rev) and the
        operating window [j_min, j_max] of (Transmitted, Reflected) rows

    Raises:
        EmptyWindow: no current gives (Transmitted, Reflected); rows ride on the exception
    """
    if list(j_values) != sorted(j_values):
        raise ValueError("j_values must be ascending")
    if geometry is None:
        geometry = build_t_track(cfg.geometry, cfg.material)
    if pot is None:
        pot = potential_for(geometry, cfg.geometry, cfg.material)
    rules = cfg.thiele

    def run_point(j):
        p = thiele_params(cfg, j)
        if p.F == (0.0, 0.0):
            logger.debug(f"J = {j:.3g}: zero drive")
        fwd = classify_diode(p, pot, geometry, Direction.FORWARD, rules.timeout, rules, rules.charge)
        rev = classify_diode(p, pot, geometry, Direction.REVERSE, rules.timeout, rules, rules.charge)
        return fwd, rev

    rows = []
    for j, (fwd, rev) in run_sweep(run_point, [float(j) for j in j_values], threads):
        rows.append((j, fwd.kind.value, rev.kind.value, fwd.time, rev.time))

    in_window = [r[0] for r in rows
                 if r[1] == OutcomeClass.TRANSMITTED.value and r[2] == OutcomeClass.REFLECTED.value]
    if not in_window:
        raise EmptyWindow("no current density gives (Transmitted, Reflected)", rows)
    window = (min(in_window), max(in_window))
    logger.info(f"Operating window: {window[0]:.3g} – {window[1]:.3g} A/m²")
    return SweepResult(rows=rows, window=window)
