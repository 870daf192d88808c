import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Tuple

import numpy as np
from scipy import ndimage

from data_store import write_csv
from errors import DegenerateGeometry, ResolutionError
from params import GeometryConfig, MaterialParams, derive_scales

logger = logging.getLogger(__name__)

Span = Tuple[float, float]


@dataclass(frozen=True, eq=False)
class TrackGeometry:
    """
    Rasterized track. mask[i, j] is the cell centered at ((i + 1/2)h, (j + 1/2)h),
    i along the track, j across it.
    """
    cell_size: float
    mask: np.ndarray
    arm_width_in: float
    arm_width_out: float
    stem_width: float
    throat_width: float
    throat_length: float
    widen_side: str
    left_arm: Span
    right_arm: Span
    throat_x: Span

    @property
    def nx(self) -> int:
        return self.mask.shape[0]

    @property
    def ny(self) -> int:
        return self.mask.shape[1]

    @property
    def length(self) -> float:
        return self.nx * self.cell_size

    @property
    def width(self) -> float:
        return self.ny * self.cell_size

    @cached_property
    def x_bonds(self) -> np.ndarray:
        """Pairs (i, j)-(i+1, j) with both cells magnetic, shape (nx-1, ny)."""
        return self.mask[1:, :] & self.mask[:-1, :]

    @cached_property
    def y_bonds(self) -> np.ndarray:
        return self.mask[:, 1:] & self.mask[:, :-1]

    @cached_property
    def centers(self) -> Tuple[np.ndarray, np.ndarray]:
        """Cell-center coordinates [m] as two (nx, ny) arrays."""
        x = (np.arange(self.nx) + 0.5) * self.cell_size
        y = (np.arange(self.ny) + 0.5) * self.cell_size
        return np.meshgrid(x, y, indexing='ij')

    def arm_center_y(self, side: str) -> float:
        lo, hi = self.left_arm if side == "left" else self.right_arm
        return 0.5 * (lo + hi)

    def mirror(self) -> 'TrackGeometry':
        """Reflect left–right: x → length − x."""
        length = self.length
        x0, x1 = self.throat_x
        return TrackGeometry(
            cell_size=self.cell_size,
            mask=self.mask[::-1, :].copy(),
            arm_width_in=self.arm_width_in,
            arm_width_out=self.arm_width_out,
            stem_width=self.stem_width,
            throat_width=self.throat_width,
            throat_length=self.throat_length,
            widen_side={"left": "right", "right": "left"}.get(self.widen_side, self.widen_side),
            left_arm=self.right_arm,
            right_arm=self.left_arm,
            throat_x=(length - x1, length - x0),
        )


@dataclass(frozen=True, eq=False)
class ConfinementPotential:
    U: np.ndarray
    grad: np.ndarray
    U0: float
    lam: float
    cell_size: float


def _rect(mask: np.ndarray, h: float, x0: float, x1: float, y0: float, y1: float) -> None:
    """Set every cell whose center lies in [x0, x1) × [y0, y1)."""
    nx, ny = mask.shape
    xc = (np.arange(nx) + 0.5) * h
    yc = (np.arange(ny) + 0.5) * h
    ix = (xc >= x0) & (xc < x1)
    iy = (yc >= y0) & (yc < y1)
    mask[np.ix_(ix, iy)] = True


def resolved_cell_size(material: MaterialParams) -> float:
    """Coarsest cell the continuum mesh rule allows, min(l_ex, delta_dw)/5 [m]."""
    scales = derive_scales(material)
    return min(scales.l_ex, scales.delta_dw) / 5.0


def check_resolution(cell_size: float, material: MaterialParams, slack: float) -> None:
    """
    Enforce the continuum mesh rule cell_size ≲ min(l_ex, delta_dw)/5.

    Raises:
        ResolutionError: if the cell is coarser than the rule allows
    """
    limit = resolved_cell_size(material)
    if cell_size > limit * (1.0 + slack):
        raise ResolutionError(
            f"cell_size {cell_size * 1e9:.3g} nm exceeds min(l_ex, delta_dw)/5 = {limit * 1e9:.3g} nm "
            f"(slack {slack})")


def build_t_track(layout: GeometryConfig, material: MaterialParams) -> TrackGeometry:
    """
    Rasterize the asymmetric T-junction.

    The narrow input arm, the throat and the wide output arm share the top edge.
    The stem hangs below the wide arm next to the throat and its foot runs on
    under the output arm, leaving a bar of vacuum between the two. widen_side =
    "left" builds the right-widening track and mirrors it.

    Args:
        layout: geometry section of the config
        material: material, for the mesh rule

    Returns:
        TrackGeometry: the mask and the layout it was built from

    Raises:
        DegenerateGeometry: zero-width throat, parts that do not fit, or a split mask
        ResolutionError: cell_size violates the mesh rule
    """
    if layout.throat_width <= 0:
        raise DegenerateGeometry("throat has zero width")
    if layout.throat_width > layout.arm_width_in:
        raise DegenerateGeometry("throat is wider than the input arm")
    if layout.arm_width_out <= layout.arm_width_in:
        raise DegenerateGeometry("output arm must be wider than the input arm")
    if layout.arm_width_out > layout.width:
        raise DegenerateGeometry("output arm is wider than the track")

    L, W, h = layout.length, layout.width, layout.cell_size
    x_junction = layout.junction_x * L
    x0 = x_junction - 0.5 * layout.throat_length
    x1 = x_junction + 0.5 * layout.throat_length
    x_foot = x1 + layout.stem_width + layout.foot_length if layout.foot_width > 0 else x1 + layout.stem_width
    if x0 <= 0 or x_foot > L:
        raise DegenerateGeometry("throat, stem and foot do not fit inside the track length")
    if layout.foot_width > 0 and layout.foot_width >= W - layout.arm_width_out:
        raise DegenerateGeometry("foot leaves no bar under the output arm")

    check_resolution(h, material, layout.resolution_slack)

    nx = int(round(L / h))
    ny = int(round(W / h))
    mask = np.zeros((nx, ny), dtype=bool)
    _rect(mask, h, 0.0, x0, W - layout.arm_width_in, W)
    _rect(mask, h, x0, x1, W - layout.throat_width, W)
    _rect(mask, h, x1, L, W - layout.arm_width_out, W)
    _rect(mask, h, x1, x1 + layout.stem_width, 0.0, W - layout.arm_width_out)
    if layout.foot_width > 0:
        _rect(mask, h, x1, x_foot, 0.0, layout.foot_width)

    _, n_regions = ndimage.label(mask)
    if n_regions != 1:
        raise DegenerateGeometry(f"mask has {n_regions} 4-connected regions, expected 1")

    geometry = TrackGeometry(
        cell_size=h,
        mask=mask,
        arm_width_in=layout.arm_width_in,
        arm_width_out=layout.arm_width_out,
        stem_width=layout.stem_width,
        throat_width=layout.throat_width,
        throat_length=layout.throat_length,
        widen_side="right",
        left_arm=(W - layout.arm_width_in, W),
        right_arm=(W - layout.arm_width_out, W),
        throat_x=(x0, x1),
    )
    logger.debug(f"Built T-track {nx}x{ny} cells, {int(mask.sum())} magnetic")
    if layout.widen_side == "left":
        return geometry.mirror()
    return geometry


def build_rectangle(length: float, width: float, cell_size: float) -> TrackGeometry:
    """Plain rectangular film, used for relaxation patches and macrospin runs."""
    nx = max(1, int(round(length / cell_size)))
    ny = max(1, int(round(width / cell_size)))
    return TrackGeometry(
        cell_size=cell_size,
        mask=np.ones((nx, ny), dtype=bool),
        arm_width_in=width,
        arm_width_out=width,
        stem_width=0.0,
        throat_width=width,
        throat_length=0.0,
        widen_side="none",
        left_arm=(0.0, width),
        right_arm=(0.0, width),
        throat_x=(0.5 * length, 0.5 * length),
    )


def distance_field(g: TrackGeometry) -> np.ndarray:
    """
    Euclidean distance [m] from each magnetic cell center to the nearest
    non-magnetic cell center, counting one ring of vacuum around the raster.
    Zero off the mask.
    """
    padded = np.pad(g.mask, 1, mode='constant', constant_values=False)
    d = ndimage.distance_transform_edt(padded, sampling=g.cell_size)[1:-1, 1:-1]
    return np.where(g.mask, d, 0.0)


def masked_gradient(U: np.ndarray, mask: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Centered differences inside the mask, one-sided where one neighbour is missing."""
    Um = np.moveaxis(U, axis, 0)
    mm = np.moveaxis(mask, axis, 0)
    fwd = np.zeros(mm.shape, dtype=bool)
    bwd = np.zeros(mm.shape, dtype=bool)
    fwd[:-1] = mm[1:] & mm[:-1]
    bwd[1:] = mm[:-1] & mm[1:]
    up = np.zeros_like(Um)
    down = np.zeros_like(Um)
    up[:-1] = Um[1:]
    down[1:] = Um[:-1]

    g = np.zeros_like(Um)
    both = fwd & bwd
    g[both] = (up[both] - down[both]) / (2.0 * h)
    only_f = fwd & ~bwd
    g[only_f] = (up[only_f] - Um[only_f]) / h
    only_b = bwd & ~fwd
    g[only_b] = (Um[only_b] - down[only_b]) / h
    g[~mm] = 0.0
    return np.moveaxis(g, 0, axis)


def build_potential(g: TrackGeometry, U0: float, lam: float) -> ConfinementPotential:
    """
    Exponential edge repulsion U = U0·exp(−d/λ) and its gradient.

    Args:
        g: track geometry
        U0: potential height at the edge [J]
        lam: decay length [m]

    Returns:
        ConfinementPotential: U (U0 off the mask) and ∇U, shape (nx, ny, 2)
    """
    if U0 <= 0 or lam <= 0:
        raise ValueError("U0 and lambda must be positive")
    d = distance_field(g)
    U = np.where(g.mask, U0 * np.exp(-d / lam), U0)
    grad = np.stack([
        masked_gradient(U, g.mask, g.cell_size, 0),
        masked_gradient(U, g.mask, g.cell_size, 1),
    ], axis=-1)
    return ConfinementPotential(U=U, grad=grad, U0=U0, lam=lam, cell_size=g.cell_size)


def potential_for(g: TrackGeometry, layout: GeometryConfig, material: MaterialParams) -> ConfinementPotential:
    """Build the potential with λ = delta_dw when the config leaves lambda at 0."""
    lam = layout.lam if layout.lam > 0 else derive_scales(material).delta_dw
    return build_potential(g, layout.U0, lam)


def _bilinear(field_: np.ndarray, h: float, x: float, y: float):
    nx, ny = field_.shape[:2]
    fx = min(max(x / h - 0.5, 0.0), nx - 1.0)
    fy = min(max(y / h - 0.5, 0.0), ny - 1.0)
    i0 = min(int(math.floor(fx)), max(nx - 2, 0))
    j0 = min(int(math.floor(fy)), max(ny - 2, 0))
    i1 = min(i0 + 1, nx - 1)
    j1 = min(j0 + 1, ny - 1)
    tx = fx - i0
    ty = fy - j0
    return ((1 - tx) * (1 - ty) * field_[i0, j0] + tx * (1 - ty) * field_[i1, j0]
            + (1 - tx) * ty * field_[i0, j1] + tx * ty * field_[i1, j1])


def gradient_at(pot: ConfinementPotential, x: float, y: float) -> np.ndarray:
    """∇U [J/m] at (x, y), bilinear between cell centers, clamped to the raster."""
    return _bilinear(pot.grad, pot.cell_size, x, y)


def potential_at(pot: ConfinementPotential, x: float, y: float) -> float:
    return float(_bilinear(pot.U, pot.cell_size, x, y))


def mask_pgm(g: TrackGeometry) -> bytes:
    """Binary PGM, 0 = vacuum, 255 = magnet, top row = largest y."""
    image = np.where(g.mask[:, ::-1].T, 255, 0).astype(np.uint8)
    return f"P5\n{g.nx} {g.ny}\n255\n".encode('ascii') + image.tobytes()


def export_mask_pgm(g: TrackGeometry, path: str) -> None:
    with open(path, 'wb') as f:
        f.write(mask_pgm(g))
    logger.info(f"Wrote mask {path}")


def potential_rows(g: TrackGeometry, pot: ConfinementPotential):
    xs, ys = g.centers
    idx = np.argwhere(g.mask)
    return [(xs[i, j] * 1e9, ys[i, j] * 1e9, pot.U[i, j]) for i, j in idx]


def export_potential_csv(g: TrackGeometry, pot: ConfinementPotential, path: str) -> None:
    write_csv(path, ["x_nm", "y_nm", "U_joule"], potential_rows(g, pot))
