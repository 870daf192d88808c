import io
import logging
from typing import Optional

import matplotlib
import numpy as np

matplotlib.use('Agg')

from matplotlib import cm, colors  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

from data_store import Table  # noqa: E402
from errors import EmptyTable  # noqa: E402

logger = logging.getLogger(__name__)

PLOT_KINDS = ("heatmap", "line", "levels")

SVG_STYLE = {
    'svg.hashsalt': 'skyrlab',
    'svg.fonttype': 'none',
    'font.size': 12.0,
}


def _edges(values: np.ndarray) -> np.ndarray:
    """Cell edges halfway between sorted unique centers."""
    if values.size == 1:
        return np.array([values[0] - 0.5, values[0] + 0.5])
    mid = 0.5 * (values[1:] + values[:-1])
    return np.concatenate([[2 * values[0] - mid[0]], mid, [2 * values[-1] - mid[-1]]])


def _heatmap(fig: Figure, table: Table, x: str, y: str, value: str) -> None:
    xs = np.array(table.column(x), dtype=float)
    ys = np.array(table.column(y), dtype=float)
    vs = np.array(table.column(value), dtype=float)
    ux, uy = np.unique(xs), np.unique(ys)
    ex, ey = _edges(ux), _edges(uy)
    finite = vs[np.isfinite(vs)]
    vmin, vmax = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    norm = colors.Normalize(vmin=vmin, vmax=vmax if vmax > vmin else vmin + 1.0)
    cmap = matplotlib.colormaps['viridis']

    ax = fig.add_subplot(1, 1, 1)
    for xv, yv, v in sorted(zip(xs, ys, vs)):
        i = int(np.searchsorted(ux, xv))
        j = int(np.searchsorted(uy, yv))
        face = cmap(norm(v)) if np.isfinite(v) else (1.0, 1.0, 1.0, 1.0)
        cell = Rectangle((ex[i], ey[j]), ex[i + 1] - ex[i], ey[j + 1] - ey[j],
                         facecolor=face, edgecolor='none', linewidth=0)
        cell.set_gid(f"cell-{i}-{j}")
        ax.add_patch(cell)
    ax.set_xlim(ex[0], ex[-1])
    ax.set_ylim(ey[0], ey[-1])
    ax.set_xlabel(x)
    ax.set_ylabel(y)
    fig.colorbar(cm.ScalarMappable(norm=norm, cmap=cmap), ax=ax, label=value)
    ax.text(0.0, 1.02, f"min {vmin:.6g}  max {vmax:.6g}", transform=ax.transAxes)


def _line(fig: Figure, table: Table, x: str, y: str, series: Optional[str]) -> None:
    ax = fig.add_subplot(1, 1, 1)
    xs = np.array(table.column(x), dtype=float)
    ys = np.array(table.column(y), dtype=float)
    if series is None:
        groups = [("all", np.ones(xs.size, dtype=bool))]
    else:
        labels = [str(s) for s in table.column(series)]
        groups = [(name, np.array([lab == name for lab in labels])) for name in sorted(set(labels))]
    for name, sel in groups:
        line, = ax.plot(xs[sel], ys[sel], label=name if series else None)
        line.set_gid(f"series-{name}")
    if series is not None:
        ax.legend()
    ax.set_xlabel(x)
    ax.set_ylabel(y)
    ax.text(0.0, 1.02, f"min {np.nanmin(ys):.6g}  max {np.nanmax(ys):.6g}", transform=ax.transAxes)


def _levels(fig: Figure, table: Table, curve: Optional[Table]) -> None:
    ax = fig.add_subplot(1, 1, 1)
    if curve is not None and curve.rows:
        line, = ax.plot(curve.column('phi'), curve.column('V'), color='black')
        line.set_gid("potential")
    energies = np.array(table.column('energy'), dtype=float)
    for k, row in enumerate(table.rows):
        level = row[table.header.index('level_index')]
        start = float(row[table.header.index('phi_start')])
        end = float(row[table.header.index('phi_end')])
        segment, = ax.plot([start, end], [energies[k], energies[k]], color=f"C{int(level) % 10}")
        segment.set_gid(f"level-{level}-{k}")
    ax.set_xlabel('phi')
    ax.set_ylabel('energy')
    ax.text(0.0, 1.02, f"min {energies.min():.6g}  max {energies.max():.6g}", transform=ax.transAxes)


def emit_svg(table: Table, kind: str, x: Optional[str] = None, y: Optional[str] = None,
             value: Optional[str] = None, series: Optional[str] = None, title: str = "",
             curve: Optional[Table] = None) -> str:
    """
    Render a result table as a self-contained 800×600 SVG.

    Args:
        table: rows to plot
        kind: "heatmap" (x, y, value), "line" (x, y, optional series) or
              "levels" (level_index, energy, phi_start, phi_end, with the
              potential from curve)
        title: figure title

    Returns:
        str: SVG text; identical tables give identical bytes

    Raises:
        EmptyTable: table has no rows
    """
    if kind not in PLOT_KINDS:
        raise ValueError(f"unknown plot kind {kind!r}")
    if not table.rows:
        raise EmptyTable(f"nothing to plot for a {kind} with columns {table.header}")

    with matplotlib.rc_context(SVG_STYLE):
        fig = Figure(figsize=(800 / 72, 600 / 72), dpi=72)
        if kind == "heatmap":
            _heatmap(fig, table, x, y, value)
        elif kind == "line":
            _line(fig, table, x, y, series)
        else:
            _levels(fig, table, curve)
        if title:
            fig.suptitle(title)
        buf = io.StringIO()
        fig.savefig(buf, format='svg', metadata={'Date': None, 'Creator': 'skyrlab'})
    logger.debug(f"Rendered {kind} plot of {len(table.rows)} rows")
    return buf.getvalue()
