import pytest

from data_store import Table
from errors import EmptyTable
from plots import emit_svg


def heatmap_table():
    return Table(header=["eta", "t", "F"], rows=[(0.0, 0.0, 0.1), (0.0, 1.0, 0.4), (1.0, 0.0, 0.7),
                                                 (1.0, 1.0, 0.9)])


def test_heatmap_has_one_cell_per_row():
    svg = emit_svg(heatmap_table(), "heatmap", x="eta", y="t", value="F", title="fidelity")
    assert svg.count('id="cell-') == 4
    assert 'viewBox="0 0 800 600"' in svg
    assert "min 0.1  max 0.9" in svg


def test_rendering_is_deterministic():
    a = emit_svg(heatmap_table(), "heatmap", x="eta", y="t", value="F")
    b = emit_svg(heatmap_table(), "heatmap", x="eta", y="t", value="F")
    assert a == b


def test_line_series():
    table = Table(header=["J", "tau", "direction"],
                  rows=[(1.0, 2.0, "forward"), (2.0, 1.5, "forward"), (1.0, 3.0, "reverse")])
    svg = emit_svg(table, "line", x="J", y="tau", series="direction")
    assert 'id="series-forward"' in svg
    assert 'id="series-reverse"' in svg


def test_levels_plot():
    levels = Table(header=["level_index", "energy", "phi_start", "phi_end"],
                   rows=[(0, -1.0, 1.0, 2.0), (0, -1.0, 4.0, 5.0), (1, 0.5, 0.5, 2.6)])
    curve = Table(header=["phi", "V"], rows=[(0.0, 1.0), (3.0, -1.0), (6.0, 1.0)])
    svg = emit_svg(levels, "levels", curve=curve)
    assert 'id="potential"' in svg
    assert svg.count('id="level-') == 3


def test_empty_table():
    with pytest.raises(EmptyTable):
        emit_svg(Table(header=["x", "y"]), "line", x="x", y="y")


def test_unknown_kind():
    with pytest.raises(ValueError):
        emit_svg(heatmap_table(), "pie")
