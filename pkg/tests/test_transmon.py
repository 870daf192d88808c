import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy import linalg

from errors import CutoffError, OutOfRegime
from params import TransmonConfig
from transmon import (TransmonParams, charge_hamiltonian, dipole_estimate, dipole_field, dipole_flux_circle,
                      dipole_flux_numeric, dipole_rows, duffing_levels, ej_eff, ej_eff_tan, exact_levels,
                      f01_exact, f01_map, flux_grid, min_cutoff, regime_flag)

BASE = TransmonParams(EJ_sigma=50.0, EC=0.2)


@pytest.mark.parametrize("eps", [0.0, 0.2, 0.5, 0.9])
def test_ej_at_zero_flux(eps):
    assert ej_eff(TransmonParams(50.0, 0.2, eps, 0.0)) == 50.0


def test_ej_at_half_flux_is_imbalance():
    assert ej_eff(TransmonParams(50.0, 0.2, 0.2, 0.5)) == pytest.approx(10.0, rel=1e-14)


@pytest.mark.parametrize("phi", [0.1, 0.3, 0.5, 0.77])
def test_balanced_limit_is_flux_independent(phi):
    p = TransmonParams(50.0, 0.2, 1.0 - 1e-12, phi)
    assert ej_eff(p) == pytest.approx(50.0, rel=1e-11)


@given(phi=st.floats(0.0, 1.0), eps=st.floats(0.0, 0.99))
def test_regular_form_matches_tangent_form(phi, eps):
    assume(abs(math.cos(math.pi * phi)) > 1e-3)
    p = TransmonParams(50.0, 0.2, eps, phi)
    assert ej_eff(p) == pytest.approx(ej_eff_tan(p), rel=1e-12)


@pytest.mark.parametrize("kwargs", [dict(EJ_sigma=0.0, EC=0.2), dict(EJ_sigma=50.0, EC=-1.0),
                                    dict(EJ_sigma=50.0, EC=0.2, epsilon=1.0)])
def test_invalid_transmon(kwargs):
    with pytest.raises(ValueError):
        TransmonParams(**kwargs)


def test_duffing_at_zero_flux():
    levels = duffing_levels(BASE)
    assert levels.f01 == pytest.approx(8.74427191, abs=1e-8)
    assert levels.plasma == pytest.approx(math.sqrt(80.0), rel=1e-15)
    assert levels.anharmonicity == pytest.approx(-0.2, abs=1e-12)
    assert levels.energies[1] - levels.energies[0] == pytest.approx(levels.f01, abs=1e-12)


def test_duffing_at_half_flux():
    levels = duffing_levels(TransmonParams(50.0, 0.2, 0.2, 0.5))
    assert levels.f01 == pytest.approx(3.8, abs=1e-12)


def test_duffing_outside_transmon_regime():
    with pytest.raises(OutOfRegime):
        duffing_levels(TransmonParams(50.0, 0.2, 0.0, 0.5))
    with pytest.raises(ValueError):
        duffing_levels(BASE, n=2)


def test_regime_flags():
    assert regime_flag(50.0, 0.2) == "transmon"
    assert regime_flag(8.0, 0.2) == "weak"
    assert regime_flag(1.0, 0.2) == "out_of_regime"


def test_free_charge_levels():
    E = exact_levels(0.2, 0.0, 5)
    assert np.allclose(E, [0.0, 0.8, 0.8, 3.2, 3.2], atol=1e-12)


def test_charge_basis_reversal_symmetry():
    H = charge_hamiltonian(0.2, 50.0, 30)
    assert np.array_equal(H[::-1, ::-1], H)
    dense = linalg.eigvalsh(H)[:3]
    assert np.allclose(exact_levels(0.2, 50.0, 3, 30), dense, atol=1e-10)


def test_exact_f01_close_to_duffing():
    exact = f01_exact(0.2, 50.0)
    assert abs(exact - duffing_levels(BASE).f01) / exact < 0.01


def test_exact_anharmonicity_deep_regime():
    EC = 0.05
    E = exact_levels(EC, 1000 * EC, 3)
    assert (E[2] - E[1]) - (E[1] - E[0]) == pytest.approx(-EC, rel=0.05)


def test_duffing_error_shrinks_with_ratio():
    EC = 0.2
    errors = []
    for ratio in (20, 50, 100, 250):
        ej = ratio * EC
        exact = f01_exact(EC, ej)
        errors.append(abs(exact - duffing_levels(TransmonParams(ej, EC)).f01) / exact)
    assert all(a > b for a, b in zip(errors, errors[1:]))


def test_cutoff_floor():
    assert min_cutoff(0.2, 50.0) == 26
    with pytest.raises(CutoffError):
        exact_levels(0.2, 50.0, 3, charge_cutoff=5)


def test_flux_map():
    cfg = TransmonConfig()
    phi = flux_grid(200)
    rows = f01_map(cfg, phi, [0.0, 0.2, 0.5], threads=3)
    assert len(rows) == 600
    for k, eps in enumerate((0.0, 0.2, 0.5)):
        column = rows[200 * k:200 * (k + 1)]
        assert all(r.epsilon == eps for r in column)
        duffing = np.array([r.f01_duffing for r in column])
        exact = np.array([r.f01_exact for r in column])
        assert duffing.argmax() == 0
        assert exact.argmax() == 0
        # f01(φ) = f01(1 − φ)
        assert np.allclose(duffing[1:], duffing[1:][::-1], rtol=0, atol=1e-12)
        assert np.allclose(exact[1:], exact[1:][::-1], rtol=0, atol=1e-9)

    balanced = rows[:200]
    assert min(range(200), key=lambda i: balanced[i].f01_duffing) == 100
    assert balanced[100].regime_flag == "out_of_regime"
    assert balanced[0].regime_flag == "transmon"


def test_flux_map_without_exact_column():
    cfg = TransmonConfig(exact=False)
    rows = f01_map(cfg, [0.0, 0.25], [0.1])
    assert all(r.f01_exact is None for r in rows)
    assert rows[0].f01_duffing == pytest.approx(8.74427191, abs=1e-8)


def test_fixed_cutoff_matches_default():
    default = f01_map(TransmonConfig(), [0.0, 0.3], [0.0])
    fixed = f01_map(TransmonConfig(charge_cutoff=40), [0.0, 0.3], [0.0])
    for a, b in zip(default, fixed):
        assert a.f01_exact == pytest.approx(b.f01_exact, abs=1e-9)


def test_dipole_field_values():
    est = dipole_estimate(1e6, 8e-24, 20e-9, 100e-9)
    assert est.moment == pytest.approx(8e-18, rel=1e-15)
    assert est.B_z == pytest.approx(0.2, rel=1e-12)
    at_50nm = dipole_field(8e-18, 50e-9)
    assert at_50nm == pytest.approx(12.8e-3, rel=1e-12)
    assert 10e-3 / 1.5 <= at_50nm <= 10e-3 * 1.5


def test_dipole_field_cubic_falloff():
    scaled = [dipole_field(8e-18, z) * z ** 3 for z in (20e-9, 50e-9, 100e-9)]
    assert scaled[1] == pytest.approx(scaled[0], rel=1e-12)
    assert scaled[2] == pytest.approx(scaled[0], rel=1e-12)
    with pytest.raises(ValueError):
        dipole_field(8e-18, 0.0)


def test_square_loop_flux_close_to_disc():
    circle = dipole_flux_circle(8e-18, 50e-9, 100e-9)
    square = dipole_flux_numeric(8e-18, 50e-9, 100e-9)
    assert circle > 0 and square > 0
    assert square == pytest.approx(circle, rel=0.1)


def test_dipole_rows():
    rows = dipole_rows(TransmonConfig())
    assert [r[0] for r in rows] == pytest.approx([20.0, 50.0, 100.0])
    assert rows[0][1] == pytest.approx(200.0, rel=1e-12)
    assert rows[1][2] == pytest.approx(0.018, rel=0.05)
    assert all(r[2] >= 0 for r in rows)
