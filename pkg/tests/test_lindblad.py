import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import linalg

from errors import InvalidState
from lindblad import (KET0, KET1, QubitModel, default_grids, evolve, fidelity_maps, forward_fidelity,
                      liouvillian, map_rows, reverse_fidelity, unvec, validate_state, vec)
from params import LindbladConfig

T_GRID = np.linspace(0.0, 10.0, 400)


def random_state(rng):
    a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def trace_distance(a, b):
    return 0.5 * np.abs(np.linalg.eigvalsh(a - b)).sum()


def test_rabi_oscillation_without_decay():
    model = QubitModel(J_coupling=1.0, delta=0.0, gamma_max=100.0, eta=0.0)
    assert np.allclose(forward_fidelity(model, T_GRID), np.sin(T_GRID) ** 2, atol=1e-6)
    assert np.allclose(reverse_fidelity(model, T_GRID), np.cos(T_GRID) ** 2, atol=1e-6)
    assert forward_fidelity(model, [math.pi / 2])[0] == pytest.approx(1.0, abs=1e-9)


def test_pure_amplitude_decay():
    model = QubitModel(J_coupling=0.0, delta=0.0, gamma_max=1.0, eta=0.7)
    rho = evolve(model, KET1, T_GRID)
    assert np.allclose(rho[:, 1, 1].real, np.exp(-0.7 * T_GRID), atol=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_matches_liouvillian_exponential(seed):
    rng = np.random.default_rng(seed)
    model = QubitModel(J_coupling=rng.uniform(0.5, 2.0), delta=rng.uniform(-1.0, 1.0),
                       gamma_max=rng.uniform(0.0, 5.0), eta=rng.uniform(0.0, 1.0))
    rho0 = random_state(rng)
    t = 3.0 / model.J_coupling
    rho = evolve(model, rho0, [t], max_step=1e-3)[0]
    exact = unvec(linalg.expm(liouvillian(model) * t) @ vec(rho0))
    assert trace_distance(rho, exact) < 1e-8


def test_matches_qutip():
    qutip = pytest.importorskip("qutip")
    model = QubitModel(J_coupling=1.0, delta=0.3, gamma_max=2.0, eta=0.5)
    H = model.J_coupling * qutip.sigmax() + model.delta * qutip.sigmaz()
    # qutip's basis(2, 0) is our |0⟩, and our lowering operator is |0⟩⟨1|
    lower = qutip.Qobj(np.array([[0, 1], [0, 0]], dtype=complex))
    result = qutip.mesolve(H, qutip.Qobj(KET0), T_GRID[:50], [math.sqrt(model.gamma) * lower], [])
    ours = evolve(model, KET0, T_GRID[:50])
    for state, rho in zip(result.states, ours):
        assert trace_distance(state.full(), rho) < 1e-5


def test_state_stays_physical():
    rng = np.random.default_rng(11)
    model = QubitModel(J_coupling=1.0, delta=0.5, gamma_max=100.0, eta=0.4)
    for rho in evolve(model, random_state(rng), T_GRID):
        assert abs(np.trace(rho) - 1.0) < 1e-9
        assert np.linalg.norm(rho - rho.conj().T) < 1e-10
        assert np.linalg.eigvalsh(rho).min() >= -1e-9


def test_unitary_limit_keeps_purity():
    model = QubitModel(J_coupling=1.0, delta=0.7, gamma_max=100.0, eta=0.0)
    for rho in evolve(model, KET0, T_GRID):
        assert np.trace(rho @ rho).real == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("rho", [
    np.array([[1, 1], [0, 0]], dtype=complex),
    np.array([[1, 0], [0, 1]], dtype=complex),
    np.array([[1.5, 0], [0, -0.5]], dtype=complex),
    np.eye(3) / 3,
])
def test_invalid_states(rho):
    with pytest.raises(InvalidState):
        validate_state(rho)
    with pytest.raises(InvalidState):
        evolve(QubitModel(1.0, 0.0, 1.0, 0.5), rho, T_GRID)


def test_descending_times_rejected():
    with pytest.raises(ValueError):
        evolve(QubitModel(1.0, 0.0, 1.0, 0.5), KET0, [1.0, 0.5])


@given(J=st.floats(0.0, 10.0), delta=st.floats(-10.0, 10.0), gamma_max=st.floats(0.0, 100.0),
       eta=st.floats(0.0, 1.0))
def test_liouvillian_preserves_trace_and_hermiticity(J, delta, gamma_max, eta):
    L = liouvillian(QubitModel(J, delta, gamma_max, eta))
    scale = max(1.0, np.abs(L).max())
    assert np.allclose(vec(np.eye(2)) @ L, 0.0, atol=1e-12 * scale)
    rho = np.array([[0.3, 0.2 - 0.1j], [0.2 + 0.1j, 0.7]])
    drho = unvec(L @ vec(rho))
    assert np.allclose(drho, drho.conj().T, atol=1e-12 * scale)


def test_forward_fidelity_falls_with_efficiency():
    fwd, _ = fidelity_maps(LindbladConfig(), [0.0, 0.25, 0.5, 0.75, 1.0], [0.0, math.pi / 2])
    column = fwd.F[1]
    assert column[0] == pytest.approx(1.0, abs=1e-6)
    assert np.all(np.diff(column) < 0)


def test_reverse_fidelity_rises_with_efficiency():
    _, rev = fidelity_maps(LindbladConfig(), [0.0, 0.25, 0.5, 0.75, 1.0], T_GRID)
    column = rev.F[-1]
    assert column[0] == pytest.approx(math.cos(10.0) ** 2, abs=1e-6)
    assert np.all(np.diff(column) > 0)
    assert column[-1] > 0.99


def test_times_are_in_units_of_coupling():
    cfg = LindbladConfig(J_coupling=2.0)
    fwd, rev = fidelity_maps(cfg, [0.0], [0.0, math.pi / 2])
    assert fwd.t[1] == pytest.approx(math.pi / 2)
    assert fwd.F[1, 0] == pytest.approx(1.0, abs=1e-6)
    assert rev.F[1, 0] == pytest.approx(0.0, abs=1e-6)


def test_default_maps_shape_and_range():
    cfg = LindbladConfig()
    eta, t = default_grids(cfg)
    fwd, rev = fidelity_maps(cfg, eta, t, threads=4)
    assert fwd.F.shape == (400, 41)
    assert np.all((fwd.F >= 0) & (fwd.F <= 1))
    assert np.all((rev.F >= 0) & (rev.F <= 1))
    rows = map_rows(fwd, rev)
    assert len(rows) == 400 * 41
    assert rows[0] == (0.0, 0.0, 0.0, 1.0)
    assert rows[400][0] == pytest.approx(0.025)

    again, _ = fidelity_maps(cfg, eta, t, threads=1)
    assert np.array_equal(again.F, fwd.F)


def test_eta_outside_unit_interval():
    with pytest.raises(ValueError):
        fidelity_maps(LindbladConfig(), [1.5], T_GRID)
