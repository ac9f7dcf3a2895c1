import math

import numpy as np
import pytest
from scipy.linalg import eigvals

from kpp_spectra.floquet import (
    ConvergenceError,
    PeriodMap,
    dirichlet_principal_eigenvalue,
    eigenvalue,
    monodromy_apply,
    power_iteration,
    principal_eigenvalue,
)
from kpp_spectra.grid import Grid
from kpp_spectra.model import constant_model, load_model, scalar_model


def worked_example():
    return scalar_model(d=1.0, q=1.0, r=0.125)


def perron_oracle(D, Q, L, z):
    return -max(eigvals(np.asarray(L) + np.diag(np.asarray(D) * z * z - np.asarray(Q) * z)).real)


@pytest.mark.parametrize("z", [-0.5, 0.0, 0.25, 0.5, 1.0, 1.5])
def test_worked_example_dispersion(z):
    spec = worked_example()
    res = principal_eigenvalue(spec, Grid.periodic_cell(spec, 64), (z,))
    assert res.lam == pytest.approx(z * (1 - z) - 0.125, abs=1e-6)
    assert res.eigenfunction.values.min() > 0


def test_heat_dispersion_is_minus_z_squared():
    spec = scalar_model(d=1.0, r=0.0)
    for z in (-1.0, 0.3, 2.0):
        assert eigenvalue(spec, (z,), cells=16) == pytest.approx(-(z**2), abs=1e-4)


def test_two_component_balanced_exchange():
    spec = constant_model([1.0, 2.0], [[0.0], [0.0]], [[-1, 1], [1, -1]])
    assert eigenvalue(spec, (0.0,), cells=16) == pytest.approx(0.0, abs=1e-8)


def test_random_constant_models_match_perron_oracle():
    rng = np.random.default_rng(3)
    for N in (2, 3):
        L = rng.uniform(0.1, 1, (N, N))
        np.fill_diagonal(L, rng.uniform(-1, 1, N))
        D = rng.uniform(0.5, 2, N)
        Q = rng.uniform(-1, 1, N)
        spec = constant_model(D, Q[:, None], L)
        for z in (-0.7, 0.4):
            assert eigenvalue(spec, (z,), cells=8) == pytest.approx(perron_oracle(D, Q, L, z), abs=1e-4)


def test_monodromy_of_heat_keeps_constants():
    spec = scalar_model(d=1.0, r=0.0)
    g = Grid.periodic_cell(spec, 16)
    out = monodromy_apply(spec, g, (0.0,), np.ones((1, 16)))
    assert np.allclose(out.values, 1.0)


def test_monodromy_of_constant_growth():
    r = 0.3
    spec = scalar_model(d=1.0, r=r)
    g = Grid.periodic_cell(spec, 16)
    out = monodromy_apply(spec, g, (0.0,), np.ones((1, 16)))
    assert np.allclose(out.values, math.exp(r), rtol=1e-5)


def test_monodromy_is_strictly_positive():
    spec = load_model("symmetric-pair")
    g = Grid.periodic_cell(spec, 16)
    u = np.zeros((2, 16))
    u[0, 3] = 1.0
    out = monodromy_apply(spec, g, (0.2,), u)
    assert out.values.min() > 0


def test_monodromy_rejects_zero_state():
    spec = scalar_model()
    g = Grid.periodic_cell(spec, 4)
    with pytest.raises(ValueError):
        monodromy_apply(spec, g, (0.0,), np.zeros((1, 4)))


def test_time_periodic_batch_matches_stepping():
    spec = load_model("symmetric-pair-perturbed")
    g = Grid.periodic_cell(spec, 8)
    pm = PeriodMap(spec, g, (0.3,))
    assert pm.matrix is not None
    u = np.random.default_rng(0).uniform(0.5, 1, pm.op.size)
    assert np.allclose(pm.apply_flat(u), pm._propagate(u))


def test_power_iteration_reports_failure():
    spec = scalar_model(d=1.0, r=1.0)
    pm = PeriodMap(spec, Grid.box([(-8, 8)], 32))
    with pytest.raises(ConvergenceError) as info:
        u0 = np.random.default_rng(0).uniform(0.5, 1.0, pm.op.size)
        power_iteration(pm, tol=1e-30, max_iter=3, u0=u0)
    assert len(info.value.last_rhos) == 2


def test_memoized_eigenvalue_is_cached():
    spec = worked_example()
    a = eigenvalue(spec, (0.25,), cells=32)
    b = eigenvalue(spec, [0.25], cells=(32,))
    assert a == b


@pytest.mark.parametrize("R", [2.0, 4.0, 8.0])
def test_dirichlet_sine_mode(R):
    spec = scalar_model(d=1.0, r=1.0)
    lam = dirichlet_principal_eigenvalue(spec, R)
    assert lam == pytest.approx((math.pi / (2 * R)) ** 2 - 1, abs=2e-3)


def test_dirichlet_decreases_with_radius_on_periodic_model():
    spec = load_model("elliott-cornell")
    vals = [dirichlet_principal_eigenvalue(spec, R, resolution=4) for R in (2.0, 4.0, 8.0)]
    assert vals[0] > vals[1] > vals[2]
    assert vals[2] > eigenvalue(spec, (0.0,), cells=32) - 1e-6


def test_dirichlet_approaches_lambda1():
    spec = scalar_model(d=1.0, r=1.0)
    assert dirichlet_principal_eigenvalue(spec, 16.0) == pytest.approx(-1.0, abs=0.05)
