import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kpp_spectra.grid import (
    CFLViolation,
    DiscreteOperator,
    Grid,
    Reaction,
    SimulationError,
    StateField,
    apply_generator,
    assemble_generator,
    cell_peclet,
    cfl_dt,
    read_field,
    step_linear,
    step_semilinear,
    write_field,
)
from kpp_spectra.model import constant_model, load_model, scalar_model


def ones(spec, grid):
    return np.ones((spec.N,) + grid.shape)


def test_constant_mode_action_unshifted():
    spec = scalar_model(d=1.0, q=1.0, r=0.125)
    g = Grid.periodic_cell(spec, 16)
    out = apply_generator(DiscreteOperator(spec, g, (0.0,)), ones(spec, g))
    assert np.allclose(out.values, 0.125)


def test_constant_mode_action_shifted():
    # G_z 1 = L + z.Az - q.z for constant coefficients
    spec = scalar_model(d=1.0, q=1.0, r=0.125)
    g = Grid.periodic_cell(spec, 16)
    out = apply_generator(DiscreteOperator(spec, g, (0.5,)), ones(spec, g))
    assert np.allclose(out.values, 0.125 + 0.25 - 0.5)


def test_constant_mode_action_two_dimensional_anisotropic():
    A = np.array([[1.0, 0.3], [0.3, 0.8]])
    q = np.array([0.2, -0.1])
    spec = constant_model([A], [q], [[0.5]])
    g = Grid.periodic_cell(spec, 6)
    z = np.array([0.3, -0.7])
    out = apply_generator(DiscreteOperator(spec, g, tuple(z)), ones(spec, g))
    assert np.allclose(out.values, 0.5 + z @ A @ z - q @ z)


def test_shift_rejected_on_box():
    spec = scalar_model()
    with pytest.raises(ValueError):
        DiscreteOperator(spec, Grid.box([(-1, 1)], 8), (0.5,))


def test_dirichlet_diffusion_leaks_mass():
    spec = scalar_model(d=1.0, r=0.0)
    g = Grid.box([(-2, 2)], 16)
    u = np.zeros((1,) + g.shape)
    u[0, 1] = 1.0  # next to the boundary
    out = apply_generator(DiscreteOperator(spec, g), u)
    assert out.values.sum() < 0
    assert np.all(out.values[0, [0, -1]] == 0)


def test_generator_rows_sum_to_reaction_on_periodic_cell():
    spec = load_model("two-morph-periodic")
    g = Grid.periodic_cell(spec, 16)
    G = assemble_generator(spec, g, (0.0,), 0.2)
    rows = np.asarray(G.sum(axis=1)).ravel().reshape(2, -1)
    t = 0.2
    s = np.sin(2 * np.pi * t)
    mu_e, mu_d = 0.2 * max(0, s) ** 2, 0.2 * max(0, -s) ** 2
    assert np.allclose(rows[0], 2 - mu_e + mu_d)
    assert np.allclose(rows[1], mu_e + 1 - mu_d)


def test_cfl_formula_value():
    spec = scalar_model(d=1.0, L=1.0)
    g = Grid.box([(0, 1)], 10)
    assert cfl_dt(spec, g) == pytest.approx(0.4 / 200)


def test_cfl_scaling_and_advection():
    spec = scalar_model(d=1.0)
    fine = cfl_dt(spec, Grid.box([(0, 1)], 20))
    coarse = cfl_dt(spec, Grid.box([(0, 1)], 10))
    assert coarse == pytest.approx(4 * fine)
    adv = scalar_model(d=1.0, q=0.5)
    assert cfl_dt(adv, Grid.box([(0, 1)], 10)) < coarse


def test_peclet_of_default_simulation_grid():
    spec = scalar_model(d=1.0, q=0.5)
    assert cell_peclet(spec, Grid.box([(-10, 10)], 80)) <= 1


def test_heun_on_exponential_growth():
    r, dt = 0.7, 0.005
    spec = scalar_model(d=1.0, r=r)
    g = Grid.periodic_cell(spec, 8)
    out = step_linear(DiscreteOperator(spec, g), ones(spec, g), 0.0, dt)
    assert np.allclose(out.values, 1 + r * dt + (r * dt) ** 2 / 2)


def test_heat_keeps_constants():
    spec = scalar_model(d=1.0, r=0.0)
    g = Grid.periodic_cell(spec, 8)
    out = step_linear(DiscreteOperator(spec, g), 3 * ones(spec, g), 0.0, 1e-3)
    assert np.allclose(out.values, 3.0)


def test_step_refuses_cfl_violation():
    spec = scalar_model(d=1.0)
    g = Grid.periodic_cell(spec, 32)
    with pytest.raises(CFLViolation) as info:
        step_linear(DiscreteOperator(spec, g), ones(spec, g), 0.0, 1.0)
    assert info.value.required < 1.0


def test_logistic_equilibrium_is_kept():
    spec = scalar_model(d=1.0, r=1.0, c=1.0)
    g = Grid.periodic_cell(spec, 8)
    out = step_semilinear(spec, g, ones(spec, g), 0.0, 1e-3)
    assert np.allclose(out.values, 1.0, atol=1e-12)


def test_logistic_decay_toward_one():
    spec = scalar_model(d=1.0, r=1.0, c=1.0)
    g = Grid.periodic_cell(spec, 8)
    u = 2 * ones(spec, g)
    for k in range(200):
        u = step_semilinear(spec, g, u, k * 1e-3, 1e-3).values
    t = 0.2
    exact = 1 / (1 - 0.5 * np.exp(-t))  # logistic solution from 2
    assert np.allclose(u, exact, rtol=1e-6)


def test_coop_power_with_zero_coefficient_is_linear():
    spec = load_model("elliott-cornell")
    g = Grid.periodic_cell(spec, 8)
    rng = np.random.default_rng(0)
    u = rng.uniform(0, 1, (2,) + g.shape)
    a = step_semilinear(spec, g, u, 0.0, 1e-3, Reaction("coop_power", 0.0, 0.5))
    b = step_linear(DiscreteOperator(spec, g), u, 0.0, 1e-3)
    assert np.allclose(a.values, np.maximum(b.values, 0))


def test_reaction_parsing():
    r = Reaction.parse("coop_power:2,0.25")
    assert (r.kind, r.D, r.p) == ("coop_power", 2.0, 0.25)
    assert Reaction.parse("coop_quadratic:3").D == 3.0
    assert not Reaction.parse("kpp").cooperative
    with pytest.raises(ValueError):
        Reaction.parse("coop_power:1,1.5")
    with pytest.raises(ValueError):
        Reaction.parse("logistic")


def test_kpp_step_rejects_negative_state():
    spec = scalar_model(r=1.0)
    g = Grid.periodic_cell(spec, 4)
    with pytest.raises(ValueError):
        step_semilinear(spec, g, -ones(spec, g), 0.0, 1e-3)


def test_field_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    vals = rng.uniform(size=(2, 5, 3))
    write_field(tmp_path / "f.kppf", vals)
    back = read_field(tmp_path / "f.kppf")
    assert np.array_equal(back.values, vals)
    raw = (tmp_path / "f.kppf").read_bytes()
    assert raw[:4] == b"KPPF"


def test_state_field_flags_negative():
    with pytest.raises(ValueError):
        StateField(-np.ones((1, 3)), nonneg=True)


def test_simulation_error_carries_step():
    err = SimulationError("boom", 7)
    assert err.step == 7


@settings(max_examples=30)
@given(st.integers(0, 10_000), st.sampled_from(["linear", "coop_power:1,0.5", "coop_quadratic:1"]))
def test_monotone_step_preserves_order(seed, reaction):
    spec = load_model("elliott-cornell")
    g = Grid.periodic_cell(spec, 8)
    rng = np.random.default_rng(seed)
    u = rng.uniform(0, 2, (2,) + g.shape)
    v = u + rng.uniform(0, 2, u.shape)
    r = Reaction.parse(reaction)
    dt = cfl_dt(spec, g, None, 0.4, r.rate_bound(spec, float(v.max())))
    su = step_semilinear(spec, g, u, 0.0, dt, r).values
    sv = step_semilinear(spec, g, v, 0.0, dt, r).values
    assert np.all(su <= sv + 1e-12)
