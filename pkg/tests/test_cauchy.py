import numpy as np
import pytest

from kpp_spectra.cauchy import (
    CONDITIONAL,
    EXTINCTION,
    PERSISTENCE,
    AbsorbingBoundViolation,
    DomainTooSmall,
    InitialCondition,
    PreconditionError,
    Trajectory,
    classify_regime,
    comparison_harness,
    component_ratio_diagnostic,
    conditional_experiment,
    front_positions,
    harnack_diagnostic,
    measure_front_speed,
    periodic_entire_solution,
    simulate,
)
from kpp_spectra.grid import Grid, Reaction
from kpp_spectra.model import estimate_K, load_model, scalar_model


def box(extent, per_unit=4, n=1):
    return Grid.box([(-extent, extent)] * n, int(2 * extent * per_unit))


def worked_example():
    return scalar_model(d=1.0, q=1.0, r=0.125)


# --- initial data and trajectories ------------------------------------------


def test_compact_data_vanishes_outside_ball():
    spec = scalar_model()
    g = box(10)
    u = InitialCondition.compact(2.0, 3.0).realize(spec, g)
    x = g.axis(0)
    assert u.max() == pytest.approx(3.0)
    assert np.all(u[0, np.abs(x) >= 2.0] == 0)


def test_exponential_data_bounds():
    spec = scalar_model()
    g = box(20)
    C, B, z = 100.0, np.log(100.0), 0.3
    u = InitialCondition.exponential([z], C, B).realize(spec, g)[0]
    x = g.axis(0)
    inner = (z * x <= B) & (np.abs(x) < 20)
    assert np.all(u[inner] >= np.exp(z * x[inner]) / C - 1e-15)
    assert u.max() <= max(1.0, np.exp(B) / C) + 1e-15


def test_initial_data_zero_on_box_boundary():
    spec = scalar_model()
    u = InitialCondition.uniform(1.0).realize(spec, box(5))
    assert u[0, 0] == 0 and u[0, -1] == 0


def test_custom_initial_data():
    spec = load_model("symmetric-pair")
    g = Grid.periodic_cell(spec, 8)
    u = InitialCondition("custom", {"expressions": ["1", "2 + cos(2*pi*x1)"]}).realize(spec, g)
    assert np.allclose(u[0], 1) and u[1].min() == pytest.approx(1.0)


def test_equilibrium_stays_put_in_the_interior():
    spec = scalar_model(r=1.0, c=1.0)
    traj = simulate(spec, box(20), InitialCondition.uniform(1.0), 5.0, 1.0)
    interior = traj.grid.interior_mask(0) & (np.abs(traj.grid.axis(0)) < 5)
    assert np.allclose(traj.states[-1, 0, interior], 1.0, atol=1e-6)
    assert np.array_equal(traj.states[0], InitialCondition.uniform(1.0).realize(spec, box(20)))
    assert np.all(np.diff(traj.times) > 0)


def test_logistic_decay_from_above():
    spec = scalar_model(r=1.0, c=1.0)
    traj = simulate(spec, box(20), InitialCondition.uniform(10.0), 3.0, 0.5)
    centre = traj.states[:, 0, traj.grid.shape[0] // 2]
    assert np.all(np.diff(centre) < 0)
    t = traj.times[-1]
    exact = 1 / (1 - 0.9 * np.exp(-t))
    assert centre[-1] == pytest.approx(exact, rel=1e-4)


def test_absorbing_bound_on_elliott_cornell():
    spec = load_model("elliott-cornell")
    K = estimate_K(spec)
    traj = simulate(spec, box(20), InitialCondition.compact(2.0, 5.0), 5.0, 1.0)
    assert traj.max_sup <= 5.0 + K + 1e-3


def test_absorbing_violation_is_detected(monkeypatch):
    import kpp_spectra.cauchy as cauchy

    monkeypatch.setattr(cauchy, "estimate_K", lambda spec: 0.0)
    monkeypatch.setattr(cauchy.defaults, "ABSORB_SLACK", 0.0)
    spec = scalar_model(r=2.0, c=1.0)
    with pytest.raises(AbsorbingBoundViolation):
        simulate(spec, box(10), InitialCondition.compact(2.0, 0.5), 2.0, 1.0)


def test_trajectory_save_and_load(tmp_path):
    spec = load_model("elliott-cornell")
    traj = simulate(spec, box(10), InitialCondition.compact(1.0, 1.0), 2.0, 0.5)
    traj.save(tmp_path / "run")
    back = Trajectory.load(tmp_path / "run")
    assert np.array_equal(back.states, traj.states)
    assert np.array_equal(back.times, traj.times)
    assert back.reaction == traj.reaction
    csv = traj.summary_csv(e=[1.0])
    assert csv.splitlines()[0] == "t,sup,min_over_ball,front_position"
    assert len(csv.splitlines()) == len(traj.times) + 1


# --- regimes -----------------------------------------------------------------


def test_classify_regimes():
    assert classify_regime(scalar_model(r=-1.0), 16).classification == EXTINCTION
    assert classify_regime(scalar_model(r=1.0), 16).classification == PERSISTENCE
    v = classify_regime(worked_example(), 64)
    assert v.classification == CONDITIONAL
    assert v.lambda_prime == pytest.approx(-0.125, abs=1e-6)
    assert v.lambda1 == pytest.approx(0.125, abs=1e-6)
    assert not v.indeterminate


def test_near_zero_flag():
    v = classify_regime(scalar_model(r=0.0), 16)
    assert v.indeterminate


def test_conditional_preconditions():
    spec = worked_example()
    with pytest.raises(PreconditionError, match="not negative"):
        conditional_experiment(spec, [0.5], "persist", cells=64)
    with pytest.raises(PreconditionError, match="negative"):
        conditional_experiment(spec, [0.1], "extinct", cells=64)
    with pytest.raises(PreconditionError, match="Conditional"):
        conditional_experiment(scalar_model(r=1.0), [0.1], "persist", cells=16)


@pytest.mark.slow
def test_conditional_outcomes():
    spec = worked_example()
    persist = conditional_experiment(spec, [0.10], "persist", cells=64)
    extinct = conditional_experiment(spec, [0.30], "extinct", cells=64)
    assert persist["min_over_ball"] > 0.01
    assert extinct["lambda_z"] == pytest.approx(0.085, abs=1e-6)
    assert extinct["max_over_ball"] < 1e-3


# --- fronts -------------------------------------------------------------------


def test_front_speed_homogeneous():
    spec = scalar_model(r=1.0)
    traj = simulate(spec, box(100), InitialCondition.compact(1.0, 1.0), 40.0, 1.0)
    fs = measure_front_speed(traj, [1.0])
    assert 1.85 <= fs.speed <= 2.0
    assert set(fs.sensitivity) == {0.05, 0.5}
    assert all(abs(c - fs.speed) < 0.1 for c in fs.sensitivity.values())


def test_front_speed_with_advection_is_asymmetric():
    spec = scalar_model(q=0.5, r=1.0)
    traj = simulate(spec, box(100), InitialCondition.compact(1.0, 1.0), 30.0, 1.0)
    right = measure_front_speed(traj, [1.0]).speed
    left = measure_front_speed(traj, [-1.0]).speed
    assert right == pytest.approx(2.5, rel=0.07)
    assert left == pytest.approx(1.5, rel=0.07)


def test_stationary_profile_has_zero_speed():
    spec = scalar_model(r=1.0)
    traj = simulate(spec, box(30), InitialCondition.uniform(1.0), 10.0, 1.0)
    positions, hit = front_positions(traj, [1.0], margin=0)
    # the level set sits in the boundary layer, which settles but does not move
    slope = np.polyfit(traj.times[5:], positions[5:], 1)[0]
    assert abs(slope) < 1e-3


def test_domain_too_small():
    spec = scalar_model(r=1.0)
    traj = simulate(spec, box(15), InitialCondition.compact(1.0, 1.0), 20.0, 1.0)
    with pytest.raises(DomainTooSmall) as info:
        measure_front_speed(traj, [1.0])
    assert info.value.time > 0


def test_front_speed_in_the_plane():
    spec = load_model("isotropic-2d")
    g = Grid.box([(-20, 20), (-20, 20)], 80)
    traj = simulate(spec, g, InitialCondition.compact(1.5, 1.0), 8.0, 0.5)
    c = measure_front_speed(traj, [0.6, 0.8]).speed
    assert 1.5 < c < 2.05


# --- entire solution ----------------------------------------------------------


def test_entire_solution_logistic():
    spec = scalar_model(r=1.0, c=1.0)
    sol = periodic_entire_solution(spec, Grid.periodic_cell(spec, 8))
    assert sol.residual < 1e-12
    assert np.allclose(sol.orbit[0].values, 1.0)


def test_entire_solution_symmetric_pair():
    spec = load_model("symmetric-pair")
    sol = periodic_entire_solution(spec, Grid.periodic_cell(spec, 16))
    assert sol.residual <= 1e-8
    assert all(np.allclose(f.values, 0.5, atol=1e-6) for f in sol.orbit)


def test_entire_solution_needs_instability():
    spec = scalar_model(r=-1.0)
    with pytest.raises(PreconditionError):
        periodic_entire_solution(spec, Grid.periodic_cell(spec, 8))


def test_entire_solution_needs_periodic_grid():
    with pytest.raises(ValueError):
        periodic_entire_solution(scalar_model(r=1.0), box(4))


# --- comparison harness ---------------------------------------------------------


def test_harness_refuses_kpp():
    with pytest.raises(ValueError):
        comparison_harness(load_model("elliott-cornell"), "kpp")


@pytest.mark.parametrize("reaction", ["coop_power:1,0.5", "coop_quadratic:1", "linear"])
def test_harness_preserves_order(reaction):
    rep = comparison_harness(load_model("elliott-cornell"), reaction, trials=10, seed=1, t_end=0.5)
    assert rep["max_violation"] <= 1e-10
    assert rep["passed"]


def test_identical_pairs_stay_identical():
    from kpp_spectra.grid import Schedule, cfl_dt, heun_semilinear

    spec = load_model("elliott-cornell")
    g = Grid.periodic_cell(spec, 8)
    u = np.random.default_rng(2).uniform(0, 1, (2, 8))
    r = Reaction.parse("coop_power:1,0.5")
    dt = cfl_dt(spec, g, None, 0.4, r.rate_bound(spec, 1.0))
    sch = Schedule(spec, g, None, dt)
    G0, _ = sch.at_step(0)
    a = heun_semilinear(G0, G0, None, None, u.ravel(), dt, r, u.shape)
    b = heun_semilinear(G0, G0, None, None, u.copy().ravel(), dt, r, u.shape)
    assert np.array_equal(a, b)


# --- Harnack and component ratios -----------------------------------------------


def _linear_run(spec, scale=1.0, per_unit=4):
    g = box(6, per_unit)
    return simulate(spec, g, InitialCondition.compact(2.0, scale), 6.0, 0.25, "linear")


def test_harnack_ratio_positive_and_scale_invariant():
    spec = load_model("elliott-cornell")
    a = harnack_diagnostic(spec, _linear_run(spec), 1.0)
    b = harnack_diagnostic(spec, _linear_run(spec, 7.0), 1.0)
    assert a > 0
    assert a == pytest.approx(b, rel=1e-9)


def test_harnack_ratio_stable_under_refinement():
    spec = load_model("elliott-cornell")
    coarse = harnack_diagnostic(spec, _linear_run(spec, per_unit=4), 1.0)
    fine = harnack_diagnostic(spec, _linear_run(spec, per_unit=8), 1.0)
    assert fine == pytest.approx(coarse, rel=0.2)


def test_harnack_window_checks():
    spec = load_model("elliott-cornell")
    traj = _linear_run(spec)
    with pytest.raises(ValueError):
        harnack_diagnostic(spec, traj, 0.5)
    with pytest.raises(ValueError):
        harnack_diagnostic(spec, traj, 2.0)


def test_component_ratio_refuses_scalar():
    spec = scalar_model(r=1.0)
    traj = simulate(spec, box(10), InitialCondition.compact(2.0, 1.0), 2.0, 0.5)
    with pytest.raises(ValueError):
        component_ratio_diagnostic(traj)


def test_component_ratio_identical_components():
    spec = load_model("symmetric-pair")
    traj = simulate(spec, box(10), InitialCondition.compact(3.0, 1.0), 3.0, 0.5)
    out = component_ratio_diagnostic(traj, radius=5.0)
    assert out["p_hat"] == pytest.approx(1.0, abs=1e-9)
    assert out["kappa_hat"] == pytest.approx(1.0, abs=1e-9)
    assert out["violation_fraction"] == 0


def test_component_ratio_envelope_on_elliott_cornell():
    spec = load_model("elliott-cornell")
    traj = simulate(spec, box(10), InitialCondition.compact(3.0, 1.0), 4.0, 0.5)
    out = component_ratio_diagnostic(traj, t_min=1.0, radius=5.0)
    assert out["violation_fraction"] == 0
    assert out["kappa_hat"] > 0


def test_component_ratio_needs_positive_values():
    spec = load_model("elliott-cornell")
    traj = simulate(spec, box(10), InitialCondition.compact(1.0, 1.0), 2.0, 0.5)
    with pytest.raises(ValueError, match="nonpositive"):
        component_ratio_diagnostic(traj, t_min=1.0, margin=0)


def test_from_dict_forms():
    flat = InitialCondition.from_dict({"kind": "compact", "radius": 2.0, "height": 3.0})
    nested = InitialCondition.from_dict({"kind": "compact", "params": {"radius": 2.0, "height": 3.0}})
    assert flat == nested
    with pytest.raises(ValueError, match="unknown keys"):
        InitialCondition.from_dict({"kind": "uniform", "value": 1.0})
    with pytest.raises(ValueError, match="unknown initial"):
        InitialCondition.from_dict({"kind": "gaussian"})
