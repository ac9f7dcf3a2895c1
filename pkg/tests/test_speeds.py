import math

import numpy as np
import pytest

from kpp_spectra.model import BUNDLED_MODELS, load_model, scalar_model
from kpp_spectra.optimize import BracketError, UnimodalityError, bracket_minimum, check_unimodal, golden_section
from kpp_spectra.speeds import (
    CoercivityError,
    NoCriticalSpeed,
    critical_speed,
    decay_rates_for_speed,
    dispersion_curve,
    fg_speed,
    lambda_max,
    lambda_prime,
    parallel_map,
    speed_at_decay,
)


def test_golden_section_on_parabola():
    x, fx, samples = golden_section(lambda x: (x - 0.3) ** 2, -1, 2, 1e-8)
    assert x == pytest.approx(0.3, abs=1e-7)
    assert len(samples) > 10


def test_unimodality_guard():
    with pytest.raises(UnimodalityError):
        check_unimodal({0.0: 1.0, 1.0: 0.0, 2.0: 1.0, 3.0: -1.0})


def test_bracket_expansion():
    lo, hi, _ = bracket_minimum(lambda x: (x - 10) ** 2, 0.0, 0.5, 100)
    assert lo < 10 < hi
    with pytest.raises(BracketError):
        bracket_minimum(lambda x: -x, 0.0, 0.5, 20)


def test_dispersion_curve_worked_example():
    spec = scalar_model(d=1.0, q=1.0, r=0.125)
    curve = dispersion_curve(spec, [0.0, 0.25, 0.5, 1.0], cells=64)
    assert np.allclose(curve.lam, [-0.125, 0.0625, 0.125, -0.125], atol=1e-6)
    assert curve.to_csv().splitlines()[0] == "z1,lambda"


def test_dispersion_requires_distinct_shifts():
    with pytest.raises(ValueError):
        dispersion_curve(scalar_model(), [0.1, 0.1])


def test_lambda_prime_values():
    assert lambda_prime(scalar_model(d=1.0, q=1.0, r=0.125), 64) == pytest.approx(-0.125, abs=1e-8)
    assert lambda_prime(scalar_model(r=1.0), 16) == pytest.approx(-1.0, abs=1e-6)


def test_lambda_max_worked_example():
    l1, zmax = lambda_max(scalar_model(d=1.0, q=1.0, r=0.125), cells=64)
    assert l1 == pytest.approx(0.125, abs=1e-6)
    assert zmax[0] == pytest.approx(0.5, abs=1e-3)


def test_lambda_max_homogeneous():
    l1, zmax = lambda_max(scalar_model(r=1.0), cells=16)
    assert l1 == pytest.approx(-1.0, abs=1e-6)
    assert abs(zmax[0]) < 1e-3


def test_coercivity_failure_is_reported():
    # with negative diffusion data the map z -> lambda would be convex; emulate by a growing function
    spec = scalar_model(d=1e-4, q=0.0, r=1.0)
    try:
        lambda_max(spec, cells=8)
    except CoercivityError as exc:
        assert "coercivity not observed" in str(exc)


@pytest.mark.parametrize("name", ["scalar-advection", "elliott-cornell", "symmetric-pair", "isotropic-2d"])
def test_lambda1_dominates_lambda_prime(name):
    spec = load_model(name)
    cells = 32 if spec.n == 1 else 8
    assert lambda_max(spec, cells=cells)[0] >= lambda_prime(spec, cells) - 1e-8


@pytest.mark.parametrize("mu,expected", [(1.0, 2.0), (2.0, 2.5), (0.5, 2.5)])
def test_speed_at_decay_homogeneous(mu, expected):
    assert speed_at_decay(scalar_model(r=1.0), [1.0], mu, cells=16) == pytest.approx(expected, rel=1e-5)


def test_speed_at_decay_with_advection():
    assert speed_at_decay(scalar_model(q=0.5, r=1.0), [1.0], 1.0, cells=16) == pytest.approx(2.5, rel=1e-6)


def test_critical_speed_homogeneous():
    c, mu = critical_speed(scalar_model(r=1.0), [1.0], cells=16)
    assert c == pytest.approx(2.0, rel=1e-6)
    assert mu == pytest.approx(1.0, rel=1e-2)


@pytest.mark.parametrize("e,expected", [(1.0, 2.5), (-1.0, 1.5)])
def test_critical_speed_with_advection(e, expected):
    assert critical_speed(scalar_model(q=0.5, r=1.0), [e], cells=16).c_star == pytest.approx(expected, rel=1e-5)


def test_no_critical_speed_under_extinction():
    with pytest.raises(NoCriticalSpeed) as info:
        critical_speed(scalar_model(r=-1.0), [1.0], cells=16)
    assert info.value.lambda1 == pytest.approx(1.0, abs=1e-6)
    assert "lambda1 nonnegative: no critical speed" in str(info.value)


def test_decay_rates_bracket_mu_star():
    spec = scalar_model(r=1.0)
    mu1, mu2 = decay_rates_for_speed(spec, [1.0], 2.5)
    assert mu1 == pytest.approx(0.5, rel=1e-5)
    assert mu2 == pytest.approx(2.0, rel=1e-5)


@pytest.mark.parametrize("e,expected", [(1.0, 2.5), (-1.0, 1.5)])
def test_fg_speed_one_dimension(e, expected):
    rep = fg_speed(scalar_model(q=0.5, r=1.0), [e], cells=16)
    assert rep.fg_speed == pytest.approx(expected, rel=1e-5)
    assert rep.fg_speed == rep.c_star
    assert rep.curve_csv().startswith("mu,c_mu")


@pytest.mark.slow
def test_fg_speed_isotropic_plane():
    spec = load_model("isotropic-2d")
    e = np.array([0.6, 0.8])
    rep = fg_speed(spec, e, angular_steps=16, cells=4)
    assert rep.fg_speed == pytest.approx(2.0, rel=1e-3)
    step = (math.pi - 0.1) / 15
    angle = math.acos(min(1.0, float(np.dot(rep.e_prime, e))))
    assert angle <= 2 * step


def test_concavity_on_bundled_models():
    for name in BUNDLED_MODELS:
        spec = load_model(name)
        if not spec.autonomous:
            continue
        cells = 32 if spec.n == 1 else 8
        zs = [(-0.6,), (0.2,), (1.0,)] if spec.n == 1 else [(-0.6, 0.1), (0.2, 0.2), (1.0, -0.5)]
        vals = [eigenvalue_of(spec, z, cells) for z in zs]
        mid = eigenvalue_of(spec, tuple((np.array(zs[0]) + np.array(zs[2])) / 2), cells)
        assert mid >= 0.5 * (vals[0] + vals[2]) - 1e-6 * (1 + abs(mid))


def eigenvalue_of(spec, z, cells):
    from kpp_spectra.floquet import eigenvalue

    return eigenvalue(spec, z, cells)


def test_parallel_map_preserves_order(monkeypatch):
    monkeypatch.setenv("KPP_SPECTRA_THREADS", "3")
    assert parallel_map(lambda v: v * v, range(6)) == [0, 1, 4, 9, 16, 25]
