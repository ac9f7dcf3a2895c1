"""The acceptance suite: one check per criterion, shared by the tests and ``kpp-spectra verify``."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import eigvals
from scipy.optimize import bisect

from . import defaults
from .cauchy import (
    CONDITIONAL,
    EXTINCTION,
    PERSISTENCE,
    InitialCondition,
    classify_regime,
    comparison_harness,
    conditional_experiment,
    measure_front_speed,
    periodic_entire_solution,
    simulate,
)
from .floquet import dirichlet_principal_eigenvalue, eigenvalue
from .grid import Grid
from .model import BUNDLED_MODELS, constant_model, estimate_K, load_model, scalar_model, validate_assumptions
from .speeds import critical_speed, fg_speed, lambda_max, lambda_prime, parallel_map


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"[{mark}] {self.number:2d} {self.title}: {self.detail} ({self.seconds:.1f} s)"

    def to_dict(self) -> dict:
        return {"number": self.number, "title": self.title, "passed": self.passed, "detail": self.detail, "seconds": self.seconds}


def _worked_example():
    return scalar_model(d=1.0, q=1.0, r=0.125, c=1.0, name="worked-example")


def _exact(z):
    return z * (1 - z) - 0.125


def check_dispersion():
    spec = _worked_example()
    zs = [-0.5, 0.0, 0.25, 0.5, 1.0, 1.5]
    t0 = time.perf_counter()
    errs = [abs(eigenvalue(spec, (z,), cells=128) - _exact(z)) for z in zs]
    elapsed = time.perf_counter() - t0
    worst = max(errs)
    return worst <= 1e-3 and elapsed < 30, f"max |error| {worst:.2e} over {len(zs)} shifts in {elapsed:.1f} s"


def check_threshold():
    spec = _worked_example()
    z_star = bisect(lambda z: eigenvalue(spec, (z,), cells=128), 1e-9, 0.5, xtol=1e-7)
    exact = (1 - math.sqrt(2) / 2) / 2
    return abs(z_star - exact) <= 1e-3, f"z* = {z_star:.6f} (exact {exact:.6f})"


def _random_constant(rng, N):
    L = rng.uniform(0.05, 1.0, (N, N))
    np.fill_diagonal(L, rng.uniform(-1.0, 1.0, N))
    D = rng.uniform(0.5, 2.0, N)
    Q = rng.uniform(-1.0, 1.0, (N, 1))
    return D, Q, L


def constant_oracle(D, Q, L, z: float) -> float:
    """Minus the Perron root of ``L + diag(z^2 d_i - q_i z)`` by a dense eigensolver."""
    M = np.array(L, dtype=float) + np.diag(np.asarray(D) * z * z - np.asarray(Q)[:, 0] * z)
    return -float(np.max(eigvals(M).real))


def check_constant_oracle():
    rng = np.random.default_rng(20240501)
    zs = [-1.0, -0.4, 0.0, 0.3, 0.9]
    worst = 0.0
    count = 0
    for N in (2, 3):
        for _ in range(5):
            D, Q, L = _random_constant(rng, N)
            spec = constant_model(D, Q, L)
            for z in zs:
                err = abs(eigenvalue(spec, (z,), cells=16) - constant_oracle(D, Q, L, z))
                worst = max(worst, err)
                count += 1
    return worst <= 1e-3, f"max |error| {worst:.2e} over {count} (model, shift) pairs"


def check_convergence_order():
    # With constant coefficients the constant mode is exact on a periodic cell, so
    # the order is measured on a zero-boundary box where space is resolved.
    spec = scalar_model(d=1.0, r=1.0)
    R = 2.0
    exact = -1.0 + (math.pi / (2 * R)) ** 2
    base_res, base_steps = 2.0, 16
    errs = []
    for k in range(3):
        lam = dirichlet_principal_eigenvalue(spec, R, resolution=base_res * 2**k, steps=base_steps * 4**k, tol=1e-13)
        errs.append(abs(lam - exact))
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    ok = all(3.2 <= r <= 4.8 for r in ratios)
    return ok, "error ratios " + ", ".join(f"{r:.3f}" for r in ratios)


def _front(spec, e, extent, t_end):
    grid = Grid.box([(-extent, extent)], int(round(2 * extent * 4)))
    traj = simulate(spec, grid, InitialCondition.compact(1.0, 1.0), t_end, 1.0)
    return measure_front_speed(traj, [e]).speed


def check_kpp_speed():
    t0 = time.perf_counter()
    spec = scalar_model(d=1.0, r=1.0)
    c_star = critical_speed(spec, [1.0], cells=32).c_star
    measured = _front(spec, 1.0, 150.0, 60.0)
    elapsed = time.perf_counter() - t0
    ok = abs(c_star - 2) <= 0.02 and 1.86 <= measured <= 2.06 and elapsed < 300
    return ok, f"c* = {c_star:.5f}, measured {measured:.4f} in {elapsed:.1f} s"


def check_advection_asymmetry():
    spec = scalar_model(d=1.0, q=0.5, r=1.0)
    parts, ok = [], True
    for e, target in ((1.0, 2.5), (-1.0, 1.5)):
        c_fg = fg_speed(spec, [e], cells=32).fg_speed
        measured = _front(spec, e, 200.0, 60.0)
        ok &= abs(c_fg - target) <= 0.01 * target
        ok &= (1 - 0.07) * c_fg <= measured <= (1 + 0.03) * c_fg
        parts.append(f"e={e:+.0f}: c_fg {c_fg:.4f}, measured {measured:.4f}")
    return ok, "; ".join(parts)


def _probe_shifts(spec):
    if spec.n == 1:
        return [(-1.0,), (-0.3,), (0.4,), (1.2,)]
    return [(-0.8, 0.3), (0.0, 0.0), (0.5, -0.4), (0.9, 0.6)]


def _cells(spec):
    if spec.n > 1:
        return 8
    return 32 if spec.autonomous else 16


def check_properties():
    worst_concavity = 0.0
    mono_fail = []
    order_fail = []
    for name in BUNDLED_MODELS:
        spec = load_model(name)
        cells = _cells(spec)
        zs = [np.array(z) for z in _probe_shifts(spec)]
        for a in range(len(zs)):
            for b in range(a + 1, len(zs)):
                mid = eigenvalue(spec, tuple((zs[a] + zs[b]) / 2), cells)
                avg = 0.5 * (eigenvalue(spec, tuple(zs[a]), cells) + eigenvalue(spec, tuple(zs[b]), cells))
                worst_concavity = max(worst_concavity, (avg - mid) / (1 + abs(mid)))
        # a reducible L bumped off the diagonal is a Jordan block: no spectral gap to iterate on
        if validate_assumptions(spec).all_passed:
            z = tuple(zs[1])
            lam = eigenvalue(spec, z, cells)
            for i in range(spec.N):
                for j in range(spec.N):
                    bumped = spec.with_entry("Lmat", i, j, f"({spec.Lmat[i][j].text}) + 0.1")
                    if eigenvalue(bumped, z, cells) > lam + 1e-9 * (1 + abs(lam)):
                        mono_fail.append(f"{name}[{i},{j}]")
        if spec.autonomous or spec.n == 1:
            lp = lambda_prime(spec, cells)
            try:
                l1, _ = lambda_max(spec, cells=cells)
            except RuntimeError as exc:
                order_fail.append(f"{name}: {exc}")
                continue
            if l1 < lp - 1e-9:
                order_fail.append(name)
    ok = worst_concavity <= 1e-6 and not mono_fail and not order_fail
    detail = f"worst concavity defect {worst_concavity:.2e}; monotonicity failures {mono_fail or 'none'}; lambda1 >= lambda1' failures {order_fail or 'none'}"
    return ok, detail


def check_dirichlet():
    spec = scalar_model(d=1.0, r=1.0)
    lam1 = -1.0
    vals, ok = [], True
    for R in (2.0, 4.0, 8.0, 16.0):
        lam = dirichlet_principal_eigenvalue(spec, R)
        gap = (math.pi / (2 * R)) ** 2
        ok &= abs(lam - lam1 - gap) <= 0.3 * gap
        vals.append(lam)
    ok &= all(a > b for a, b in zip(vals, vals[1:]))
    return ok, "lambda_Dir(R) = " + ", ".join(f"{v:.5f}" for v in vals)


def check_regimes():
    box = Grid.box([(-40.0, 40.0)], 320)
    ext = scalar_model(r=-1.0)
    per = scalar_model(r=1.0)
    adv = _worked_example()
    parts, ok = [], True
    v = classify_regime(ext, cells=32)
    sup = simulate(ext, box, InitialCondition.compact(1.0, 1.0), 20.0, 1.0).sup_history[-1]
    ok &= v.classification == EXTINCTION and sup < 1e-6
    parts.append(f"L=[-1] {v.classification}, sup(20) {sup:.1e}")
    v = classify_regime(per, cells=32)
    low = simulate(per, box, InitialCondition.compact(1.0, 1e-4), 80.0, 2.0).ball_min(10.0)[-1]
    ok &= v.classification == PERSISTENCE and low >= 0.1
    parts.append(f"L=[1] {v.classification}, min(80) {low:.3f}")
    v = classify_regime(adv, cells=128)
    ok &= v.classification == CONDITIONAL
    persist = conditional_experiment(adv, [0.10], "persist", cells=128)
    extinct = conditional_experiment(adv, [0.30], "extinct", cells=128)
    ok &= persist["min_over_ball"] > 0.01 and extinct["max_over_ball"] < 1e-3
    parts.append(
        f"worked example {v.classification}, persist min {persist['min_over_ball']:.3f}, extinct max {extinct['max_over_ball']:.1e}"
    )
    return ok, "; ".join(parts)


def check_entire():
    sym = load_model("symmetric-pair")
    pert = load_model("symmetric-pair-perturbed")
    a = periodic_entire_solution(sym, Grid.periodic_cell(sym, 32))
    dev = max(float(np.max(np.abs(f.values - 0.5))) for f in a.orbit)
    b = periodic_entire_solution(pert, Grid.periodic_cell(pert, 32))
    ok = a.residual <= 1e-8 and dev <= 1e-6 and b.residual <= 1e-8 and b.minimum > 0
    return ok, (
        f"symmetric residual {a.residual:.1e}, |u*-0.5| {dev:.1e}; "
        f"perturbed residual {b.residual:.1e}, min {b.minimum:.4f}"
    )


def check_harness():
    spec = load_model("elliott-cornell")
    worst, parts = 0.0, []
    for reaction in ("coop_power:1,0.5", "coop_quadratic:1"):
        rep = comparison_harness(spec, reaction, trials=50, seed=7)
        worst = max(worst, rep["max_violation"])
        parts.append(f"{rep['reaction']} {rep['max_violation']:.1e}")
    return worst <= defaults.HARNESS_TOL, "max violation " + ", ".join(parts)


def check_absorbing():
    spec = load_model("elliott-cornell")
    K = estimate_K(spec)
    grid = Grid.box([(-40.0, 40.0)], 320)
    traj = simulate(spec, grid, InitialCondition.uniform(10 * K), 20.0, 1.0)
    bound = traj.initial_sup + K + defaults.ABSORB_SLACK
    late = float(traj.interior_sup()[-1])
    ok = traj.max_sup <= bound and late <= 1.05 * K
    return ok, f"K_est {K:.3f}, max sup {traj.max_sup:.3f} <= {bound:.3f}, interior sup(20) {late:.3f}"


CRITERIA: list[tuple[int, str, Callable]] = [
    (1, "dispersion of the worked example", check_dispersion),
    (2, "threshold decay rate", check_threshold),
    (3, "constant-coefficient oracle", check_constant_oracle),
    (4, "convergence order", check_convergence_order),
    (5, "KPP speed", check_kpp_speed),
    (6, "advection asymmetry", check_advection_asymmetry),
    (7, "concavity and monotonicity", check_properties),
    (8, "Dirichlet limit", check_dirichlet),
    (9, "regime suite", check_regimes),
    (10, "periodic entire solution", check_entire),
    (11, "comparison harness", check_harness),
    (12, "absorbing set", check_absorbing),
]


def run_criterion(number: int) -> CriterionResult:
    _, title, fn = next(c for c in CRITERIA if c[0] == number)
    t0 = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as exc:  # noqa: BLE001 - reported as a failure
        ok, detail = False, f"{type(exc).__name__}: {exc}"
    return CriterionResult(number, title, bool(ok), detail, time.perf_counter() - t0)


def run_all(numbers=None) -> list[CriterionResult]:
    numbers = [c[0] for c in CRITERIA] if numbers is None else list(numbers)
    return parallel_map(run_criterion, numbers)
