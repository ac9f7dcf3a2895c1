"""Direct simulation of the nonlinear Cauchy problem and its diagnostics.

Whole-space problems are emulated on truncated boxes with zero boundary
values; periodic entire solutions live on one periodicity cell.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import defaults
from .floquet import eigenvalue
from .grid import (
    DIRICHLET,
    PERIODIC,
    Grid,
    Reaction,
    Schedule,
    SimulationError,
    StateField,
    StepInfo,
    cfl_dt,
    heun_semilinear,
    read_field,
    steps_for,
    write_field,
)
from .model import ModelSpec, coefficient_bounds, estimate_K
from .speeds import lambda_max, lambda_prime


class PreconditionError(ValueError):
    pass


class AbsorbingBoundViolation(SimulationError):
    pass


class DomainTooSmall(RuntimeError):
    def __init__(self, time: float):
        super().__init__(f"domain too small: tracked level set reaches the boundary margin at t = {time:.6g}")
        self.time = time


# --- initial conditions ----------------------------------------------------


_IC_KEYS = {
    "compact": {"center", "radius", "height"},
    "exponential": {"z", "C", "B"},
    "uniform": {"height"},
    "custom": {"expressions"},
}


@dataclass(frozen=True)
class InitialCondition:
    """Nonnegative bounded initial data.

    kinds and their parameters:

    * ``compact``: ``center``, ``radius``, ``height`` -- a smooth cosine bump vanishing outside the ball;
    * ``exponential``: ``z``, ``C``, ``B`` -- ``min(exp(z.x)/C, max(1, exp(B)/C))`` in every component;
    * ``uniform``: ``height``;
    * ``custom``: ``expressions`` -- one expression in ``x1..xn`` per component.
    """

    kind: str
    params: dict = field(default_factory=dict)

    @classmethod
    def compact(cls, radius=1.0, height=1.0, center=None):
        return cls("compact", {"radius": radius, "height": height, "center": center})

    @classmethod
    def exponential(cls, z, C=1.0, B=0.0):
        return cls("exponential", {"z": list(np.atleast_1d(z)), "C": C, "B": B})

    @classmethod
    def uniform(cls, height=1.0):
        return cls("uniform", {"height": height})

    @classmethod
    def from_dict(cls, d: dict) -> "InitialCondition":
        """Accept ``{"kind", **params}`` or ``{"kind", "params": {...}}``."""
        d = dict(d)
        kind = d.pop("kind")
        params = dict(d.pop("params", {}))
        params.update(d)
        allowed = _IC_KEYS.get(kind)
        if allowed is None:
            raise ValueError(f"unknown initial condition kind {kind!r}")
        extra = set(params) - allowed
        if extra:
            raise ValueError(f"{kind} initial data: unknown keys {sorted(extra)}")
        return cls(kind, params)

    def realize(self, spec: ModelSpec, grid: Grid) -> np.ndarray:
        X = grid.coords()
        shape = (spec.N,) + grid.shape
        p = self.params
        if self.kind == "uniform":
            u = np.full(shape, float(p.get("height", 1.0)))
        elif self.kind == "compact":
            c = np.zeros(grid.n) if p.get("center") is None else np.asarray(p["center"], dtype=float)
            R = float(p.get("radius", 1.0))
            r = np.sqrt(sum((x - ci) ** 2 for x, ci in zip(X, c)))
            bump = np.where(r < R, 0.5 * (1 + np.cos(np.pi * np.minimum(r / R, 1.0))), 0.0)
            u = np.broadcast_to(float(p.get("height", 1.0)) * bump, shape).copy()
        elif self.kind == "exponential":
            z = np.asarray(p["z"], dtype=float)
            C, B = float(p.get("C", 1.0)), float(p.get("B", 0.0))
            if C <= 0:
                raise ValueError("exponential initial data needs C > 0")
            cap = max(1.0, math.exp(B) / C)
            zx = sum(zi * x for zi, x in zip(z, X))
            u = np.broadcast_to(np.minimum(np.exp(np.minimum(zx, 700.0)) / C, cap), shape).copy()
        elif self.kind == "custom":
            from . import exprlang

            exprs = p["expressions"]
            if len(exprs) != spec.N:
                raise ValueError(f"custom initial data needs {spec.N} expressions")
            u = np.empty(shape)
            for i, text in enumerate(exprs):
                e = exprlang.parse(text, spec.n, spec.params)
                u[i] = np.broadcast_to(exprlang.evaluate(e, 0.0, X, spec.env), grid.shape)
        else:
            raise ValueError(f"unknown initial condition kind {self.kind!r}")
        if np.any(u < 0) or not np.all(np.isfinite(u)):
            raise ValueError("initial data must be finite and nonnegative")
        if grid.kind == DIRICHLET:
            u[:, ~grid.interior_mask(1)] = 0.0
        return u


# --- trajectories ----------------------------------------------------------


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (snapshots, N, *grid.shape)
    grid: Grid
    dt: float
    reaction: Reaction
    sup_history: np.ndarray  # per snapshot
    max_sup: float  # over every time step
    clipped_total: float
    clipped_max: float
    K_est: float = float("nan")
    initial_sup: float = float("nan")
    model_digest: str = ""

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("snapshot times must be strictly increasing")

    def field(self, k: int) -> StateField:
        return StateField(self.states[k], nonneg=True)

    def ball_min(self, radius: float) -> np.ndarray:
        mask = self.grid.ball_mask(radius) & self.grid.interior_mask(1)
        return self.states[:, :, mask].min(axis=(1, 2))

    def ball_max(self, radius: float) -> np.ndarray:
        mask = self.grid.ball_mask(radius)
        return self.states[:, :, mask].max(axis=(1, 2))

    def interior_sup(self, margin: int = defaults.FRONT_MARGIN) -> np.ndarray:
        mask = self.grid.interior_mask(margin)
        return self.states[:, :, mask].max(axis=(1, 2))

    def at_time(self, t: float) -> int:
        return int(np.argmin(np.abs(self.times - t)))

    def save(self, directory) -> Path:
        """Write one KPPF file per snapshot plus ``index.json``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        files = []
        for k in range(len(self.times)):
            name = f"snap_{k:05d}.kppf"
            write_field(d / name, self.states[k])
            files.append(name)
        index = {
            "times": self.times.tolist(),
            "files": files,
            "grid": {
                "n": self.grid.n,
                "cells": list(self.grid.cells),
                "lower": list(self.grid.lower),
                "upper": list(self.grid.upper),
                "kind": self.grid.kind,
            },
            "dt": self.dt,
            "reaction": {"kind": self.reaction.kind, "D": self.reaction.D, "p": self.reaction.p},
            "sup_history": self.sup_history.tolist(),
            "max_sup": self.max_sup,
            "clipped_total": self.clipped_total,
            "clipped_max": self.clipped_max,
            "K_est": self.K_est,
            "initial_sup": self.initial_sup,
            "model_digest": self.model_digest,
        }
        (d / "index.json").write_text(json.dumps(index, indent=1))
        return d

    @classmethod
    def load(cls, directory) -> "Trajectory":
        d = Path(directory)
        index = json.loads((d / "index.json").read_text())
        g = index["grid"]
        grid = Grid(g["n"], tuple(g["cells"]), tuple(g["lower"]), tuple(g["upper"]), g["kind"])
        states = np.stack([read_field(d / f).values for f in index["files"]])
        r = index["reaction"]
        return cls(
            times=np.asarray(index["times"]),
            states=states,
            grid=grid,
            dt=index["dt"],
            reaction=Reaction(r["kind"], r["D"], r["p"]),
            sup_history=np.asarray(index["sup_history"]),
            max_sup=index["max_sup"],
            clipped_total=index["clipped_total"],
            clipped_max=index["clipped_max"],
            K_est=index.get("K_est", float("nan")),
            initial_sup=index.get("initial_sup", float("nan")),
            model_digest=index.get("model_digest", ""),
        )

    def summary_csv(self, ball_radius: float = 10.0, e=None, level: float = defaults.FRONT_LEVEL) -> str:
        positions = front_positions(self, e, level)[0] if e is not None else np.full(len(self.times), np.nan)
        mins = self.ball_min(ball_radius)
        lines = ["t,sup,min_over_ball,front_position"]
        for t, s, m, x in zip(self.times, self.sup_history, mins, positions):
            lines.append(f"{float(t)!r},{float(s)!r},{float(m)!r},{'' if np.isnan(x) else repr(float(x))}")
        return "\n".join(lines) + "\n"


def _sup_bound(spec: ModelSpec, reaction: Reaction, M0: float, K: float) -> float:
    if reaction.kind == "kpp":
        return M0 + K + defaults.ABSORB_SLACK
    if reaction.kind == "linear":
        return M0
    lmax = max(float(np.max(coefficient_bounds(spec)["L_over"])), 0.0)
    if reaction.D <= 0:
        return M0
    expo = reaction.p if reaction.kind == "coop_power" else 1.0
    return max(M0, (spec.N * lmax / reaction.D) ** (1.0 / expo)) + 1.0


def simulate(
    spec: ModelSpec,
    grid: Grid,
    u_ini: InitialCondition | np.ndarray,
    t_end: float,
    snapshot_every: float,
    reaction: Reaction | str = "kpp",
    safety: float = defaults.CFL_SAFETY,
    check_absorbing: bool = True,
) -> Trajectory:
    """Integrate the semilinear system with Heun steps, recording snapshots.

    For the KPP reaction the absorbing bound ``sup u <= sup u0 + K_est + slack``
    is asserted at every step.
    """
    if isinstance(reaction, str):
        reaction = Reaction.parse(reaction)
    if grid.n != spec.n:
        raise ValueError("grid dimension does not match the model")
    u = u_ini.realize(spec, grid) if isinstance(u_ini, InitialCondition) else np.array(u_ini, dtype=float)
    shape = (spec.N,) + grid.shape
    if u.shape != shape:
        raise ValueError(f"initial data has shape {u.shape}, expected {shape}")
    if grid.kind == DIRICHLET:
        u[:, ~grid.interior_mask(1)] = 0.0
    M0 = float(u.max())
    K = estimate_K(spec) if reaction.kind == "kpp" else float("nan")
    bound = _sup_bound(spec, reaction, M0, 0.0 if math.isnan(K) else K)
    C_over = coefficient_bounds(spec)["C_over"] if reaction.kind == "kpp" else None
    dt_max = cfl_dt(spec, grid, None, safety, reaction.rate_bound(spec, bound, C_over))
    if spec.autonomous:
        per_snap = steps_for(snapshot_every, dt_max)
        dt = snapshot_every / per_snap
    else:
        dt = spec.T / steps_for(spec.T, dt_max)
        per_snap = max(1, int(round(snapshot_every / dt)))
    n_snaps = max(1, int(math.ceil(t_end / (per_snap * dt) - 1e-9)))
    schedule = Schedule(spec, grid, None, dt, need_C=reaction.kind == "kpp")
    info = StepInfo()
    times = [0.0]
    states = [u.copy()]
    sups = [M0]
    max_sup = M0
    absorb = M0 + K + defaults.ABSORB_SLACK if reaction.kind == "kpp" else math.inf
    blowup = 10.0 * (M0 + K) if reaction.kind == "kpp" else math.inf
    flat = u.ravel()
    k = 0
    for s in range(n_snaps):
        for _ in range(per_snap):
            G0, C0 = schedule.at_step(k)
            G1, C1 = schedule.at_step(k + 1)
            flat = heun_semilinear(G0, G1, C0, C1, flat, dt, reaction, shape, info).ravel()
            k += 1
            sup = float(flat.max())
            if not math.isfinite(sup):
                raise SimulationError("non-finite values", k)
            if sup > blowup:
                raise SimulationError(f"blow-up: sup {sup:.6g} exceeds {blowup:.6g}", k)
            if check_absorbing and sup > absorb:
                raise AbsorbingBoundViolation(f"sup {sup:.6g} exceeds the absorbing bound {absorb:.6g}", k)
            max_sup = max(max_sup, sup)
        times.append(k * dt)
        states.append(flat.reshape(shape).copy())
        sups.append(float(flat.max()))
    return Trajectory(
        times=np.asarray(times),
        states=np.stack(states),
        grid=grid,
        dt=dt,
        reaction=reaction,
        sup_history=np.asarray(sups),
        max_sup=max_sup,
        clipped_total=info.clipped,
        clipped_max=info.clipped_max,
        K_est=K,
        initial_sup=M0,
        model_digest=spec.digest,
    )


# --- regimes ---------------------------------------------------------------

EXTINCTION = "Extinction"
PERSISTENCE = "Persistence"
CONDITIONAL = "Conditional"


@dataclass
class RegimeVerdict:
    classification: str
    lambda1: float
    lambda_prime: float
    z_max: tuple
    indeterminate: bool
    tol_zero: float
    confirmation: dict | None = None

    def to_dict(self) -> dict:
        return {
            "classification": self.classification,
            "lambda1": self.lambda1,
            "lambda_prime": self.lambda_prime,
            "z_max": list(self.z_max),
            "indeterminate_near_zero": self.indeterminate,
            "confirmation": self.confirmation,
        }


def classify_regime(spec: ModelSpec, cells=None, tol_zero: float = defaults.TOL_ZERO) -> RegimeVerdict:
    """Spectral long-time regime from the signs of lambda_prime and lambda1."""
    lp = lambda_prime(spec, cells)
    l1, zmax = lambda_max(spec, cells=cells)
    if lp >= tol_zero:
        cls = EXTINCTION
    elif l1 <= -tol_zero:
        cls = PERSISTENCE
    else:
        cls = CONDITIONAL
    indeterminate = abs(lp) < tol_zero or abs(l1) < tol_zero
    return RegimeVerdict(cls, l1, lp, zmax, indeterminate, tol_zero)


def _box(spec: ModelSpec, extent: float, resolution: float) -> Grid:
    return Grid.box([(-extent, extent)] * spec.n, int(round(2 * extent * resolution)))


def confirm_regime(
    spec: ModelSpec,
    verdict: RegimeVerdict,
    extent: float = 40.0,
    resolution: float = 4.0,
    cells=None,
) -> dict:
    """Run the desk-scale simulation matching the spectral verdict."""
    grid = _box(spec, extent, resolution)
    if verdict.classification == EXTINCTION:
        traj = simulate(spec, grid, InitialCondition.uniform(1.0), 20.0, 1.0)
        value = float(traj.sup_history[-1])
        out = {"experiment": "extinction", "t": 20.0, "sup": value, "threshold": 1e-6, "confirmed": value < 1e-6}
    elif verdict.classification == PERSISTENCE:
        traj = simulate(spec, grid, InitialCondition.compact(1.0, 1e-4), 80.0, 2.0)
        value = float(traj.ball_min(10.0)[-1])
        out = {"experiment": "hair-trigger", "t": 80.0, "min_over_ball": value, "threshold": 0.1, "confirmed": value >= 0.1}
    else:
        z_ext = np.asarray(verdict.z_max)
        persist_z = None
        for zeta in np.linspace(0.95, 0.05, 19):
            z = tuple(zeta * z_ext)
            try:
                _check_conditional(spec, z, "persist", cells)
            except PreconditionError:
                continue
            persist_z = z
            break
        persist = conditional_experiment(spec, persist_z, "persist", cells=cells) if persist_z else None
        extinct = conditional_experiment(spec, tuple(z_ext), "extinct", cells=cells)
        out = {
            "experiment": "conditional",
            "persist": persist,
            "extinct": extinct,
            "confirmed": bool(extinct["confirmed"] and (persist is None or persist["confirmed"])),
        }
    verdict.confirmation = out
    return out


def _check_conditional(spec: ModelSpec, z, side: str, cells=None, verdict: RegimeVerdict | None = None) -> float:
    verdict = verdict or classify_regime(spec, cells)
    if verdict.classification != CONDITIONAL:
        raise PreconditionError(f"regime is {verdict.classification}, not Conditional")
    z = np.atleast_1d(np.asarray(z, dtype=float))
    lam = eigenvalue(spec, tuple(z), cells)
    if side == "persist":
        if not lam < 0:
            raise PreconditionError(f"persistence hypothesis 1 fails: lambda_z = {lam:.6g} is not negative")
        d = 0.01
        slope = (eigenvalue(spec, tuple((1 + d) * z), cells) - eigenvalue(spec, tuple((1 - d) * z), cells)) / (2 * d)
        if not slope > 0:
            raise PreconditionError(f"persistence hypothesis 2 fails: zeta -> lambda_(zeta z) not increasing at 1 (slope {slope:.6g})")
    elif side == "extinct":
        if not lam >= 0:
            raise PreconditionError(f"extinction hypothesis 1 fails: lambda_z = {lam:.6g} is negative")
    else:
        raise ValueError("side must be 'persist' or 'extinct'")
    return lam


def conditional_experiment(
    spec: ModelSpec,
    z,
    side: str,
    t_end: float = 80.0,
    C: float = 100.0,
    B: float | None = None,
    extent: float = 150.0,
    resolution: float = 4.0,
    ball_radius: float = 10.0,
    cells=None,
) -> dict:
    """Simulate from exponential data with decay ``z`` in the conditional regime.

    The default ``B = ln C`` makes the data continuous with height 1 where capped.
    """
    lam = _check_conditional(spec, z, side, cells)
    B = math.log(C) if B is None else B
    grid = _box(spec, extent, resolution)
    traj = simulate(spec, grid, InitialCondition.exponential(z, C, B), t_end, t_end / 40)
    if side == "persist":
        value = float(traj.ball_min(ball_radius)[-1])
        threshold, confirmed = 0.01, value > 0.01
        key = "min_over_ball"
    else:
        value = float(traj.ball_max(ball_radius)[-1])
        threshold, confirmed = 1e-3, value < 1e-3
        key = "max_over_ball"
    return {
        "side": side,
        "z": [float(v) for v in np.atleast_1d(z)],
        "lambda_z": lam,
        "t_end": t_end,
        key: value,
        "threshold": threshold,
        "confirmed": bool(confirmed),
        "C": C,
        "B": B,
    }


# --- front tracking --------------------------------------------------------


def _ray_profile(traj: Trajectory, e: np.ndarray, margin: int):
    grid = traj.grid
    h = min(grid.h)
    if grid.n == 1:
        x = grid.axis(0)
        s = e[0] * x
        order = np.argsort(s)
        keep = s[order] >= 0
        idx = order[keep]
        pos = s[idx]
        vals = traj.states.max(axis=1)[:, idx]
        near = np.zeros(len(idx), dtype=bool)
        near[(idx < margin) | (idx > grid.shape[0] - 1 - margin)] = True
        return pos, vals, near
    smax = float(np.linalg.norm(np.asarray(grid.upper) - np.asarray(grid.lower)))
    pos = np.arange(0.0, smax, h)
    pts = np.outer(pos, e)
    inside = np.all((pts >= np.asarray(grid.lower)) & (pts <= np.asarray(grid.upper)), axis=1)
    pos, pts = pos[inside], pts[inside]
    lower, upper = np.asarray(grid.lower), np.asarray(grid.upper)
    near = np.any((pts - lower < margin * np.asarray(grid.h)) | (upper - pts < margin * np.asarray(grid.h)), axis=1)
    axes = [grid.axis(a) for a in range(grid.n)]
    prof = traj.states.max(axis=1)
    vals = np.stack([RegularGridInterpolator(axes, prof[k])(pts) for k in range(len(prof))])
    return pos, vals, near


def front_positions(traj: Trajectory, e, level: float = defaults.FRONT_LEVEL, margin: int = defaults.FRONT_MARGIN):
    """Level-set position along ``e`` per snapshot, and a flag for boundary contact."""
    e = np.atleast_1d(np.asarray(e, dtype=float))
    e = e / np.linalg.norm(e)
    pos, vals, near = _ray_profile(traj, e, margin)
    interior = traj.interior_sup(margin)
    running = np.maximum.accumulate(interior)
    out = np.full(len(traj.times), np.nan)
    hit = np.zeros(len(traj.times), dtype=bool)
    for k in range(len(traj.times)):
        thr = level * running[k]
        above = np.nonzero(vals[k] >= thr)[0]
        if thr <= 0 or above.size == 0:
            continue
        j = int(above[-1])
        if j + 1 >= len(pos) or near[j + 1]:
            hit[k] = True
            out[k] = pos[j]
            continue
        v0, v1 = vals[k, j], vals[k, j + 1]
        out[k] = pos[j] + (v0 - thr) / (v0 - v1) * (pos[j + 1] - pos[j])
    return out, hit


@dataclass
class FrontSpeed:
    speed: float
    intercept: float
    times: np.ndarray
    positions: np.ndarray
    rms_residual: float
    level: float
    sensitivity: dict = field(default_factory=dict)


def _fit(traj: Trajectory, e, level: float, margin: int):
    positions, hit = front_positions(traj, e, level, margin)
    start = len(traj.times) // 2
    window = slice(start, None)
    if np.any(hit[window]):
        first = start + int(np.nonzero(hit[window])[0][0])
        raise DomainTooSmall(float(traj.times[first]))
    t = traj.times[window]
    x = positions[window]
    ok = np.isfinite(x)
    if ok.sum() < 2:
        raise ValueError("fewer than two tracked front positions in the fit window")
    slope, intercept = np.polyfit(t[ok], x[ok], 1)
    resid = x[ok] - (slope * t[ok] + intercept)
    return float(slope), float(intercept), positions, float(np.sqrt(np.mean(resid**2)))


def measure_front_speed(
    traj: Trajectory,
    e,
    level: float = defaults.FRONT_LEVEL,
    margin: int = defaults.FRONT_MARGIN,
    sensitivity_levels: Sequence[float] = (0.05, 0.5),
) -> FrontSpeed:
    """Least-squares speed of the level set along ``e`` over the last half of the snapshots."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    slope, intercept, positions, rms = _fit(traj, e, level, margin)
    sens = {}
    for lv in sensitivity_levels:
        try:
            sens[lv] = _fit(traj, e, lv, margin)[0]
        except (DomainTooSmall, ValueError):
            sens[lv] = float("nan")
    return FrontSpeed(slope, intercept, traj.times, positions, rms, level, sens)


# --- periodic entire solution ----------------------------------------------


@dataclass
class EntireSolution:
    times: np.ndarray  # sample times over one period, starting at 0
    orbit: list  # StateFields
    residual: float
    periods: int
    grid: Grid

    @property
    def minimum(self) -> float:
        return float(min(f.values.min() for f in self.orbit))


def periodic_entire_solution(
    spec: ModelSpec,
    grid: Grid,
    tol: float = defaults.ENTIRE_TOL,
    max_periods: int = defaults.ENTIRE_MAX_PERIODS,
    samples_per_period: int = 8,
    safety: float = defaults.CFL_SAFETY,
) -> EntireSolution:
    """Fixed point of the nonlinear period map on the periodicity cell, started from ``K_est``."""
    if grid.kind != PERIODIC:
        raise ValueError("periodic entire solutions need a periodic-cell grid")
    grid.check_periodic_for(spec)
    lp = lambda_prime(spec, grid.cells)
    if not lp < 0:
        raise PreconditionError(f"lambda_prime = {lp:.6g} is not negative: no positive entire solution")
    K = estimate_K(spec)
    reaction = Reaction("kpp")
    shape = (spec.N,) + grid.shape
    bound = K + defaults.ABSORB_SLACK
    dt_max = cfl_dt(spec, grid, None, safety, reaction.rate_bound(spec, bound))
    m = steps_for(spec.T, dt_max)
    m = samples_per_period * max(1, math.ceil(m / samples_per_period))
    dt = spec.T / m
    schedule = Schedule(spec, grid, None, dt, need_C=True)

    def period(u, record=False):
        orbit = [u.copy()]
        for k in range(m):
            G0, C0 = schedule.at_step(k)
            G1, C1 = schedule.at_step(k + 1)
            u = heun_semilinear(G0, G1, C0, C1, u.ravel(), dt, reaction, shape).reshape(shape)
            if record and (k + 1) % (m // samples_per_period) == 0 and k + 1 < m:
                orbit.append(u.copy())
        if not np.all(np.isfinite(u)):
            raise SimulationError("non-finite values in the period map")
        return u, orbit

    u = np.full(shape, K)
    resid = math.inf
    for it in range(1, max_periods + 1):
        new, _ = period(u)
        resid = float(np.max(np.abs(new - u)))
        u = new
        if resid <= tol:
            break
    else:
        raise RuntimeError(f"period map did not converge in {max_periods} periods (residual {resid:.3g})")
    _, orbit = period(u, record=True)
    if min(o.min() for o in orbit) <= 0:
        raise RuntimeError("period map converged to a state with a zero entry; check the sign of lambda_prime or the resolution")
    times = np.arange(len(orbit)) * spec.T / samples_per_period
    return EntireSolution(times, [StateField(o, nonneg=True) for o in orbit], resid, it, grid)


# --- comparison, Harnack and component diagnostics -------------------------


def comparison_harness(
    spec: ModelSpec,
    reaction: Reaction | str,
    trials: int = 50,
    seed: int = 0,
    t_end: float = 1.0,
    grid: Grid | None = None,
    scale: float = 2.0,
    safety: float = defaults.CFL_SAFETY,
) -> dict:
    """Co-evolve seeded ordered pairs ``u0 <= v0`` and report the worst ordering violation."""
    if isinstance(reaction, str):
        reaction = Reaction.parse(reaction)
    if not reaction.cooperative:
        raise ValueError("the KPP reaction has no comparison principle; use a cooperative surrogate")
    grid = grid or Grid.periodic_cell(spec, 16)
    rng = np.random.default_rng(seed)
    shape = (spec.N,) + grid.shape
    size = int(np.prod(shape))
    U = rng.uniform(0.0, scale, (size, trials))
    V = U + rng.uniform(0.0, scale, (size, trials)) * (rng.uniform(size=(1, trials)) < 0.8)
    if grid.kind == DIRICHLET:
        keep = np.tile(grid.interior_mask(1).ravel(), spec.N)
        U[~keep] = 0.0
        V[~keep] = 0.0
    sup = float(max(U.max(), V.max()))
    bound = _sup_bound(spec, reaction, sup, 0.0)
    dt_max = cfl_dt(spec, grid, None, safety, reaction.rate_bound(spec, bound))
    m = steps_for(t_end, dt_max)
    dt = t_end / m
    schedule = Schedule(spec, grid, None, dt)
    batch_shape = (size, trials)
    worst = np.zeros(trials)
    for k in range(m):
        G0, _ = schedule.at_step(k)
        G1, _ = schedule.at_step(k + 1)
        U = heun_semilinear(G0, G1, None, None, U, dt, reaction, batch_shape)
        V = heun_semilinear(G0, G1, None, None, V, dt, reaction, batch_shape)
        worst = np.maximum(worst, (U - V).max(axis=0))
    return {
        "reaction": reaction.kind,
        "trials": trials,
        "seed": seed,
        "steps": m,
        "dt": dt,
        "max_violation": float(max(worst.max(), 0.0)),
        "per_trial": worst.tolist(),
        "passed": bool(worst.max() <= defaults.HARNESS_TOL),
    }


def harnack_diagnostic(spec: ModelSpec, traj: Trajectory, theta: float) -> float:
    """min over the late window [5θ, 6θ] divided by max over the early window [0, 2θ], both on |x|∞ <= θ/2."""
    if theta < max([spec.T] + list(spec.L)):
        raise ValueError("theta must be at least max(T, L)")
    if traj.times[0] > 0 or traj.times[-1] < 6 * theta - 1e-9:
        raise ValueError("trajectory does not cover [0, 6 theta]")
    X = traj.grid.coords()
    box = np.all([np.abs(x) <= theta / 2 + 1e-12 for x in X], axis=0)
    if traj.grid.kind == DIRICHLET:
        lo, hi = np.asarray(traj.grid.lower), np.asarray(traj.grid.upper)
        if np.any(lo > -theta / 2) or np.any(hi < theta / 2):
            raise ValueError("spatial window exceeds the trajectory domain")
    early = (traj.times >= 0) & (traj.times <= 2 * theta + 1e-9)
    late = (traj.times >= 5 * theta - 1e-9) & (traj.times <= 6 * theta + 1e-9)
    if not early.any() or not late.any():
        raise ValueError("trajectory has no snapshots in one of the time windows")
    top = float(traj.states[early][:, :, box].max())
    bottom = float(traj.states[late][:, :, box].min())
    return bottom / top


def component_ratio_diagnostic(traj: Trajectory, t_min: float = 1.0, margin: int = 1, radius: float | None = None) -> dict:
    """Envelope ``u_j <= kappa * u_i^p`` fitted over interior points and times ``>= t_min``.

    For each ordered pair (i, j) a least-squares line ``ln u_j ~ ln kappa + p ln u_i``
    is shifted up to an envelope; the pair with the largest ``kappa`` is reported.
    """
    if t_min < 1:
        raise ValueError("t_min must be at least 1")
    N = traj.states.shape[1]
    if N < 2:
        raise ValueError("component ratio diagnostic needs N >= 2")
    mask = traj.grid.interior_mask(margin)
    if radius is not None:
        mask &= traj.grid.ball_mask(radius)
    sel = traj.times >= t_min
    if not sel.any():
        raise ValueError("no snapshots after t_min")
    data = traj.states[sel][:, :, mask]  # (S, N, P)
    if np.any(data <= 0):
        raise ValueError("nonpositive values in the fit window: logarithm undefined")
    logs = np.log(data)
    fits = {}
    for i in range(N):
        for j in range(N):
            if i == j:
                continue
            x = logs[:, i].ravel()
            y = logs[:, j].ravel()
            if np.ptp(x) > 0:
                p, _ = np.polyfit(x, y, 1)
            else:
                p = 1.0
            log_kappa = float(np.max(y - p * x))
            viol = float(np.mean(y > log_kappa + p * x + 1e-12 * (1 + np.abs(y))))
            fits[(i, j)] = {"p_hat": float(p), "kappa_hat": math.exp(log_kappa), "violation_fraction": viol}
    worst = max(fits, key=lambda k: fits[k]["kappa_hat"])
    return {"pair": worst, **fits[worst], "all_pairs": {f"{i},{j}": v for (i, j), v in fits.items()}}
