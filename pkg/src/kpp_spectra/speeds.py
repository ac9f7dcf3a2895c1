"""Dispersion curves, extremal eigenvalues and spreading speeds.

With ``lam(z)`` the generalized principal eigenvalue for the shift ``z``:

* ``lambda_prime = lam(0)`` and ``lambda1 = max_z lam(z)``;
* ``c_mu(e) = lam(-mu e) / (-mu)`` is the speed carried by decay rate ``mu``;
* ``c_star(e) = min_{mu > 0} c_mu(e)``;
* ``c_fg(e) = min_{e.e' > 0} c_star(e') / (e.e')``.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import defaults
from .floquet import eigenvalue
from .model import ModelSpec
from .optimize import BracketError, bracket_minimum, golden_section


class NoCriticalSpeed(ValueError):
    """The critical speed is only defined when lambda1 < 0."""

    def __init__(self, lambda1: float):
        super().__init__(f"lambda1 nonnegative: no critical speed (lambda1 = {lambda1:.6g})")
        self.lambda1 = lambda1


class CoercivityError(RuntimeError):
    pass


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("KPP_SPECTRA_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn, items) -> list:
    """Order-preserving map, threaded up to ``KPP_SPECTRA_THREADS`` workers."""
    items = list(items)
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass
class DispersionCurve:
    z: list
    lam: list  # None where the solve failed
    failures: dict = field(default_factory=dict)
    model_digest: str = ""
    cells: tuple = ()

    def to_csv(self) -> str:
        n = len(self.z[0]) if self.z else 1
        lines = [",".join([f"z{a + 1}" for a in range(n)] + ["lambda"])]
        for z, lam in zip(self.z, self.lam):
            lines.append(",".join([repr(v) for v in z] + ["" if lam is None else repr(lam)]))
        return "\n".join(lines) + "\n"


def _as_z(spec: ModelSpec, z) -> tuple:
    z = tuple(float(v) for v in np.atleast_1d(np.asarray(z, dtype=float)))
    if len(z) != spec.n:
        raise ValueError(f"z must have {spec.n} components")
    return z


def dispersion_curve(spec: ModelSpec, z_list, cells=None, tol: float = defaults.EIG_TOL) -> DispersionCurve:
    """One principal eigenvalue solve per ``z``; failures are recorded, not raised."""
    zs = [_as_z(spec, z) for z in z_list]
    if len(set(zs)) != len(zs):
        raise ValueError("z values must be distinct")

    def solve(z):
        try:
            return eigenvalue(spec, z, cells, tol), None
        except Exception as exc:  # noqa: BLE001 - recorded per point
            return None, f"{type(exc).__name__}: {exc}"

    out = parallel_map(solve, zs)
    failures = {i: msg for i, (_, msg) in enumerate(out) if msg}
    cells_used = cells if cells is not None else defaults.default_cells(spec)
    return DispersionCurve(zs, [lam for lam, _ in out], failures, spec.digest, (cells_used,))


def lambda_prime(spec: ModelSpec, cells=None, tol: float = defaults.EIG_TOL) -> float:
    return eigenvalue(spec, (0.0,) * spec.n, cells, tol)


def lambda_max(spec: ModelSpec, tol: float = defaults.LAMBDA_MAX_TOL, cells=None, max_sweeps: int = 50):
    """Maximize the concave map ``z -> lam(z)`` by coordinate golden-section sweeps.

    Returns ``(lambda1, z_max)``.
    """
    z = np.zeros(spec.n)
    step = 0.5
    best = eigenvalue(spec, tuple(z), cells)
    for _ in range(max_sweeps):
        start = z.copy()
        for a in range(spec.n):
            base = z.copy()

            def f(s, base=base, a=a):
                w = base.copy()
                w[a] += s
                return -eigenvalue(spec, tuple(w), cells)

            try:
                lo, hi, samples = bracket_minimum(f, 0.0, step, defaults.Z_BOUND - abs(base[a]))
            except BracketError:
                raise CoercivityError("coercivity not observed: no maximum of lambda within |z| <= 64") from None
            s, fs, _ = golden_section(f, lo, hi, tol / 10, samples)
            z[a] = base[a] + s
            best = -fs
        moved = float(np.max(np.abs(z - start)))
        if moved < tol:
            return best, tuple(float(v) for v in z)
        step = max(10 * tol, 2 * moved)
    return best, tuple(float(v) for v in z)


def _unit(spec: ModelSpec, e) -> np.ndarray:
    e = np.atleast_1d(np.asarray(e, dtype=float))
    if e.shape != (spec.n,):
        raise ValueError(f"direction must have {spec.n} components")
    norm = float(np.linalg.norm(e))
    if norm == 0:
        raise ValueError("direction must be nonzero")
    return e / norm


def speed_at_decay(spec: ModelSpec, e, mu: float, cells=None) -> float:
    """``c_mu(e) = lam(-mu e) / (-mu)``."""
    if not mu > 0:
        raise ValueError("decay rate mu must be positive")
    e = _unit(spec, e)
    return eigenvalue(spec, tuple(-mu * e), cells) / (-mu)


@dataclass
class CriticalSpeed:
    c_star: float
    mu_star: float
    curve: dict  # mu -> c_mu samples evaluated during the search

    def __iter__(self):
        return iter((self.c_star, self.mu_star))


def _require_negative_lambda1(spec, cells, lambda1):
    if lambda1 is None:
        lambda1, _ = lambda_max(spec, cells=cells)
    if lambda1 >= 0:
        raise NoCriticalSpeed(lambda1)
    return lambda1


def critical_speed(
    spec: ModelSpec,
    e,
    tol: float = defaults.SPEED_REL_TOL,
    cells=None,
    lambda1: float | None = None,
) -> CriticalSpeed:
    """``c_star(e)`` and its minimizing decay rate ``mu_star``.

    Unpacks as ``c_star, mu_star``; ``.curve`` keeps the sampled ``c_mu`` values.
    """
    _require_negative_lambda1(spec, cells, lambda1)
    e = _unit(spec, e)
    # search in log2(mu): c_mu is quasi-convex in mu, hence in log mu
    samples: dict = {}

    def f(k):
        return speed_at_decay(spec, e, 2.0**k, cells)

    ks = [-1, 0, 1]
    vals = {k: f(k) for k in ks}
    while True:
        kbest = min(vals, key=vals.get)
        lo, hi = min(vals), max(vals)
        if lo < kbest < hi:
            break
        if hi - lo > 60:
            raise BracketError("critical speed not bracketed for mu in [2^-30, 2^30]")
        k_new = lo - 1 if kbest == lo else hi + 1
        vals[k_new] = f(k_new)
    samples.update({float(k): v for k, v in vals.items()})
    ltol = tol / math.log(2)  # relative tolerance on mu as an absolute one on log2(mu)
    k_star, c_star, samples = golden_section(f, kbest - 1.0, kbest + 1.0, ltol, samples)
    curve = {2.0**k: v for k, v in sorted(samples.items())}
    return CriticalSpeed(c_star, 2.0**k_star, curve)


def decay_rates_for_speed(spec: ModelSpec, e, c: float, crit: CriticalSpeed | None = None, cells=None):
    """The two solutions ``mu1 < mu_star < mu2`` of ``c_mu(e) = c`` for ``c > c_star(e)``."""
    crit = crit or critical_speed(spec, e, cells=cells)
    if c <= crit.c_star:
        raise ValueError("speed must exceed the critical speed")

    def g(mu):
        return speed_at_decay(spec, e, mu, cells) - c

    lo = crit.mu_star
    while g(lo) < 0:
        lo /= 2
    hi = crit.mu_star
    while g(hi) < 0:
        hi *= 2
    mu1 = brentq(g, lo, crit.mu_star, xtol=1e-10)
    mu2 = brentq(g, crit.mu_star, hi, xtol=1e-10)
    return mu1, mu2


@dataclass
class SpeedReport:
    e: tuple
    mu_samples: list  # (mu, c_mu) pairs in direction e
    mu_star: float
    c_star: float
    fg_speed: float
    e_prime: tuple
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "e": list(self.e),
            "c_star": self.c_star,
            "mu_star": self.mu_star,
            "fg_speed": self.fg_speed,
            "e_prime": list(self.e_prime),
        }

    def curve_csv(self) -> str:
        return "mu,c_mu\n" + "".join(f"{mu!r},{c!r}\n" for mu, c in self.mu_samples)


def fg_speed(
    spec: ModelSpec,
    e,
    angular_steps: int = defaults.ANGULAR_STEPS,
    cells=None,
    cutoff: float = defaults.ANGLE_CUTOFF,
    lambda1: float | None = None,
) -> SpeedReport:
    """Freidlin-Gartner speed ``c_fg(e) = min_{e.e' > 0} c_star(e') / (e.e')``."""
    lambda1 = _require_negative_lambda1(spec, cells, lambda1)
    e = _unit(spec, e)
    crit = critical_speed(spec, e, cells=cells, lambda1=lambda1)
    base = dict(
        e=tuple(e),
        mu_samples=sorted(crit.curve.items()),
        mu_star=crit.mu_star,
        c_star=crit.c_star,
    )
    if spec.n == 1:
        return SpeedReport(**base, fg_speed=crit.c_star, e_prime=tuple(e), diagnostics={"lambda1": lambda1})
    if spec.n != 2:
        raise NotImplementedError("Freidlin-Gartner minimization is implemented for n <= 2")

    theta0 = math.atan2(e[1], e[0])
    half = math.pi / 2 - cutoff
    offsets = np.linspace(-half, half, angular_steps)
    cache: dict = {}

    def quotient(delta):
        if delta not in cache:
            ep = (math.cos(theta0 + delta), math.sin(theta0 + delta))
            cache[delta] = critical_speed(spec, ep, cells=cells, lambda1=lambda1).c_star / math.cos(delta)
        return cache[delta]

    values = parallel_map(quotient, list(offsets))
    k = int(np.argmin(values))
    lo = offsets[max(k - 1, 0)]
    hi = offsets[min(k + 1, len(offsets) - 1)]
    delta, c_fg, _ = golden_section(quotient, lo, hi, 1e-6, noise=1e-6)
    if values[k] < c_fg:
        delta, c_fg = offsets[k], values[k]
    e_prime = (math.cos(theta0 + delta), math.sin(theta0 + delta))
    return SpeedReport(
        **base,
        fg_speed=c_fg,
        e_prime=e_prime,
        diagnostics={"lambda1": lambda1, "angle_offset": delta, "angular_samples": len(offsets), "grid_argmin": int(k)},
    )
