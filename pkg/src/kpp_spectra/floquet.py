"""Generalized principal eigenvalues by power iteration on the period map.

For a shift ``z`` the linear flow ``dv/dt = G_z(t) v`` is integrated over one
period ``T`` (the monodromy map). Its dominant multiplier ``rho`` gives the
principal eigenvalue ``lambda_z = -ln(rho)/T``; the normalized dominant vector
is the periodic principal eigenfunction at ``t = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .grid import (
    DIRICHLET,
    PERIODIC,
    DiscreteOperator,
    Grid,
    Schedule,
    StateField,
    _heun_linear,
    cfl_dt,
    steps_for,
)
from .model import ModelSpec

DENSE_LIMIT = 2048  # largest state size for which the period map is formed as a dense matrix
BATCH_LIMIT = 1024  # same, for time-dependent models (identity propagated through all steps)


class ConvergenceError(RuntimeError):
    """Power iteration did not settle; carries the last two growth factors."""

    def __init__(self, message: str, last_rhos=()):
        super().__init__(f"{message}; last growth factors {tuple(last_rhos)}")
        self.last_rhos = tuple(last_rhos)


@dataclass
class EigResult:
    z: tuple
    lam: float
    growth_factor: float
    eigenfunction: StateField
    residual: float
    iterations: int
    steps_per_period: int

    @property
    def lambda_(self) -> float:
        return self.lam

    def to_dict(self) -> dict:
        return {
            "z": list(self.z),
            "lambda": self.lam,
            "residual": self.residual,
            "iterations": self.iterations,
        }


class PeriodMap:
    """Time-T solution operator of the shifted linear flow."""

    def __init__(self, spec: ModelSpec, grid: Grid, z=None, steps: int | None = None, safety: float = 0.4):
        self.spec, self.grid = spec, grid
        self.op = DiscreteOperator(spec, grid, tuple(z) if z is not None else ())
        self.z = self.op.z
        self.steps = steps if steps is not None else steps_for(spec.T, cfl_dt(spec, grid, self.z, safety))
        self.dt = spec.T / self.steps
        self.shape = (spec.N,) + grid.shape
        self.schedule = Schedule(spec, grid, self.z, self.dt)
        self._dense = None
        size = self.op.size
        if spec.autonomous and size <= DENSE_LIMIT:
            G = self.schedule.at_step(0)[0].toarray()
            S = np.eye(size) + self.dt * G + 0.5 * self.dt**2 * (G @ G)
            self._dense = np.linalg.matrix_power(S, self.steps)
        elif not spec.autonomous and size <= BATCH_LIMIT:
            self._dense = self._propagate(np.eye(size))

    def _propagate(self, u: np.ndarray) -> np.ndarray:
        if u.ndim == 2 and u.shape[0] <= BATCH_LIMIT:
            # dense steps: sparse @ dense has a large fixed cost per call
            dt = self.dt
            for k in range(self.steps):
                G0 = self.schedule.at_step(k)[0].toarray()
                G1 = self.schedule.at_step(k + 1)[0].toarray()
                k1 = G0 @ u
                u = u + 0.5 * dt * (k1 + G1 @ (u + dt * k1))
            return u
        for k in range(self.steps):
            G0 = self.schedule.at_step(k)[0]
            G1 = self.schedule.at_step(k + 1)[0]
            u = _heun_linear(G0, G1, u, self.dt)
        return u

    @property
    def matrix(self) -> np.ndarray | None:
        return self._dense

    def apply_flat(self, u: np.ndarray) -> np.ndarray:
        if self._dense is not None:
            return self._dense @ u
        return self._propagate(u)

    def __call__(self, u) -> StateField:
        vals = np.asarray(getattr(u, "values", u), dtype=float)
        if vals.shape != self.shape:
            raise ValueError(f"state shape {vals.shape} does not match {self.shape}")
        return StateField(self.apply_flat(vals.ravel()).reshape(self.shape))


def monodromy_apply(spec: ModelSpec, grid: Grid, z, u, bc: str | None = None) -> StateField:
    """Solution at time T of the shifted linear flow started from ``u``."""
    if bc is not None and bc != grid.kind:
        raise ValueError(f"boundary condition {bc!r} does not match grid kind {grid.kind!r}")
    vals = np.asarray(getattr(u, "values", u), dtype=float)
    if np.any(vals < 0) or not np.any(vals > 0):
        raise ValueError("monodromy_apply expects a nonnegative, nonzero state")
    return PeriodMap(spec, grid, z)(vals)


def _aitken(seq: list) -> float | None:
    if len(seq) < 3:
        return None
    a, b, c = seq[-3:]
    d1, d2 = b - a, c - b
    if d1 == 0 or d2 == 0 or (d1 > 0) != (d2 > 0) or abs(d2) >= abs(d1):
        return None
    denom = d2 - d1
    return c - d2 * d2 / denom


def power_iteration(pmap: PeriodMap, tol: float = 1e-10, max_iter: int = 500, u0=None):
    """Dominant multiplier of a positive period map.

    Returns ``(log_rho, vector, residual, iterations)`` with the vector
    normalized to max entry 1.
    """
    u = np.ones(pmap.op.size) if u0 is None else np.asarray(u0, dtype=float).ravel().copy()
    u = u / np.max(u)
    logs: list = []
    rhos: list = []
    vec_tol = math.sqrt(tol)
    for k in range(1, max_iter + 1):
        v = pmap.apply_flat(u)
        rho = float(np.max(v))
        if not rho > 0 or not math.isfinite(rho):
            raise ConvergenceError("period map lost positivity", rhos[-2:] + [rho])
        v = v / rho
        # a flat ln(rho) alone can be transient (e.g. the far field of a large box)
        moved = float(np.max(np.abs(v - u)))
        u = v
        rhos.append(rho)
        logs.append(math.log(rho))
        if len(logs) >= 2:
            resid = abs(logs[-1] - logs[-2])
            if resid <= tol and moved <= vec_tol:
                est = _aitken(logs)
                return (logs[-1] if est is None else est), u, resid, k
    raise ConvergenceError(f"no convergence in {max_iter} iterations", rhos[-2:])


def principal_eigenvalue(
    spec: ModelSpec,
    grid: Grid,
    z=None,
    tol: float = 1e-10,
    max_iter: int = 500,
    bc: str | None = None,
    steps: int | None = None,
) -> EigResult:
    """Principal eigenvalue ``lambda_{1,z}`` and its positive eigenfunction."""
    if bc is not None and bc != grid.kind:
        raise ValueError(f"boundary condition {bc!r} does not match grid kind {grid.kind!r}")
    pmap = PeriodMap(spec, grid, z, steps=steps)
    log_rho, u, resid, it = power_iteration(pmap, tol, max_iter)
    ef = u.reshape(pmap.shape)
    ef = ef / np.max(ef)
    return EigResult(
        z=pmap.z,
        lam=-log_rho / spec.T,
        growth_factor=math.exp(log_rho),
        eigenfunction=StateField(ef),
        residual=resid,
        iterations=it,
        steps_per_period=pmap.steps,
    )


@lru_cache(maxsize=4096)
def _cached_lambda(spec: ModelSpec, cells: tuple, z: tuple, tol: float, max_iter: int) -> float:
    grid = Grid.periodic_cell(spec, cells)
    return principal_eigenvalue(spec, grid, z, tol=tol, max_iter=max_iter).lam


def eigenvalue(spec: ModelSpec, z, cells=None, tol: float = 1e-10, max_iter: int = 500) -> float:
    """Memoized ``lambda_{1,z}`` on the periodic cell (``cells`` per axis)."""
    from .defaults import default_cells

    cells = default_cells(spec) if cells is None else cells
    cells = (int(cells),) * spec.n if np.ndim(cells) == 0 else tuple(int(c) for c in cells)
    z = tuple(float(v) for v in np.atleast_1d(np.asarray(z, dtype=float)))
    return _cached_lambda(spec, cells, z, float(tol), int(max_iter))


def dirichlet_principal_eigenvalue(
    spec: ModelSpec,
    R: float,
    resolution: float = 8.0,
    tol: float = 1e-10,
    max_iter: int = 20000,
    steps: int | None = None,
) -> float:
    """Principal eigenvalue of the unshifted problem on the box ``[-R, R]^n`` with zero boundary values.

    ``resolution`` is the number of cells per unit length.
    """
    cells = max(2, int(round(2 * R * resolution)))
    grid = Grid.box([(-R, R)] * spec.n, cells)
    pmap = PeriodMap(spec, grid, None, steps=steps)
    log_rho, _, _, _ = power_iteration(pmap, tol, max_iter, u0=np.ones(pmap.op.size))
    return -log_rho / spec.T
