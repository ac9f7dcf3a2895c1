"""Finite-difference discretization of the shifted parabolic operators.

Points are node based. On a periodic cell with ``m`` cells along an axis the
points are ``x_j = j*h`` for ``j = 0..m-1`` with ``h = L/m``. On a truncated
box ``[a, b]`` with ``m`` cells the points are ``a + j*h`` for ``j = 0..m``;
the two end nodes carry the homogeneous Dirichlet condition and stay zero.

The generator ``G(t)`` of ``dv/dt = G(t) v`` for component ``i`` reads::

    div(A_i grad v) - q_i.grad v + 2 (A_i z).grad v
        + (z.A_i z - q_i.z + div(A_i z)) v + (L v)_i

which is the linearization at zero after the exponential shift by ``z``.
"""

from __future__ import annotations

import math
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .model import ModelSpec, coefficient_bounds, lattice, sample_fields

PERIODIC = "periodic"
DIRICHLET = "dirichlet"


class CFLViolation(ValueError):
    def __init__(self, dt: float, required: float):
        super().__init__(f"time step {dt:.6g} exceeds the stability bound; need dt <= {required:.6g}")
        self.dt = dt
        self.required = required


class SimulationError(RuntimeError):
    """Non-finite values or blow-up during time stepping."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


# --- grids -----------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    n: int
    cells: tuple
    lower: tuple
    upper: tuple
    kind: str = PERIODIC

    def __post_init__(self):
        if len(self.cells) != self.n or len(self.lower) != self.n or len(self.upper) != self.n:
            raise ValueError("grid axes do not match n")
        if any(c < 1 for c in self.cells) or any(u <= l for l, u in zip(self.lower, self.upper)):
            raise ValueError("cells must be positive and extents nonempty")
        if self.kind not in (PERIODIC, DIRICHLET):
            raise ValueError(f"unknown grid kind {self.kind!r}")
        if self.kind == DIRICHLET and any(c < 2 for c in self.cells):
            raise ValueError("a truncated box needs at least 2 cells per axis")

    @classmethod
    def periodic_cell(cls, spec: ModelSpec, cells) -> "Grid":
        cells = (int(cells),) * spec.n if np.ndim(cells) == 0 else tuple(int(c) for c in cells)
        return cls(spec.n, cells, (0.0,) * spec.n, tuple(spec.L), PERIODIC)

    @classmethod
    def box(cls, extents: Sequence[Sequence[float]], cells) -> "Grid":
        extents = [tuple(map(float, e)) for e in extents]
        n = len(extents)
        cells = (int(cells),) * n if np.ndim(cells) == 0 else tuple(int(c) for c in cells)
        return cls(n, cells, tuple(e[0] for e in extents), tuple(e[1] for e in extents), DIRICHLET)

    @property
    def h(self) -> tuple:
        return tuple((u - l) / c for l, u, c in zip(self.lower, self.upper, self.cells))

    @property
    def shape(self) -> tuple:
        if self.kind == PERIODIC:
            return tuple(self.cells)
        return tuple(c + 1 for c in self.cells)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def axis(self, a: int) -> np.ndarray:
        return self.lower[a] + self.h[a] * np.arange(self.shape[a])

    def coords(self) -> list:
        return np.meshgrid(*[self.axis(a) for a in range(self.n)], indexing="ij")

    def interior_mask(self, margin: int = 1) -> np.ndarray:
        """Points at least ``margin`` nodes away from the Dirichlet boundary."""
        mask = np.ones(self.shape, dtype=bool)
        if self.kind == DIRICHLET:
            for a in range(self.n):
                idx = [slice(None)] * self.n
                idx[a] = slice(0, margin)
                mask[tuple(idx)] = False
                idx[a] = slice(self.shape[a] - margin, None)
                mask[tuple(idx)] = False
        return mask

    def ball_mask(self, radius: float, center=None) -> np.ndarray:
        center = np.zeros(self.n) if center is None else np.asarray(center, dtype=float)
        r2 = sum((X - c) ** 2 for X, c in zip(self.coords(), center))
        return r2 <= radius**2 + 1e-12

    def check_periodic_for(self, spec: ModelSpec) -> None:
        if self.kind != PERIODIC:
            return
        for a in range(self.n):
            if abs((self.upper[a] - self.lower[a]) - spec.L[a]) > 1e-12 * spec.L[a]:
                raise ValueError(f"periodic-cell axis {a} has length {self.upper[a] - self.lower[a]} != L = {spec.L[a]}")


@dataclass
class StateField:
    """``N`` components sampled on a grid; ``values`` has shape ``(N, *grid.shape)``."""

    values: np.ndarray
    nonneg: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("state field has non-finite entries")
        if self.nonneg and np.any(self.values < 0):
            raise ValueError("state field flagged nonnegative has negative entries")

    @property
    def N(self) -> int:
        return self.values.shape[0]

    def sup(self) -> float:
        return float(np.max(self.values))


_COEFF_CACHE: "OrderedDict" = OrderedDict()
_COEFF_BUDGET = 4_000_000  # floats kept across calls; sampling dominates repeated period maps
_coeff_used = 0


def sample_coefficients(spec: ModelSpec, grid: Grid, t: float) -> dict:
    """Cached :func:`_sample_coefficients`; the returned arrays must not be modified."""
    global _coeff_used
    key = (spec, grid, float(t))
    hit = _COEFF_CACHE.get(key)
    if hit is not None:
        _COEFF_CACHE.move_to_end(key)
        return hit
    f = _sample_coefficients(spec, grid, t)
    cost = sum(np.size(v) for k, v in f.items() if k != "A_faces") + sum(np.size(v) for v in f["A_faces"])
    if cost <= _COEFF_BUDGET // 8:
        _COEFF_CACHE[key] = f
        _coeff_used += cost
        while _coeff_used > _COEFF_BUDGET:
            _, old = _COEFF_CACHE.popitem(last=False)
            _coeff_used -= sum(np.size(v) for k, v in old.items() if k != "A_faces") + sum(np.size(v) for v in old["A_faces"])
    return f


def _sample_coefficients(spec: ModelSpec, grid: Grid, t: float) -> dict:
    """Coefficient arrays at time ``t`` on ``grid``.

    Keys ``A``, ``q``, ``Lmat``, ``Cmat`` hold point samples; ``A_faces[a]`` holds
    arithmetic face averages of ``A[:, a, a]`` between neighbours along axis a
    (face ``j`` sits between points ``j`` and ``j+1``, wrapping on periodic cells).
    """
    grid.check_periodic_for(spec)
    f = sample_fields(spec, t, grid.coords())
    faces = []
    for a in range(grid.n):
        Aaa = f["A"][:, a, a]
        if grid.kind == PERIODIC:
            faces.append(0.5 * (Aaa + np.roll(Aaa, -1, axis=1 + a)))
        else:
            lo = [slice(None)] * (grid.n + 1)
            hi = [slice(None)] * (grid.n + 1)
            lo[1 + a] = slice(0, -1)
            hi[1 + a] = slice(1, None)
            faces.append(0.5 * (Aaa[tuple(lo)] + Aaa[tuple(hi)]))
    f["A_faces"] = faces
    return f


# --- sparse building blocks ------------------------------------------------


def _forward_1d(m_pts: int, h: float, periodic: bool) -> sp.csr_matrix:
    # (u_{j+1} - u_j)/h, one row per face
    if periodic and m_pts == 1:
        return sp.csr_matrix((1, 1))
    if periodic:
        D = sp.diags([-np.ones(m_pts), np.ones(m_pts - 1)], [0, 1], shape=(m_pts, m_pts), format="lil")
        D[m_pts - 1, 0] += 1.0
        return (D.tocsr()) / h
    return sp.diags([-np.ones(m_pts - 1), np.ones(m_pts - 1)], [0, 1], shape=(m_pts - 1, m_pts), format="csr") / h


def _central_1d(m_pts: int, h: float, periodic: bool) -> sp.csr_matrix:
    # (u_{j+1} - u_{j-1})/(2h)
    if m_pts == 1:
        return sp.csr_matrix((1, 1))
    D = sp.diags([-np.ones(m_pts - 1), np.ones(m_pts - 1)], [-1, 1], shape=(m_pts, m_pts), format="lil")
    if periodic and m_pts > 2:
        D[0, m_pts - 1] += -1.0
        D[m_pts - 1, 0] += 1.0
    elif periodic:
        D = sp.lil_matrix((m_pts, m_pts))
    return D.tocsr() / (2 * h)


def _lift(M1: sp.spmatrix, a: int, shape: tuple) -> sp.csr_matrix:
    """Act with a 1D operator along axis ``a`` of a row-major array of ``shape``."""
    ops = [sp.identity(s, format="csr") for s in shape]
    ops[a] = M1
    out = ops[0]
    for o in ops[1:]:
        out = sp.kron(out, o, format="csr")
    return out.tocsr()


class _Stencils:
    """Constant difference operators for one grid (cached per grid)."""

    _cache: dict = {}

    def __init__(self, grid: Grid):
        periodic = grid.kind == PERIODIC
        self.forward = []
        self.central = []
        for a in range(grid.n):
            m = grid.shape[a]
            # face count along a differs on boxes (m - 1 faces for m points)
            self.forward.append(_lift(_forward_1d(m, grid.h[a], periodic), a, grid.shape))
            self.central.append(_lift(_central_1d(m, grid.h[a], periodic), a, grid.shape))
        self.interior = grid.interior_mask(1).ravel()

    @classmethod
    def get(cls, grid: Grid) -> "_Stencils":
        st = cls._cache.get(grid)
        if st is None:
            st = cls._cache[grid] = cls(grid)
        return st


@dataclass(frozen=True)
class DiscreteOperator:
    """The shifted generator ``G(t)`` of a model on a grid."""

    spec: ModelSpec
    grid: Grid
    z: tuple = ()
    t: float = 0.0

    def __post_init__(self):
        z = tuple(float(v) for v in self.z) if len(self.z) else (0.0,) * self.spec.n
        if len(z) != self.spec.n:
            raise ValueError(f"shift z must have {self.spec.n} components")
        object.__setattr__(self, "z", z)
        if self.grid.n != self.spec.n:
            raise ValueError("grid dimension does not match the model")
        if self.grid.kind == DIRICHLET and any(self.z):
            raise ValueError("the exponential shift z is only defined on periodic cells")
        self.grid.check_periodic_for(self.spec)

    @property
    def bc(self) -> str:
        return self.grid.kind

    @property
    def size(self) -> int:
        return self.spec.N * self.grid.size

    def at(self, t: float) -> "DiscreteOperator":
        return DiscreteOperator(self.spec, self.grid, self.z, t)

    def matrix(self, t: float | None = None) -> sp.csr_matrix:
        t = self.t if t is None else t
        return assemble_generator(self.spec, self.grid, self.z, t)


def _triples(S1: sp.spmatrix, S2: sp.spmatrix):
    """Index form of ``S1 @ diag(c) @ S2``: entry (r, k) collects ``w * c[m]``."""
    A = sp.csc_matrix(S1)
    B = sp.csr_matrix(S2)
    rows, cols, mids, w = [], [], [], []
    for m in range(A.shape[1]):
        r = A.indices[A.indptr[m] : A.indptr[m + 1]]
        v1 = A.data[A.indptr[m] : A.indptr[m + 1]]
        k = B.indices[B.indptr[m] : B.indptr[m + 1]]
        v2 = B.data[B.indptr[m] : B.indptr[m + 1]]
        if r.size == 0 or k.size == 0:
            continue
        rows.append(np.repeat(r, k.size))
        cols.append(np.tile(k, r.size))
        mids.append(np.full(r.size * k.size, m))
        w.append(np.outer(v1, v2).ravel())
    if not rows:
        e = np.zeros(0, dtype=np.int64)
        return e, e, e, np.zeros(0)
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(mids), np.concatenate(w)


class _Template:
    """Sparsity patterns of every generator term on one grid, cached."""

    _cache: dict = {}

    def __init__(self, grid: Grid):
        st = _Stencils.get(grid)
        P = grid.size
        eye = sp.identity(P, format="csr")
        self.P = P
        self.diffusion = [_triples(-st.forward[a].T, st.forward[a]) for a in range(grid.n)]
        self.drift = [_triples(eye, st.central[a]) for a in range(grid.n)]
        self.cross = {}
        for a in range(grid.n):
            for b in range(a + 1, grid.n):
                parts = [_triples(st.central[a], st.central[b]), _triples(st.central[b], st.central[a])]
                self.cross[a, b] = tuple(np.concatenate(x) for x in zip(*parts))
        self.central = st.central
        self.interior = st.interior

    @classmethod
    def get(cls, grid: Grid) -> "_Template":
        tpl = cls._cache.get(grid)
        if tpl is None:
            tpl = cls._cache[grid] = cls(grid)
        return tpl


def assemble_generator(spec: ModelSpec, grid: Grid, z: Sequence[float], t: float) -> sp.csr_matrix:
    """Sparse matrix of ``G(t)`` acting on the flattened ``(N, *grid.shape)`` state."""
    tpl = _Template.get(grid)
    f = sample_coefficients(spec, grid, t)
    N, n, P = spec.N, spec.n, grid.size
    z = np.asarray(z, dtype=float)
    diag_idx = np.arange(P)
    R, Cc, D = [], [], []

    def add(rows, cols, data, i, j):
        R.append(rows + i * P)
        Cc.append(cols + j * P)
        D.append(data)

    for i in range(N):
        A = f["A"][i].reshape(n, n, P)
        q = f["q"][i].reshape(n, P)
        Az = np.einsum("abp,b->ap", A, z)
        for a in range(n):
            r, c, m, w = tpl.diffusion[a]
            add(r, c, w * f["A_faces"][a][i].ravel()[m], i, i)
            drift = 2.0 * Az[a] - q[a]
            if np.any(drift != 0):
                r, c, m, w = tpl.drift[a]
                add(r, c, w * drift[m], i, i)
            for b in range(a + 1, n):
                Aab = A[a, b]
                if np.any(Aab != 0):
                    r, c, m, w = tpl.cross[a, b]
                    add(r, c, w * Aab[m], i, i)
        zero_order = np.einsum("a,ap->p", z, Az) - np.einsum("ap,a->p", q, z)
        for a in range(n):
            if np.any(Az[a] != 0):
                zero_order = zero_order + tpl.central[a] @ Az[a]
        add(diag_idx, diag_idx, zero_order + f["Lmat"][i, i].ravel(), i, i)
        for j in range(N):
            if j != i:
                add(diag_idx, diag_idx, f["Lmat"][i, j].ravel(), i, j)
    rows = np.concatenate(R)
    cols = np.concatenate(Cc)
    data = np.concatenate(D)
    if grid.kind == DIRICHLET:
        keep = np.tile(tpl.interior, N)
        data = data * (keep[rows] & keep[cols])
    G = sp.csr_matrix((data, (rows, cols)), shape=(N * P, N * P))
    G.sum_duplicates()
    G.eliminate_zeros()
    return G


def apply_generator(op: DiscreteOperator, u, t: float | None = None) -> StateField:
    """Spatial action ``G(t) u``."""
    vals = np.asarray(getattr(u, "values", u), dtype=float)
    shape = (op.spec.N,) + op.grid.shape
    if vals.shape != shape:
        raise ValueError(f"state shape {vals.shape} does not match operator shape {shape}")
    return StateField((op.matrix(t) @ vals.ravel()).reshape(shape))


# --- reactions -------------------------------------------------------------


@dataclass(frozen=True)
class Reaction:
    """Nonlinear part added to the linear generator.

    ``kpp``: ``-(C u) o u``; ``coop_power``: ``-D u^(1+p)``;
    ``coop_quadratic``: ``-D u^2``; ``linear``: none.
    """

    kind: str = "kpp"
    D: float = 1.0
    p: float = 0.5

    def __post_init__(self):
        if self.kind not in ("kpp", "coop_power", "coop_quadratic", "linear"):
            raise ValueError(f"unknown reaction {self.kind!r}")
        if self.kind == "coop_power" and not 0 < self.p < 1:
            raise ValueError("coop_power exponent p must lie in (0, 1)")
        if self.kind in ("coop_power", "coop_quadratic") and self.D < 0:
            raise ValueError("reaction coefficient D must be nonnegative")

    @classmethod
    def parse(cls, text: str) -> "Reaction":
        """``kpp``, ``linear``, ``coop_power:D,p`` or ``coop_quadratic:D``."""
        name, _, args = text.partition(":")
        vals = [float(v) for v in args.split(",") if v.strip()]
        if name == "coop_power":
            return cls(name, *(vals or [1.0, 0.5]))
        if name == "coop_quadratic":
            return cls(name, *(vals or [1.0]))
        return cls(name)

    @property
    def cooperative(self) -> bool:
        return self.kind != "kpp"

    def rate_bound(self, spec: ModelSpec, sup: float, C_over=None) -> float:
        """Bound on the diagonal Jacobian magnitude of the nonlinear term for states in [0, sup]."""
        sup = max(float(sup), 0.0)
        if self.kind == "kpp":
            if C_over is None:
                C_over = coefficient_bounds(spec)["C_over"]
            c = float(np.max(np.abs(C_over)))
            return c * (spec.N + 1) * sup
        if self.kind == "coop_power":
            return self.D * (1 + self.p) * sup**self.p
        if self.kind == "coop_quadratic":
            return 2 * self.D * sup
        return 0.0

    def __call__(self, u: np.ndarray, C: np.ndarray | None) -> np.ndarray:
        if self.kind == "kpp":
            return -np.einsum("ij...,j...->i...", C, u) * u
        if self.kind == "coop_power":
            return -self.D * np.power(np.maximum(u, 0.0), 1 + self.p)
        if self.kind == "coop_quadratic":
            return -self.D * u * u
        return np.zeros_like(u)


# --- time step -------------------------------------------------------------


def linear_rate_bound(spec: ModelSpec, grid: Grid, z, samples_per_period: int = 32) -> dict:
    """Lattice maxima of the terms entering the CFL bound."""
    z = np.zeros(spec.n) if z is None or len(z) == 0 else np.asarray(z, dtype=float)
    if spec.autonomous:
        ts = np.zeros(1)
    else:
        t, _ = lattice(spec, samples_per_period)
        ts = np.unique(t)
    X = grid.coords()
    diff = np.zeros(spec.n)
    adv = np.zeros(spec.n)
    react = 0.0
    for tk in ts:
        f = sample_fields(spec, tk, X)
        A, q = f["A"], f["q"]
        Az = np.einsum("iab...,b->ia...", A, z)
        for a in range(spec.n):
            diff[a] = max(diff[a], float(np.max(A[:, a, a])))
            adv[a] = max(adv[a], float(np.max(np.abs(q[:, a] - 2 * Az[:, a]))))
        zero = np.einsum("a,ia...->i...", z, Az) - np.einsum("ia...,a->i...", q, z)
        if grid.kind == PERIODIC and np.any(z):
            for a in range(spec.n):
                h = grid.h[a]
                zero = zero + (np.roll(Az[:, a], -1, axis=1 + a) - np.roll(Az[:, a], 1, axis=1 + a)) / (2 * h)
        rows = np.abs(f["Lmat"]).sum(axis=1)
        react = max(react, float(np.max(rows + np.abs(zero))))
    return {"diffusion": diff, "advection": adv, "reaction": react}


def cfl_dt(
    spec: ModelSpec,
    grid: Grid,
    z=None,
    safety: float = 0.4,
    reaction_bound: float = 0.0,
    samples_per_period: int = 32,
) -> float:
    """Largest stable explicit time step (times ``safety``)."""
    if not 0 < safety <= 1:
        raise ValueError("safety must lie in (0, 1]")
    b = linear_rate_bound(spec, grid, z, samples_per_period)
    h = np.asarray(grid.h)
    denom = float(np.sum(2 * b["diffusion"] / h**2) + np.sum(b["advection"] / h) + b["reaction"] + reaction_bound)
    if denom <= 0:
        return math.inf
    return safety / denom


def steps_for(duration: float, dt_max: float) -> int:
    """Number of equal steps so that ``duration`` is hit exactly with ``dt <= dt_max``."""
    if not math.isfinite(dt_max):
        return 1
    return max(1, math.ceil(duration / dt_max - 1e-9))


def cell_peclet(spec: ModelSpec, grid: Grid, z=None) -> float:
    b = linear_rate_bound(spec, grid, z, 8)
    h = np.asarray(grid.h)
    return float(np.max(b["advection"] * h / (2 * np.maximum(b["diffusion"], 1e-300))))


class Schedule:
    """Generator matrices (and competition samples) along a uniform time grid.

    For periodic-in-time models with ``dt = T/m`` the matrices repeat, so they
    are cached by step index modulo ``m``.
    """

    def __init__(self, spec: ModelSpec, grid: Grid, z, dt: float, need_C: bool = False, cache_limit: int = 20000):
        self.spec, self.grid, self.dt = spec, grid, dt
        self.z = tuple(z) if z is not None and len(z) else (0.0,) * spec.n
        self.need_C = need_C
        self.autonomous = spec.autonomous
        m = spec.T / dt
        self.period_steps = int(round(m)) if abs(m - round(m)) < 1e-9 * max(1.0, m) else None
        self.cache_limit = cache_limit
        self._cache: dict = {}

    def _key(self, k: int):
        if self.autonomous:
            return 0
        if self.period_steps is not None:
            return k % self.period_steps
        return None

    def at_step(self, k: int):
        """``(G, C)`` at time ``k*dt``."""
        key = self._key(k)
        hit = self._cache.get(key) if key is not None else None
        if hit is not None:
            return hit
        t = k * self.dt if key is None else key * self.dt
        G = assemble_generator(self.spec, self.grid, self.z, t)
        C = None
        if self.need_C:
            C = sample_fields(self.spec, t, self.grid.coords())["Cmat"]
        out = (G, C)
        if key is not None and len(self._cache) < self.cache_limit:
            self._cache[key] = out
        return out


def _heun_linear(G0, G1, u: np.ndarray, dt: float) -> np.ndarray:
    k1 = G0 @ u
    k2 = G1 @ (u + dt * k1)
    return u + 0.5 * dt * (k1 + k2)


def step_linear(op: DiscreteOperator, u, t: float, dt: float, dt_max: float | None = None) -> StateField:
    """One Heun step of ``dv/dt = G(t) v``; refuses steps above the CFL bound."""
    required = cfl_dt(op.spec, op.grid, op.z, safety=1.0) if dt_max is None else dt_max
    if dt > required * (1 + 1e-12):
        raise CFLViolation(dt, required)
    vals = np.asarray(getattr(u, "values", u), dtype=float)
    out = _heun_linear(op.matrix(t), op.matrix(t + dt), vals.ravel(), dt)
    return StateField(out.reshape(vals.shape))


@dataclass
class StepInfo:
    clipped: float = 0.0  # total magnitude removed by clipping at zero
    clipped_max: float = 0.0  # largest single-step clip


def heun_semilinear(G0, G1, C0, C1, u: np.ndarray, dt: float, reaction: Reaction, shape, info: StepInfo | None = None):
    """Heun step of ``dv/dt = G v + R(v)`` on flattened arrays, clipping at zero after each stage."""
    uf = u.reshape(shape)
    k1 = (G0 @ u).reshape(shape) + reaction(uf, C0)
    u1 = uf + dt * k1
    clip = float(-np.minimum(u1, 0.0).sum())
    u1 = np.maximum(u1, 0.0)
    k2 = (G1 @ u1.reshape(u.shape)).reshape(shape) + reaction(u1, C1)
    out = uf + 0.5 * dt * (k1 + k2)
    clip2 = float(-np.minimum(out, 0.0).sum())
    out = np.maximum(out, 0.0)
    if info is not None:
        info.clipped += clip + clip2
        info.clipped_max = max(info.clipped_max, clip + clip2)
    return out


def step_semilinear(
    spec: ModelSpec,
    grid: Grid,
    u,
    t: float,
    dt: float,
    reaction: Reaction | str = "kpp",
    info: StepInfo | None = None,
) -> StateField:
    """One Heun step of the semilinear system with the given reaction, clipped at zero."""
    if isinstance(reaction, str):
        reaction = Reaction.parse(reaction)
    vals = np.asarray(getattr(u, "values", u), dtype=float)
    if reaction.kind == "kpp" and np.any(vals < 0):
        raise ValueError("kpp stepping requires a nonnegative state")
    sup = float(np.max(np.abs(vals))) if vals.size else 0.0
    bound = cfl_dt(spec, grid, None, safety=1.0, reaction_bound=reaction.rate_bound(spec, 2 * sup + 1e-300))
    if dt > bound * (1 + 1e-12):
        raise CFLViolation(dt, bound)
    zero = (0.0,) * spec.n
    G0 = assemble_generator(spec, grid, zero, t)
    G1 = assemble_generator(spec, grid, zero, t + dt)
    C0 = C1 = None
    if reaction.kind == "kpp":
        X = grid.coords()
        C0 = sample_fields(spec, t, X)["Cmat"]
        C1 = sample_fields(spec, t + dt, X)["Cmat"]
    out = heun_semilinear(G0, G1, C0, C1, vals.ravel(), dt, reaction, vals.shape, info)
    if not np.all(np.isfinite(out)):
        raise SimulationError("non-finite values after semilinear step", 0)
    return StateField(out, nonneg=True)


# --- serialization ---------------------------------------------------------

MAGIC = b"KPPF"
VERSION = 1


def write_field(path, field_: StateField | np.ndarray) -> None:
    """Binary format: magic, u32 version, u32 N, u32 n, u32 cells per axis, then float64 row-major."""
    vals = np.ascontiguousarray(getattr(field_, "values", field_), dtype="<f8")
    N, spatial = vals.shape[0], vals.shape[1:]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", VERSION, N, len(spatial)))
        fh.write(struct.pack(f"<{len(spatial)}I", *spatial))
        fh.write(vals.tobytes())


def read_field(path) -> StateField:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a KPPF state file")
    version, N, n = struct.unpack_from("<III", data, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    spatial = struct.unpack_from(f"<{n}I", data, 16)
    offset = 16 + 4 * n
    count = N * int(np.prod(spatial))
    vals = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape((N,) + tuple(spatial))
    if len(data) != offset + 8 * count:
        raise ValueError(f"{path}: truncated or oversized payload")
    return StateField(vals.copy())


def write_csv_1d(path, grid: Grid, field_: StateField | np.ndarray) -> None:
    vals = np.asarray(getattr(field_, "values", field_))
    if grid.n != 1:
        raise ValueError("CSV export is for 1D slices")
    x = grid.axis(0)
    with open(path, "w") as fh:
        fh.write("x," + ",".join(f"u{i + 1}" for i in range(vals.shape[0])) + "\n")
        for j, xj in enumerate(x):
            fh.write(f"{xj!r}," + ",".join(repr(float(v)) for v in vals[:, j]) + "\n")
