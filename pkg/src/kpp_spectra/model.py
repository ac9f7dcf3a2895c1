"""Problem description for periodic KPP systems and the standing assumptions.

A :class:`ModelSpec` holds the number of components ``N``, the spatial
dimension ``n``, the periods ``T`` and ``L``, and coefficient fields as
compiled expressions:

* ``A[i]``  -- symmetric n x n diffusion matrix of component i,
* ``q[i]``  -- advection vector of component i,
* ``Lmat``  -- N x N linear coupling (growth and mutation) matrix,
* ``Cmat``  -- N x N competition matrix.

The evolution is ``du_i/dt = div(A_i grad u_i) - q_i . grad u_i + (L u)_i - u_i (C u)_i``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from . import exprlang
from .exprlang import Expr

BUNDLED_MODELS = (
    "scalar-advection",
    "scalar-homogeneous",
    "scalar-advection-homogeneous",
    "scalar-extinction",
    "elliott-cornell",
    "two-morph-periodic",
    "symmetric-pair",
    "symmetric-pair-perturbed",
    "isotropic-2d",
    "reducible",
)


class ModelError(ValueError):
    """Malformed model description."""


@dataclass(frozen=True, eq=False)
class ModelSpec:
    N: int
    n: int
    T: float
    L: tuple
    A: tuple  # A[i][a][b], mirrored from the upper triangle
    q: tuple  # q[i][a]
    Lmat: tuple  # Lmat[i][j]
    Cmat: tuple  # Cmat[i][j]
    params: Mapping[str, float] = field(default_factory=dict)
    name: str = ""
    source: Mapping[str, Any] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.N < 1 or self.n < 1:
            raise ModelError("N and n must be positive integers")
        if not self.T > 0:
            raise ModelError("time period T must be positive")
        if len(self.L) != self.n or not all(La > 0 for La in self.L):
            raise ModelError(f"L must hold {self.n} positive periods")

    @property
    def env(self) -> dict:
        env = {"T": self.T, **{f"L{a + 1}": La for a, La in enumerate(self.L)}}
        env.update(self.params)
        return env

    def expressions(self):
        """Yield ``(label, Expr)`` for every coefficient expression."""
        for i in range(self.N):
            for a in range(self.n):
                for b in range(a, self.n):
                    yield f"A[{i}][{a}][{b}]", self.A[i][a][b]
            for a in range(self.n):
                yield f"q[{i}][{a}]", self.q[i][a]
        for i in range(self.N):
            for j in range(self.N):
                yield f"Lmat[{i}][{j}]", self.Lmat[i][j]
        for i in range(self.N):
            for j in range(self.N):
                yield f"Cmat[{i}][{j}]", self.Cmat[i][j]

    @property
    def autonomous(self) -> bool:
        """No coefficient depends on time."""
        return not any(e.depends_on_t for _, e in self.expressions())

    @property
    def homogeneous(self) -> bool:
        """No coefficient depends on time or space."""
        return all(e.is_constant for _, e in self.expressions())

    @property
    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_dict(self) -> dict:
        def s(e: Expr) -> str:
            return e.text

        return {
            "N": self.N,
            "n": self.n,
            "T": self.T,
            "L": list(self.L),
            "A": [[[s(self.A[i][a][b]) for b in range(self.n)] for a in range(self.n)] for i in range(self.N)],
            "q": [[s(e) for e in qi] for qi in self.q],
            "Lmat": [[s(e) for e in row] for row in self.Lmat],
            "Cmat": [[s(e) for e in row] for row in self.Cmat],
            "params": dict(self.params),
        }

    def with_entry(self, which: str, i: int, j: int, text: str) -> "ModelSpec":
        """Copy of this model with one Lmat/Cmat entry replaced by ``text``."""
        d = self.to_dict()
        d[which][i][j] = text
        return model_from_dict(d, name=self.name)


def _expr(value, n: int, params: Mapping[str, float], where: str) -> Expr:
    if isinstance(value, bool) or value is None:
        raise ModelError(f"{where}: expected a number or expression string, got {value!r}")
    text = repr(float(value)) if isinstance(value, (int, float)) else str(value)
    try:
        return exprlang.parse(text, n, params)
    except exprlang.ExprError as exc:
        raise ModelError(f"{where}: {exc}") from exc


def _square(rows, size: int, where: str) -> list:
    if not isinstance(rows, list) or len(rows) != size:
        raise ModelError(f"{where}: expected {size} rows")
    for r, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != size:
            raise ModelError(f"{where}[{r}]: expected {size} entries")
    return rows


def _diffusion(raw, n: int, params, where: str) -> tuple:
    # A scalar means an isotropic matrix d*I; otherwise only the upper
    # triangle is read (row a may list either n or n - a entries).
    if not isinstance(raw, list):
        d = _expr(raw, n, params, where)
        zero = exprlang.parse("0", n)
        return tuple(tuple(d if a == b else zero for b in range(n)) for a in range(n))
    if len(raw) != n:
        raise ModelError(f"{where}: expected {n} rows")
    upper = {}
    for a, row in enumerate(raw):
        if not isinstance(row, list) or len(row) not in (n, n - a):
            raise ModelError(f"{where}[{a}]: expected {n} or {n - a} entries")
        offset = 0 if len(row) == n else a
        for b in range(a, n):
            upper[a, b] = _expr(row[b - offset], n, params, f"{where}[{a}][{b}]")
    return tuple(tuple(upper[min(a, b), max(a, b)] for b in range(n)) for a in range(n))


def model_from_dict(d: Mapping[str, Any], name: str = "") -> ModelSpec:
    missing = {"N", "n", "T", "L", "A", "q", "Lmat", "Cmat"} - set(d)
    if missing:
        raise ModelError(f"missing keys: {sorted(missing)}")
    N, n = int(d["N"]), int(d["n"])
    if N < 1 or n < 1:
        raise ModelError("N and n must be positive integers")
    params = {str(k): float(v) for k, v in (d.get("params") or {}).items()}
    L = d["L"] if isinstance(d["L"], list) else [d["L"]]
    if len(L) != n:
        raise ModelError(f"L: expected {n} periods")
    if not isinstance(d["A"], list) or len(d["A"]) != N:
        raise ModelError(f"A: expected {N} diffusion matrices")
    if not isinstance(d["q"], list) or len(d["q"]) != N:
        raise ModelError(f"q: expected {N} advection vectors")
    A = tuple(_diffusion(d["A"][i], n, params, f"A[{i}]") for i in range(N))
    q = []
    for i, qi in enumerate(d["q"]):
        qi = qi if isinstance(qi, list) else [qi]
        if len(qi) != n:
            raise ModelError(f"q[{i}]: expected {n} entries")
        q.append(tuple(_expr(v, n, params, f"q[{i}][{a}]") for a, v in enumerate(qi)))
    if not float(d["T"]) > 0 or not all(float(v) > 0 for v in L):
        raise ModelError("T and every spatial period must be positive")
    Lmat = _square(d["Lmat"], N, "Lmat")
    Cmat = _square(d["Cmat"], N, "Cmat")
    spec = ModelSpec(
        N=N,
        n=n,
        T=float(d["T"]),
        L=tuple(float(v) for v in L),
        A=A,
        q=tuple(q),
        Lmat=tuple(tuple(_expr(v, n, params, f"Lmat[{i}][{j}]") for j, v in enumerate(row)) for i, row in enumerate(Lmat)),
        Cmat=tuple(tuple(_expr(v, n, params, f"Cmat[{i}][{j}]") for j, v in enumerate(row)) for i, row in enumerate(Cmat)),
        params=params,
        name=name or str(d.get("name", "")),
        source=dict(d),
    )
    for where, e in spec.expressions():
        if not e.is_constant and not exprlang.check_periodicity(e, spec.T, spec.L, env=spec.env):
            raise ModelError(f"{where}: {e.text!r} is not ({spec.T:g}, {list(spec.L)})-periodic")
    return spec


def load_model(path_or_name: str | Path) -> ModelSpec:
    """Load a model from a JSON file, or a bundled model by name."""
    p = Path(path_or_name)
    if p.is_file():
        with open(p) as fh:
            return model_from_dict(json.load(fh), name=p.stem)
    name = p.stem if p.suffix == ".json" else str(path_or_name)
    if name in BUNDLED_MODELS:
        text = resources.files("kpp_spectra").joinpath(f"data/{name}.json").read_text()
        return model_from_dict(json.loads(text), name=name)
    raise FileNotFoundError(f"no model file or bundled model named {path_or_name!r}")


def scalar_model(d=1.0, q=0.0, r=0.0, c=1.0, T=1.0, L=1.0, name="") -> ModelSpec:
    """Constant-coefficient scalar model ``u_t = d u_xx - q u_x + r u - c u^2`` in 1D."""
    return model_from_dict(
        {"N": 1, "n": 1, "T": T, "L": [L], "A": [d], "q": [[q]], "Lmat": [[r]], "Cmat": [[c]]},
        name=name,
    )


def constant_model(D, Q, Lmat, Cmat=None, T=1.0, L=None, name="") -> ModelSpec:
    """Space-time homogeneous model from numeric arrays.

    ``D`` holds one scalar diffusivity per component (isotropic) or one n x n
    matrix per component; ``Q`` has shape (N, n).
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    Lm = np.asarray(Lmat, dtype=float)
    N, n = Q.shape
    Cm = np.ones((N, N)) if Cmat is None else np.asarray(Cmat, dtype=float)
    A = []
    for Di in D:
        Di = np.asarray(Di, dtype=float)
        A.append(float(Di) if Di.ndim == 0 else Di.tolist())
    return model_from_dict(
        {
            "N": N,
            "n": n,
            "T": T,
            "L": list(L) if L is not None else [1.0] * n,
            "A": A,
            "q": Q.tolist(),
            "Lmat": Lm.tolist(),
            "Cmat": Cm.tolist(),
        },
        name=name,
    )


# --- sampling --------------------------------------------------------------


def _eval(e: Expr, t, X, env, label: str, shape) -> np.ndarray:
    try:
        v = exprlang.evaluate(e, t, X, env)
    except exprlang.EvalError as exc:
        raise exprlang.EvalError(f"{label}: {exc}") from exc
    return np.broadcast_to(np.asarray(v, dtype=float), shape)


def sample_fields(spec: ModelSpec, t, X: Sequence[np.ndarray]) -> dict:
    """Evaluate every coefficient on broadcastable arrays ``t`` and ``X``.

    Returns arrays ``A`` (N, n, n, *shape), ``q`` (N, n, *shape),
    ``Lmat`` and ``Cmat`` (N, N, *shape).
    """
    shape = np.broadcast_shapes(np.shape(t), *(np.shape(x) for x in X))
    env = spec.env
    N, n = spec.N, spec.n
    A = np.empty((N, n, n) + shape)
    q = np.empty((N, n) + shape)
    for i in range(N):
        for a in range(n):
            for b in range(a, n):
                A[i, a, b] = _eval(spec.A[i][a][b], t, X, env, f"A[{i}][{a}][{b}]", shape)
                A[i, b, a] = A[i, a, b]
            q[i, a] = _eval(spec.q[i][a], t, X, env, f"q[{i}][{a}]", shape)
    Lm = np.empty((N, N) + shape)
    Cm = np.empty((N, N) + shape)
    for i in range(N):
        for j in range(N):
            Lm[i, j] = _eval(spec.Lmat[i][j], t, X, env, f"Lmat[{i}][{j}]", shape)
            Cm[i, j] = _eval(spec.Cmat[i][j], t, X, env, f"Cmat[{i}][{j}]", shape)
    return {"A": A, "q": q, "Lmat": Lm, "Cmat": Cm}


def lattice(spec: ModelSpec, samples_per_period: int = 32):
    """Space-time sampling lattice over one periodicity cell, as broadcastable arrays."""
    s = samples_per_period
    axes = [np.arange(s) * spec.T / s] + [np.arange(s) * La / s for La in spec.L]
    grids = np.meshgrid(*axes, indexing="ij")
    return grids[0], grids[1:]


# --- assumptions -----------------------------------------------------------


@dataclass
class AssumptionReport:
    ellipticity: bool
    essentially_nonnegative: bool
    irreducible: bool
    competition_positive: bool
    min_ellipticity: float
    min_offdiag_L: float
    min_C: float
    L_under: np.ndarray
    L_over: np.ndarray
    C_under: np.ndarray
    sigma: float  # smallest positive entry of L_over
    K_est: float
    witnesses: dict
    samples_per_period: int

    @property
    def all_passed(self) -> bool:
        return self.ellipticity and self.essentially_nonnegative and self.irreducible and self.competition_positive

    def failures(self) -> list[str]:
        names = {
            "ellipticity": "uniform ellipticity",
            "essentially_nonnegative": "essential nonnegativity of min L",
            "irreducible": "irreducibility of max L",
            "competition_positive": "positivity of min C",
        }
        return [label for key, label in names.items() if not getattr(self, key)]

    def to_dict(self) -> dict:
        return {
            "passed": self.all_passed,
            "ellipticity": self.ellipticity,
            "essentially_nonnegative": self.essentially_nonnegative,
            "irreducible": self.irreducible,
            "competition_positive": self.competition_positive,
            "min_ellipticity": self.min_ellipticity,
            "min_offdiag_L": self.min_offdiag_L,
            "min_C": self.min_C,
            "L_under": self.L_under.tolist(),
            "L_over": self.L_over.tolist(),
            "C_under": self.C_under.tolist(),
            "sigma": self.sigma,
            "K_est": self.K_est,
            "witnesses": self.witnesses,
            "samples_per_period": self.samples_per_period,
        }


def is_irreducible(M: np.ndarray) -> bool:
    """Strong connectivity of the graph of positive off-diagonal entries; 1x1 is irreducible."""
    M = np.asarray(M, dtype=float)
    if M.shape[0] == 1:
        return True
    adj = (M > 0) & ~np.eye(M.shape[0], dtype=bool)
    ncomp, _ = connected_components(adj.astype(int), directed=True, connection="strong")
    return ncomp == 1


def absorbing_bound(L_over: np.ndarray, C_under: np.ndarray) -> float:
    """K_est = N * max(L_over, 0) / min(C_under), an upper bound for the absorbing set."""
    N = L_over.shape[0]
    cmin = float(np.min(C_under))
    if cmin <= 0:
        return float("inf")
    return N * max(float(np.max(L_over)), 0.0) / cmin


def _witness(values: np.ndarray, t, X, pick) -> dict:
    flat = int(pick(values))
    idx = np.unravel_index(flat, values.shape)
    return {
        "t": float(np.broadcast_to(t, values.shape)[idx]),
        "x": [float(np.broadcast_to(x, values.shape)[idx]) for x in X],
        "value": float(values[idx]),
    }


def validate_assumptions(spec: ModelSpec, samples_per_period: int = 32) -> AssumptionReport:
    """Check the standing assumptions on a space-time lattice over one periodicity cell.

    Evaluation failures propagate as :class:`exprlang.EvalError` naming the
    offending coefficient.
    """
    t, X = lattice(spec, samples_per_period)
    f = sample_fields(spec, t, X)
    N, n = spec.N, spec.n
    witnesses: dict = {}

    # ellipticity: smallest eigenvalue of each A_i over the lattice
    A = np.moveaxis(f["A"], (1, 2), (-2, -1))  # (N, *shape, n, n)
    eig_min = np.linalg.eigvalsh(A)[..., 0]
    i_min = np.unravel_index(np.argmin(eig_min), eig_min.shape)[0]
    min_ell = float(eig_min.min())
    witnesses["ellipticity"] = {"component": int(i_min), **_witness(eig_min[i_min], t, X, np.argmin)}

    Lm, Cm = f["Lmat"], f["Cmat"]
    axes = tuple(range(2, Lm.ndim))
    L_under = Lm.min(axis=axes)
    L_over = Lm.max(axis=axes)
    C_under = Cm.min(axis=axes)

    off = ~np.eye(N, dtype=bool)
    if N > 1:
        min_off = float(L_under[off].min())
        i, j = np.argwhere((L_under == min_off) & off)[0]
        witnesses["essentially_nonnegative"] = {"entry": [int(i), int(j)], **_witness(Lm[i, j], t, X, np.argmin)}
    else:
        min_off = 0.0
    i, j = np.unravel_index(np.argmin(C_under), C_under.shape)
    witnesses["competition_positive"] = {"entry": [int(i), int(j)], **_witness(Cm[i, j], t, X, np.argmin)}
    witnesses["irreducible"] = {"L_over_pattern": (L_over > 0).astype(int).tolist()}

    positive = L_over[L_over > 0]
    return AssumptionReport(
        ellipticity=min_ell > 0,
        essentially_nonnegative=min_off >= 0,
        irreducible=is_irreducible(L_over),
        competition_positive=float(C_under.min()) > 0,
        min_ellipticity=min_ell,
        min_offdiag_L=min_off,
        min_C=float(C_under.min()),
        L_under=L_under,
        L_over=L_over,
        C_under=C_under,
        sigma=float(positive.min()) if positive.size else 0.0,
        K_est=absorbing_bound(L_over, C_under),
        witnesses=witnesses,
        samples_per_period=samples_per_period,
    )


def coefficient_bounds(spec: ModelSpec, samples_per_period: int = 32) -> dict:
    """Lattice extrema of the coupling and competition matrices."""
    t, X = lattice(spec, samples_per_period)
    f = sample_fields(spec, t, X)
    axes = tuple(range(2, f["Lmat"].ndim))
    return {
        "L_under": f["Lmat"].min(axis=axes),
        "L_over": f["Lmat"].max(axis=axes),
        "C_under": f["Cmat"].min(axis=axes),
        "C_over": f["Cmat"].max(axis=axes),
        "A_diag_max": np.array([[f["A"][i, a, a].max() for a in range(spec.n)] for i in range(spec.N)]),
    }


def estimate_K(spec: ModelSpec, samples_per_period: int = 32) -> float:
    b = coefficient_bounds(spec, samples_per_period)
    return absorbing_bound(b["L_over"], b["C_under"])
