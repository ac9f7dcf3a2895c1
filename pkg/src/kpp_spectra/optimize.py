"""Golden-section search with bracketing and a unimodality guard."""

from __future__ import annotations

import math
from typing import Callable

INVPHI = (math.sqrt(5) - 1) / 2


class UnimodalityError(RuntimeError):
    """Sampled values contradict the assumed unimodal shape."""


class BracketError(RuntimeError):
    pass


def check_unimodal(samples: dict, noise: float = 1e-6) -> None:
    """Raise if sampled values (x -> f) are not decreasing-then-increasing up to noise."""
    xs = sorted(samples)
    fs = [samples[x] for x in xs]
    k = min(range(len(fs)), key=fs.__getitem__)
    for a, b in zip(range(0, k), range(1, k + 1)):
        if fs[b] > fs[a] + noise * (1 + abs(fs[a])):
            raise UnimodalityError(f"non-monotone samples left of the minimum near x={xs[b]:.6g}")
    for a, b in zip(range(k, len(fs) - 1), range(k + 1, len(fs))):
        if fs[b] < fs[a] - noise * (1 + abs(fs[a])):
            raise UnimodalityError(f"non-monotone samples right of the minimum near x={xs[b]:.6g}")


def golden_section(
    f: Callable[[float], float],
    a: float,
    b: float,
    tol: float,
    samples: dict | None = None,
    noise: float = 1e-6,
    max_iter: int = 200,
):
    """Minimize a unimodal ``f`` on ``[a, b]`` until the bracket is shorter than ``tol``.

    Returns ``(x_best, f_best, samples)``; ``samples`` maps every evaluated x to f(x).
    """
    samples = {} if samples is None else samples

    def F(x):
        if x not in samples:
            samples[x] = f(x)
        return samples[x]

    c = b - INVPHI * (b - a)
    d = a + INVPHI * (b - a)
    fc, fd = F(c), F(d)
    it = 0
    while abs(b - a) > tol and it < max_iter:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - INVPHI * (b - a)
            fc = F(c)
        else:
            a, c, fc = c, d, fd
            d = a + INVPHI * (b - a)
            fd = F(d)
        it += 1
    check_unimodal(samples, noise)
    x_best = min(samples, key=samples.get)
    return x_best, samples[x_best], samples


def bracket_minimum(f: Callable[[float], float], x0: float, step: float, limit: float, samples: dict | None = None):
    """Expand outward from ``x0`` (doubling the step) until ``f`` rises on both sides.

    Returns ``(left, right, samples)`` with an interior sample below both ends.
    Raises :class:`BracketError` when ``|x|`` would exceed ``limit``.
    """
    samples = {} if samples is None else samples

    def F(x):
        if x not in samples:
            samples[x] = f(x)
        return samples[x]

    f0 = F(x0)
    fl, fr = F(x0 - step), F(x0 + step)
    if fl >= f0 and fr >= f0:
        return x0 - step, x0 + step, samples
    direction = 1.0 if fr < fl else -1.0
    prev, cur = x0, x0 + direction * step
    fcur = F(cur)
    h = step
    while True:
        h *= 2
        nxt = cur + direction * h
        if abs(nxt) > limit:
            raise BracketError(f"no minimum bracketed within |x| <= {limit}")
        fn = F(nxt)
        if fn >= fcur:
            lo, hi = sorted((prev, nxt))
            return lo, hi, samples
        prev, cur, fcur = cur, nxt, fn
