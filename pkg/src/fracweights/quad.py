"""Integrals of |x|^e over axis-parallel rectangles.

The integrand is singular at the origin, so rectangles are first split into
pieces lying in a single closed orthant and reflected into [0, inf)^N.  Each
such box is cut into dyadic sup-norm shells {c/2 < |x|_inf <= c} around the
origin.  A shell intersected with a box is a union of boxes whose distance to
the origin is at least their side length, so tensor Gauss-Legendre converges
geometrically on every piece.  Once the remaining region is a full corner cube
[0, c]^N the integral follows from homogeneity:

    int_{[0,c]^N} |x|^e dx = c^(N+e) * N/(N+e) * int_{[0,1]^(N-1)} (1+|v|^2)^(e/2) dv

which reduces the singular part to a smooth face integral.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import NonIntegrable, ToleranceNotMet


@dataclass(frozen=True)
class Rectangle:
    """Product of cubes Q_i with the given centers and half side lengths."""

    centers: tuple[tuple[float, ...], ...]
    half_sides: tuple[float, ...]

    def __post_init__(self):
        if len(self.centers) != len(self.half_sides):
            raise ValueError("one center per factor is required")
        if any(not (h > 0) or not math.isfinite(h) for h in self.half_sides):
            raise ValueError(f"half sides must be positive and finite, got {self.half_sides}")

    @classmethod
    def from_sides(cls, sides: Sequence[float], dims: Sequence[int] | None = None,
                   centers: Sequence[Sequence[float]] | None = None) -> "Rectangle":
        """Rectangle with full side lengths ``sides``; origin-centered unless told otherwise."""
        dims = tuple(dims) if dims is not None else (1,) * len(sides)
        if centers is None:
            centers = [(0.0,) * d for d in dims]
        cs = tuple(tuple(float(v) for v in np.atleast_1d(c)) for c in centers)
        for c, d in zip(cs, dims):
            if len(c) != d:
                raise ValueError("center dimension does not match factor dimension")
        return cls(cs, tuple(0.5 * float(s) for s in sides))

    @classmethod
    def from_bounds(cls, lo: Sequence[Sequence[float]], hi: Sequence[Sequence[float]]) -> "Rectangle":
        """Rectangle from per-factor lower and upper corners (sides must agree within a factor)."""
        centers, halves = [], []
        for a, b in zip(lo, hi):
            a, b = np.atleast_1d(np.asarray(a, float)), np.atleast_1d(np.asarray(b, float))
            widths = b - a
            if not np.allclose(widths, widths[0], rtol=1e-12, atol=0):
                raise ValueError("factor cubes need equal side lengths")
            centers.append(tuple((a + b) / 2))
            halves.append(float(widths[0]) / 2)
        return cls(tuple(centers), tuple(halves))

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(len(c) for c in self.centers)

    @property
    def N(self) -> int:
        return sum(self.dims)

    @property
    def sides(self) -> tuple[float, ...]:
        return tuple(2 * h for h in self.half_sides)

    @property
    def factor_volumes(self) -> tuple[float, ...]:
        return tuple(s ** d for s, d in zip(self.sides, self.dims))

    @property
    def volume(self) -> float:
        return math.prod(self.factor_volumes)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.concatenate([np.asarray(c) - h for c, h in zip(self.centers, self.half_sides)])
        hi = np.concatenate([np.asarray(c) + h for c, h in zip(self.centers, self.half_sides)])
        return lo, hi

    def touches_origin(self) -> bool:
        lo, hi = self.bounds()
        return bool(np.all(lo <= 0) and np.all(hi >= 0))

    def scaled(self, factors) -> "Rectangle":
        """Image under x_i -> lambda_i x_i (a scalar applies to every factor)."""
        lam = np.broadcast_to(np.asarray(factors, float), (len(self.dims),))
        return Rectangle(tuple(tuple(l * v for v in c) for l, c in zip(lam, self.centers)),
                         tuple(l * h for l, h in zip(lam, self.half_sides)))

    def doubled(self) -> "Rectangle":
        return Rectangle(self.centers, tuple(2 * h for h in self.half_sides))

    def to_dict(self) -> dict:
        return {"centers": [list(c) for c in self.centers], "sides": list(self.sides)}

    @classmethod
    def from_dict(cls, d) -> "Rectangle":
        dims = [len(c) for c in d["centers"]]
        return cls.from_sides(d["sides"], dims, d["centers"])


@dataclass(frozen=True)
class QuadConfig:
    tol: float = 1e-10
    s_max: int = 60
    gauss_order: int = 8
    order_step: int = 4
    point_budget: int = 400_000
    mc_samples: int = 100_000
    seed: int = 0
    raise_on_tolerance: bool = True

    def __post_init__(self):
        if self.gauss_order < 2:
            raise ValueError("Gauss order must be at least 2")
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")

    def with_(self, **kw) -> "QuadConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class QuadResult:
    value: float
    error_estimate: float
    pieces: int = 0
    details: dict = field(default_factory=dict, compare=False)

    def __iter__(self):
        # allows ``value, err = integrate_power_over_rect(...)``
        return iter((self.value, self.error_estimate))


@lru_cache(maxsize=None)
def _gauss(order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(order)
    return x, w


@lru_cache(maxsize=None)
def _tensor_rule(order: int, dim: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = _gauss(order)
    if dim == 0:
        return np.zeros((1, 0)), np.ones(1)
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    wgrids = np.meshgrid(*([w] * dim), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    return nodes, weights


def _face_integrand(v: np.ndarray, e: float) -> np.ndarray:
    return (1.0 + np.sum(v * v, axis=-1)) ** (0.5 * e)


@lru_cache(maxsize=None)
def unit_cube_integral(N: int, e: float, order: int = 24) -> tuple[float, float]:
    """int_{[0,1]^N} |x|^e dx and an error estimate (requires N + e > 0)."""
    if N + e <= 0:
        raise NonIntegrable(f"|x|^{e} is not integrable at the origin of R^{N}")
    if N == 1:
        return 1.0 / (1.0 + e), 0.0

    def face(order_):
        nodes, weights = _tensor_rule(order_, N - 1)
        v = 0.5 * (nodes + 1.0)
        return float(np.dot(weights, _face_integrand(v, e))) * 0.5 ** (N - 1)

    hi = face(order)
    lo = face(max(2, order - 8))
    scale = N / (N + e)
    return scale * hi, scale * abs(hi - lo)


def _orthant_boxes(lo: np.ndarray, hi: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split [lo, hi] at the coordinate hyperplanes and reflect into [0, inf)^N."""
    options = []
    for a, b in zip(lo, hi):
        if a < 0 < b:
            options.append([(0.0, b), (0.0, -a)])
        elif b <= 0:
            options.append([(-b, -a)])
        else:
            options.append([(a, b)])
    boxes = []
    for combo in itertools.product(*options):
        a = np.array([c[0] for c in combo])
        b = np.array([c[1] for c in combo])
        boxes.append((a, b))
    return boxes


@dataclass
class _Decomposition:
    pieces_lo: list
    pieces_hi: list
    cores: list          # side lengths of full corner cubes
    remainders: list     # boxes left over after s_max shells


def _decompose(boxes, s_max: int) -> _Decomposition:
    dec = _Decomposition([], [], [], [])
    for a, b in boxes:
        N = a.size
        c = float(np.max(b))
        for _ in range(s_max + 1):
            top = np.minimum(b, c)
            if np.all(a == 0) and np.all(b >= c):
                dec.cores.append(c)
                break
            half = 0.5 * c
            choices = []
            for j in range(N):
                opts = []
                if top[j] > max(a[j], half):
                    opts.append((True, max(a[j], half), top[j]))
                if a[j] < min(top[j], half):
                    opts.append((False, a[j], min(top[j], half)))
                choices.append(opts)
            for combo in itertools.product(*choices):
                if not any(flag for flag, _, _ in combo):
                    continue
                dec.pieces_lo.append([lo for _, lo, _ in combo])
                dec.pieces_hi.append([hi for _, _, hi in combo])
            inner_top = np.minimum(b, half)
            if np.any(a >= inner_top):
                break
            c = half
        else:
            dec.remainders.append((a.copy(), np.minimum(b, c)))
    return dec


def _gauss_on_boxes(lo: np.ndarray, hi: np.ndarray, e: float, order: int,
                    budget: int) -> np.ndarray:
    """Tensor Gauss rule of the given order applied to each box; returns one value per box."""
    P, N = lo.shape
    nodes, weights = _tensor_rule(order, N)
    mid = 0.5 * (lo + hi)
    rad = 0.5 * (hi - lo)
    jac = np.prod(rad, axis=1)
    out = np.empty(P)
    chunk = max(1, budget // max(1, nodes.shape[0]))
    for start in range(0, P, chunk):
        sl = slice(start, min(P, start + chunk))
        x = mid[sl, None, :] + rad[sl, None, :] * nodes[None, :, :]
        r2 = np.einsum("pkn,pkn->pk", x, x)
        out[sl] = (r2 ** (0.5 * e)) @ weights * jac[sl]
    return out


def _max_order(N: int, cfg: QuadConfig) -> int:
    cap = int(cfg.point_budget ** (1.0 / N)) if N > 0 else cfg.gauss_order
    return max(cfg.gauss_order + cfg.order_step, min(64, cap))


def _integrate_pieces(lo: np.ndarray, hi: np.ndarray, e: float, cfg: QuadConfig):
    """Adaptive-order Gauss per piece.

    Orders run through gauss_order, gauss_order + order_step, ...; a piece stops
    once two consecutive orders agree to tol/2 relative.  The reported error of
    a piece is the smallest consecutive difference seen, so asking for a tighter
    tolerance can only continue the same sequence and never raises it.
    """
    P, N = lo.shape
    if P == 0:
        return 0.0, 0.0, 0
    top = _max_order(N, cfg)
    order = cfg.gauss_order
    prev = _gauss_on_boxes(lo, hi, e, order, cfg.point_budget)
    vals = prev.copy()
    errs = np.full(P, np.inf)
    active = np.arange(P)
    max_used = order
    while active.size and order < top:
        order = min(order + cfg.order_step, top)
        new = _gauss_on_boxes(lo[active], hi[active], e, order, cfg.point_budget)
        diff = np.abs(new - vals[active])
        errs[active] = np.minimum(errs[active], diff)
        vals[active] = new
        max_used = order
        done = errs[active] <= 0.5 * cfg.tol * np.abs(new)
        active = active[~done]
    # pieces that never got a second order (cannot happen unless top == gauss_order)
    errs[~np.isfinite(errs)] = np.abs(vals[~np.isfinite(errs)])
    return float(vals.sum()), float(errs.sum()), max_used


def _check_integrable(rect_lo, rect_hi, e):
    N = rect_lo.size
    if e <= -N and np.all(rect_lo <= 0) and np.all(rect_hi >= 0):
        raise NonIntegrable(f"|x|^{e} is not integrable near the origin in dimension {N}")


def integrate_power_box(lo, hi, e: float, cfg: QuadConfig | None = None) -> QuadResult:
    """int over the box [lo, hi] of |x|^e (Euclidean norm on R^N)."""
    cfg = cfg or QuadConfig()
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    if lo.shape != hi.shape or lo.ndim != 1:
        raise ValueError("lo and hi must be 1-d arrays of equal length")
    if np.any(hi <= lo):
        raise ValueError("box must have positive side lengths")
    e = float(e)
    N = lo.size
    _check_integrable(lo, hi, e)
    if e == 0.0:
        return QuadResult(float(np.prod(hi - lo)), 0.0, 1)

    dec = _decompose(_orthant_boxes(lo, hi), cfg.s_max)
    plo = np.array(dec.pieces_lo, float).reshape(-1, N)
    phi = np.array(dec.pieces_hi, float).reshape(-1, N)
    value, err, max_order = _integrate_pieces(plo, phi, e, cfg)

    if dec.cores:
        unit, unit_err = unit_cube_integral(N, e)
        for c in dec.cores:
            value += c ** (N + e) * unit
            err += c ** (N + e) * unit_err

    tail = 0.0
    for a, b in dec.remainders:
        # crude but rigorous: the remainder sits inside a small corner cube
        c = float(np.max(b))
        if e < 0:
            dist = float(np.linalg.norm(a))
            bound = c ** (N + e) * unit_cube_integral(N, e)[0]
            if dist > 0:
                bound = min(bound, float(np.prod(b - a)) * dist ** e)
        else:
            bound = float(np.prod(b - a)) * (math.sqrt(N) * c) ** e
        tail += bound
    err += tail

    result = QuadResult(value, err, len(plo) + len(dec.cores),
                        {"cores": len(dec.cores), "max_order": max_order, "tail_bound": tail})
    if cfg.raise_on_tolerance and err > cfg.tol * abs(value):
        raise ToleranceNotMet(
            f"error estimate {err:.3e} exceeds tol {cfg.tol:.1e} x |value| {abs(value):.3e}",
            value, err)
    return result


def integrate_power_over_rect(rect: Rectangle, e: float, cfg: QuadConfig | None = None) -> QuadResult:
    """int_Q |x|^e dx for a product rectangle Q."""
    lo, hi = rect.bounds()
    return integrate_power_box(lo, hi, e, cfg)


# ---------------------------------------------------------------------------
# Monte Carlo twin


@dataclass(frozen=True)
class MCResult:
    estimate: float
    stderr: float
    strata: int

    def __iter__(self):
        return iter((self.estimate, self.stderr))


def mc_integrate_power(rect: Rectangle, e: float, samples: int = 100_000, seed: int = 0,
                       s_max: int = 60) -> MCResult:
    """Stratified Monte Carlo estimate of int_Q |x|^e dx.

    Strata are the same sup-norm shells used by the deterministic rule; samples
    are spread in proportion to a midpoint guess of each stratum's mass.  Full
    corner cubes are sampled through their face representation so the singular
    radial factor is handled exactly.  Deterministic for a given seed.
    """
    rng = np.random.default_rng(seed)
    lo, hi = rect.bounds()
    e = float(e)
    N = lo.size
    _check_integrable(lo, hi, e)
    if e == 0.0:
        return MCResult(float(np.prod(hi - lo)), 0.0, 1)
    dec = _decompose(_orthant_boxes(lo, hi), s_max)
    boxes = [(np.asarray(a, float), np.asarray(b, float))
             for a, b in zip(dec.pieces_lo, dec.pieces_hi)]
    boxes += [(a, b) for a, b in dec.remainders]
    guesses = []
    for a, b in boxes:
        mid = 0.5 * (a + b)
        guesses.append(float(np.prod(b - a)) * float(np.dot(mid, mid)) ** (0.5 * e))
    face_factor = N / (N + e)
    for c in dec.cores:
        guesses.append(c ** (N + e) * face_factor)
    guesses = np.asarray(guesses)
    strata = len(guesses)
    min_per = 16
    spare = max(0, samples - min_per * strata)
    alloc = min_per + np.floor(spare * guesses / guesses.sum()).astype(int)

    total = 0.0
    var = 0.0
    k = 0
    for a, b in boxes:
        m = int(alloc[k]); k += 1
        x = a + (b - a) * rng.random((m, N))
        f = np.sum(x * x, axis=1) ** (0.5 * e)
        vol = float(np.prod(b - a))
        total += vol * f.mean()
        var += vol ** 2 * f.var(ddof=1) / m
    for c in dec.cores:
        m = int(alloc[k]); k += 1
        scale = c ** (N + e) * face_factor
        if N == 1:
            total += scale
            continue
        v = rng.random((m, N - 1))
        f = _face_integrand(v, e)
        total += scale * f.mean()
        var += scale ** 2 * f.var(ddof=1) / m
    return MCResult(float(total), float(math.sqrt(var)), strata)


# ---------------------------------------------------------------------------
# weight averages


@dataclass(frozen=True)
class WeightAverages:
    omega: float
    sigma: float
    omega_error: float
    sigma_error: float

    def __iter__(self):
        return iter((self.omega, self.sigma))


def power_average(rect: Rectangle, e: float, cfg: QuadConfig | None = None) -> tuple[float, float]:
    """(1/|Q|) int_Q |x|^e and its absolute error estimate."""
    res = integrate_power_over_rect(rect, e, cfg)
    vol = rect.volume
    return res.value / vol, res.error_estimate / vol


def weight_averages(rect: Rectangle, inst, r=1, cfg: QuadConfig | None = None) -> WeightAverages:
    """r-bumped averages of the target weight and of the dual source weight.

    omega part: ((1/|Q|) int_Q |x|^{-gamma q r})^{1/(q r)}
    sigma part: ((1/|Q|) int_Q |x|^{-delta p r/(p-1)})^{(p-1)/(p r)}
    """
    r = float(r)
    q, p = float(inst.q), float(inst.p)
    e_om = float(inst.omega_exponent(1)) * r
    e_si = float(inst.sigma_exponent(1)) * r
    out = []
    for name, e, power in (("omega", e_om, 1.0 / (q * r)), ("sigma", e_si, (p - 1.0) / (p * r))):
        try:
            avg, err = power_average(rect, e, cfg)
        except NonIntegrable as exc:
            raise NonIntegrable(f"{name} weight: {exc}", factor=name) from exc
        val = avg ** power
        out.append((val, val * power * err / avg))
    (w_om, e1), (w_si, e2) = out
    return WeightAverages(w_om, w_si, e1, e2)
