"""Weighted rectangle characteristic, its supremum search and eccentricity decay.

For a rectangle Q = Q_1 x ... x Q_n the characteristic is

    prod_i |Q_i|^{alpha_i/N_i - (1/p - 1/q)}
        * (avg_Q |x|^{-gamma q r})^{1/(q r)}
        * (avg_Q |x|^{-delta p r/(p-1)})^{(p-1)/(p r)}

with r >= 1 a bump exponent (r = 1 is the plain characteristic).
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from scipy import integrate, stats

from .errors import FitFailure, NonIntegrable, PreconditionFailed, RNotFound
from .params import (
    CaseTag,
    Instance,
    Status,
    check_formula,
    range_interior,
    sign_cases,
    strict_subbalance,
    subset_sums,
    verdict,
)
from .quad import QuadConfig, Rectangle, weight_averages


@dataclass(frozen=True)
class CharReport:
    rect: Rectangle
    r: float
    value: float
    geometry: float
    omega_avg: float
    sigma_avg: float
    error: float

    def row(self) -> dict:
        out = {"r": self.r, "value": self.value, "geometry": self.geometry,
               "omega_avg": self.omega_avg, "sigma_avg": self.sigma_avg, "error": self.error}
        for i, (c, s) in enumerate(zip(self.rect.centers, self.rect.sides)):
            out[f"side_{i}"] = s
            out[f"center_{i}"] = " ".join(f"{v:g}" for v in c)
        return out


def geometry_factor(inst: Instance, rect: Rectangle) -> float:
    """prod_i |Q_i|^{alpha_i/N_i - (1/p - 1/q)}, evaluated in log space."""
    gap = float(inst.gap)
    log_val = 0.0
    for a, d, s in zip(inst.alpha, inst.dims, rect.sides):
        log_val += (float(a) - d * gap) * math.log(s)
    return math.exp(log_val)


def rect_characteristic(inst: Instance, rect: Rectangle, r=1, cfg: QuadConfig | None = None) -> CharReport:
    if rect.dims != inst.dims:
        raise ValueError(f"rectangle dims {rect.dims} do not match instance dims {inst.dims}")
    geo = geometry_factor(inst, rect)
    w = weight_averages(rect, inst, r, cfg)
    value = geo * w.omega * w.sigma
    rel = w.omega_error / w.omega + w.sigma_error / w.sigma
    return CharReport(rect, float(r), value, geo, w.omega, w.sigma, value * rel)


def isotropic_scan(inst: Instance, rect: Rectangle, log2_scales: Sequence[float], r=1,
                   cfg: QuadConfig | None = None) -> dict:
    """Characteristic of lambda*Q over lambda = 2^s.

    Returns the values and the fitted drift exponent E in char(Q) = lambda^E char(lambda Q);
    E equals gamma + delta - alpha + N(1/p - 1/q), so it vanishes when the formula holds.
    """
    vals = np.array([rect_characteristic(inst, rect.scaled(2.0 ** s), r, cfg).value
                     for s in log2_scales])
    fit = stats.linregress(np.asarray(log2_scales, float), np.log2(vals))
    predicted = float(inst.gamma + inst.delta - inst.alpha_total + inst.N * inst.gap)
    return {"log2_scales": list(map(float, log2_scales)), "values": vals.tolist(),
            "drift_exponent": -fit.slope, "stderr": fit.stderr, "predicted": predicted}


# ---------------------------------------------------------------------------
# supremum search


@dataclass(frozen=True)
class Lattice:
    """Search lattice: per-factor log2 side lengths times a small set of centers.

    Centers are the origin and offsets z along the first coordinate of each
    factor, |z| in ``offsets``.  With ``quotient`` the side of ``pivot`` is
    fixed to 1, which loses nothing when the characteristic is invariant under
    isotropic dilations.
    """

    log2_min: int = -12
    log2_max: int = 12
    step: int = 1
    offsets: tuple[float, ...] = (1.0, 4.0, 16.0)
    quotient: bool | None = None
    pivot: int = 0

    @property
    def log2_values(self) -> list[int]:
        return list(range(self.log2_min, self.log2_max + 1, self.step))


def lattice_centers(dims: Sequence[int], offsets: Iterable[float]) -> list[tuple[tuple[float, ...], ...]]:
    origin = tuple((0.0,) * d for d in dims)
    out = [origin]
    for k, d in enumerate(dims):
        for z in offsets:
            c = [list(x) for x in origin]
            c[k][0] = float(z)
            out.append(tuple(tuple(x) for x in c))
    return out


@dataclass
class SupResult:
    sup: CharReport
    reports: list[CharReport]
    coords: list[tuple]
    quotient: bool
    profiles: dict
    unbounded_suspected: bool
    flagged: list = field(default_factory=list)

    @property
    def status(self) -> str:
        return "Unbounded-suspected" if self.unbounded_suspected else "Bounded-trace"


def edge_growth(values: Sequence[float], window: int = 4, min_slope: float = 0.02) -> tuple[bool, bool]:
    """Detect sustained power-law growth into either end of a profile.

    Growth into an edge means the edge holds the maximum and the last
    ``window`` log2 increments toward it are each at least ``min_slope`` and
    not dying out (the increment at the edge is at least half the one
    ``window`` steps inside).  Convergence to a finite limit has geometrically
    shrinking increments and is not flagged.
    """
    v = np.log2(np.asarray(values, float))
    if v.size < window + 1 or not np.all(np.isfinite(v)):
        return False, False
    flags = []
    for seq in (v[::-1], v):  # low edge is v[0]: reverse so the edge comes last
        d = np.diff(seq)[-window:]
        at_edge = seq[-1] >= np.max(seq) - 1e-12
        ok = at_edge and np.all(d >= min_slope) and d[-1] >= 0.5 * d[0]
        flags.append(bool(ok))
    return flags[0], flags[1]


def _evaluate(inst, rects, r, cfg, threads):
    def one(rect):
        try:
            return rect_characteristic(inst, rect, r, cfg)
        except NonIntegrable:
            return CharReport(rect, float(r), math.inf, geometry_factor(inst, rect),
                              math.inf, math.inf, math.inf)
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(one, rects))
    return [one(rc) for rc in rects]


def sup_search(inst: Instance, r=1, lattice: Lattice | None = None, cfg: QuadConfig | None = None,
               threads: int = 1, window: int = 4, min_slope: float = 0.02) -> SupResult:
    lattice = lattice or Lattice()
    quotient = lattice.quotient
    if quotient is None:
        quotient = check_formula(inst).holds
    ls = lattice.log2_values
    axes = [[0] if (quotient and k == lattice.pivot) else ls for k in range(inst.n)]
    centers = lattice_centers(inst.dims, lattice.offsets)
    coords, rects = [], []
    for sides in itertools.product(*axes):
        for ci, c in enumerate(centers):
            coords.append((sides, ci))
            rects.append(Rectangle.from_sides([2.0 ** s for s in sides], inst.dims, c))
    reports = _evaluate(inst, rects, r, cfg, threads)
    values = np.array([rep.value for rep in reports])
    best = int(np.argmax(values))
    profiles, flagged = growth_profiles(coords, values, axes, window, min_slope)
    return SupResult(reports[best], reports, coords, bool(quotient), profiles, bool(flagged), flagged)


def growth_profiles(coords, values, axes, window: int = 4, min_slope: float = 0.02):
    """Per-factor max-over-the-rest profiles of a lattice scan and their edge-growth flags."""
    values = np.asarray(values, float)
    profiles, flagged = {}, []
    for k in range(len(axes)):
        if len(axes[k]) < 2:
            continue
        prof = []
        for s in axes[k]:
            mask = [c[0][k] == s for c in coords]
            prof.append(float(np.max(values[mask])))
        profiles[k] = {"log2_sides": list(axes[k]), "max_values": prof}
        lo_flag, hi_flag = edge_growth(prof, window, min_slope)
        if lo_flag:
            flagged.append((k, "small"))
        if hi_flag:
            flagged.append((k, "large"))
    if not np.all(np.isfinite(values)):
        flagged.append((None, "infinite"))
    return profiles, flagged


# ---------------------------------------------------------------------------
# n-parameter dilation identity


@dataclass(frozen=True)
class DilationCheck:
    lhs: float
    rhs: float
    rel_err: float


def _power_average_scaled(rect: Rectangle, e: float, scale: np.ndarray, epsrel: float) -> float:
    """avg over Q of |D x|^e by adaptive nested quadrature (QUADPACK).

    This route is independent of the dyadic-shell Gauss rule, which is what
    makes the dilation identity a genuine cross-check.
    """
    lo, hi = rect.bounds()
    if e == 0:
        return 1.0
    total = 0.0
    # split at 0, then geometrically from the shortest scaled side outward, so only
    # one near-square cell meets the singular corner and the others are smooth
    base = float(np.min(scale * (hi - lo)))
    ranges_per_axis = []
    for a, b, sc in zip(lo, hi, scale):
        cuts = {a, b}
        if a < 0 < b:
            cuts.add(0.0)
        step = base / sc
        while step < max(abs(a), abs(b)):
            cuts.update(x for x in (step, -step) if a < x < b)
            step *= 2
        cuts = sorted(cuts)
        ranges_per_axis.append(list(zip(cuts[:-1], cuts[1:])))

    def f(*x):
        return float(np.sum((scale * np.asarray(x)) ** 2)) ** (0.5 * e)

    for ranges in itertools.product(*ranges_per_axis):
        val, _ = integrate.nquad(f, list(ranges), opts={"epsrel": epsrel, "epsabs": 0.0, "limit": 200})
        total += val
    return total / float(np.prod(hi - lo))


def dilation_check(inst: Instance, rect: Rectangle, t: Sequence[int], r=1,
                   cfg: QuadConfig | None = None, epsrel: float = 1e-9) -> DilationCheck:
    """Compare both sides of the n-parameter dilation identity.

    Left: the characteristic expression on Q with the weights evaluated at
    t x = (2^{-t_1} x_1, ..., 2^{-t_n} x_n), integrated directly over Q.
    Right: prod_i 2^{t_i(alpha_i - N_i/p + N_i/q)} times the characteristic of
    the dilated rectangle t Q.
    """
    if len(t) != inst.n:
        raise ValueError("one dilation exponent per factor is required")
    r = float(r)
    q, p = float(inst.q), float(inst.p)
    scale = np.concatenate([np.full(d, 2.0 ** -ti) for d, ti in zip(inst.dims, t)])
    e_om = float(inst.omega_exponent(1)) * r
    e_si = float(inst.sigma_exponent(1)) * r
    lhs = (geometry_factor(inst, rect)
           * _power_average_scaled(rect, e_om, scale, epsrel) ** (1 / (q * r))
           * _power_average_scaled(rect, e_si, scale, epsrel) ** ((p - 1) / (p * r)))
    factor = math.prod(2.0 ** (ti * float(a - Fraction(d) / inst.p + Fraction(d) / inst.q))
                       for ti, a, d in zip(t, inst.alpha, inst.dims))
    rhs = factor * rect_characteristic(inst, rect.scaled([2.0 ** -ti for ti in t]), r, cfg).value
    return DilationCheck(lhs, rhs, abs(lhs - rhs) / abs(rhs))


# ---------------------------------------------------------------------------
# bump exponent


def _next_sum_above(value: Fraction, sums: Sequence[int]) -> int | None:
    for s in sums:
        if s > value:
            return s
    return None


def r_slacks(inst: Instance, r: Fraction) -> dict[str, Fraction]:
    """Slack of every strict inequality the eccentric-rectangle decay estimate uses at bump r.

    All slacks must be positive.  They cover the per-factor bracket terms of
    each sign case (with the weight exponent on the right-hand side, which
    subsumes the plain negativity conditions), the lower-dimensional
    integrability thresholds of the bumped weights, and the positivity of
    N_i/r - alpha_i + (1 - 1/r)(1/p - 1/q) N_i.
    """
    r = Fraction(r)
    bump = 1 - 1 / r
    p, q, g, d = inst.p, inst.q, inst.gamma, inst.delta
    out: dict[str, Fraction] = {}
    cases = sign_cases(inst)
    one = [inst.alpha[i] - inst.dims[i] / p + bump * inst.dims[i] / q for i in range(inst.n)]
    two = [inst.alpha[i] - inst.dims[i] * (q - 1) / q + bump * (p - 1) / p * inst.dims[i]
           for i in range(inst.n)]
    if CaseTag.CASE_ONE in cases:
        for i, v in enumerate(one):
            out[f"case_one_bracket[{i}]"] = d - v
            out[f"case_one_negative[{i}]"] = -v
    if CaseTag.CASE_TWO in cases:
        for i, v in enumerate(two):
            out[f"case_two_bracket[{i}]"] = g - v
            out[f"case_two_negative[{i}]"] = -v
    if CaseTag.CASE_THREE in cases:
        out["case_three_u"] = d - sum((v for v in one if v > 0), Fraction(0))
        out["case_three_v"] = g - sum((v for v in two if v > 0), Fraction(0))
    for i in range(inst.n):
        out[f"factor_bracket[{i}]"] = (Fraction(inst.dims[i]) / r - inst.alpha[i]
                                       + bump * inst.gap * inst.dims[i])
    sums = subset_sums(inst.dims)
    if g > 0:
        top = _next_sum_above(g * q, sums)
        out["omega_threshold"] = (top - g * q * r) if top is not None else Fraction(-1)
    if d > 0:
        top = _next_sum_above(d * inst.p_dual, sums)
        out["sigma_threshold"] = (top - d * inst.p_dual * r) if top is not None else Fraction(-1)
    return out


def choose_r(inst: Instance, margin: float = 1e-6, max_j: int = 12,
             keep_fraction: float = 0.0) -> Fraction:
    """Largest r on the ladder 1 + 2^-j (j = 1..max_j) whose slacks all exceed ``margin``.

    With ``keep_fraction`` > 0 every slack must also retain that fraction of
    its value at r = 1; decay rates shrink as r grows, so this trades a
    smaller r for a rate that is still visible on a finite ladder.
    """
    v = verdict(inst)
    if v.status != Status.BOUNDED:
        raise PreconditionFailed(f"instance is {v.status.value}: {', '.join(v.violations) or 'binding'}")
    if not all(f.strict for f in strict_subbalance(inst)):
        raise PreconditionFailed("strict subbalance fails")
    base = r_slacks(inst, Fraction(1))
    for j in range(1, max_j + 1):
        r = 1 + Fraction(1, 2 ** j)
        slacks = r_slacks(inst, r)
        if not slacks:
            continue
        if all(v >= margin and v >= keep_fraction * base[k] for k, v in slacks.items()):
            return r
    raise RNotFound(f"no r = 1 + 2^-j, j <= {max_j}, keeps every slack above {margin:g}")


# ---------------------------------------------------------------------------
# eccentricity decay


@dataclass(frozen=True)
class DecayFit:
    pivot: int
    ladder: tuple[int, ...]
    values: tuple[float, ...]
    eps_hat: float
    stderr: float
    r: float
    argmax: tuple = ()

    def to_dict(self) -> dict:
        return {"pivot": self.pivot, "ladder": list(self.ladder), "values": list(self.values),
                "eps_hat": self.eps_hat, "stderr": self.stderr, "r": self.r}


DEFAULT_DECAY_OFFSETS = (0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 16.0)


def eccentric_rectangles(inst: Instance, pivot: int, k: int,
                         offsets: Sequence[float] = DEFAULT_DECAY_OFFSETS) -> list[Rectangle]:
    """Rectangles with |Q_pivot|^{1/N} = 1 and every other side 2^-k, over a center set."""
    sides = [1.0 if i == pivot else 2.0 ** -k for i in range(inst.n)]
    return [Rectangle.from_sides(sides, inst.dims, c) for c in lattice_centers(inst.dims, offsets)]


def log_slope_fit(x: Sequence[float], values: Sequence[float], rel_errors: Sequence[float] | None = None):
    """Least-squares slope of log2(values) against x with a combined standard error.

    The standard error merges the regression residual error with the
    propagated per-point relative errors, so exactly straight data still
    carries the uncertainty of the numbers it was computed from.
    """
    x = np.asarray(x, float)
    y = np.log2(np.asarray(values, float))
    fit = stats.linregress(x, y)
    resid_se = float(fit.stderr) if np.isfinite(fit.stderr) else 0.0
    prop = 0.0
    if rel_errors is not None:
        sig = np.asarray(rel_errors, float) / math.log(2)
        xc = x - x.mean()
        prop = float(np.sqrt(np.sum((xc * sig) ** 2)) / np.sum(xc * xc))
    return float(fit.slope), math.hypot(resid_se, prop), float(fit.intercept)


def eccentricity_decay_fit(inst: Instance, pivot: int = 0, r=None, K: int = 16,
                           cfg: QuadConfig | None = None,
                           offsets: Sequence[float] = DEFAULT_DECAY_OFFSETS,
                           require_bounded: bool = True, threads: int = 1,
                           fit_from: int | None = None) -> DecayFit:
    """Fit the exponential decay of the restricted supremum along t = (0, k, ..., k).

    The restricted supremum is taken over rectangles whose non-pivot sides are
    2^-k times the pivot side, with the pivot side normalised to 1.  The fit
    regresses log2 of it on sum_i t_i = (n-1) k, so eps_hat is the decay rate
    per unit of total eccentricity.  Only rungs k >= ``fit_from`` (default K//2)
    enter the fit: the first rungs carry transients from the weights that
    have not yet reached their eccentric asymptotics.  ``r`` defaults to
    ``choose_r(inst, keep_fraction=0.5)``.
    """
    if inst.n < 2:
        raise PreconditionFailed("eccentricity needs at least two factors")
    if K < 3:
        raise ValueError("at least four rungs (K >= 3) are needed")
    if require_bounded:
        v = verdict(inst)
        if v.status != Status.BOUNDED:
            raise PreconditionFailed(f"instance is {v.status.value}")
        if not all(f.strict for f in strict_subbalance(inst)):
            raise PreconditionFailed("strict subbalance fails")
        if not range_interior(inst):
            raise PreconditionFailed("a weight exponent sits on a dimension threshold")
    if r is None:
        r = choose_r(inst, keep_fraction=0.5) if require_bounded else Fraction(1)
    r = float(r)
    vals, errs, args = [], [], []
    for k in range(K + 1):
        reps = _evaluate(inst, eccentric_rectangles(inst, pivot, k, offsets), r, cfg, threads)
        best = max(reps, key=lambda rep: rep.value)
        vals.append(best.value)
        errs.append(best.error / best.value if best.value > 0 else math.inf)
        args.append(best.rect.to_dict())
    ladder = tuple(range(K + 1))
    start = K // 2 if fit_from is None else fit_from
    usable = [i for i, v in enumerate(vals) if i >= start and np.isfinite(v) and v > 0]
    if len(usable) < 3:
        raise FitFailure("fewer than three usable rungs")
    x = [(inst.n - 1) * ladder[i] for i in usable]
    slope, se, _ = log_slope_fit(x, [vals[i] for i in usable], [errs[i] for i in usable])
    return DecayFit(pivot, ladder, tuple(vals), -slope, se, r, tuple(args))


def decay_epsilon(inst: Instance, **kw) -> tuple[float, float, list[DecayFit]]:
    """Smallest fitted decay rate over all pivots (the uniform rate), with its stderr."""
    fits = [eccentricity_decay_fit(inst, pivot=k, **kw) for k in range(inst.n)]
    worst = min(fits, key=lambda f: f.eps_hat)
    return worst.eps_hat, worst.stderr, fits
