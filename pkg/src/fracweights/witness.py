"""Rectangle families that witness unboundedness, and their blow-up fits.

Each family is a ladder of rectangles Q_k, k = 0..K, along which the
characteristic grows like 2^{c k} whenever the constraint it is keyed to
fails.  ``predicted`` is the exact rational growth rate c of the lower bound
that the family realises; a positive value means blow-up.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .characteristic import log_slope_fit, rect_characteristic
from .errors import NonIntegrable, NotAWitness, PreconditionFailed, ToleranceNotMet
from .operator import Grid, GridFunction, Kernels, apply_separable, cell_weight
from .params import Instance, Verdict, format_fraction, subsets_UV, verdict
from .quad import QuadConfig, Rectangle, weight_averages

FAMILY_TAGS = ("FormulaDilation", "CaseOne", "CaseTwo", "CaseThreeU", "CaseThreeV",
               "SubbalanceShrink", "OmegaIntegrability", "SigmaIntegrability", "Translate")
INDEXED = ("CaseOne", "CaseTwo", "SubbalanceShrink")


@dataclass(frozen=True)
class WitnessFamily:
    tag: str
    index: int | None
    predicted: Fraction
    log2_scales: tuple[float, ...]
    rects: tuple[Rectangle, ...]

    @property
    def label(self) -> str:
        return f"{self.tag}({self.index})" if self.index is not None else self.tag

    def to_dict(self) -> dict:
        return {"tag": self.tag, "index": self.index, "label": self.label,
                "predicted": format_fraction(self.predicted),
                "predicted_float": float(self.predicted),
                "log2_scales": list(self.log2_scales),
                "rectangles": [r.to_dict() for r in self.rects]}


def _sum_excess_except(inst: Instance, i: int) -> Fraction:
    return sum((inst.excess(j) for j in range(inst.n) if j != i), Fraction(0))


def predicted_exponent(inst: Instance, tag: str, index: int | None = None) -> Fraction:
    """Growth rate per rung of the lower bound realised by a family."""
    g, d, p, q = inst.gamma, inst.delta, inst.p, inst.q
    if tag == "FormulaDilation":
        return abs(g + d - inst.alpha_total + inst.N * inst.gap)
    if tag == "CaseOne":
        return g - Fraction(inst.dims[index]) / q - _sum_excess_except(inst, index)
    if tag == "CaseTwo":
        return d - inst.dims[index] * (p - 1) / p - _sum_excess_except(inst, index)
    U, V = subsets_UV(inst)
    if tag == "CaseThreeU":
        return sum((inst.alpha[i] - inst.dims[i] / p for i in U), Fraction(0)) - d
    if tag == "CaseThreeV":
        return sum((inst.alpha[i] - inst.dims[i] * (q - 1) / q for i in V), Fraction(0)) - g
    if tag == "SubbalanceShrink":
        # the slab keeps N - N_i thick dimensions; a weight too singular for
        # them adds its own growth on top of the geometric factor
        rest = inst.N - inst.dims[index]
        return (-inst.excess(index) + max(Fraction(0), g - rest / q)
                + max(Fraction(0), d - rest * (p - 1) / p))
    if tag == "OmegaIntegrability":
        return g - Fraction(inst.N) / q
    if tag == "SigmaIntegrability":
        return d - inst.N * (p - 1) / p
    if tag == "Translate":
        return -(g + d)
    raise ValueError(f"unknown family tag {tag!r}")


KEYED = {"CaseOne": "case_one[{}]", "CaseTwo": "case_two[{}]",
         "CaseThreeU": "case_three_u", "CaseThreeV": "case_three_v"}


def _check_signs(inst: Instance, tag: str, index: int | None, v: Verdict) -> None:
    g, d = inst.gamma, inst.delta
    if tag in INDEXED and (index is None or not 0 <= index < inst.n):
        raise NotAWitness(f"{tag} needs a factor index in [0, {inst.n})")
    if tag == "CaseOne" and not (g >= 0 and d <= 0):
        raise NotAWitness("CaseOne families need gamma >= 0 and delta <= 0")
    if tag == "CaseTwo" and not (g <= 0 and d >= 0):
        raise NotAWitness("CaseTwo families need gamma <= 0 and delta >= 0")
    if tag in ("CaseThreeU", "CaseThreeV") and not (g > 0 and d > 0):
        raise NotAWitness(f"{tag} families need gamma > 0 and delta > 0")
    if tag in ("CaseOne", "CaseTwo", "SubbalanceShrink") and inst.n < 2:
        raise NotAWitness(f"{tag} families need at least two factors")
    U, V = subsets_UV(inst)
    if tag == "CaseThreeU" and not U:
        raise NotAWitness("U is empty: nothing to stretch")
    if tag == "CaseThreeV" and not V:
        raise NotAWitness("V is empty: nothing to stretch")
    if tag in KEYED:
        name = KEYED[tag].format(index)
        if name not in v.violations and name not in v.binding:
            raise NotAWitness(f"{name} holds strictly; no blow-up in this direction")


def default_depth(predicted: Fraction, K: int = 10, cap: int = 48) -> int:
    """Ladder depth: at least K, deeper when a slow rate needs more rungs to grow tenfold."""
    c = float(predicted)
    if c <= 0:
        return K
    need = math.ceil(1.5 * math.log2(10.0) / c) + 2
    return int(min(cap, max(K, need)))


def build_family(inst: Instance, tag: str, K: int | None = 10, index: int | None = None,
                 auto_depth: bool = True) -> WitnessFamily:
    """Rectangle ladder for a family tag; ``K`` rungs beyond k = 0.

    With ``auto_depth`` the ladder is extended past K when the predicted rate
    is too small for a tenfold growth within K rungs.
    """
    if tag not in FAMILY_TAGS:
        raise ValueError(f"unknown family tag {tag!r}")
    _check_signs(inst, tag, index, verdict(inst))
    pred = predicted_exponent(inst, tag, index)
    K = 10 if K is None else K
    if auto_depth:
        K = default_depth(pred, K)
    dims = inst.dims
    n = inst.n
    rects, scales = [], []
    U, V = subsets_UV(inst)
    E = inst.gamma + inst.delta - inst.alpha_total + inst.N * inst.gap
    for k in range(K + 1):
        lam = 2.0 ** -k
        if tag == "FormulaDilation":
            s = 2.0 ** (-k if E >= 0 else k)
            rect = Rectangle.from_sides([s] * n, dims)
        elif tag in ("CaseOne", "CaseTwo"):
            rect = Rectangle.from_sides([1.0 if i == index else lam for i in range(n)], dims)
        elif tag == "CaseThreeU":
            rect = Rectangle.from_sides([1.0 / lam if i in U else 1.0 for i in range(n)], dims)
        elif tag == "CaseThreeV":
            rect = Rectangle.from_sides([1.0 / lam if i in V else 1.0 for i in range(n)], dims)
        elif tag == "SubbalanceShrink":
            rect = Rectangle.from_sides([lam if i == index else 1.0 for i in range(n)], dims)
        elif tag in ("OmegaIntegrability", "SigmaIntegrability"):
            # unit cube whose nearest face sits at distance lam from the origin
            centers = [[0.0] * d for d in dims]
            centers[0][0] = 0.5 + lam
            rect = Rectangle.from_sides([1.0] * n, dims, centers)
        else:  # Translate
            centers = [[0.0] * d for d in dims]
            centers[0][0] = 1.0 / lam
            rect = Rectangle.from_sides([1.0] * n, dims, centers)
        rects.append(rect)
        scales.append(-float(k))
    return WitnessFamily(tag, index, pred, tuple(scales), tuple(rects))


def families_for(inst: Instance, v: Verdict | None = None) -> list[tuple[str, int | None]]:
    """Family tags keyed to each violated (or binding) constraint of an instance."""
    v = v or verdict(inst)
    out: list[tuple[str, int | None]] = []
    names = list(v.violations) + list(v.binding)

    def add(item):
        if item not in out:
            out.append(item)

    for name in names:
        base, _, rest = name.partition("[")
        idx = int(rest.rstrip("]")) if rest else None
        if base == "formula":
            add(("FormulaDilation", None))
        elif base == "omega_integrability":
            add(("OmegaIntegrability", None))
        elif base == "sigma_integrability":
            add(("SigmaIntegrability", None))
        elif base in ("weight_sum", "sign_case"):
            for i in range(inst.n):
                if inst.n > 1 and inst.excess(i) < 0:
                    add(("SubbalanceShrink", i))
            add(("Translate", None))
        elif base == "case_one":
            add(("CaseOne", idx))
        elif base == "case_two":
            add(("CaseTwo", idx))
        elif base == "case_three_u":
            add(("CaseThreeU", None))
        elif base == "case_three_v":
            add(("CaseThreeV", None))
        elif base == "subbalance":
            if inst.n > 1:
                add(("SubbalanceShrink", idx))
            else:
                add(("Translate", None))
    return out


# ---------------------------------------------------------------------------
# blow-up fits


@dataclass(frozen=True)
class BlowupReport:
    family: WitnessFamily
    values: tuple[float, ...]
    c_hat: float
    stderr: float
    verdict: str
    fit_from: int

    @property
    def predicted(self) -> float:
        return float(self.family.predicted)

    @property
    def growth_ratio(self) -> float:
        v = [x for x in self.values if not math.isnan(x)]
        if any(math.isinf(x) for x in v):
            return math.inf
        return v[-1] / v[0]

    @property
    def rel_error(self) -> float:
        p = self.predicted
        return abs(self.c_hat - p) / abs(p) if p != 0 else math.inf

    def to_dict(self) -> dict:
        return {"family": self.family.label, "predicted": self.predicted,
                "c_hat": self.c_hat, "stderr": self.stderr, "verdict": self.verdict,
                "values": list(self.values), "growth_ratio": self.growth_ratio,
                "fit_from": self.fit_from}


def classify_growth(c_hat: float, stderr: float, ratio: float) -> str:
    if c_hat > 0 and c_hat > 2 * stderr and ratio >= 10:
        return "BlowUp"
    if c_hat <= 2 * stderr:
        return "Stable"
    return "Inconclusive"


def run_blowup(inst: Instance, family: WitnessFamily, r=1, cfg: QuadConfig | None = None,
               threads: int = 1, fit_from: int | None = None) -> BlowupReport:
    """Evaluate the characteristic along a family and fit log2(value) = c k + b.

    Only rungs k >= fit_from (default: the second half of the ladder) enter
    the fit, since the lower-bound regime takes over only as k grows.  Rungs
    whose quadrature misses tolerance are dropped (NaN in ``values``); an
    infinite rung (weight not locally integrable) is a blow-up outright.
    """
    def one(rect):
        try:
            rep = rect_characteristic(inst, rect, r, cfg)
            return rep.value, rep.error
        except NonIntegrable:
            return math.inf, 0.0
        except ToleranceNotMet:
            return math.nan, math.nan

    rects = list(family.rects)
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            out = list(ex.map(one, rects))
    else:
        out = [one(rc) for rc in rects]
    vals = np.array([v for v, _ in out])
    errs = np.array([e for _, e in out])
    K = len(vals) - 1
    start = K // 2 if fit_from is None else fit_from
    if np.isinf(vals).any():
        return BlowupReport(family, tuple(vals), math.inf, 0.0, "BlowUp", start)
    ks = np.arange(start, K + 1)
    ok = np.isfinite(vals[start:])
    finite = vals[np.isfinite(vals)]
    if ok.sum() < 3:
        return BlowupReport(family, tuple(vals), math.nan, math.nan, "Inconclusive", start)
    tail, tail_err = vals[start:][ok], errs[start:][ok]
    slope, se, _ = log_slope_fit(ks[ok], tail, tail_err / tail)
    ratio = float(finite[-1] / finite[0])
    return BlowupReport(family, tuple(vals), slope, se, classify_growth(slope, se, ratio), start)


def hunt(inst: Instance, K: int = 10, r=1, cfg: QuadConfig | None = None,
         threads: int = 1) -> list[BlowupReport]:
    """Run every family keyed to a violated or binding constraint."""
    out = []
    for tag, idx in families_for(inst):
        try:
            fam = build_family(inst, tag, K, idx)
        except NotAWitness:
            continue
        out.append(run_blowup(inst, fam, r, cfg, threads))
    return out


# ---------------------------------------------------------------------------
# Lebesgue-point probe


@dataclass(frozen=True)
class ProbeReport:
    kept: tuple[int, ...]
    values: tuple[float, ...]
    limit: float | None
    rel_change: float
    converged: bool


def subspace_characteristic(inst: Instance, kept: Sequence[int], r=1,
                            cfg: QuadConfig | None = None) -> float:
    """Characteristic of the unit origin-centered cube in the kept factors only."""
    kept = sorted(kept)
    sub = inst.with_(dims=[inst.dims[i] for i in kept], alpha=[inst.alpha[i] for i in kept])
    rect = Rectangle.from_sides([1.0] * len(kept), sub.dims)
    w = weight_averages(rect, sub, r, cfg)
    return w.omega * w.sigma


def lebesgue_shrink_probe(inst: Instance, kept: Sequence[int], K: int = 20, r=1,
                          cfg: QuadConfig | None = None, tol: float = 1e-2) -> ProbeReport:
    """Shrink the balanced factors outside ``kept`` and watch the characteristic settle.

    Factors outside ``kept`` must be balanced (alpha_i/N_i = 1/p - 1/q); their
    sides go to zero while the kept factors stay unit cubes centered at the
    origin.  The values should approach the characteristic of the kept
    factors alone.
    """
    kept = tuple(sorted(set(kept)))
    shrink = [i for i in range(inst.n) if i not in kept]
    if any(inst.excess(i) != 0 for i in shrink):
        raise PreconditionFailed("only balanced factors may be shrunk")
    if not shrink:
        v = rect_characteristic(inst, Rectangle.from_sides([1.0] * inst.n, inst.dims), r, cfg).value
        return ProbeReport(kept, (v,), v, 0.0, True)
    vals = []
    for k in range(K + 1):
        sides = [2.0 ** -k if i in shrink else 1.0 for i in range(inst.n)]
        vals.append(rect_characteristic(inst, Rectangle.from_sides(sides, inst.dims), r, cfg).value)
    limit = subspace_characteristic(inst, kept, r, cfg) if kept else None
    rel_change = abs(vals[-1] - vals[-2]) / abs(vals[-1])
    target = limit if limit is not None else vals[-1]
    converged = rel_change < tol and abs(vals[-1] - target) / abs(target) < tol
    return ProbeReport(kept, tuple(vals), limit, rel_change, bool(converged))


# ---------------------------------------------------------------------------
# necessity test function


@dataclass
class NecessityCheck:
    f: GridFunction
    If: GridFunction
    bound: float
    min_ratio: float

    @property
    def holds(self) -> bool:
        return self.min_ratio >= 1 - 1e-12


def grid_indicator(grid: Grid, rect: Rectangle) -> np.ndarray:
    mask = np.ones(grid.shape, dtype=bool)
    for i in range(grid.n):
        pts = grid.factor_points(i)
        c = np.asarray(rect.centers[i])
        h = rect.half_sides[i] * (1 + 1e-12)
        inside = np.all(np.abs(pts - c) <= h, axis=1)
        mask &= inside.reshape([-1 if k == i else 1 for k in range(grid.n)])
    return mask


def necessity_function(inst: Instance, rect: Rectangle, grid: Grid,
                       kernels: Kernels | None = None) -> NecessityCheck:
    """f = chi_Q |x|^{-delta p/(p-1)} and the pointwise lower bound of I_alpha f on Q.

    For x, y in Q the kernel is at least prod_i diam(Q_i)^{alpha_i - N_i}, so
    I_alpha f(x) >= prod_i (sqrt(N_i) l_i)^{alpha_i - N_i} * sum_Q f on Q.
    The check uses the grid sum on both sides, which makes it exact.
    """
    mask = grid_indicator(grid, rect)
    if not mask.any():
        raise PreconditionFailed("rectangle contains no grid samples")
    e = float(inst.sigma_exponent(1))
    w = cell_weight(grid, e)
    f = np.where(mask, w, 0.0)
    If = apply_separable(inst, grid, f, kernels).values
    const = math.prod((math.sqrt(d) * s) ** (float(a) - d)
                      for a, d, s in zip(inst.alpha, inst.dims, rect.sides))
    bound = const * float(f.sum()) * grid.cell_volume
    min_ratio = float(np.min(If[mask]) / bound)
    return NecessityCheck(GridFunction(grid, f), GridFunction(grid, If), bound, min_ratio)
