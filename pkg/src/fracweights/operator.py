"""Discrete strong fractional integral on product grids.

Each factor is sampled on a uniform cell-centered grid symmetric about 0.
The kernel prod_i |x_i - y_i|^{alpha_i - N_i} is applied with the exact cell
integral on the diagonal (x_i = y_i), where the point value would be
infinite.  Because the kernel is a product, the operator is a sequence of
per-factor matrix products; ``apply_direct`` forms the full product kernel
instead and serves as the reference route.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .characteristic import log_slope_fit
from .errors import DegenerateInput, ZeroDisplacement
from .params import Instance
from .quad import QuadConfig, integrate_power_box


@dataclass(frozen=True)
class Grid:
    """Cell-centered grid: factor i has m_i cells per axis covering [-L_i, L_i]^{N_i}.

    With an odd cell count the origin is a cell center; with an even count the
    origin is a cell corner and no sample sits on it.
    """

    dims: tuple[int, ...]
    points: tuple[int, ...]
    extent: tuple[float, ...]

    @classmethod
    def uniform(cls, n: int = 2, points: int = 257, extent: float = 8.0,
                dims: Sequence[int] | None = None) -> "Grid":
        dims = tuple(dims) if dims is not None else (1,) * n
        return cls(dims, (int(points),) * len(dims), (float(extent),) * len(dims))

    def __post_init__(self):
        if not (len(self.dims) == len(self.points) == len(self.extent)):
            raise ValueError("dims, points and extent need one entry per factor")
        if any(m < 1 for m in self.points) or any(L <= 0 for L in self.extent):
            raise ValueError("need positive point counts and extents")

    @property
    def n(self) -> int:
        return len(self.dims)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(2 * L / m for L, m in zip(self.extent, self.points))

    @property
    def aligned(self) -> bool:
        return all(m % 2 == 1 for m in self.points)

    def axis(self, i: int) -> np.ndarray:
        h, L, m = self.spacing[i], self.extent[i], self.points[i]
        return -L + (np.arange(m) + 0.5) * h

    def factor_points(self, i: int) -> np.ndarray:
        """All sample points of factor i, shape (m_i^{N_i}, N_i)."""
        ax = self.axis(i)
        mesh = np.meshgrid(*([ax] * self.dims[i]), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(m ** d for m, d in zip(self.points, self.dims))

    @property
    def cell_volume(self) -> float:
        return math.prod(h ** d for h, d in zip(self.spacing, self.dims))

    def factor_norms(self, i: int) -> np.ndarray:
        return np.linalg.norm(self.factor_points(i), axis=1)

    def full_norm(self) -> np.ndarray:
        """|x| on the whole grid, shape ``self.shape``."""
        r2 = np.zeros(self.shape)
        for i in range(self.n):
            sq = self.factor_norms(i) ** 2
            r2 = r2 + sq.reshape([-1 if k == i else 1 for k in range(self.n)])
        return np.sqrt(r2)

    def to_dict(self) -> dict:
        return {"dims": list(self.dims), "points": list(self.points), "extent": list(self.extent)}

    @classmethod
    def from_dict(cls, d) -> "Grid":
        return cls(tuple(d["dims"]), tuple(d["points"]), tuple(float(x) for x in d["extent"]))


@dataclass
class GridFunction:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)

    def save(self, path) -> None:
        """Little-endian float64 row-major payload plus a JSON header next to it."""
        path = Path(path)
        self.values.astype("<f8").tofile(path.with_suffix(".bin"))
        header = {"grid": self.grid.to_dict(), "dtype": "<f8", "order": "C",
                  "shape": list(self.values.shape)}
        path.with_suffix(".json").write_text(json.dumps(header, indent=2))

    @classmethod
    def load(cls, path) -> "GridFunction":
        path = Path(path)
        header = json.loads(path.with_suffix(".json").read_text())
        grid = Grid.from_dict(header["grid"])
        vals = np.fromfile(path.with_suffix(".bin"), dtype="<f8").reshape(header["shape"])
        return cls(grid, vals)


def _values(f) -> np.ndarray:
    return f.values if isinstance(f, GridFunction) else np.asarray(f, float)


# ---------------------------------------------------------------------------
# kernels


def diagonal_cell_integral(alpha: float, dim: int, h: float) -> float:
    """int over the cube [-h/2, h/2]^dim of |u|^{alpha - dim} du."""
    if dim == 1:
        return 2.0 * (0.5 * h) ** alpha / alpha
    res = integrate_power_box(np.full(dim, -0.5), np.full(dim, 0.5), alpha - dim)
    return res.value * h ** alpha


def factor_distances(grid: Grid, i: int) -> np.ndarray:
    pts = grid.factor_points(i)
    diff = pts[:, None, :] - pts[None, :, :]
    return np.sqrt(np.einsum("abk,abk->ab", diff, diff))


def factor_kernel(grid: Grid, i: int, alpha: float) -> np.ndarray:
    """Quadrature matrix of |x_i - y_i|^{alpha - N_i} including the cell volume h^{N_i}."""
    d = grid.dims[i]
    h = grid.spacing[i]
    dist = factor_distances(grid, i)
    K = np.zeros_like(dist)
    off = dist > 0
    K[off] = dist[off] ** (alpha - d) * h ** d
    np.fill_diagonal(K, diagonal_cell_integral(alpha, d, h))
    return K


class Kernels:
    """Per-factor kernel matrices for an instance on a grid (cached)."""

    def __init__(self, inst: Instance, grid: Grid):
        if inst.dims != grid.dims:
            raise ValueError(f"instance dims {inst.dims} do not match grid dims {grid.dims}")
        self.inst = inst
        self.grid = grid
        self.mats = [factor_kernel(grid, i, float(inst.alpha[i])) for i in range(grid.n)]


def _kernels(inst, grid, kernels):
    return kernels if kernels is not None else Kernels(inst, grid)


def _contract(mats: Sequence[np.ndarray], vals: np.ndarray) -> np.ndarray:
    out = vals
    for i, K in enumerate(mats):
        out = np.moveaxis(np.tensordot(K, out, axes=([1], [i])), 0, i)
    return out


def apply_separable(inst: Instance, grid: Grid, f, kernels: Kernels | None = None) -> GridFunction:
    """I_alpha f as n successive one-factor convolutions."""
    k = _kernels(inst, grid, kernels)
    return GridFunction(grid, _contract(k.mats, _values(f).reshape(grid.shape)))


def apply_direct(inst: Instance, grid: Grid, f, kernels: Kernels | None = None,
                 chunk: int = 256) -> GridFunction:
    """I_alpha f by summing the full product kernel row by row (reference route)."""
    k = _kernels(inst, grid, kernels)
    vals = _values(f).reshape(grid.shape)
    shape = grid.shape
    flat_f = vals.ravel()
    out = np.empty(flat_f.size)
    idx = np.array(np.unravel_index(np.arange(flat_f.size), shape))
    for start in range(0, flat_f.size, chunk):
        rows = idx[:, start:start + chunk]
        kern = np.ones((rows.shape[1],) + shape)
        for i, K in enumerate(k.mats):
            sl = K[rows[i]]  # (c, P_i)
            kern = kern * sl.reshape((rows.shape[1],) + tuple(-1 if j == i else 1 for j in range(grid.n)))
        out[start:start + chunk] = kern.reshape(rows.shape[1], -1) @ flat_f
    return GridFunction(grid, out.reshape(shape))


# ---------------------------------------------------------------------------
# weighted ratio


def cell_weight(grid: Grid, e: float, cfg: QuadConfig | None = None) -> np.ndarray:
    """|x|^e at the samples, replaced by the cell average on cells touching the origin."""
    r = grid.full_norm()
    with np.errstate(divide="ignore"):
        w = r ** e
    near = [np.flatnonzero(np.all(np.abs(grid.factor_points(i)) <= 0.5 * grid.spacing[i] * (1 + 1e-12),
                                  axis=1))
            for i in range(grid.n)]
    for combo in itertools.product(*near):
        lo, hi = [], []
        for i, a in enumerate(combo):
            c = grid.factor_points(i)[a]
            lo.append(c - 0.5 * grid.spacing[i])
            hi.append(c + 0.5 * grid.spacing[i])
        lo = np.concatenate(lo)
        hi = np.concatenate(hi)
        w[combo] = integrate_power_box(lo, hi, e, cfg).value / float(np.prod(hi - lo))
    return w


@dataclass(frozen=True)
class RatioReport:
    numerator: float
    denominator: float

    @property
    def ratio(self) -> float:
        return self.numerator / self.denominator


class WeightedNorms:
    """Discrete ||omega g||_q and ||f sigma||_p for one instance on one grid."""

    def __init__(self, inst: Instance, grid: Grid, cfg: QuadConfig | None = None):
        self.inst = inst
        self.grid = grid
        q, p = float(inst.q), float(inst.p)
        self.q, self.p = q, p
        self.w_target = cell_weight(grid, -float(inst.gamma) * q, cfg)
        self.w_source = cell_weight(grid, float(inst.delta) * p, cfg)

    def target(self, g) -> float:
        g = np.abs(_values(g))
        return float(np.sum(self.w_target * g ** self.q) * self.grid.cell_volume) ** (1 / self.q)

    def source(self, f) -> float:
        f = np.abs(_values(f))
        return float(np.sum(self.w_source * f ** self.p) * self.grid.cell_volume) ** (1 / self.p)


def _check_function(vals: np.ndarray) -> None:
    if not np.all(np.isfinite(vals)):
        raise DegenerateInput("function has non-finite samples")
    if np.any(vals < 0):
        raise DegenerateInput("function must be nonnegative")
    if not np.any(vals > 0):
        raise DegenerateInput("function vanishes identically")


def weighted_ratio(inst: Instance, grid: Grid, f, If=None, norms: WeightedNorms | None = None,
                   kernels: Kernels | None = None) -> RatioReport:
    """||omega I_alpha f||_q / ||f sigma||_p on the grid."""
    vals = _values(f).reshape(grid.shape)
    _check_function(vals)
    norms = norms or WeightedNorms(inst, grid)
    if If is None:
        If = apply_separable(inst, grid, vals, kernels)
    return RatioReport(norms.target(If), norms.source(vals))


# ---------------------------------------------------------------------------
# dyadic cones


def cone_index(dx: Sequence[float], nu: int) -> tuple[int, ...] | None:
    """Cone label t of a displacement with pivot factor ``nu``.

    t_nu = 0 and, for i != nu, t_i is the band 2^{-t_i-1} <= dx_i/dx_nu < 2^{-t_i}
    (the t = 0 band also contains the ratio 1).  Returns None when some ratio
    exceeds 1, when dx_nu = 0, or when some other dx_i = 0 (no finite band).
    """
    dx = [float(d) for d in dx]
    if all(d == 0 for d in dx):
        raise ZeroDisplacement("zero displacement has no cone")
    if any(d < 0 for d in dx):
        raise ValueError("distances must be nonnegative")
    base = dx[nu]
    if base == 0:
        return None
    t = []
    for i, d in enumerate(dx):
        if i == nu:
            t.append(0)
            continue
        ratio = d / base
        if ratio > 1 or ratio == 0:
            return None
        if ratio == 1:
            t.append(0)
            continue
        _, e = math.frexp(ratio)  # ratio in [2^{e-1}, 2^e)
        t.append(-e)
    return tuple(t)


def _band_of(ratio: np.ndarray) -> np.ndarray:
    """Vectorised band index; -1 marks ratios outside (0, 1]."""
    out = np.full(ratio.shape, -1, dtype=int)
    ok = (ratio > 0) & (ratio <= 1)
    _, e = np.frexp(ratio[ok])
    band = -e
    band[ratio[ok] == 1] = 0
    out[ok] = band
    return out


def effective_distances(grid: Grid, i: int) -> np.ndarray:
    """Factor distances with coincident coordinates counted as half a cell.

    On a grid the diagonal x_i = y_i stands for a whole cell of displacements;
    half the spacing is its representative size, which places every pair of
    distinct samples in some cone.
    """
    d = factor_distances(grid, i)
    d[d == 0] = 0.5 * grid.spacing[i]
    return d


def apply_cone_partial(inst: Instance, grid: Grid, f, nu: int, t: Sequence[int],
                       kernels: Kernels | None = None) -> GridFunction:
    """Part of I_alpha f coming from pairs (x, y) in the cone with pivot nu and label t."""
    k = _kernels(inst, grid, kernels)
    vals = _values(f).reshape(grid.shape)
    t = tuple(int(v) for v in t)
    if t[nu] != 0:
        raise ValueError("the pivot entry of t must be 0")
    dists = [effective_distances(grid, i) for i in range(grid.n)]
    out = np.zeros(grid.shape)
    d_nu = dists[nu]
    for rho in np.unique(d_nu):
        mats = []
        for i in range(grid.n):
            if i == nu:
                mats.append(np.where(d_nu == rho, k.mats[i], 0.0))
            else:
                mats.append(np.where(_band_of(dists[i] / rho) == t[i], k.mats[i], 0.0))
        if any(not m.any() for m in mats):
            continue
        out += _contract(mats, vals)
    return GridFunction(grid, out)


def cone_cover_counts(grid: Grid) -> np.ndarray:
    """For every ordered pair of distinct samples, the number of cones containing it."""
    dists = [effective_distances(grid, i) for i in range(grid.n)]
    shape = tuple(d.shape[0] for d in dists)
    # broadcast to pair space: axes (x_1..x_n, y_1..y_n)
    n = grid.n

    def expand(d, i):
        s = [1] * (2 * n)
        s[i] = d.shape[0]
        s[n + i] = d.shape[1]
        return d.reshape(s)

    D = [expand(d, i) for i, d in enumerate(dists)]
    count = np.zeros(shape + shape, dtype=int)
    for nu in range(n):
        inside = np.ones(shape + shape, dtype=bool)
        for i in range(n):
            if i != nu:
                inside &= (D[i] / D[nu]) <= 1
        count += inside
    same = np.ones(shape + shape, dtype=bool)
    for i in range(n):
        eye = np.eye(shape[i], dtype=bool)
        same &= expand(eye, i)
    return count[~same]


@dataclass(frozen=True)
class CoverReport:
    min_count: int
    max_count: int
    pairs: int


def cone_cover_check(grid: Grid) -> CoverReport:
    c = cone_cover_counts(grid)
    return CoverReport(int(c.min()), int(c.max()), int(c.size))


def cone_sum(inst: Instance, grid: Grid, f, max_t: int | None = None,
             kernels: Kernels | None = None) -> GridFunction:
    """sum over pivots and labels of the cone pieces (dominates I_alpha f pointwise)."""
    k = _kernels(inst, grid, kernels)
    if max_t is None:
        max_t = max(int(math.ceil(math.log2(4 * L / h))) + 1
                    for L, h in zip(grid.extent, grid.spacing))
    total = np.zeros(grid.shape)
    for nu in range(grid.n):
        others = [i for i in range(grid.n) if i != nu]
        for labels in itertools.product(range(max_t + 1), repeat=len(others)):
            t = [0] * grid.n
            for i, v in zip(others, labels):
                t[i] = v
            total += apply_cone_partial(inst, grid, f, nu, t, k).values
    return GridFunction(grid, total)


@dataclass(frozen=True)
class ConeProfile:
    pivot: int
    ladder: tuple[int, ...]
    ratios: tuple[float, ...]
    decay: float
    stderr: float


def per_cone_ratio_profile(inst: Instance, grid: Grid, family: Sequence, nu: int = 0, K: int = 4,
                           kernels: Kernels | None = None, norms: WeightedNorms | None = None,
                           fit_from: int = 0) -> ConeProfile:
    """Largest weighted ratio of the cone pieces t = (k, ..., 0 at nu, ..., k) over a family.

    Rungs whose cone holds no grid pair are reported as NaN and left out of
    the fit; the decay is minus the slope of log2(ratio) against sum_i t_i.
    """
    k_ = _kernels(inst, grid, kernels)
    norms = norms or WeightedNorms(inst, grid)
    ratios = []
    for k in range(K + 1):
        t = [k] * grid.n
        t[nu] = 0
        best = 0.0
        for f in family:
            piece = apply_cone_partial(inst, grid, f, nu, t, k_)
            if not piece.values.any():
                continue
            best = max(best, norms.target(piece) / norms.source(f))
        ratios.append(best if best > 0 else math.nan)
    ladder = tuple(range(K + 1))
    use = [i for i in ladder if i >= fit_from and np.isfinite(ratios[i])]
    if len(use) >= 2:
        slope, se, _ = log_slope_fit([(grid.n - 1) * i for i in use], [ratios[i] for i in use])
    else:
        slope, se = math.nan, math.nan
    return ConeProfile(nu, ladder, tuple(ratios), -slope, se)


# ---------------------------------------------------------------------------
# test functions


def bump(grid: Grid, scale=1.0, center=None) -> GridFunction:
    """Smooth compactly supported bump prod_i phi(|x_i - c_i| / s_i), phi(r) = exp(-1/(1-r^2))."""
    scale = np.broadcast_to(np.asarray(scale, float), (grid.n,))
    vals = np.ones(grid.shape)
    for i in range(grid.n):
        pts = grid.factor_points(i)
        c = np.zeros(grid.dims[i]) if center is None else np.atleast_1d(np.asarray(center[i], float))
        r = np.linalg.norm(pts - c, axis=1) / scale[i]
        phi = np.zeros_like(r)
        inside = r < 1
        phi[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
        vals = vals * phi.reshape([-1 if k == i else 1 for k in range(grid.n)])
    return GridFunction(grid, vals)


@dataclass(frozen=True)
class BumpRatios:
    log2_scales: tuple[int, ...]
    ratios: tuple[float, ...]

    @property
    def variation(self) -> float:
        """max/min - 1 over the family."""
        return max(self.ratios) / min(self.ratios) - 1.0


def dilated_bump_ratios(inst: Instance, grid: Grid, log2_scales: Sequence[int] = range(-3, 4),
                        base: float = 1.0, kernels: Kernels | None = None) -> BumpRatios:
    """Weighted ratio of origin-centered bumps of radius base * 2^j on one fixed grid.

    For a bounded operator the ratio is uniformly bounded; with the
    homogeneity formula exact it is also dilation invariant up to grid error,
    so the spread across the family is a cheap consistency signal.
    """
    k_ = _kernels(inst, grid, kernels)
    norms = WeightedNorms(inst, grid)
    out = []
    for j in log2_scales:
        f = bump(grid, base * 2.0 ** j)
        out.append(weighted_ratio(inst, grid, f, norms=norms, kernels=k_).ratio)
    return BumpRatios(tuple(int(j) for j in log2_scales), tuple(out))


def scaling_covariance(inst: Instance, grid: Grid, scale: float = 2.0, floor: float = 1e-3) -> float:
    """Max relative gap between (I f_2)(x) and 2^{-alpha} (I f)(2x) on one grid.

    f is a bump of radius ``scale`` and f_2(x) = f(2x) the bump of radius
    scale/2.  With an odd point count the cell centers are j*h, so x = j*h
    and 2x = 2j*h are both samples for |j| <= (m-1)/4.  Points where the
    reference value is below ``floor`` times its maximum are ignored.
    """
    if not grid.aligned or len(set(grid.points)) != 1:
        raise ValueError("scaling check needs a uniform grid with an odd point count")
    c = (grid.points[0] - 1) // 2
    fine = apply_separable(inst, grid, bump(grid, scale / 2)).values
    coarse = apply_separable(inst, grid, bump(grid, scale)).values
    j = np.arange(-(c // 2), c // 2 + 1)
    lhs = fine[np.ix_(*[c + j] * grid.n)]
    rhs = 2.0 ** (-float(inst.alpha_total)) * coarse[np.ix_(*[c + 2 * j] * grid.n)]
    mask = rhs > floor * rhs.max()
    return float(np.max(np.abs(lhs - rhs)[mask] / rhs[mask]))
