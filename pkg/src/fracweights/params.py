"""Exact parameter bookkeeping for power-weighted strong fractional integrals.

An instance lives on a product space R^{N_1} x ... x R^{N_n} and carries
the orders alpha_i of the fractional integral in each factor, the Lebesgue
exponents p <= q and the power weights |x|^{-gamma} (target side) and
|x|^{delta} (source side).  Everything here is exact rational arithmetic;
numerical modules convert to floats at their own boundary.

Factor indices are zero-based throughout the package.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .errors import EpsTooLarge, FormulaViolated, InvalidInstance, SubbalanceViolated


def as_fraction(value, field_name="value") -> Fraction:
    """Parse ints, Fractions and strings such as "3/10" or "0.25" exactly."""
    if isinstance(value, bool):
        raise InvalidInstance(field_name, "booleans are not numbers")
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        # floats go through their shortest repr so that 0.3 means 3/10
        return Fraction(repr(value))
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise InvalidInstance(field_name, f"cannot parse {value!r}") from exc
    raise InvalidInstance(field_name, f"unsupported type {type(value).__name__}")


def format_fraction(x: Fraction) -> str:
    return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


@dataclass(frozen=True)
class ProductSpace:
    dims: tuple[int, ...]

    @property
    def n(self) -> int:
        return len(self.dims)

    @property
    def N(self) -> int:
        return sum(self.dims)


@dataclass(frozen=True)
class Instance:
    space: ProductSpace
    alpha: tuple[Fraction, ...]
    p: Fraction
    q: Fraction
    gamma: Fraction
    delta: Fraction

    @property
    def dims(self) -> tuple[int, ...]:
        return self.space.dims

    @property
    def n(self) -> int:
        return self.space.n

    @property
    def N(self) -> int:
        return self.space.N

    @property
    def alpha_total(self) -> Fraction:
        return sum(self.alpha, Fraction(0))

    @property
    def gap(self) -> Fraction:
        """1/p - 1/q, the Lebesgue exponent gap."""
        return 1 / self.p - 1 / self.q

    @property
    def p_dual(self) -> Fraction:
        return self.p / (self.p - 1)

    @property
    def q_dual(self) -> Fraction:
        return self.q / (self.q - 1)

    def excess(self, i: int) -> Fraction:
        """alpha_i - N_i (1/p - 1/q); nonnegative exactly when factor i is subbalanced."""
        return self.alpha[i] - self.dims[i] * self.gap

    def excesses(self) -> tuple[Fraction, ...]:
        return tuple(self.excess(i) for i in range(self.n))

    def omega_exponent(self, r=1) -> Fraction:
        """Power e with omega^{q r} = |x|^e."""
        return -self.gamma * self.q * as_fraction(r)

    def sigma_exponent(self, r=1) -> Fraction:
        """Power e with sigma^{-p r/(p-1)} = |x|^e."""
        return -self.delta * self.p_dual * as_fraction(r)

    def with_(self, **changes) -> "Instance":
        data = dict(dims=self.dims, alpha=self.alpha, p=self.p, q=self.q,
                    gamma=self.gamma, delta=self.delta)
        data.update(changes)
        return make_instance(**data)

    def dual(self) -> "Instance":
        """Adjoint instance: weights swap roles and (p, q) -> (q', p')."""
        return make_instance(self.dims, self.alpha, self.q_dual, self.p_dual,
                             self.delta, self.gamma)

    def scaled(self, k: int) -> "Instance":
        """Multiply every N_i, alpha_i, gamma and delta by the integer k."""
        return make_instance(tuple(k * d for d in self.dims), tuple(k * a for a in self.alpha),
                             self.p, self.q, k * self.gamma, k * self.delta)

    def to_dict(self) -> dict:
        return {
            "dims": list(self.dims),
            "alpha": [format_fraction(a) for a in self.alpha],
            "p": format_fraction(self.p),
            "q": format_fraction(self.q),
            "gamma": format_fraction(self.gamma),
            "delta": format_fraction(self.delta),
        }

    def __str__(self) -> str:
        d = self.to_dict()
        return (f"dims={d['dims']} alpha={d['alpha']} p={d['p']} q={d['q']} "
                f"gamma={d['gamma']} delta={d['delta']}")


INSTANCE_KEYS = ("dims", "alpha", "p", "q", "gamma", "delta")


def make_instance(dims, alpha, p, q, gamma, delta) -> Instance:
    """Build and validate an instance from loosely typed inputs."""
    if isinstance(dims, (str, bytes)) or not isinstance(dims, Iterable):
        raise InvalidInstance("dims", "must be a list of positive integers")
    dims = tuple(dims)
    if not dims:
        raise InvalidInstance("dims", "at least one factor is required")
    for d in dims:
        if isinstance(d, bool) or not isinstance(d, int) or d <= 0:
            raise InvalidInstance("dims", f"factor dimension {d!r} is not a positive integer")
    if isinstance(alpha, (str, bytes)) or not isinstance(alpha, Iterable):
        raise InvalidInstance("alpha", "must be a list")
    alpha = tuple(as_fraction(a, "alpha") for a in alpha)
    if len(alpha) != len(dims):
        raise InvalidInstance("alpha", f"expected {len(dims)} entries, got {len(alpha)}")
    for i, (a, d) in enumerate(zip(alpha, dims)):
        if not 0 < a < d:
            raise InvalidInstance("alpha", f"alpha[{i}]={format_fraction(a)} is not in (0, {d})")
    p = as_fraction(p, "p")
    q = as_fraction(q, "q")
    if p <= 1:
        raise InvalidInstance("p", f"p={format_fraction(p)} must exceed 1")
    if q < p:
        raise InvalidInstance("q", f"q={format_fraction(q)} must be at least p={format_fraction(p)}")
    return Instance(ProductSpace(dims), alpha, p, q,
                    as_fraction(gamma, "gamma"), as_fraction(delta, "delta"))


def validate_instance(raw) -> Instance:
    """Accept an Instance or a JSON-style mapping and return a checked Instance."""
    if isinstance(raw, Instance):
        return make_instance(raw.dims, raw.alpha, raw.p, raw.q, raw.gamma, raw.delta)
    if not isinstance(raw, Mapping):
        raise InvalidInstance("instance", "expected a mapping")
    unknown = set(raw) - set(INSTANCE_KEYS)
    if unknown:
        raise InvalidInstance("instance", f"unknown keys {sorted(unknown)}")
    missing = [k for k in INSTANCE_KEYS if k not in raw]
    if missing:
        raise InvalidInstance("instance", f"missing keys {missing}")
    return make_instance(*(raw[k] for k in INSTANCE_KEYS))


# ---------------------------------------------------------------------------
# constraint ledger

OK, BINDING, VIOLATED = "ok", "binding", "violated"


@dataclass(frozen=True)
class Constraint:
    """One line of the ledger.

    ``kind`` is "strict" (lhs < rhs), "weak" (lhs <= rhs) or "equality".
    ``margin`` is rhs - lhs for inequalities and lhs - rhs for equalities.
    """

    name: str
    kind: str
    lhs: Fraction
    rhs: Fraction
    description: str = ""

    @property
    def margin(self) -> Fraction:
        return self.rhs - self.lhs if self.kind != "equality" else self.lhs - self.rhs

    @property
    def status(self) -> str:
        m = self.margin
        if self.kind == "equality":
            return OK if m == 0 else VIOLATED
        if m < 0:
            return VIOLATED
        if m == 0:
            return BINDING if self.kind == "strict" else OK
        return OK

    @property
    def holds(self) -> bool:
        return self.status == OK

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "lhs": format_fraction(self.lhs),
            "rhs": format_fraction(self.rhs),
            "margin": format_fraction(self.margin),
            "margin_float": float(self.margin),
            "status": self.status,
            "description": self.description,
        }


@dataclass(frozen=True)
class FormulaCheck:
    holds: bool
    residual: Fraction
    constraint: Constraint


def check_formula(inst: Instance) -> FormulaCheck:
    """Homogeneity balance alpha/N = (1/p - 1/q) + (gamma + delta)/N."""
    lhs = inst.alpha_total / inst.N
    rhs = inst.gap + (inst.gamma + inst.delta) / inst.N
    c = Constraint("formula", "equality", lhs, rhs,
                   "alpha/N = 1/p - 1/q + (gamma+delta)/N")
    return FormulaCheck(c.status == OK, lhs - rhs, c)


@dataclass(frozen=True)
class IntegrabilityCheck:
    gamma_ok: bool
    delta_ok: bool
    sum_ok: bool
    constraints: tuple[Constraint, ...]

    @property
    def binding(self) -> tuple[str, ...]:
        # a weak constraint sitting on its boundary is reported as well
        return tuple(c.name for c in self.constraints if c.margin == 0)


def check_integrability(inst: Instance) -> IntegrabilityCheck:
    """Local integrability of both weights and gamma + delta >= 0."""
    cg = Constraint("omega_integrability", "strict", inst.gamma, Fraction(inst.N) / inst.q,
                    "gamma < N/q")
    cd = Constraint("sigma_integrability", "strict", inst.delta,
                    inst.N * (inst.p - 1) / inst.p, "delta < N(p-1)/p")
    cs = Constraint("weight_sum", "weak", -(inst.gamma + inst.delta), Fraction(0),
                    "gamma + delta >= 0")
    return IntegrabilityCheck(cg.status == OK, cd.status == OK, cs.status == OK, (cg, cd, cs))


def subsets_UV(inst: Instance) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Indices with alpha_i >= N_i/p and with alpha_i >= N_i (q-1)/q."""
    U = tuple(i for i in range(inst.n) if inst.alpha[i] - inst.dims[i] / inst.p >= 0)
    V = tuple(i for i in range(inst.n)
              if inst.alpha[i] - inst.dims[i] * (inst.q - 1) / inst.q >= 0)
    return U, V


class CaseTag(str, enum.Enum):
    CASE_ONE = "CaseOne"      # gamma >= 0, delta <= 0
    CASE_TWO = "CaseTwo"      # gamma <= 0, delta >= 0
    CASE_THREE = "CaseThree"  # gamma > 0, delta > 0
    BALANCED = "Balanced"     # every alpha_i/N_i equals 1/p - 1/q

    def __str__(self) -> str:
        return self.value


def sign_cases(inst: Instance) -> tuple[CaseTag, ...]:
    g, d = inst.gamma, inst.delta
    cases = []
    if g >= 0 and d <= 0:
        cases.append(CaseTag.CASE_ONE)
    if g <= 0 and d >= 0:
        cases.append(CaseTag.CASE_TWO)
    if g > 0 and d > 0:
        cases.append(CaseTag.CASE_THREE)
    return tuple(cases)


@dataclass(frozen=True)
class CaseCheck:
    cases: tuple[CaseTag, ...]
    constraints: tuple[Constraint, ...]
    U: tuple[int, ...]
    V: tuple[int, ...]

    @property
    def case(self) -> CaseTag | None:
        return self.cases[0] if self.cases else None

    @property
    def ok(self) -> bool:
        return bool(self.cases) and all(c.holds for c in self.constraints)

    @property
    def violated(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.constraints if c.status == VIOLATED)

    @property
    def binding(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.constraints if c.status == BINDING)


def _case_one_constraints(inst: Instance) -> list[Constraint]:
    return [Constraint(f"case_one[{i}]", "strict", inst.alpha[i] - inst.dims[i] / inst.p,
                       inst.delta, f"alpha_{i} - N_{i}/p < delta")
            for i in range(inst.n)]


def _case_two_constraints(inst: Instance) -> list[Constraint]:
    return [Constraint(f"case_two[{i}]", "strict",
                       inst.alpha[i] - inst.dims[i] * (inst.q - 1) / inst.q,
                       inst.gamma, f"alpha_{i} - N_{i}(q-1)/q < gamma")
            for i in range(inst.n)]


def _case_three_constraints(inst: Instance, U, V) -> list[Constraint]:
    u_sum = sum((inst.alpha[i] - inst.dims[i] / inst.p for i in U), Fraction(0))
    v_sum = sum((inst.alpha[i] - inst.dims[i] * (inst.q - 1) / inst.q for i in V), Fraction(0))
    return [
        Constraint("case_three_u", "strict", u_sum, inst.delta,
                   "sum over U of (alpha_i - N_i/p) < delta"),
        Constraint("case_three_v", "strict", v_sum, inst.gamma,
                   "sum over V of (alpha_i - N_i(q-1)/q) < gamma"),
    ]


def check_case_constraints(inst: Instance) -> CaseCheck:
    """Evaluate the sign-case constraints; gamma = delta = 0 checks both edge cases."""
    cases = sign_cases(inst)
    U, V = subsets_UV(inst)
    out: list[Constraint] = []
    if CaseTag.CASE_ONE in cases:
        out += _case_one_constraints(inst)
    if CaseTag.CASE_TWO in cases:
        out += _case_two_constraints(inst)
    if CaseTag.CASE_THREE in cases:
        out += _case_three_constraints(inst, U, V)
    return CaseCheck(cases, tuple(out), U, V)


def subbalance_constraints(inst: Instance) -> tuple[Constraint, ...]:
    """alpha_i/N_i >= 1/p - 1/q for every factor (necessary for boundedness)."""
    return tuple(Constraint(f"subbalance[{i}]", "weak", inst.dims[i] * inst.gap, inst.alpha[i],
                            f"alpha_{i}/N_{i} >= 1/p - 1/q")
                 for i in range(inst.n))


@dataclass(frozen=True)
class SubbalanceFlag:
    index: int
    excess: Fraction
    strict: bool
    weak: bool


def strict_subbalance(inst: Instance) -> tuple[SubbalanceFlag, ...]:
    return tuple(SubbalanceFlag(i, e, e > 0, e >= 0) for i, e in enumerate(inst.excesses()))


def partition_IJ(inst: Instance) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Split factors into balanced (alpha_i/N_i = 1/p-1/q) and strictly subbalanced ones."""
    ex = inst.excesses()
    bad = [i for i, e in enumerate(ex) if e < 0]
    if bad:
        raise SubbalanceViolated(bad)
    return (tuple(i for i, e in enumerate(ex) if e == 0),
            tuple(i for i, e in enumerate(ex) if e > 0))


def is_balanced(inst: Instance) -> bool:
    return all(e == 0 for e in inst.excesses())


class Status(str, enum.Enum):
    BOUNDED = "Bounded"
    UNBOUNDED = "Unbounded"
    ENDPOINT = "Endpoint"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Verdict:
    status: Status
    violations: tuple[str, ...]
    binding: tuple[str, ...]
    cases: tuple[CaseTag, ...]
    balanced: bool
    constraints: tuple[Constraint, ...] = field(repr=False)

    @property
    def case(self) -> CaseTag | None:
        if self.balanced:
            return CaseTag.BALANCED
        return self.cases[0] if self.cases else None

    @property
    def tags(self) -> tuple[CaseTag, ...]:
        return self.cases + ((CaseTag.BALANCED,) if self.balanced else ())

    def constraint(self, name: str) -> Constraint:
        for c in self.constraints:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "violations": list(self.violations),
            "binding": list(self.binding),
            "cases": [c.value for c in self.cases],
            "balanced": self.balanced,
            "ledger": [c.to_dict() for c in self.constraints],
        }


def all_constraints(inst: Instance) -> tuple[Constraint, ...]:
    return ((check_formula(inst).constraint,)
            + check_integrability(inst).constraints
            + check_case_constraints(inst).constraints
            + subbalance_constraints(inst))


def verdict(inst: Instance) -> Verdict:
    """Classify an instance as Bounded, Unbounded or Endpoint.

    Every strict inequality satisfied with room to spare and the homogeneity
    formula exact gives Bounded.  A strict inequality met with equality (and
    nothing genuinely violated) gives Endpoint.  Weak inequalities
    (gamma + delta >= 0, per-factor subbalance) only count when violated.
    """
    constraints = all_constraints(inst)
    cases = sign_cases(inst)
    violations = [c.name for c in constraints if c.status == VIOLATED]
    if not cases:
        violations.append("sign_case")
    binding = tuple(c.name for c in constraints if c.status == BINDING)
    if violations:
        status = Status.UNBOUNDED
    elif binding:
        status = Status.ENDPOINT
    else:
        status = Status.BOUNDED
    return Verdict(status, tuple(violations), binding, cases, is_balanced(inst), constraints)


def classical_conditions(inst: Instance) -> bool:
    """One-parameter weighted fractional integral conditions (n = 1 only)."""
    if inst.n != 1:
        raise ValueError("classical conditions are defined for a single factor")
    return (check_formula(inst).holds
            and inst.gamma < Fraction(inst.N) / inst.q
            and inst.delta < inst.N * (inst.p - 1) / inst.p
            and inst.gamma + inst.delta >= 0)


# ---------------------------------------------------------------------------
# equivalent forms of the sign-case constraints


@dataclass(frozen=True)
class EquivalenceRow:
    index: int
    form: str
    integrability_side: bool
    case_side: bool

    @property
    def agree(self) -> bool:
        return self.integrability_side == self.case_side


@dataclass(frozen=True)
class EquivalenceReport:
    rows: tuple[EquivalenceRow, ...]

    @property
    def agree(self) -> bool:
        return all(r.agree for r in self.rows)


def equivalent_forms_check(inst: Instance) -> EquivalenceReport:
    """Compare the per-factor integrability rewriting with the direct sign-case form.

    With the formula exact, gamma < N_i/q + sum_{j != i} excess_j holds
    exactly when alpha_i - N_i/p < delta, and dually for delta.
    """
    if not check_formula(inst).holds:
        raise FormulaViolated("equivalent forms require the homogeneity formula")
    ex = inst.excesses()
    total = sum(ex, Fraction(0))
    rows = []
    g, d = inst.gamma, inst.delta
    for i in range(inst.n):
        others = total - ex[i]
        if g >= 0 and d <= 0:
            rows.append(EquivalenceRow(
                i, "omega",
                g < Fraction(inst.dims[i]) / inst.q + others,
                inst.alpha[i] - inst.dims[i] / inst.p < d))
        if g <= 0 and d >= 0:
            rows.append(EquivalenceRow(
                i, "sigma",
                d < inst.dims[i] * (inst.p - 1) / inst.p + others,
                inst.alpha[i] - inst.dims[i] * (inst.q - 1) / inst.q < g))
    return EquivalenceReport(tuple(rows))


# ---------------------------------------------------------------------------
# endpoint handling


def subset_sums(dims: Sequence[int]) -> tuple[int, ...]:
    """All positive sums of sub-collections of the factor dimensions."""
    sums = set()
    for k in range(1, len(dims) + 1):
        for combo in itertools.combinations(dims, k):
            sums.add(sum(combo))
    return tuple(sorted(sums))


def range_interior(inst: Instance) -> bool:
    """True when neither weight exponent sits on a partial-dimension threshold.

    Positive gamma q (and delta p/(p-1)) must avoid every subset sum of the
    factor dimensions; these are the points where the eccentric-rectangle
    estimates switch regime.
    """
    sums = subset_sums(inst.dims)
    if inst.gamma > 0 and inst.gamma * inst.q in sums:
        return False
    if inst.delta > 0 and inst.delta * inst.p_dual in sums:
        return False
    return True


@dataclass(frozen=True)
class PerturbationCertificate:
    eps: Fraction
    lower: Instance
    upper: Instance
    lower_verdict: Verdict
    upper_verdict: Verdict

    @property
    def certified(self) -> bool:
        return (self.lower_verdict.status == Status.BOUNDED
                and self.upper_verdict.status == Status.BOUNDED)

    @property
    def note(self) -> str:
        if self.certified:
            return ("Bounded-by-interpolation (unverified numerically at the endpoint): "
                    "both perturbed exponent pairs are Bounded")
        return "not certified: at least one perturbed exponent pair is not Bounded"

    def to_dict(self) -> dict:
        return {
            "eps": format_fraction(self.eps),
            "lower": self.lower.to_dict(),
            "upper": self.upper.to_dict(),
            "lower_status": self.lower_verdict.status.value,
            "upper_status": self.upper_verdict.status.value,
            "certified": self.certified,
            "note": self.note,
        }


def perturbed_pairs(inst: Instance, eps) -> tuple[Instance, Instance]:
    """Shift 1/p and 1/q together by -eps and +eps (keeps 1/p - 1/q fixed)."""
    eps = as_fraction(eps, "eps")
    if eps <= 0:
        raise EpsTooLarge("eps must be positive")
    inv_p, inv_q = 1 / inst.p, 1 / inst.q
    if inv_q - eps <= 0:
        raise EpsTooLarge(f"1/q - eps = {format_fraction(inv_q - eps)} leaves no finite q")
    if inv_p + eps >= 1:
        raise EpsTooLarge(f"1/p + eps = {format_fraction(inv_p + eps)} pushes p to 1 or below")
    lower = inst.with_(p=1 / (inv_p - eps), q=1 / (inv_q - eps))
    upper = inst.with_(p=1 / (inv_p + eps), q=1 / (inv_q + eps))
    return lower, upper


def perturb_endpoints(inst: Instance, eps, require_endpoint: bool = True) -> PerturbationCertificate:
    """Perturb an Endpoint instance to nearby exponent pairs for interpolation.

    The certificate is purely combinatorial: it reports whether both nearby
    pairs are Bounded, never a numerical bound at the endpoint itself.
    """
    if require_endpoint:
        v = verdict(inst)
        if v.status != Status.ENDPOINT:
            raise ValueError(f"instance is {v.status.value}, not Endpoint")
    lower, upper = perturbed_pairs(inst, eps)
    return PerturbationCertificate(as_fraction(eps), lower, upper, verdict(lower), verdict(upper))
