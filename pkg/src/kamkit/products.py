"""Convergent infinite products of operator exponentials.

Given first-order operators u_0, u_1, ... whose effective norms at the
working radius s sum below the admissible fraction (1 - lambda) s, the
partial products

    g_n = e^{u_n} r_n e^{u_{n-1}} ... e^{u_0}

(restrictions interleaved between stages) applied to an element of norm
|x|_s stay bounded at radius lambda*s by C |x|_s with

    C = 1 / (1 - (sum_i N_s(u_i)) / ((1 - lambda) s)),

and consecutive partial products differ at radius rho*s, rho = lambda(1-lambda),
by at most K * N_{lambda s}(u_n) / (lambda s) * |x|_s with

    K = sup_n C / (1 - lambda - N_{lambda s}(u_n) / (lambda s)),

so the products converge whenever the norms are summable.  All N here are
the effective (contraction-ratio) norms; see `operators`.

Evaluation is exact on the truncation: each factor is a guarded
exponential, with the radius budget (1 - lambda) s split across factors in
proportion to their norms so the guard ratio is the same for every factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .arnold import ArnoldFamily
from .errors import BudgetExceeded, DomainError
from .operators import ExpReport, ScaledOperator, exp_apply
from .series import ScaledElement


@dataclass(frozen=True)
class ProductBudget:
    """Norm budget of a product family at radius s."""

    lam: float
    s: float
    contributions: tuple[float, ...]  # effective first-order norms at s

    def __post_init__(self) -> None:
        if not 0.0 < self.lam < 1.0:
            raise DomainError("lambda must lie in (0, 1)")
        if self.s <= 0.0:
            raise DomainError("radius must be positive")

    @property
    def rho(self) -> float:
        return self.lam * (1.0 - self.lam)

    @property
    def allowance(self) -> float:
        return (1.0 - self.lam) * self.s

    @property
    def total(self) -> float:
        return float(sum(self.contributions))

    @property
    def within(self) -> bool:
        return self.total <= self.allowance * (1.0 + 1e-12)

    def first_violation(self) -> int | None:
        """Index at which the running norm sum first exceeds the allowance."""
        run = 0.0
        for i, c in enumerate(self.contributions):
            run += c
            if run > self.allowance * (1.0 + 1e-12):
                return i
        return None

    @property
    def bound_constant(self) -> float:
        """The partial-product bound constant C (inf at budget saturation)."""
        denom = 1.0 - self.total / self.allowance
        return math.inf if denom <= 0.0 else 1.0 / denom


@dataclass
class ProductDiagnostics:
    budget: ProductBudget
    bound_constant: float
    gap_constant: float
    gaps: list[float] = field(default_factory=list)
    partial_norms: list[float] = field(default_factory=list)
    exp_reports: list[ExpReport] = field(default_factory=list)
    converged: bool = False


def make_budget(us: list[ScaledOperator], s: float, lam: float) -> ProductBudget:
    return ProductBudget(lam=lam, s=s,
                         contributions=tuple(u.effective_norm(1, s) for u in us))


def product_apply(
    us: list[ScaledOperator],
    x: ScaledElement,
    s: float,
    lam: float,
    fam: ArnoldFamily | None = None,
    gap_tol: float = 0.0,
    collect_partials: bool = False,
) -> tuple[ScaledElement, ProductDiagnostics]:
    """Apply the full product to x, stage by stage.

    x enters at stage 0 with declared radius >= s; the result is declared at
    radius rho*s on the limit stage.  Raises BudgetExceeded when the norm
    budget fails, identifying the first offending partial sum.  When
    gap_tol > 0, evaluation stops early once both the measured gap and the
    bound on all remaining gaps fall below it.
    """
    if x.norm(s) == math.inf:
        raise DomainError("input element is not alive at radius s")
    budget = make_budget(us, s, lam)
    if not budget.within:
        raise BudgetExceeded(
            f"norm budget violated at factor {budget.first_violation()}: "
            f"sum {budget.total:.6g} exceeds allowance {budget.allowance:.6g}"
        )
    C = budget.bound_constant
    rho_s = budget.rho * s
    lam_s = lam * s
    # gap constant from the tail estimate; positivity of the denominator is
    # checked rather than assumed
    K = 0.0
    for u in us:
        n_l = u.effective_norm(1, lam_s)
        denom = 1.0 - lam - n_l / lam_s
        if denom <= 0.0:
            raise BudgetExceeded(
                f"gap-constant denominator 1-lambda-N/(lambda s) = {denom:.6g} "
                f"is not positive for {u.label!r}"
            )
        K = max(K, C / denom)
    diag = ProductDiagnostics(budget=budget, bound_constant=C, gap_constant=K)
    total = budget.total
    y = x
    current_radius = s
    x_norm_s = x.norm(s)
    remaining = list(budget.contributions)
    partials = []
    for i, u in enumerate(us):
        if fam is not None and i > 0:
            y = fam.restrict(y, i)
        contrib = budget.contributions[i]
        drop = 0.0 if total == 0.0 else (1.0 - lam) * s * (contrib / total)
        if contrib == 0.0 or drop == 0.0:
            new = exp_apply_zero(u, y, current_radius)
            rep = ExpReport(nu=0.0, terms_used=0, tail_bound=0.0)
        else:
            new, rep = exp_apply(u, y, tau=current_radius, s=current_radius - drop)
            current_radius -= drop
        diag.exp_reports.append(rep)
        gap = (new.series - y.series).norm_at(rho_s)
        diag.gaps.append(gap)
        y = new
        if collect_partials:
            partials.append(y)
        diag.partial_norms.append(y.series.norm_at(lam_s))
        remaining[i] = 0.0
        if gap_tol > 0.0:
            tail_bound = K * sum(remaining) / lam_s * x_norm_s
            if gap <= gap_tol and tail_bound <= gap_tol:
                diag.converged = True
                break
    else:
        diag.converged = True
    level = math.inf if fam is not None else y.level
    out = ScaledElement(series=y.series, scale=rho_s, level=level, bound=y.bound)
    if collect_partials:
        diag.partials = partials  # type: ignore[attr-defined]
    return out, diag


def exp_apply_zero(u: ScaledOperator, y: ScaledElement, radius: float) -> ScaledElement:
    """Identity factor (zero-norm operator contributes e^0 = Id)."""
    return ScaledElement(series=y.series, scale=radius, level=y.level, bound=y.bound)


def cauchy_gaps(us: list[ScaledOperator], x: ScaledElement, s: float, lam: float,
                fam: ArnoldFamily | None = None) -> list[float]:
    """|g_n x - g_{n-1} x| at radius rho*s for every n (g_{-1} = Id)."""
    _, diag = product_apply(us, x, s, lam, fam=fam)
    return diag.gaps
