"""Schedule construction and the quadratic iteration loop.

The iteration conjugates a perturbed element a + b toward its base point a
by a sequence of group elements exp(-u_n), with u_n produced by an
approximate right inverse of the linearized action.  Radii shrink along a
schedule derived from a tamed growth sequence (p_n):

    rho_n   = p_{n+1}^{-1/2^n},        s_{n+1} = rho_n^5 s_n,
    s_inf   = s_0 prod rho_n^5 > 0     (the summability gate),
    sigma_n = s_inf / (C' e^2 2^n)     with p_n <= C' e^{2^n},
    eps_n   = p_n^{-1} sigma_n^{2k+l+m+2},

plus a cutoff index N entering phi(n) = max(n, N): the homological
equation is solved below harmonic depth 2^{phi(n)} only, and the cutoff
inequality ties the depth to the error budget.  All schedule sequences are
kept in log space; the derived constants can underflow doubles long before
the inequalities themselves become ill-posed.

Two deliberate deviations from the source conventions, both recorded in
the step reports rather than assumed:

* the update uses alpha_n = pi_F(beta_n) and gamma_n = pi_G(beta_n) -
  u_n(a_n); these are the signs under which the decomposition identity
  beta_{n+1} = A_n + B_n + C_n holds coefficientwise, which the engine
  checks at every step;
* the literal cutoff inequality with p_n is unsatisfiable at n = N (its
  right side is strictly smaller than eps_n there), so a valid N always
  lies above the verified horizon; the selection scans the stated
  inequality on the horizon window and also records the weaker p_{n+1}
  variant actually consumed by the tail-contraction lemma.

The group action is pluggable.  The default acts by operator exponentials
(elements transform linearly); an instance may substitute a nonlinear
action, supplying both the transform and its linearization.  The defect
decomposition is built from transform values in a way that reduces exactly
to (e^{-u}(Id+u)-Id)a_n, (e^{-u}-Id)alpha_n, e^{-u}gamma_n in the linear
case and telescopes to the full update in every case.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .arnold import ArnoldFamily, TamedSequence, bruno_sum, regularize_tamed, weighted_tail_sum
from .errors import (BudgetExceeded, DomainError, InitializationFailed,
                     NotTamed, ScheduleInfeasible)
from .operators import ExpReport, ScaledOperator, exp_apply
from .products import make_budget
from .series import CoeffSeries, ScaledElement, harmonic_split

LN2 = math.log(2.0)


@dataclass(frozen=True)
class Exponents:
    """Loss orders of the problem: quasi-inverse k, tameness l, splitting m,
    harmonic loss d, and the regularity index mu of the perturbation space."""

    k: int = 0
    l: int = 0
    m: int = 0
    d: float = 0.0
    mu: float = 3.0

    @property
    def order(self) -> int:
        """The combined loss order 2k + l + m + 2 driving the error budget."""
        return 2 * self.k + self.l + self.m + 2

    def regularity_ok(self) -> bool:
        return self.mu > self.order


@dataclass(frozen=True)
class ScheduleInvariants:
    s_inf_positive: bool
    rho_gap: tuple[bool, ...]        # 1 - rho_n >= 1/(C' e^2 2^n)
    cutoff: tuple[bool, ...]         # stated inequality at the chosen N
    cutoff_lemma: tuple[bool, ...]   # p_{n+1} variant used by the tail lemma
    contraction: tuple[bool, ...]    # C^2 eps_n^2 <= eps_{n+1} sigma_{n+1}^order

    @property
    def all_ok(self) -> bool:
        return (self.s_inf_positive and all(self.rho_gap) and all(self.cutoff)
                and all(self.cutoff_lemma) and all(self.contraction))


@dataclass(frozen=True)
class Schedule:
    """All iteration constants, log-space primary."""

    p: TamedSequence
    s0: float
    exponents: Exponents
    A: float
    C_tame: float
    horizon: int
    cutoff_N: int
    log_C_prime: float
    log_s_inf: float
    log_rho: tuple[float, ...]     # n = 0..horizon+1
    log_s: tuple[float, ...]       # n = 0..horizon+2
    log_sigma: tuple[float, ...]   # n = 0..horizon+2
    log_eps: tuple[float, ...]     # n = 0..horizon+2
    invariants: ScheduleInvariants

    def phi(self, n: int) -> int:
        return max(n, self.cutoff_N)

    def rho(self, n: int) -> float:
        return math.exp(self.log_rho[n])

    def s(self, n: int) -> float:
        return math.exp(self.log_s[n])

    def sigma(self, n: int) -> float:
        return math.exp(self.log_sigma[n])

    def eps(self, n: int) -> float:
        return math.exp(self.log_eps[n])

    @property
    def s_inf(self) -> float:
        return math.exp(self.log_s_inf)

    @property
    def C_prime(self) -> float:
        return math.exp(self.log_C_prime)

    def rescaled(self, s0: float) -> "Schedule":
        """The same schedule anchored at a different starting radius.

        Every radius-valued sequence is proportional to s0; the growth data
        and the cutoff index are unchanged.
        """
        shift = math.log(s0) - math.log(self.s0)
        order = self.exponents.order
        return replace(
            self,
            s0=s0,
            log_s_inf=self.log_s_inf + shift,
            log_s=tuple(v + shift for v in self.log_s),
            log_sigma=tuple(v + shift for v in self.log_sigma),
            log_eps=tuple(v + order * shift for v in self.log_eps),
        )


def apply_floor(p: TamedSequence, floor_scale: float, A: float, scan: int = 400) -> TamedSequence:
    """Pointwise max with the mild floor exp(floor_scale * A^n).

    Keeps every rho_n strictly below one (positive radius loss at each
    stage) at a fraction of the budget cost of the full floor e^{A^n}.
    """
    from .arnold import TailModel

    if floor_scale <= 0.0:
        return p
    if not 1.0 < A < 2.0:
        raise DomainError("A must lie in (1, 2)")
    need = len(p.log_values) + 2
    if p.tail.kind == "geometric" and p.tail.coeff > 0:
        b, c = p.tail.base, p.tail.coeff
        if b >= A and c >= floor_scale:
            return TamedSequence(
                tuple(max(p.log_value(n), floor_scale * A**n) for n in range(need)),
                p.tail)
        if b > A:  # the original tail wins from some index on
            cross = math.log(floor_scale / c) / math.log(b / A) if c < floor_scale else 0.0
            vals = tuple(max(p.log_value(n), floor_scale * A**n)
                         for n in range(max(scan, need, int(cross) + 4)))
            return TamedSequence(vals, p.tail)
        cross = math.log(max(c / floor_scale, 1.0)) / math.log(A / b) if b < A else 0.0
        need = max(need, int(cross) + 4)
    else:
        last = max(p.log_values[-1] / floor_scale, 1.0)
        need = max(need, int(math.ceil(math.log(last) / math.log(A))) + 2)
    prefix_len = max(scan, need)
    vals = tuple(max(p.log_value(n), floor_scale * A**n) for n in range(prefix_len))
    return TamedSequence(vals, TailModel("geometric", coeff=floor_scale, base=A))


def build_schedule(
    p: TamedSequence,
    s0: float,
    exponents: Exponents,
    A: float,
    C_tame: float,
    horizon: int,
    regularize: bool = True,
    flatten_C: float | None = None,
    positivity_floor: float = 0.0,
    contraction_exponent: int | None = None,
    cutoff_slack: int = 32,
) -> Schedule:
    """Derive every iteration constant from the growth sequence.

    With `regularize` the sequence is first reshaped so the floor and
    square conditions hold (flatten_C defaults to C_tame^2 2^{4k+2l+2m+5},
    the constant the error-contraction inequality consumes; the exponent is
    adjustable because the source states it inconsistently).  Without it, a
    `positivity_floor` w > 0 applies only the mild floor exp(w A^n); the
    full invariants are then reported rather than enforced.
    """
    if not 0.0 < s0 < 1.0:
        raise DomainError("starting radius must lie in (0, 1)")
    if not 1.0 < A < 2.0:
        raise DomainError("A must lie in (1, 2)")
    if C_tame < 1.0:
        raise DomainError("tameness constant must be at least 1")
    ex = exponents
    if bruno_sum(p) == math.inf:
        raise NotTamed("growth sequence fails the summability gate")
    if regularize:
        ce = contraction_exponent
        if ce is None:
            ce = 4 * ex.k + 2 * ex.l + 2 * ex.m + 5
        C_reg = flatten_C if flatten_C is not None else C_tame**2 * 2.0**ce
        q = regularize_tamed(p, max(C_reg, 1.0), A)
    else:
        q = apply_floor(p, positivity_floor, A)
    total = weighted_tail_sum(q, shift=1)
    if total == math.inf:
        raise NotTamed("growth sequence fails the summability gate")
    log_s_inf = math.log(s0) - 5.0 * total
    if not math.isfinite(log_s_inf):
        raise NotTamed("radius product degenerates to zero")

    # C' = sup_n p_n / e^{2^n}; beyond the scan the exponent 2^n crushes any
    # tamed growth, and the scan extends past the analytic crossover
    scan_top = max(horizon + 2, len(q.log_values), 80)
    if q.tail.kind == "geometric" and q.tail.coeff > 0 and q.tail.base > 1:
        crossover = math.log(max(q.tail.coeff, 1.0)) / math.log(2.0 / q.tail.base) if q.tail.base < 2 else 0
        scan_top = max(scan_top, int(crossover) + 8)
    log_C_prime = max(0.0, max(q.log_value(n) - 2.0**n for n in range(scan_top)))

    H = horizon
    log_rho = tuple(-q.log_value(n + 1) / 2.0**n for n in range(H + 2))
    log_s = [math.log(s0)]
    for n in range(H + 2):
        log_s.append(log_s[-1] + 5.0 * log_rho[n])
    log_sigma = tuple(log_s_inf - log_C_prime - 2.0 - n * LN2 for n in range(H + 3))
    order = ex.order
    log_eps = tuple(-q.log_value(n) + order * log_sigma[n] for n in range(H + 3))

    # cutoff index: the stated inequality p_n^{-2^{phi(n)-n}} <= sigma_{n+1}^{d+m} eps_n
    # on the horizon window, least N first
    dm = ex.d + ex.m
    def cond_at(n: int, N: int, shifted: bool) -> bool:
        depth = 2.0 ** (max(n, N) - n)
        lhs = -depth * q.log_value(n + 1 if shifted else n)
        rhs = dm * log_sigma[n + 1] + log_eps[n]
        return lhs <= rhs + 1e-12

    cutoff_N = None
    for N in range(0, H + cutoff_slack + 1):
        if all(cond_at(n, N, shifted=False) for n in range(H + 1)):
            cutoff_N = N
            break
    if cutoff_N is None:
        raise ScheduleInfeasible(
            f"no cutoff index up to {H + cutoff_slack} satisfies the depth "
            "inequality on the horizon"
        )

    inv = ScheduleInvariants(
        s_inf_positive=math.isfinite(log_s_inf),
        rho_gap=tuple(
            -math.expm1(log_rho[n]) >= math.exp(-log_C_prime - 2.0 - n * LN2) - 1e-300
            for n in range(H + 1)
        ),
        cutoff=tuple(cond_at(n, cutoff_N, shifted=False) for n in range(H + 1)),
        cutoff_lemma=tuple(cond_at(n, cutoff_N, shifted=True) for n in range(H + 1)),
        contraction=tuple(
            2.0 * math.log(C_tame) + 2.0 * log_eps[n]
            <= log_eps[n + 1] + order * log_sigma[n + 1] + 1e-9
            for n in range(H + 1)
        ),
    )
    return Schedule(
        p=q, s0=s0, exponents=ex, A=A, C_tame=C_tame, horizon=H,
        cutoff_N=cutoff_N, log_C_prime=log_C_prime, log_s_inf=log_s_inf,
        log_rho=log_rho, log_s=tuple(log_s), log_sigma=log_sigma,
        log_eps=log_eps, invariants=inv,
    )


# ---------------------------------------------------------------------------
# group actions

class GroupAction:
    """How group elements exp(sign * u) act on elements.

    `transform` returns the transformed element at radius s together with
    the exponential report of the underlying guarded evaluation;
    `infinitesimal` is the derivative of the action at x along u, the map
    whose approximate inversion drives the iteration.
    """

    def transform(self, u: ScaledOperator, x: ScaledElement, tau: float, s: float,
                  sign: int, tol: float = 1e-15) -> tuple[ScaledElement, ExpReport]:
        raise NotImplementedError

    def infinitesimal(self, u: ScaledOperator, x: ScaledElement) -> ScaledElement:
        raise NotImplementedError


class LinearAction(GroupAction):
    """The action by operator exponentials on the coefficient space."""

    def transform(self, u, x, tau, s, sign, tol=1e-15):
        w = u if sign > 0 else _negate(u)
        return exp_apply(w, x, tau, s, tol=tol)

    def infinitesimal(self, u, x):
        return u.apply_element(x)


def _negate(u: ScaledOperator) -> ScaledOperator:
    prof = u.norm_profile
    return replace(
        u,
        apply_fn=lambda c, f=u.apply_fn: -f(c),
        label=f"-{u.label}",
        norm_profile=prof,
        field=None if u.field is None else -u.field,
    )


# ---------------------------------------------------------------------------
# problem and state

QuasiInverse = Callable[[ScaledElement, ScaledElement, int, int], ScaledOperator]


@dataclass(frozen=True, eq=False)
class KamProblem:
    """The data of one conjugation problem.

    `quasi_inverse(alpha_sum, rhs, level, depth)` must return an element of
    the admissible operator family whose linearized action at the (shifted)
    base point matches rhs below harmonic depth 2^depth, leaving the
    defect in the depth-2^depth tail.
    """

    fam: ArnoldFamily
    a: ScaledElement
    b: ScaledElement
    proj_F: ScaledOperator
    proj_G: ScaledOperator
    quasi_inverse: QuasiInverse
    p: TamedSequence
    exponents: Exponents
    A: float
    action: GroupAction = field(default_factory=LinearAction)
    m_mask: np.ndarray | None = None  # degrees spanning the perturbation space

    def validate(self, atol: float = 1e-12) -> None:
        n = self.a.series.degree_cap
        mask = np.ones(n + 1, dtype=bool) if self.m_mask is None else self.m_mask
        for j in range(n + 1):
            if not mask[j]:
                continue
            e = np.zeros(n + 1, dtype=np.complex128)
            e[j] = 1.0
            split = self.proj_F.apply_fn(e) + self.proj_G.apply_fn(e)
            if np.abs(split - e).max() > atol:
                raise DomainError("projections do not sum to the identity")
            cross = self.proj_F.apply_fn(self.proj_G.apply_fn(e))
            if np.abs(cross).max() > atol:
                raise DomainError("projections are not complementary")
        if not self.exponents.regularity_ok():
            raise DomainError(
                f"regularity index mu={self.exponents.mu} must exceed "
                f"{self.exponents.order}"
            )


@dataclass(frozen=True)
class StepReport:
    """Everything measured during one step, plus the bound verdicts."""

    n: int
    s_n: float
    rho_n: float
    sigma_n: float
    eps_n: float
    norm_alpha: float
    norm_beta: float
    norm_gamma: float
    N1_u: float
    nu: float
    norm_A: float
    norm_B: float
    norm_C: float
    bound_i: bool
    bound_ii: bool
    bound_iii: bool
    bound_star: bool
    bound_A: bool
    bound_B: bool
    bound_C: bool
    decay_ok: bool            # N1 at the working radius beats the A^n envelope
    identity_gap: float       # |beta_{n+1} - (A_n+B_n+C_n)| coefficientwise
    telescope_gap: float      # |a_{n+1}+beta_{n+1} - g_n(a+b)| coefficientwise
    range_gap: float          # how far alpha/gamma leave their subspaces

    @property
    def all_bounds_ok(self) -> bool:
        return (self.bound_i and self.bound_ii and self.bound_iii and self.bound_star
                and self.bound_A and self.bound_B and self.bound_C)


@dataclass(eq=False)
class IterationState:
    n: int
    a_n: ScaledElement
    beta_n: ScaledElement
    u_n: ScaledOperator
    alpha_sum: ScaledElement
    alpha_n: ScaledElement | None = None
    gamma_n: ScaledElement | None = None
    g_x: ScaledElement | None = None          # running transform of a + b
    us: list[ScaledOperator] = field(default_factory=list)
    transcript: list[StepReport] = field(default_factory=list)


def initial_state(problem: KamProblem, schedule: Schedule) -> IterationState:
    s0 = schedule.s(0)
    a0 = _at_scale(problem.a, s0)
    b0 = _at_scale(problem.b, s0)
    rhs = problem.proj_G.apply_element(b0)
    u0 = problem.quasi_inverse(_zero_like(b0), rhs, 0, schedule.phi(0))
    gx = _at_scale(_add(a0, b0), s0)
    return IterationState(n=0, a_n=a0, beta_n=b0, u_n=u0,
                          alpha_sum=_zero_like(b0), g_x=gx)


def _at_scale(x: ScaledElement, s: float) -> ScaledElement:
    return ScaledElement(series=x.series, scale=s, level=x.level, bound=x.bound)


def _add(x: ScaledElement, y: ScaledElement) -> ScaledElement:
    return x.with_series(x.series + y.series)


def _sub(x: ScaledElement, y: ScaledElement) -> ScaledElement:
    return x.with_series(x.series - y.series)


def _zero_like(x: ScaledElement) -> ScaledElement:
    return x.with_series(CoeffSeries.zeros(x.series.degree_cap))


def kam_step(state: IterationState, problem: KamProblem, schedule: Schedule) -> IterationState:
    """One update: split off the normal-form drift, transform, re-solve.

    Records the defect decomposition beta_{n+1} = A_n + B_n + C_n built
    from transform values: A_n is the second-order defect at the base
    point, B_n the transform increment of the drift, C_n the transported
    homological defect.  In the linear action these are exactly
    (e^{-u}(Id+u)-Id) a_n, (e^{-u}-Id) alpha_n and e^{-u} gamma_n.
    """
    n = state.n
    if n + 1 > schedule.horizon + 1:
        raise DomainError("schedule horizon exhausted; rebuild with a larger one")
    s_n = schedule.s(n)
    s_next = schedule.s(n + 1)
    rho_n = schedule.rho(n)
    sigma_n = schedule.sigma(n)
    eps_n = schedule.eps(n)
    eps_next = schedule.eps(n + 1)
    sigma_next = schedule.sigma(n + 1)
    ex = schedule.exponents
    tau_exp = rho_n * s_n

    a_n, beta_n, u_n = state.a_n, state.beta_n, state.u_n
    alpha = problem.proj_F.apply_element(beta_n)
    u_of_a = problem.action.infinitesimal(u_n, a_n)
    gamma = _sub(problem.proj_G.apply_element(beta_n), u_of_a)

    T = lambda w: problem.action.transform(u_n, w, tau_exp, s_next, sign=-1)
    base_in = _add(a_n, u_of_a)
    t_base, rep = T(base_in)
    t_withgap, _ = T(_add(base_in, gamma))
    t_full, rep_full = T(_add(a_n, beta_n))

    A_n = _sub(t_base, _at_scale(a_n, s_next))
    C_n = _sub(t_withgap, t_base)
    B_n = _sub(_sub(t_full, t_withgap), _at_scale(alpha, s_next))

    a_next = problem.fam.restrict(_at_scale(_add(a_n, alpha), s_next), n + 1)
    beta_next_direct = _sub(t_full, _at_scale(a_next, s_next))
    beta_next = _add(_add(A_n, B_n), C_n)
    beta_next = problem.fam.restrict(_at_scale(beta_next, s_next), n + 1)
    beta_next_direct = problem.fam.restrict(beta_next_direct, n + 1)
    identity_gap = float(np.abs((beta_next.series - beta_next_direct.series).coeffs).max())

    alpha_sum = _add(state.alpha_sum, alpha)
    rhs_next = problem.proj_G.apply_element(beta_next)
    u_next = problem.quasi_inverse(alpha_sum, rhs_next, n + 1, schedule.phi(n + 1))

    # running transform of a + b for the telescoping identity
    telescope_gap = math.nan
    g_x = state.g_x
    if g_x is not None:
        g_x, _ = T(g_x)
        g_x = problem.fam.restrict(g_x, n + 1)
        telescope_gap = float(np.abs(
            (g_x.series - (a_next.series + beta_next.series)).coeffs).max())

    # measured norms at the scheduled radii
    r4s = rho_n**4 * s_n
    norm_alpha = alpha.series.norm_at(r4s)
    norm_beta = beta_n.series.norm_at(s_n)
    norm_gamma = gamma.series.norm_at(r4s)
    N1 = u_n.effective_norm(1, tau_exp)
    norm_A = A_n.series.norm_at(rho_n**2 * s_n)
    norm_B = B_n.series.norm_at(s_next)
    norm_C = C_n.series.norm_at(s_next)

    C = schedule.C_tame
    range_gap = max(
        float(np.abs((problem.proj_F.apply(alpha.series) - alpha.series).coeffs).max()),
        float(np.abs((problem.proj_G.apply(gamma.series) - gamma.series).coeffs).max()),
        float(np.abs((problem.proj_G.apply(u_of_a.series) - u_of_a.series).coeffs).max()),
    )
    report = StepReport(
        n=n, s_n=s_n, rho_n=rho_n, sigma_n=sigma_n, eps_n=eps_n,
        norm_alpha=norm_alpha, norm_beta=norm_beta, norm_gamma=norm_gamma,
        N1_u=N1, nu=rep_full.nu,
        norm_A=norm_A, norm_B=norm_B, norm_C=norm_C,
        bound_i=norm_alpha <= eps_n,
        bound_ii=norm_beta <= eps_n,
        bound_iii=norm_gamma <= eps_next * sigma_next**ex.m / 6.0,
        bound_star=N1 <= C * eps_n * sigma_n ** (-ex.k),
        bound_A=norm_A <= C**2 * eps_n**2 * sigma_n ** (-2 * ex.k - 2),
        bound_B=norm_B <= 2.0 * C * eps_n**2 * sigma_n ** (-ex.k - 1),
        bound_C=norm_C <= eps_next * sigma_next**ex.m / 3.0,
        decay_ok=N1 < tau_exp ** (ex.k + ex.l + ex.m + 2) * math.exp(-schedule.A**n),
        identity_gap=identity_gap,
        telescope_gap=telescope_gap,
        range_gap=range_gap,
    )
    new_state = IterationState(
        n=n + 1,
        a_n=a_next,
        beta_n=beta_next,
        u_n=u_next,
        alpha_sum=alpha_sum,
        alpha_n=alpha,
        gamma_n=gamma,
        g_x=g_x,
        us=state.us + [u_n],
        transcript=state.transcript + [report],
    )
    return new_state


def check_step(report: StepReport, schedule: Schedule, n: int) -> dict[str, bool]:
    """Re-evaluate every inequality of a recorded step from its norms."""
    ex = schedule.exponents
    C = schedule.C_tame
    eps_n = schedule.eps(n)
    eps_next = schedule.eps(n + 1)
    sigma_n = schedule.sigma(n)
    sigma_next = schedule.sigma(n + 1)
    tau = schedule.rho(n) * schedule.s(n)
    return {
        "i": report.norm_alpha <= eps_n,
        "ii": report.norm_beta <= eps_n,
        "iii": report.norm_gamma <= eps_next * sigma_next**ex.m / 6.0,
        "star": report.N1_u <= C * eps_n * sigma_n ** (-ex.k),
        "A": report.norm_A <= C**2 * eps_n**2 * sigma_n ** (-2 * ex.k - 2),
        "B": report.norm_B <= 2.0 * C * eps_n**2 * sigma_n ** (-ex.k - 1),
        "C": report.norm_C <= eps_next * sigma_next**ex.m / 3.0,
        "decay": report.N1_u < tau ** (ex.k + ex.l + ex.m + 2) * math.exp(-schedule.A**n),
    }


def cutoff_check(gamma: ScaledElement, n: int, schedule: Schedule,
                 membership_rtol: float = 1e-9) -> bool:
    """The tail-contraction inequality for a harmonically deep element.

    Requires rho_n * scale >= s_inf (the radius stays above the floor) and
    gamma supported in degrees >= 2^{phi(n)} up to roundoff dust.
    """
    s = gamma.scale
    rho_n = schedule.rho(n)
    if rho_n * s < schedule.s_inf * (1 - 1e-12):
        raise DomainError("radius below the schedule floor; the lemma does not apply")
    if gamma.series.is_zero():
        return True
    depth = schedule.phi(n)
    head, tail = harmonic_split(gamma, depth)
    total = float(np.abs(gamma.series.coeffs).max())
    if float(np.abs(head.series.coeffs).max()) > membership_rtol * total:
        raise DomainError(f"element is not supported in harmonic depth 2^{depth}")
    ex = schedule.exponents
    lhs = gamma.series.norm_at(rho_n * s)
    rhs = schedule.sigma(n + 1) ** ex.m * schedule.eps(n) * gamma.series.norm_at(s)
    return lhs <= rhs * (1 + 1e-12)


@dataclass(eq=False)
class RunResult:
    state: IterationState
    transcript: list[StepReport]
    final_residual: float
    residual_ok: bool
    budget_ok: bool
    steps: int
    measured_tame: float

    def apply_limit(self, problem: KamProblem, schedule: Schedule,
                    x: ScaledElement) -> ScaledElement:
        """Apply the accumulated group element to a fresh stage-0 element."""
        y = x
        for n, u in enumerate(self.state.us):
            tau = schedule.rho(n) * schedule.s(n)
            y, _ = problem.action.transform(u, _at_scale(y, schedule.s(n)),
                                            tau, schedule.s(n + 1), sign=-1)
            y = problem.fam.restrict(y, n + 1)
        return y


def choose_s0(problem: KamProblem, candidates: Sequence[float],
              schedule: Schedule) -> float:
    """Largest candidate radius passing the three smallness gates.

    The reference schedule is rescaled to each candidate; the gates are
    |a| <= 1/4 at s0, |b| <= eps_0 at s0, and |pi_F(b)| <= eps_0 at
    rho_0^4 s0.
    """
    if not candidates:
        raise DomainError("need at least one candidate radius")
    failures = []
    for s0 in sorted(candidates, reverse=True):
        sched = schedule.rescaled(s0)
        na = problem.a.series.norm_at(s0)
        if na > 0.25:
            failures.append((s0, f"|a|={na:.3g} > 1/4"))
            continue
        eps0 = sched.eps(0)
        nb = problem.b.series.norm_at(s0)
        if nb > eps0:
            failures.append((s0, f"|b|={nb:.3g} > eps_0={eps0:.3g}"))
            continue
        alpha0 = problem.proj_F.apply(problem.b.series)
        if alpha0.norm_at(sched.rho(0) ** 4 * s0) > eps0:
            failures.append((s0, "|alpha_0| exceeds eps_0"))
            continue
        return s0
    raise InitializationFailed(
        "no candidate radius passes the smallness gates: "
        + "; ".join(f"s0={s:.4g}: {why}" for s, why in failures[:4])
    )


def run(problem: KamProblem, schedule: Schedule, max_steps: int,
        target_residual: float = 0.0, product_lambda: float = 0.5) -> RunResult:
    """Iterate to max_steps or below the target residual, then audit.

    The audit verifies the accumulated operators fit the product budget at
    the limiting radius, measures the worst tameness ratio seen, and
    checks the final normal-form residual against the first unused error
    budget.
    """
    state = initial_state(problem, schedule)
    measured_tame = 0.0
    while state.n < max_steps:
        nb = state.beta_n.series.norm_at(schedule.s(state.n))
        if target_residual > 0.0 and nb < target_residual:
            break
        state = kam_step(state, problem, schedule)
        rep = state.transcript[-1]
        if rep.eps_n > 0:
            measured_tame = max(measured_tame, rep.N1_u
                                * rep.sigma_n**schedule.exponents.k / rep.eps_n)
    n_final = state.n
    s_final = schedule.s(n_final)
    residual = problem.proj_G.apply(state.beta_n.series).norm_at(s_final)
    residual_ok = residual <= schedule.eps(n_final)
    s_check = schedule.s_inf * 0.999
    budget = make_budget(state.us, s_check, product_lambda)
    return RunResult(
        state=state,
        transcript=state.transcript,
        final_residual=residual,
        residual_ok=residual_ok,
        budget_ok=budget.within,
        steps=n_final,
        measured_tame=measured_tame,
    )
