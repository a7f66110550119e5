"""Recurrence / transience decisions from tail profiles and series tests."""
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import (PreconditionError, PreconditionNotDegenerateM, PreconditionUnbounded,
                     SupportConditionUnverifiable)
from .model import tail_profile

INF = math.inf
RAABE_DELTA = 0.05
N_MAX = 10 ** 5


class Outcome(str, Enum):
    POSITIVE = "PositiveRecurrent"
    NULL = "NullRecurrent"
    TRANSIENT = "Transient"
    BOUNDARY = "Boundary"
    UNDETERMINED = "Undetermined"


@dataclass(frozen=True)
class Verdict:
    outcome: Outcome
    rule: str
    witness: dict = field(default_factory=dict)
    caveats: tuple = ()

    @property
    def determinate(self):
        return self.outcome != Outcome.UNDETERMINED

    def to_dict(self):
        return {"outcome": self.outcome.value, "rule": self.rule,
                "witness": dict(self.witness), "caveats": list(self.caveats)}


def _se(profile, *keys):
    if not profile.estimated:
        return 0.0
    return math.sqrt(sum(profile.se.get(k, 0.0) ** 2 for k in keys))


def classify_spec(profile, nondeg=None):
    """Apply the criteria in fixed precedence; exactly one rule fires."""
    if nondeg is not None and not nondeg.ok:
        return Verdict(Outcome.POSITIVE, nondeg.status, {"r": nondeg.r})
    caveats = ("estimated tail profile",) if profile.estimated else ()
    m = profile.m_mean
    minus_m = -m
    s_lo, s_hi = profile.s_star, profile.s_upper
    if not s_lo <= s_hi:
        raise PreconditionError("profile violates s_* <= s^*")
    if s_hi < minus_m and s_lo > minus_m:
        raise AssertionError("main11 regions overlap, profile is inconsistent")

    if not m < 0:
        return Verdict(Outcome.UNDETERMINED, "not_contractive", {"m_mean": m},
                       caveats + ("E log M >= 0: Pi_n -> 0 a.s. does not hold",))
    iq = profile.iq
    if iq is not None and iq.finite:
        return Verdict(Outcome.POSITIVE, "goldie_maller", {"iq": iq.value}, caveats)
    if iq is None:
        return Verdict(Outcome.UNDETERMINED, "undetermined", {},
                       caveats + ("I_Q unavailable",))

    if profile.m_plus == INF and profile.m_minus == INF and s_hi < INF:
        return Verdict(Outcome.NULL, "main12",
                       {"m_plus": INF, "m_minus": INF, "s_upper": s_hi}, caveats)

    if s_hi < minus_m:
        margin = minus_m - s_hi
        need = 2 * _se(profile, "s_upper", "m_mean")
        w = {"s_upper": s_hi, "minus_m_mean": minus_m}
        if margin > need or not profile.estimated:
            return Verdict(Outcome.NULL, "main11a", w, caveats)
        return Verdict(Outcome.UNDETERMINED, "undetermined", dict(w, margin=margin, needed=need),
                       caveats + ("margin below 2 standard errors",))
    if math.isfinite(m) and s_lo > minus_m:
        margin = s_lo - minus_m
        need = 2 * _se(profile, "s_star", "m_mean")
        w = {"s_star": s_lo, "minus_m_mean": minus_m}
        if margin > need or not profile.estimated:
            return Verdict(Outcome.TRANSIENT, "main11b", w, caveats)
        return Verdict(Outcome.UNDETERMINED, "undetermined", dict(w, margin=margin, needed=need),
                       caveats + ("margin below 2 standard errors",))
    if math.isfinite(m) and s_lo <= minus_m <= s_hi:
        return Verdict(Outcome.BOUNDARY, "boundary",
                       {"s_star": s_lo, "s_upper": s_hi, "minus_m_mean": minus_m},
                       caveats + ("s_* <= -E log M <= s^*: use the series tests",))
    return Verdict(Outcome.UNDETERMINED, "undetermined",
                   {"s_star": s_lo, "s_upper": s_hi, "minus_m_mean": minus_m}, caveats)


# --- series engine ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SeriesReport:
    """Series sum_n b_n with b_n a partial product of factors F_k.

    raabe_stat[i] = n (b_n / b_{n+1} - 1) at n = n_index[i]; the Bertrand
    refinement ln(n) (raabe - 1) decides when the Raabe value is close to 1.
    """
    n_index: np.ndarray
    partial_products: np.ndarray
    partial_sums: np.ndarray
    raabe_stat: np.ndarray
    bertrand_stat: np.ndarray
    decision: str          # divergent | convergent | inconclusive
    interpretation: str
    horizon: int
    caveats: tuple = ()

    def raabe_at(self, n):
        return float(self.raabe_stat[np.searchsorted(self.n_index, n)])

    def to_dict(self):
        return {"decision": self.decision, "interpretation": self.interpretation,
                "horizon": self.horizon, "raabe_last": float(self.raabe_stat[-1]),
                "partial_sum_last": float(self.partial_sums[-1]), "caveats": list(self.caveats)}


def decide_ratio(n, ratio_minus_one, delta=RAABE_DELTA):
    """Raabe then Bertrand decision for terms with a_n / a_{n+1} - 1 = ratio_minus_one over the last decade."""
    n = np.asarray(n, dtype=float)
    raabe = n * ratio_minus_one
    with np.errstate(divide="ignore", invalid="ignore"):
        bertrand = np.log(n) * (raabe - 1.0)
    win = n >= n[-1] / 10
    r = raabe[win]
    if np.all(r <= 1 - delta):
        return "divergent", raabe, bertrand
    if np.all(r >= 1 + delta):
        return "convergent", raabe, bertrand
    b = bertrand[win]
    if np.all(b <= 1 - delta):
        return "divergent", raabe, bertrand
    if np.all(b >= 1 + delta):
        return "convergent", raabe, bertrand
    return "inconclusive", raabe, bertrand


def _series(F, tail, offset, mapping, caveats=()):
    """b_{j + offset} = prod_{k <= j} F_k for j = 0..len(F) - 2; the last factor only feeds the ratio."""
    F = np.asarray(F, dtype=float)
    tail = np.asarray(tail, dtype=float)
    with np.errstate(divide="ignore"):
        prods = np.exp(np.cumsum(np.log(F[:-1])))
    sums = np.cumsum(prods)
    n = np.arange(len(F) - 1) + offset
    # b_n / b_{n+1} - 1 = (1 - F) / F for the next factor
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = tail[1:] / F[1:]
    pos = n > 0
    if np.any(F[:-1] == 0):
        decision = "convergent"
        raabe = n * ratio
        with np.errstate(divide="ignore", invalid="ignore"):
            bertrand = np.log(n) * (raabe - 1)
    else:
        decision, r, b = decide_ratio(n[pos], ratio[pos])
        raabe = np.concatenate([np.zeros((~pos).sum()), r])
        bertrand = np.concatenate([np.full((~pos).sum(), -INF), b])
    return SeriesReport(n, prods, sums, raabe, bertrand, decision,
                        mapping.get(decision, "undecided"), int(n[-1]), tuple(caveats))


def _finite_mean(spec):
    prof = tail_profile(spec)
    m = prof.m_mean
    if not (math.isfinite(m) and m < 0):
        raise PreconditionError("the series criteria need a finite E log M < 0")
    return prof, m


def zerner_series(spec, y, n_max=N_MAX):
    """sum_{n>=0} prod_{k=0}^n P(Q <= y e^{-k m}); divergence means recurrence."""
    if not y > 0:
        raise PreconditionError("y must be positive")
    sup = spec.m_law.support_log
    if sup is None or not (math.isfinite(sup[0]) and math.isfinite(sup[1])):
        raise PreconditionUnbounded("M must be supported in a compact [a, b] inside (0, inf)")
    prof, m = _finite_mean(spec)
    if not spec.q_law.cdf_log(math.log(y)) > 0:
        raise PreconditionError("P(Q <= y) must be positive")
    t = math.log(y) - np.arange(n_max + 1) * m
    caveats = []
    rho = (spec.q_law.plus_class or (0.0, 0.0))[0]
    if not (rho > 2.0 / 3.0 or prof.s_star > -m):
        caveats.append("tail-side condition of the criterion not verified")
    return _series(spec.q_law.cdf_log(t), spec.q_law.tail_log(t), 0,
                   {"divergent": "recurrent", "convergent": "transient"}, caveats)


def boundary_series(spec, x=0.0, n_max=N_MAX):
    """sum_{n>=1} prod_{k=0}^{n-1} F(x - m k) for degenerate M = e^m."""
    if not spec.m_law.discrete or len(spec.m_law._atoms()[0]) != 1:
        raise PreconditionNotDegenerateM("the boundary series needs M degenerate at e^m")
    _, m = _finite_mean(spec)
    t = x - np.arange(n_max + 1) * m
    return _series(spec.q_law.cdf_log(t), spec.q_law.tail_log(t), 1,
                   {"divergent": "null_recurrent", "convergent": "transient"})


@dataclass(frozen=True)
class TestOutcome:
    decision: str
    witness: dict = field(default_factory=dict)
    caveats: tuple = ()

    __test__ = False

    def to_dict(self):
        return {"decision": self.decision, "witness": dict(self.witness), "caveats": list(self.caveats)}


def bertrand_test(tail_fn, m_mean, t_grid):
    """f(x) = (1 - F(x) + m/x) x log x compared with -m over the top decade of the grid."""
    if not (math.isfinite(m_mean) and m_mean < 0):
        raise PreconditionError("needs a finite E log M < 0")
    x = np.asarray(t_grid, dtype=float)
    if np.any(x <= 1):
        raise PreconditionError("grid points must exceed 1")
    f = (np.asarray(tail_fn(x), dtype=float) + m_mean / x) * x * np.log(x)
    top = f[x >= x[-1] / 10]
    osc = float(np.max(np.abs(np.diff(top)))) if len(top) > 1 else 0.0
    margin = 2 * osc
    w = {"f_min": float(top.min()), "f_max": float(top.max()), "minus_m_mean": -m_mean, "margin": margin}
    if top.max() + margin < -m_mean:
        return TestOutcome("null_recurrent", w)
    if top.min() - margin > -m_mean:
        return TestOutcome("transient", w)
    return TestOutcome("inconclusive", w)


def kummer_test(F, m_mean, p_sequence, n_max=10 ** 6):
    """F(-m k) >= p_k / p_{k+1} for k <= n_max and divergence of sum 1/p_k."""
    k = np.arange(1, n_max + 2, dtype=float)
    p = np.asarray(p_sequence(k), dtype=float)
    Fk = np.asarray(F(-m_mean * k[:-1]), dtype=float)
    ratio = p[:-1] / p[1:]
    ok = Fk >= ratio * (1 - 1e-15)
    first_bad = int(np.flatnonzero(~ok)[0] + 1) if not ok.all() else None
    # terms a_k = 1/p_k: a_k / a_{k+1} - 1 = p_{k+1} / p_k - 1
    div, raabe, _ = decide_ratio(k[:-1], p[1:] / p[:-1] - 1.0)
    w = {"first_failure": first_bad, "sum_inverse_p": div, "raabe_last": float(raabe[-1])}
    caveat = (f"conditions checked up to k = {n_max} only",)
    if ok.all() and div == "divergent":
        return TestOutcome("null_recurrent", w, caveat)
    return TestOutcome("not_established", w, caveat)


def kellerer_check(gamma, profile, m_law, tol=1e-12):
    """Transient if M >= gamma and s_* > log(1/gamma); null recurrent if M <= gamma and s^* < log(1/gamma)."""
    if not 0 < gamma < 1:
        raise PreconditionError("gamma must lie in (0, 1)")
    sup = getattr(m_law, "support_log", None)
    if sup is None:
        raise SupportConditionUnverifiable("the M family has no certified support bounds")
    lg = math.log(gamma)
    above = sup[0] >= lg - tol
    below = sup[1] <= lg + tol
    if not (above or below):
        raise PreconditionError("neither M >= gamma nor M <= gamma holds almost surely")
    level = -lg
    w = {"s_star": profile.s_star, "s_upper": profile.s_upper, "log_inv_gamma": level}
    if above and profile.s_star > level:
        return TestOutcome("transient", w)
    if below and profile.s_upper < level:
        return TestOutcome("null_recurrent", w)
    return TestOutcome("outside_scope", w)
