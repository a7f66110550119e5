"""Laws of the pair (M, Q).

Every marginal law works with log V, so V = 0 is represented by log V = -inf
and huge values never overflow. Each family has a sampler, the CDF/tail/
quantile of log V, the truncated mean E min(y, log_- V), and an asymptotic
tail class used to decide convergence of the J-integrals.

Tail class (rho, kappa) of a side means P(side > t) is of order
t^-rho (log t)^-kappa; rho = inf for bounded or exponentially light tails,
rho = 0 for an atom sitting at the end of the line (V = 0 on the negative side).
"""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .errors import DegenerateM, InsufficientTailData, NotContractive, PreconditionError
from .rng import stream

INF = math.inf
LIGHT = (INF, 0.0)
U_MAX = 700.0


def _arr(t):
    return np.asarray(t, dtype=float)


def _ret(x, like):
    return float(x) if np.ndim(like) == 0 else x


def open_uniform(rng, size):
    """Uniforms in the open interval (0, 1)."""
    return (rng.integers(0, 2 ** 53, size=size) + 0.5) / 2.0 ** 53


class MarginalLaw:
    """Base class. Subclasses are frozen dataclasses."""

    discrete = False
    support_log = None      # (lo, hi) certified bounds of log V, None if unknown
    plus_class = None       # tail class of log_+ V
    minus_class = None      # tail class of log_- V
    s_limits = (0.0, 0.0)   # liminf / limsup of t P(log V > t)

    @property
    def family(self):
        return type(self).__name__

    def sample(self, rng, size):
        with np.errstate(over="ignore"):
            return np.exp(self.sample_log(rng, size))

    def cdf(self, v):
        v = _arr(v)
        with np.errstate(divide="ignore"):
            lv = np.where(v > 0, np.log(np.where(v > 0, v, 1.0)), -INF)
        out = np.where(v < 0, 0.0, self.cdf_log(lv))
        return _ret(out, v)

    def tail_log(self, t):
        return _ret(1.0 - _arr(self.cdf_log(t)), t)

    def ppf_log(self, u):
        """Generic quantile by bisection on cdf_log."""
        u = _arr(u)
        lo = np.full(u.shape, -1.0)
        hi = np.full(u.shape, 1.0)
        p0 = self.prob_zero
        for _ in range(2000):
            need = self.cdf_log(lo) >= u
            if not np.any(need & (u > p0)):
                break
            lo = np.where(need, 2 * lo, lo)
        for _ in range(2000):
            need = self.cdf_log(hi) < u
            if not np.any(need):
                break
            hi = np.where(need, 2 * hi, hi)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            left = self.cdf_log(mid) >= u
            hi = np.where(left, mid, hi)
            lo = np.where(left, lo, mid)
        out = np.where(u <= p0, -INF, hi)
        return _ret(out, u)

    @property
    def prob_zero(self):
        return 0.0

    def expect(self, g):
        """E g(log V) by quadrature in the quantile variable."""
        p0 = self.prob_zero
        val = p0 * g(-INF) if p0 > 0 else 0.0
        if p0 < 1:
            r, _ = integrate.quad(lambda u: g(float(self.ppf_log(u))), p0, 1.0, limit=400)
            val += r
        return val

    def to_dict(self):
        d = {"family": self.family}
        d.update(self._params())
        return d


class _Atomic(MarginalLaw):
    discrete = True
    plus_class = LIGHT
    minus_class = LIGHT

    def atoms(self):
        raise NotImplementedError

    def _atoms(self):
        lv, p = self.atoms()
        lv, p = np.asarray(lv, float), np.asarray(p, float)
        keep = p > 0
        return lv[keep], p[keep]

    @property
    def support_log(self):
        lv, _ = self._atoms()
        return float(lv.min()), float(lv.max())

    @property
    def minus_class(self):
        return (0.0, 0.0) if self.prob_zero > 0 else LIGHT

    @property
    def prob_zero(self):
        lv, p = self._atoms()
        return float(p[np.isneginf(lv)].sum())

    def sample_log(self, rng, size):
        lv, p = self._atoms()
        if len(lv) == 1:
            return np.full(size, lv[0])
        idx = np.searchsorted(np.cumsum(p)[:-1], rng.random(size), side="right")
        return lv[idx]

    def cdf_log(self, t):
        lv, p = self._atoms()
        t = _arr(t)
        out = (p * (lv <= t[..., None])).sum(axis=-1)
        return _ret(np.minimum(out, 1.0), t)

    def tail_log(self, t):
        lv, p = self._atoms()
        t = _arr(t)
        return _ret((p * (lv > t[..., None])).sum(axis=-1), t)

    def ppf_log(self, u):
        lv, p = self._atoms()
        order = np.argsort(lv)
        lv, p = lv[order], p[order]
        cp = np.cumsum(p)
        cp[-1] = 1.0
        u = _arr(u)
        idx = np.minimum(np.searchsorted(cp, u, side="left"), len(lv) - 1)
        return _ret(lv[idx], u)

    @property
    def mean_log_plus(self):
        lv, p = self._atoms()
        return float((p * np.maximum(lv, 0.0)).sum())

    @property
    def mean_log_minus(self):
        lv, p = self._atoms()
        return float((p * np.maximum(-lv, 0.0)).sum())

    def trunc_log_minus_mean(self, y):
        lv, p = self._atoms()
        y = _arr(y)
        out = (p * np.minimum(y[..., None], np.maximum(-lv, 0.0))).sum(axis=-1)
        return _ret(out, y)

    def expect(self, g):
        lv, p = self._atoms()
        return float(sum(pi * g(li) for li, pi in zip(lv, p)))


def _log_or_neginf(v):
    return math.log(v) if v > 0 else -INF


@dataclass(frozen=True)
class PointMass(_Atomic):
    """V = v."""
    v: float
    log_v: float = None

    def __post_init__(self):
        if self.v < 0:
            raise PreconditionError("PointMass needs v >= 0")
        if self.log_v is None:
            object.__setattr__(self, "log_v", _log_or_neginf(self.v))

    @classmethod
    def from_log(cls, log_v):
        return cls(math.exp(log_v), float(log_v))

    def atoms(self):
        return [self.log_v], [1.0]

    def _params(self):
        return {"v": self.v, "log_v": self.log_v}


@dataclass(frozen=True)
class TwoPoint(_Atomic):
    """V = v1 with probability p1, else v2."""
    v1: float
    p1: float
    v2: float
    log_v1: float = None
    log_v2: float = None

    def __post_init__(self):
        if min(self.v1, self.v2) < 0 or not 0 <= self.p1 <= 1:
            raise PreconditionError("TwoPoint needs v1, v2 >= 0 and p1 in [0, 1]")
        if self.log_v1 is None:
            object.__setattr__(self, "log_v1", _log_or_neginf(self.v1))
        if self.log_v2 is None:
            object.__setattr__(self, "log_v2", _log_or_neginf(self.v2))

    @classmethod
    def from_logs(cls, l1, p1, l2):
        return cls(math.exp(l1), p1, math.exp(l2), float(l1), float(l2))

    def atoms(self):
        return [self.log_v1, self.log_v2], [self.p1, 1.0 - self.p1]

    def _params(self):
        return {"v1": self.v1, "p1": self.p1, "v2": self.v2,
                "log_v1": self.log_v1, "log_v2": self.log_v2}


@dataclass(frozen=True)
class Discrete(_Atomic):
    """Finitely many atoms, given by their logs (-inf for V = 0)."""
    log_values: tuple
    probs: tuple

    def __post_init__(self):
        object.__setattr__(self, "log_values", tuple(float(x) for x in self.log_values))
        object.__setattr__(self, "probs", tuple(float(x) for x in self.probs))
        if len(self.log_values) != len(self.probs) or not self.probs:
            raise PreconditionError("need matching, nonempty values and probabilities")
        if min(self.probs) < 0 or abs(sum(self.probs) - 1) > 1e-12:
            raise PreconditionError("probabilities must be >= 0 and sum to 1")

    def atoms(self):
        return list(self.log_values), list(self.probs)

    def _params(self):
        return {"log_values": list(self.log_values), "probs": list(self.probs)}


@dataclass(frozen=True)
class LogTail(MarginalLaw):
    """P(log V > t) = s / (s + t) for t >= t1; below t1 the mass sits at V = 0."""
    s: float
    t1: float = 1.0

    def __post_init__(self):
        if not self.s > 0 or self.t1 < 0:
            raise PreconditionError("LogTail needs s > 0 and t1 >= 0")

    @property
    def prob_zero(self):
        return self.t1 / (self.s + self.t1)

    @property
    def support_log(self):
        return (-INF if self.t1 > 0 else 0.0), INF

    plus_class = (1.0, 0.0)

    @property
    def minus_class(self):
        return (0.0, 0.0) if self.t1 > 0 else LIGHT

    @property
    def s_limits(self):
        return self.s, self.s

    def sample_log(self, rng, size):
        u = 1.0 - rng.random(size)
        lv = self.s * (1.0 - u) / u
        lv[lv < self.t1] = -INF
        return lv

    def cdf_log(self, t):
        t = _arr(t)
        with np.errstate(invalid="ignore", divide="ignore"):
            body = t / (self.s + t)
        return _ret(np.where(t < self.t1, self.prob_zero, body), t)

    def tail_log(self, t):
        t = _arr(t)
        with np.errstate(invalid="ignore", divide="ignore"):
            body = self.s / (self.s + t)
        return _ret(np.where(t < self.t1, self.s / (self.s + self.t1), body), t)

    def ppf_log(self, u):
        u = _arr(u)
        with np.errstate(divide="ignore", invalid="ignore"):
            body = self.s * u / (1.0 - u)
        return _ret(np.where(u <= self.prob_zero, -INF, np.where(u >= 1, INF, body)), u)

    mean_log_plus = INF

    @property
    def mean_log_minus(self):
        return INF if self.t1 > 0 else 0.0

    def trunc_log_minus_mean(self, y):
        return _ret(self.prob_zero * _arr(y), y)

    def _params(self):
        return {"s": self.s, "t1": self.t1}


@dataclass(frozen=True)
class LogExponential(MarginalLaw):
    """log V = sign * E with E ~ Exp(lam)."""
    lam: float
    sign: int = -1

    def __post_init__(self):
        if not self.lam > 0 or self.sign not in (-1, 1):
            raise PreconditionError("LogExponential needs lam > 0 and sign in {-1, +1}")

    @property
    def support_log(self):
        return (0.0, INF) if self.sign > 0 else (-INF, 0.0)

    plus_class = LIGHT
    minus_class = LIGHT

    def sample_log(self, rng, size):
        return self.sign * rng.exponential(1.0 / self.lam, size)

    def cdf_log(self, t):
        t = _arr(t)
        if self.sign > 0:
            out = np.where(t < 0, 0.0, -np.expm1(-self.lam * np.maximum(t, 0.0)))
        else:
            out = np.where(t >= 0, 1.0, np.exp(self.lam * np.minimum(t, 0.0)))
        return _ret(out, t)

    def tail_log(self, t):
        t = _arr(t)
        if self.sign > 0:
            out = np.where(t < 0, 1.0, np.exp(-self.lam * np.maximum(t, 0.0)))
        else:
            out = np.where(t >= 0, 0.0, -np.expm1(self.lam * np.minimum(t, 0.0)))
        return _ret(out, t)

    def ppf_log(self, u):
        u = _arr(u)
        with np.errstate(divide="ignore"):
            out = -np.log1p(-u) / self.lam if self.sign > 0 else np.log(u) / self.lam
        return _ret(out, u)

    @property
    def mean_log_plus(self):
        return 1.0 / self.lam if self.sign > 0 else 0.0

    @property
    def mean_log_minus(self):
        return 1.0 / self.lam if self.sign < 0 else 0.0

    def trunc_log_minus_mean(self, y):
        y = _arr(y)
        out = -np.expm1(-self.lam * y) / self.lam if self.sign < 0 else np.zeros_like(y)
        return _ret(out, y)

    def _params(self):
        return {"lam": self.lam, "sign": self.sign}


@dataclass(frozen=True)
class LogStableHeavy(MarginalLaw):
    """Heavy two-sided log law with a.s. drift to -inf.

    With probability 1 - p_pos, log V = 1 - L where P(L > u) = (1 + u)^-alpha,
    so log V <= 1 and P(log_- V > t) = (2 + t)^-alpha. With probability p_pos,
    log V = P >= 0 where P(P > t) = 1 / (t log t) for t >= e and P is uniform
    on [0, e) otherwise. For alpha <= 1 both means of log_+- V can be infinite
    while the Erickson integral stays finite.
    """
    alpha: float = 0.5
    p_pos: float = 0.0

    def __post_init__(self):
        if not 0 < self.alpha <= 1 or not 0 <= self.p_pos < 1:
            raise PreconditionError("LogStableHeavy needs 0 < alpha <= 1 and 0 <= p_pos < 1")

    @property
    def support_log(self):
        return -INF, (INF if self.p_pos > 0 else 1.0)

    @property
    def plus_class(self):
        return (1.0, 1.0) if self.p_pos > 0 else LIGHT

    @property
    def minus_class(self):
        return (self.alpha, 0.0)

    def sample_log(self, rng, size):
        u = 1.0 - rng.random(size)
        out = 1.0 - (u ** (-1.0 / self.alpha) - 1.0)
        if self.p_pos > 0:
            pos = rng.random(size) < self.p_pos
            w = 1.0 - rng.random(int(pos.sum()))
            far = w <= math.exp(-1)
            v = 1.0 / w[far]
            lp = np.empty_like(w)
            lp[far] = v / special.lambertw(v).real
            lp[~far] = math.e * (1.0 - w[~far]) / (1.0 - math.exp(-1))
            out[pos] = lp
        return out

    def _pos_cdf(self, t):
        with np.errstate(divide="ignore", invalid="ignore"):
            far = 1.0 - 1.0 / (t * np.log(t))
        body = (1.0 - math.exp(-1)) * t / math.e
        return np.where(t < 0, 0.0, np.where(t < math.e, body, far))

    def cdf_log(self, t):
        t = _arr(t)
        with np.errstate(invalid="ignore"):
            neg = np.where(t >= 1, 1.0, (2.0 - np.minimum(t, 1.0)) ** (-self.alpha))
        out = (1 - self.p_pos) * neg
        if self.p_pos > 0:
            out = out + self.p_pos * self._pos_cdf(t)
        return _ret(out, t)

    def tail_log(self, t):
        t = _arr(t)
        neg = np.where(t >= 1, 0.0, 1.0 - (2.0 - np.minimum(t, 1.0)) ** (-self.alpha))
        out = (1 - self.p_pos) * neg
        if self.p_pos > 0:
            with np.errstate(divide="ignore", invalid="ignore"):
                far = 1.0 / (t * np.log(t))
            pos = np.where(t < 0, 1.0, np.where(t < math.e, 1.0 - (1.0 - math.exp(-1)) * t / math.e, far))
            out = out + self.p_pos * pos
        return _ret(out, t)

    @property
    def mean_log_plus(self):
        if self.p_pos > 0:
            return INF
        a = self.alpha
        inner = math.log(2.0) if a == 1 else (2.0 ** (1 - a) - 1.0) / (1 - a)
        return 1.0 - inner

    mean_log_minus = INF

    def trunc_log_minus_mean(self, y):
        y = _arr(y)
        a = self.alpha
        if a == 1:
            out = np.log((2.0 + y) / 2.0)
        else:
            out = ((2.0 + y) ** (1 - a) - 2.0 ** (1 - a)) / (1 - a)
        return _ret((1 - self.p_pos) * out, y)

    def _params(self):
        return {"alpha": self.alpha, "p_pos": self.p_pos}


@dataclass(frozen=True)
class Truncated(MarginalLaw):
    """V' = V 1{V > beta}."""
    base: MarginalLaw
    beta: float

    def __post_init__(self):
        if not self.beta > 0:
            raise PreconditionError("Truncated needs beta > 0")

    @property
    def _lb(self):
        return math.log(self.beta)

    @property
    def discrete(self):
        return self.base.discrete

    def atoms(self):
        lv, p = self.base._atoms()
        cut = lv <= self._lb
        lv = np.where(cut, -INF, lv)
        return list(lv), list(p)

    def _atoms(self):
        lv, p = self.atoms()
        lv, p = np.asarray(lv), np.asarray(p)
        keep = p > 0
        return lv[keep], p[keep]

    @property
    def prob_zero(self):
        return float(self.base.cdf_log(self._lb))

    @property
    def support_log(self):
        sup = self.base.support_log
        if sup is None:
            return None
        lo, hi = sup
        if hi <= self._lb:
            return -INF, -INF
        return (-INF if self.prob_zero > 0 else lo), hi

    @property
    def plus_class(self):
        return self.base.plus_class

    @property
    def minus_class(self):
        return (0.0, 0.0) if self.prob_zero > 0 else self.base.minus_class

    @property
    def s_limits(self):
        return self.base.s_limits

    def sample_log(self, rng, size):
        lv = self.base.sample_log(rng, size)
        lv[lv <= self._lb] = -INF
        return lv

    def cdf_log(self, t):
        t = _arr(t)
        out = np.where(t < self._lb, self.prob_zero, self.base.cdf_log(np.maximum(t, self._lb)))
        return _ret(out, t)

    def tail_log(self, t):
        t = _arr(t)
        return _ret(self.base.tail_log(np.maximum(t, self._lb)), t)

    def ppf_log(self, u):
        u = _arr(u)
        return _ret(np.where(u <= self.prob_zero, -INF, self.base.ppf_log(u)), u)

    @property
    def mean_log_plus(self):
        if self.base.mean_log_plus == INF:
            return INF
        lb = self._lb
        return self.base.expect(lambda l: max(l, 0.0) if l > lb else 0.0)

    @property
    def mean_log_minus(self):
        return INF if self.prob_zero > 0 else self.base.mean_log_minus

    def trunc_log_minus_mean(self, y):
        lb = self._lb
        y = _arr(y)
        out = np.array([self.base.expect(lambda l, yy=yy: min(yy, max(-l, 0.0)) if l > lb else yy)
                        for yy in np.atleast_1d(y)])
        return _ret(out.reshape(y.shape), y)

    def expect(self, g):
        lb = self._lb
        return self.base.expect(lambda l: g(l) if l > lb else g(-INF))

    def to_dict(self):
        return {"family": "Truncated", "base": self.base.to_dict(), "beta": self.beta}


def tilt_weight(kind, c1, x):
    """Unnormalized tilting weight at x = log v: f/c0 for kind "m", h/c2 for kind "q"."""
    x = _arr(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        if kind == "m":
            out = np.where(x < -1, 1.0 / np.abs(x), np.where(x < 0, 1.0, np.where(x < 1, c1, c1 / x)))
            out = np.where(np.isneginf(x), 0.0, out)
        else:
            out = np.where(x < 1, 1.0, 1.0 / x)
            out = np.where(np.isposinf(x), 0.0, out)
    return _ret(out, x)


def _shift_class(c):
    if c is None or c[0] == INF:
        return c
    return c[0] + 1.0, c[1]


@dataclass(frozen=True)
class Tilted(MarginalLaw):
    """Law of log V reweighted by tilt_weight(kind, c1, .), for continuous bases."""
    base: MarginalLaw
    kind: str
    c1: float = 1.0

    def __post_init__(self):
        if self.kind not in ("m", "q") or not self.c1 > 0:
            raise PreconditionError("Tilted needs kind in {m, q} and c1 > 0")
        if self.base.discrete:
            raise PreconditionError("discrete laws are reweighted exactly, use Discrete")

    def _w(self, x):
        return tilt_weight(self.kind, self.c1, x)

    def _wg(self, g):
        def f(x):
            w = self._w(x)
            return 0.0 if w == 0 else w * g(x)
        return f

    @property
    def _z(self):
        z = self.__dict__.get("_zc")
        if z is None:
            z = self.base.expect(self._w)
            object.__setattr__(self, "_zc", z)
        return z

    @property
    def w_max(self):
        return max(1.0, self.c1) if self.kind == "m" else 1.0

    @property
    def prob_zero(self):
        return self.base.prob_zero * self._w(-INF) / self._z

    @property
    def support_log(self):
        return self.base.support_log

    @property
    def plus_class(self):
        return _shift_class(self.base.plus_class)

    @property
    def minus_class(self):
        c = self.base.minus_class
        return _shift_class(c) if self.kind == "m" else c

    @property
    def s_limits(self):
        c = self.plus_class
        if c is None:
            return 0.0, INF
        rho, kappa = c
        if rho > 1 or (rho == 1 and kappa > 0):
            return 0.0, 0.0
        if rho < 1 or kappa < 0:
            return INF, INF
        return 0.0, INF

    def sample_log(self, rng, size):
        out = np.empty(size)
        filled = 0
        while filled < size:
            n = max(2 * (size - filled), 64)
            x = self.base.sample_log(rng, n)
            keep = x[rng.random(n) * self.w_max < self._w(x)]
            k = min(len(keep), size - filled)
            out[filled:filled + k] = keep[:k]
            filled += k
        return out

    def _mass(self, u_lo, u_hi):
        p0 = self.base.prob_zero
        val = 0.0
        if u_lo <= p0 and p0 > 0:
            val += p0 * self._w(-INF)
        a, b = max(u_lo, p0), u_hi
        if b > a:
            r, _ = integrate.quad(lambda u: self._w(float(self.base.ppf_log(u))), a, b, limit=400)
            val += r
        return val / self._z

    def cdf_log(self, t):
        t = _arr(t)
        out = np.array([self._mass(0.0, float(self.base.cdf_log(tt))) for tt in np.atleast_1d(t)])
        return _ret(np.minimum(out.reshape(t.shape), 1.0), t)

    def tail_log(self, t):
        t = _arr(t)
        out = np.array([self._mass(float(self.base.cdf_log(tt)), 1.0) if self.base.cdf_log(tt) > self.base.prob_zero
                        else 1.0 - self._mass(0.0, float(self.base.cdf_log(tt)))
                        for tt in np.atleast_1d(t)])
        return _ret(np.maximum(out.reshape(t.shape), 0.0), t)

    @property
    def mean_log_plus(self):
        return self.expect(lambda x: max(x, 0.0))

    @property
    def mean_log_minus(self):
        if self.prob_zero > 0:
            return INF
        return self.expect(lambda x: max(-x, 0.0))

    def trunc_log_minus_mean(self, y):
        y = _arr(y)
        out = np.array([self.expect(lambda x, yy=yy: min(yy, max(-x, 0.0))) for yy in np.atleast_1d(y)])
        return _ret(out.reshape(y.shape), y)

    def expect(self, g):
        return self.base.expect(self._wg(g)) / self._z

    def to_dict(self):
        return {"family": "Tilted", "base": self.base.to_dict(), "kind": self.kind, "c1": self.c1}


FAMILIES = {c.__name__: c for c in
            (PointMass, TwoPoint, Discrete, LogTail, LogExponential, LogStableHeavy, Truncated, Tilted)}


def law_from_dict(d):
    d = dict(d)
    name = d.pop("family")
    if name not in FAMILIES:
        raise KeyError(f"unknown family {name!r}")
    if name == "Truncated":
        return Truncated(law_from_dict(d["base"]), d["beta"])
    if name == "Tilted":
        return Tilted(law_from_dict(d["base"]), d["kind"], d.get("c1", 1.0))
    if name == "Discrete":
        return Discrete(tuple(d["log_values"]), tuple(d["probs"]))
    return FAMILIES[name](**d)


# --- convergence classes of the J-integrals -------------------------------

def j_growth(minus_class):
    """(a, b) with J_-(x) of order x^a (log x)^b, or None when not classified."""
    if minus_class is None:
        return None
    rho, kappa = minus_class
    if rho > 1 or (rho == 1 and kappa > 1):
        return 1.0, 0.0
    if rho == 1 and kappa < 1:
        return 1.0, kappa - 1.0
    if rho == 1:
        return None
    return rho, kappa


def integral_is_finite(growth, plus_class):
    """Whether int_(1,inf) J dF is finite, for J of the given growth and F of the given tail class."""
    if growth is None or plus_class is None:
        return None
    a, b = growth
    rho, kappa = plus_class
    if rho == INF:
        return True
    if a != rho:
        return a < rho
    return b - kappa < -1


@dataclass(frozen=True)
class IntegralValue:
    divergent: bool
    value: float
    method: str   # closed_form | atoms | quadrature | truncation_heuristic

    @property
    def finite(self):
        return not self.divergent

    def to_dict(self):
        return {"divergent": self.divergent, "value": self.value, "method": self.method}


# --- specs ---------------------------------------------------------------

DEPENDENCE = ("independent", "comonotone")


def _mean_log_m(m_law):
    mp, mm = m_law.mean_log_plus, m_law.mean_log_minus
    if mp < INF or mm < INF:
        return mp - mm
    return None


@dataclass(frozen=True)
class DistributionSpec:
    """Law of (M, Q) with P(M = 0) = 0 and Pi_n -> 0 almost surely."""
    m_law: MarginalLaw
    q_law: MarginalLaw
    dependence: str = "independent"

    def __post_init__(self):
        if self.dependence not in DEPENDENCE:
            raise PreconditionError(f"dependence must be one of {DEPENDENCE}")
        if self.m_law.prob_zero > 0:
            raise PreconditionError("P(M = 0) > 0 is excluded (trivial case a)")
        mean = _mean_log_m(self.m_law)
        if mean is not None and not mean < 0:
            raise NotContractive(
                f"E log M = {mean} >= 0 violates the standing assumption Pi_n -> 0 a.s.")
        if mean is None:
            growth = j_growth(self.m_law.minus_class)
            if integral_is_finite(growth, self.m_law.plus_class) is not True:
                raise NotContractive(
                    "E log_+ M = E log_- M = inf and I_M is not certified finite, "
                    "so Pi_n -> 0 a.s. cannot be guaranteed")

    def sample_log_pairs(self, rng, size):
        if self.dependence == "comonotone":
            u = open_uniform(rng, size)
            return _arr(self.m_law.ppf_log(u)), _arr(self.q_law.ppf_log(u))
        return self.m_law.sample_log(rng, size), self.q_law.sample_log(rng, size)

    def sample_pairs(self, rng, size):
        lm, lq = self.sample_log_pairs(rng, size)
        with np.errstate(over="ignore"):
            return np.exp(lm), np.exp(lq)

    def to_dict(self):
        return {"kind": "distribution", "m_law": self.m_law.to_dict(),
                "q_law": self.q_law.to_dict(), "dependence": self.dependence}


@dataclass(frozen=True)
class FiniteSupportSpec:
    """A law of (M, Q) on finitely many affine maps (m, q)."""
    atoms: tuple   # ((AffineMap, prob), ...)

    def __post_init__(self):
        atoms = tuple((g, float(p)) for g, p in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        if not atoms:
            raise PreconditionError("need at least one atom")
        probs = np.array([p for _, p in atoms])
        if probs.min() < 0 or abs(probs.sum() - 1) > 1e-12:
            raise PreconditionError("atom probabilities must be >= 0 and sum to 1")
        for g, _ in atoms:
            if not g.m > 0 or g.q < 0:
                raise PreconditionError("atoms need m > 0 and q >= 0")

    @classmethod
    def uniform(cls, maps):
        maps = list(maps)
        return cls(tuple((g, 1.0 / len(maps)) for g in maps))

    @property
    def generators(self):
        return [g for g, _ in self.atoms]

    @property
    def probs(self):
        return np.array([p for _, p in self.atoms])

    @property
    def log_m(self):
        return np.log([g.m for g in self.generators])

    @property
    def log_q(self):
        with np.errstate(divide="ignore"):
            return np.log([g.q for g in self.generators])

    @property
    def m_law(self):
        return Discrete(tuple(self.log_m), tuple(self.probs))

    @property
    def q_law(self):
        return Discrete(tuple(self.log_q), tuple(self.probs))

    def sample_log_pairs(self, rng, size):
        p = self.probs
        if len(p) == 1:
            idx = np.zeros(size, dtype=np.int64)
        else:
            idx = np.searchsorted(np.cumsum(p)[:-1], rng.random(size), side="right")
        return self.log_m[idx], self.log_q[idx]

    def sample_pairs(self, rng, size):
        lm, lq = self.sample_log_pairs(rng, size)
        return np.exp(lm), np.exp(lq)

    def to_dict(self):
        return {"kind": "finite_support",
                "atoms": [{"m": g.m, "q": g.q, "p": p} for g, p in self.atoms]}


def spec_from_dict(d):
    from .affine import AffineMap
    kind = d.get("kind", "distribution")
    if kind == "finite_support":
        return FiniteSupportSpec(tuple((AffineMap(a["m"], a["q"]), a["p"]) for a in d["atoms"]))
    if kind != "distribution":
        raise KeyError(f"unknown spec kind {kind!r}")
    return DistributionSpec(law_from_dict(d["m_law"]), law_from_dict(d["q_law"]),
                            d.get("dependence", "independent"))


# --- functionals -----------------------------------------------------------

def j_minus(spec, y):
    """J_-(y) = y / E min(y, log_- M)."""
    y = _arr(y)
    if np.any(y <= 0):
        raise PreconditionError("y must be positive")
    a = _arr(spec.m_law.trunc_log_minus_mean(y))
    if np.any(a <= 0):
        raise DegenerateM("log_- M = 0 a.s., so E min(y, log_- M) vanishes")
    return _ret(y / a, y)


def _j_prime(m_law, x):
    a = m_law.trunc_log_minus_mean(x)
    da = m_law.cdf_log(-x)
    return (a - x * da) / (a * a)


def _integral_by_parts(spec, law, lo, hi, kinks=()):
    """int_(lo, hi] J'(x) P(log V > x) dx over [lo, hi], split at kinks."""
    pts = [lo] + [k for k in sorted(kinks) if lo < k < hi] + [hi]
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        r, _ = integrate.quad(lambda x: _j_prime(spec.m_law, x) * law.tail_log(x), a, b, limit=400)
        total += r
    return total


def _m_kinks(m_law):
    if m_law.discrete:
        lv, _ = m_law._atoms()
        return [-v for v in lv if np.isfinite(v) and v < 0]
    return []


def _j_integral(spec, law, method="auto"):
    if float(law.tail_log(1.0)) == 0.0:
        return IntegralValue(False, 0.0, "closed_form")
    j_minus(spec, 1.0)
    if method == "auto":
        fin = integral_is_finite(j_growth(spec.m_law.minus_class), law.plus_class)
        if fin is False:
            return IntegralValue(True, INF, "closed_form")
        if fin is None:
            method = "truncation_heuristic"
    if method == "truncation_heuristic":
        return _iq_heuristic(spec, law)
    if law.discrete:
        lv, p = law._atoms()
        sel = lv > 1
        val = float((p[sel] * _arr(j_minus(spec, lv[sel]))).sum()) if sel.any() else 0.0
        return IntegralValue(False, val, "atoms")
    head = float(j_minus(spec, 1.0)) * float(law.tail_log(1.0))
    kinks = _m_kinks(spec.m_law)
    body = _integral_by_parts(spec, law, 1.0, max(kinks + [1.0]), kinks) if kinks else 0.0
    # x = e^u turns polynomial tails into exponential ones; the mass beyond
    # e^U_MAX is below double resolution for every tail class we accept
    r, _ = integrate.quad(lambda u: _j_prime(spec.m_law, math.exp(u)) * law.tail_log(math.exp(u)) * math.exp(u),
                          math.log(max(kinks + [1.0])), U_MAX, limit=400)
    return IntegralValue(False, head + body + r, "quadrature")


def _iq_heuristic(spec, law, tol=1e-9, cap=1e6, t_max=1e300):
    """Doubling truncation: grow T until the increment is tiny (finite) or keeps not decaying."""
    head = float(j_minus(spec, 1.0)) * float(law.tail_log(1.0))
    kinks = _m_kinks(spec.m_law)
    total = head
    incs = []
    lo, hi = 1.0, 2.0
    while hi < t_max:
        inc = _integral_by_parts(spec, law, lo, hi, kinks)
        total += inc
        incs.append(inc)
        if inc < tol:
            tail_term = float(j_minus(spec, hi)) * float(law.tail_log(hi))
            return IntegralValue(False, total - tail_term, "truncation_heuristic")
        if total > cap:
            return IntegralValue(True, INF, "truncation_heuristic")
        if len(incs) >= 12 and min(incs[-6:]) >= 0.5 * max(incs[-12:-6]):
            return IntegralValue(True, INF, "truncation_heuristic")
        lo, hi = hi, 2 * hi
    return IntegralValue(True, INF, "truncation_heuristic")


def compute_iq(spec, method="auto"):
    """I_Q = int_(1,inf) J_-(x) P(log Q in dx)."""
    return _j_integral(spec, spec.q_law, method)


def compute_im(spec, method="auto"):
    """I_M = int_(1,inf) J_-(x) P(log M in dx)."""
    return _j_integral(spec, spec.m_law, method)


@dataclass(frozen=True)
class TailProfile:
    m_mean: float
    m_plus: float
    m_minus: float
    s_star: float
    s_upper: float
    s_exists: bool
    iq: IntegralValue
    im: IntegralValue
    r_star: float
    tags: dict = field(default_factory=dict)   # field -> exact | estimated | unavailable
    se: dict = field(default_factory=dict)     # field -> standard error for estimated fields

    @property
    def estimated(self):
        return any(v == "estimated" for v in self.tags.values())

    def to_dict(self):
        d = {k: getattr(self, k) for k in ("m_mean", "m_plus", "m_minus", "s_star",
                                           "s_upper", "s_exists", "r_star")}
        d["iq"] = None if self.iq is None else self.iq.to_dict()
        d["im"] = None if self.im is None else self.im.to_dict()
        d["tags"] = dict(self.tags)
        d["se"] = dict(self.se)
        return d


_FIELDS = ("m_mean", "m_plus", "m_minus", "s_star", "s_upper", "iq", "im", "r_star")


def tail_profile(spec):
    m_law, q_law = spec.m_law, spec.q_law
    mp, mm = m_law.mean_log_plus, m_law.mean_log_minus
    mean = _mean_log_m(m_law)
    if mean is None:
        mean = -INF   # both sides infinite: specs certify S_n -> -inf
    s_lo, s_hi = q_law.s_limits
    tags = dict.fromkeys(_FIELDS, "exact")
    try:
        iq = compute_iq(spec)
        im = compute_im(spec)
        if iq.method == "truncation_heuristic":
            tags["iq"] = "heuristic"
        if im.method == "truncation_heuristic":
            tags["im"] = "heuristic"
    except DegenerateM:
        iq = im = None
        tags["iq"] = tags["im"] = "unavailable"
    return TailProfile(mean, mp, mm, s_lo, s_hi, s_lo == s_hi, iq, im, m_law.s_limits[0], tags, {})


def estimate_tail_profile(spec, n, grid, seed=None, n_boot=200):
    """Empirical tail profile from n sampled pairs; s-values are read off the top half of grid."""
    if n < 10 ** 4:
        raise PreconditionError("n must be at least 10^4")
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 2 or np.any(np.diff(grid) <= 0):
        raise PreconditionError("grid must be increasing with at least two points")
    lm, lq = spec.sample_log_pairs(stream(seed, 0), n)
    top = grid[len(grid) // 2:]
    counts = np.array([(lq > t).sum() for t in top])
    if counts[-1] < 50:
        raise InsufficientTailData(f"only {counts[-1]} exceedances at t = {top[-1]}")

    m_mean = float(np.mean(lm))
    m_plus = float(np.mean(np.maximum(lm, 0.0)))
    m_minus = float(np.mean(np.maximum(-lm, 0.0)))
    s_hat = top * counts / n
    r_hat = top * np.array([(lm > t).sum() for t in top]) / n

    # exceedance counts over the grid are cumulative multinomial bin counts,
    # so a nonparametric bootstrap only needs multinomial draws of the bins
    bins = np.append(-np.diff(counts), counts[-1])
    probs = np.append(bins, n - counts[0]) / n
    rng = stream(seed, 1)
    draws = rng.multinomial(n, probs, size=n_boot)[:, :-1]
    boot = np.cumsum(draws[:, ::-1], axis=1)[:, ::-1] * top / n
    se_star = float(boot.min(axis=1).std(ddof=1))
    se_upper = float(boot.max(axis=1).std(ddof=1))
    se_m = float(np.std(lm, ddof=1) / math.sqrt(n))

    s_star, s_upper = float(s_hat.min()), float(s_hat.max())
    tags = dict.fromkeys(_FIELDS, "estimated")
    tags["im"] = "unavailable"
    if s_star - 2 * se_star > 0:
        iq = IntegralValue(True, INF, "inferred_from_tail")
    else:
        iq = None
        tags["iq"] = "unavailable"
    se = {"m_mean": se_m, "m_plus": float(np.std(np.maximum(lm, 0), ddof=1) / math.sqrt(n)),
          "m_minus": float(np.std(np.maximum(-lm, 0), ddof=1) / math.sqrt(n)),
          "s_star": se_star, "s_upper": se_upper}
    return TailProfile(m_mean, m_plus, m_minus, s_star, s_upper, False, iq, None,
                       float(r_hat.min()), tags, se)


# --- nondegeneracy -----------------------------------------------------------

@dataclass(frozen=True)
class Nondegeneracy:
    status: str          # ok | trivial_b | trivial_c
    r: float = None      # common fixed point for trivial_c

    @property
    def ok(self):
        return self.status == "ok"

    def to_dict(self):
        return {"status": self.status, "r": self.r}


def _joint_atoms(spec):
    """Atoms (m, q, p) of the joint law, or None if it is not discrete."""
    if isinstance(spec, FiniteSupportSpec):
        return [(g.m, g.q, p) for g, p in spec.atoms if p > 0]
    if not (spec.m_law.discrete and spec.q_law.discrete):
        return None
    ml, mp = spec.m_law._atoms()
    ql, qp = spec.q_law._atoms()
    if spec.dependence == "independent":
        return [(math.exp(a), math.exp(b), pa * pb) for a, pa in zip(ml, mp) for b, pb in zip(ql, qp)]
    cuts = np.unique(np.concatenate([np.cumsum(mp[np.argsort(ml)]), np.cumsum(qp[np.argsort(ql)])]))
    cuts = np.concatenate([[0.0], cuts[cuts < 1 - 1e-15], [1.0]])
    mids = 0.5 * (cuts[:-1] + cuts[1:])
    return [(math.exp(spec.m_law.ppf_log(u)), math.exp(spec.q_law.ppf_log(u)), b - a)
            for u, a, b in zip(mids, cuts[:-1], cuts[1:])]


def _common_fixed_point(m, q, tol):
    m, q = np.asarray(m, float), np.asarray(q, float)
    movable = np.abs(m - 1) > 0
    if not movable.any():
        return None
    i = np.flatnonzero(movable)[0]
    r = q[i] / (1 - m[i])
    with np.errstate(invalid="ignore", over="ignore"):
        fixed = np.all(np.abs(m * r + q - r) <= tol * (1 + abs(r)))
    if fixed:
        return float(r)
    return None


def check_nondegeneracy(spec, n_samples=10 ** 4, seed=0):
    atoms = _joint_atoms(spec)
    if atoms is not None:
        m = np.array([a[0] for a in atoms])
        q = np.array([a[1] for a in atoms])
        if np.all(q == 0):
            return Nondegeneracy("trivial_b", 0.0)
        r = _common_fixed_point(m, q, 1e-12)
        return Nondegeneracy("trivial_c", r) if r is not None else Nondegeneracy("ok")
    if spec.q_law.prob_zero == 1.0:
        return Nondegeneracy("trivial_b", 0.0)
    m, q = spec.sample_pairs(stream(seed, 0), n_samples)
    if np.all(q == 0):
        return Nondegeneracy("trivial_b", 0.0)
    if not np.all(np.isfinite(q)):
        return Nondegeneracy("ok")
    r = _common_fixed_point(m, q, 1e-10)
    return Nondegeneracy("trivial_c", r) if r is not None else Nondegeneracy("ok")
