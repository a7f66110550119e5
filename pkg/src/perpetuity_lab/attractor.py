"""Attractor sets of locally contractive chains and the support-preserving tilting."""
import math
from dataclasses import dataclass

import numpy as np

from .affine import AffineMap, enumerate_semigroup
from .chain import simulate_forward
from .errors import PreconditionError, TiltingInfeasible
from .model import (INF, Discrete, DistributionSpec, FiniteSupportSpec, Tilted, open_uniform,
                    tilt_weight)
from .rng import stream

SLOPE_TOL = 1e-9


def nearest_distance(x, cloud_sorted):
    """Distance from each x to the nearest point of a sorted cloud."""
    x = np.asarray(x, dtype=float)
    c = cloud_sorted
    i = np.clip(np.searchsorted(c, x), 1, len(c) - 1) if len(c) > 1 else np.zeros(x.shape, int)
    if len(c) == 1:
        return np.abs(x - c[0])
    return np.minimum(np.abs(x - c[i - 1]), np.abs(x - c[i]))


def hausdorff(a, b):
    """Two-sided Hausdorff distance between finite subsets of the line."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    return float(max(nearest_distance(a, b).max(), nearest_distance(b, a).max()))


def epsilon_net(points, epsilon):
    """Sorted points, keeping one per run of gaps <= epsilon."""
    p = np.sort(np.asarray(points, dtype=float))
    if len(p) == 0:
        return p
    keep = np.concatenate([[True], np.diff(p) > epsilon])
    return p[keep]


def in_cantor(x, digits=10, tol=1e-9):
    """True where the first base-3 digits of x can be chosen from {0, 2}."""
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    ok = np.ones(x.shape, dtype=bool)
    for _ in range(digits):
        low = x <= 1 / 3 + tol
        high = x >= 2 / 3 - tol
        ok &= low | high
        x = np.clip(np.where(low, 3 * x, 3 * x - 2), 0.0, 1.0)
        tol *= 3
    return ok


@dataclass(frozen=True, eq=False)
class AttractorApproximation:
    points: np.ndarray        # fixed points of contractive elements, enumeration order
    lengths: np.ndarray       # word length of the generating element
    element_m: np.ndarray
    element_q: np.ndarray
    net: np.ndarray           # sorted epsilon-net of points
    depth: int
    epsilon: float
    resolution: float         # m_max^(depth - 1) * diam
    bounded: bool
    residual: float           # max |g(x) - x| over reported points
    invariance_excess: float  # max over generators of dist(g(net), net) - tolerance
    frontier_violations: int  # violations where g(x) leaves the hull of the cloud
    interior_violations: int

    @property
    def interval(self):
        return float(self.net[0]), float(self.net[-1])

    @property
    def invariant(self):
        return self.interior_violations == 0

    def points_at_length(self, L):
        return self.points[self.lengths == L]

    def gaps(self):
        return np.diff(self.net)

    def to_csv(self, path):
        np.savetxt(path, self.net, fmt="%.17g")

    def report(self):
        lo, hi = self.interval
        return {"depth": self.depth, "epsilon": self.epsilon, "n_points": int(len(self.points)),
                "n_net": int(len(self.net)), "interval": [lo, hi], "bounded": self.bounded,
                "resolution": self.resolution, "residual": self.residual,
                "invariance_excess": self.invariance_excess,
                "frontier_violations": self.frontier_violations,
                "interior_violations": self.interior_violations}


def approximate_attractor(spec, depth, epsilon=1e-12, budget=None):
    """Fixed points q / (1 - m) of all contractive semigroup elements up to the given depth."""
    if not isinstance(spec, FiniteSupportSpec):
        raise PreconditionError("approximate_attractor needs a finite-support spec")
    gens = [g for g, p in spec.atoms if p > 0]
    kw = {} if budget is None else {"budget": budget}
    en = enumerate_semigroup(gens, depth, **kw)
    keep = en.m < 1 - SLOPE_TOL
    if not keep.any():
        raise PreconditionError("no contractive element up to this depth")
    m, q = en.m[keep], en.q[keep]
    pts = q / (1 - m)
    residual = float(np.max(np.abs(m * pts + q - pts)))
    net = epsilon_net(pts, epsilon)
    diam = float(net[-1] - net[0])
    m_max = max(g.m for g in gens)
    res = m_max ** (depth - 1) * diam if m_max < 1 else INF
    excess, frontier, interior = -INF, 0, 0
    for g in gens:
        y = g.m * net + g.q
        d = nearest_distance(y, net)
        tol = epsilon + g.m * res
        bad = d > tol
        outside = (y < net[0] - tol) | (y > net[-1] + tol)
        frontier += int((bad & outside).sum())
        interior += int((bad & ~outside).sum())
        excess = max(excess, float((d - tol).max()))
    bounded = unboundedness_test(spec).status == "bounded"
    return AttractorApproximation(pts, en.lengths[keep], m, q, net, depth, epsilon, res, bounded,
                                  residual, excess, frontier, interior)


def chaos_game(spec, n_steps, burn_in=1000, seed=None, x0=0.0):
    """States X_k for burn_in < k <= n_steps of one forward path."""
    if burn_in >= n_steps:
        raise PreconditionError("burn_in must be smaller than n_steps")
    traj = simulate_forward(spec, x0, n_steps, seed)
    return traj.x[burn_in + 1:]


@dataclass(frozen=True)
class BoundReport:
    status: str               # unbounded | bounded | unknown
    condition: str = None     # C1 | C2 for unbounded
    interval: tuple = None    # (a, b) containing L for bounded

    def to_dict(self):
        return {"status": self.status, "condition": self.condition,
                "interval": None if self.interval is None else list(self.interval)}


def unboundedness_test(spec):
    if isinstance(spec, FiniteSupportSpec):
        at = [(g.m, g.q) for g, p in spec.atoms if p > 0]
        if any(m > 1 for m, _ in at) and any(q > 0 for _, q in at):
            return BoundReport("unbounded", "C2")
        if all(m < 1 for m, _ in at):
            s1 = [q / (1 - m) for m, q in at]
            return BoundReport("bounded", interval=(min(s1), max(s1)))
        return BoundReport("unknown")
    q_sup, m_sup = spec.q_law.support_log, spec.m_law.support_log
    if q_sup is not None and q_sup[1] == INF:
        return BoundReport("unbounded", "C1")
    if q_sup is None and spec.q_law.plus_class is not None and spec.q_law.plus_class[0] < INF:
        return BoundReport("unbounded", "C1")
    if spec.m_law.tail_log(0.0) > 0 and spec.q_law.prob_zero < 1:
        return BoundReport("unbounded", "C2")
    if m_sup is not None and q_sup is not None and m_sup[1] < 0:
        # q / (1 - m) is increasing in both q and m, and for comonotone pairs
        # the extremes are attained jointly at the ends of the quantile range
        a = math.exp(q_sup[0]) / (1 - math.exp(m_sup[0]))
        b = math.exp(q_sup[1]) / (1 - math.exp(m_sup[1]))
        return BoundReport("bounded", interval=(a, b))
    return BoundReport("unknown")


@dataclass(frozen=True)
class IntervalCertificate:
    x_alpha: float
    x_beta: float
    alpha: AffineMap
    beta: AffineMap

    def to_dict(self):
        return {"x_alpha": self.x_alpha, "x_beta": self.x_beta,
                "alpha": [self.alpha.m, self.alpha.q], "beta": [self.beta.m, self.beta.q]}


def interval_certificate(spec):
    """Widest [x_a, x_b] from atom pairs with slopes a, b < 1, a + b >= 1 and x_a <= x_b."""
    gens = [g for g, p in spec.atoms if p > 0]
    best = None
    for i, ga in enumerate(gens):
        for j, gb in enumerate(gens):
            if i == j or not (ga.m < 1 and gb.m < 1 and ga.m + gb.m >= 1):
                continue
            xa, xb = ga.q / (1 - ga.m), gb.q / (1 - gb.m)
            if xa <= xb and (best is None or xb - xa > best.x_beta - best.x_alpha):
                best = IntervalCertificate(xa, xb, ga, gb)
    return best


# --- tilting ---------------------------------------------------------------

def _cap1(x):
    return np.minimum(1.0, np.abs(x))


def _reweight(law, kind, c1):
    lv, p = law._atoms()
    w = p * tilt_weight(kind, c1, lv)
    return Discrete(tuple(lv), tuple(w / w.sum()))


@dataclass(frozen=True, eq=False)
class TiltingSpec:
    """mu~(dm, dq) = f(m) h(q) mu(dm, dq) with the constants solved for."""
    c0: float
    c1: float
    c2: float
    i_neg: float          # int over m <= 1 of (1 ^ |log m|) h/c2 dmu
    i_pos: float          # int over m > 1 of (1 ^ log m) h/c2 dmu
    drift: float          # E log M under the tilted law
    mean_log_plus_q: float
    normalization: float  # int f h dmu, recomputed
    base: object
    tilted: object        # FiniteSupportSpec or DistributionSpec of the tilted law

    def f(self, m):
        return self.c0 * tilt_weight("m", self.c1, np.log(m))

    def h(self, q):
        with np.errstate(divide="ignore"):
            return self.c2 * tilt_weight("q", self.c1, np.log(q))

    def weight_log(self, lm, lq):
        return self.c0 * self.c2 * tilt_weight("m", self.c1, lm) * tilt_weight("q", self.c1, lq)

    def sample_log_pairs(self, rng, size):
        """Rejection sampler from the base law with acceptance f h / (c0 max(1, c1) c2)."""
        bound = self.c0 * max(1.0, self.c1) * self.c2
        outm, outq = np.empty(size), np.empty(size)
        filled = 0
        while filled < size:
            n = max(2 * (size - filled), 64)
            lm, lq = _base_pairs(self.base, rng, n)
            acc = open_uniform(rng, n) * bound < self.weight_log(lm, lq)
            k = min(int(acc.sum()), size - filled)
            outm[filled:filled + k] = lm[acc][:k]
            outq[filled:filled + k] = lq[acc][:k]
            filled += k
        return outm, outq

    def to_dict(self):
        return {"c0": self.c0, "c1": self.c1, "c2": self.c2, "i_neg": self.i_neg,
                "i_pos": self.i_pos, "drift": self.drift, "mean_log_plus_q": self.mean_log_plus_q,
                "normalization": self.normalization, "tilted": self.tilted.to_dict()}


def _base_pairs(base, rng, n):
    if isinstance(base, tuple):
        return base[0].sample_log(rng, n), base[1].sample_log(rng, n)
    return base.sample_log_pairs(rng, n)


def build_tilting(spec, c2=1.0):
    """Solve c1 so that the tilted drift is negative, then c0 by normalization.

    spec is a FiniteSupportSpec, an independent DistributionSpec, or a pair
    (m_law, q_law) of independent marginals (the base chain need not be contractive).
    """
    if isinstance(spec, FiniteSupportSpec):
        at = [(g, p) for g, p in spec.atoms if p > 0]
        lm = np.log([g.m for g, _ in at])
        with np.errstate(divide="ignore"):
            lq = np.log([g.q for g, _ in at])
        p = np.array([pp for _, pp in at])
        hbar = tilt_weight("q", 1.0, lq)
        i_neg = float(np.sum(p * _cap1(lm) * hbar * (lm <= 0)))
        i_pos = float(np.sum(p * _cap1(lm) * hbar * (lm > 0)))
        c1 = _solve_c1(i_neg, i_pos)
        w = p * tilt_weight("m", c1, lm) * hbar
        z = float(w.sum())
        tilted = FiniteSupportSpec(tuple((g, wi / z) for (g, _), wi in zip(at, w)))
        pt = w / z
        drift = float(np.sum(pt * lm))
        mlq = float(np.sum(pt * np.maximum(lq, 0.0)))
        base = spec
    else:
        if isinstance(spec, tuple):
            m_law, q_law = spec
        else:
            if spec.dependence != "independent":
                raise PreconditionError("tilting is implemented for independent M and Q")
            m_law, q_law = spec.m_law, spec.q_law
        hbar_mean = q_law.expect(lambda x: float(tilt_weight("q", 1.0, x)))
        i_neg = m_law.expect(lambda x: min(1.0, -x) if x <= 0 else 0.0) * hbar_mean
        i_pos = m_law.expect(lambda x: min(1.0, x) if x > 0 else 0.0) * hbar_mean
        c1 = _solve_c1(i_neg, i_pos)
        fbar_mean = m_law.expect(lambda x: float(tilt_weight("m", c1, x)))
        z = fbar_mean * hbar_mean
        tm = _reweight(m_law, "m", c1) if m_law.discrete else Tilted(m_law, "m", c1)
        tq = _reweight(q_law, "q", 1.0) if q_law.discrete else Tilted(q_law, "q", 1.0)
        drift = tm.expect(lambda x: x)
        mlq = tq.mean_log_plus
        tilted = None
        base = (m_law, q_law)
    if not drift < 0:
        raise TiltingInfeasible(f"tilted drift {drift} is not negative")
    if not mlq < INF:
        raise TiltingInfeasible("tilted E log_+ Q is not finite")
    c0 = 1.0 / (z * c2)
    if tilted is None:
        tilted = DistributionSpec(tm, tq)
    # normalization recomputed from the constants
    if isinstance(base, FiniteSupportSpec):
        norm = float(np.sum(p * c0 * tilt_weight("m", c1, lm) * c2 * hbar))
    else:
        norm = c0 * c2 * fbar_mean * hbar_mean
    if abs(norm - 1) > 1e-6:
        raise TiltingInfeasible(f"normalization {norm} differs from 1")
    return TiltingSpec(c0, c1, c2, i_neg, i_pos, drift, mlq, norm, base, tilted)


def _solve_c1(i_neg, i_pos):
    """The bracket -i_neg + c1 i_pos is linear in c1; take half its root."""
    if not i_neg > 0:
        raise TiltingInfeasible("no mass on contracting maps, the drift cannot be made negative")
    if i_pos == 0:
        return 1.0
    return 0.5 * i_neg / i_pos
