"""Monte Carlo evidence for recurrence / transience verdicts and for the tail lemmata."""
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import stats

from .chain import forward_log, lae, linear_forward
from .classify import Outcome
from .errors import InsufficientTailData, PreconditionError
from .rng import stream

RECURRENT, TRANSIENT, AMBIGUOUS = "recurrence_consistent", "transience_consistent", "ambiguous"
SLOPE_HI, SLOPE_LO = 0.05, 0.005
N_BOOT = 400


def default_threads():
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def _bootstrap_idx(rng, n, b=N_BOOT):
    return rng.integers(0, n, size=(b, n))


def _slope(x, y, empty=math.nan):
    """Least-squares slope of log y on log x over points with y > 0."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    ok = y > 0
    if ok.sum() < 2:
        return empty
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


# --- hitting sums and escape ---------------------------------------------

@njit(cache=True, nogil=True)
def _hit_kernel(log_m, log_q, lx0, log_levels, grid, half):
    n = log_m.shape[0]
    L = log_levels.shape[0]
    cum = np.zeros((L, grid.shape[0]))
    counts = np.zeros(L)
    lx = lx0
    lmin = np.inf
    gi = 0
    for k in range(n + 1):
        if k > 0:
            lx = lae(log_m[k - 1] + lx, log_q[k - 1])
        for j in range(L):
            if lx <= log_levels[j]:
                counts[j] += 1.0
        if k >= half and lx < lmin:
            lmin = lx
        while gi < grid.shape[0] and grid[gi] == k:
            cum[:, gi] = counts
            gi += 1
    return cum, lmin


def hit_grid(N, points=60):
    return np.unique(np.round(np.logspace(0, math.log10(N), points)).astype(np.int64))


@dataclass(frozen=True, eq=False)
class RecurrenceDiagnostic:
    level: float               # K = [0, level]
    horizon: int
    replicates: int
    grid: np.ndarray           # n values of the cumulative hitting sum
    cum_hits: np.ndarray       # (R, len(grid)) per-replicate cumulative hit counts
    H: np.ndarray              # estimated sum_{k<=n} P(X_k in K)
    ci_low: np.ndarray
    ci_high: np.ndarray
    log_escape: np.ndarray     # per replicate log min_{N/2 <= n <= N} X_n
    slope: float
    stay_fraction: float       # share of replicates with escape statistic <= level
    conclusion: str
    sensitivity: dict = field(default_factory=dict)   # other levels -> conclusion
    seed: int = None

    @property
    def hit_counts(self):
        return self.cum_hits[:, -1]

    def to_dict(self):
        return {"level": self.level, "horizon": self.horizon, "replicates": self.replicates,
                "H_final": float(self.H[-1]), "H_ci": [float(self.ci_low[-1]), float(self.ci_high[-1])],
                "slope": self.slope, "stay_fraction": self.stay_fraction,
                "conclusion": self.conclusion,
                "sensitivity": {repr(k): v for k, v in self.sensitivity.items()}}

    def to_csv(self, path):
        np.savetxt(path, np.column_stack([self.grid, self.H, self.ci_low, self.ci_high]),
                   delimiter=",", header="n,estimate,ci_low,ci_high", comments="",
                   fmt=["%d", "%.17g", "%.17g", "%.17g"])


def _conclude(slope, stay):
    if slope > SLOPE_HI and stay >= 0.5:
        return RECURRENT
    if slope < SLOPE_LO and 1 - stay >= 0.95:
        return TRANSIENT
    return AMBIGUOUS


def recurrence_diagnostic(spec, x0, t, N, R, seed=None, threads=None, extra_levels=(), grid_points=60):
    """Hitting sums of K = [0, t] and the escape statistic over R independent paths."""
    if N < 10 ** 3 or R < 10 ** 2:
        raise PreconditionError("needs N >= 10^3 and R >= 10^2")
    if not t > 0 or x0 < 0:
        raise PreconditionError("needs t > 0 and x0 >= 0")
    levels = np.array([t] + [float(v) for v in extra_levels])
    log_levels = np.log(levels)
    grid = hit_grid(N, grid_points)
    lx0 = math.log(x0) if x0 > 0 else -math.inf
    half = N // 2

    def run(r):
        lm, lq = spec.sample_log_pairs(stream(seed, r), N)
        return _hit_kernel(np.ascontiguousarray(lm, float), np.ascontiguousarray(lq, float),
                           lx0, log_levels, grid, half)

    workers = threads or default_threads()
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            res = list(ex.map(run, range(R)))
    else:
        res = [run(r) for r in range(R)]
    cum = np.stack([c for c, _ in res])             # (R, L, G)
    log_esc = np.array([e for _, e in res])
    boot_idx = _bootstrap_idx(stream(seed, R), R)

    def summarize(j):
        c = cum[:, j, :]
        H = c.mean(axis=0)
        top = grid >= N / 10
        slope = _slope(grid[top], H[top], empty=0.0)
        stay = float(np.mean(log_esc <= log_levels[j]))
        return c, H, slope, stay

    c, H, slope, stay = summarize(0)
    boot = c[boot_idx].mean(axis=1)
    lo, hi = np.percentile(boot, [2.5, 97.5], axis=0)
    sens = {}
    for j in range(1, len(levels)):
        _, _, sl, st = summarize(j)
        sens[float(levels[j])] = _conclude(sl, st)
    return RecurrenceDiagnostic(float(t), int(N), int(R), grid, c, H, lo, hi, log_esc, slope,
                                stay, _conclude(slope, stay), sens, seed)


def agreement(verdict, conclusion):
    """consistent | ambiguous | contradiction between a Verdict and a diagnostic conclusion."""
    outcome = verdict.outcome if hasattr(verdict, "outcome") else Outcome(verdict)
    recurrent = outcome in (Outcome.POSITIVE, Outcome.NULL)
    if conclusion == AMBIGUOUS or outcome in (Outcome.BOUNDARY, Outcome.UNDETERMINED):
        return "ambiguous"
    if (recurrent and conclusion == TRANSIENT) or (outcome == Outcome.TRANSIENT and conclusion == RECURRENT):
        return "contradiction"
    return "consistent"


def law_stabilization(spec, N, seed=None, x0=0.0):
    """KS distance between the occupation laws of one path over [1, N] and [1, 2N]."""
    lm, lq = spec.sample_log_pairs(stream(seed, 0), 2 * N)
    lx = forward_log(np.ascontiguousarray(lm, float), np.ascontiguousarray(lq, float),
                     math.log(x0) if x0 > 0 else -math.inf)
    return float(stats.ks_2samp(lx[1:N + 1], lx[1:]).statistic)


# --- stopped replicates and the tail lemmata ------------------------------

@dataclass(frozen=True, eq=False)
class StoppedSample:
    sigma: np.ndarray
    log_xhat: np.ndarray     # log sum_{k<=sigma} Pi_{k-1} Q_k
    log_q_gamma: np.ndarray  # log sum_{k<=sigma} gamma^{sigma-k} Q_k (when gamma given)


def stopped_replicates(spec, c, R, seed=None, gamma=None, max_steps=10 ** 6):
    """R independent copies of sigma = sigma^<(c) and the stopped sums."""
    rng = stream(seed, 0)
    lg = math.log(gamma) if gamma is not None else 0.0
    sigma = np.zeros(R, dtype=np.int64)
    lx = np.full(R, -np.inf)
    lqg = np.full(R, -np.inf)
    s = np.zeros(R)
    active = np.arange(R)
    for k in range(1, max_steps + 1):
        lm, lq = spec.sample_log_pairs(rng, len(active))
        lx[active] = np.logaddexp(lx[active], s[active] + lq)
        if gamma is not None:
            lqg[active] = np.logaddexp(lqg[active] + lg, lq)
        s[active] += lm
        done = s[active] + c * k < 0
        sigma[active[done]] = k
        active = active[~done]
        if len(active) == 0:
            break
    else:
        raise PreconditionError(f"{len(active)} replicates not stopped after {max_steps} steps")
    return StoppedSample(sigma, lx, lqg if gamma is not None else None)


@dataclass(frozen=True, eq=False)
class TailLimitCheck:
    target: tuple            # (s_* E sigma, s^* E sigma)
    e_sigma: float
    e_sigma_source: str      # sample_mean | oracle
    t_grid: np.ndarray
    curve: np.ndarray        # t P(log V > t)
    exceedances: np.ndarray
    t_star: float
    measured: float
    se: float
    agree: bool
    replicates: int

    def to_dict(self):
        return {"target": list(self.target), "e_sigma": self.e_sigma,
                "e_sigma_source": self.e_sigma_source, "t_star": self.t_star,
                "measured": self.measured, "se": self.se, "agree": self.agree,
                "replicates": self.replicates}

    def to_csv(self, path):
        se = np.sqrt(self.exceedances * (1 - self.exceedances / self.replicates)) / self.replicates * self.t_grid
        np.savetxt(path, np.column_stack([self.t_grid, self.curve, self.curve - 2 * se, self.curve + 2 * se]),
                   delimiter=",", header="t,estimate,ci_low,ci_high", comments="", fmt="%.17g")


def _tail_check(values, sigma, s_lo, s_hi, t_grid, e_sigma, seed, min_exceed=100):
    t_grid = np.asarray(t_grid, dtype=float)
    R = len(values)
    exc = np.array([(values > t).sum() for t in t_grid])
    curve = t_grid * exc / R
    ok = np.flatnonzero(exc >= min_exceed)
    if len(ok) == 0:
        if s_hi != 0:
            raise InsufficientTailData(f"fewer than {min_exceed} exceedances on the whole grid")
        i = len(t_grid) - 1
    else:
        i = ok[-1]
    t = t_grid[i]
    src = "oracle" if e_sigma is not None else "sample_mean"
    es = float(np.mean(sigma)) if e_sigma is None else float(e_sigma)
    idx = _bootstrap_idx(stream(seed, 1), R)
    bt = t * (values[idx] > t).mean(axis=1)
    if e_sigma is None:
        bes = sigma[idx].mean(axis=1)
        lo_d, hi_d = bt - s_lo * bes, bt - s_hi * bes
        d_lo, d_hi = curve[i] - s_lo * es, curve[i] - s_hi * es
        se = float(max(lo_d.std(ddof=1), hi_d.std(ddof=1)))
        agree = bool(d_lo >= -3 * se and d_hi <= 3 * se)
    else:
        se = float(bt.std(ddof=1))
        agree = bool(s_lo * es - 3 * se <= curve[i] <= s_hi * es + 3 * se)
    return TailLimitCheck((s_lo * es, s_hi * es), es, src, t_grid, curve, exc, float(t),
                          float(curve[i]), se, agree, R)


def check_tail_lemma(spec, c, t_grid, R, seed=None, e_sigma=None):
    """t P(log Xhat_sigma > t) against s E sigma for sigma = sigma^<(c)."""
    if R < 10 ** 4:
        raise PreconditionError("needs R >= 10^4 replicates")
    st = stopped_replicates(spec, c, R, seed)
    s_lo, s_hi = spec.q_law.s_limits
    return _tail_check(st.log_xhat, st.sigma, s_lo, s_hi, t_grid, e_sigma, seed)


def check_q_gamma_tail(spec, gamma, c, t_grid, R, seed=None, e_sigma=None):
    """t P(log Q(gamma) > t) against s E sigma, Q(gamma) = sum_{k<=sigma} gamma^{sigma-k} Q_k."""
    if R < 10 ** 4:
        raise PreconditionError("needs R >= 10^4 replicates")
    if not 0 < gamma <= 1:
        raise PreconditionError("gamma must lie in (0, 1]")
    st = stopped_replicates(spec, c, R, seed, gamma=gamma)
    s_lo, s_hi = spec.q_law.s_limits
    return _tail_check(st.log_q_gamma, st.sigma, s_lo, s_hi, t_grid, e_sigma, seed)


@dataclass(frozen=True)
class LadderEnumeration:
    depth: int
    truncated_sum: float     # sum_{n < depth} P(sigma > n)
    p_alive: float           # P(sigma > depth)
    lower: float
    upper: float

    @property
    def e_sigma(self):
        return 0.5 * (self.lower + self.upper)

    @property
    def error_bound(self):
        return 0.5 * (self.upper - self.lower)


def enumerate_ladder_time(log_m_values, probs, c, depth, decimals=9):
    """E sigma^<(c) for a discrete log M by exhaustive path enumeration.

    Paths alive at the depth are closed with Wald's identity: from level
    w >= 0 the remaining mean time lies in [w, w + undershoot] / |drift|.
    """
    x = np.asarray(log_m_values, float) + c
    p = np.asarray(probs, float)
    drift = float(np.dot(p, x))
    if not drift < 0:
        raise PreconditionError("sigma^<(c) needs E log M + c < 0")
    alive = {0.0: 1.0}
    total = 0.0
    for _ in range(depth):
        total += sum(alive.values())
        nxt = {}
        for w, pw in alive.items():
            for xi, pi in zip(x, p):
                v = round(w + xi, decimals)
                if v >= 0:
                    nxt[v] = nxt.get(v, 0.0) + pw * pi
        alive = nxt
    p_alive = sum(alive.values())
    mean_w = sum(w * pw for w, pw in alive.items())
    under = -min(x.min(), 0.0)
    lower = total + mean_w / -drift
    upper = total + (mean_w + under * p_alive) / -drift
    return LadderEnumeration(depth, total, p_alive, lower, upper)


# --- Kellerer bounds -------------------------------------------------------

def kellerer_product(q_law, gamma, t, n):
    """prod_{k=1}^n P(gamma^{k-1} Q_k <= e^t), the chance that every term stays below e^t."""
    k = np.arange(n)
    F = np.asarray(q_law.cdf_log(t - k * math.log(gamma)), float)
    with np.errstate(divide="ignore"):
        return np.exp(np.cumsum(np.log(F)))


@dataclass(frozen=True, eq=False)
class KellererReport:
    gamma: float
    t: float
    n_grid: np.ndarray
    p_sum: np.ndarray        # P(Xhat_n(gamma) <= e^t), Monte Carlo
    se_sum: np.ndarray
    p_max: np.ndarray        # P(max term <= e^t), Monte Carlo
    product: np.ndarray      # exact value of p_max
    slope: float             # fitted log-log slope of p_sum over the top half of the grid
    slope_ci: tuple
    product_slope: float
    replicates: int

    @property
    def transient_consistent(self):
        return self.slope_ci[1] < -1

    @property
    def recurrent_consistent(self):
        return self.slope >= -1.1

    def max_z(self, which="sum"):
        p = self.p_sum if which == "sum" else self.p_max
        se = np.sqrt(np.maximum(self.product * (1 - self.product), 1e-300) / self.replicates)
        return float(np.max(np.abs(p - self.product) / se))

    def to_dict(self):
        return {"gamma": self.gamma, "t": self.t, "slope": self.slope, "slope_ci": list(self.slope_ci),
                "product_slope": self.product_slope, "max_z_sum": self.max_z("sum"),
                "max_z_max": self.max_z("max"), "replicates": self.replicates,
                "transient_consistent": self.transient_consistent,
                "recurrent_consistent": self.recurrent_consistent}

    def to_csv(self, path):
        np.savetxt(path, np.column_stack([self.n_grid, self.p_sum, self.p_sum - 2 * self.se_sum,
                                          self.p_sum + 2 * self.se_sum, self.product]),
                   delimiter=",", header="n,estimate,ci_low,ci_high,product", comments="", fmt="%.17g")


def _exit_times(q_law, gamma, t, n_max, R, rng):
    """First n with Xhat_n(gamma) > e^t and first n with a single term > e^t (n_max + 1 if none)."""
    lg = math.log(gamma)
    t_sum = np.full(R, n_max + 1, dtype=np.int64)
    t_max = np.full(R, n_max + 1, dtype=np.int64)
    acc = np.full(R, -np.inf)
    active = np.arange(R)
    for n in range(1, n_max + 1):
        lq = q_law.sample_log(rng, len(active)) + (n - 1) * lg
        a = active
        acc[a] = np.logaddexp(acc[a], lq)
        hit_max = (lq > t) & (t_max[a] > n_max)
        t_max[a[hit_max]] = n
        hit_sum = (acc[a] > t) & (t_sum[a] > n_max)
        t_sum[a[hit_sum]] = n
        keep = t_max[a] > n_max   # the max event fails no later than the sum event
        active = a[keep]
        if len(active) == 0:
            break
    return t_sum, t_max


def check_kellerer_bounds(gamma, q_law, t, n_range, R, seed=None, n_boot=200):
    """P(Xhat_n(gamma) <= e^t) for constant M = gamma, with the exact product of the max event."""
    if not 0 < gamma < 1:
        raise PreconditionError("gamma must lie in (0, 1)")
    n_grid = np.unique(np.asarray(n_range, dtype=np.int64))
    n_max = int(n_grid[-1])
    t_sum, t_max = _exit_times(q_law, gamma, t, n_max, R, stream(seed, 0))
    p_sum = np.array([(t_sum > n).mean() for n in n_grid])
    p_max = np.array([(t_max > n).mean() for n in n_grid])
    se = np.sqrt(p_sum * (1 - p_sum) / R)
    prod = kellerer_product(q_law, gamma, t, n_max)[n_grid - 1]
    top = n_grid >= n_grid[len(n_grid) // 2]
    slope = _slope(n_grid[top], p_sum[top])
    rng = stream(seed, 1)
    srt = np.sort(t_sum)
    bs = []
    for _ in range(n_boot):
        b = np.sort(srt[rng.integers(0, R, R)])
        pb = 1 - np.searchsorted(b, n_grid[top], side="right") / R
        bs.append(_slope(n_grid[top], pb))
    ci = tuple(float(v) for v in np.percentile(bs, [2.5, 97.5]))
    return KellererReport(gamma, float(t), n_grid, p_sum, se, p_max, prod, slope, ci,
                          _slope(n_grid[top], prod[top]), int(R))


# --- comparison lemmata ------------------------------------------------------

@dataclass(frozen=True)
class ComparisonCheck:
    passed: bool
    worst_margin: float      # smallest (bound slack) over all steps and paths
    first_violation: tuple   # (path, step) or None
    paths: int
    steps: int

    def to_dict(self):
        return {"passed": self.passed, "worst_margin": self.worst_margin,
                "first_violation": None if self.first_violation is None else list(self.first_violation),
                "paths": self.paths, "steps": self.steps}


def _pair_margin(pair, gamma, t0, beta):
    d = pair.diff
    n = len(d) - 1
    k = np.arange(n + 1)
    d0 = pair.second.x0 - pair.first.x0
    if pair.kind == "shift":
        t0 = pair.t0 if t0 is None else t0
        gamma = pair.gamma if gamma is None else gamma
        # tight recursion L_k = M_k L_{k-1} - t0, then the displayed gamma bound
        low = linear_forward(pair.first.m, np.full(n, -t0), d0)
        slack = d - low
        if gamma is not None and gamma < 1:
            disp = np.exp(pair.first.s) * d0 - t0 * (1 - gamma ** k) / (1 - gamma)
            slack = np.minimum(slack, d - disp)
        scale = 1.0 + np.abs(d) + t0 / (1 - gamma) if gamma is not None and gamma < 1 else 1.0 + np.abs(d)
    else:
        beta = pair.beta if beta is None else beta
        gamma = pair.gamma if gamma is None else gamma
        bound = gamma ** k * abs(d0) + beta / (1 - gamma)
        slack = bound - np.abs(d)
        scale = 1.0 + bound
    return slack, 1e-9 * scale


def verify_comparison_bounds(pairs, gamma=None, t0=None, beta=None):
    """Check the pathwise comparison bound at every step of every coupled path."""
    if hasattr(pairs, "diff"):
        pairs = [pairs]
    worst, first, steps = math.inf, None, 0
    for i, pr in enumerate(pairs):
        slack, tol = _pair_margin(pr, gamma, t0, beta)
        worst = min(worst, float(slack.min()))
        bad = np.flatnonzero(slack < -tol)
        if len(bad) and first is None:
            first = (i, int(bad[0]))
        steps = max(steps, len(slack) - 1)
    return ComparisonCheck(first is None, worst, first, len(pairs), steps)
