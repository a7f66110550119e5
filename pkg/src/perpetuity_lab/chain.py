"""Forward and backward iterations of X_n = M_n X_{n-1} + Q_n.

States are kept as log X_n. Heavy log-tailed Q routinely produces values far
beyond the double range (log Q of order 10^4 is common), and the chain comes
back from them; a linear representation would saturate at inf for good.
"""
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import (BoundViolation, CouplingViolation, HorizonExhausted, PreconditionError,
                     ScheduleDirectionMismatch, SimulationOverflow)
from .model import open_uniform
from .rng import stream

LOG_MAX = math.log(np.finfo(float).max)
DESCENDING, ASCENDING = "descending", "ascending"


@njit(cache=True, nogil=True)
def lae(a, b):
    """log(e^a + e^b), exact at -inf."""
    hi = max(a, b)
    if hi == -np.inf:
        return hi
    return hi + np.log1p(np.exp(-abs(a - b)))


@njit(cache=True, nogil=True)
def forward_log(log_m, log_q, lx0):
    n = log_m.shape[0]
    out = np.empty(n + 1)
    out[0] = lx0
    lx = lx0
    for k in range(n):
        lx = lae(log_m[k] + lx, log_q[k])
        out[k + 1] = lx
    return out


@njit(cache=True, nogil=True)
def linear_forward(m, incr, d0):
    """d_k = m_k d_{k-1} + incr_k in plain arithmetic."""
    n = m.shape[0]
    out = np.empty(n + 1)
    out[0] = d0
    d = d0
    for k in range(n):
        if m[k] == 0.0:
            d = incr[k]
        else:
            d = m[k] * d + incr[k]
        out[k + 1] = d
    return out


def _log(x):
    return math.log(x) if x > 0 else -math.inf


def backward_log(s, log_q, lx0):
    """log of Pi_k x0 + sum_{j<=k} Pi_{j-1} Q_j for k = 0..n."""
    terms = s[:-1] + log_q
    acc = np.concatenate([[-np.inf], np.logaddexp.accumulate(terms)]) if len(terms) else np.array([-np.inf])
    return np.logaddexp(acc, s + lx0)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One path. Arrays have length n + 1 (states) or n (increments)."""
    x0: float
    log_m: np.ndarray
    log_q: np.ndarray
    log_x: np.ndarray
    s: np.ndarray
    log_xhat: np.ndarray = None
    seed: int = None
    spec: object = None

    @property
    def n(self):
        return len(self.log_m)

    def _exp(self, arr):
        over = np.flatnonzero(arr > LOG_MAX)
        if len(over):
            raise SimulationOverflow(over[0])
        return np.exp(arr)

    @property
    def x(self):
        return self._exp(self.log_x)

    @property
    def xhat(self):
        return None if self.log_xhat is None else self._exp(self.log_xhat)

    @property
    def pi(self):
        return np.exp(self.s)

    @property
    def m(self):
        return np.exp(self.log_m)

    @property
    def q(self):
        with np.errstate(over="ignore"):
            return np.exp(self.log_q)

    @property
    def overflow_step(self):
        """First index whose state exceeds the double range, or None."""
        over = np.flatnonzero(self.log_x > LOG_MAX)
        return int(over[0]) if len(over) else None

    def recursion_residual(self):
        """Largest |log X_k - log(M_k X_{k-1} + Q_k)|, i.e. the relative residual."""
        rhs = np.logaddexp(self.log_m + self.log_x[:-1], self.log_q)
        both = np.isneginf(rhs) & np.isneginf(self.log_x[1:])
        diff = np.where(both, 0.0, np.abs(self.log_x[1:] - rhs))
        return float(diff.max()) if len(diff) else 0.0

    def to_csv(self, path):
        cols = [np.arange(self.n + 1), self.log_x, self.s]
        header = "n,log_X_n,S_n"
        if self.log_xhat is not None:
            cols.append(self.log_xhat)
            header += ",log_Xhat_n"
        np.savetxt(path, np.column_stack(cols), delimiter=",", header=header, comments="",
                   fmt=["%d"] + ["%.17g"] * (len(cols) - 1))


def from_increments(log_m, log_q, x0=0.0, backward=False, seed=None, spec=None):
    log_m = np.ascontiguousarray(log_m, dtype=float)
    log_q = np.ascontiguousarray(log_q, dtype=float)
    if log_m.shape != log_q.shape or log_m.ndim != 1:
        raise PreconditionError("increments must be 1-d arrays of equal length")
    if x0 < 0:
        raise PreconditionError("x0 must be nonnegative")
    lx0 = _log(x0)
    s = np.concatenate([[0.0], np.cumsum(log_m)])
    log_x = forward_log(log_m, log_q, lx0)
    log_xhat = backward_log(s, log_q, lx0) if backward else None
    return Trajectory(float(x0), log_m, log_q, log_x, s, log_xhat, seed, spec)


def simulate_forward(spec, x0, n, seed=None):
    if n < 1:
        raise PreconditionError("n must be >= 1")
    lm, lq = spec.sample_log_pairs(stream(seed, 0), n)
    return from_increments(lm, lq, x0, backward=False, seed=seed, spec=spec)


def simulate_backward(spec, x0, n, seed=None):
    """Same increments as simulate_forward with the same seed, plus the backward iterates."""
    if n < 1:
        raise PreconditionError("n must be >= 1")
    lm, lq = spec.sample_log_pairs(stream(seed, 0), n)
    return from_increments(lm, lq, x0, backward=True, seed=seed, spec=spec)


def sample_endpoints(spec, x0, n, R, seed=None, backward=False, stream_id=0, chunk=2 ** 20):
    """log X_n (or log Xhat_n) for R independent replicates."""
    rng = stream(seed, stream_id)
    lx0 = _log(x0)
    out = np.empty(R)
    per = max(1, chunk // n)
    for a in range(0, R, per):
        b = min(R, a + per)
        lm, lq = spec.sample_log_pairs(rng, n * (b - a))
        lm, lq = lm.reshape(n, b - a), lq.reshape(n, b - a)
        if backward:
            s = np.vstack([np.zeros(b - a), np.cumsum(lm, axis=0)])
            acc = np.logaddexp.reduce(s[:-1] + lq, axis=0)
            out[a:b] = np.logaddexp(acc, s[-1] + lx0)
        else:
            lx = np.full(b - a, lx0)
            for k in range(n):
                lx = np.logaddexp(lm[k] + lx, lq[k])
            out[a:b] = lx
    return out


# --- ladder epochs ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LadderSchedule:
    c: float
    direction: str
    sigma: np.ndarray     # sigma_0 = 0 < sigma_1 < ...
    horizon: int
    pending: int          # steps after the last epoch without a further crossing

    @property
    def tau(self):
        return np.diff(self.sigma)

    @property
    def n_epochs(self):
        return len(self.sigma) - 1


def ladder_epochs(traj, c, direction=DESCENDING, max_epochs=None):
    """Strict ladder epochs of W_k = S_k + c k: new strict minima (descending) or maxima."""
    if c < 0:
        raise PreconditionError("c must be >= 0")
    if direction not in (DESCENDING, ASCENDING):
        raise PreconditionError(f"direction must be {DESCENDING!r} or {ASCENDING!r}")
    w = traj.s + c * np.arange(traj.n + 1)
    if direction == DESCENDING:
        rec = np.minimum.accumulate(w)[:-1]
        idx = np.flatnonzero(w[1:] < rec) + 1
    else:
        rec = np.maximum.accumulate(w)[:-1]
        idx = np.flatnonzero(w[1:] > rec) + 1
    if max_epochs is not None:
        idx = idx[:max_epochs]
    if len(idx) == 0:
        raise HorizonExhausted(f"no {direction} ladder epoch within {traj.n} steps")
    sigma = np.concatenate([[0], idx]).astype(np.int64)
    return LadderSchedule(float(c), direction, sigma, traj.n, int(traj.n - sigma[-1]))


def _block_lse(terms, starts):
    return np.logaddexp.reduceat(terms, starts)


@dataclass(frozen=True, eq=False)
class Subsampled:
    """The chain at ladder epochs with its effective increments.

    log_q_fwd are the shifts that drive X_{sigma_n} forward; log_q_star are
    the shifts sum_k (Pi_{k-1}/Pi_{sigma_{n-1}}) Q_k that build the backward
    iterate Xhat_{sigma_n} = sum_j Pi_{sigma_{j-1}} Q*_j.
    """
    sigma: np.ndarray
    x0: float
    log_m_star: np.ndarray
    log_q_star: np.ndarray
    log_q_fwd: np.ndarray
    log_x: np.ndarray
    log_xhat: np.ndarray

    def as_trajectory(self):
        s = np.concatenate([[0.0], np.cumsum(self.log_m_star)])
        return Trajectory(self.x0, self.log_m_star, self.log_q_fwd, self.log_x, s, self.log_xhat)


def subsample_at(traj, schedule):
    sig = schedule.sigma
    if sig[-1] > traj.n:
        raise PreconditionError("schedule does not fit the trajectory")
    s, lq = traj.s, traj.log_q
    starts = sig[:-1]
    k = np.arange(1, sig[-1] + 1)
    log_m_star = np.diff(s[sig])
    log_q_star = _block_lse(s[k - 1] + lq[k - 1], starts) - s[starts]
    log_q_fwd = _block_lse(lq[k - 1] - s[k], starts) + s[sig[1:]]
    lx0 = _log(traj.x0)
    log_x = forward_log(log_m_star, log_q_fwd, lx0)
    acc = np.concatenate([[-np.inf], np.logaddexp.accumulate(s[starts] + log_q_star)])
    log_xhat = np.logaddexp(acc, s[sig] + lx0)
    return Subsampled(sig, traj.x0, log_m_star, log_q_star, log_q_fwd, log_x, log_xhat)


def log_gap(a, b):
    """b - a for logs, with -inf - (-inf) read as 0 (both numbers are zero)."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    both = np.isneginf(a) & np.isneginf(b)
    with np.errstate(invalid="ignore"):
        return np.where(both, 0.0, b - a)


def log_leq(a, b, rtol):
    """a <= b up to a relative tolerance, with both sides given as logs."""
    b = np.asarray(b, float)
    tol = rtol * np.maximum(1.0, np.where(np.isfinite(b), np.abs(b), 1.0))
    return log_gap(a, b) >= -tol


@dataclass(frozen=True, eq=False)
class BoundingChain:
    direction: str
    gamma: float
    sigma: np.ndarray
    log_q_gamma: np.ndarray    # Q_n(gamma)
    log_x_gamma: np.ndarray    # X_{sigma_n}(gamma)
    log_y_hat: np.ndarray      # Yhat_n
    log_x_sigma: np.ndarray    # X_{sigma_n}
    log_xhat_sigma: np.ndarray # Xhat_{sigma_n}

    def margins(self):
        """Smallest log-gaps in the direction of the inequalities (>= 0 up to rounding)."""
        sgn = 1.0 if self.direction == DESCENDING else -1.0
        g1 = sgn * log_gap(self.log_x_sigma, self.log_x_gamma)
        g2 = sgn * log_gap(self.log_xhat_sigma, self.log_y_hat)
        return float(g1.min()), float(g2.min())


def bounding_chain(traj, schedule, gamma=None, part=None, check=True, rtol=1e-9):
    """Comparison chain X_{sigma_n}(gamma) and backward bound Yhat_n.

    part "a" (descending schedule) gives X_{sigma_n} <= X_{sigma_n}(gamma) and
    Xhat_{sigma_n} <= Yhat_n; part "b" (ascending) reverses both. gamma
    defaults to e^{-c}, for which the inequalities hold on every path.
    """
    expected = {"a": DESCENDING, "b": ASCENDING}
    if part is not None and expected.get(part) != schedule.direction:
        raise ScheduleDirectionMismatch(
            f"part {part!r} needs a {expected.get(part)} schedule, got {schedule.direction}")
    if gamma is None:
        gamma = math.exp(-schedule.c)
    if not 0 < gamma <= 1:
        raise PreconditionError("gamma must lie in (0, 1]")
    lg = math.log(gamma)
    sig = schedule.sigma
    starts = sig[:-1]
    k = np.arange(1, sig[-1] + 1)
    lq = traj.log_q
    owner = np.repeat(sig[1:], np.diff(sig))
    log_q_gamma = _block_lse((owner - k) * lg + lq[k - 1], starts)
    lx0 = _log(traj.x0)
    log_x_gamma = forward_log(np.diff(sig) * lg, log_q_gamma, lx0)

    sub = subsample_at(traj, schedule)
    acc = np.concatenate([[-np.inf], np.logaddexp.accumulate(starts * lg + sub.log_q_star)])
    log_y_hat = np.logaddexp(acc, sig * lg + lx0)
    out = BoundingChain(schedule.direction, gamma, sig, log_q_gamma, log_x_gamma, log_y_hat,
                        traj.log_x[sig], sub.log_xhat)
    if check:
        if schedule.direction == DESCENDING:
            ok1 = log_leq(out.log_x_sigma, log_x_gamma, rtol)
            ok2 = log_leq(out.log_xhat_sigma, log_y_hat, rtol)
        else:
            ok1 = log_leq(log_x_gamma, out.log_x_sigma, rtol)
            ok2 = log_leq(log_y_hat, out.log_xhat_sigma, rtol)
        bad = np.flatnonzero(~(ok1 & ok2))
        if len(bad):
            raise BoundViolation(f"bounding inequality fails at epoch {bad[0]}")
    return out


# --- couplings -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CoupledPair:
    kind: str               # shift | truncate
    first: Trajectory       # driven by Q
    second: Trajectory      # driven by Q'
    diff: np.ndarray        # X'_k - X_k, run through its own recursion
    t0: float = None
    beta: float = None
    gamma: float = None


def _diff_increments(lq, lqp):
    """Q'_k - Q_k without forming either number when they are huge."""
    with np.errstate(over="ignore", invalid="ignore"):
        up = lqp >= lq
        big = np.where(up, lqp, lq)
        small = np.where(up, lq, lqp)
        mag = np.where(np.isneginf(big), 0.0, np.exp(big) * -np.expm1(small - big))
        mag = np.where(small == big, 0.0, mag)
    return np.where(up, mag, -mag)


def _m_sup(spec):
    sup = spec.m_law.support_log
    return None if sup is None else math.exp(sup[1])


def couple_shift(spec, q_prime_law, t0, x0, x0_prime, n, seed=None):
    """Comonotone coupling of Q and Q' through a shared uniform, with the same M stream."""
    if t0 < 0:
        raise PreconditionError("t0 must be >= 0")
    q_law = spec.q_law
    grid = t0 + np.concatenate([[0.0], np.logspace(-6, 300, 400)])
    with np.errstate(divide="ignore"):
        lg = np.log(grid)
    if np.any(np.asarray(q_prime_law.tail_log(lg)) < np.asarray(q_law.tail_log(lg)) - 1e-15):
        raise PreconditionError("tail domination P(Q' > t) >= P(Q > t) for t >= t0 fails")
    rng = stream(seed, 0)
    u = open_uniform(rng, n)
    if spec.dependence == "comonotone":
        lm = np.asarray(spec.m_law.ppf_log(u), dtype=float)
    else:
        lm = spec.m_law.sample_log(rng, n)
    lq = np.asarray(q_law.ppf_log(u), dtype=float)
    lqp = np.asarray(q_prime_law.ppf_log(u), dtype=float)

    # Q' >= Q - t0, checked in logs where Q > t0
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        need = lq > _log(t0) if t0 > 0 else np.ones(n, bool)
        floor = np.where(need, lq + np.log1p(-t0 * np.exp(-np.where(need, lq, 0.0))), -np.inf)
    bad = np.flatnonzero(need & (lqp < floor - 1e-12 * np.maximum(1, np.abs(floor))))
    if len(bad):
        raise CouplingViolation(f"Q' < Q - t0 at step {bad[0] + 1}")
    first = from_increments(lm, lq, x0, seed=seed, spec=spec)
    second = from_increments(lm, lqp, x0_prime, seed=seed)
    diff = linear_forward(np.exp(lm), _diff_increments(lq, lqp), float(x0_prime - x0))
    return CoupledPair("shift", first, second, diff, t0=float(t0), gamma=_m_sup(spec))


def couple_truncate(spec, beta, x0, x0_prime, n, seed=None, check=True):
    """Q' = Q 1{Q > beta} on the same draws."""
    if not beta > 0:
        raise PreconditionError("beta must be positive")
    gamma = _m_sup(spec)
    if gamma is None or not gamma < 1:
        raise PreconditionError("the bound needs M <= gamma < 1 a.s.")
    lm, lq = spec.sample_log_pairs(stream(seed, 0), n)
    lqp = np.where(lq > math.log(beta), lq, -np.inf)
    first = from_increments(lm, lq, x0, seed=seed, spec=spec)
    second = from_increments(lm, lqp, x0_prime, seed=seed)
    diff = linear_forward(np.exp(lm), _diff_increments(lq, lqp), float(x0_prime - x0))
    pair = CoupledPair("truncate", first, second, diff, beta=float(beta), gamma=gamma)
    if check:
        k = np.arange(n + 1)
        bound = gamma ** k * abs(x0_prime - x0) + beta / (1 - gamma)
        bad = np.flatnonzero(np.abs(diff) > bound * (1 + 1e-12))
        if len(bad):
            raise BoundViolation(f"|X' - X| exceeds the truncation bound at step {bad[0]}")
    return pair
