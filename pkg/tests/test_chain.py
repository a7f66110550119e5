import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from perpetuity_lab.affine import AffineMap
from perpetuity_lab.chain import (ASCENDING, DESCENDING, bounding_chain, couple_shift, couple_truncate,
                                  from_increments, ladder_epochs, sample_endpoints, simulate_backward,
                                  simulate_forward, subsample_at)
from perpetuity_lab.errors import (BoundViolation, CouplingViolation, HorizonExhausted,
                                   PreconditionError, ScheduleDirectionMismatch, SimulationOverflow)
from perpetuity_lab.model import (DistributionSpec, FiniteSupportSpec, LogExponential, LogTail, PointMass,
                                  TwoPoint)

HALF_ONE = DistributionSpec(PointMass(0.5), PointMass(1.0))
E1 = PointMass(math.exp(-1), -1.0)
PM = TwoPoint.from_logs(-3.0, 0.5, 2.0)


def test_forward_examples():
    t = simulate_forward(HALF_ONE, 0.0, 3, seed=0)
    assert t.x[3] == 1.75
    assert np.allclose(t.x, 2 * (1 - 2.0 ** -np.arange(4)), rtol=1e-15)
    t = simulate_forward(DistributionSpec(LogExponential(1.0), PointMass(0.0)), 0.0, 50, seed=1)
    assert np.all(t.x == 0)
    t = simulate_forward(HALF_ONE, 2.0, 40, seed=0)
    assert np.all(t.x == 2.0)
    with pytest.raises(PreconditionError):
        simulate_forward(HALF_ONE, 0.0, 0)


def test_backward_examples():
    t = simulate_backward(HALF_ONE, 0.0, 20, seed=0)
    assert np.allclose(t.xhat, t.x, rtol=1e-15)
    sp = DistributionSpec(LogExponential(1.0), LogExponential(1.0, 1))
    t = simulate_backward(sp, 1.3, 1, seed=5)
    assert abs(t.xhat[1] - t.x[1]) <= 1e-15 * t.x[1]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32), st.integers(1, 300))
def test_backward_nondecreasing_from_zero(seed, n):
    sp = DistributionSpec(LogExponential(1.0), LogTail(1.0))
    t = simulate_backward(sp, 0.0, n, seed)
    assert np.all(t.log_xhat[1:] >= t.log_xhat[:-1])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32), st.floats(0, 10))
def test_recursion_and_products(seed, x0):
    sp = DistributionSpec(LogExponential(0.7), LogExponential(1.0, 1))
    t = simulate_backward(sp, x0, 200, seed)
    assert t.recursion_residual() <= 1e-12
    assert np.array_equal(t.s, np.concatenate([[0.0], np.cumsum(t.log_m)]))
    # X_hat_n = Pi_n x0 + sum Pi_{k-1} Q_k
    direct = t.pi[-1] * x0 + np.sum(t.pi[:-1] * t.q)
    assert abs(t.xhat[-1] - direct) <= 1e-12 * direct


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32), st.floats(0, 50), st.floats(0, 50))
def test_contraction_identity(seed, x, y):
    sp = DistributionSpec(LogExponential(1.0), LogExponential(1.0, 1))
    a = simulate_forward(sp, x, 30, seed)
    b = simulate_forward(sp, y, 30, seed)
    lhs = a.x - b.x
    rhs = a.pi * (x - y)
    assert np.all(np.abs(lhs - rhs) <= 1e-12 * np.maximum(a.x, b.x) + 1e-300)


def test_reproducible():
    sp = DistributionSpec(LogExponential(1.0), LogTail(0.7))
    a, b = simulate_backward(sp, 1.0, 1000, 7), simulate_backward(sp, 1.0, 1000, 7)
    for f in ("log_m", "log_q", "log_x", "s", "log_xhat"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
    assert not np.array_equal(a.log_x, simulate_forward(sp, 1.0, 1000, 8).log_x)


def test_overflow_reports_step():
    sp = DistributionSpec(PointMass(math.exp(-0.1), -0.1), LogExponential(1e-3, 1))
    t = simulate_forward(sp, 0.0, 200, seed=0)
    step = t.overflow_step
    assert step is not None
    with pytest.raises(SimulationOverflow) as e:
        t.x
    assert e.value.step == step


def test_forward_backward_same_law():
    sp = DistributionSpec(LogExponential(1.0), LogExponential(2.0, 1))
    f = sample_endpoints(sp, 0.5, 20, 10 ** 5, seed=3, stream_id=0)
    b = sample_endpoints(sp, 0.5, 20, 10 ** 5, seed=3, stream_id=1, backward=True)
    assert stats.ks_2samp(f, b).pvalue > 0.001


def test_csv_roundtrip(tmp_path):
    t = simulate_backward(DistributionSpec(LogExponential(1.0), LogTail(1.0)), 0.0, 100, 0)
    t.to_csv(tmp_path / "t.csv")
    arr = np.loadtxt(tmp_path / "t.csv", delimiter=",", skiprows=1)
    assert np.array_equal(arr[:, 1], t.log_x) and np.array_equal(arr[:, 3], t.log_xhat)


# --- ladder epochs ------------------------------------------------------

def const_traj(log_m, n, log_q=0.0):
    return from_increments(np.full(n, log_m), np.full(n, log_q), 0.0)


def test_ladder_examples():
    t = const_traj(-1.0, 50)
    assert np.array_equal(ladder_epochs(t, 0.5, DESCENDING).sigma, np.arange(51))
    assert np.array_equal(ladder_epochs(t, 2.0, ASCENDING).sigma, np.arange(51))
    with pytest.raises(HorizonExhausted):
        ladder_epochs(t, 0.5, ASCENDING)
    with pytest.raises(PreconditionError):
        ladder_epochs(t, -1.0)


def enumerate_first_descent(depth):
    """Exact law of the first strict descent of a +-walk with steps -3, +2, by listing every path."""
    dist = {}
    for path in itertools.product((-3.0, 2.0), repeat=depth):
        s = np.cumsum(path)
        hit = np.flatnonzero(s < 0)
        k = int(hit[0]) + 1 if len(hit) else None
        dist[k] = dist.get(k, 0) + 0.5 ** depth
    return dist


def test_ladder_two_point_law():
    oracle = enumerate_first_descent(20)
    assert oracle[1] == 0.5
    sp = DistributionSpec(PM, PointMass(1.0))
    counts = {}
    R = 20000
    for r in range(R):
        t = simulate_forward(sp, 0.0, 20, seed=r)
        try:
            k = int(ladder_epochs(t, 0.0, DESCENDING, max_epochs=1).sigma[1])
        except HorizonExhausted:
            k = None
        counts[k] = counts.get(k, 0) + 1
    for k, p in oracle.items():
        assert abs(counts.get(k, 0) / R - p) <= 4 * math.sqrt(p * (1 - p) / R) + 1e-4


def test_ladder_first_passage_definition():
    sp = DistributionSpec(PM, PointMass(1.0))
    t = simulate_forward(sp, 0.0, 2000, seed=11)
    sch = ladder_epochs(t, 0.3, DESCENDING)
    w = t.s + 0.3 * np.arange(t.n + 1)
    for a, b in zip(sch.sigma[:-1], sch.sigma[1:]):
        assert w[b] < w[a]
        assert np.all(w[a + 1:b] >= w[a])


def test_ladder_increments_iid_across_replicates():
    sp = DistributionSpec(PM, PointMass(1.0))
    t1, t2 = [], []
    for r in range(3000):
        tau = ladder_epochs(simulate_forward(sp, 0.0, 400, seed=r), 0.0, DESCENDING, max_epochs=2).tau
        if len(tau) == 2:
            t1.append(tau[0])
            t2.append(tau[1])
    assert stats.ks_2samp(t1, t2).pvalue > 0.001


# --- subsampled and bounding chains ---------------------------------------

def test_subsample_identity_schedule():
    sp = DistributionSpec(E1, LogExponential(1.0, 1))
    t = simulate_forward(sp, 0.5, 100, seed=2)
    sch = ladder_epochs(t, 0.5, DESCENDING)
    sub = subsample_at(t, sch)
    assert np.array_equal(sch.sigma, np.arange(101))
    assert np.allclose(sub.log_x, t.log_x, rtol=1e-13)
    assert np.allclose(sub.log_q_star[0], t.log_q[0], rtol=1e-15)


def test_subsample_residual_many_paths():
    sp = DistributionSpec(PM, LogExponential(1.0, 1))
    worst = 0.0
    for r in range(1000):
        t = simulate_backward(sp, 1.0, 300, seed=r)
        sch = ladder_epochs(t, 0.2, DESCENDING)
        sub = subsample_at(t, sch)
        # the chain at the epochs obeys its own recursion
        worst = max(worst, sub.as_trajectory().recursion_residual())
        # and agrees with the original path
        worst = max(worst, np.max(np.abs(sub.log_x - t.log_x[sch.sigma])))
        worst = max(worst, np.max(np.abs(sub.log_xhat - t.log_xhat[sch.sigma])))
        # Pi_{sigma_n} from products of M*_k
        assert np.allclose(np.cumsum(sub.log_m_star), t.s[sch.sigma[1:]], rtol=1e-10, atol=1e-12)
        assert np.all(sub.log_m_star < -0.2 * sch.tau + 1e-9)
    assert worst < 1e-10


def test_bounding_tight_for_constant_m():
    g = math.exp(-1)
    t = simulate_backward(DistributionSpec(E1, LogExponential(1.0, 1)), 0.7, 200, seed=0)
    sch = ladder_epochs(t, 1.0 - 1e-3, DESCENDING)
    bc = bounding_chain(t, sch, gamma=g)
    assert np.allclose(bc.log_x_gamma, bc.log_x_sigma, rtol=1e-12, atol=1e-12)


def test_bounding_strict_after_first_positive_q():
    t = simulate_backward(DistributionSpec(E1, LogExponential(1.0, 1)), 0.0, 200, seed=0)
    sch = ladder_epochs(t, 0.5, DESCENDING)
    bc = bounding_chain(t, sch)
    assert np.all(bc.log_x_gamma[2:] > bc.log_x_sigma[2:])


def test_bounding_single_step_epochs():
    t = simulate_backward(DistributionSpec(E1, LogExponential(1.0, 1)), 0.0, 50, seed=0)
    sch = ladder_epochs(t, 0.5, DESCENDING)
    for gamma in (0.1, 0.5, 0.9):
        bc = bounding_chain(t, sch, gamma=gamma, check=False)
        assert np.allclose(bc.log_q_gamma, t.log_q, rtol=1e-15)


@pytest.mark.parametrize("direction,c", [(DESCENDING, 0.0), (DESCENDING, 0.4), (ASCENDING, 2.0)])
def test_bounding_holds_on_every_path(direction, c):
    sp = DistributionSpec(PM, LogTail(1.0))
    for r in range(300):
        t = simulate_backward(sp, 0.5, 400, seed=r)
        try:
            sch = ladder_epochs(t, c, direction)
        except HorizonExhausted:
            continue
        bc = bounding_chain(t, sch)
        m1, m2 = bc.margins()
        assert m1 >= -1e-9 and m2 >= -1e-9


def test_bounding_direction_mismatch():
    t = const_traj(-1.0, 20)
    with pytest.raises(ScheduleDirectionMismatch):
        bounding_chain(t, ladder_epochs(t, 0.5, DESCENDING), part="b")
    with pytest.raises(BoundViolation):
        # gamma below e^{-c} breaks part (a)
        bounding_chain(from_increments(np.full(20, -1.0), np.zeros(20), 1.0),
                       ladder_epochs(const_traj(-1.0, 20), 0.5, DESCENDING), gamma=0.1)


# --- couplings ---------------------------------------------------------------

def test_couple_shift_same_law():
    sp = DistributionSpec(E1, LogTail(1.0))
    pair = couple_shift(sp, LogTail(1.0), 0.0, 1.0, 1.0, 500, seed=0)
    assert np.array_equal(pair.first.log_x, pair.second.log_x)
    assert np.array_equal(pair.first.log_m, pair.second.log_m)


def test_couple_shift_quantile_domination():
    sp = DistributionSpec(E1, LogTail(1.0))
    pair = couple_shift(sp, LogTail(2.0), 0.0, 0.0, 0.0, 2000, seed=0)
    assert np.all(pair.second.log_q >= pair.first.log_q)
    assert np.all(pair.second.log_x >= pair.first.log_x - 1e-12)
    with pytest.raises(PreconditionError):
        couple_shift(DistributionSpec(E1, LogTail(2.0)), LogTail(1.0), 0.0, 0.0, 0.0, 10)


def test_couple_shift_difference_bound():
    # Q' = (Q - 1)_+ in law: P(Q' > t) = P(Q > t + 1), so Q' >= Q - t0 with t0 = 1
    from perpetuity_lab.model import Truncated
    gamma = math.exp(-1)
    sp = DistributionSpec(E1, LogExponential(1.0, 1))
    qp = Truncated(LogExponential(1.0, 1), 2.0)
    pair = couple_shift(sp, qp, 2.0, 0.0, 0.0, 5000, seed=4)
    assert np.all(pair.diff >= -2.0 / (1 - gamma) - 1e-12)


def test_couple_shift_detects_violation():
    sp = DistributionSpec(E1, LogExponential(1.0, 1))
    with pytest.raises((CouplingViolation, PreconditionError)):
        couple_shift(sp, PointMass(1.0), 0.0, 0.0, 0.0, 100, seed=0)


def test_couple_truncate_examples():
    pair = couple_truncate(HALF_ONE, 1.0, 0.0, 0.0, 60, seed=0)
    assert np.all(pair.second.log_q == -np.inf)
    assert abs(pair.diff[-1] + 2.0) < 1e-12
    pair = couple_truncate(HALF_ONE, 5.0, 0.0, 3.0, 30, seed=0)
    assert np.allclose(pair.second.x, 3.0 * 0.5 ** np.arange(31), rtol=1e-15)
    sp = DistributionSpec(E1, LogExponential(1.0, 1))
    pair = couple_truncate(sp, 1e-300, 0.3, 0.3, 500, seed=0)
    assert np.array_equal(pair.first.log_x, pair.second.log_x)
    with pytest.raises(PreconditionError):
        couple_truncate(DistributionSpec(LogExponential(1.0), LogTail(1.0)), 1.0, 0, 0, 10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32), st.floats(0.01, 10), st.floats(0, 10), st.floats(0, 10))
def test_couple_truncate_bound_property(seed, beta, x0, x1):
    sp = DistributionSpec(TwoPoint(0.3, 0.5, 0.6), LogExponential(1.0, 1))
    pair = couple_truncate(sp, beta, x0, x1, 200, seed=seed)
    k = np.arange(201)
    assert np.all(np.abs(pair.diff) <= (0.6 ** k * abs(x1 - x0) + beta / 0.4) * (1 + 1e-12))


def test_finite_support_spec_runs():
    sp = FiniteSupportSpec.uniform([AffineMap(1 / 3, 0), AffineMap(1 / 3, 2 / 3)])
    t = simulate_forward(sp, 0.0, 100, seed=0)
    assert np.all((t.x >= 0) & (t.x <= 1 + 1e-12))
