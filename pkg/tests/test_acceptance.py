"""Acceptance criteria. Each test prints one PASS/FAIL line, then asserts."""
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import ks_2samp

from perpetuity_lab.affine import AffineMap
from perpetuity_lab.attractor import (approximate_attractor, build_tilting, chaos_game, hausdorff,
                                      in_cantor)
from perpetuity_lab.chain import (DESCENDING, bounding_chain, couple_shift, couple_truncate, ladder_epochs,
                                  sample_endpoints, simulate_forward)
from perpetuity_lab.classify import Outcome, classify_spec, zerner_series
from perpetuity_lab.cli import ExperimentConfig
from perpetuity_lab.diagnostics import (RECURRENT, TRANSIENT, agreement, check_kellerer_bounds,
                                        check_tail_lemma, enumerate_ladder_time, law_stabilization,
                                        recurrence_diagnostic, verify_comparison_bounds)
from perpetuity_lab.errors import BoundViolation
from perpetuity_lab.model import (Discrete, DistributionSpec, FiniteSupportSpec, LogExponential, LogTail,
                                  PointMass, Truncated, TwoPoint, check_nondegeneracy, tail_profile)
from perpetuity_lab.rng import stream

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
E1 = PointMass(math.exp(-1), -1.0)
TWO_POINT = TwoPoint.from_logs(-3.0, 0.5, 2.0)


@pytest.fixture
def report(capsys):
    def emit(k, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {k}: {detail}", flush=True)
        assert ok, detail
    return emit


def verdict(sp):
    return classify_spec(tail_profile(sp), check_nondegeneracy(sp))


def test_criterion_01_main_dichotomy(report):
    expected = {0.25: (Outcome.NULL, RECURRENT), 0.5: (Outcome.NULL, RECURRENT),
                1.5: (Outcome.TRANSIENT, TRANSIENT), 2.0: (Outcome.TRANSIENT, TRANSIENT)}
    t0 = time.perf_counter()
    misses, contradictions = [], 0
    for s, (outcome, conclusion) in expected.items():
        sp = DistributionSpec(E1, LogTail(s))
        v = verdict(sp)
        for seed in range(5):
            d = recurrence_diagnostic(sp, 0.0, math.e, 10 ** 5, 200, seed=seed)
            contradictions += agreement(v, d.conclusion) == "contradiction"
            if (v.outcome, d.conclusion) != (outcome, conclusion):
                misses.append(f"s={s} seed={seed}: {v.outcome.value}+{d.conclusion} "
                              f"(slope {d.slope:.3g}, stay {d.stay_fraction:.2f})")
    elapsed = time.perf_counter() - t0
    ok = not misses and contradictions == 0 and elapsed < 120
    report(1, ok, f"{20 - len(misses)}/20 runs as expected, {contradictions} contradictions, "
                  f"{elapsed:.0f}s" + ("; " + "; ".join(misses) if misses else ""))


def test_criterion_02_kellerer_product(report):
    n = np.unique(np.round(np.logspace(0, 4, 17)).astype(int))
    parts, ok = [], True
    for s in (0.5, 2.0):
        r = check_kellerer_bounds(math.exp(-1), LogTail(s), 20.0, n, 10 ** 5, seed=0)
        z = r.max_z("max")
        ok &= z <= 3
        parts.append(f"s={s} max |z|={z:.2f}")
    report(2, ok, ", ".join(parts) + f" over {len(n)} n values up to 10^4, R=10^5, t=20")


def test_criterion_03_tail_lemma(report):
    t_grid = np.logspace(1, 4, 40)
    one = check_tail_lemma(DistributionSpec(E1, LogTail(1.0)), 0.5, t_grid, 10 ** 5, seed=0)
    en = enumerate_ladder_time([-3.0, 2.0], [0.5, 0.5], 0.0, 30)
    two = check_tail_lemma(DistributionSpec(TWO_POINT, LogTail(1.0)), 0.0, t_grid, 10 ** 5, seed=0,
                           e_sigma=en.e_sigma)
    bound_ok = en.error_bound < 1e-4
    ok = one.agree and two.agree and bound_ok
    report(3, ok, f"sigma=1: t*P={one.measured:.3f} vs s=1 (se {one.se:.3f}, t={one.t_star:.0f}, "
                  f"{'agree' if one.agree else 'disagree'}); two-point: t*P={two.measured:.3f} vs "
                  f"s*E sigma={two.e_sigma:.4f} (se {two.se:.3f}, {'agree' if two.agree else 'disagree'}); "
                  f"depth-30 enumeration error bound {en.error_bound:.3g} "
                  f"({'<' if bound_ok else '>='} 1e-4)")


def test_criterion_04_contraction_identity(report):
    rng = np.random.default_rng(2024)
    ms = [PointMass(0.5), E1, TwoPoint.from_logs(-1.0, 0.5, -0.3), LogExponential(1.0), TWO_POINT]
    qs = [PointMass(1.0), TwoPoint(0.0, 0.5, 2.0), LogExponential(1.0, 1), LogExponential(0.5, 1),
          Discrete((-1.0, 0.0, 3.0), (0.2, 0.5, 0.3))]
    worst, fails = 0.0, 0
    for i in range(1000):
        sp = DistributionSpec(ms[rng.integers(len(ms))], qs[rng.integers(len(qs))])
        x, y = rng.uniform(0, 50, 2)
        n = int(rng.integers(1, 1001))
        a = simulate_forward(sp, x, n, seed=i)
        b = simulate_forward(sp, y, n, seed=i)
        err = np.abs((a.x - b.x) - a.pi * (x - y)) / np.maximum(np.maximum(a.x, b.x), 1e-300)
        worst = max(worst, float(err.max()))
        fails += bool(np.any(err > 1e-12))
    report(4, fails == 0, f"{1000 - fails}/1000 instances within 1e-12 relative, worst {worst:.2e}")


def test_criterion_05_forward_backward_law(report):
    specs = {"PM+LogTail(1)": DistributionSpec(TWO_POINT, LogTail(1.0)),
             "LogExp": DistributionSpec(LogExponential(1.0), LogExponential(1.0, 1)),
             "TwoPoint+LogTail(0.5)": DistributionSpec(TwoPoint(0.3, 0.5, 0.6), LogTail(0.5))}
    parts, ok = [], True
    for name, sp in specs.items():
        for n in (10, 100):
            f = sample_endpoints(sp, 0.5, n, 10 ** 5, seed=11, stream_id=0)
            b = sample_endpoints(sp, 0.5, n, 10 ** 5, seed=11, stream_id=1, backward=True)
            p = ks_2samp(f, b).pvalue
            ok &= p > 0.001
            parts.append(f"{name} n={n} p={p:.3f}")
    report(5, ok, "; ".join(parts))


def test_criterion_06_cantor(report):
    t0 = time.perf_counter()
    sp = FiniteSupportSpec.uniform([AffineMap(1 / 3, 0), AffineMap(1 / 3, 2 / 3)])
    a = approximate_attractor(sp, 10)
    top = a.points_at_length(10)
    distinct = len(np.unique(top))
    ternary = bool(np.all(in_cantor(top, digits=10)))
    h = hausdorff(chaos_game(sp, 10 ** 6, 1000, seed=0), a.net)
    elapsed = time.perf_counter() - t0
    ok = distinct == 2 ** 10 and ternary and h <= 0.01 and elapsed < 30
    report(6, ok, f"{distinct} distinct depth-10 fixed points, ternary test {'ok' if ternary else 'failed'}, "
                  f"Hausdorff {h:.4f}, {elapsed:.1f}s")


def test_criterion_07_interval(report):
    sp = FiniteSupportSpec.uniform([AffineMap(0.5, 0), AffineMap(0.5, 0.5)])
    a = approximate_attractor(sp, 14)
    g = float(a.gaps().max())
    inside = a.net.min() >= 0 and a.net.max() <= 1
    ok = g <= 2.0 ** -13 and inside and a.net[0] == 0 and a.net[-1] == 1
    report(7, ok, f"max gap {g:.3g} vs 2^-13={2.0 ** -13:.3g} over [{a.net[0]}, {a.net[-1]}]")


def test_criterion_08_zerner_consistency(report):
    parts, ok = [], True
    for s in (0.25, 0.5, 0.75, 1.25, 1.5, 2.0):
        sp = DistributionSpec(E1, LogTail(s))
        v = verdict(sp)
        r = zerner_series(sp, 1.0, n_max=10 ** 5 + 1)
        raabe = r.raabe_at(10 ** 5)
        agree = True
        if v.outcome not in (Outcome.BOUNDARY, Outcome.UNDETERMINED):
            agree = (v.outcome in (Outcome.NULL, Outcome.POSITIVE)) == (r.interpretation == "recurrent")
        ok &= agree and abs(raabe - s) <= 0.1
        parts.append(f"s={s}: {v.outcome.value}/{r.interpretation}, Raabe {raabe:.4f}")
    report(8, ok, "; ".join(parts))


def _pathwise(sp, paths, steps):
    c = -0.5 * tail_profile(sp).m_mean
    qp = Truncated(sp.q_law, 1.0)
    gamma_ok = sp.m_law.support_log[1] < 0
    for r in range(paths):
        t = simulate_forward(sp, 0.5, steps, seed=r)
        bounding_chain(t, ladder_epochs(t, c, DESCENDING))
        if not verify_comparison_bounds(couple_shift(sp, qp, 1.0, 0.5, 2.0, steps, seed=r)).passed:
            raise BoundViolation(f"shift coupling bound fails on path {r}")
        if gamma_ok:
            couple_truncate(sp, 1.0, 0.5, 2.0, steps, seed=r)


def test_criterion_09_pathwise(report):
    names = ["boundary", "geometric", "null_recurrent", "positive_recurrent", "transient", "two_point_m"]
    parts, ok = [], True
    for name in names:
        sp = ExperimentConfig.load(CONFIGS / f"{name}.json").build_spec()
        try:
            _pathwise(sp, 1000, 10 ** 4)
            parts.append(f"{name} ok")
        except BoundViolation as e:
            ok = False
            parts.append(f"{name}: {e}")
    report(9, ok, "1000 paths x 10^4 steps: " + ", ".join(parts))


def test_criterion_10_tilting(report):
    sp = FiniteSupportSpec.uniform([AffineMap(math.exp(-2), 1), AffineMap(math.exp(2), 1)])
    t = build_tilting(sp)
    lm, _ = t.tilted.sample_log_pairs(stream(0), 10 ** 6)
    v = verdict(t.tilted)
    ks = law_stabilization(t.tilted, 10 ** 5, seed=0)
    ok = t.drift < 0 and lm.mean() < 0 and v.outcome == Outcome.POSITIVE and ks <= 0.02
    report(10, ok, f"c1={t.c1}, tilted E log M={t.drift:.4f} (sampled {lm.mean():.4f}), "
                   f"{v.outcome.value} via {v.rule}, KS(N, 2N)={ks:.4f} at N=10^5")
