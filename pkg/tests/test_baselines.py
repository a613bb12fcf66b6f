import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fortune.baselines import (
    CpdConfig, DtwSignature, PdfModel, best_threshold, cpd_detect, cusum_statistic,
    dtw_distance, dtw_detect, dtw_sliding, fit_pdf, log_density, pdf_detect, watch_jumps,
)
from fortune.trace import TraceMatrix

NAMES = ("ICACHE.Miss", "ICACHE.Hit", "LLC_Miss")


def enumerate_dtw(a, b):
    """Minimum over every monotone warping path, found by explicit recursion."""
    best = math.inf

    def walk(i, j, acc):
        nonlocal best
        acc += (a[i] - b[j]) ** 2
        if i == len(a) - 1 and j == len(b) - 1:
            best = min(best, acc)
            return
        if i + 1 < len(a) and j + 1 < len(b):
            walk(i + 1, j + 1, acc)
        if i + 1 < len(a):
            walk(i + 1, j, acc)
        if j + 1 < len(b):
            walk(i, j + 1, acc)

    walk(0, 0, 0.0)
    return best


def test_dtw_trivial_cases():
    assert dtw_distance([1, 2, 3], [1, 2, 3]) == 0.0
    assert dtw_distance([0], [3]) == 9.0
    assert dtw_distance([1, 1, 1, 2], [1, 2]) == 0.0
    with pytest.raises(ValueError):
        dtw_distance([], [1])


def test_dtw_matches_path_enumeration_small():
    rng = np.random.default_rng(0)
    for _ in range(200):
        a = rng.integers(0, 3, rng.integers(1, 6))
        b = rng.integers(0, 3, rng.integers(1, 6))
        assert dtw_distance(a, b) == enumerate_dtw(a, b)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12),
       st.lists(st.floats(-50, 50), min_size=1, max_size=12))
def test_dtw_symmetric_non_negative(a, b):
    d = dtw_distance(a, b)
    assert d >= 0
    assert d == pytest.approx(dtw_distance(b, a), rel=1e-12, abs=1e-12)
    assert dtw_distance(a, a) == 0.0


def test_sliding_dtw_matches_scalar():
    rng = np.random.default_rng(1)
    x, ref = rng.random(30), rng.random(6)
    got = dtw_sliding(x, ref)
    want = [dtw_distance(x[k:k + 6], ref) for k in range(25)]
    assert np.allclose(got, want, rtol=0, atol=1e-12)


def _trace(values):
    return TraceMatrix(NAMES, np.asarray(values, dtype=float))


def test_dtw_detect_rules():
    T = 60
    v = np.full((3, T), 100.0)
    ref = [5.0, 50.0, 5.0, 50.0]
    v[0, 10:14] = ref
    v[2, 30] = 100.0 + 10 * 20.0  # spike 10x the jump threshold after the match
    sig = DtwSignature(tuple(ref), match_threshold=1.0, jump_threshold=(20.0, 20.0))
    res = dtw_detect(_trace(v), sig)
    assert res.events[0] == 13  # armed when the matching window closes
    assert res.flags[30] == 1 and res.flags.sum() == 1
    # spike before the match does not count
    v2 = v.copy()
    v2[2, 30] = 100.0
    v2[2, 5] = 400.0
    assert dtw_detect(_trace(v2), sig).flags.sum() == 0


def test_dtw_no_match_means_no_flags():
    rng = np.random.default_rng(2)
    v = rng.integers(100, 200, (3, 80)).astype(float)
    ref = (0.0, 1000.0, 0.0)
    thr = 1e4
    full_scan = [dtw_distance(v[0, k:k + 3], ref) for k in range(78)]
    assert min(full_scan) > thr
    sig = DtwSignature(ref, thr, (1.0, 1.0))
    assert dtw_detect(_trace(v), sig).flags.sum() == 0
    with pytest.raises(ValueError, match="missing channel"):
        dtw_detect(_trace(v), DtwSignature(ref, thr, (1.0,), watch=("L2",)))


def test_watch_jumps():
    assert list(watch_jumps([5, 3, 9, 9, 9, 9, 9, 9], window=5)) == [0, -2, 6, 6, 6, 6, 6, 0]


def test_cpd_constant_trace_never_flags():
    # the drift term is negative while x sits at a benign mean below mu_a
    v = np.full((3, 200), 60.0)
    res = cpd_detect(_trace(v), CpdConfig(mu_a=100.0, beta=0.65, channel="LLC_Miss"))
    assert res.flags.sum() == 0 and np.all(res.scores == 0)
    noisy = 60.0 + np.random.default_rng(0).uniform(-5, 5, 500)
    S, flags = cusum_statistic(noisy, CpdConfig(mu_a=100.0))
    assert flags.sum() == 0 and np.all(S == 0)


def test_cpd_step_matches_hand_recurrence():
    mu_a, beta = 100.0, 0.65
    x = np.r_[np.zeros(50), np.full(50, 10 * mu_a)]
    S, flags = cusum_statistic(x, CpdConfig(mu_a=mu_a, beta=beta))
    # hand recurrence: the benign mean stays 0 before the step
    s, expect = 0.0, None
    for n in range(1, 50):
        s = max(0.0, s + beta * (10 * mu_a - mu_a / 2))
        if s > mu_a:
            expect = n
            break
    first = int(np.flatnonzero(flags)[0]) - 49  # samples since the step, inclusive
    assert first == expect == math.ceil(mu_a / (beta * (10 * mu_a - mu_a / 2)))
    assert np.all(S >= 0)
    assert np.all(S[flags == 1] == 0)  # reset after each flag


def test_cpd_validation():
    with pytest.raises(ValueError):
        CpdConfig(mu_a=0)
    with pytest.raises(ValueError):
        CpdConfig(beta=1.0)
    with pytest.raises(ValueError, match="missing channel"):
        cpd_detect(_trace(np.ones((3, 5))), CpdConfig(channel="DTLB"))


def test_fit_pdf():
    m = fit_pdf([np.array([[1.0, 3.0], [2.0, 6.0]])])
    assert m.mean == (2.0, 4.0) and m.var == (2.0, 8.0)
    with pytest.raises(ValueError, match="variance"):
        fit_pdf([np.ones((2, 5))])
    with pytest.raises(ValueError, match="insufficient"):
        fit_pdf([np.ones((2, 1))])
    # batch estimate equals two-pass accumulation over the pieces
    rng = np.random.default_rng(3)
    parts = [rng.random((3, n)) for n in (5, 9, 2)]
    fitted = fit_pdf(parts)
    n = sum(p.shape[1] for p in parts)
    mean = sum(p.sum(axis=1) for p in parts) / n
    var = sum(((p - mean[:, None]) ** 2).sum(axis=1) for p in parts) / (n - 1)
    assert np.allclose(fitted.mean, mean) and np.allclose(fitted.var, var)


def test_pdf_density_and_monotone_flags():
    model = PdfModel((10.0, 20.0), (4.0, 9.0))
    x = np.array([[10.0, 12.0, 30.0], [20.0, 20.0, 20.0]])
    ld = log_density(x, model)
    direct = [math.log(
        math.exp(-(a - 10) ** 2 / 8) / math.sqrt(8 * math.pi)
        * math.exp(-(b - 20) ** 2 / 18) / math.sqrt(18 * math.pi)) for a, b in x.T]
    assert np.allclose(ld, direct)
    assert np.argmax(ld) == 0
    peak = math.exp(ld[0])
    assert pdf_detect(x, model.with_eps(peak)).flags[0] == 1
    assert pdf_detect(x, model.with_eps(peak / 2)).flags[2] == 0  # 10 sigma away
    prev = None
    for eps in np.geomspace(peak * 1e-6, peak, 12):
        f = pdf_detect(x, model.with_eps(eps)).flags
        if prev is not None:
            assert np.all(f <= prev)
        prev = f
    with pytest.raises(ValueError, match="eps"):
        pdf_detect(x, model)
    with pytest.raises(ValueError, match="zero variance"):
        PdfModel((0.0,), (0.0,))


def test_best_threshold_matches_exhaustive():
    rng = np.random.default_rng(4)
    b, a = rng.random(15), rng.random(10) + 0.3
    th, f = best_threshold(b, a)
    best = max(
        (2 * np.sum(a >= t) / (2 * np.sum(a >= t) + np.sum(b >= t) + np.sum(a < t)), t)
        for t in itertools.chain(a, b)
    )
    assert f == pytest.approx(best[0]) and th == best[1]
