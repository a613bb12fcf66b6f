"""Prior-work detectors used for comparison: CUSUM change points, DTW
signature matching and Gaussian-pdf scoring.

All three return a :class:`BaselineResult` with one 0/1 flag per trace
sample, so per-trace decisions reduce to ``result.flags.any()``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .trace import TraceMatrix

# window, in samples, in which a watch counter must jump after a DTW match
DTW_DECISION_WINDOW = 5


@dataclass(frozen=True)
class BaselineResult:
    flags: np.ndarray
    events: list = field(default_factory=list)  # change points / arm times
    scores: np.ndarray | None = None

    @property
    def positive(self) -> bool:
        return bool(self.flags.any())


def _channel(trace: TraceMatrix, key) -> np.ndarray:
    try:
        return trace.channel(key)
    except (KeyError, IndexError, ValueError) as e:
        raise ValueError(f"missing channel {key!r}: {e}") from None


# change-point detection

@dataclass(frozen=True)
class CpdConfig:
    mu_a: float = 100.0
    beta: float = 0.65
    channel: str | int = "LLC_Miss"

    def __post_init__(self):
        if not self.mu_a > 0:
            raise ValueError("mu_a must be > 0")
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")


def cusum_statistic(x, cfg: CpdConfig):
    """One-sided CUSUM over a 1-D series.

    Returns (S, flags). The benign mean starts at x[0] and follows the running
    mean of unflagged samples; S resets to zero after every flag.
    """
    x = np.asarray(x, dtype=np.float64)
    S = np.zeros(x.size)
    flags = np.zeros(x.size, dtype=np.int8)
    s, mu_b, n_b = 0.0, float(x[0]) if x.size else 0.0, 0
    half = 0.5
    for t, v in enumerate(x):
        s = max(0.0, s + cfg.beta * (v - half * (mu_b + cfg.mu_a)))
        if s > cfg.mu_a:
            flags[t] = 1
            s = 0.0
        else:
            n_b += 1
            mu_b += (v - mu_b) / n_b
        S[t] = s
    return S, flags


def cpd_detect(trace: TraceMatrix, cfg: CpdConfig = CpdConfig()) -> BaselineResult:
    S, flags = cusum_statistic(_channel(trace, cfg.channel), cfg)
    return BaselineResult(flags, [int(i) for i in np.flatnonzero(flags)], S)


# dynamic time warping

def dtw_distance(a, b) -> float:
    """Classic DTW with squared local cost and match/insert/delete steps."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("dtw_distance needs non-empty sequences")
    n, m = a.size, b.size
    cost = (a[:, None] - b[None, :]) ** 2
    acc = np.full((n + 1, m + 1), math.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        row, prev = acc[i], acc[i - 1]
        for j in range(1, m + 1):
            row[j] = cost[i - 1, j - 1] + min(prev[j - 1], prev[j], row[j - 1])
    return float(acc[n, m])


def dtw_sliding(series, reference) -> np.ndarray:
    """DTW distance of every len(reference)-long window of ``series``.

    Entry k compares series[k : k+L]; all windows run through the dynamic
    program together.
    """
    ref = np.asarray(reference, dtype=np.float64).ravel()
    x = np.asarray(series, dtype=np.float64).ravel()
    L = ref.size
    if L == 0:
        raise ValueError("empty DTW reference")
    if x.size < L:
        return np.zeros(0)
    win = np.lib.stride_tricks.sliding_window_view(x, L)  # N x L
    N = win.shape[0]
    prev = np.full((L + 1, N), math.inf)
    prev[0] = 0.0
    for i in range(L):
        cur = np.full((L + 1, N), math.inf)
        c = (win[:, i][None, :] - ref[:, None]) ** 2  # cost of window[i] vs ref[j]
        for j in range(1, L + 1):
            best = np.minimum(np.minimum(prev[j - 1], prev[j]), cur[j - 1])
            cur[j] = c[j - 1] + best
        prev = cur
    return prev[L]


@dataclass(frozen=True)
class DtwSignature:
    reference: tuple
    match_threshold: float
    jump_threshold: tuple = (1.0, 1.0)
    watch: tuple = (1, 2)
    channel: str | int = 0

    def __post_init__(self):
        if len(self.reference) == 0:
            raise ValueError("DTW reference must be non-empty")
        if not self.match_threshold > 0:
            raise ValueError("match threshold must be > 0")
        jt = tuple(float(v) for v in np.broadcast_to(self.jump_threshold, (len(self.watch),)))
        if any(v <= 0 for v in jt):
            raise ValueError("jump thresholds must be > 0")
        object.__setattr__(self, "jump_threshold", jt)
        object.__setattr__(self, "reference", tuple(float(v) for v in self.reference))


def watch_jumps(x, window=DTW_DECISION_WINDOW) -> np.ndarray:
    """x[t] minus the minimum of the preceding ``window`` samples (0 when t=0)."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros(x.size)
    for t in range(1, x.size):
        out[t] = x[t] - x[max(0, t - window):t].min()
    return out


def dtw_detect(trace: TraceMatrix, sig: DtwSignature) -> BaselineResult:
    """Arm on a signature match, then flag watch-counter jumps.

    The match at window start k is known once the window closes at k+L-1;
    from then on any sample whose watch counter rises more than its jump
    threshold above the minimum of the previous 5 samples is flagged.
    """
    watch = [_channel(trace, w) for w in sig.watch]
    dist = dtw_sliding(_channel(trace, sig.channel), sig.reference)
    L = len(sig.reference)
    flags = np.zeros(trace.T, dtype=np.int8)
    hits = np.flatnonzero(dist <= sig.match_threshold)
    if hits.size == 0:
        return BaselineResult(flags, [], dist)
    armed_at = int(hits[0]) + L - 1
    for w, thr in zip(watch, sig.jump_threshold):
        j = watch_jumps(w)
        flags[armed_at:] |= (j[armed_at:] > thr).astype(np.int8)
    return BaselineResult(flags, [int(h) + L - 1 for h in hits], dist)


# Gaussian pdf

@dataclass(frozen=True)
class PdfModel:
    mean: tuple
    var: tuple
    eps: float | None = None

    def __post_init__(self):
        if any(not v > 0 for v in self.var):
            raise ValueError("zero variance in pdf model")
        if len(self.mean) != len(self.var):
            raise ValueError("mean/variance length mismatch")
        if self.eps is not None and not self.eps > 0:
            raise ValueError("eps must be > 0")

    def with_eps(self, eps: float) -> "PdfModel":
        return PdfModel(self.mean, self.var, float(eps))


def fit_pdf(attack_traces) -> PdfModel:
    """Per-channel sample mean and unbiased variance over all attack samples."""
    blocks = [np.asarray(t.values if isinstance(t, TraceMatrix) else t, dtype=np.float64)
              for t in attack_traces]
    if not blocks:
        raise ValueError("insufficient data: no attack traces")
    m = blocks[0].shape[0]
    if any(b.shape[0] != m for b in blocks):
        raise ValueError("channel count mismatch across attack traces")
    x = np.concatenate(blocks, axis=1)
    if x.shape[1] < 2:
        raise ValueError("insufficient data: need >= 2 samples per channel")
    var = x.var(axis=1, ddof=1)
    if np.any(var <= 0):
        raise ValueError("zero variance in attack data")
    return PdfModel(tuple(x.mean(axis=1)), tuple(var))


def log_density(values, model: PdfModel) -> np.ndarray:
    """Per-sample log of the product of independent normal densities."""
    x = np.asarray(values, dtype=np.float64)
    mu = np.asarray(model.mean)[:, None]
    var = np.asarray(model.var)[:, None]
    if x.shape[0] != mu.shape[0]:
        raise ValueError(f"channel mismatch: trace has {x.shape[0]}, model {mu.shape[0]}")
    return np.sum(-0.5 * np.log(2 * math.pi * var) - 0.5 * (x - mu) ** 2 / var, axis=0)


def pdf_detect(trace, model: PdfModel) -> BaselineResult:
    """Flag samples whose attack-model density reaches eps."""
    if model.eps is None:
        raise ValueError("pdf model has no threshold eps")
    values = trace.values if isinstance(trace, TraceMatrix) else trace
    ld = log_density(values, model)
    flags = (ld >= math.log(model.eps)).astype(np.int8)
    return BaselineResult(flags, [int(i) for i in np.flatnonzero(flags)], ld)


# threshold selection shared by the comparison harness

def best_threshold(benign_scores, attack_scores):
    """Threshold maximising per-trace F1 where a trace is positive iff score >= threshold.

    Returns (threshold, fscore); ties go to the larger threshold.
    """
    b = np.asarray(benign_scores, dtype=np.float64)
    a = np.asarray(attack_scores, dtype=np.float64)
    best = (-1.0, -math.inf)
    for th in np.unique(np.concatenate([a, b])):
        tp = int(np.sum(a >= th))
        fp = int(np.sum(b >= th))
        fn = a.size - tp
        f = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
        if (f, th) > best:
            best = (f, th)
    return float(best[1]), float(best[0])
