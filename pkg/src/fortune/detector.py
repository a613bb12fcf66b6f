"""Prediction-error streams and decision-window anomaly flags.

A step is flagged when every error in the D-long window ending at it reaches
the threshold tau. Errors are in raw squared counts: predictions are unscaled
before comparison with the observed counters.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .rnn import PredictorModel, predict_stream


@dataclass(frozen=True)
class ErrorStream:
    errors: np.ndarray
    sample_period: float = 1.0
    label: str = "unknown"
    source_id: str = ""
    # stream index of the first prediction that covers injected attack samples
    onset: int | None = None

    def __post_init__(self):
        e = np.asarray(self.errors, dtype=np.float64).ravel()
        if not np.all(np.isfinite(e)) or np.any(e < 0):
            raise ValueError("errors must be finite and non-negative")
        e.setflags(write=False)
        object.__setattr__(self, "errors", e)

    def __len__(self):
        return self.errors.size


@dataclass(frozen=True)
class DetectorConfig:
    tau: float
    D: int

    def __post_init__(self):
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ValueError("tau must be a positive finite number")
        if int(self.D) != self.D or self.D < 1:
            raise ValueError("decision window D must be a positive integer")


def prediction_error(pred_raw, obs_raw) -> float:
    """Mean over channels of the squared prediction error."""
    p = np.asarray(pred_raw, dtype=np.float64)
    o = np.asarray(obs_raw, dtype=np.float64)
    if p.shape != o.shape or p.ndim != 1:
        raise ValueError(f"length mismatch: {p.shape} vs {o.shape}")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(o))):
        raise ValueError("non-finite input")
    d = p - o
    return float(np.mean(d * d))


def error_stream(model: PredictorModel, trace, attack_start: int | None = None) -> ErrorStream:
    """Errors for every prediction; errors[k] scores trace offset W + k.

    ``attack_start`` is a trace offset (defaulting to the trace's recorded
    attack span); it becomes the stream onset index.
    """
    if attack_start is None and getattr(trace, "attack_span", None) is not None:
        attack_start = trace.attack_span[0]
    pred = predict_stream(model, trace)
    obs = trace.values[:, model.W:].T
    d = pred - obs
    onset = None if attack_start is None else max(0, attack_start - model.W)
    return ErrorStream(np.mean(d * d, axis=1), trace.sample_period, trace.label,
                       trace.source_id, onset)


@dataclass(frozen=True)
class FlagResult:
    flags: np.ndarray  # 0/1 per step
    intervals: list  # maximal [start, stop) runs of flag=1
    status: str = "ok"


def run_lengths(above: np.ndarray) -> np.ndarray:
    """Length of the run of True values ending at each index."""
    pos = np.arange(above.size)
    last_false = np.maximum.accumulate(np.where(above, -1, pos))
    return pos - last_false


def alarm_intervals(flags) -> list[tuple[int, int]]:
    f = np.concatenate([[0], np.asarray(flags, dtype=np.int8), [0]])
    edges = np.flatnonzero(np.diff(f))
    return [(int(a), int(b)) for a, b in zip(edges[::2], edges[1::2])]


def flag_stream(errs: ErrorStream, cfg: DetectorConfig) -> FlagResult:
    e = errs.errors
    if cfg.D > e.size:
        warnings.warn(
            f"decision window D={cfg.D} exceeds stream length {e.size}; nothing flagged",
            stacklevel=2,
        )
        return FlagResult(np.zeros(e.size, dtype=np.int8), [], "warning: D exceeds stream length")
    flags = (run_lengths(e >= cfg.tau) >= cfg.D).astype(np.int8)
    return FlagResult(flags, alarm_intervals(flags))


def first_alarm(flags) -> int | None:
    idx = np.flatnonzero(np.asarray(flags))
    return int(idx[0]) if idx.size else None


def latency_ms(index: int | None, sample_period: float) -> float | None:
    return None if index is None else index * sample_period


def window_score(errors, D: int) -> float:
    """Largest tau at which the stream raises an alarm: max_t min(errors[t-D+1..t])."""
    e = np.asarray(errors, dtype=np.float64)
    if D > e.size:
        return -math.inf
    if D == 1:
        return float(e.max())
    return float(np.lib.stride_tricks.sliding_window_view(e, D).min(axis=1).max())


def rates(tp, fp, fn, tn):
    n_att, n_ben = tp + fn, fp + tn
    fpr = fp / n_ben if n_ben else 0.0
    fnr = fn / n_att if n_att else 0.0
    tpr = tp / n_att if n_att else 0.0
    denom = 2 * tp + fp + fn
    f = 2 * tp / denom if tp else 0.0
    return fpr, fnr, tpr, f


@dataclass
class SweepResult:
    grid: list  # rows (tau, D, fpr, fnr, tpr, fscore)
    tau: float
    D: int
    fpr: float
    fnr: float
    tpr: float
    fscore: float
    benign_flagged: list = field(default_factory=list)
    attack_flagged: list = field(default_factory=list)
    latencies_ms: list = field(default_factory=list)  # None for missed attacks

    @property
    def config(self) -> DetectorConfig:
        return DetectorConfig(self.tau, self.D)

    def median_latency_ms(self) -> float | None:
        lat = [x for x in self.latencies_ms if x is not None]
        return float(np.median(lat)) if lat else None

    def grid_csv(self) -> str:
        lines = ["tau,D,fpr,fnr,tpr,fscore"]
        for tau, D, fpr, fnr, tpr, f in self.grid:
            lines.append(f"{tau:.10g},{D},{fpr:.10g},{fnr:.10g},{tpr:.10g},{f:.10g}")
        return "\n".join(lines) + "\n"


def detection_latency(stream: ErrorStream, cfg: DetectorConfig) -> float | None:
    """Time from attack onset to the first alarm at or after it, in ms.

    Counts the onset sample itself, so an alarm raised as soon as D attack
    samples have been seen reports D * sample_period.
    """
    flags = flag_stream(stream, cfg).flags
    onset = stream.onset or 0
    idx = first_alarm(flags[onset:])
    return None if idx is None else (idx + 1) * stream.sample_period


def sweep(benign_errs, attack_errs, tau_grid, D_grid) -> SweepResult:
    """Evaluate every (tau, D) cell; pick the point that best equalises FPR and FNR.

    Ties go to lower FPR, then smaller D, then smaller tau. A trace counts as
    positive when it raises at least one alarm.
    """
    benign_errs, attack_errs = list(benign_errs), list(attack_errs)
    if not benign_errs or not attack_errs:
        raise ValueError("sweep needs at least one benign and one attack stream")
    taus = sorted(float(t) for t in tau_grid)
    Ds = sorted(int(d) for d in D_grid)
    if not taus or not Ds:
        raise ValueError("empty tau or D grid")
    DetectorConfig(taus[0], Ds[0])  # validates grid minima

    grid, best, best_key = [], None, None
    for D in Ds:
        sb = np.array([window_score(s.errors, D) for s in benign_errs])
        sa = np.array([window_score(s.errors, D) for s in attack_errs])
        for tau in taus:
            fp = int(np.sum(sb >= tau))
            tp = int(np.sum(sa >= tau))
            fn, tn = len(sa) - tp, len(sb) - fp
            fpr, fnr, tpr, f = rates(tp, fp, fn, tn)
            grid.append((tau, D, fpr, fnr, tpr, f))
            key = (abs(fpr - fnr), fpr, D, tau)
            if best_key is None or key < best_key:
                best_key, best = key, (tau, D, fpr, fnr, tpr, f)
    tau, D, fpr, fnr, tpr, f = best
    cfg = DetectorConfig(tau, D)
    b_flag = [window_score(s.errors, D) >= tau for s in benign_errs]
    a_flag = [window_score(s.errors, D) >= tau for s in attack_errs]
    lat = [detection_latency(s, cfg) for s in attack_errs]
    return SweepResult(grid, tau, D, fpr, fnr, tpr, f, b_flag, a_flag, lat)


def parse_tau_grid(text: str) -> np.ndarray:
    """``lo:hi:n`` (log-spaced) or ``lo:hi:nlog`` into an array of thresholds."""
    parts = text.replace("(log)", "").replace("log", "").split(":")
    if len(parts) != 3:
        raise ValueError(f"tau grid must look like lo:hi:n, got {text!r}")
    lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
    if not (0 < lo <= hi) or n < 1:
        raise ValueError(f"bad tau grid {text!r}: need 0 < lo <= hi and n >= 1")
    return np.geomspace(lo, hi, n)


def parse_d_grid(text: str) -> list[int]:
    """``lo:hi:step`` (inclusive) into a list of decision windows."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError(f"D grid must look like lo:hi:step, got {text!r}")
    lo, hi, step = (int(p) for p in parts)
    if lo < 1 or hi < lo or step < 1:
        raise ValueError(f"bad D grid {text!r}: need 1 <= lo <= hi and step >= 1")
    return list(range(lo, hi + 1, step))


def auto_tau_grid(streams, n=241) -> np.ndarray:
    """Log-spaced thresholds spanning the observed error magnitudes."""
    allerr = np.concatenate([s.errors for s in streams])
    pos = allerr[allerr > 0]
    if pos.size == 0:
        return np.array([1.0])
    lo = max(float(np.quantile(pos, 0.01)), 1e-12)
    hi = float(pos.max())
    return np.geomspace(lo, hi * 1.01, n)
