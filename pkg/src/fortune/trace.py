"""Multivariate counter traces: ingestion, scaling and windowing.

A trace holds per-period counter deltas, one row per channel (shape m x T).
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field

import numpy as np

LABELS = ("benign", "attack", "unknown")
DEFAULT_CHANNELS = ("ICACHE.Miss", "ICACHE.Hit", "LLC_Miss")

_META_RE = re.compile(r"^#\s*fortune-trace\s+v1\b(.*)$")


class TraceError(ValueError):
    """Raised for malformed traces or trace files."""


@dataclass(frozen=True)
class TraceMatrix:
    channel_names: tuple[str, ...]
    values: np.ndarray  # m x T
    sample_period: float = 1.0  # ms
    label: str = "unknown"
    source_id: str = ""
    attack_span: tuple | None = None  # injected [start, stop), when known

    def __post_init__(self):
        names = tuple(str(n) for n in self.channel_names)
        values = np.array(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[None, :]
        if values.ndim != 2:
            raise TraceError("values must be a 2-d m x T matrix")
        m, T = values.shape
        if m < 1 or T < 1:
            raise TraceError(f"empty trace (m={m}, T={T})")
        if len(names) != m:
            raise TraceError(f"{len(names)} channel names for {m} channels")
        if len(set(names)) != m:
            raise TraceError("channel names must be unique")
        for n in names:
            if not n or "," in n or any(c.isspace() for c in n):
                raise TraceError(f"invalid channel name {n!r}")
        if not np.all(np.isfinite(values)):
            raise TraceError("trace contains non-finite values")
        if np.any(values < 0):
            raise TraceError("trace contains negative counts")
        if not self.sample_period > 0:
            raise TraceError("sample_period must be > 0")
        if self.label not in LABELS:
            raise TraceError(f"label must be one of {LABELS}, got {self.label!r}")
        if self.attack_span is not None:
            a, b = (int(v) for v in self.attack_span)
            if not 0 <= a < b <= T:
                raise TraceError(f"attack span {self.attack_span} outside trace of length {T}")
            object.__setattr__(self, "attack_span", (a, b))
        values.setflags(write=False)
        object.__setattr__(self, "channel_names", names)
        object.__setattr__(self, "values", values)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]

    @property
    def duration_ms(self) -> float:
        return self.T * self.sample_period

    def channel(self, key) -> np.ndarray:
        """Return one channel's series, addressed by name or index."""
        return self.values[self.channel_index(key)]

    def channel_index(self, key) -> int:
        if isinstance(key, (int, np.integer)):
            if not -self.m <= key < self.m:
                raise TraceError(f"channel index {key} out of range for m={self.m}")
            return int(key) % self.m
        try:
            return self.channel_names.index(key)
        except ValueError:
            raise TraceError(f"missing channel {key!r}") from None

    def select(self, channels) -> TraceMatrix:
        idx = [self.channel_index(c) for c in channels]
        return self.replace(
            channel_names=tuple(self.channel_names[i] for i in idx),
            values=self.values[idx],
        )

    def crop(self, start: int, stop: int) -> TraceMatrix:
        start, stop, _ = slice(start, stop).indices(self.T)
        span = None
        if self.attack_span is not None:
            a, b = max(self.attack_span[0], start) - start, min(self.attack_span[1], stop) - start
            span = (a, b) if a < b else None
        return self.replace(values=self.values[:, start:stop], attack_span=span)

    def replace(self, **changes) -> TraceMatrix:
        kw = dict(
            channel_names=self.channel_names,
            values=self.values,
            sample_period=self.sample_period,
            label=self.label,
            source_id=self.source_id,
            attack_span=self.attack_span,
        )
        kw.update(changes)
        return TraceMatrix(**kw)


@dataclass(frozen=True)
class ScaledTrace:
    """A trace mapped through a Scaler; values may leave [0, 1]."""

    channel_names: tuple[str, ...]
    values: np.ndarray  # m x T
    sample_period: float = 1.0
    label: str = "unknown"
    source_id: str = ""

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Scaler:
    min: np.ndarray
    max: np.ndarray
    channel_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        lo = np.array(self.min, dtype=np.float64).ravel()
        hi = np.array(self.max, dtype=np.float64).ravel()
        if lo.shape != hi.shape or lo.size == 0:
            raise TraceError("scaler min/max must be equal-length, non-empty")
        if np.any(hi < lo):
            raise TraceError("scaler max < min")
        if self.channel_names and len(self.channel_names) != lo.size:
            raise TraceError("scaler channel names do not match min/max length")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))

    @property
    def m(self) -> int:
        return self.min.size

    @property
    def span(self) -> np.ndarray:
        return self.max - self.min

    def transform(self, values: np.ndarray) -> np.ndarray:
        """Scale raw values whose last axis (or first, for m x T) is channels."""
        return (values - self.min) / self.span

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return values * self.span + self.min


def fit_scaler(traces) -> Scaler:
    """Per-channel min/max over the union of all samples."""
    traces = list(traces)
    if not traces:
        raise TraceError("cannot fit a scaler on an empty trace list")
    names = traces[0].channel_names
    for tr in traces[1:]:
        if tr.channel_names != names:
            raise TraceError(
                f"channel mismatch: {tr.channel_names} vs {names} ({tr.source_id})"
            )
    lo = np.min([tr.values.min(axis=1) for tr in traces], axis=0)
    hi = np.max([tr.values.max(axis=1) for tr in traces], axis=0)
    hi = np.where(hi == lo, lo + 1.0, hi)
    return Scaler(lo, hi, names)


def _check_channels(trace, s: Scaler):
    if trace.m != s.m:
        raise TraceError(f"trace has {trace.m} channels, scaler has {s.m}")
    if s.channel_names and trace.channel_names != s.channel_names:
        raise TraceError(
            f"channel mismatch: trace {trace.channel_names} vs scaler {s.channel_names}"
        )


def scale(trace: TraceMatrix, s: Scaler) -> ScaledTrace:
    _check_channels(trace, s)
    v = (trace.values - s.min[:, None]) / s.span[:, None]
    return ScaledTrace(trace.channel_names, v, trace.sample_period, trace.label, trace.source_id)


def unscale(trace: ScaledTrace, s: Scaler) -> TraceMatrix:
    _check_channels(trace, s)
    v = trace.values * s.span[:, None] + s.min[:, None]
    return TraceMatrix(trace.channel_names, v, trace.sample_period, trace.label, trace.source_id)


@dataclass(frozen=True)
class WindowBatch:
    inputs: np.ndarray  # N x W x m
    targets: np.ndarray  # N x m
    origin_index: np.ndarray  # N

    def __len__(self):
        return self.targets.shape[0]


def window_view(values: np.ndarray, W: int) -> np.ndarray:
    """Read-only N x W x m view over an m x T array (N = T - W)."""
    m, T = values.shape
    if W < 1:
        raise TraceError("window size must be a positive integer")
    if T <= W:
        raise TraceError(f"trace length {T} too short for window {W} (need T >= W+1)")
    view = np.lib.stride_tricks.sliding_window_view(values.T, W, axis=0)  # (T-W+1, m, W)
    return view[: T - W].transpose(0, 2, 1)


def make_windows(trace, W: int) -> WindowBatch:
    """Window i covers offsets [i, i+W); its target is offset i+W."""
    if not isinstance(W, (int, np.integer)) or W < 1:
        raise TraceError("window size must be a positive integer")
    values = trace.values
    inputs = np.ascontiguousarray(window_view(values, W))
    T = values.shape[1]
    targets = values[:, W:].T.copy()
    return WindowBatch(inputs, targets, np.arange(T - W))


def trim_idle(trace: TraceMatrix, frac: float = 0.01) -> TraceMatrix:
    """Drop leading/trailing samples where every channel is below frac of its max."""
    peak = trace.values.max(axis=1, keepdims=True)
    busy = np.any(trace.values >= frac * peak, axis=0) & np.any(peak > 0, axis=0)
    idx = np.flatnonzero(busy)
    if idx.size == 0:
        raise TraceError(f"trace {trace.source_id!r} is idle throughout")
    return trace.crop(idx[0], idx[-1] + 1)


# trace-csv v1


def _fmt_count(v: float) -> str:
    if float(v).is_integer():
        return str(int(v))
    raise TraceError(f"non-integer count {v!r} cannot be written as trace-csv")


def format_trace(trace: TraceMatrix) -> str:
    period = trace.sample_period
    period_s = str(int(period)) if float(period).is_integer() else repr(float(period))
    head = f"# fortune-trace v1 label={trace.label} period_ms={period_s}"
    if trace.attack_span is not None:
        head += " attack=%d:%d" % trace.attack_span
    lines = [
        head,
        ",".join(("t",) + trace.channel_names),
    ]
    cols = trace.values.T
    for t in range(trace.T):
        lines.append(",".join([str(t)] + [_fmt_count(v) for v in cols[t]]))
    return "\n".join(lines) + "\n"


def save_trace(trace: TraceMatrix, path) -> None:
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_trace(trace))
    os.replace(tmp, path)


def parse_trace(text: str, source_id: str = "") -> TraceMatrix:
    lines = text.splitlines()
    if not lines:
        raise TraceError("line 1: empty trace file")
    meta = _META_RE.match(lines[0].strip())
    if not meta:
        raise TraceError("line 1: malformed header, expected '# fortune-trace v1 ...'")
    label, period, span = "unknown", 1.0, None
    for tok in meta.group(1).split():
        key, sep, val = tok.partition("=")
        if not sep:
            raise TraceError(f"line 1: malformed metadata token {tok!r}")
        if key == "label":
            if val not in LABELS:
                raise TraceError(f"line 1: unknown label {val!r}")
            label = val
        elif key == "period_ms":
            try:
                period = float(val)
            except ValueError:
                raise TraceError(f"line 1: bad period_ms {val!r}") from None
            if not period > 0:
                raise TraceError("line 1: period_ms must be > 0")
        elif key == "attack":
            try:
                a, b = (int(v) for v in val.split(":"))
            except ValueError:
                raise TraceError(f"line 1: bad attack span {val!r}") from None
            span = (a, b)
    if len(lines) < 2:
        raise TraceError("line 2: missing column header")
    header = lines[1].strip().split(",")
    if len(header) < 2 or header[0] != "t" or any(not h for h in header[1:]):
        raise TraceError("line 2: malformed header, expected 't,<name1>,...'")
    names = header[1:]
    if len(set(names)) != len(names):
        raise TraceError("line 2: duplicate channel names")
    rows = []
    for k, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != len(header):
            raise TraceError(
                f"line {k}: expected {len(header)} fields, got {len(cells)}"
            )
        row = []
        for cell in cells[1:]:
            try:
                v = int(cell.strip())
            except ValueError:
                raise TraceError(f"line {k}: non-numeric cell {cell!r}") from None
            if v < 0:
                raise TraceError(f"negative count at line {k}")
            row.append(v)
        rows.append(row)
    if not rows:
        raise TraceError("no data rows")
    values = np.array(rows, dtype=np.float64).T
    return TraceMatrix(tuple(names), values, period, label, source_id, span)


def load_trace(path) -> TraceMatrix:
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise TraceError(f"no such trace file: {path}")
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    stem = os.path.splitext(os.path.basename(path))[0]
    return parse_trace(text, source_id=stem)


def load_trace_dir(directory) -> list[TraceMatrix]:
    """Load every *.csv trace in a directory, sorted by file name."""
    directory = os.fspath(directory)
    if not os.path.isdir(directory):
        raise TraceError(f"no such trace directory: {directory}")
    names = sorted(f for f in os.listdir(directory) if f.endswith(".csv"))
    if not names:
        raise TraceError(f"no trace files in {directory}")
    return [load_trace(os.path.join(directory, n)) for n in names]
