"""Seeded synthetic counter workloads and attack footprints.

Benign kinds:

* ``stationary-noise`` -- base rate plus Gaussian noise.
* ``periodic-burst``   -- raised-cosine bursts peaking at ``amplitude`` every
  ``period`` samples, each ``duty * period`` samples wide.
* ``ramp``             -- base rate rising linearly by ``amplitude`` over the trace.
* ``composite``        -- sum of up to five independent sub-workloads.

Attack kinds add a fluctuating footprint on top of a background:
``flush-storm`` raises the instruction-cache hit channel, ``evict-storm`` the
LLC miss channel and ``transient-burst`` every channel in short pulses.
All draws are rounded to integer counts and clipped at zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .trace import DEFAULT_CHANNELS, TraceMatrix

BENIGN_KINDS = ("stationary-noise", "periodic-burst", "ramp", "composite")
ATTACK_KINDS = ("flush-storm", "evict-storm", "transient-burst")
MAX_COMPOSITE_PARTS = 5

# channel each storm targets, by name first and by position as a fallback
_ATTACK_TARGETS = {
    "flush-storm": ("ICACHE.Hit", 1),
    "evict-storm": ("LLC_Miss", 2),
}


def _per_channel(value, m, name):
    arr = np.broadcast_to(np.asarray(value, dtype=np.float64), (m,)).copy()
    if np.any(arr < 0):
        raise ValueError(f"{name} must be >= 0")
    return arr


@dataclass(frozen=True)
class WorkloadSpec:
    kind: str = "stationary-noise"
    base: tuple = (1000.0, 4000.0, 1000.0)
    amplitude: tuple = (0.0, 0.0, 0.0)
    period: tuple = (50, 50, 50)
    noise: tuple = (0.0, 0.0, 0.0)
    duration: int = 1000
    seed: int = 0
    channel_names: tuple = DEFAULT_CHANNELS
    duty: float = 0.25  # fraction of each period spent bursting
    parts: tuple = ()  # sub-workloads for kind=composite

    def __post_init__(self):
        if self.kind not in BENIGN_KINDS:
            raise ValueError(f"unknown workload kind {self.kind!r}")
        m = len(self.channel_names)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))
        for name in ("base", "amplitude", "noise"):
            object.__setattr__(self, name, tuple(_per_channel(getattr(self, name), m, name)))
        period = np.broadcast_to(np.asarray(self.period), (m,))
        if np.any(period < 1):
            raise ValueError("burst period must be >= 1 sample")
        object.__setattr__(self, "period", tuple(int(p) for p in period))
        if not 0 < self.duty <= 1:
            raise ValueError("duty must lie in (0, 1]")
        if self.kind == "composite":
            if not 1 <= len(self.parts) <= MAX_COMPOSITE_PARTS:
                raise ValueError(f"composite needs 1..{MAX_COMPOSITE_PARTS} parts")
            for p in self.parts:
                if p.kind == "composite":
                    raise ValueError("composite parts cannot nest")
                if p.channel_names != self.channel_names:
                    raise ValueError("composite parts must share channel names")

    @property
    def m(self) -> int:
        return len(self.channel_names)

    def reference_rate(self) -> np.ndarray:
        """Per-channel nominal rate, summed over parts for composites."""
        if self.kind == "composite":
            return np.sum([p.reference_rate() for p in self.parts], axis=0)
        return np.asarray(self.base)


def _continuous(spec: WorkloadSpec, T: int, rng) -> np.ndarray:
    m = spec.m
    base = np.asarray(spec.base)[:, None]
    noise = np.asarray(spec.noise)[:, None]
    x = np.repeat(base, T, axis=1)
    t = np.arange(T)
    if spec.kind == "periodic-burst":
        phase = rng.integers(0, max(spec.period))
        for c in range(m):
            p = spec.period[c]
            width = max(1, int(round(spec.duty * p)))
            u = ((t + phase) % p) / width
            x[c] += spec.amplitude[c] * np.where(u < 1.0, 0.5 - 0.5 * np.cos(2 * np.pi * u), 0.0)
    elif spec.kind == "ramp":
        x += np.asarray(spec.amplitude)[:, None] * t / max(T - 1, 1)
    return x + noise * rng.standard_normal((m, T))


def synth_benign(spec: WorkloadSpec, duration: int | None = None) -> TraceMatrix:
    """Deterministic benign trace for ``spec`` (label=benign)."""
    T = spec.duration if duration is None else duration
    if T < 1:
        raise ValueError("duration must be >= 1 sample")
    if spec.kind == "composite":
        seeds = np.random.SeedSequence(spec.seed).spawn(len(spec.parts))
        x = np.zeros((spec.m, T))
        for part, ss in zip(spec.parts, seeds):
            x += _continuous(part, T, np.random.default_rng(ss))
    else:
        x = _continuous(spec, T, np.random.default_rng(spec.seed))
    values = np.maximum(np.rint(x), 0.0)
    return TraceMatrix(spec.channel_names, values, label="benign",
                       source_id=f"{spec.kind}-{spec.seed}")


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "flush-storm"
    intensity: float = 4.0
    duration: int = 300
    seed: int = 0
    jitter: float = 0.75  # footprint multiplier drawn from 1 +/- jitter
    channels: tuple = field(default=())  # override the kind's target channels
    pulse_on: tuple = (15, 40)  # transient-burst pulse length range
    pulse_off: tuple = (10, 30)  # transient-burst gap length range

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if not self.intensity >= 1:
            raise ValueError("intensity must be >= 1")
        if self.duration < 1:
            raise ValueError("attack duration must be >= 1 sample")
        if not 0 <= self.jitter <= 1:
            raise ValueError("jitter must lie in [0, 1]")

    def target_channels(self, channel_names) -> list[int]:
        names = list(channel_names)
        if self.channels:
            return [names.index(c) if isinstance(c, str) else int(c) for c in self.channels]
        if self.kind == "transient-burst":
            return list(range(len(names)))
        name, pos = _ATTACK_TARGETS[self.kind]
        return [names.index(name) if name in names else min(pos, len(names) - 1)]


def _pulse_gain(spec: AttackSpec, T: int, rng) -> np.ndarray:
    """On/off pulse train scaled so its expected mean is 1."""
    on_lo, on_hi = spec.pulse_on
    off_lo, off_hi = spec.pulse_off
    duty = (on_lo + on_hi) / (on_lo + on_hi + off_lo + off_hi)
    gain = np.zeros(T)
    t = 0
    while t < T:
        on = int(rng.integers(on_lo, on_hi + 1))
        gain[t:t + on] = 1.0 / duty
        t += on + int(rng.integers(off_lo, off_hi + 1))
    return gain


def attack_footprint(spec: AttackSpec, background: WorkloadSpec) -> TraceMatrix:
    """The additive counter footprint alone, sized against ``background``'s rates.

    Targeted channels gain (intensity - 1) * rate * G where G has mean 1.
    """
    rng = np.random.default_rng(spec.seed)
    T, m = spec.duration, background.m
    ref = background.reference_rate()
    g = 1.0 + spec.jitter * (2.0 * rng.random((m, T)) - 1.0)
    if spec.kind == "transient-burst":
        g *= _pulse_gain(spec, T, rng)
    x = np.zeros((m, T))
    for c in spec.target_channels(background.channel_names):
        x[c] = (spec.intensity - 1.0) * ref[c] * g[c]
    return TraceMatrix(background.channel_names, np.rint(x), label="attack",
                       source_id=f"{spec.kind}-{spec.seed}")


def synth_attack(spec: AttackSpec, background: WorkloadSpec) -> TraceMatrix:
    """Background workload of the attack's duration with the footprint added."""
    bg = synth_benign(background, duration=spec.duration)
    fp = attack_footprint(spec, background)
    return TraceMatrix(bg.channel_names, bg.values + fp.values, label="attack",
                       source_id=f"{spec.kind}-{spec.seed}-on-{bg.source_id}")


def inject(benign: TraceMatrix, attack: TraceMatrix, offset: int):
    """Add ``attack`` element-wise into ``benign`` starting at ``offset``.

    Returns the combined trace (label=attack) and the injected [start, stop)
    interval.
    """
    if benign.channel_names != attack.channel_names:
        raise ValueError(
            f"channel mismatch: {benign.channel_names} vs {attack.channel_names}"
        )
    if offset < 0 or offset + attack.T > benign.T:
        raise ValueError(
            f"attack of length {attack.T} at offset {offset} exceeds trace length {benign.T}"
        )
    values = benign.values.copy()
    values[:, offset:offset + attack.T] += attack.values
    out = benign.replace(values=values, label="attack",
                         source_id=f"{benign.source_id}+{attack.source_id}@{offset}",
                         attack_span=(offset, offset + attack.T))
    return out, (offset, offset + attack.T)


# key=value spec files

def _split_list(val: str, cast=float):
    return tuple(cast(v) for v in val.replace(";", ",").split(",") if v.strip())


def parse_spec_text(text: str) -> dict:
    """``key = value`` lines with ``#`` comments into a dict of strings."""
    out = {}
    for k, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"line {k}: expected 'key = value', got {raw!r}")
        out[key.strip()] = val.strip()
    return out


def workload_from_dict(d: dict, prefix: str = "") -> WorkloadSpec:
    g = lambda k, default=None: d.get(prefix + k, default)  # noqa: E731
    names = _split_list(g("channels"), str) if g("channels") else DEFAULT_CHANNELS
    kw = dict(
        kind=g("kind", "stationary-noise"),
        channel_names=names,
        duration=int(g("duration", 1000)),
        seed=int(g("seed", 0)),
    )
    for key in ("base", "amplitude", "noise"):
        if g(key) is not None:
            kw[key] = _split_list(g(key))
        elif key != "base":
            kw[key] = (0.0,) * len(names)
        else:
            kw[key] = (1000.0,) * len(names)
    kw["period"] = _split_list(g("period"), int) if g("period") else (50,) * len(names)
    if g("duty") is not None:
        kw["duty"] = float(g("duty"))
    if kw["kind"] == "composite":
        n = int(g("parts", 0))
        parts = []
        for i in range(1, n + 1):
            sub = {k[len(f"part{i}."):]: v for k, v in d.items() if k.startswith(prefix + f"part{i}.")}
            sub.setdefault("channels", ",".join(names))
            sub.setdefault("duration", str(kw["duration"]))
            parts.append(workload_from_dict(sub))
        kw["parts"] = tuple(parts)
    return WorkloadSpec(**kw)


def attack_from_dict(d: dict) -> AttackSpec | None:
    if "attack" not in d:
        return None
    kw = dict(kind=d["attack"])
    if "intensity" in d:
        kw["intensity"] = float(d["intensity"])
    if "attack_duration" in d:
        kw["duration"] = int(d["attack_duration"])
    if "attack_seed" in d:
        kw["seed"] = int(d["attack_seed"])
    if "jitter" in d:
        kw["jitter"] = float(d["jitter"])
    if "attack_channels" in d:
        kw["channels"] = _split_list(d["attack_channels"], str)
    return AttackSpec(**kw)
