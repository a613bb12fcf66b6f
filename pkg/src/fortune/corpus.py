"""Canonical seeded desk-scale benchmark corpus.

Training: 36 benign traces of 2,000 samples. Test: 60 benign traces and 30
traces with an injected attack, 1,000 samples each, over the three default
channels. Every draw derives from one seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .synth import AttackSpec, WorkloadSpec, attack_footprint, inject, synth_benign
from .trace import DEFAULT_CHANNELS, TraceMatrix

CANONICAL_SEED = 2020
FAMILIES = ("periodic-burst", "stationary-noise", "periodic-burst", "ramp", "composite")

# nominal per-channel rate ranges (counts per 1 ms sample)
RATE_LO = np.array([1000.0, 3000.0, 1000.0])
RATE_HI = np.array([3000.0, 8000.0, 3000.0])


@dataclass
class Corpus:
    train: list
    benign: list
    attack: list
    attack_intervals: list  # injected [start, stop) per attack trace
    attack_kinds: list
    benign_kinds: list
    seed: int
    meta: dict = field(default_factory=dict)

    @property
    def channel_names(self):
        return self.train[0].channel_names


def random_workload(rng, kind, duration, seed, channel_names=DEFAULT_CHANNELS) -> WorkloadSpec:
    m = len(channel_names)
    lo = np.resize(RATE_LO, m)
    hi = np.resize(RATE_HI, m)

    def leaf(kind, scale=1.0, seed=seed):
        base = rng.uniform(lo, hi) * scale
        return WorkloadSpec(
            kind=kind,
            base=tuple(np.round(base)),
            amplitude=tuple(np.round(base * rng.uniform(0.3, 0.9, m))),
            period=tuple(int(p) for p in np.full(m, rng.integers(20, 81))),
            noise=tuple(np.round(base * rng.uniform(0.02, 0.05, m), 1)),
            duration=duration,
            seed=seed,
            channel_names=tuple(channel_names),
        )

    if kind != "composite":
        return leaf(kind)
    k = int(rng.integers(2, 6))
    parts = tuple(
        leaf(str(rng.choice(["periodic-burst", "stationary-noise", "ramp"])), scale=1.0 / k, seed=0)
        for _ in range(k)
    )
    return WorkloadSpec(kind="composite", duration=duration, seed=seed,
                        channel_names=tuple(channel_names), parts=parts)


def build_corpus(seed: int = CANONICAL_SEED, n_train=36, train_len=2000, n_benign=60,
                 n_attack=30, test_len=1000, attack_len=300, W=100,
                 intensity=(4.0, 8.0), channel_names=DEFAULT_CHANNELS) -> Corpus:
    # independent streams per group, so resizing one group leaves the others intact
    g_train, g_benign, g_attack = (np.random.default_rng(s)
                                   for s in np.random.SeedSequence(seed).spawn(3))

    def workload(rng, i, length):
        kind = FAMILIES[i % len(FAMILIES)]
        return random_workload(rng, kind, length, int(rng.integers(0, 2**63 - 1)), channel_names)

    train = [synth_benign(workload(g_train, i, train_len)) for i in range(n_train)]

    benign, benign_kinds = [], []
    for i in range(n_benign):
        spec = workload(g_benign, i, test_len)
        benign.append(synth_benign(spec))
        benign_kinds.append(spec.kind)

    kinds = ("flush-storm", "evict-storm", "transient-burst")
    attack, intervals, attack_kinds = [], [], []
    for i in range(n_attack):
        spec = workload(g_attack, i, test_len)
        bg = synth_benign(spec)
        a = AttackSpec(kind=kinds[i % 3], intensity=float(g_attack.uniform(*intensity)),
                       duration=attack_len, seed=int(g_attack.integers(0, 2**63 - 1)))
        offset = int(g_attack.integers(W + 50, test_len - attack_len + 1))
        tr, iv = inject(bg, attack_footprint(a, spec), offset)
        attack.append(tr)
        intervals.append(iv)
        attack_kinds.append(a.kind)
    return Corpus(train, benign, attack, intervals, attack_kinds, benign_kinds, seed,
                  meta=dict(n_train=n_train, train_len=train_len, n_benign=n_benign,
                            n_attack=n_attack, test_len=test_len, attack_len=attack_len,
                            intensity=list(intensity)))


def attack_segments(corpus: Corpus) -> list[TraceMatrix]:
    """The injected portions of each attack trace."""
    return [tr.crop(a, b) for tr, (a, b) in zip(corpus.attack, corpus.attack_intervals)]
