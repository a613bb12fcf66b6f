"""Rank counter channels by how well their own prediction error separates
attack traces from benign ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .baselines import best_threshold
from .detector import window_score
from .rnn import TrainConfig, predict_stream, train
from .trace import TraceError

MAX_SUBSET = 4

# published per-counter F-scores for the 36 core counters, used as a fixture
APPENDIX_SCORES = {
    "Dtlb_Load_Misses.Miss_Causes_A_Walk": 0.5657,
    "Dtlb_Load_Misses.Walk_Completed_4K": 0.5226,
    "Dtlb_Load_Misses.Walk_Completed": 0.5327,
    "Dtlb_Load_Misses.Walk_STLB_Hit_4K": 0.3627,
    "UOPS_Issued_Any": 0.3663,
    "ICACHE.Hit": 0.8137,
    "ICACHE.Miss": 0.7979,
    "L1D_Pend_Miss.Pending": 0.6818,
    "L1D_Pend_Miss.Request_FB_Full": 0.6698,
    "L1D.Replacement": 0.7523,
    "L2_Rqsts_Lat_Cache.Miss": 0.6244,
    "LLC_Miss": 0.8416,
    "LLC_Reference": 0.6167,
    "IDQ.Mite_UOPS": 0.3383,
    "BR_Inst_Exec.Nontaken_Cond.": 0.2703,
    "BR_Inst_Exec.Taken_Cond.": 0.3390,
    "BR_Inst_Exec.Taken_Direct_Jmp": 0.3455,
    "BR_Inst_Exec.Taken_Indirect_Jmp_Non_Call_Ret": 0.3137,
    "BR_Inst_Exec.Taken_Indirect_Near_Return": 0.2944,
    "BR_Inst_Exec.Taken_Direct_Near_Call": 0.3618,
    "BR_Inst_Exec.Taken_Indirect_Near_Call": 0.3592,
    "BR_Inst_Exec.All_Cond.": 0.2634,
    "BR_Inst_Exec.All_Direct_Jmp": 0.3238,
    "BR_Misp_Exec.Nontaken_Cond.": 0.3648,
    "BR_Misp_Exec.Taken_Cond.": 0.4510,
    "BR_Misp_Exec.Taken_Indirect_Jmp_Non_Call_Ret": 0.4455,
    "BR_Misp_Exec.Taken_Ret_Near": 0.3491,
    "BR_Misp_Exec.Taken_Indirect_Near_Call": 0.3553,
    "BR_Misp_Exec.All_Branches": 0.2700,
    "BR_Inst_Retired.Cond.": 0.4623,
    "BR_Inst_Retired.Not_Taken": 0.4412,
    "BR_Inst_Retired.Far_Branch": 0.4608,
    "BR_Misp_Retired.All_Branch": 0.4615,
    "BR_Misp_Retired.Cond.": 0.3786,
    "BR_Misp_Retired.All_Branches_Pebs": 0.2111,
    "BR_Misp_Retired.Near_Taken": 0.2871,
}


@dataclass(frozen=True)
class ChannelScore:
    channel: str
    fscore: float
    tau: float  # per-channel error threshold at the best F
    D: int
    separation: float = 0.0  # log10 ratio of median attack to median benign score
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not 0.0 <= self.fscore <= 1.0:
            raise ValueError(f"F-score {self.fscore} outside [0, 1]")


def partition(names, subset_size):
    """Consecutive groups of at most ``subset_size`` channels."""
    names = list(names)
    return [names[i:i + subset_size] for i in range(0, len(names), subset_size)]


def evaluate_channels(benign, attacks, subset_size=3, W=100, h=32, D=10,
                      cfg: TrainConfig = TrainConfig(), train_frac=0.5) -> list[ChannelScore]:
    """Train one LSTM per channel subset and score each channel on its own.

    Benign traces are split: the first ``train_frac`` share trains the
    subset models, the rest joins the attack traces for scoring. A trace's
    score on a channel is the largest tau at which that channel's squared
    error stays above tau for D steps; the channel's F-score is the best
    per-trace F1 over all thresholds. Channels sharing a subset model see
    each other's inputs, so an attack on one channel can lift its
    neighbours to the same F-score; such ties are ordered by separation.
    """
    benign, attacks = list(benign), list(attacks)
    if not attacks:
        raise ValueError("attack set empty")
    if len(benign) < 2:
        raise ValueError("need at least two benign traces (train and evaluation split)")
    if not 1 <= subset_size <= MAX_SUBSET:
        raise ValueError(f"subset_size must lie in [1, {MAX_SUBSET}]")
    names = benign[0].channel_names
    for tr in benign + attacks:
        if tr.channel_names != names:
            raise TraceError(f"channel registry mismatch: {tr.channel_names} vs {names}")
        if tr.T < W + D:
            raise TraceError(f"trace {tr.source_id!r} of length {tr.T} shorter than W+D={W + D}")
    n_train = min(len(benign) - 1, max(1, int(round(len(benign) * train_frac))))
    fit_set, eval_benign = benign[:n_train], benign[n_train:]

    scores = []
    for subset in partition(names, subset_size):
        res = train("LSTM", [t.select(subset) for t in fit_set], W, h, cfg)

        def per_channel(tr):
            sub = tr.select(subset)
            d = predict_stream(res.model, sub) - sub.values[:, W:].T
            return d * d  # (T-W) x len(subset)

        eb = [per_channel(t) for t in eval_benign]
        ea = [per_channel(t) for t in attacks]
        for j, name in enumerate(subset):
            sb = [window_score(e[:, j], D) for e in eb]
            sa = [window_score(e[:, j], D) for e in ea]
            tau, f = best_threshold(sb, sa)
            scores.append(ChannelScore(name, f, tau, D, separation(sb, sa), meta={
                "subset": ",".join(subset), "val_error": res.curve[-1],
                "epochs_run": len(res.curve), "seed": cfg.seed,
            }))
    return rank(scores)


def separation(benign_scores, attack_scores) -> float:
    tiny = np.finfo(float).tiny
    mb = max(float(np.median(benign_scores)), tiny)
    ma = max(float(np.median(attack_scores)), tiny)
    return float(np.log10(ma / mb))


def rank(scores) -> list[ChannelScore]:
    """Descending F-score, then descending separation, then name."""
    return sorted(scores, key=lambda s: (-s.fscore, -s.separation, s.channel))


def select_top(scores, k: int) -> list[str]:
    """Names of the k best channels.

    A name -> F-score dict breaks ties by name; ChannelScore lists follow rank().
    """
    if isinstance(scores, dict):
        items = sorted(scores.items(), key=lambda it: (-it[1], it[0]))
        names = [name for name, _ in items]
    else:
        names = [s.channel for s in rank(scores)]
    if not 0 <= k <= len(names):
        raise ValueError(f"k={k} out of range for {len(names)} channels")
    return names[:k]


def scores_csv(scores) -> str:
    lines = ["channel,fscore"]
    lines += [f"{s.channel},{s.fscore:.4f}" for s in rank(scores)]
    return "\n".join(lines) + "\n"
