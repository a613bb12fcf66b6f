"""ROC/AUC, F-scores, false-alarm rates and the report bundle writer."""

from __future__ import annotations

import hashlib
import json
import math
import os
import shutil
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .detector import alarm_intervals


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # threshold reached at each point; +inf for the origin
    auc: float
    score: str = "max windowed error per trace"

    def csv(self) -> str:
        lines = ["threshold,fpr,tpr"]
        for th, x, y in zip(self.thresholds, self.fpr, self.tpr):
            lines.append(f"{th:.10g},{x:.10g},{y:.10g}")
        return "\n".join(lines) + "\n"


def roc(benign_scores, attack_scores, score="max windowed error per trace") -> RocCurve:
    """ROC over every distinct score; a trace is positive when its score >= threshold.

    Tied benign/attack scores move the curve diagonally, so the trapezoidal AUC
    counts ties as one half.
    """
    b = np.asarray(benign_scores, dtype=np.float64).ravel()
    a = np.asarray(attack_scores, dtype=np.float64).ravel()
    if b.size == 0 or a.size == 0:
        raise ValueError("roc needs at least one benign and one attack score")
    if np.any(np.isnan(b)) or np.any(np.isnan(a)):
        raise ValueError("scores must not be NaN")
    ths = np.unique(np.concatenate([a, b]))[::-1]
    b_sorted, a_sorted = np.sort(b), np.sort(a)
    # count of scores >= th
    fp = b.size - np.searchsorted(b_sorted, ths, side="left")
    tp = a.size - np.searchsorted(a_sorted, ths, side="left")
    fpr = np.concatenate([[0.0], fp / b.size])
    tpr = np.concatenate([[0.0], tp / a.size])
    thresholds = np.concatenate([[math.inf], ths])
    # trapezoid on integer counts, divided once, so separable inputs give exactly 1
    fp0 = np.concatenate([[0], fp]).astype(np.int64)
    tp0 = np.concatenate([[0], tp]).astype(np.int64)
    area2 = int(np.sum(np.diff(fp0) * (tp0[1:] + tp0[:-1])))
    auc = area2 / (2 * b.size * a.size)
    return RocCurve(fpr, tpr, thresholds, auc, score)


def f_score(tp, fp, fn) -> float:
    """F1 over counts: 2tp / (2tp + fp + fn), 0 when tp = 0."""
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be non-negative")
    if tp + fp + fn == 0:
        raise ValueError("f_score is undefined when tp, fp and fn are all zero")
    return 2.0 * tp / (2 * tp + fp + fn) if tp else 0.0


def false_alarm_rate_per_second(flag_streams, sample_period: float) -> float:
    """Alarm onsets per monitored second, in percent."""
    flag_streams = list(flag_streams)
    if not flag_streams:
        raise ValueError("no flag streams")
    onsets = sum(len(alarm_intervals(f)) for f in flag_streams)
    seconds = sum(len(f) for f in flag_streams) * sample_period / 1000.0
    if seconds <= 0:
        raise ValueError("zero monitored duration")
    return 100.0 * onsets / seconds


@dataclass
class ComparisonRow:
    technique: str
    tp: int
    fp: int
    fn: int
    tn: int
    note: str = ""

    @property
    def fscore(self) -> float:
        return f_score(self.tp, self.fp, self.fn) if self.tp + self.fp + self.fn else 0.0

    @property
    def fpr(self) -> float:
        n = self.fp + self.tn
        return self.fp / n if n else 0.0

    @property
    def fnr(self) -> float:
        n = self.tp + self.fn
        return self.fn / n if n else 0.0


def row_from_decisions(technique, benign_flags, attack_flags, note="") -> ComparisonRow:
    fp = int(sum(bool(x) for x in benign_flags))
    tp = int(sum(bool(x) for x in attack_flags))
    return ComparisonRow(technique, tp, fp, len(attack_flags) - tp, len(benign_flags) - fp, note)


@dataclass
class ComparisonTable:
    rows: list = field(default_factory=list)

    HEADER = ("technique", "fscore", "fpr", "fnr", "tp", "fp", "fn", "tn")

    def _cells(self):
        for r in self.rows:
            yield (r.technique, f"{r.fscore:.4f}", f"{r.fpr:.4f}", f"{r.fnr:.4f}",
                   str(r.tp), str(r.fp), str(r.fn), str(r.tn))

    def csv(self) -> str:
        lines = [",".join(self.HEADER)]
        lines += [",".join(c) for c in self._cells()]
        return "\n".join(lines) + "\n"

    def text(self) -> str:
        cells = [self.HEADER] + list(self._cells())
        widths = [max(len(row[i]) for row in cells) for i in range(len(self.HEADER))]
        out = []
        for k, row in enumerate(cells):
            out.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
            if k == 0:
                out.append("  ".join("-" * w for w in widths))
        return "\n".join(out) + "\n"


def parse_csv(text: str) -> list[dict]:
    lines = [ln for ln in text.splitlines() if ln]
    header = lines[0].split(",")
    return [dict(zip(header, ln.split(","))) for ln in lines[1:]]


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    return x


def config_hash(config: dict) -> str:
    blob = json.dumps(_jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def render_report(out_dir, *, config: dict, sweep=None, rocs=None, comparison=None,
                  false_alarms=None, summary=None) -> list[str]:
    """Write the report bundle; returns the file names written.

    Files: sweep.csv, roc_<model>.csv, comparison.csv/.txt, false_alarms.csv,
    summary.json and README-run.txt. Each lands via a temp file and rename.
    """
    out_dir = os.fspath(out_dir)
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create output directory {out_dir}: {e}") from e
    if not os.access(out_dir, os.W_OK):
        raise OSError(f"output directory {out_dir} is not writable")

    files = {}
    if sweep is not None:
        files["sweep.csv"] = sweep.grid_csv()
    for name, curve in sorted((rocs or {}).items()):
        files[f"roc_{name}.csv"] = curve.csv()
    table = comparison if comparison is not None else ComparisonTable()
    files["comparison.csv"] = table.csv()
    files["comparison.txt"] = table.text()
    if false_alarms is not None:
        lines = ["group,model,rate_pct_per_s"]
        for (group, model), rate in sorted(false_alarms.items()):
            lines.append(f"{group},{model},{rate:.4f}")
        files["false_alarms.csv"] = "\n".join(lines) + "\n"

    digest = config_hash(config)
    body = {"config": config, "config_hash": digest, "summary": summary or {}}
    if sweep is not None:
        body["operating_point"] = {
            "tau": sweep.tau, "D": sweep.D, "fpr": sweep.fpr, "fnr": sweep.fnr,
            "fscore": sweep.fscore, "median_latency_ms": sweep.median_latency_ms(),
        }
    if rocs:
        body["auc"] = {k: v.auc for k, v in sorted(rocs.items())}
    if table.rows:
        body["comparison"] = [
            {"technique": r.technique, "fscore": r.fscore, "fpr": r.fpr, "fnr": r.fnr,
             "note": r.note}
            for r in table.rows
        ]
    files["summary.json"] = json.dumps(_jsonable(body), indent=2, sort_keys=True) + "\n"
    seeds = {k: v for k, v in sorted(config.items()) if "seed" in k}
    readme = ["fortune run", f"config_hash: {digest}"]
    readme += [f"{k}: {v}" for k, v in seeds.items()]
    readme += ["files: " + ", ".join(sorted(files) + ["README-run.txt"])]
    files["README-run.txt"] = "\n".join(readme) + "\n"

    write_files(out_dir, files)
    return sorted(files)


def write_files(out_dir, files: dict) -> None:
    """Write every ``name -> text`` entry into ``out_dir``.

    All files are staged first and renamed only once every write succeeded,
    so a failure leaves no partial bundle behind.
    """
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    stage = tempfile.mkdtemp(prefix=".stage-", dir=out_dir)
    try:
        for name, text in files.items():
            path = os.path.join(stage, name)
            os.makedirs(os.path.dirname(path), exist_ok=True)
            with open(path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        for name in files:
            dest = os.path.join(out_dir, name)
            os.makedirs(os.path.dirname(dest), exist_ok=True)
            os.replace(os.path.join(stage, name), dest)
    finally:
        shutil.rmtree(stage, ignore_errors=True)
