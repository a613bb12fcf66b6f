"""Acceptance criteria, one test each; results are summarised as PASS/FAIL lines."""

import json
import math
import shutil
import time

import numpy as np
import pytest

from conftest import forced_ranking_corpus
from fortune.baselines import dtw_distance
from fortune.cli import main
from fortune.corpus import build_corpus
from fortune.counters import APPENDIX_SCORES, evaluate_channels, select_top
from fortune.detector import DetectorConfig, ErrorStream, flag_stream
from fortune.experiment import compare, evaluate_model
from fortune.report import render_report, roc
from fortune.rnn import (
    CellParams, CellState, TrainConfig, grad_check, gru_cell_forward, init_model,
    lstm_cell_forward, train,
)
from fortune.trace import Scaler, TraceMatrix, make_windows


def sig(v):
    return 1.0 / (1.0 + math.exp(-v))


@pytest.fixture(scope="session")
def canonical():
    return build_corpus()


@pytest.fixture(scope="session")
def trained(canonical):
    """Reference-setting LSTM and GRU (W=100, h=64, 10 epochs) and their evaluations."""
    out = {}
    for kind in ("LSTM", "GRU"):
        t0 = time.perf_counter()
        res = train(kind, canonical.train, 100, 64, TrainConfig(epochs=10, seed=0))
        seconds = time.perf_counter() - t0
        ev = evaluate_model(res.model, canonical.benign, canonical.attack)
        out[kind] = (res, seconds, ev)
    return out


def test_1_gradient_check(record):
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    worst = 0.0
    for kind in ("LSTM", "GRU"):
        for i in range(20):
            m = init_model(kind, 3, 8, 10, Scaler(np.zeros(3), np.ones(3), ("a", "b", "c")), seed=i)
            for a in m.arrays().values():
                a[...] = rng.normal(0, 0.5, a.shape)
            worst = max(worst, grad_check(m, rng.normal(size=(10, 3)), rng.normal(size=3), eps=1e-5))
    elapsed = time.perf_counter() - t0
    ok = record("1 gradient check", worst <= 1e-4 and elapsed < 60,
                f"max_dev={worst:.2e} time={elapsed:.1f}s")
    assert ok


def test_2_cell_fidelity(record):
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        w = {g: rng.normal(size=2) for g in "fiog"}
        b = {g: rng.normal() for g in "fiog"}
        x, hp, cp = rng.normal(size=3)
        named = {f"W_{g}": w[g].reshape(1, 2) for g in "fiog"}
        named.update({f"b_{g}": np.array([b[g]]) for g in "fiog"})
        out = lstm_cell_forward(np.array([x]), CellState(np.array([hp]), np.array([cp])),
                                CellParams.from_named("LSTM", 1, 1, named))
        pre = {g: w[g][0] * hp + w[g][1] * x + b[g] for g in "fiog"}
        c = sig(pre["f"]) * cp + sig(pre["i"]) * math.tanh(pre["g"])
        worst = max(worst, abs(out.c[0] - c), abs(out.h[0] - sig(pre["o"]) * math.tanh(c)))

        wz, uz, wr, ur, wh, uh, bz, br, bh, x, hp = rng.normal(size=11)
        p = CellParams.from_named("GRU", 1, 1, {
            "W_z": [[wz]], "U_z": [[uz]], "W_r": [[wr]], "U_r": [[ur]], "W": [[wh]], "U": [[uh]],
            "b_z": [bz], "b_r": [br], "b_h": [bh]})
        z, r = sig(wz * x + uz * hp + bz), sig(wr * x + ur * hp + br)
        want = z * hp + (1 - z) * math.tanh(wh * x + r * (uh * hp) + bh)
        worst = max(worst, abs(gru_cell_forward(np.array([x]), np.array([hp]), p)[0] - want))
    assert record("2 cell fidelity", worst <= 1e-12, f"max_err={worst:.1e}")


def test_3_flag_stream_brute_force(record):
    rng = np.random.default_rng(2)
    bad = 0
    for _ in range(1000):
        T = int(rng.integers(1, 2001))
        D = int(rng.integers(1, min(100, T) + 1))
        e = rng.exponential(1.0, T)
        tau = float(rng.uniform(0.05, 1.5))
        got = flag_stream(ErrorStream(e), DetectorConfig(tau, D)).flags
        want = [int(t >= D - 1 and all(e[k] >= tau for k in range(t - D + 1, t + 1)))
                if e[t] >= tau else 0 for t in range(T)]
        bad += not np.array_equal(got, want)
    assert record("3 flag stream", bad == 0, f"mismatches={bad}/1000")


def test_4_window_enumeration(record):
    rng = np.random.default_rng(3)
    bad = 0
    for _ in range(500):
        W = int(rng.integers(1, 30))
        T = int(rng.integers(W + 1, W + 60))
        m = int(rng.integers(1, 4))
        tr = TraceMatrix(tuple(f"c{i}" for i in range(m)), rng.integers(0, 100, (m, T)))
        wb = make_windows(tr, W)
        ok = wb.inputs.shape == (T - W, W, m) and wb.targets.shape == (T - W, m)
        for i in range(T - W):
            for k in range(W):
                for c in range(m):
                    ok = ok and wb.inputs[i, k, c] == tr.values[c, i + k]
            for c in range(m):
                ok = ok and wb.targets[i, c] == tr.values[c, i + W]
        bad += not ok
    assert record("4 window enumeration", bad == 0, f"mismatches={bad}/500")


def test_5_training_convergence(record, trained):
    res, seconds, _ = trained["LSTM"]
    ratio = res.curve[-1] / res.curve[0]
    ok = record("5 training convergence", ratio < 0.25 and seconds < 600,
                f"final/epoch1={ratio:.3f} time={seconds:.0f}s")
    assert ok


def test_6_operating_point(record, canonical, trained):
    sw = trained["LSTM"][2].sweep
    assert len(canonical.attack) == 30 and len(canonical.benign) == 60
    lat = sw.median_latency_ms()  # one sample per ms
    ok = record("6 operating point", sw.fscore >= 0.95 and lat is not None and lat <= 100,
                f"F={sw.fscore:.4f} median_latency={lat} tau={sw.tau:.4g} D={sw.D}")
    assert ok


def test_7_lstm_vs_gru_auc(record, trained, tmp_path):
    a_lstm, a_gru = trained["LSTM"][2].roc, trained["GRU"][2].roc
    render_report(tmp_path, config={"W": 100, "h": 64}, rocs={"lstm": a_lstm, "gru": a_gru})
    recorded = json.loads((tmp_path / "summary.json").read_text())["auc"]
    ok = record("7 LSTM vs GRU AUC", a_lstm.auc >= a_gru.auc - 0.02
                and recorded == {"gru": a_gru.auc, "lstm": a_lstm.auc},
                f"lstm={a_lstm.auc:.4f} gru={a_gru.auc:.4f}")
    assert ok


def _enumerate_dtw(a, b, i=0, j=0):
    cost = (a[i] - b[j]) ** 2
    if i == len(a) - 1 and j == len(b) - 1:
        return cost
    steps = []
    if i + 1 < len(a) and j + 1 < len(b):
        steps.append(_enumerate_dtw(a, b, i + 1, j + 1))
    if i + 1 < len(a):
        steps.append(_enumerate_dtw(a, b, i + 1, j))
    if j + 1 < len(b):
        steps.append(_enumerate_dtw(a, b, i, j + 1))
    return cost + min(steps)


def test_8_dtw(record):
    rng = np.random.default_rng(4)
    bad = 0
    for _ in range(1000):
        a = rng.integers(0, 3, rng.integers(1, 7)).astype(float)
        b = rng.integers(0, 3, rng.integers(1, 7)).astype(float)
        d = dtw_distance(a, b)
        bad += not (d == _enumerate_dtw(a, b) and d == dtw_distance(b, a)
                    and dtw_distance(a, a) == 0.0)
    assert record("8 DTW", bad == 0, f"mismatches={bad}/1000")


def test_9_rnn_beats_gaussian_pdf(record, canonical, trained):
    table = compare(trained["LSTM"][2], canonical.train, canonical.benign, canonical.attack,
                    techniques=("Normal Dist.",))
    f = {r.technique: r.fscore for r in table.rows}
    ok = record("9 RNN vs Gaussian pdf", f["RNN"] > f["Normal Dist."],
                f"RNN={f['RNN']:.4f} pdf={f['Normal Dist.']:.4f}")
    assert ok


def test_10_auc_pair_counting(record):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(200):
        b = rng.integers(0, 30, rng.integers(1, 60)).astype(float)
        a = rng.integers(0, 40, rng.integers(1, 60)).astype(float)
        pairs = sum((x > y) + 0.5 * (x == y) for x in a for y in b) / (len(a) * len(b))
        worst = max(worst, abs(roc(b, a).auc - pairs))
    sep = roc(rng.random(50), rng.random(40) + 1.0).auc
    assert record("10 AUC", worst <= 1e-12 and sep == 1.0, f"max_err={worst:.1e} separable={sep}")


def _cli_bundles(root, run):
    d = root / run
    spec = root / "w.conf"
    corpus, model = d / "corpus", d / "model"
    train = ["--window", "12", "--hidden", "4", "--epochs", "2", "--seed", "3"]
    calls = {
        "synth": ["synth", str(spec), "--out", str(d / "synth")],
        "synth-corpus": ["synth", "--corpus", "--n-train", "3", "--n-benign", "4",
                         "--n-attack", "4", "--out", str(corpus)],
        "train": ["train", "--trace-dir", str(corpus / "train"), *train, "--out", str(model)],
        "detect": ["detect", "--model", str(model / "model.txt"),
                   "--trace", str(corpus / "test" / "attack-flush-storm-000.csv"),
                   "--tau", "0.5", "--decision", "4", "--out", str(d / "detect")],
        "sweep": ["sweep", "--model", str(model / "model.txt"), "--trace-dir", str(corpus / "test"),
                  "--d-grid", "1:20:1", "--out", str(d / "sweep")],
        "window-sweep": ["window-sweep", "--trace-dir", str(corpus / "train"), "--windows", "8,16",
                         "--holdout", "1", *train, "--out", str(d / "window")],
        "measure-sweep": ["measure-sweep", "--trace-dir", str(corpus / "train"), "--counts", "1,2",
                          "--holdout", "1", *train, "--out", str(d / "measure")],
        "select": ["select", "--appendix", "--out", str(d / "select")],
        "compare": ["compare", "--model", str(model / "model.txt"),
                    "--trace-dir", str(corpus / "test"), "--train-dir", str(corpus / "train"),
                    "--d-grid", "1:20:1", "--out", str(d / "compare")],
    }
    codes = {name: main(argv) for name, argv in calls.items()}
    files = {p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}
    return codes, files


def test_11_cli_determinism(record, tmp_path):
    (tmp_path / "w.conf").write_text(
        "kind = periodic-burst\nbase = 100,200,300\namplitude = 50,50,50\nperiod = 20,20,20\n"
        "noise = 5,5,5\nduration = 150\nseed = 2\nattack = evict-storm\nintensity = 5\n"
        "attack_duration = 40\nattack_offset = 60\n")
    # same paths both times, since run configs echo their input paths
    codes_a, a = _cli_bundles(tmp_path, "run")
    shutil.rmtree(tmp_path / "run")
    codes_b, b = _cli_bundles(tmp_path, "run")
    failed = [n for n, c in codes_a.items() if c != 0]
    differ = sorted(str(k) for k in set(a) | set(b) if a.get(k) != b.get(k))
    ok = record("11 CLI determinism", not failed and not differ and codes_a == codes_b,
                f"commands={len(codes_a)} files={len(a)} failed={failed} differing={differ}")
    assert ok


def test_12_counter_selection(record):
    benign, attack = forced_ranking_corpus()
    scores = evaluate_channels(benign, attack, subset_size=3, W=20, h=8, D=5,
                               cfg=TrainConfig(epochs=3, lr=5e-3, seed=0))
    top = select_top(APPENDIX_SCORES, 3)
    ok = record("12 counter selection", scores[0].channel == "hot" and scores[0].fscore >= 0.9
                and set(top) == {"LLC_Miss", "ICACHE.Hit", "ICACHE.Miss"},
                f"first={scores[0].channel} F={scores[0].fscore:.3f} appendix_top3={top}")
    assert ok
