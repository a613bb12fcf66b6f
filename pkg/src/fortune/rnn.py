"""Next-step LSTM/GRU predictors written directly against numpy.

Weights are kept stacked for speed:

* LSTM: ``W`` (4h x (h+m)) with row blocks f, i, o, g acting on ``[h_prev, x]``,
  bias ``b`` (4h).
* GRU: ``Wx`` (3h x m) and ``U`` (3h x h) with row blocks z, r, candidate,
  bias ``b`` (3h).
* Output head: ``V`` (m x h), ``c`` (m).

``named_tensors`` exposes the per-gate blocks (W_f, U_z, ...) as views.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .trace import Scaler, TraceError, fit_scaler, scale, window_view

log = logging.getLogger(__name__)

CELL_KINDS = ("LSTM", "GRU")
LSTM_GATES = ("f", "i", "o", "g")
GRU_GATES = ("z", "r", "h")


class ShapeError(ValueError):
    pass


class TrainingError(RuntimeError):
    """Raised when training diverges (non-finite loss)."""


def sigmoid(x):
    # tanh form: same value to ~1 ulp, several times faster than expit here
    return 0.5 * np.tanh(0.5 * x) + 0.5


def normalize_kind(kind: str) -> str:
    k = str(kind).upper()
    if k not in CELL_KINDS:
        raise ValueError(f"cell kind must be LSTM or GRU, got {kind!r}")
    return k


@dataclass
class CellParams:
    """Recurrent-cell weights for one layer (stacked layout, see module doc)."""

    kind: str
    m: int
    h: int
    arrays: dict

    def __post_init__(self):
        self.kind = normalize_kind(self.kind)
        want = cell_shapes(self.kind, self.m, self.h)
        for name, shape in want.items():
            a = self.arrays.get(name)
            if a is None:
                raise ShapeError(f"missing cell tensor {name!r}")
            if a.shape != shape:
                raise ShapeError(f"{name} has shape {a.shape}, expected {shape}")

    @classmethod
    def from_named(cls, kind, m, h, named) -> CellParams:
        kind = normalize_kind(kind)
        try:
            if kind == "LSTM":
                W = np.vstack([named[f"W_{g}"] for g in LSTM_GATES])
                b = np.concatenate([np.ravel(named[f"b_{g}"]) for g in LSTM_GATES])
                arrays = {"W": W, "b": b}
            else:
                Wx = np.vstack([named["W_z"], named["W_r"], named["W"]])
                U = np.vstack([named["U_z"], named["U_r"], named["U"]])
                b = np.concatenate([np.ravel(named[f"b_{g}"]) for g in GRU_GATES])
                arrays = {"Wx": Wx, "U": U, "b": b}
        except KeyError as e:
            raise ShapeError(f"missing cell tensor {e.args[0]!r}") from None
        arrays = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}
        return cls(kind, m, h, arrays)

    def named_tensors(self) -> dict:
        h = self.h
        out = {}
        if self.kind == "LSTM":
            for k, g in enumerate(LSTM_GATES):
                out[f"W_{g}"] = self.arrays["W"][k * h:(k + 1) * h]
            for k, g in enumerate(LSTM_GATES):
                out[f"b_{g}"] = self.arrays["b"][k * h:(k + 1) * h]
        else:
            Wx, U, b = self.arrays["Wx"], self.arrays["U"], self.arrays["b"]
            out["W_z"], out["U_z"] = Wx[:h], U[:h]
            out["W_r"], out["U_r"] = Wx[h:2 * h], U[h:2 * h]
            out["W"], out["U"] = Wx[2 * h:], U[2 * h:]
            for k, g in enumerate(GRU_GATES):
                out[f"b_{g}"] = b[k * h:(k + 1) * h]
        return out


def cell_shapes(kind, m, h):
    if kind == "LSTM":
        return {"W": (4 * h, h + m), "b": (4 * h,)}
    return {"Wx": (3 * h, m), "U": (3 * h, h), "b": (3 * h,)}


@dataclass
class CellState:
    h: np.ndarray
    c: np.ndarray | None = None

    @classmethod
    def zeros(cls, h, kind="LSTM", batch=None):
        shape = (h,) if batch is None else (batch, h)
        return cls(np.zeros(shape), np.zeros(shape) if kind == "LSTM" else None)


def _check_vec(x, n, what):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != n:
        raise ShapeError(f"{what} has length {x.shape[-1]}, expected {n}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"non-finite {what}")
    return x


def lstm_cell_forward(x_t, state: CellState, p: CellParams) -> CellState:
    """One LSTM step; ``x_t`` may be a vector or an (N, m) batch."""
    if p.kind != "LSTM":
        raise ShapeError("lstm_cell_forward needs LSTM parameters")
    x_t = _check_vec(x_t, p.m, "input")
    h_prev = _check_vec(state.h, p.h, "hidden state")
    c_prev = _check_vec(state.c, p.h, "cell state")
    h = p.h
    z = np.concatenate([h_prev, x_t], axis=-1) @ p.arrays["W"].T + p.arrays["b"]
    f = sigmoid(z[..., :h])
    i = sigmoid(z[..., h:2 * h])
    o = sigmoid(z[..., 2 * h:3 * h])
    g = np.tanh(z[..., 3 * h:])
    c = f * c_prev + i * g
    return CellState(o * np.tanh(c), c)


def gru_cell_forward(x_t, h_prev, p: CellParams) -> np.ndarray:
    """One GRU step: h = z*h_prev + (1-z)*tanh(W x + r*(U h_prev) + b_h)."""
    if p.kind != "GRU":
        raise ShapeError("gru_cell_forward needs GRU parameters")
    x_t = _check_vec(x_t, p.m, "input")
    h_prev = _check_vec(h_prev, p.h, "hidden state")
    h = p.h
    a = x_t @ p.arrays["Wx"].T + p.arrays["b"]
    u = h_prev @ p.arrays["U"].T
    z = sigmoid(a[..., :h] + u[..., :h])
    r = sigmoid(a[..., h:2 * h] + u[..., h:2 * h])
    cand = np.tanh(a[..., 2 * h:] + r * u[..., 2 * h:])
    return z * h_prev + (1.0 - z) * cand


@dataclass
class PredictorModel:
    kind: str
    m: int
    h: int
    W: int
    cell: CellParams
    V: np.ndarray  # m x h
    c: np.ndarray  # m
    scaler: Scaler
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kind = normalize_kind(self.kind)
        if self.W < 1:
            raise ShapeError("window size must be >= 1")
        if self.cell.kind != self.kind or self.cell.m != self.m or self.cell.h != self.h:
            raise ShapeError("cell parameters do not match model dimensions")
        if self.V.shape != (self.m, self.h) or self.c.shape != (self.m,):
            raise ShapeError("output projection has wrong shape")
        if self.scaler.m != self.m:
            raise ShapeError(f"scaler has {self.scaler.m} channels, model m={self.m}")
        for a in self.arrays().values():
            if not np.all(np.isfinite(a)):
                raise ValueError("model contains non-finite weights")

    def arrays(self) -> dict:
        """Every trainable array by stacked name (shared, not copied)."""
        out = dict(self.cell.arrays)
        out["V"] = self.V
        out["c"] = self.c
        return out

    def copy(self) -> PredictorModel:
        arrays = {k: v.copy() for k, v in self.cell.arrays.items()}
        return PredictorModel(
            self.kind, self.m, self.h, self.W,
            CellParams(self.kind, self.m, self.h, arrays),
            self.V.copy(), self.c.copy(), self.scaler, dict(self.meta),
        )

    def freeze(self) -> PredictorModel:
        for a in self.arrays().values():
            a.setflags(write=False)
        return self

    @property
    def channel_names(self):
        return self.scaler.channel_names


def init_model(kind, m, h, W, scaler: Scaler, seed=0) -> PredictorModel:
    """Uniform(-1/sqrt(h), 1/sqrt(h)) weights, zero biases."""
    kind = normalize_kind(kind)
    rng = np.random.default_rng(seed)
    k = 1.0 / np.sqrt(h)
    arrays = {}
    for name, shape in cell_shapes(kind, m, h).items():
        arrays[name] = np.zeros(shape) if name == "b" else rng.uniform(-k, k, shape)
    V = rng.uniform(-k, k, (m, h))
    return PredictorModel(kind, m, h, W, CellParams(kind, m, h, arrays), V, np.zeros(m), scaler)


# batched forward / backward
#
# Step-major layout: per-step activations are (features, N) slabs stacked
# along a leading time axis, so every gate block is contiguous and most
# updates run in place.


def _sigmoid_(a):
    a *= 0.5
    np.tanh(a, out=a)
    a *= 0.5
    a += 0.5
    return a


def _forward(model: PredictorModel, X: np.ndarray, keep=True):
    """Run N windows (N x W x m, scaled). Returns predictions (N x m) and a cache."""
    N, W, m = X.shape
    h = model.h
    arr = model.cell.arrays
    Xt = np.ascontiguousarray(X.transpose(1, 2, 0))  # W x m x N
    H = np.zeros((W + 1, h, N))  # H[t] is the hidden state entering step t
    if model.kind == "LSTM":
        Wm = arr["W"]
        Wh = np.ascontiguousarray(Wm[:, :h])
        Z = np.matmul(Wm[:, h:], Xt)  # W x 4h x N
        Z += arr["b"][:, None]
        C = np.zeros((W + 1, h, N))
        TC = np.empty((W, h, N))
        for t in range(W):
            z = Z[t]
            z += Wh @ H[t]
            s = _sigmoid_(z[:3 * h])
            g = np.tanh(z[3 * h:], out=z[3 * h:])
            c = C[t + 1]
            np.multiply(s[:h], C[t], out=c)
            c += s[h:2 * h] * g
            tc = np.tanh(c, out=TC[t])
            np.multiply(s[2 * h:], tc, out=H[t + 1])
        acts = (Z, C, TC)
    else:
        U = arr["U"]
        A = np.matmul(arr["Wx"], Xt)  # W x 3h x N
        A += arr["b"][:, None]
        UH = np.empty((W, 3 * h, N))
        for t in range(W):
            hp = H[t]
            u = np.matmul(U, hp, out=UH[t])
            a = A[t]
            zr = a[:2 * h]
            zr += u[:2 * h]
            _sigmoid_(zr)
            cand = a[2 * h:]
            cand += zr[h:] * u[2 * h:]
            np.tanh(cand, out=cand)
            hn = H[t + 1]
            np.subtract(hp, cand, out=hn)
            hn *= zr[:h]
            hn += cand
        acts = (A, UH)
    pred = (model.V @ H[W]).T + model.c
    return pred, ((Xt, H, acts) if keep else None)


def _backward(model: PredictorModel, cache, dpred):
    Xt, H, acts = cache
    W, m, N = Xt.shape
    h = model.h
    arr = model.cell.arrays
    grads = {"V": dpred.T @ H[W].T, "c": dpred.sum(axis=0)}
    dh = model.V.T @ dpred.T  # h x N
    if model.kind == "LSTM":
        Z, C, TC = acts
        WhT = np.ascontiguousarray(arr["W"][:, :h].T)
        dW = np.zeros((4 * h, h + m))
        db = np.zeros(4 * h)
        dz = np.empty((4 * h, N))
        dc = np.zeros((h, N))
        buf = np.empty((h, N))
        hx = np.empty((h + m, N))
        for t in range(W - 1, -1, -1):
            s = Z[t][:3 * h]
            g = Z[t][3 * h:]
            tc = TC[t]
            np.multiply(tc, tc, out=buf)
            np.subtract(1.0, buf, out=buf)
            buf *= s[2 * h:]
            buf *= dh
            dc += buf
            np.multiply(dc, C[t], out=dz[:h])
            np.multiply(dc, g, out=dz[h:2 * h])
            np.multiply(dh, tc, out=dz[2 * h:3 * h])
            dz[:3 * h] *= s * (1.0 - s)
            np.multiply(g, g, out=buf)
            np.subtract(1.0, buf, out=buf)
            buf *= s[h:2 * h]
            np.multiply(dc, buf, out=dz[3 * h:])
            dc *= s[:h]
            hx[:h] = H[t]
            hx[h:] = Xt[t]
            dW += dz @ hx.T
            db += dz.sum(axis=1)
            dh = WhT @ dz
        grads["W"] = dW
        grads["b"] = db
    else:
        A, UH = acts
        U = arr["U"]
        UT = np.ascontiguousarray(U.T)
        dWx = np.zeros((3 * h, m))
        dU = np.zeros((3 * h, h))
        db = np.zeros(3 * h)
        da = np.empty((3 * h, N))
        du = np.empty((3 * h, N))
        for t in range(W - 1, -1, -1):
            zr = A[t][:2 * h]
            z, r = zr[:h], zr[h:]
            cand = A[t][2 * h:]
            u = UH[t]
            dcand = da[2 * h:]
            np.multiply(cand, cand, out=dcand)
            np.subtract(1.0, dcand, out=dcand)
            dcand *= dh
            dcand *= 1.0 - z
            np.subtract(H[t], cand, out=da[:h])
            da[:h] *= dh
            np.multiply(dcand, u[2 * h:], out=da[h:2 * h])
            da[:2 * h] *= zr * (1.0 - zr)
            du[:2 * h] = da[:2 * h]
            np.multiply(dcand, r, out=du[2 * h:])
            dWx += da @ Xt[t].T
            dU += du @ H[t].T
            db += da.sum(axis=1)
            dh = dh * z
            dh += UT @ du
        grads["Wx"] = dWx
        grads["U"] = dU
        grads["b"] = db
    return grads


def _check_windows(model, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1:] != (model.W, model.m):
        raise ShapeError(
            f"window shape {X.shape[-2:]} does not match model (W={model.W}, m={model.m})"
        )
    return X


def forward_window(model: PredictorModel, window) -> np.ndarray:
    """Prediction (scaled) for one W x m window, or for an N x W x m stack."""
    X = np.asarray(window, dtype=np.float64)
    single = X.ndim == 2
    X = _check_windows(model, X)
    pred, _ = _forward(model, X, keep=False)
    return pred[0] if single else pred


def loss_and_grads(model: PredictorModel, X, Y):
    """Mean squared error over windows and channels, with its gradient."""
    X = _check_windows(model, X)
    Y = np.asarray(Y, dtype=np.float64).reshape(X.shape[0], model.m)
    pred, cache = _forward(model, X)
    diff = pred - Y
    loss = float(np.mean(diff * diff))
    grads = _backward(model, cache, 2.0 * diff / diff.size)
    return loss, grads


def window_loss(model: PredictorModel, X, Y) -> float:
    X = _check_windows(model, X)
    pred, _ = _forward(model, X, keep=False)
    diff = pred - np.asarray(Y, dtype=np.float64).reshape(pred.shape)
    return float(np.mean(diff * diff))


def numeric_grads(model: PredictorModel, X, Y, eps=1e-5) -> dict:
    """Central finite differences of the window MSE for every parameter."""
    probe = model.copy()
    out = {}
    for name, arr in probe.arrays().items():
        flat = arr.reshape(-1)
        g = np.empty(flat.size)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            lp = window_loss(probe, X, Y)
            flat[k] = orig - eps
            lm = window_loss(probe, X, Y)
            flat[k] = orig
            g[k] = (lp - lm) / (2.0 * eps)
        out[name] = g.reshape(arr.shape)
    return out


def grad_check(model: PredictorModel, window, target, eps=1e-5) -> float:
    """Max relative deviation between BPTT and central-difference gradients.

    Deviation per tensor is ||analytic - numeric|| / max(||analytic||, ||numeric||),
    with a 1e-8 floor on the denominator for tensors whose gradient vanishes.
    """
    if model.h > 16:
        raise ShapeError("grad_check is meant for small models (h <= 16)")
    X = _check_windows(model, window)
    Y = np.asarray(target, dtype=np.float64).reshape(X.shape[0], model.m)
    _, analytic = loss_and_grads(model, X, Y)
    numeric = numeric_grads(model, X, Y, eps)
    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-8)
        worst = max(worst, float(np.linalg.norm(a - n) / denom))
    return worst


# training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    lr: float = 1e-3
    batch_size: int = 64
    clip_norm: float = 5.0
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    min_improvement: float = 1e-5

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr > 0:
            raise ValueError("learning rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if not self.clip_norm > 0:
            raise ValueError("clip norm must be > 0")


class Adam:
    def __init__(self, params: dict, cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict):
        cfg = self.cfg
        self.t += 1
        b1, b2 = cfg.beta1, cfg.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] *= b1
            self.m[k] += (1.0 - b1) * g
            self.v[k] *= b2
            self.v[k] += (1.0 - b2) * g * g
            p -= cfg.lr * (self.m[k] / corr1) / (np.sqrt(self.v[k] / corr2) + cfg.adam_eps)


def clip_grads(grads: dict, max_norm: float) -> float:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if norm > max_norm:
        s = max_norm / norm
        for g in grads.values():
            g *= s
    return norm


def _stack_corpus(scaled, W):
    """Concatenate scaled traces (T_total x m) and list every window start."""
    data = np.concatenate([s.values.T for s in scaled], axis=0)
    starts, off = [], 0
    for s in scaled:
        starts.append(off + np.arange(s.T - W))
        off += s.T
    return np.ascontiguousarray(data), np.concatenate(starts)


@dataclass
class TrainResult:
    model: PredictorModel
    curve: list  # validation error per epoch


def train(kind, data, W, h, cfg: TrainConfig = TrainConfig(), scaler: Scaler | None = None,
          progress=None) -> TrainResult:
    """Fit a next-step predictor on benign raw traces.

    Each epoch visits every window once in a seeded shuffled order. The epoch's
    validation error is the mean per-prediction MSE of each batch measured just
    before that batch's update, so every window serves as validation data.
    """
    kind = normalize_kind(kind)
    data = list(data)
    if not data:
        raise TraceError("no training traces")
    for tr in data:
        if tr.T < W + 1:
            raise TraceError(
                f"trace {tr.source_id!r} has T={tr.T}, need at least W+1={W + 1}"
            )
    scaler = scaler or fit_scaler(data)
    scaled = [scale(tr, scaler) for tr in data]
    corpus, starts = _stack_corpus(scaled, W)
    m = corpus.shape[1]

    model = init_model(kind, m, h, W, scaler, seed=cfg.seed)
    params = model.arrays()
    opt = Adam(params, cfg)
    rng = np.random.default_rng(cfg.seed + 1)
    offsets = np.arange(W)
    n = starts.size
    curve = []
    for epoch in range(1, cfg.epochs + 1):
        order = starts[rng.permutation(n)]
        total = 0.0
        for bi, lo in enumerate(range(0, n, cfg.batch_size)):
            idx = order[lo:lo + cfg.batch_size]
            X = corpus[idx[:, None] + offsets]
            Y = corpus[idx + W]
            loss, grads = loss_and_grads(model, X, Y)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}")
            clip_grads(grads, cfg.clip_norm)
            opt.step(grads)
            total += loss * idx.size
        err = total / n
        curve.append(err)
        log.info("epoch %d validation error %.6g", epoch, err)
        if progress is not None:
            progress(epoch, err)
        if len(curve) > 1 and curve[-2] - curve[-1] < cfg.min_improvement:
            break
    model.meta = {
        "epochs_run": len(curve),
        "val_error": curve[-1],
        "seed": cfg.seed,
    }
    return TrainResult(model.freeze(), curve)


def predict_scaled(model: PredictorModel, scaled_values: np.ndarray, chunk=1024) -> np.ndarray:
    """Predictions for every window of an m x T scaled array; (T-W) x m."""
    view = window_view(scaled_values, model.W)
    out = np.empty((view.shape[0], model.m))
    for lo in range(0, view.shape[0], chunk):
        out[lo:lo + chunk], _ = _forward(model, np.ascontiguousarray(view[lo:lo + chunk]), keep=False)
    return out


def predict_stream(model: PredictorModel, trace) -> np.ndarray:
    """Raw-unit predictions, shape (T-W) x m; row k estimates trace offset W+k."""
    if trace.m != model.m or (model.channel_names and trace.channel_names != model.channel_names):
        raise TraceError(
            f"channel mismatch: trace {trace.channel_names} vs model {model.channel_names}"
        )
    if trace.T < model.W + 1:
        raise TraceError(f"trace length {trace.T} too short for window {model.W}")
    s = scale(trace, model.scaler)
    pred = predict_scaled(model, s.values)
    return model.scaler.inverse(pred)


def evaluate_mse(model: PredictorModel, traces) -> float:
    """Mean scaled next-step MSE over every window of ``traces``."""
    total, count = 0.0, 0
    for tr in traces:
        s = scale(tr, model.scaler).values
        pred = predict_scaled(model, s)
        d = pred - s[:, model.W:].T
        total += float(np.sum(d * d))
        count += d.size
    if count == 0:
        raise TraceError("no windows to evaluate")
    return total / count
