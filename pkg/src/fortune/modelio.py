"""Text container for trained predictors (``fortune-model v1``).

Layout::

    fortune-model v1
    cell=LSTM
    m=3
    h=64
    W=100
    channels=ICACHE.Miss,ICACHE.Hit,LLC_Miss
    scaler_min=<m values>
    scaler_max=<m values>
    meta.<key>=<value>          (zero or more)
    <name> <rows> <cols>        (one block per tensor, row-major)
    <row values ...>
    end
"""

from __future__ import annotations

import os

import numpy as np

from .rnn import LSTM_GATES, CellParams, PredictorModel, normalize_kind
from .trace import Scaler

MAGIC = "fortune-model v1"
HEADER_KEYS = ("cell", "m", "h", "W", "channels", "scaler_min", "scaler_max")


class ModelFormatError(ValueError):
    pass


def _num(v) -> str:
    return "%.17g" % v


def tensor_names(kind: str) -> list[str]:
    if kind == "LSTM":
        cell = [f"W_{g}" for g in LSTM_GATES] + [f"b_{g}" for g in LSTM_GATES]
    else:
        cell = ["W_z", "U_z", "W_r", "U_r", "W", "U", "b_z", "b_r", "b_h"]
    return cell + ["out_W", "out_b"]


def format_model(model: PredictorModel) -> str:
    lines = [
        MAGIC,
        f"cell={model.kind}",
        f"m={model.m}",
        f"h={model.h}",
        f"W={model.W}",
        "channels=" + ",".join(model.scaler.channel_names),
        "scaler_min=" + " ".join(_num(v) for v in model.scaler.min),
        "scaler_max=" + " ".join(_num(v) for v in model.scaler.max),
    ]
    for key in sorted(model.meta):
        val = model.meta[key]
        val = _num(val) if isinstance(val, float) else str(val)
        lines.append(f"meta.{key}={val}")
    tensors = dict(model.cell.named_tensors())
    tensors["out_W"] = model.V
    tensors["out_b"] = model.c
    for name in tensor_names(model.kind):
        a = np.atleast_2d(tensors[name])
        lines.append(f"{name} {a.shape[0]} {a.shape[1]}")
        lines.extend(" ".join(_num(v) for v in row) for row in a)
    lines.append("end")
    return "\n".join(lines) + "\n"


def save_model(model: PredictorModel, path) -> None:
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_model(model))
    os.replace(tmp, path)


def _parse_meta(val: str):
    for cast in (int, float):
        try:
            return cast(val)
        except ValueError:
            pass
    return val


def parse_model(text: str) -> PredictorModel:
    lines = text.splitlines()
    if not lines or lines[0].strip() != MAGIC:
        found = lines[0].strip() if lines else ""
        if found.startswith("fortune-model"):
            raise ModelFormatError(f"unsupported model version {found!r}, expected {MAGIC!r}")
        raise ModelFormatError("missing 'fortune-model v1' magic line")
    pos = 1
    header, meta = {}, {}
    while pos < len(lines) and "=" in lines[pos]:
        key, _, val = lines[pos].partition("=")
        if key.startswith("meta."):
            meta[key[5:]] = _parse_meta(val)
        else:
            header[key] = val
        pos += 1
    for key in HEADER_KEYS:
        if key not in header:
            raise ModelFormatError(f"missing header field {key!r}")
    try:
        kind = normalize_kind(header["cell"])
        m, h, W = int(header["m"]), int(header["h"]), int(header["W"])
        lo = np.array([float(v) for v in header["scaler_min"].split()])
        hi = np.array([float(v) for v in header["scaler_max"].split()])
    except ValueError as e:
        raise ModelFormatError(f"bad header value: {e}") from None
    names = tuple(n for n in header["channels"].split(",") if n)
    if lo.size != m or hi.size != m:
        raise ModelFormatError(f"scaler arrays must have m={m} entries")
    if names and len(names) != m:
        raise ModelFormatError(f"channels line lists {len(names)} names, m={m}")

    tensors = {}
    for name in tensor_names(kind):
        if pos >= len(lines) or lines[pos].strip() == "end":
            raise ModelFormatError(f"missing tensor {name!r}")
        parts = lines[pos].split()
        if len(parts) != 3 or parts[0] != name:
            raise ModelFormatError(f"expected tensor header for {name!r}, got {lines[pos]!r}")
        try:
            rows, cols = int(parts[1]), int(parts[2])
        except ValueError:
            raise ModelFormatError(f"bad dimensions for tensor {name!r}") from None
        pos += 1
        if pos + rows > len(lines):
            raise ModelFormatError(f"tensor {name!r} truncated: expected {rows} rows")
        data = []
        for r in range(rows):
            vals = lines[pos + r].split()
            if len(vals) != cols:
                raise ModelFormatError(
                    f"tensor {name!r} row {r} has {len(vals)} values, expected {cols}"
                )
            try:
                data.append([float(v) for v in vals])
            except ValueError:
                raise ModelFormatError(f"non-numeric value in tensor {name!r}") from None
        pos += rows
        tensors[name] = np.array(data, dtype=np.float64).reshape(rows, cols)
    if pos >= len(lines) or lines[pos].strip() != "end":
        raise ModelFormatError("missing 'end' marker")

    out_W = tensors.pop("out_W")
    out_b = tensors.pop("out_b").ravel()
    try:
        cell = CellParams.from_named(kind, m, h, tensors)
        return PredictorModel(kind, m, h, W, cell, out_W, out_b, Scaler(lo, hi, names), meta).freeze()
    except ValueError as e:
        raise ModelFormatError(f"inconsistent model dimensions: {e}") from None


def load_model(path) -> PredictorModel:
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise ModelFormatError(f"no such model file: {path}")
    with open(path, encoding="utf-8") as fh:
        return parse_model(fh.read())
