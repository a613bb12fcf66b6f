"""Anomaly detection on hardware performance counter traces with recurrent
next-step predictors (LSTM and GRU) and prior-work baselines."""

__version__ = "0.1.0"

from .detector import DetectorConfig, ErrorStream, error_stream, flag_stream, sweep  # noqa: E402
from .rnn import PredictorModel, TrainConfig, train  # noqa: E402
from .trace import TraceMatrix, load_trace, make_windows, save_trace  # noqa: E402

__all__ = [
    "DetectorConfig", "ErrorStream", "PredictorModel", "TraceMatrix", "TrainConfig",
    "error_stream", "flag_stream", "load_trace", "make_windows", "save_trace", "sweep", "train",
]
