"""Time series anomaly detection via hypernetwork-predicted INRs.

A transformer encoder reads a window of observations and emits, in one
forward pass, the weights of a small implicit neural representation
decomposed into trend + seasonal + group-based residual components. The
window is reconstructed by evaluating that INR; reconstruction error is
the anomaly score, and a proportion-based threshold turns scores into
labels. Everything runs on a self-contained float64 autodiff engine.
"""

__version__ = "0.1.0"

from .datasets import SeriesBundle, SynthSpec, load_csv, synthesize, write_bundle  # noqa: F401
from .detection import (  # noqa: F401
    DetectionReport,
    anomaly_score,
    default_gamma,
    evaluate,
    point_adjust,
    prf1,
    render_report,
    roc_auc,
    threshold_by_proportion,
    vus_roc,
)
from .errors import (  # noqa: F401
    CheckpointError,
    ConfigError,
    DataError,
    EncoderError,
    NumericError,
)
from .pipeline import (  # noqa: F401
    TrainConfig,
    TrainedModel,
    load_checkpoint,
    reconstruct,
    save_checkpoint,
    score_series,
    train,
)
from .tensor import Tensor, no_grad  # noqa: F401
