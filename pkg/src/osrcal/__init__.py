"""Post-hoc calibration and open-set recognition evaluation toolkit."""

from osrcal.calibration import TemperatureFit, apply_temperature, fit_temperature, nll
from osrcal.errors import (
    FitError,
    FormatError,
    InvalidArgumentError,
    StateError,
    ToolkitError,
    ValidationError,
)
from osrcal.metrics import (
    ReliabilityTable,
    accuracy_closed,
    accuracy_osr,
    brier_closed,
    brier_osr,
    ece,
    extend_osr,
    unknown_probability,
)
from osrcal.openset import (
    OpenMaxModel,
    ThresholdRule,
    WeibullTailModel,
    choose_threshold,
    fit_openmax,
    fit_weibull_tail,
    openmax_predict,
    openmax_recalibrate,
    threshold_predict,
    weibull_cdf,
)
from osrcal.pipeline import evaluate_run
from osrcal.protocol import SplitSpec, aggregate_runs, generate_split, remap_labels
from osrcal.synth import SynthConfig, SynthData, synth_generate
from osrcal.tensor import argmax_row, logsumexp, softmax

__version__ = "0.1.0"
