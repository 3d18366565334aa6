"""Deep streaming linear discriminant analysis and a streaming benchmark harness."""

from .baselines import (
    ExStreamLearner,
    FineTuneLearner,
    NcmLearner,
    PrototypeBuffer,
    SgdConfig,
    SoftmaxReadout,
    ncm_predict,
    offline_softmax_fit,
)
from .dataio import FeatureBank, SynthSpec, WithinClassCov, bank_read, bank_write, synth_bank
from .evaluation import efficiency_scores, omega_all, run_streaming_eval, topk_accuracy
from .numerics import ShrinkageConfig, oas_covariance, shrinkage_precision, spd_solve
from .orderings import Classes, OrderingKind, Samples, StreamPlan, make_plan, validate_plan
from .slda import CovInit, Mode, SldaModel

__version__ = "0.1.0"
