"""Inference-time stochastic attention with Bayesian-optimized concentration.

Softmax attention rows ``pi`` are replaced at test time by normalized
multinomial counts ``Multinomial(nu, pi) / nu``; repeated passes give a
predictive ensemble whose spread is tuned by the single integer ``nu``.
"""

from .attention import (sample_stochastic_weights, softmax_weights, stochastic_output,
                        stochastic_output_covariance, stochastic_weight_covariance)
from .backbone import (EncoderConfig, InputCase, ModelBundle, fit_readout, forward_deterministic,
                       forward_stochastic, forward_stochastic_passes, init_encoder, load_model,
                       save_model, with_stochastic_layers)
from .bayesopt import SearchDomain, calibrate_nu, suggest_next
from .calibration import CalibrationBatch, CalibrationRecord, eval_loss
from .ensemble import PredictiveEnsemble, draw_ensemble
from .kernels import BACKEND
from .metrics import MetricReport, crps_decomposed, energy_score, pit, temperature_scale, w1_to_uniform
from .rng import Stream

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "CalibrationBatch", "CalibrationRecord", "EncoderConfig", "InputCase", "MetricReport",
    "ModelBundle", "PredictiveEnsemble", "SearchDomain", "Stream", "calibrate_nu", "crps_decomposed",
    "draw_ensemble", "energy_score", "eval_loss", "fit_readout", "forward_deterministic",
    "forward_stochastic", "forward_stochastic_passes", "init_encoder", "load_model", "pit",
    "sample_stochastic_weights", "save_model", "softmax_weights", "stochastic_output",
    "stochastic_output_covariance", "stochastic_weight_covariance", "suggest_next",
    "temperature_scale", "w1_to_uniform", "with_stochastic_layers",
]
