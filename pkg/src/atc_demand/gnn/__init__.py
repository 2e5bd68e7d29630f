"""Graph-attention clearance predictor: model, loss, optimiser, training and checkpoints."""

from .checkpoint import load_checkpoint, load_ensemble, save_checkpoint, save_ensemble
from .loss import pinball_loss, total_loss
from .model import (QUANTILES, GraphBatch, ModelDims, ModelParams, attention_weights, backward, forward,
                    gatv2_layer_forward, init_params, model_forward)
from .optim import AdamWState, adamw_step
from .sampling import weighted_sampler
from .training import (CrossValidationResult, Ensemble, ModelCheckpoint, Prediction, TrainConfig,
                       cross_validate, ensemble_predict, fold_splits, train_fold)

__all__ = [
    "QUANTILES", "GraphBatch", "ModelDims", "ModelParams", "attention_weights", "backward", "forward",
    "gatv2_layer_forward", "init_params", "model_forward", "pinball_loss", "total_loss", "AdamWState",
    "adamw_step", "weighted_sampler", "CrossValidationResult", "Ensemble", "ModelCheckpoint", "Prediction",
    "TrainConfig", "cross_validate", "ensemble_predict", "fold_splits", "train_fold", "load_checkpoint",
    "load_ensemble", "save_checkpoint", "save_ensemble",
]
