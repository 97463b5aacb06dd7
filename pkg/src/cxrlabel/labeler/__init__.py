from .model import (Batch, EncoderConfig, ModelParams, Prediction, TrainConfig, clinical_text, encode,
                    focal_loss, init_params, make_batch, predict, predict_many, report_text)
from .rules import load_lexicon, rule_label
from .train import grad_check, train
from .vocab import Vocab

__all__ = [
    "Batch", "EncoderConfig", "ModelParams", "Prediction", "TrainConfig", "Vocab", "clinical_text",
    "encode", "focal_loss", "grad_check", "init_params", "load_lexicon", "make_batch", "predict",
    "predict_many", "report_text", "rule_label", "train",
]
