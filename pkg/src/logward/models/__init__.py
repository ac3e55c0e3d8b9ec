from .base import ShapeError, bce_from_logits, relu, sigmoid
from .bundle import Anchor, BundleError, ModelBundle, load_bundle, save_bundle
from .gcn import Gcn, a_hat_from_edges, star_a_hat
from .mlp import Mlp
from .training import (
    TrainConfig,
    TrainingError,
    class_weight_vector,
    gradient_check,
    train,
)

__all__ = [
    "Anchor",
    "BundleError",
    "Gcn",
    "Mlp",
    "ModelBundle",
    "ShapeError",
    "TrainConfig",
    "TrainingError",
    "a_hat_from_edges",
    "bce_from_logits",
    "class_weight_vector",
    "gradient_check",
    "load_bundle",
    "relu",
    "save_bundle",
    "sigmoid",
    "star_a_hat",
    "train",
]
