"""Robust multi-view representation learning with sample-level attention fusion."""

from .autodiff import RngStream, Tensor, backward, grad_check, no_grad
from .contrastive import ContrastiveConfig, cosine_sim, rml_loss
from .data import MultiViewDataset, SynthSpec, load_dataset, make_blobs, normalize, save_dataset
from .fusion import FusionConfig, FusionModel, forward, init_model
from .optim import TrainConfig
from .perturbation import PerturbationConfig, noise_perturb, unusable_perturb
from .training import infer, regularizer_loss, train_self_supervised

__version__ = "0.1.0"
