"""Differentially private two-party vertical federated learning for
generalized linear models.

An active party (features and labels) and a passive party (features only)
train a joint linear model by exchanging Gaussian-perturbed intermediate
results. Noise scales come from closed-form sensitivities of the whole
sequence of exchanged values.
"""
from .errors import (DivergenceError, HdpVflError, InputError, ProtocolError,
                     TransportError)
from .glm import LossSpec, PenaltySpec, apply_penalty, make_loss, make_penalty
from .privacy import NO_PRIVACY, Hyperparams, noise_scales
from .protocol import ActiveParty, PassiveParty, TrainedModel, centralized_sgd, run_training

__all__ = [
    "ActiveParty", "DivergenceError", "HdpVflError", "Hyperparams", "InputError",
    "LossSpec", "NO_PRIVACY", "PassiveParty", "PenaltySpec", "ProtocolError",
    "TrainedModel", "TransportError", "apply_penalty", "centralized_sgd", "make_loss",
    "make_penalty", "noise_scales", "run_training",
]
__version__ = "0.1.0"
