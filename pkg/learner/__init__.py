"""
Learner Package.

Reverse-mode differentiation core, the MoE context encoder and the
latent-conditioned soft actor-critic that together form the GMA agent.
"""

from .config import LearnerConfig
from .exceptions import (
    ShapeMismatchError,
    TapeUsageError,
    NonFiniteError,
    CheckpointError,
    EmptyBatchError,
)
from .autograd import (
    Variable,
    GradientTape,
    ParamStore,
    adam_step,
    soft_update,
    gradcheck,
)
from .networks import NetSpec, forward, init_params
from .checkpoint import save_checkpoint, load_checkpoint
from .encoder import (
    ContextBatch,
    GaussianFactor,
    ExpertPosterior,
    MixtureRepresentation,
    EncoderSpec,
    MoeEncoder,
    product_of_gaussians,
    sample_mixture,
    prior_sample,
    kl_to_prior,
)
from .sac import (
    TransitionBatch,
    PolicyOutput,
    SacNetworks,
    act,
    critic_target,
    critic_loss,
    actor_loss,
    temperature_loss,
    encoder_loss,
)
from .agent import GmaAgent


__all__ = [
    # Config
    "LearnerConfig",

    # Exceptions
    "ShapeMismatchError",
    "TapeUsageError",
    "NonFiniteError",
    "CheckpointError",
    "EmptyBatchError",

    # Autograd
    "Variable",
    "GradientTape",
    "ParamStore",
    "adam_step",
    "soft_update",
    "gradcheck",
    "NetSpec",
    "forward",
    "init_params",
    "save_checkpoint",
    "load_checkpoint",

    # Encoder
    "ContextBatch",
    "GaussianFactor",
    "ExpertPosterior",
    "MixtureRepresentation",
    "EncoderSpec",
    "MoeEncoder",
    "product_of_gaussians",
    "sample_mixture",
    "prior_sample",
    "kl_to_prior",

    # Soft actor-critic
    "TransitionBatch",
    "PolicyOutput",
    "SacNetworks",
    "act",
    "critic_target",
    "critic_loss",
    "actor_loss",
    "temperature_loss",
    "encoder_loss",
    "GmaAgent",
]
