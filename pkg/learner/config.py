"""
Learner Configuration.

Network sizes and optimisation hyperparameters of the meta-learning agent.
"""

import os
from dataclasses import asdict, dataclass
from typing import Any, Dict


def _env_float(name: str, default: float) -> float:
    return float(os.getenv(name, str(default)))


def _env_int(name: str, default: int) -> int:
    return int(os.getenv(name, str(default)))


@dataclass
class LearnerConfig:
    """Encoder, actor, critic and optimiser settings."""

    # Encoder
    latent_dim: int = 6
    num_experts: int = 3
    var_floor: float = 1e-6
    kl_weight: float = 1.0  # beta

    # Networks
    hidden_size: int = 64

    # Optimisation
    lr: float = 0.003
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    gamma: float = 0.9
    eta: float = 0.005  # soft update rate

    # Temperature
    initial_alpha: float = 0.2
    target_entropy: float = -1.0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LearnerConfig":
        return cls(**data)

    @classmethod
    def from_env(cls) -> "LearnerConfig":
        """Create config from ``GMA_*`` environment variables."""
        return cls(
            latent_dim=_env_int("GMA_LATENT_DIM", 6),
            num_experts=_env_int("GMA_NUM_EXPERTS", 3),
            kl_weight=_env_float("GMA_KL_WEIGHT", 1.0),
            hidden_size=_env_int("GMA_HIDDEN_SIZE", 64),
            lr=_env_float("GMA_LR", 0.003),
            gamma=_env_float("GMA_GAMMA", 0.9),
            eta=_env_float("GMA_ETA", 0.005),
            initial_alpha=_env_float("GMA_INITIAL_ALPHA", 0.2),
        )
