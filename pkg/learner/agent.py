"""
The GMA agent: encoder, actor, twin critics, targets and temperature with
the meta-training and fine-tuning update steps.

One ``update`` call is one gradient step of every component:
critics and encoder from the summed encoder loss, then the actor, then the
temperature, then the target soft update. ``finetune_update`` does the same
with the encoder frozen. Without an encoder the agent is plain SAC with a
zero-width task representation.
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import autograd as ag
from .autograd import GradientTape, ParamStore, adam_step, soft_update
from .checkpoint import load_checkpoint, save_checkpoint
from .config import LearnerConfig
from .encoder import ContextBatch, EncoderSpec, MoeEncoder, kl_to_prior, prior_sample
from .networks import child_seeds
from .sac import PolicyOutput, SacNetworks, TransitionBatch, act, actor_loss, critic_loss, encoder_loss, temperature_loss


logger = logging.getLogger(__name__)

TaskBatch = Tuple[Optional[ContextBatch], TransitionBatch]


class GmaAgent:
    def __init__(
        self,
        state_dim: int,
        context_dim: int,
        config: Optional[LearnerConfig] = None,
        seed: int = 0,
        use_encoder: bool = True,
    ):
        self.config = config or LearnerConfig()
        self.state_dim = state_dim
        self.context_dim = context_dim
        self.use_encoder = use_encoder
        self.seed = seed

        cfg = self.config
        seeds = child_seeds(seed, 3)
        latent_dim = cfg.latent_dim if use_encoder else 0
        self.encoder: Optional[MoeEncoder] = None
        if use_encoder:
            spec = EncoderSpec(context_dim, cfg.latent_dim, cfg.num_experts, cfg.hidden_size, cfg.var_floor)
            self.encoder = MoeEncoder(spec, seed=seeds[0])
        self.nets = SacNetworks.build(
            state_dim,
            latent_dim,
            hidden_size=cfg.hidden_size,
            seed=seeds[1],
            initial_alpha=cfg.initial_alpha,
            target_entropy=cfg.target_entropy,
        )
        self.rng = np.random.default_rng(seeds[2])

    @property
    def latent_dim(self) -> int:
        return self.config.latent_dim if self.use_encoder else 0

    # ----- acting -----

    def sample_latent(self, context: Optional[ContextBatch] = None, deterministic: bool = False) -> np.ndarray:
        """``z ~ q(z|c)``, or the prior when the context is empty."""
        if self.encoder is None:
            return np.zeros(0)
        if context is None or len(context) == 0:
            return prior_sample(self.latent_dim, self.rng, deterministic)
        mixture, _ = self.encoder.infer(context, self.rng, deterministic=deterministic)
        return mixture.z.value.copy()

    def infer(self, context: ContextBatch, deterministic: bool = False) -> Tuple[np.ndarray, np.ndarray]:
        """Latent sample and gate weights, as exported for visualisation."""
        if self.encoder is None:
            return np.zeros(0), np.ones(1)
        mixture, _ = self.encoder.infer(context, self.rng, deterministic=deterministic)
        return mixture.z.value.copy(), mixture.weights.value.copy()

    def act(self, state: np.ndarray, z: np.ndarray, deterministic: bool = False) -> PolicyOutput:
        return act(state, z, self.nets, self.rng, deterministic)

    # ----- optimisation -----

    def _adam(self, store: ParamStore) -> None:
        cfg = self.config
        adam_step(store, lr=cfg.lr, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, eps=cfg.adam_eps)

    def update(self, task_batches: Sequence[TaskBatch]) -> Dict[str, float]:
        """One meta-training gradient step over all tasks; returns loss values."""
        if not task_batches:
            return {}
        cfg = self.config
        alpha = self.nets.alpha

        stores = [self.nets.critic1, self.nets.critic2]
        if self.encoder is not None:
            stores.append(self.encoder.params)
        for store in stores:
            store.zero_grad()

        tape = GradientTape()
        q1_total = ag.as_variable(0.0)
        q2_total = ag.as_variable(0.0)
        kl_total = ag.as_variable(0.0)
        latents: List[np.ndarray] = []
        for context, batch in task_batches:
            if self.encoder is not None:
                mixture, posteriors = self.encoder.infer(context, self.rng, tape)
                z = mixture.z
                kl_total = kl_total + kl_to_prior(posteriors)
            else:
                z = ag.as_variable(np.zeros(0))
            j1, j2 = critic_loss(batch, z, self.nets, alpha, cfg.gamma, self.rng, tape)
            q1_total = q1_total + j1
            q2_total = q2_total + j2
            latents.append(z.value.copy())

        total = encoder_loss(q1_total, q2_total, kl_total, cfg.kl_weight)
        for name, term in (("critic1 loss", q1_total), ("critic2 loss", q2_total), ("KL term", kl_total)):
            ag.check_finite(name, term)
        tape.backward(total)
        for store in stores:
            self._adam(store)

        losses = {
            "critic1": q1_total.item(),
            "critic2": q2_total.item(),
            "kl": kl_total.item(),
            "encoder": total.item(),
        }
        losses.update(self._policy_step([batch for _, batch in task_batches], latents))
        return losses

    def finetune_update(self, context: Optional[ContextBatch], batch: TransitionBatch) -> Dict[str, float]:
        """One adaptation step on a single task; the encoder is not touched."""
        cfg = self.config
        z = self.sample_latent(context)

        self.nets.critic1.zero_grad()
        self.nets.critic2.zero_grad()
        tape = GradientTape()
        j1, j2 = critic_loss(batch, ag.constant(z), self.nets, self.nets.alpha, cfg.gamma, self.rng, tape)
        total = j1 + j2
        ag.check_finite("critic loss", total)
        tape.backward(total)
        self._adam(self.nets.critic1)
        self._adam(self.nets.critic2)

        losses = {"critic1": j1.item(), "critic2": j2.item()}
        losses.update(self._policy_step([batch], [z]))
        return losses

    def _policy_step(self, batches: Sequence[TransitionBatch], latents: Sequence[np.ndarray]) -> Dict[str, float]:
        alpha = self.nets.alpha

        self.nets.actor.zero_grad()
        tape = GradientTape()
        actor_total = ag.as_variable(0.0)
        log_probs = []
        for batch, z in zip(batches, latents):
            loss, log_prob = actor_loss(batch, z, self.nets, alpha, self.rng, tape)
            actor_total = actor_total + loss
            log_probs.append(log_prob)
        ag.check_finite("actor loss", actor_total)
        tape.backward(actor_total)
        self._adam(self.nets.actor)

        self.nets.log_alpha.zero_grad()
        tape = GradientTape()
        temp_total = ag.as_variable(0.0)
        for log_prob in log_probs:
            temp_total = temp_total + temperature_loss(log_prob, self.nets, tape)
        ag.check_finite("temperature loss", temp_total)
        tape.backward(temp_total)
        self._adam(self.nets.log_alpha)

        soft_update(self.nets.target1, self.nets.critic1, self.config.eta)
        soft_update(self.nets.target2, self.nets.critic2, self.config.eta)

        logger.debug(f"actor={actor_total.item():.5f} temperature={temp_total.item():.5f} alpha={self.nets.alpha:.4f}")
        return {"actor": actor_total.item(), "temperature": temp_total.item(), "alpha": self.nets.alpha}

    def reset_temperature(self) -> None:
        self.nets.reset_temperature(self.config.initial_alpha)

    # ----- persistence -----

    def stores(self) -> Dict[str, ParamStore]:
        stores = dict(self.nets.stores())
        if self.encoder is not None:
            stores["encoder"] = self.encoder.params
        return stores

    def encoder_fingerprint(self) -> Optional[str]:
        return self.encoder.params.fingerprint() if self.encoder is not None else None

    def metadata(self) -> Dict[str, Any]:
        return {
            "state_dim": self.state_dim,
            "context_dim": self.context_dim,
            "use_encoder": self.use_encoder,
            "seed": self.seed,
            "config": self.config.to_dict(),
        }

    def save(self, directory: Union[str, Path], extra: Optional[Dict[str, Any]] = None) -> Path:
        metadata = self.metadata()
        metadata.update(extra or {})
        return save_checkpoint(directory, self.stores(), metadata)

    @classmethod
    def load(cls, directory: Union[str, Path], seed: Optional[int] = None) -> "GmaAgent":
        """Restore every store; ``seed`` reseeds the acting/sampling stream."""
        stores, meta = load_checkpoint(directory)
        agent = cls(
            state_dim=meta["state_dim"],
            context_dim=meta["context_dim"],
            config=LearnerConfig.from_dict(meta["config"]),
            seed=meta["seed"] if seed is None else seed,
            use_encoder=meta["use_encoder"],
        )
        for name, store in agent.nets.stores().items():
            store.check_compatible(stores[name])
        agent.nets.actor = stores["actor"]
        agent.nets.critic1 = stores["critic1"]
        agent.nets.critic2 = stores["critic2"]
        agent.nets.target1 = stores["target1"]
        agent.nets.target2 = stores["target2"]
        agent.nets.log_alpha = stores["log_alpha"]
        if agent.encoder is not None:
            agent.encoder.params.check_compatible(stores["encoder"])
            agent.encoder.params = stores["encoder"]
        return agent
