"""
Latent-conditioned soft actor-critic.

The actor maps ``[s, z]`` through one hidden layer and a residual block to
the mean and log-std of a Gaussian; the continuous action is its tanh and
the channel action is 1 iff the continuous action is non-negative. Twin
critics score ``[s, action, z]``. Stored binary actions enter the critics
as ``2a - 1``; the actor loss feeds them the continuous action instead.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from channel.environment import Transition

from . import autograd as ag
from .autograd import GradientTape, ParamStore, Variable, VariableLike
from .exceptions import EmptyBatchError
from .networks import DEFAULT_HIDDEN, NetSpec, child_seeds, forward, init_params


logger = logging.getLogger(__name__)

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
LOG_2 = np.log(2.0)


@dataclass
class TransitionBatch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray

    @classmethod
    def from_transitions(cls, transitions: Sequence[Transition]) -> "TransitionBatch":
        if not transitions:
            raise EmptyBatchError("Cannot build a batch from zero transitions")
        return cls(
            states=np.stack([t.s for t in transitions]),
            actions=np.array([t.a for t in transitions], dtype=np.int64),
            rewards=np.array([t.r for t in transitions], dtype=np.float64),
            next_states=np.stack([t.s_next for t in transitions]),
        )

    def __len__(self) -> int:
        return len(self.actions)


@dataclass
class PolicyOutput:
    mean: Variable
    log_std: Variable
    squashed: Variable
    log_prob: Variable
    action: np.ndarray


def binary_action_input(actions: np.ndarray) -> np.ndarray:
    """Column of ``2a - 1`` as consumed by the critics."""
    return (2.0 * np.asarray(actions, dtype=np.float64) - 1.0).reshape(-1, 1)


def with_latent(states: VariableLike, z: VariableLike) -> Variable:
    """Append ``z`` to every row of ``states``."""
    states, z = ag.as_variable(states), ag.as_variable(z)
    if z.size == 0:
        return states
    rows = states.shape[0]
    return ag.concat([states, ag.broadcast_to(ag.reshape(z, (1, z.size)), (rows, z.size))], axis=1)


@dataclass
class SacNetworks:
    """Actor, online and target critics and the log-temperature."""

    actor_spec: NetSpec
    critic_spec: NetSpec
    actor: ParamStore
    critic1: ParamStore
    critic2: ParamStore
    target1: ParamStore
    target2: ParamStore
    log_alpha: ParamStore
    target_entropy: float = -1.0

    @classmethod
    def build(
        cls,
        state_dim: int,
        latent_dim: int,
        hidden_size: int = DEFAULT_HIDDEN,
        seed: int = 0,
        initial_alpha: float = 0.2,
        target_entropy: float = -1.0,
    ) -> "SacNetworks":
        actor_spec = NetSpec(state_dim + latent_dim, (hidden_size,), 2, residual_blocks=1)
        critic_spec = NetSpec(state_dim + 1 + latent_dim, (hidden_size, hidden_size), 1)
        seeds = child_seeds(seed, 3)
        critic1 = init_params(critic_spec, seeds[1])
        critic2 = init_params(critic_spec, seeds[2])
        return cls(
            actor_spec=actor_spec,
            critic_spec=critic_spec,
            actor=init_params(actor_spec, seeds[0]),
            critic1=critic1,
            critic2=critic2,
            target1=ParamStore(critic1.params),
            target2=ParamStore(critic2.params),
            log_alpha=ParamStore({"log_alpha": np.array([np.log(initial_alpha)])}),
            target_entropy=target_entropy,
        )

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha["log_alpha"][0]))

    def reset_temperature(self, initial_alpha: float) -> None:
        self.log_alpha = ParamStore({"log_alpha": np.array([np.log(initial_alpha)])})

    def stores(self) -> Dict[str, ParamStore]:
        return {
            "actor": self.actor,
            "critic1": self.critic1,
            "critic2": self.critic2,
            "target1": self.target1,
            "target2": self.target2,
            "log_alpha": self.log_alpha,
        }


def policy_forward(
    nets: SacNetworks,
    states: VariableLike,
    z: VariableLike,
    tape: Optional[GradientTape] = None,
) -> Tuple[Variable, Variable]:
    out = forward(nets.actor_spec, nets.actor, with_latent(states, z), tape)
    ag.check_finite("actor output", out)
    return out[:, 0:1], ag.clip(out[:, 1:2], LOG_STD_MIN, LOG_STD_MAX)


def tanh_normal_log_prob(pre_tanh: Variable, log_std: Variable, noise: np.ndarray) -> Variable:
    """
    Log-density of ``tanh(mean + std * noise)``. The squashing correction
    ``ln(1 - tanh(u)^2)`` is evaluated as ``2 (ln 2 - u - softplus(-2u))``.
    """
    gaussian = -0.5 * noise ** 2 - log_std - LOG_SQRT_2PI
    correction = 2.0 * (LOG_2 - pre_tanh - ag.softplus(-2.0 * pre_tanh))
    return gaussian - correction


def sample_policy(
    nets: SacNetworks,
    states: VariableLike,
    z: VariableLike,
    rng: Optional[np.random.Generator] = None,
    tape: Optional[GradientTape] = None,
    deterministic: bool = False,
    noise: Optional[np.ndarray] = None,
) -> PolicyOutput:
    mean, log_std = policy_forward(nets, states, z, tape)
    if noise is None:
        noise = np.zeros(mean.shape) if deterministic else rng.standard_normal(mean.shape)
    pre_tanh = mean + ag.exp(log_std) * noise
    squashed = ag.tanh(pre_tanh)
    return PolicyOutput(
        mean=mean,
        log_std=log_std,
        squashed=squashed,
        log_prob=tanh_normal_log_prob(pre_tanh, log_std, noise),
        action=(squashed.value >= 0.0).astype(np.int64).reshape(-1),
    )


def act(
    state: np.ndarray,
    z: np.ndarray,
    nets: SacNetworks,
    rng: Optional[np.random.Generator] = None,
    deterministic: bool = False,
) -> PolicyOutput:
    """Single-state policy query; ``output.action[0]`` is the channel action."""
    return sample_policy(nets, np.asarray(state).reshape(1, -1), z, rng, deterministic=deterministic)


def q_value(
    spec: NetSpec,
    store: ParamStore,
    states: VariableLike,
    action_input: VariableLike,
    z: VariableLike,
    tape: Optional[GradientTape] = None,
) -> Variable:
    inputs = with_latent(ag.concat([ag.as_variable(states), ag.as_variable(action_input)], axis=1), z)
    return forward(spec, store, inputs, tape)


def critic_target(
    rewards: np.ndarray,
    next_states: np.ndarray,
    z: VariableLike,
    nets: SacNetworks,
    alpha: float,
    gamma: float,
    rng: Optional[np.random.Generator] = None,
    noise: Optional[np.ndarray] = None,
) -> np.ndarray:
    """``y = r + gamma * (min_i Qhat_i(s', a', z) - alpha * log pi(a'|s', z))``."""
    z = ag.constant(z)
    nxt = sample_policy(nets, next_states, z, rng, noise=noise)
    action_input = binary_action_input(nxt.action)
    q1 = q_value(nets.critic_spec, nets.target1, next_states, action_input, z).value
    q2 = q_value(nets.critic_spec, nets.target2, next_states, action_input, z).value
    soft_value = np.minimum(q1, q2) - alpha * nxt.log_prob.value
    return np.asarray(rewards, dtype=np.float64).reshape(-1, 1) + gamma * soft_value


def critic_loss(
    batch: TransitionBatch,
    z: VariableLike,
    nets: SacNetworks,
    alpha: float,
    gamma: float,
    rng: Optional[np.random.Generator] = None,
    tape: Optional[GradientTape] = None,
    targets: Optional[np.ndarray] = None,
) -> Tuple[Variable, Variable]:
    """
    Mean squared soft Bellman errors of both critics against one shared
    target. Gradients reach the encoder when ``z`` lives on ``tape``.
    """
    if len(batch) == 0:
        raise EmptyBatchError("Critic loss needs a non-empty batch")
    if targets is None:
        targets = critic_target(batch.rewards, batch.next_states, z, nets, alpha, gamma, rng)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 1)
    action_input = binary_action_input(batch.actions)
    losses = []
    for store in (nets.critic1, nets.critic2):
        q = q_value(nets.critic_spec, store, batch.states, action_input, z, tape)
        losses.append(ag.reduce_mean(ag.square(q - targets)))
    return losses[0], losses[1]


def actor_loss(
    batch: TransitionBatch,
    z: VariableLike,
    nets: SacNetworks,
    alpha: float,
    rng: Optional[np.random.Generator] = None,
    tape: Optional[GradientTape] = None,
    noise: Optional[np.ndarray] = None,
) -> Tuple[Variable, np.ndarray]:
    """
    ``mean(alpha * log pi - min_i Q_i)`` over fresh reparameterised samples.
    ``z`` and the critics are constants here. Also returns the log-probs for
    the temperature loss.
    """
    if len(batch) == 0:
        raise EmptyBatchError("Actor loss needs a non-empty batch")
    z = ag.constant(z)
    out = sample_policy(nets, batch.states, z, rng, tape, noise=noise)
    q1 = q_value(nets.critic_spec, nets.critic1, batch.states, out.squashed, z)
    q2 = q_value(nets.critic_spec, nets.critic2, batch.states, out.squashed, z)
    loss = ag.reduce_mean(alpha * out.log_prob - ag.minimum(q1, q2))
    return loss, out.log_prob.value


def temperature_loss(
    log_probs: np.ndarray,
    nets: SacNetworks,
    tape: Optional[GradientTape] = None,
) -> Variable:
    """``mean(-alpha * log pi - alpha * H)``, differentiated in ``log alpha``."""
    alpha = ag.exp(ag.param(nets.log_alpha, "log_alpha", tape))
    return ag.reduce_mean(-alpha * (np.asarray(log_probs) + nets.target_entropy))


def encoder_loss(critic1_loss: VariableLike, critic2_loss: VariableLike, kl: VariableLike, beta: float) -> Variable:
    return ag.as_variable(critic1_loss) + critic2_loss + beta * ag.as_variable(kl)
