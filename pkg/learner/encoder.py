"""
Mixture-of-experts probabilistic context encoder.

Each context transition passes through a shared trunk MLP. Every expert
head turns the trunk feature into a diagonal Gaussian factor over the
latent task variable; an expert's posterior is the product of its factors
over the context. A softmax gate over the context-averaged logits mixes one
reparameterised sample per expert into the task representation ``z``.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from channel.environment import Transition
from channel.exceptions import MetricDomainError

from . import autograd as ag
from .autograd import GradientTape, ParamStore, Variable, VariableLike
from .exceptions import EmptyBatchError
from .networks import DEFAULT_HIDDEN, NetSpec, child_seeds, forward, init_params


logger = logging.getLogger(__name__)


class ContextBatch:
    """Up to U flattened ``[s, a, r, s']`` vectors of one task, oldest first."""

    def __init__(self, vectors: np.ndarray):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2:
            vectors = vectors.reshape(len(vectors), -1)
        self.vectors = vectors

    @classmethod
    def from_transitions(cls, transitions: Sequence[Transition], width: Optional[int] = None) -> "ContextBatch":
        if not transitions:
            return cls(np.zeros((0, width or 0)))
        return cls(np.stack([t.context_vector() for t in transitions]))

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def width(self) -> int:
        return self.vectors.shape[1]

    def permuted(self, rng: np.random.Generator) -> "ContextBatch":
        return ContextBatch(self.vectors[rng.permutation(len(self))])


@dataclass
class GaussianFactor:
    """Diagonal Gaussian; ``mean`` and ``variance`` share a shape."""

    mean: Variable
    variance: Variable


ExpertPosterior = GaussianFactor


@dataclass
class MixtureRepresentation:
    weights: Variable
    samples: List[Variable]
    z: Variable


@dataclass(frozen=True)
class EncoderSpec:
    context_dim: int
    latent_dim: int = 6
    num_experts: int = 3
    hidden_size: int = DEFAULT_HIDDEN
    var_floor: float = 1e-6

    @property
    def trunk(self) -> NetSpec:
        return NetSpec(self.context_dim, (self.hidden_size,), self.hidden_size)

    @property
    def gate(self) -> NetSpec:
        return NetSpec(self.hidden_size + self.context_dim, (), self.num_experts)

    @property
    def expert(self) -> NetSpec:
        return NetSpec(self.hidden_size, (), 2 * self.latent_dim)


def product_of_gaussians(means: VariableLike, variances: VariableLike) -> GaussianFactor:
    """
    Combine per-transition factors stacked along axis 0: precisions add and
    the mean is precision-weighted.
    """
    precisions = ag.reciprocal(variances)
    precision = ag.reduce_sum(precisions, axis=0)
    mean = ag.reduce_sum(precisions * means, axis=0) / precision
    return GaussianFactor(mean=mean, variance=ag.reciprocal(precision))


def kl_to_prior(posteriors: Sequence[GaussianFactor]) -> Variable:
    """Sum over experts of ``KL(N(mean, var) || N(0, I))``."""
    total = ag.as_variable(0.0)
    for posterior in posteriors:
        if np.any(posterior.variance.value <= 0):
            raise MetricDomainError("Posterior variance must be positive")
        var = posterior.variance
        total = total + 0.5 * ag.reduce_sum(ag.square(posterior.mean) + var - ag.log(var) - 1.0)
    return total


def sample_mixture(
    posteriors: Sequence[GaussianFactor],
    weights: VariableLike,
    rng: Optional[np.random.Generator] = None,
    deterministic: bool = False,
    noise: Optional[np.ndarray] = None,
) -> MixtureRepresentation:
    """
    ``z_m = mean_m + sqrt(var_m) * eps_m`` with an independent ``eps_m`` per
    expert, then ``z = sum_m w_m z_m``. ``noise`` (shape ``(M, d)``) fixes
    the draws; ``deterministic`` uses zero noise.
    """
    weights = ag.as_variable(weights)
    dim = posteriors[0].mean.shape[-1]
    if noise is None:
        if deterministic or dim == 0:
            noise = np.zeros((len(posteriors), dim))
        else:
            noise = rng.standard_normal((len(posteriors), dim))

    samples = [
        posterior.mean + ag.sqrt(posterior.variance) * noise[m]
        for m, posterior in enumerate(posteriors)
    ]
    z = ag.as_variable(np.zeros(dim))
    for m, sample in enumerate(samples):
        z = z + weights[m] * sample
    return MixtureRepresentation(weights=weights, samples=samples, z=z)


def prior_sample(latent_dim: int, rng: Optional[np.random.Generator] = None, deterministic: bool = False) -> np.ndarray:
    """Draw from the unit Gaussian prior ``p(z)``."""
    if deterministic or latent_dim == 0:
        return np.zeros(latent_dim)
    return rng.standard_normal(latent_dim)


class MoeEncoder:
    """
    Parameters: ``trunk.*`` (shared MLP), ``gate.*`` (linear over the trunk
    feature concatenated with the raw transition) and ``expert<m>.*``
    (linear heads emitting mean and log-variance).
    """

    def __init__(self, spec: EncoderSpec, seed: int = 0, params: Optional[ParamStore] = None):
        self.spec = spec
        if params is None:
            seeds = child_seeds(seed, 2 + spec.num_experts)
            params = ParamStore()
            init_params(spec.trunk, seeds[0], prefix="trunk.", store=params)
            init_params(spec.gate, seeds[1], prefix="gate.", store=params)
            for m in range(spec.num_experts):
                init_params(spec.expert, seeds[2 + m], prefix=f"expert{m}.", store=params)
        self.params = params

    def _check_context(self, context: ContextBatch) -> np.ndarray:
        if len(context) == 0:
            raise EmptyBatchError("Encoder needs at least one context transition")
        return context.vectors

    def features(self, context: ContextBatch, tape: Optional[GradientTape] = None) -> Variable:
        vectors = self._check_context(context)
        return ag.relu(forward(self.spec.trunk, self.params, vectors, tape, prefix="trunk."))

    def gate_weights(
        self,
        context: ContextBatch,
        tape: Optional[GradientTape] = None,
        features: Optional[Variable] = None,
    ) -> Variable:
        vectors = self._check_context(context)
        h = features if features is not None else self.features(context, tape)
        logits = forward(self.spec.gate, self.params, ag.concat([h, vectors], axis=1), tape, prefix="gate.")
        return ag.softmax(ag.reduce_mean(logits, axis=0))

    def expert_factors(
        self,
        context: ContextBatch,
        m: int,
        tape: Optional[GradientTape] = None,
        features: Optional[Variable] = None,
    ) -> GaussianFactor:
        """Per-transition factors of expert ``m``, shape ``(U, d)``."""
        h = features if features is not None else self.features(context, tape)
        out = forward(self.spec.expert, self.params, h, tape, prefix=f"expert{m}.")
        d = self.spec.latent_dim
        mean, logvar = out[:, :d], out[:, d:]
        ag.check_finite(f"expert{m} factors", out)
        return GaussianFactor(mean=mean, variance=ag.maximum(ag.exp(logvar), self.spec.var_floor))

    def expert_posterior(
        self,
        context: ContextBatch,
        m: int,
        tape: Optional[GradientTape] = None,
        features: Optional[Variable] = None,
    ) -> ExpertPosterior:
        factors = self.expert_factors(context, m, tape, features)
        return product_of_gaussians(factors.mean, factors.variance)

    def posteriors(self, context: ContextBatch, tape: Optional[GradientTape] = None) -> List[ExpertPosterior]:
        h = self.features(context, tape)
        return [self.expert_posterior(context, m, tape, h) for m in range(self.spec.num_experts)]

    def infer(
        self,
        context: ContextBatch,
        rng: Optional[np.random.Generator] = None,
        tape: Optional[GradientTape] = None,
        deterministic: bool = False,
        noise: Optional[np.ndarray] = None,
    ) -> Tuple[MixtureRepresentation, List[ExpertPosterior]]:
        """Gate weights, expert posteriors and the mixed sample ``z`` in one pass."""
        h = self.features(context, tape)
        weights = self.gate_weights(context, tape, h)
        posteriors = [self.expert_posterior(context, m, tape, h) for m in range(self.spec.num_experts)]
        mixture = sample_mixture(posteriors, weights, rng, deterministic, noise)
        ag.check_finite("task representation", mixture.z)
        return mixture, posteriors
