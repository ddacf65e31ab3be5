import tempfile

import numpy as np
from django.test import SimpleTestCase
from scipy.integrate import quad
from scipy.stats import norm

from channel.exceptions import MetricDomainError

from . import autograd as ag
from .agent import GmaAgent
from .autograd import GradientTape, ParamStore, adam_step, gradcheck, soft_update
from .checkpoint import load_checkpoint, save_checkpoint
from .config import LearnerConfig
from .encoder import (
    ContextBatch,
    EncoderSpec,
    GaussianFactor,
    MoeEncoder,
    kl_to_prior,
    prior_sample,
    product_of_gaussians,
    sample_mixture,
)
from .exceptions import CheckpointError, EmptyBatchError, NonFiniteError, ShapeMismatchError, TapeUsageError
from .networks import NetSpec, forward, init_params, residual_block
from .sac import (
    SacNetworks,
    TransitionBatch,
    act,
    actor_loss,
    binary_action_input,
    critic_loss,
    critic_target,
    encoder_loss,
    q_value,
    tanh_normal_log_prob,
    temperature_loss,
)


# ReLU kinks are crossed with non-negligible probability at a 1e-4 step;
# networks containing them are probed with a finer step.
RELU_STEP = 1e-6


def _zero(store: ParamStore, prefix: str = "") -> None:
    for name in store.names:
        if name.startswith(prefix):
            store.assign(name, np.zeros_like(store[name]))


def _constant_critic(store: ParamStore, value: float) -> None:
    _zero(store)
    store.assign("out.bias", np.array([value]))


# Four reward draws per (state, action) of a two-state problem.
TWO_STATE_REWARDS = {
    (0, 0): [0.0, 0.0, 0.0, 1.0],
    (0, 1): [1.0, 1.0, 1.0, 0.0],
    (1, 0): [1.0, 0.0, 1.0, 0.0],
    (1, 1): [0.0, 0.0, 0.0, 0.0],
}


def two_state_batch(state_dim: int = 10) -> TransitionBatch:
    states, actions, rewards = [], [], []
    for (s, a), draws in TWO_STATE_REWARDS.items():
        for r in draws:
            state = np.zeros(state_dim)
            state[s] = 1.0
            states.append(state)
            actions.append(a)
            rewards.append(r)
    states = np.array(states)
    return TransitionBatch(states, np.array(actions), np.array(rewards), states.copy())


def _random_batch(rng, size=4, state_dim=10) -> TransitionBatch:
    return TransitionBatch(
        states=rng.random((size, state_dim)),
        actions=rng.integers(0, 2, size),
        rewards=rng.random(size),
        next_states=rng.random((size, state_dim)),
    )


class AutogradTests(SimpleTestCase):
    def test_linear_gradient(self):
        store = ParamStore({"w": [[3.0]]})
        tape = GradientTape()
        out = ag.reduce_sum(ag.matmul(np.array([[2.0]]), tape.param(store, "w")))
        tape.backward(out)
        self.assertEqual(store.grads["w"][0, 0], 2.0)

    def test_two_backward_calls_double_gradients(self):
        store = ParamStore({"w": [[3.0, -1.0]]})
        tape = GradientTape()
        out = ag.reduce_sum(ag.tanh(ag.matmul(np.array([[0.5]]), tape.param(store, "w"))))
        tape.backward(out)
        once = store.grads["w"].copy()
        tape.backward(out)
        np.testing.assert_array_equal(store.grads["w"], 2 * once)

    def test_backward_without_forward(self):
        with self.assertRaises(TapeUsageError):
            GradientTape().backward(ag.Variable(1.0))

    def test_operands_from_different_tapes(self):
        store = ParamStore({"w": [1.0]})
        with self.assertRaises(TapeUsageError):
            GradientTape().param(store, "w") + GradientTape().param(store, "w")

    def test_matmul_shape_mismatch(self):
        with self.assertRaises(ShapeMismatchError):
            ag.matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_softmax_simplex_and_gradient(self):
        rng = np.random.default_rng(0)
        store = ParamStore({"x": rng.normal(size=5)})
        weights = rng.normal(size=5)
        y = ag.softmax(ag.Variable(store["x"])).value
        self.assertTrue(np.all(y > 0))
        self.assertAlmostEqual(y.sum(), 1.0, delta=1e-12)
        error = gradcheck(lambda tape: ag.reduce_sum(ag.softmax(ag.param(store, "x", tape)) * weights), [store])
        self.assertLess(error, 1e-4)

    def test_elementwise_ops_gradient(self):
        rng = np.random.default_rng(1)
        store = ParamStore({"a": rng.uniform(0.5, 1.5, (3, 2)), "b": rng.uniform(0.5, 1.5, (1, 2))})

        def loss(tape):
            a, b = ag.param(store, "a", tape), ag.param(store, "b", tape)
            mixed = ag.log(a) * ag.sqrt(b) + ag.exp(-a) / b - ag.softplus(a - b) + ag.square(ag.reciprocal(a))
            stacked = ag.concat([mixed, ag.broadcast_to(b, (3, 2))], axis=0)
            return ag.reduce_mean(ag.minimum(stacked[1:], ag.tanh(stacked[:-1]) + 0.3)) + ag.reduce_sum(ag.clip(a, 0.0, 5.0))

        self.assertLess(gradcheck(loss, [store]), 1e-4)

    def test_unbroadcast(self):
        grad = np.ones((4, 3))
        np.testing.assert_array_equal(ag.unbroadcast(grad, (3,)), [4.0, 4.0, 4.0])
        np.testing.assert_array_equal(ag.unbroadcast(grad, (1, 3)), [[4.0, 4.0, 4.0]])


class NetworkTests(SimpleTestCase):
    def test_zero_network_outputs_zero(self):
        spec = NetSpec(3, (4,), 2)
        store = init_params(spec, seed=0)
        _zero(store)
        out = forward(spec, store, np.random.default_rng(0).normal(size=(5, 3)))
        np.testing.assert_array_equal(out.value, np.zeros((5, 2)))

    def test_identity_linear_layer(self):
        spec = NetSpec(3, (), 3)
        store = init_params(spec, seed=0)
        store.assign("out.weight", np.eye(3))
        store.assign("out.bias", np.zeros(3))
        x = np.array([[1.0, -2.0, 0.5]])
        np.testing.assert_array_equal(forward(spec, store, x).value, x)

    def test_residual_block_with_zeroed_inner_weights(self):
        spec = NetSpec(4, (4,), 1, residual_blocks=1)
        store = init_params(spec, seed=1)
        _zero(store, "res0.")
        x = np.array([[0.0, 0.3, 1.2, 4.0]])
        np.testing.assert_array_equal(residual_block(x, store, "res0").value, x)

    def test_input_width_checked(self):
        spec = NetSpec(3, (4,), 1)
        with self.assertRaises(ShapeMismatchError):
            forward(spec, init_params(spec, 0), np.ones((2, 5)))

    def test_initialisation_bounds_and_determinism(self):
        spec = NetSpec(16, (8,), 2)
        first, second = init_params(spec, 5), init_params(spec, 5)
        self.assertEqual(first.fingerprint(), second.fingerprint())
        self.assertLessEqual(np.abs(first["dense0.weight"]).max(), 0.25)
        self.assertNotEqual(first.fingerprint(), init_params(spec, 6).fingerprint())

    def test_residual_mlp_gradient(self):
        rng = np.random.default_rng(2)
        spec = NetSpec(5, (6,), 3, residual_blocks=1)
        store = init_params(spec, seed=3)
        x, weights = rng.normal(size=(4, 5)), rng.normal(size=(4, 3))
        error = gradcheck(lambda tape: ag.reduce_sum(forward(spec, store, x, tape) * weights), [store], eps=RELU_STEP)
        self.assertLess(error, 1e-4)


class OptimizerTests(SimpleTestCase):
    def test_zero_gradient_leaves_parameters(self):
        store = ParamStore({"w": [1.0, -2.0]})
        adam_step(store)
        np.testing.assert_array_equal(store["w"], [1.0, -2.0])

    def test_first_step_moves_by_learning_rate(self):
        store = ParamStore({"w": [1.0, -2.0]})
        store.grads["w"][...] = [0.4, -3.0]
        adam_step(store, lr=0.003)
        np.testing.assert_allclose(store["w"], [1.0 - 0.003, -2.0 + 0.003], atol=1e-9)

    def test_constant_gradient_step_converges_to_learning_rate(self):
        store = ParamStore({"w": [0.0]})
        previous = 0.0
        for _ in range(500):
            store.grads["w"][...] = 0.7
            adam_step(store, lr=0.01)
            step, previous = previous - store["w"][0], store["w"][0]
        self.assertAlmostEqual(step, 0.01, delta=1e-8)

    def test_nan_gradient_fails_fast(self):
        store = ParamStore({"w": [1.0]})
        store.grads["w"][0] = np.nan
        with self.assertRaises(NonFiniteError) as ctx:
            adam_step(store)
        self.assertEqual(ctx.exception.details["parameter"], "w")

    def test_soft_update(self):
        online = ParamStore({"w": np.ones(3)})
        target = ParamStore({"w": np.zeros(3)})
        soft_update(target, online, 0.005)
        np.testing.assert_array_equal(target["w"], np.full(3, 0.005))
        soft_update(target, online, 0.0)
        np.testing.assert_array_equal(target["w"], np.full(3, 0.005))
        soft_update(target, online, 1.0)
        np.testing.assert_array_equal(target["w"], online["w"])

    def test_soft_update_shape_mismatch(self):
        with self.assertRaises(ShapeMismatchError):
            soft_update(ParamStore({"w": np.zeros(3)}), ParamStore({"w": np.zeros(2)}))
        with self.assertRaises(ShapeMismatchError):
            soft_update(ParamStore({"w": np.zeros(3)}), ParamStore({"v": np.zeros(3)}))

    def test_shapes_are_fixed(self):
        store = ParamStore({"w": np.zeros(3)})
        with self.assertRaises(ShapeMismatchError):
            store.assign("w", np.zeros(4))


class CheckpointTests(SimpleTestCase):
    def test_round_trip_is_bit_exact(self):
        store = init_params(NetSpec(4, (3,), 2), seed=0)
        store.grads["out.bias"][...] = [0.1, -0.2]
        adam_step(store)
        with tempfile.TemporaryDirectory() as tmp:
            save_checkpoint(tmp, {"net": store}, {"note": "x"})
            stores, meta = load_checkpoint(tmp)
        loaded = stores["net"]
        self.assertEqual(meta, {"note": "x"})
        self.assertEqual(loaded.step, 1)
        for name in store.names:
            np.testing.assert_array_equal(loaded[name], store[name])
            np.testing.assert_array_equal(loaded.m[name], store.m[name])
            np.testing.assert_array_equal(loaded.v[name], store.v[name])

    def test_missing_checkpoint(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(CheckpointError):
                load_checkpoint(tmp)


class ProductOfGaussiansTests(SimpleTestCase):
    def test_two_unit_factors(self):
        posterior = product_of_gaussians(np.array([[1.0], [3.0]]), np.array([[1.0], [1.0]]))
        self.assertAlmostEqual(posterior.mean.value[0], 2.0, delta=1e-12)
        self.assertAlmostEqual(posterior.variance.value[0], 0.5, delta=1e-12)

    def test_single_factor(self):
        posterior = product_of_gaussians(np.array([[0.3, -1.0]]), np.array([[2.0, 0.1]]))
        np.testing.assert_allclose(posterior.mean.value, [0.3, -1.0], atol=1e-12)
        np.testing.assert_allclose(posterior.variance.value, [2.0, 0.1], atol=1e-12)

    def test_identical_factors(self):
        k = 7
        posterior = product_of_gaussians(np.full((k, 1), 1.5), np.full((k, 1), 0.8))
        self.assertAlmostEqual(posterior.mean.value[0], 1.5, delta=1e-12)
        self.assertAlmostEqual(posterior.variance.value[0], 0.8 / k, delta=1e-12)

    def test_precision_weighted_closed_form(self):
        rng = np.random.default_rng(0)
        means, variances = rng.normal(size=(10, 3)), rng.uniform(0.1, 2.0, (10, 3))
        precision = (1 / variances).sum(axis=0)
        posterior = product_of_gaussians(means, variances)
        np.testing.assert_allclose(posterior.variance.value, 1 / precision, atol=1e-12)
        np.testing.assert_allclose(posterior.mean.value, (means / variances).sum(axis=0) / precision, atol=1e-12)


class KlTests(SimpleTestCase):
    def test_standard_normal_is_zero(self):
        factor = GaussianFactor(ag.Variable(np.zeros(6)), ag.Variable(np.ones(6)))
        self.assertEqual(kl_to_prior([factor, factor]).item(), 0.0)

    def test_unit_shift(self):
        factor = GaussianFactor(ag.Variable([1.0]), ag.Variable([1.0]))
        self.assertAlmostEqual(kl_to_prior([factor]).item(), 0.5)

    def test_matches_quadrature(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            mu, sigma = rng.normal(), rng.uniform(0.3, 2.0)
            integrand = lambda x: norm.pdf(x, mu, sigma) * (norm.logpdf(x, mu, sigma) - norm.logpdf(x))
            expected, _ = quad(integrand, mu - 15 * sigma, mu + 15 * sigma)
            factor = GaussianFactor(ag.Variable([mu]), ag.Variable([sigma ** 2]))
            self.assertAlmostEqual(kl_to_prior([factor]).item(), expected, delta=1e-6)

    def test_non_positive_variance(self):
        with self.assertRaises(MetricDomainError):
            kl_to_prior([GaussianFactor(ag.Variable([0.0]), ag.Variable([0.0]))])

    def test_kl_gradient(self):
        rng = np.random.default_rng(4)
        store = ParamStore({"mu": rng.normal(size=(2, 3)), "logvar": rng.normal(size=(2, 3))})

        def loss(tape):
            mu, logvar = ag.param(store, "mu", tape), ag.param(store, "logvar", tape)
            return kl_to_prior([GaussianFactor(mu[m], ag.exp(logvar[m])) for m in range(2)])

        self.assertLess(gradcheck(loss, [store]), 1e-4)


class EncoderTests(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(0)
        self.spec = EncoderSpec(context_dim=7, latent_dim=2, num_experts=3, hidden_size=6)
        self.encoder = MoeEncoder(self.spec, seed=1)
        self.context = ContextBatch(rng.random((5, 7)))

    def test_zero_gate_gives_uniform_weights(self):
        _zero(self.encoder.params, "gate.")
        np.testing.assert_allclose(self.encoder.gate_weights(self.context).value, np.full(3, 1 / 3), atol=1e-15)

    def test_gate_weights_on_simplex(self):
        weights = self.encoder.gate_weights(self.context).value
        self.assertTrue(np.all(weights >= 0))
        self.assertAlmostEqual(weights.sum(), 1.0, delta=1e-12)

    def test_permutation_invariance(self):
        shuffled = self.context.permuted(np.random.default_rng(9))
        np.testing.assert_allclose(
            self.encoder.gate_weights(shuffled).value, self.encoder.gate_weights(self.context).value, atol=1e-12
        )
        for before, after in zip(self.encoder.posteriors(self.context), self.encoder.posteriors(shuffled)):
            np.testing.assert_allclose(after.mean.value, before.mean.value, atol=1e-12)
            np.testing.assert_allclose(after.variance.value, before.variance.value, atol=1e-12)
        self.assertAlmostEqual(
            kl_to_prior(self.encoder.posteriors(shuffled)).item(),
            kl_to_prior(self.encoder.posteriors(self.context)).item(),
            delta=1e-12,
        )

    def test_more_context_never_widens_posterior(self):
        variances = [
            self.encoder.expert_posterior(ContextBatch(self.context.vectors[:k]), 0).variance.value
            for k in range(1, 6)
        ]
        for wider, narrower in zip(variances, variances[1:]):
            self.assertTrue(np.all(narrower <= wider))

    def test_empty_context(self):
        with self.assertRaises(EmptyBatchError):
            self.encoder.gate_weights(ContextBatch(np.zeros((0, 7))))

    def test_deterministic_mixture_is_weighted_mean(self):
        mixture, posteriors = self.encoder.infer(self.context, deterministic=True)
        expected = sum(mixture.weights.value[m] * posteriors[m].mean.value for m in range(3))
        np.testing.assert_allclose(mixture.z.value, expected, atol=1e-12)

    def test_one_hot_weights_select_expert(self):
        posteriors = self.encoder.posteriors(self.context)
        mixture = sample_mixture(posteriors, np.array([0.0, 1.0, 0.0]), np.random.default_rng(0))
        np.testing.assert_array_equal(mixture.z.value, mixture.samples[1].value)

    def test_single_expert(self):
        encoder = MoeEncoder(EncoderSpec(context_dim=7, latent_dim=2, num_experts=1, hidden_size=6), seed=1)
        mixture, _ = encoder.infer(self.context, np.random.default_rng(0))
        self.assertEqual(mixture.weights.value.tolist(), [1.0])
        np.testing.assert_array_equal(mixture.z.value, mixture.samples[0].value)

    def test_prior_sample(self):
        np.testing.assert_array_equal(prior_sample(6, deterministic=True), np.zeros(6))
        rng = np.random.default_rng(5)
        draws = np.stack([prior_sample(6, rng) for _ in range(100_000)])
        self.assertLess(np.abs(draws.mean(axis=0)).max(), 0.02)
        self.assertLess(np.abs(draws.var(axis=0) - 1.0).max(), 0.02)

    def test_encoder_gradient(self):
        noise = np.random.default_rng(6).standard_normal((3, 2))
        weights = np.array([0.7, -1.3])

        def loss(tape):
            mixture, posteriors = self.encoder.infer(self.context, tape=tape, noise=noise)
            return kl_to_prior(posteriors) + ag.reduce_sum(mixture.z * weights)

        self.assertLess(gradcheck(loss, [self.encoder.params], eps=RELU_STEP), 1e-4)


class SacTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(0)
        self.nets = SacNetworks.build(state_dim=10, latent_dim=2, hidden_size=8, seed=3)
        self.z = np.array([0.2, -0.4])
        self.batch = _random_batch(self.rng)

    def test_zero_mean_maps_to_transmit(self):
        _zero(self.nets.actor, "out.")
        output = act(np.zeros(10), self.z, self.nets, deterministic=True)
        self.assertEqual(output.squashed.value[0, 0], 0.0)
        self.assertEqual(output.action[0], 1)

    def test_deep_negative_mean_maps_to_silence(self):
        _zero(self.nets.actor, "out.")
        self.nets.actor.assign("out.bias", np.array([-3.0, -20.0]))
        for _ in range(20):
            self.assertEqual(act(self.rng.random(10), self.z, self.nets, self.rng).action[0], 0)

    def test_log_std_clamped(self):
        _zero(self.nets.actor, "out.")
        self.nets.actor.assign("out.bias", np.array([0.0, 50.0]))
        self.assertEqual(act(np.zeros(10), self.z, self.nets, self.rng).log_std.value[0, 0], 2.0)

    def test_log_prob_matches_numerical_density(self):
        for _ in range(10):
            mean, log_std, noise = self.rng.uniform(-1, 1), self.rng.uniform(-1, 0), self.rng.uniform(-1, 1)
            std = np.exp(log_std)
            u = mean + std * noise
            a = np.tanh(u)
            cdf = lambda x: norm.cdf((np.arctanh(x) - mean) / std)
            h = 1e-6
            numeric = np.log((cdf(a + h) - cdf(a - h)) / (2 * h))
            analytic = tanh_normal_log_prob(ag.Variable(u), ag.Variable(log_std), np.array(noise)).item()
            self.assertAlmostEqual(analytic, numeric, delta=1e-4)

    def test_target_without_discount_is_reward(self):
        y = critic_target(self.batch.rewards, self.batch.next_states, self.z, self.nets, 0.2, 0.0, self.rng)
        np.testing.assert_allclose(y.ravel(), self.batch.rewards)

    def test_target_takes_twin_minimum(self):
        _constant_critic(self.nets.target1, 1.0)
        _constant_critic(self.nets.target2, 2.0)
        y = critic_target(self.batch.rewards, self.batch.next_states, self.z, self.nets, 0.0, 0.9, self.rng)
        np.testing.assert_allclose(y.ravel(), self.batch.rewards + 0.9)

    def test_target_symmetric_in_critics(self):
        noise = self.rng.standard_normal((4, 1))
        y = critic_target(self.batch.rewards, self.batch.next_states, self.z, self.nets, 0.2, 0.9, noise=noise)
        self.nets.target1, self.nets.target2 = self.nets.target2, self.nets.target1
        swapped = critic_target(self.batch.rewards, self.batch.next_states, self.z, self.nets, 0.2, 0.9, noise=noise)
        np.testing.assert_array_equal(y, swapped)

    def test_critic_loss_values(self):
        _constant_critic(self.nets.critic1, 0.5)
        _constant_critic(self.nets.critic2, 0.5)
        j1, j2 = critic_loss(self.batch, self.z, self.nets, 0.2, 0.9, targets=np.full(4, 0.5))
        self.assertEqual((j1.item(), j2.item()), (0.0, 0.0))

        single = TransitionBatch(self.batch.states[:1], self.batch.actions[:1], self.batch.rewards[:1], self.batch.next_states[:1])
        _constant_critic(self.nets.critic1, 0.0)
        j1, _ = critic_loss(single, self.z, self.nets, 0.2, 0.9, targets=np.array([2.0]))
        self.assertEqual(j1.item(), 4.0)

    def test_empty_batch(self):
        empty = TransitionBatch(np.zeros((0, 10)), np.zeros(0, dtype=int), np.zeros(0), np.zeros((0, 10)))
        with self.assertRaises(EmptyBatchError):
            critic_loss(empty, self.z, self.nets, 0.2, 0.9, targets=np.zeros(0))
        with self.assertRaises(EmptyBatchError):
            actor_loss(empty, self.z, self.nets, 0.2, self.rng)

    def test_actor_loss_with_constant_critics(self):
        _constant_critic(self.nets.critic1, 1.5)
        _constant_critic(self.nets.critic2, 1.5)
        tape = GradientTape()
        loss, _ = actor_loss(self.batch, self.z, self.nets, 0.0, self.rng, tape)
        self.assertAlmostEqual(loss.item(), -1.5)
        self.nets.actor.zero_grad()
        tape.backward(loss)
        for grad in self.nets.actor.grads.values():
            np.testing.assert_array_equal(grad, np.zeros_like(grad))

    def test_actor_gradient(self):
        noise = self.rng.standard_normal((4, 1))
        error = gradcheck(
            lambda tape: actor_loss(self.batch, self.z, self.nets, 0.2, tape=tape, noise=noise)[0],
            [self.nets.actor],
            eps=RELU_STEP,
        )
        self.assertLess(error, 1e-4)

    def test_critic_gradient(self):
        targets = self.rng.random(4)

        def loss(tape):
            j1, j2 = critic_loss(self.batch, self.z, self.nets, 0.2, 0.9, tape=tape, targets=targets)
            return j1 + j2

        self.assertLess(gradcheck(loss, [self.nets.critic1, self.nets.critic2], eps=RELU_STEP), 1e-4)

    def test_encoder_gradient_through_critic(self):
        encoder = MoeEncoder(EncoderSpec(context_dim=22, latent_dim=2, num_experts=3, hidden_size=6), seed=4)
        context = ContextBatch(self.rng.random((6, 22)))
        noise = self.rng.standard_normal((3, 2))
        targets = self.rng.random(4)

        def loss(tape):
            mixture, posteriors = encoder.infer(context, tape=tape, noise=noise)
            j1, j2 = critic_loss(self.batch, mixture.z, self.nets, 0.2, 0.9, tape=tape, targets=targets)
            return encoder_loss(j1, j2, kl_to_prior(posteriors), 1.0)

        self.assertLess(gradcheck(loss, [encoder.params], eps=RELU_STEP), 1e-4)

    def test_critics_fit_expected_reward_without_discount(self):
        nets = SacNetworks.build(state_dim=10, latent_dim=2, hidden_size=16, seed=0)
        batch = two_state_batch()
        z = np.zeros(2)
        targets = critic_target(batch.rewards, batch.next_states, z, nets, 0.0, 0.0, self.rng)
        np.testing.assert_array_equal(targets.ravel(), batch.rewards)

        for _ in range(4000):
            nets.critic1.zero_grad()
            nets.critic2.zero_grad()
            tape = GradientTape()
            j1, j2 = critic_loss(batch, z, nets, 0.0, 0.0, tape=tape, targets=targets)
            tape.backward(j1 + j2)
            adam_step(nets.critic1)
            adam_step(nets.critic2)

        for (s, a), draws in TWO_STATE_REWARDS.items():
            state = np.zeros((1, 10))
            state[0, s] = 1.0
            for store in (nets.critic1, nets.critic2):
                q = q_value(nets.critic_spec, store, state, binary_action_input([a]), z).item()
                self.assertAlmostEqual(q, np.mean(draws), delta=1e-2)

    def test_actor_direction_invariant_to_critic_scale(self):
        noise = self.rng.standard_normal((4, 1))

        def actor_grads():
            self.nets.actor.zero_grad()
            tape = GradientTape()
            loss, _ = actor_loss(self.batch, self.z, self.nets, 0.0, tape=tape, noise=noise)
            tape.backward(loss)
            return {name: grad.copy() for name, grad in self.nets.actor.grads.items()}

        before = actor_grads()
        for store in (self.nets.critic1, self.nets.critic2):
            store.assign("out.weight", 3.0 * store["out.weight"])
            store.assign("out.bias", 3.0 * store["out.bias"])
        after = actor_grads()

        self.assertTrue(np.any(before["out.bias"] != 0.0))
        np.testing.assert_array_equal(np.sign(after["out.bias"]), np.sign(before["out.bias"]))
        for name, grad in before.items():
            np.testing.assert_allclose(after[name], 3.0 * grad, rtol=1e-9, atol=1e-15)

    def test_temperature_stationary_point(self):
        self.nets.log_alpha.zero_grad()
        tape = GradientTape()
        tape.backward(temperature_loss(np.ones((4, 1)), self.nets, tape))
        self.assertEqual(self.nets.log_alpha.grads["log_alpha"][0], 0.0)

    def test_temperature_decreases_when_entropy_is_high(self):
        before = self.nets.alpha
        self.nets.log_alpha.zero_grad()
        tape = GradientTape()
        tape.backward(temperature_loss(np.full((4, 1), 0.2), self.nets, tape))
        self.assertGreater(self.nets.log_alpha.grads["log_alpha"][0], 0.0)
        adam_step(self.nets.log_alpha)
        self.assertLess(self.nets.alpha, before)
        self.assertGreater(self.nets.alpha, 0.0)

    def test_temperature_gradient(self):
        log_probs = self.rng.normal(size=(4, 1))
        self.assertLess(gradcheck(lambda tape: temperature_loss(log_probs, self.nets, tape), [self.nets.log_alpha]), 1e-4)

    def test_encoder_loss_assembly(self):
        self.assertAlmostEqual(encoder_loss(0.3, 0.2, 0.5, 1.0).item(), 1.0)
        self.assertAlmostEqual(encoder_loss(0.3, 0.2, 0.5, 0.0).item(), 0.5)


class GmaAgentTests(SimpleTestCase):
    def setUp(self):
        self.config = LearnerConfig(latent_dim=2, num_experts=3, hidden_size=8)
        self.rng = np.random.default_rng(1)

    def _task(self):
        return ContextBatch(self.rng.random((6, 22))), _random_batch(self.rng)

    def test_update_moves_targets_by_eta(self):
        agent = GmaAgent(10, 22, self.config, seed=0)
        target_before = agent.nets.target1["out.weight"].copy()
        losses = agent.update([self._task()])
        self.assertTrue(all(np.isfinite(v) for v in losses.values()))
        expected = 0.005 * agent.nets.critic1["out.weight"] + 0.995 * target_before
        np.testing.assert_allclose(agent.nets.target1["out.weight"], expected, atol=1e-15)

    def test_no_tasks_no_change(self):
        agent = GmaAgent(10, 22, self.config, seed=0)
        before = {name: store.fingerprint() for name, store in agent.stores().items()}
        self.assertEqual(agent.update([]), {})
        self.assertEqual(before, {name: store.fingerprint() for name, store in agent.stores().items()})

    def test_update_changes_encoder(self):
        agent = GmaAgent(10, 22, self.config, seed=0)
        before = agent.encoder_fingerprint()
        agent.update([self._task(), self._task()])
        self.assertNotEqual(agent.encoder_fingerprint(), before)

    def test_finetune_keeps_encoder_frozen(self):
        agent = GmaAgent(10, 22, self.config, seed=0)
        before = agent.encoder_fingerprint()
        context, batch = self._task()
        agent.finetune_update(context, batch)
        self.assertEqual(agent.encoder_fingerprint(), before)

    def test_same_seed_same_losses(self):
        tasks = [self._task(), self._task()]
        first = GmaAgent(10, 22, self.config, seed=4).update(tasks)
        second = GmaAgent(10, 22, self.config, seed=4).update(tasks)
        self.assertEqual(first, second)

    def test_without_encoder(self):
        agent = GmaAgent(10, 22, self.config, seed=0, use_encoder=False)
        self.assertEqual(agent.sample_latent(None).shape, (0,))
        losses = agent.update([(None, _random_batch(self.rng))])
        self.assertEqual(losses["kl"], 0.0)
        self.assertEqual(agent.act(np.zeros(10), np.zeros(0)).action.shape, (1,))

    def test_prior_latent_for_empty_context(self):
        agent = GmaAgent(10, 22, self.config, seed=0)
        np.testing.assert_array_equal(agent.sample_latent(None, deterministic=True), np.zeros(2))

    def test_save_and_load(self):
        agent = GmaAgent(10, 22, self.config, seed=0)
        agent.update([self._task()])
        with tempfile.TemporaryDirectory() as tmp:
            agent.save(tmp)
            loaded = GmaAgent.load(tmp)
        for name, store in agent.stores().items():
            self.assertEqual(loaded.stores()[name].fingerprint(), store.fingerprint())
        state, z = self.rng.random(10), np.array([0.1, 0.2])
        np.testing.assert_array_equal(
            loaded.act(state, z, deterministic=True).squashed.value,
            agent.act(state, z, deterministic=True).squashed.value,
        )
