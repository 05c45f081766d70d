import numpy as np
import pytest

from conftest import random_distribution
from oracles import empirical_tv
from ratiodiff.datasets import ToyDatasetSpec
from ratiodiff.errors import ConfigError, NumericError
from ratiodiff.losses import OrdinalKernelSpec
from ratiodiff.models import (
    load_checkpoint,
    tabular_conditionals,
)
from ratiodiff.nets import MaskedModel, OrdinalScoreModel, TabularModel, softmax
from ratiodiff.rates import uniform_rate
from ratiodiff.schedules import NoiseSchedule
from ratiodiff.spaces import StateSpace
from ratiodiff.tabular import exact_marginal
from ratiodiff.training import (
    TrainConfig,
    fixed_state_sampler,
    sample_training_batch,
    sample_training_tuple,
    tabular_state_sampler,
    toy_state_sampler,
    train,
    write_metrics_csv,
)


def _expected_kl(q_t, probs):
    """Expected conditional KL of the exact conditionals against probs."""
    cond = tabular_conditionals(q_t)
    cond = np.where(np.isnan(cond), 0.0, cond)
    terms = np.where(
        cond > 0, cond * (np.log(np.maximum(cond, 1e-300)) - np.log(probs)), 0.0
    )
    return float(np.sum(q_t.probs[:, None, None] * terms))


class TestSampling:
    def test_tuple_time_range_and_determinism(self, rng):
        sched = NoiseSchedule("constant", base_rate=1.0)
        rate = uniform_rate(2)
        x0 = np.array([0, 1, 1, 0])
        t, x_t = sample_training_tuple(x0, sched, rate, np.random.default_rng(9))
        assert 1e-3 <= t <= 1.0
        assert x_t.shape == x0.shape

        t2, x_t2 = sample_training_tuple(x0, sched, rate, np.random.default_rng(9))
        assert t == t2 and np.array_equal(x_t, x_t2)

    def test_batch_matches_time_mixed_marginal(self, rng):
        space = StateSpace(dims=2, vocab=2)
        pi0 = random_distribution(space, rng)
        sched = NoiseSchedule("constant", base_rate=1.0)
        rate = uniform_rate(2)
        sampler = tabular_state_sampler(pi0)

        batch = sample_training_batch(sampler, 100000, sched, rate, rng)

        # reference law of x_t with t marginalized out, by dense quadrature
        grid = np.linspace(1e-3, 1.0, 2001)
        mix = np.zeros(space.n_states)
        for t in grid:
            mix += exact_marginal(pi0, float(t), sched, rate).probs
        mix /= grid.size
        assert empirical_tv(batch.x_t, space, mix) < 0.03

    def test_fixed_time_corruption_matches_exact_marginal(self, rng):
        space = StateSpace(dims=2, vocab=2)
        pi0 = random_distribution(space, rng)
        sched = NoiseSchedule("constant", base_rate=1.0)
        rate = uniform_rate(2)
        t = 0.35

        from ratiodiff.simulate import forward_sample_at_times

        x0 = pi0.sample(100000, rng)
        x_t = forward_sample_at_times(x0, np.full(100000, t), sched, rate, rng)
        target = exact_marginal(pi0, t, sched, rate).probs
        assert empirical_tv(x_t, space, target) < 0.03

    def test_fixed_state_sampler_validation(self):
        with pytest.raises(ConfigError):
            fixed_state_sampler(np.zeros((0, 3), dtype=int))


class TestTrainConfig:
    def test_path_kl_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig(loss_kind="path_kl", n_steps=1)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig(loss_kind="elbo", n_steps=1)

    def test_ordinal_needs_kernel(self):
        with pytest.raises(ConfigError):
            TrainConfig(loss_kind="ordinal_score", n_steps=1)

    def test_mode_mismatches_rejected(self, rng):
        space = StateSpace(dims=2, vocab=2)
        sched = NoiseSchedule("constant", base_rate=1.0)
        rate = uniform_rate(2)
        sampler = tabular_state_sampler(random_distribution(space, rng))

        x0_model = MaskedModel(space, hidden=(8,), mode="x0_denoising")
        with pytest.raises(ConfigError):
            train(x0_model, sampler, sched, rate, TrainConfig("ce", n_steps=1))

        marginal_model = MaskedModel(space, hidden=(8,))
        with pytest.raises(ConfigError):
            train(marginal_model, sampler, sched, rate, TrainConfig("x0_ce", n_steps=1))

        ord_space = StateSpace(dims=2, vocab=6, ordinal=True)
        score_model = OrdinalScoreModel(ord_space, hidden=(8,))
        with pytest.raises(ConfigError):
            train(score_model, sampler, sched, rate, TrainConfig("ce", n_steps=1))

    def test_exact_kind_needs_tabular_distribution(self, rng):
        space = StateSpace(dims=2, vocab=2)
        sched = NoiseSchedule("constant", base_rate=1.0)
        rate = uniform_rate(2)
        model = TabularModel(space, n_time_bins=4)
        sampler = tabular_state_sampler(random_distribution(space, rng))
        with pytest.raises(ConfigError):
            train(model, sampler, sched, rate, TrainConfig("ce_exact", n_steps=1))


class TestTrainLoop:
    def test_zero_steps_checkpoint_equals_init(self, rng, tmp_path):
        space = StateSpace(dims=3, vocab=2)
        sched = NoiseSchedule("constant", base_rate=1.0)
        rate = uniform_rate(2)
        model = MaskedModel(space, hidden=(8,), seed=3)
        init = model.flat_params().copy()
        sampler = tabular_state_sampler(random_distribution(space, rng))

        result = train(
            model, sampler, sched, rate,
            TrainConfig("ce", n_steps=0), out_dir=tmp_path,
        )
        assert result.metrics == []
        reloaded, desc = load_checkpoint(tmp_path / "model.rdck")
        assert np.array_equal(reloaded.flat_params(), init)
        assert desc["extra"]["n_steps"] == 0

    def test_deterministic_given_seed(self, rng):
        space = StateSpace(dims=3, vocab=2)
        sched = NoiseSchedule("constant", base_rate=1.0)
        rate = uniform_rate(2)
        pi0 = random_distribution(space, rng)

        def run():
            model = MaskedModel(space, hidden=(8,), seed=3)
            sampler = tabular_state_sampler(pi0)
            config = TrainConfig("ce", n_steps=30, batch_size=16, seed=11)
            result = train(model, sampler, sched, rate, config)
            return model.flat_params(), [loss for _, loss, _ in result.metrics]

        p1, l1 = run()
        p2, l2 = run()
        assert np.array_equal(p1, p2)
        assert l1 == l2

    def test_first_step_loss_scales_with_time_weight(self, rng):
        space = StateSpace(dims=3, vocab=2)
        sched = NoiseSchedule("constant", base_rate=1.0)
        rate = uniform_rate(2)
        pi0 = random_distribution(space, rng)

        losses = []
        for w in (1.0, 2.0):
            model = MaskedModel(space, hidden=(8,), seed=3)
            config = TrainConfig("ce", n_steps=1, batch_size=16, seed=11, time_weight=w)
            result = train(model, tabular_state_sampler(pi0), sched, rate, config)
            losses.append(result.metrics[0][1])
        assert losses[1] == 2.0 * losses[0]

    def test_numeric_error_reports_step(self, rng):
        space = StateSpace(dims=2, vocab=2)
        sched = NoiseSchedule("constant", base_rate=1.0)
        rate = uniform_rate(2)
        model = MaskedModel(space, hidden=(8,), seed=3)
        model.set_flat_params(np.full(model.n_params, 1e200))
        sampler = tabular_state_sampler(random_distribution(space, rng))
        with np.errstate(over="ignore"), pytest.raises(NumericError, match="step 1"):
            train(model, sampler, sched, rate, TrainConfig("ce", n_steps=3))

    def test_metrics_cadence_and_csv(self, rng, tmp_path):
        space = StateSpace(dims=2, vocab=2)
        sched = NoiseSchedule("constant", base_rate=1.0)
        rate = uniform_rate(2)
        model = MaskedModel(space, hidden=(8,), seed=3)
        sampler = tabular_state_sampler(random_distribution(space, rng))
        config = TrainConfig("ce", n_steps=25, batch_size=8, log_every=10)
        result = train(model, sampler, sched, rate, config, out_dir=tmp_path)
        assert [row[0] for row in result.metrics] == [10, 20, 25]

        lines = (tmp_path / "metrics.csv").read_text().strip().splitlines()
        assert lines[0] == "step,loss,wall_ms"
        assert len(lines) == 4
        step, loss, wall = lines[1].split(",")
        assert int(step) == 10
        assert float(loss) == result.metrics[0][1]
        assert float(wall) >= 0.0

    def test_ordinal_training_reduces_loss(self, rng):
        space = StateSpace(dims=2, vocab=8, ordinal=True)
        sched = NoiseSchedule("constant", base_rate=1.0)
        rate = uniform_rate(8)
        kspec = OrdinalKernelSpec(corrupt_rate=2.0, support=8)
        model = OrdinalScoreModel(space, hidden=(16, 16), seed=5)
        base = np.array([[2, 5]])
        sampler = fixed_state_sampler(np.repeat(base, 4, axis=0))
        config = TrainConfig(
            "ordinal_score", n_steps=400, batch_size=32, seed=7,
            lr=3e-3, kernel=kspec,
        )
        result = train(model, sampler, sched, rate, config)
        early = np.mean([l for _, l, _ in result.metrics[:50]])
        late = np.mean([l for _, l, _ in result.metrics[-50:]])
        assert np.isfinite(late)
        assert late < early


class TestConvergence:
    def test_tabular_reaches_exact_conditionals(self, rng):
        space = StateSpace(dims=4, vocab=2)
        pi0 = random_distribution(space, rng)
        sched = NoiseSchedule("constant", base_rate=1.0)
        rate = uniform_rate(2)
        model = TabularModel(space, n_time_bins=8)
        config = TrainConfig("ce_exact", n_steps=20000, seed=3, lr=2e-3)
        train(model, pi0, sched, rate, config)

        states = space.enumerate_states()
        worst = 0.0
        for k in range(model.n_time_bins):
            t = model.bin_center(k)
            q_t = exact_marginal(pi0, t, sched, rate)
            logits = model.conditional_logits_batch(states, np.full(space.n_states, t))
            worst = max(worst, _expected_kl(q_t, softmax(logits, axis=-1)))
        assert worst <= 1e-3

        # converged loss sits within 1% of the conditional entropy floor
        from ratiodiff.losses import expected_cross_entropy_observed

        t = model.bin_center(4)
        q_t = exact_marginal(pi0, t, sched, rate)
        cond = tabular_conditionals(q_t)
        floor = float(
            np.sum(
                q_t.probs[:, None]
                * -np.sum(cond * np.log(np.maximum(cond, 1e-300)), axis=2)
            )
        )
        value, _ = expected_cross_entropy_observed(model, q_t, t)
        assert floor - 1e-6 <= value <= 1.01 * floor

    def test_toy_smoke_run_improves(self, rng):
        spec = ToyDatasetSpec("8gaussians", bits_per_axis=6)
        space = spec.space
        sched = NoiseSchedule("constant", base_rate=1.0)
        rate = uniform_rate(2)
        model = MaskedModel(space, hidden=(32, 32), seed=9)
        config = TrainConfig("ce", n_steps=300, batch_size=64, seed=4, lr=2e-3)
        result = train(model, toy_state_sampler(spec), sched, rate, config)

        losses = np.array([l for _, l, _ in result.metrics])
        assert np.all(np.isfinite(losses))
        assert losses[-50:].mean() < losses[:50].mean() - 0.05
