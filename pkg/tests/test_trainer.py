from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wpr.divergences import FKL
from wpr.errors import NumericalBlowup
from wpr.trainer import (
    METRIC_FIELDS,
    Regularizer,
    ToyPolicy,
    TrainConfig,
    fit_reference,
    make_env,
    mean_policy_reward,
    sample_trajectories,
    train,
)


@pytest.fixture(scope="module")
def env():
    return make_env(d=16, seed=3, cluster_size=4, max_response_len=4)


@pytest.fixture(scope="module")
def reference(env):
    return fit_reference(env, steps=20, samples=8, lr=5.0, seed=3)


def small_config(**kw):
    base = dict(steps=5, batch_size=4, max_response_len=4, k1=16, k2=4, sft_steps=20, sft_samples=8,
                seed=3)
    base.update(kw)
    return TrainConfig(**base)


class TestEnvironment:
    def test_default_geometry(self):
        e = make_env()
        assert e.d == 64 and e.n_contexts == 64 ** 2
        assert e.prompts.shape == (32, 2)
        # cluster B scores high, distant distractors score low
        assert e.affinity(e.cluster_b).mean() > 0.5
        assert e.affinity(np.arange(32, 64)).max() < -0.99

    @given(st.lists(st.integers(0, 15), min_size=0, max_size=12))
    def test_reward_bounded(self, tokens):
        r = make_env(d=16, seed=0, cluster_size=4).reward(tokens)
        assert -1.0 <= r <= 1.0

    def test_repetition_lowers_reward(self, env):
        b = env.cluster_b
        assert env.reward([b[0], b[0], b[0], b[0]]) < env.reward(b[:4])

    def test_context_id(self, env):
        assert env.context_id([5, 1, 2]) == 1 * 16 + 2

    def test_teacher_is_distribution(self, env):
        p = env.teacher_probs(7)
        assert p.sum() == pytest.approx(1.0)
        assert p[env.cluster_a].sum() == pytest.approx(0.95)

    def test_rejects_tiny_vocab(self):
        with pytest.raises(ValueError):
            make_env(d=8, cluster_size=4)

    def test_deterministic(self):
        a, b = make_env(seed=5), make_env(seed=5)
        np.testing.assert_array_equal(a.embeddings.vectors, b.embeddings.vectors)
        np.testing.assert_array_equal(a.prompts, b.prompts)


class TestPolicy:
    def test_uniform(self):
        p = ToyPolicy.uniform(3, 2)
        np.testing.assert_allclose(p.probs([0, 8]), np.full((2, 3), 1 / 3))

    def test_temperature_sharpens(self):
        p = ToyPolicy(np.array([[0.0, 1.0], [0.0, 1.0]]), 1, 2)
        assert p.probs([0], 0.5)[0, 1] > p.probs([0])[0, 1]

    def test_shape_check(self):
        with pytest.raises(ValueError):
            ToyPolicy(np.zeros((3, 3)), 2, 3)

    def test_reference_prefers_teacher_cluster(self, env, reference):
        p = reference.probs(np.arange(env.n_contexts))
        assert p[:, env.cluster_a].sum(axis=1).mean() > 0.6


class TestSampling:
    def test_bit_identical(self, env, reference):
        a = sample_trajectories(reference, env, 5, (1, 2))
        b = sample_trajectories(reference, env, 5, (1, 2))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.response, y.response)
            np.testing.assert_array_equal(x.pi_theta, y.pi_theta)

    def test_batch_prefix_is_stable(self, env, reference):
        a = sample_trajectories(reference, env, 3, (4,))
        b = sample_trajectories(reference, env, 6, (4,))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.response, y.response)

    def test_greedy(self, env, reference):
        t = sample_trajectories(reference, env, 3, (0,), temperature=0.0)
        for tr in t:
            np.testing.assert_array_equal(tr.response, np.argmax(tr.pi_theta, axis=1))

    def test_single_token(self, env, reference):
        t = sample_trajectories(reference, env, 4, (0,), max_response_len=1)
        assert all(len(tr) == 1 for tr in t)

    def test_terminal_reward(self, env, reference):
        for tr in sample_trajectories(reference, env, 4, (9,)):
            assert np.all(tr.reward[:-1] == 0.0)
            assert tr.reward[-1] == env.reward(tr.response)

    def test_mean_policy_reward(self, env, reference):
        r = mean_policy_reward(reference, env, 2, 4)
        assert -1.0 <= r <= 1.0


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(clip_ratio=0.0), dict(gamma=0.0), dict(lambda_gae=1.5),
                                    dict(lr_policy=0.0), dict(batch_size=0), dict(steps=-1),
                                    dict(temperature=-1.0)])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)

    @pytest.mark.parametrize("text,label", [("wpr", "wpr"), ("none", "none"), ("fkl", "fkl"),
                                            ("alpha=0.5", "alpha=0.5")])
    def test_regularizer_parse(self, text, label):
        assert Regularizer.parse(text, 0.1).label == label

    def test_none_has_zero_beta(self):
        assert Regularizer.parse("none", 0.3).beta == 0.0

    def test_regularizer_rejects(self):
        with pytest.raises(ValueError):
            Regularizer("fdiv", 0.1)
        with pytest.raises(ValueError):
            Regularizer("wpr", -1.0)


class TestTrain:
    def test_zero_steps_single_record(self, env, reference):
        res = train(small_config(steps=0), env, reference=reference)
        assert len(res.metrics) == 1 and res.metrics[0]["step"] == 0
        assert res.metrics[0]["mean_kl_ref"] == 0.0

    def test_record_layout(self, env, reference):
        seen = []
        res = train(small_config(), env, reference=reference, on_record=seen.append)
        assert seen == res.metrics
        assert [m["step"] for m in res.metrics] == list(range(6))
        assert all(tuple(m) == METRIC_FIELDS for m in res.metrics)

    def test_deterministic(self, env, reference):
        a = train(small_config(), env, reference=reference)
        b = train(small_config(), env, reference=reference)
        assert a.metrics == b.metrics
        np.testing.assert_array_equal(a.policy.logits, b.policy.logits)

    def test_fits_reference_when_missing(self, env, reference):
        res = train(small_config(steps=1), env)
        np.testing.assert_array_equal(res.reference.logits, reference.logits)

    def test_policy_moves(self, env, reference):
        res = train(small_config(), env, reference=reference)
        assert not np.array_equal(res.policy.logits, reference.logits)
        assert res.metrics[-1]["mean_kl_ref"] > 0.0

    def test_fdiv_clamp_counts(self, env, reference):
        cfg = small_config(regularizer=Regularizer("fdiv", 0.01, FKL), clamp=(-1e-3, 1e-3))
        res = train(cfg, env, reference=reference)
        assert res.clamp_activations > 0

    def test_none_regularizer_has_zero_penalty(self, env, reference):
        res = train(small_config(regularizer=Regularizer("none", 0.0)), env, reference=reference)
        assert all(m["mean_penalty"] == 0.0 for m in res.metrics)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_blowup_detected(self, env, reference):
        with pytest.raises(NumericalBlowup):
            train(small_config(lr_policy=1e308, lr_value=1e308), env, reference=reference)

    def test_huge_beta_anchors_more_than_none(self):
        big = make_env()
        ref = fit_reference(big)
        pinned = train(TrainConfig(steps=100, regularizer=Regularizer("wpr", 1e6)), big, reference=ref)
        free = train(TrainConfig(steps=100, regularizer=Regularizer("none", 0.0)), big, reference=ref)
        w_pinned = [m["mean_w_ref"] for m in pinned.metrics]
        assert w_pinned[-1] <= w_pinned[0] + 1e-2
        assert pinned.metrics[-1]["mean_kl_ref"] < free.metrics[-1]["mean_kl_ref"]
