# -*- coding: utf-8 -*-
# vim: set ft=python ts=4 sw=4 expandtab:
# pylint: disable=redefined-outer-name
# Unit tests for encoder.py

import numpy as np
import pytest

from phasemap.encoder import (
    HEADS,
    EncoderConfig,
    EncoderError,
    encode,
    encode_patterns,
    forward,
    init_params,
    parameter_count,
)
from phasemap.ndtape import Tape, Tensor


@pytest.fixture
def cfg():
    return EncoderConfig(d=12, m=3, k_max=4, hidden=(8, 6, 5), amplitude_hidden=(7, 4))


@pytest.fixture
def patterns():
    return np.random.default_rng(2).uniform(0.0, 1.0, (9, 12))


def layer_count(sizes):
    return sum(fan_in * fan_out + fan_out for fan_in, fan_out in zip(sizes, sizes[1:]))


class TestEncoderConfig:
    def test_defaults(self):
        cfg = EncoderConfig(d=300, m=100)
        assert cfg.k_max == 200
        assert cfg.hidden == (1024, 1024, 512)
        assert cfg.amplitude_hidden == (512, 512, 32)
        assert cfg.sigma_mid == pytest.approx(0.3)
        assert cfg.b_mid == pytest.approx(1.25)

    def test_layers(self, cfg):
        assert cfg.layers("prob") == [12, 8, 6, 5, 3]
        assert cfg.layers("amplitude") == [12, 7, 4, 12]

    def test_hidden_converted(self):
        assert EncoderConfig(d=4, m=2, hidden=[3, 3]).hidden == (3, 3)

    @pytest.mark.parametrize(
        "overrides",
        [
            {"d": 0},
            {"m": 0},
            {"k_max": 0},
            {"hidden": ()},
            {"amplitude_hidden": (4, 0)},
            {"s_max": 0.0},
            {"s_max": 1.0},
            {"sigma_min": 0.6},
            {"sigma_min": 0.0},
            {"b_min": 3.0},
        ],
    )
    def test_invalid(self, overrides):
        values = {"d": 4, "m": 2}
        values.update(overrides)
        with pytest.raises(ValueError):
            EncoderConfig(**values)


class TestParameterCount:
    def test_default_architecture(self):
        cfg = EncoderConfig(d=300, m=100)
        main = (300 * 1024 + 1024) + (1024 * 1024 + 1024) + (1024 * 512 + 512) + (512 * 100 + 100)
        amplitude = (300 * 512 + 512) + (512 * 512 + 512) + (512 * 32 + 32) + (32 * 20000 + 20000)
        assert parameter_count(cfg) == 3 * main + amplitude

    def test_matches_store(self, cfg):
        store = init_params(cfg, 0)
        assert store.count() == parameter_count(cfg)
        assert parameter_count(cfg) == sum(layer_count(cfg.layers(head)) for head in HEADS)


class TestInitParams:
    def test_same_seed_is_bit_identical(self, cfg):
        first, second = init_params(cfg, 7), init_params(cfg, 7)
        assert sorted(first.params) == sorted(second.params)
        for name in first.params:
            assert np.array_equal(first.params[name], second.params[name])

    def test_different_seeds_differ(self, cfg):
        first, second = init_params(cfg, 7), init_params(cfg, 8)
        assert not np.array_equal(first.params["prob.w0"], second.params["prob.w0"])

    def test_names_and_shapes(self, cfg):
        store = init_params(cfg, 0)
        assert store.params["prob.w0"].shape == (12, 8)
        assert store.params["prob.b3"].shape == (3,)
        assert store.params["amplitude.w2"].shape == (4, 12)
        assert store.step == 0

    def test_output_layers_are_zero(self, cfg):
        store = init_params(cfg, 0)
        for head in ("shift", "width", "amplitude"):
            last = len(cfg.layers(head)) - 2
            assert np.all(store.params["%s.w%d" % (head, last)] == 0.0)
        assert np.any(store.params["prob.w3"] != 0.0)


class TestEncode:
    def test_probabilities_sum_to_one(self, cfg, patterns):
        store = init_params(cfg, 1)
        for row in patterns:
            latent = encode(row, store, cfg)
            assert latent.p.sum() == pytest.approx(1.0, abs=1e-9)
            assert np.all(latent.p >= 0.0)

    def test_fresh_encoder_is_at_midpoints(self, cfg, patterns):
        latent = encode(patterns[0], init_params(cfg, 1), cfg)
        assert np.allclose(latent.alpha, 1.0, rtol=0.0, atol=1e-12)
        assert np.allclose(latent.sigma, cfg.sigma_mid, rtol=0.0, atol=1e-12)
        assert np.allclose(latent.b, cfg.b_mid, rtol=0.0, atol=1e-12)
        assert latent.b.shape == (3, 4)

    def test_bounds(self, cfg, patterns):
        store = init_params(cfg, 1)
        for name in store.params:
            store.params[name] = np.random.default_rng(4).normal(0.0, 3.0, store.params[name].shape)
        for latent in encode_patterns(patterns, store, cfg):
            assert np.all(np.abs(latent.alpha - 1.0) <= cfg.s_max)
            assert np.all((latent.sigma >= cfg.sigma_min) & (latent.sigma <= cfg.sigma_max))
            assert np.all((latent.b >= cfg.b_min) & (latent.b <= cfg.b_max))

    def test_deterministic(self, cfg, patterns):
        store = init_params(cfg, 1)
        first, second = encode(patterns[3], store, cfg), encode(patterns[3].copy(), store, cfg)
        for name in ("p", "alpha", "sigma", "b"):
            assert np.array_equal(getattr(first, name), getattr(second, name))

    def test_non_finite_input(self, cfg, patterns):
        broken = patterns[0].copy()
        broken[2] = np.nan
        with pytest.raises(EncoderError):
            encode(broken, init_params(cfg, 1), cfg)

    def test_wrong_width(self, cfg):
        with pytest.raises(EncoderError):
            encode(np.ones(11), init_params(cfg, 1), cfg)

    def test_non_finite_head_is_named(self, cfg, patterns):
        store = init_params(cfg, 1)
        store.params["width.w0"] = np.full((12, 8), 1e308)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(EncoderError, match="width"):
                encode(patterns[0], store, cfg)


class TestEncodePatterns:
    def test_workers_and_chunks_agree(self, cfg, patterns):
        store = init_params(cfg, 3)
        serial = encode_patterns(patterns, store, cfg)
        parallel = encode_patterns(patterns, store, cfg, workers=3, chunk=2)
        assert len(serial) == len(parallel) == 9
        for first, second in zip(serial, parallel):
            assert np.allclose(first.p, second.p)
            assert np.allclose(first.b, second.b)

    def test_matches_single_encode(self, cfg, patterns):
        store = init_params(cfg, 3)
        latents = encode_patterns(patterns, store, cfg, chunk=4)
        assert np.allclose(latents[5].p, encode(patterns[5], store, cfg).p)


class TestForward:
    def test_shapes(self, cfg, patterns):
        latents = forward(Tensor(patterns), init_params(cfg, 0).constants(), cfg)
        assert latents.p.shape == (9, 3)
        assert latents.alpha.shape == (9, 3)
        assert latents.sigma.shape == (9, 3)
        assert latents.b.shape == (9, 3, 4)
        assert len(latents.unbatch()) == 9

    def test_gradient_reaches_every_head(self, cfg, patterns):
        store = init_params(cfg, 0)
        tape = Tape()
        latents = forward(Tensor(patterns), store.watch(tape), cfg)
        target = np.random.default_rng(9).uniform(0.0, 1.0, (9, 3))
        loss = (latents.p * target).sum() + (latents.alpha * target).sum() + (latents.sigma * target).sum() + latents.b.sum()
        grads = tape.backward(loss)
        for head in HEADS:
            last = len(cfg.layers(head)) - 2
            assert np.any(grads["%s.b%d" % (head, last)] != 0.0)

    def test_output_bias_gradient(self, cfg, patterns):
        store = init_params(cfg, 0)
        weights = np.random.default_rng(9).uniform(0.0, 1.0, (9, 3))

        def loss(params):
            return (forward(Tensor(patterns), params, cfg).alpha * weights).sum()

        tape = Tape()
        analytic = tape.backward(loss(store.watch(tape)))["shift.b3"]
        numeric = np.zeros(3)
        for index in range(3):
            plus, minus = store.constants(), store.constants()
            shifted = store.params["shift.b3"].copy()
            shifted[index] += 1e-6
            plus["shift.b3"] = Tensor(shifted)
            shifted = store.params["shift.b3"].copy()
            shifted[index] -= 1e-6
            minus["shift.b3"] = Tensor(shifted)
            numeric[index] = (loss(plus).item() - loss(minus).item()) / 2e-6
        assert np.allclose(analytic, numeric, rtol=1e-4, atol=1e-8)
