"""
Tests for speaker embeddings, cosine similarity and the analytic similarity gradient
"""

import numpy as np
import pytest

from conftest import pink_noise, speech_like
from sceneguard.audio_core import Waveform
from sceneguard.config import EncoderConfig
from sceneguard.encoder import (
    Embedding, ExternalCommandEncoder, MelStatsEncoder, cosine_similarity, default_encoder, make_backend,
    sim_forward_backward, sim_loss_and_gradient
)
from sceneguard.errors import BackendError, ContractError, TooShortError
from sceneguard.mixer import gamma_bounds, peak_normalize


@pytest.fixture(scope="module")
def encoder():
    return MelStatsEncoder()


class TestEmbedding:
    def test_from_vector_normalizes(self):
        e = Embedding.from_vector([3.0, 4.0])
        np.testing.assert_allclose(e.values, [0.6, 0.8])

    def test_requires_unit_norm(self):
        with pytest.raises(ContractError):
            Embedding(np.array([1.0, 1.0]))

    def test_zero_vector(self):
        with pytest.raises(ContractError):
            Embedding.from_vector([0.0, 0.0])

    def test_cosine_identities(self):
        e1, e2 = Embedding(np.array([1.0, 0.0])), Embedding(np.array([0.0, 1.0]))
        assert cosine_similarity(e1, e1) == pytest.approx(1.0)
        assert cosine_similarity(e1, e2) == pytest.approx(0.0)
        assert cosine_similarity(e1, Embedding(np.array([-1.0, 0.0]))) == pytest.approx(-1.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ContractError):
            cosine_similarity(Embedding(np.array([1.0, 0.0])), Embedding(np.array([1.0, 0.0, 0.0])))


class TestMelStatsEncoder:
    def test_dimension_and_norm(self, encoder, speech):
        e = encoder.embed(speech)
        assert e.dim == 80
        assert np.linalg.norm(e.values) == pytest.approx(1.0, abs=1e-6)

    def test_deterministic(self, encoder, speech):
        np.testing.assert_array_equal(encoder.embed(speech).values, encoder.embed(speech).values)

    def test_near_scale_invariant(self, encoder):
        clip = speech_like(2.0, seed=11, peak=0.9)
        half = clip.with_samples(0.5 * clip.samples)
        assert cosine_similarity(encoder.embed(clip), encoder.embed(half)) >= 0.99

    def test_silence_padding_barely_moves_embedding(self, encoder):
        clip = speech_like(2.0, seed=11, peak=0.9)
        pad = np.zeros(len(clip) // 20)
        padded = clip.with_samples(np.concatenate([pad, clip.samples, pad]))
        assert cosine_similarity(encoder.embed(clip), encoder.embed(padded)) >= 0.95

    def test_sensitive_to_noise(self, encoder, speech):
        noise = pink_noise(len(speech), seed=3, rms=np.sqrt(speech.power / 10.0))
        noisy = speech.with_samples(speech.samples + noise)
        assert cosine_similarity(encoder.embed(speech), encoder.embed(noisy)) < 1 - 1e-4

    def test_too_short(self, encoder):
        with pytest.raises(TooShortError):
            encoder.embed(speech_like(0.4))

    def test_other_rates_are_resampled(self, encoder, speech):
        from sceneguard.audio_core import resample
        e = encoder.embed(resample(speech, 8000))
        assert e.dim == 80

    def test_make_backend_default(self):
        assert isinstance(make_backend(), MelStatsEncoder)
        assert isinstance(make_backend(EncoderConfig(kind="external_command", command="cat")),
                          ExternalCommandEncoder)


def _relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-30)


class TestSimilarityGradient:
    @pytest.mark.parametrize("duration_s", [0.5, 1.0, 3.0])
    @pytest.mark.parametrize("seed", range(10))
    def test_matches_finite_differences(self, encoder, duration_s, seed):
        speech = speech_like(duration_s, seed=seed)
        noise = Waveform(pink_noise(len(speech), seed=seed + 50))
        bounds = gamma_bounds(speech.power, noise.power, 10.0, 20.0)
        target = encoder.embed(speech)
        rng = np.random.default_rng(seed)
        logits = rng.normal(0.0, 0.5, len(speech))
        gamma_logit = float(rng.normal())

        base = sim_forward_backward(speech, noise, logits, gamma_logit, bounds, target, encoder)

        def loss(mask_logits, g_logit):
            return sim_forward_backward(speech, noise, mask_logits, g_logit, bounds, target, encoder,
                                        peak_scale=base.peak_scale).loss

        h = 1e-5
        fd_gamma = (loss(logits, gamma_logit + h) - loss(logits, gamma_logit - h)) / (2 * h)
        assert _relative_error(fd_gamma, base.d_gamma_logit) < 1e-3

        h = 1e-3
        spread_dir = rng.uniform(0.0, 1.0, len(speech))
        grad_dir = base.d_mask_logits
        for direction in (spread_dir, grad_dir):
            v = direction / np.linalg.norm(direction)
            fd = (loss(logits + h * v, gamma_logit) - loss(logits - h * v, gamma_logit)) / (2 * h)
            assert _relative_error(fd, float(np.dot(base.d_mask_logits, v))) < 1e-3

        for k in np.argsort(np.abs(base.d_mask_logits))[-5:]:
            if abs(base.d_mask_logits[k]) <= 1e-6:
                continue
            bump = np.zeros(len(speech))
            bump[k] = h
            fd = (loss(logits + bump, gamma_logit) - loss(logits - bump, gamma_logit)) / (2 * h)
            assert _relative_error(fd, base.d_mask_logits[k]) < 1e-3

    def test_vanishing_mask_reduces_to_clean_similarity(self, encoder, speech):
        noise = Waveform(pink_noise(len(speech), seed=1))
        bounds = gamma_bounds(speech.power, noise.power, 10.0, 20.0)
        target = encoder.embed(speech)

        loss, _, _ = sim_loss_and_gradient(speech, noise, np.full(len(speech), -40.0), 0.0, bounds, target, encoder)

        expected = cosine_similarity(encoder.embed(peak_normalize(speech)), target)
        assert loss == pytest.approx(expected, abs=1e-9)

    def test_default_backend_is_built_once(self, speech, monkeypatch):
        noise = Waveform(pink_noise(len(speech), seed=2))
        bounds = gamma_bounds(speech.power, noise.power, 10.0, 20.0)
        shared = default_encoder()
        target = shared.embed(speech)
        built = []

        def record_build(self, *args, **kwargs):
            built.append(self)

        monkeypatch.setattr(MelStatsEncoder, "__init__", record_build)

        first = sim_forward_backward(speech, noise, np.zeros(len(speech)), 0.0, bounds, target)
        second = sim_forward_backward(speech, noise, np.zeros(len(speech)), 0.0, bounds, target)

        assert built == []
        assert default_encoder() is shared
        assert first.loss == second.loss

    def test_length_mismatch(self, encoder, speech):
        noise = Waveform(pink_noise(len(speech) - 1))
        bounds = gamma_bounds(1.0, 1.0, 10.0, 20.0)
        with pytest.raises(ContractError):
            sim_forward_backward(speech, noise, np.zeros(len(speech)), 0.0, bounds, encoder.embed(speech), encoder)

    def test_external_backend_has_no_gradients(self, speech):
        noise = Waveform(pink_noise(len(speech)))
        bounds = gamma_bounds(1.0, 1.0, 10.0, 20.0)
        target = Embedding.from_vector(np.ones(80))
        with pytest.raises(ContractError):
            sim_forward_backward(speech, noise, np.zeros(len(speech)), 0.0, bounds, target,
                                 ExternalCommandEncoder("cat"))


class TestExternalCommandEncoder:
    def test_parses_and_normalizes(self, speech):
        backend = ExternalCommandEncoder('sh -c "echo 3 4" {in}')
        e = backend.embed(speech)
        np.testing.assert_allclose(e.values, [0.6, 0.8])
        assert backend.dim == 2

    def test_path_appended_without_placeholder(self, speech):
        backend = ExternalCommandEncoder('sh -c "test -f \\"$0\\" && echo 1 0"')
        np.testing.assert_allclose(backend.embed(speech).values, [1.0, 0.0])

    def test_dimension_change(self, speech):
        backend = ExternalCommandEncoder('sh -c "echo 3 4" {in}')
        backend.dim = 3
        with pytest.raises(BackendError):
            backend.embed(speech)

    def test_nonzero_exit(self, speech):
        with pytest.raises(BackendError):
            ExternalCommandEncoder('sh -c "exit 3" {in}').embed(speech)

    def test_malformed_output(self, speech):
        with pytest.raises(BackendError):
            ExternalCommandEncoder('sh -c "echo a b" {in}').embed(speech)

    def test_zero_vector(self, speech):
        with pytest.raises(BackendError):
            ExternalCommandEncoder('sh -c "echo 0 0" {in}').embed(speech)
