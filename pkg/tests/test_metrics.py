"""
Tests for STOI, MCD, WER, attack success rate and the defense-goal check
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import speech_like
from sceneguard.audio_core import Waveform
from sceneguard.config import DefenseCriteria
from sceneguard.errors import BackendError, ContractError, IngestionError, TooShortError
from sceneguard.metrics import (
    MCD_SCALE, MetricReport, SampleMetrics, Transcript, attack_success_rate, check_defense_goal,
    mask_smoothness, mcd, mcd_from_cepstra, normalize_text, protection_percent, read_transcripts,
    run_asr_hook, stoi, wer
)


class TestStoi:
    def test_identity(self, speech):
        assert stoi(speech, speech) == pytest.approx(1.0, abs=1e-6)

    def test_scale_invariant(self, speech):
        half = speech.with_samples(0.5 * speech.samples)
        assert stoi(speech, half) == pytest.approx(1.0, abs=1e-6)

    def test_heavy_noise_lowers_score(self, speech):
        rng = np.random.default_rng(0)
        noise = rng.standard_normal(len(speech)) * np.sqrt(speech.power * 10.0)
        noisy = speech.with_samples(speech.samples + noise)
        assert stoi(speech, noisy) < 0.6

    def test_processed_length_is_fitted(self, speech):
        longer = speech.with_samples(np.concatenate([speech.samples, np.zeros(100)]))
        assert stoi(speech, longer) == pytest.approx(1.0, abs=1e-6)

    def test_too_short(self):
        short = speech_like(0.3)
        with pytest.raises(TooShortError):
            stoi(short, short)

    def test_mostly_silent_clip_is_too_short(self, speech):
        samples = np.zeros(len(speech))
        samples[8000:9600] = speech.samples[8000:9600]
        burst = speech.with_samples(samples)
        with pytest.raises(TooShortError):
            stoi(burst, burst)


class TestMcd:
    def test_identity(self, speech):
        assert mcd(speech, speech) == 0.0

    def test_symmetric(self, speech):
        rng = np.random.default_rng(1)
        other = speech.with_samples(speech.samples + 0.01 * rng.standard_normal(len(speech)))
        assert mcd(speech, other) == pytest.approx(mcd(other, speech))
        assert mcd(speech, other) > 0

    def test_unit_cepstral_offset(self):
        c_ref = np.zeros((1, 13))
        c_proc = np.zeros((1, 13))
        c_proc[0, 1] = 1.0
        assert mcd_from_cepstra(c_ref, c_proc) == pytest.approx(6.1421, abs=1e-4)
        assert MCD_SCALE == pytest.approx(6.1421, abs=1e-4)

    def test_c0_ignored(self):
        c_ref = np.zeros((2, 13))
        c_proc = np.zeros((2, 13))
        c_proc[:, 0] = 5.0
        assert mcd_from_cepstra(c_ref, c_proc) == 0.0

    def test_length_mismatch(self, speech):
        with pytest.raises(ContractError):
            mcd(speech, speech.with_samples(speech.samples[:-1]))


class TestWer:
    def test_identical(self):
        ref = Transcript.from_text("u", "the cat sat")
        assert wer(ref, ref) == 0.0

    def test_one_substitution(self):
        assert wer(Transcript.from_text("u", "a b c"), Transcript.from_text("u", "a x c")) == pytest.approx(1 / 3)

    def test_empty_hypothesis(self):
        assert wer(Transcript.from_text("u", "a b"), Transcript.from_text("u", "")) == 1.0

    def test_empty_reference(self):
        with pytest.raises(ContractError):
            wer(Transcript.from_text("u", "  "), Transcript.from_text("u", "a"))

    def test_normalization(self):
        assert normalize_text("Hello, World!  It's") == ["hello", "world", "its"]
        assert normalize_text(" ".join(normalize_text("A-b C."))) == normalize_text("A-b C.")
        assert wer(Transcript.from_text("u", "Hello, world."), Transcript.from_text("u", "hello world")) == 0.0

    @settings(max_examples=100, deadline=None)
    @given(ref=st.lists(st.sampled_from("abcd"), min_size=1, max_size=8),
           hyp=st.lists(st.sampled_from("abcd"), min_size=1, max_size=8),
           token=st.sampled_from("abcde"),
           position=st.integers(0, 8))
    def test_single_insertion_moves_errors_by_at_most_one(self, ref, hyp, token, position):
        reference = Transcript("u", tuple(ref))
        before = wer(reference, Transcript("u", tuple(hyp)))
        inserted = list(hyp)
        inserted.insert(min(position, len(hyp)), token)
        after = wer(reference, Transcript("u", tuple(inserted)))
        assert abs(after - before) * len(ref) <= 1 + 1e-9


class TestTranscripts:
    def test_read(self, tmp_path):
        path = tmp_path / "refs.txt"
        path.write_text("u1\tHello there.\n\nu2\tGeneral Kenobi\n", encoding="utf-8")
        refs = read_transcripts(path)
        assert refs["u1"].tokens == ("hello", "there")
        assert refs["u2"].text == "general kenobi"

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "refs.txt"
        path.write_text("u1 no tab here\n", encoding="utf-8")
        with pytest.raises(IngestionError):
            read_transcripts(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(IngestionError):
            read_transcripts(tmp_path / "none.txt")

    def test_asr_hook(self, speech):
        transcript = run_asr_hook('sh -c "echo Hello, World" {in}', speech, "u1")
        assert transcript.tokens == ("hello", "world")
        assert transcript.utterance_id == "u1"

    def test_asr_hook_failure(self, speech):
        with pytest.raises(BackendError):
            run_asr_hook('sh -c "exit 2" {in}', speech)


class TestAggregates:
    def test_attack_success_rate(self):
        assert attack_success_rate([0.9, 0.6, 0.71]) == pytest.approx(2 / 3)
        assert attack_success_rate([0.7]) == 0.0
        with pytest.raises(ContractError):
            attack_success_rate([])

    def test_protection_percent(self):
        assert protection_percent(0.3) == pytest.approx(70.0)

    def test_mask_smoothness(self):
        assert mask_smoothness(np.array([0.0, 1.0, 0.0, 1.0])) == pytest.approx(1.0)
        assert mask_smoothness(np.array([0.5])) == 0.0

    def test_report_skips_missing_values(self):
        report = MetricReport([
            SampleMetrics("a", sim=0.9, stoi=0.9, mcd=1.0),
            SampleMetrics("b", sim=0.7, stoi=None, mcd=3.0),
        ])
        agg = report.aggregates
        assert agg["sim"]["mean"] == pytest.approx(0.8)
        assert agg["stoi"]["n"] == 1
        assert agg["wer"]["mean"] is None
        assert report.to_dict()["per_sample"][1]["stoi"] is None


class TestDefenseGoal:
    def test_met(self):
        report = MetricReport([SampleMetrics("a", sim=0.9, stoi=0.95, wer=0.05)])
        verdict = check_defense_goal(report)
        assert verdict.protection_met and verdict.usability_met

    def test_similarity_too_high(self):
        report = MetricReport([SampleMetrics("a", sim=0.97, stoi=0.95)])
        assert not check_defense_goal(report).protection_met

    def test_wer_breaks_usability(self):
        report = MetricReport([SampleMetrics("a", sim=0.9, stoi=0.95, wer=0.3)])
        assert not check_defense_goal(report).usability_met

    def test_custom_criteria(self):
        report = MetricReport([SampleMetrics("a", sim=0.9, stoi=0.8)])
        verdict = check_defense_goal(report, DefenseCriteria(stoi_threshold=0.75))
        assert verdict.usability_met
        assert verdict.to_dict()["mean_wer"] is None
